#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "opsample/diagnostics.hpp"
#include "opsample/estimation.hpp"
#include "opsample/microstrata.hpp"
#include "opsample/model.hpp"
#include "opsample/numeric.hpp"
#include "opsample/population.hpp"
#include "opsample/random.hpp"
#include "opsample/sampler.hpp"

namespace opsample {

enum class CltMode { design, model };
enum class VarianceSource { exact, pilot };

inline constexpr std::size_t kDefaultPilotReplicates = 20000;
/// Pilot replicates use stream indices offset by this amount.
inline constexpr std::uint64_t kPilotStreamOffset = std::uint64_t{1} << 40;

struct CltConfig {
    CltMode mode = CltMode::design;
    std::size_t population_size = 10000;
    std::size_t sample_size = 500;
    /// Inclusion probabilities; equal probabilities n/N when absent.
    std::optional<std::vector<double>> pi;
    /// Fixed y for design mode; generated once from the model when absent.
    std::optional<std::vector<double>> y;
    ModelConfig model;
    std::size_t replicates = 2000;
    std::uint64_t seed = 1;
    double alpha = 0.025;
    VarianceSource variance_source = VarianceSource::exact;
    std::size_t pilot_replicates = kDefaultPilotReplicates;
    unsigned threads = 1;
};

struct SimulationReport {
    CltMode mode = CltMode::design;
    std::size_t population_size = 0;
    std::size_t sample_size = 0;
    std::size_t replicates = 0;
    std::uint64_t seed = 0;
    double alpha = 0.0;
    std::string kernel;
    std::vector<double> standardized;
    double ks_stat = 0.0;
    double ks_critical = 0.0;
    double coverage = 0.0;
    std::string variance_used;  // "exact" or "mc-estimated"
    double variance = 0.0;
    std::size_t pilot_replicates = 0;
    /// Mean over replicates of sum_i eta_i^4.
    double condition_a = 0.0;
    /// Variance over replicates of sum_i V(eta_i | F_{i-1}).
    double condition_b = 0.0;
    /// Model mode: Monte Carlo mean and standard error of V_m-hat.
    std::optional<double> model_variance_mean;
    std::optional<double> model_variance_se;
};

inline const char* mode_name(CltMode mode) { return mode == CltMode::design ? "design" : "model"; }

inline CltMode parse_mode(std::string_view text) {
    if (text == "design") return CltMode::design;
    if (text == "model") return CltMode::model;
    throw std::invalid_argument("mode must be design or model, got '" + std::string(text) + "'");
}

/// Calls fn(index) for index in [0, count) on up to `threads` workers.
/// Results must be written by index so the outcome does not depend on the
/// schedule. The first exception thrown by any call is rethrown.
template <class Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
    const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, threads), count));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto work = [&] {
        for (std::size_t i = next++; i < count && !failed; i = next++) {
            try {
                fn(i);
            } catch (...) {
                const std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                failed = true;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

namespace detail {

struct ReplicateOutcome {
    double error = 0.0;          // HT - t_y
    double xi_fourth = 0.0;      // sum xi_i^4
    double conditional = 0.0;    // sum V(xi_i | L_{i-1})
    double model_variance = 0.0; // V_m-hat, model mode only
};

inline double total_of(std::span<const double> y) {
    CompensatedSum t;
    for (double v : y) t += v;
    return t.value();
}

inline ReplicateOutcome score_draw(const Decomposition& dec, const SampleDraw& d, std::span<const double> y,
                                   std::span<const double> ycheck, double total) {
    ReplicateOutcome out;
    out.error = ht_estimate(d.selected, y, dec.pi()) - total;
    for (std::size_t i = 1; i <= dec.sample_size(); ++i) {
        const TraceStep& step = d.trace[i - 1];
        const double xi = xi_increment(dec, i, step, ycheck);
        out.xi_fourth += xi * xi * xi * xi;
        out.conditional += conditional_xi_variance(dec, i, step.carried, ycheck);
    }
    return out;
}

inline double mean_of(const std::vector<double>& values) {
    CompensatedSum s;
    for (double v : values) s += v;
    return s.value() / static_cast<double>(values.size());
}

inline double variance_of(const std::vector<double>& values) {
    if (values.size() < 2) return 0.0;
    const double m = mean_of(values);
    CompensatedSum s;
    for (double v : values) s += (v - m) * (v - m);
    return s.value() / static_cast<double>(values.size() - 1);
}

}  // namespace detail

/// Monte Carlo check of the CLT for the HT estimator.
///
/// Design mode keeps y fixed and standardizes by the design variance, exact
/// via the carried-unit recursion or estimated from a pilot of independent
/// draws. Model mode draws a fresh y per replicate and standardizes by the
/// anticipated variance: exact for iid errors, otherwise the pilot average
/// of the exact design variance over independent y.
///
/// Streams: y for design mode from index 0, replicate r from index r + 1,
/// pilot replicate r from kPilotStreamOffset + r.
inline SimulationReport clt_experiment(const CltConfig& config) {
    if (config.replicates < 1) throw std::invalid_argument("replicates must be at least 1");
    if (config.sample_size < 1 || config.sample_size > config.population_size) {
        throw std::invalid_argument("need 1 <= n <= N");
    }
    config.model.validate();

    std::vector<double> pi;
    if (config.pi) {
        pi = *config.pi;
        if (pi.size() != config.population_size) throw std::invalid_argument("pi has the wrong length");
    } else {
        pi.assign(config.population_size,
                  static_cast<double>(config.sample_size) / static_cast<double>(config.population_size));
    }
    const PopulationSpec pop = PopulationSpec::from_probabilities(pi);
    if (pop.sample_size() != config.sample_size) throw std::invalid_argument("pi does not sum to n");
    const Decomposition dec(pop);
    const std::size_t R = config.replicates;

    SimulationReport report;
    report.mode = config.mode;
    report.population_size = config.population_size;
    report.sample_size = config.sample_size;
    report.replicates = R;
    report.seed = config.seed;
    report.alpha = config.alpha;
    report.kernel = kernel_name(config.model.kernel);
    const double quantile = [&] {
        if (!(config.alpha > 0.0 && config.alpha <= 0.5)) throw std::invalid_argument("alpha must lie in (0, 0.5]");
        return normal_quantile(1.0 - config.alpha);
    }();

    std::vector<detail::ReplicateOutcome> outcomes(R);
    double variance = 0.0;

    if (config.mode == CltMode::design) {
        std::vector<double> y;
        if (config.y) {
            y = *config.y;
            if (y.size() != pi.size()) throw std::invalid_argument("y has the wrong length");
        } else {
            UniformStream g(derive_seed(config.seed, 0));
            y = generate_y(config.model, pi, g);
        }
        const std::vector<double> ycheck = check_values(y, pi);
        const double total = detail::total_of(y);

        if (config.variance_source == VarianceSource::exact) {
            variance = design_variance(dec, y);
            report.variance_used = "exact";
        } else {
            std::vector<double> squares(config.pilot_replicates);
            parallel_for(squares.size(), config.threads, [&](std::size_t r) {
                UniformStream g(derive_seed(config.seed, kPilotStreamOffset + r));
                SampleDraw d;
                draw_into(dec, g, d);
                const double e = ht_estimate(d.selected, y, pi) - total;
                squares[r] = e * e;
            });
            variance = detail::mean_of(squares);
            report.variance_used = "mc-estimated";
            report.pilot_replicates = squares.size();
        }
        parallel_for(R, config.threads, [&](std::size_t r) {
            UniformStream g(derive_seed(config.seed, r + 1));
            SampleDraw d;
            draw_into(dec, g, d);
            outcomes[r] = detail::score_draw(dec, d, y, ycheck, total);
        });
    } else {
        const bool iid = std::holds_alternative<IidKernel>(config.model.kernel);
        if (iid && config.variance_source == VarianceSource::exact) {
            variance = model_variance(config.model.sigma * config.model.sigma, pi);
            report.variance_used = "exact";
        } else {
            std::vector<double> pilot(config.pilot_replicates);
            parallel_for(pilot.size(), config.threads, [&](std::size_t r) {
                UniformStream g(derive_seed(config.seed, kPilotStreamOffset + r));
                pilot[r] = design_variance(dec, generate_y(config.model, pi, g));
            });
            variance = detail::mean_of(pilot);
            report.variance_used = "mc-estimated";
            report.pilot_replicates = pilot.size();
        }
        parallel_for(R, config.threads, [&](std::size_t r) {
            UniformStream g(derive_seed(config.seed, r + 1));
            const std::vector<double> y = generate_y(config.model, pi, g);
            const std::vector<double> ycheck = check_values(y, pi);
            // the sample is drawn from the same stream, after y
            SampleDraw d;
            draw_into(dec, g, d);
            outcomes[r] = detail::score_draw(dec, d, y, ycheck, detail::total_of(y));
            if (dec.sample_size() >= 2) {
                outcomes[r].model_variance = model_variance(sigma_hat_squared(d.selected, y, pi), pi);
            }
        });
    }

    if (!(variance > 0.0) || !std::isfinite(variance)) {
        throw std::domain_error("degenerate variance: the HT estimator has no spread");
    }
    report.variance = variance;

    const double scale = std::sqrt(variance);
    const double half = quantile * scale;
    std::size_t covered = 0;
    std::vector<double> fourth(R);
    std::vector<double> conditional(R);
    report.standardized.resize(R);
    for (std::size_t r = 0; r < R; ++r) {
        report.standardized[r] = outcomes[r].error / scale;
        if (std::abs(outcomes[r].error) <= half) ++covered;
        fourth[r] = outcomes[r].xi_fourth / (variance * variance);
        conditional[r] = outcomes[r].conditional / variance;
    }
    std::vector<double> sorted = report.standardized;
    std::sort(sorted.begin(), sorted.end());
    report.ks_stat = ks_statistic(sorted);
    report.ks_critical = ks_critical_1pct(R);
    report.coverage = static_cast<double>(covered) / static_cast<double>(R);
    report.condition_a = detail::mean_of(fourth);
    report.condition_b = detail::variance_of(conditional);

    if (config.mode == CltMode::model && dec.sample_size() >= 2) {
        std::vector<double> estimates(R);
        for (std::size_t r = 0; r < R; ++r) estimates[r] = outcomes[r].model_variance;
        report.model_variance_mean = detail::mean_of(estimates);
        report.model_variance_se = std::sqrt(detail::variance_of(estimates) / static_cast<double>(R));
    }
    return report;
}

}  // namespace opsample
