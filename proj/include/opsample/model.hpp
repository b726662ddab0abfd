#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "opsample/microstrata.hpp"
#include "opsample/numeric.hpp"
#include "opsample/random.hpp"

namespace opsample {

/// Independent errors.
struct IidKernel {};

/// Stationary AR(1) along the unit order: corr(e_k, e_l) = rho^|k-l|.
struct Ar1Kernel {
    double rho;
};

/// Exponential decay in index distance: corr(e_k, e_l) = exp(-|k-l| / range).
struct ExponentialKernel {
    double range;
};

using Kernel = std::variant<IidKernel, Ar1Kernel, ExponentialKernel>;

/// Lag-one autoregressive coefficient equivalent to the kernel (0 for iid).
inline double ar_coefficient(const Kernel& kernel) {
    if (const auto* ar = std::get_if<Ar1Kernel>(&kernel)) return ar->rho;
    if (const auto* ex = std::get_if<ExponentialKernel>(&kernel)) return std::exp(-1.0 / ex->range);
    return 0.0;
}

inline double correlation(const Kernel& kernel, std::size_t lag) {
    if (lag == 0) return 1.0;
    if (std::holds_alternative<IidKernel>(kernel)) return 0.0;
    if (const auto* ex = std::get_if<ExponentialKernel>(&kernel)) {
        return std::exp(-static_cast<double>(lag) / ex->range);
    }
    return std::pow(std::get<Ar1Kernel>(kernel).rho, static_cast<double>(lag));
}

inline void validate_kernel(const Kernel& kernel) {
    if (const auto* ar = std::get_if<Ar1Kernel>(&kernel)) {
        if (!(std::abs(ar->rho) < 1.0)) throw std::invalid_argument("ar1 kernel needs |rho| < 1");
    }
    if (const auto* ex = std::get_if<ExponentialKernel>(&kernel)) {
        if (!(ex->range > 0.0) || !std::isfinite(ex->range)) {
            throw std::invalid_argument("exponential kernel needs a positive range");
        }
    }
}

/// Parses "iid", "ar1:RHO" or "exp:RANGE".
inline Kernel parse_kernel(std::string_view text) {
    auto number = [&](std::string_view tail) {
        const std::string s(tail);
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(s, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != s.size()) {
            throw std::invalid_argument("bad kernel parameter '" + s + "'");
        }
        return v;
    };
    Kernel kernel;
    if (text == "iid") {
        kernel = IidKernel{};
    } else if (text.starts_with("ar1:")) {
        kernel = Ar1Kernel{number(text.substr(4))};
    } else if (text.starts_with("exp:")) {
        kernel = ExponentialKernel{number(text.substr(4))};
    } else {
        throw std::invalid_argument("unknown kernel '" + std::string(text) + "' (expected iid, ar1:RHO or exp:RANGE)");
    }
    validate_kernel(kernel);
    return kernel;
}

inline std::string kernel_name(const Kernel& kernel) {
    if (const auto* ar = std::get_if<Ar1Kernel>(&kernel)) return "ar1:" + format_number(ar->rho);
    if (const auto* ex = std::get_if<ExponentialKernel>(&kernel)) return "exp:" + format_number(ex->range);
    return "iid";
}

/// Superpopulation model y_k = beta pi_k + pi_k e_k with Gaussian errors of
/// variance sigma^2 and the configured correlation along the unit order.
struct ModelConfig {
    double beta = 1.0;
    double sigma = 1.0;
    Kernel kernel = IidKernel{};
    std::uint64_t seed = 0;

    void validate() const {
        if (!(sigma > 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("sigma must be positive");
        if (!std::isfinite(beta)) throw std::invalid_argument("beta must be finite");
        validate_kernel(kernel);
    }

    [[nodiscard]] double covariance(std::size_t k, std::size_t l) const {
        const std::size_t lag = k > l ? k - l : l - k;
        return sigma * sigma * correlation(kernel, lag);
    }
};

/// Draws e_1..e_N. Correlated kernels use the stationary recursion
/// e_k = phi e_{k-1} + sigma sqrt(1 - phi^2) z_k started from e_1 = sigma z_1.
template <UniformSource G>
void generate_errors_into(const ModelConfig& config, std::size_t N, G& uniforms, std::vector<double>& out) {
    config.validate();
    out.resize(N);
    NormalSampler normal;
    const double phi = ar_coefficient(config.kernel);
    const double innovation = config.sigma * std::sqrt(1.0 - phi * phi);
    for (std::size_t k = 0; k < N; ++k) {
        const double z = normal(uniforms);
        out[k] = (k == 0 || phi == 0.0) ? config.sigma * z : phi * out[k - 1] + innovation * z;
    }
}

template <UniformSource G>
std::vector<double> generate_errors(const ModelConfig& config, std::size_t N, G& uniforms) {
    std::vector<double> out;
    generate_errors_into(config, N, uniforms, out);
    return out;
}

template <UniformSource G>
void generate_y_into(const ModelConfig& config, std::span<const double> pi, G& uniforms,
                     std::vector<double>& errors, std::vector<double>& y) {
    generate_errors_into(config, pi.size(), uniforms, errors);
    y.resize(pi.size());
    for (std::size_t k = 0; k < pi.size(); ++k) y[k] = config.beta * pi[k] + pi[k] * errors[k];
}

template <UniformSource G>
std::vector<double> generate_y(const ModelConfig& config, std::span<const double> pi, G& uniforms) {
    std::vector<double> errors;
    std::vector<double> y;
    generate_y_into(config, pi, uniforms, errors, y);
    return y;
}

struct AnticipatedVariance {
    double independent_term = 0.0;  // sigma^2 sum pi_k (1 - pi_k)
    double covariance_term = 0.0;   // sum_{k != l} (pi_kl - pi_k pi_l) Cov(e_k, e_l)
    [[nodiscard]] double total() const noexcept { return independent_term + covariance_term; }
};

/// Variance of HT - t_y over model and design jointly.
inline AnticipatedVariance anticipated_variance(const ModelConfig& config, std::span<const double> pi,
                                                const Matrix& pi2) {
    config.validate();
    AnticipatedVariance out;
    CompensatedSum first;
    for (double p : pi) first += p * (1.0 - p);
    out.independent_term = config.sigma * config.sigma * first.value();
    if (std::holds_alternative<IidKernel>(config.kernel)) return out;
    if (pi2.size() != pi.size()) throw std::invalid_argument("anticipated_variance needs joint inclusion probabilities");
    CompensatedSum second;
    for (std::size_t k = 0; k < pi.size(); ++k) {
        for (std::size_t l = 0; l < pi.size(); ++l) {
            if (k == l) continue;
            second += (pi2(k, l) - pi[k] * pi[l]) * config.covariance(k, l);
        }
    }
    out.covariance_term = second.value();
    return out;
}

/// A statistic together with its normalizing rate and their ratio.
struct RatedStatistic {
    double value = 0.0;
    double rate = 0.0;
    double ratio = 0.0;
};

inline RatedStatistic rated(double value, double rate) { return {value, rate, value / rate}; }

/// Empirical view of the regularity assumptions of the design-based and
/// model-based limit theorems.
struct AssumptionReport {
    double pi_max = 0.0;
    bool certainty_units = false;
    std::optional<RatedStatistic> fourth_moment;   // sum pi_k (y_k/pi_k - t_y/n)^4 against N^4/n^3
    std::optional<RatedStatistic> dispersion;   // within-microstratum dispersion against N^2/n
    std::optional<RatedStatistic> model_fourth_moment;  // sum pi_k E e_k^4 against N^4/n^3
    std::optional<RatedStatistic> model_dispersion;  // sum alpha alpha E(e_k - e_l)^2 against N^2/n
    std::optional<RatedStatistic> dependence_squares;    // against N^3/n^2
    std::optional<RatedStatistic> dependence_triples;    // needs joint probabilities
    std::optional<RatedStatistic> dependence_quadruples; // needs joint probabilities
};

/// sum_i sum_{k in U_i} alpha_ik (y_k/pi_k - sum_l alpha_il y_l/pi_l)^2.
inline double microstratum_dispersion(const Decomposition& dec, std::span<const double> ycheck) {
    CompensatedSum total;
    for (std::size_t i = 1; i <= dec.sample_size(); ++i) {
        const auto members = dec.members(i);
        double mean = 0.0;
        for (const auto& m : members) {
            if (m.unit != kPhantom) mean += m.alpha * ycheck[m.unit];
        }
        for (const auto& m : members) {
            if (m.unit == kPhantom) continue;
            const double d = ycheck[m.unit] - mean;
            total += m.alpha * d * d;
        }
    }
    return total.value();
}

/// sum_k pi_k (y_k/pi_k - t_y/n)^4.
inline double centered_fourth_moment(const Decomposition& dec, std::span<const double> y) {
    CompensatedSum t;
    for (double v : y) t += v;
    const double center = t.value() / static_cast<double>(dec.sample_size());
    CompensatedSum s;
    for (std::size_t k = 0; k < y.size(); ++k) {
        const double d = y[k] / dec.pi(k) - center;
        s += dec.pi(k) * d * d * d * d;
    }
    return s.value();
}

inline AssumptionReport assumption_report(const Decomposition& dec, std::optional<std::span<const double>> y,
                                          const std::optional<ModelConfig>& model, const Matrix* pi2 = nullptr) {
    const std::size_t n = dec.sample_size();
    if (n == 0) throw std::invalid_argument("assumption report needs n >= 1");
    const double N = static_cast<double>(dec.population_size());
    const double nn = static_cast<double>(n);
    const double rate_fourth = N * N * N * N / (nn * nn * nn);
    const double rate_dispersion = N * N / nn;
    const double rate_dependence = N * N * N / (nn * nn);
    const auto& pi = dec.pi();

    AssumptionReport report;
    report.pi_max = dec.pi_max();
    report.certainty_units = dec.pi_max() >= 1.0;

    if (y) {
        if (y->size() != pi.size()) throw std::invalid_argument("y has the wrong length");
        const std::vector<double> ycheck = check_values({y->begin(), y->end()}, pi);
        report.fourth_moment = rated(centered_fourth_moment(dec, *y), rate_fourth);
        report.dispersion = rated(microstratum_dispersion(dec, ycheck), rate_dispersion);
    }

    if (model) {
        model->validate();
        const double s2 = model->sigma * model->sigma;
        CompensatedSum pisum;
        for (double p : pi) pisum += p;
        report.model_fourth_moment = rated(3.0 * s2 * s2 * pisum.value(), rate_fourth);

        CompensatedSum model_dispersion;
        for (std::size_t i = 1; i <= n; ++i) {
            const auto members = dec.members(i);
            for (const auto& mk : members) {
                for (const auto& ml : members) {
                    if (mk.unit == kPhantom || ml.unit == kPhantom || mk.unit == ml.unit) continue;
                    const double gap = 2.0 * (s2 - model->covariance(mk.unit, ml.unit));
                    model_dispersion += mk.alpha * ml.alpha * gap;
                }
            }
        }
        report.model_dispersion = rated(model_dispersion.value(), rate_dispersion);

        const bool independent = std::holds_alternative<IidKernel>(model->kernel);
        const std::size_t Nu = pi.size();
        // Gaussian errors: Cov(e_k^2, e_l^2) = 2 c_kl^2 >= 0.
        CompensatedSum squares;
        if (!independent) {
            for (std::size_t k = 0; k < Nu; ++k) {
                for (std::size_t l = k + 1; l < Nu; ++l) {
                    const double c = model->covariance(k, l);
                    if (c == 0.0) break;  // kernels decay monotonically in lag
                    // ordered pairs: both (k, l) and (l, k)
                    squares += 2.0 * pi[k] * (1.0 - pi[k]) * pi[l] * (1.0 - pi[l]) * (2.0 * c * c);
                }
            }
        }
        report.dependence_squares = rated(squares.value(), rate_dependence);

        if (pi2 != nullptr) {
            if (pi2->size() != Nu) throw std::invalid_argument("joint probabilities have the wrong size");
            auto delta = [&](std::size_t k, std::size_t l) { return pi[k] * pi[l] - (*pi2)(k, l); };
            CompensatedSum triples;
            CompensatedSum quadruples;
            if (!independent) {
                for (std::size_t k = 0; k < Nu; ++k) {
                    for (std::size_t l = 0; l < Nu; ++l) {
                        if (l == k) continue;
                        const double dkl = delta(k, l);
                        for (std::size_t i = 0; i < Nu; ++i) {
                            if (i == k || i == l) continue;
                            // Cov(e_k e_l, e_i^2) = 2 c_ki c_li
                            const double cov = 2.0 * model->covariance(k, i) * model->covariance(l, i);
                            triples += dkl * pi[i] * (1.0 - pi[i]) * std::max(0.0, cov);
                            for (std::size_t j = 0; j < Nu; ++j) {
                                if (j == k || j == l || j == i) continue;
                                // Cov(e_k e_l, e_i e_j) = c_ki c_lj + c_kj c_li
                                const double c4 = model->covariance(k, i) * model->covariance(l, j) +
                                                  model->covariance(k, j) * model->covariance(l, i);
                                quadruples += dkl * delta(i, j) * c4;
                            }
                        }
                    }
                }
            }
            report.dependence_triples = rated(triples.value(), rate_dependence);
            report.dependence_quadruples = rated(quadruples.value(), rate_dependence);
        }
    }
    return report;
}

}  // namespace opsample
