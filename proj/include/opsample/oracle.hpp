#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <sstream>
#include <stdexcept>
#include <type_traits>
#include <utility>
#include <vector>

#include "opsample/estimation.hpp"
#include "opsample/microstrata.hpp"
#include "opsample/numeric.hpp"
#include "opsample/sampler.hpp"

namespace opsample {

/// Default limit on the population size accepted by the enumerator.
inline constexpr std::size_t kDefaultOracleCap = 14;

struct EnumerateOptions {
    std::size_t cap = kDefaultOracleCap;
    bool keep_traces = false;
};

/// Upper bound on the number of leaves of the outcome tree.
inline double estimated_leaf_count(const Decomposition& dec) {
    double leaves = 1.0;
    for (std::size_t i = 1; i <= dec.sample_size(); ++i) {
        const Stratum& s = dec.stratum(i);
        const double candidates =
            std::max<double>(1.0, static_cast<double>(s.interior_size()) + (s.head_weight > 0.0 ? 1.0 : 0.0));
        const double keep = dec.keep_probability(i);
        const double faceoff = (keep > 0.0 && keep < 1.0) ? 2.0 : 1.0;
        leaves *= candidates * faceoff;
    }
    return leaves;
}

class OracleCapExceeded : public std::length_error {
public:
    OracleCapExceeded(std::size_t N, std::size_t cap, double leaves)
        : std::length_error(message(N, cap, leaves)), leaves_(leaves) {}
    [[nodiscard]] double estimated_leaves() const noexcept { return leaves_; }

private:
    static std::string message(std::size_t N, std::size_t cap, double leaves) {
        std::ostringstream msg;
        msg << "population of " << N << " units exceeds the enumeration cap of " << cap
            << " (about " << leaves << " leaves)";
        return msg.str();
    }
    double leaves_;
};

inline void require_within_cap(const Decomposition& dec, std::size_t cap) {
    if (dec.population_size() > cap) {
        throw OracleCapExceeded(dec.population_size(), cap, estimated_leaf_count(dec));
    }
}

namespace detail {

template <class Visitor>
class PathWalker {
public:
    PathWalker(const Decomposition& dec, Visitor& visit)
        : dec_(dec), visit_(visit), path_(dec.sample_size()) {}

    void run() { expand(1, dec_.crossborder(0), 1.0); }

private:
    void expand(std::size_t i, Unit carried, double prob) {
        if (i > dec_.sample_size()) {
            visit_(prob, std::span<const TraceStep>(path_));
            return;
        }
        const Stratum& s = dec_.stratum(i);
        double W = s.head_weight;
        for (Unit u = s.first; u < s.last; ++u) W += dec_.pi(u);
        if (W <= 0.0) {
            faceoff(i, carried, carried, prob);
            return;
        }
        if (s.head_weight > 0.0) faceoff(i, carried, carried, prob * s.head_weight / W);
        for (Unit u = s.first; u < s.last; ++u) faceoff(i, carried, u, prob * dec_.pi(u) / W);
    }

    void faceoff(std::size_t i, Unit carried, Unit pick, double prob) {
        const Unit tail = dec_.stratum(i).tail;
        const double keep = dec_.keep_probability(i);
        if (keep > 0.0) {
            path_[i - 1] = {carried, pick, pick, tail};
            expand(i + 1, tail, prob * keep);
        }
        if (keep < 1.0) {
            path_[i - 1] = {carried, pick, tail, pick};
            expand(i + 1, pick, prob * (1.0 - keep));
        }
    }

    const Decomposition& dec_;
    Visitor& visit_;
    std::vector<TraceStep> path_;
};

}  // namespace detail

/// Visits every leaf of the outcome tree with its probability and the full
/// sequence of stratum decisions. Zero-probability branches are not expanded.
template <class Visitor>
void for_each_path(const Decomposition& dec, Visitor&& visit) {
    detail::PathWalker<std::remove_reference_t<Visitor>> walker(dec, visit);
    walker.run();
}

/// Exact law of the sampling design obtained by enumerating the outcome tree.
struct ExactDistribution {
    std::vector<double> pi;  // prescribed first-order probabilities
    std::size_t sample_size = 0;
    std::map<std::vector<Unit>, double> outcomes;
    std::vector<double> first_order;
    Matrix second_order;
    /// carried_law[i] is the law of L_i, i = 0..n.
    std::vector<std::map<Unit, double>> carried_law;
    std::vector<std::pair<std::vector<TraceStep>, double>> paths;  // only with keep_traces
    std::size_t leaf_count = 0;

    [[nodiscard]] double total_probability() const {
        CompensatedSum s;
        for (const auto& [key, p] : outcomes) s += p;
        return s.value();
    }
    [[nodiscard]] double joint(Unit k, Unit l) const { return second_order(k, l); }
    [[nodiscard]] double carried_probability(std::size_t i, Unit l) const {
        const auto& law = carried_law.at(i);
        const auto it = law.find(l);
        return it == law.end() ? 0.0 : it->second;
    }
};

inline ExactDistribution enumerate(const Decomposition& dec, EnumerateOptions options = {}) {
    require_within_cap(dec, options.cap);
    const std::size_t N = dec.population_size();
    const std::size_t n = dec.sample_size();

    ExactDistribution dist;
    dist.pi = dec.pi();
    dist.sample_size = n;
    dist.carried_law.resize(n + 1);
    dist.carried_law[0][dec.crossborder(0)] = 1.0;

    std::vector<Unit> key(n);
    for_each_path(dec, [&](double p, std::span<const TraceStep> path) {
        for (std::size_t i = 0; i < n; ++i) key[i] = path[i].selected;
        std::sort(key.begin(), key.end());
        dist.outcomes[key] += p;
        for (std::size_t i = 0; i < n; ++i) dist.carried_law[i + 1][path[i].loser] += p;
        if (options.keep_traces) dist.paths.emplace_back(std::vector<TraceStep>(path.begin(), path.end()), p);
        ++dist.leaf_count;
    });

    dist.first_order.assign(N, 0.0);
    dist.second_order = Matrix(N);
    for (const auto& [units, p] : dist.outcomes) {
        for (std::size_t x = 0; x < units.size(); ++x) {
            dist.first_order[units[x]] += p;
            dist.second_order(units[x], units[x]) += p;
            for (std::size_t z = x + 1; z < units.size(); ++z) {
                dist.second_order(units[x], units[z]) += p;
                dist.second_order(units[z], units[x]) += p;
            }
        }
    }
    return dist;
}

/// Exact law of the HT estimator: (value, probability) per distinct sample.
inline std::vector<std::pair<double, double>> ht_law(const ExactDistribution& dist,
                                                     std::span<const double> y) {
    if (y.size() != dist.pi.size()) throw std::invalid_argument("y has the wrong length");
    std::vector<std::pair<double, double>> law;
    law.reserve(dist.outcomes.size());
    for (const auto& [units, p] : dist.outcomes) law.emplace_back(ht_estimate(units, y, dist.pi), p);
    return law;
}

/// Exact design variance computed two ways.
struct DesignVariance {
    double moment_form = 0.0;     // sum_s p(s) (HT(s) - t_y)^2
    double quadratic_form = 0.0;  // 1/2 sum_{k != l} (pi_k pi_l - pi_kl)(y_k/pi_k - y_l/pi_l)^2

    [[nodiscard]] double value() const noexcept { return moment_form; }
};

inline DesignVariance exact_design_variance(const ExactDistribution& dist, std::span<const double> y) {
    if (y.size() != dist.pi.size()) throw std::invalid_argument("y has the wrong length");
    CompensatedSum t;
    for (double v : y) t += v;
    const double total = t.value();

    DesignVariance out;
    CompensatedSum moment;
    for (const auto& [value, p] : ht_law(dist, y)) moment += p * (value - total) * (value - total);
    out.moment_form = moment.value();

    const std::size_t N = dist.pi.size();
    CompensatedSum quad;
    for (Unit k = 0; k < N; ++k) {
        for (Unit l = k + 1; l < N; ++l) {
            const double d = y[k] / dist.pi[k] - y[l] / dist.pi[l];
            quad += (dist.pi[k] * dist.pi[l] - dist.second_order(k, l)) * d * d;
        }
    }
    out.quadratic_form = quad.value();

    const double scale = std::max({1.0, std::abs(out.moment_form), std::abs(out.quadratic_form)});
    if (std::abs(out.moment_form - out.quadratic_form) > 1e-10 * scale) {
        std::ostringstream msg;
        msg.precision(17);
        msg << "design variance forms disagree: " << out.moment_form << " vs " << out.quadratic_form;
        throw std::logic_error(msg.str());
    }
    return out;
}

/// Moments of xi_i conditional on the carried unit L_{i-1} = l.
struct ConditionalMoments {
    double probability = 0.0;  // P(L_{i-1} = l)
    double mean = 0.0;
    double second = 0.0;
    double fourth = 0.0;

    [[nodiscard]] double variance() const noexcept { return second - mean * mean; }
};

/// Exact moments of the martingale increments xi_1..xi_n.
struct XiMoments {
    std::vector<double> mean;
    std::vector<double> variance;
    std::vector<double> fourth;
    Matrix covariance;
    /// conditional[i - 1] maps each possible L_{i-1} to the moments of xi_i.
    std::vector<std::map<Unit, ConditionalMoments>> conditional;
    /// Variance of sum_i V(xi_i | L_{i-1}) over the design.
    double conditional_variance_sum_variance = 0.0;

    [[nodiscard]] double variance_sum() const {
        CompensatedSum s;
        for (double v : variance) s += v;
        return s.value();
    }
    [[nodiscard]] double fourth_sum() const {
        CompensatedSum s;
        for (double v : fourth) s += v;
        return s.value();
    }
};

inline XiMoments exact_xi_moments(const Decomposition& dec, std::span<const double> y,
                                  std::size_t cap = kDefaultOracleCap) {
    require_within_cap(dec, cap);
    if (y.size() != dec.population_size()) throw std::invalid_argument("y has the wrong length");
    const std::size_t n = dec.sample_size();
    const std::vector<double> ycheck = check_values({y.begin(), y.end()}, dec.pi());

    XiMoments m;
    m.mean.assign(n, 0.0);
    m.variance.assign(n, 0.0);
    m.fourth.assign(n, 0.0);
    m.covariance = Matrix(n);
    m.conditional.resize(n);

    std::vector<double> xi(n);
    Matrix raw_cross(n);
    for_each_path(dec, [&](double p, std::span<const TraceStep> path) {
        for (std::size_t i = 0; i < n; ++i) xi[i] = xi_increment(dec, i + 1, path[i], ycheck);
        for (std::size_t i = 0; i < n; ++i) {
            const double x = xi[i];
            m.mean[i] += p * x;
            m.fourth[i] += p * x * x * x * x;
            for (std::size_t j = 0; j < n; ++j) raw_cross(i, j) += p * x * xi[j];
            ConditionalMoments& c = m.conditional[i][path[i].carried];
            c.probability += p;
            c.mean += p * x;
            c.second += p * x * x;
            c.fourth += p * x * x * x * x;
        }
    });

    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            m.covariance(i, j) = raw_cross(i, j) - m.mean[i] * m.mean[j];
        }
        m.variance[i] = m.covariance(i, i);
        for (auto& [unit, c] : m.conditional[i]) {
            c.mean /= c.probability;
            c.second /= c.probability;
            c.fourth /= c.probability;
        }
    }

    auto conditional_sum = [&](std::span<const TraceStep> path) {
        double q = 0.0;
        for (std::size_t i = 0; i < n; ++i) q += m.conditional[i].at(path[i].carried).variance();
        return q;
    };
    double mean_sum = 0.0;
    for_each_path(dec, [&](double p, std::span<const TraceStep> path) { mean_sum += p * conditional_sum(path); });
    double spread = 0.0;
    for_each_path(dec, [&](double p, std::span<const TraceStep> path) {
        const double d = conditional_sum(path) - mean_sum;
        spread += p * d * d;
    });
    m.conditional_variance_sum_variance = spread;
    return m;
}

}  // namespace opsample
