#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "opsample/estimation.hpp"
#include "opsample/microstrata.hpp"
#include "opsample/model.hpp"
#include "opsample/numeric.hpp"
#include "opsample/oracle.hpp"

namespace opsample {

/// Absolute slack allowed when deciding whether an inequality holds.
inline constexpr double kBoundTolerance = 1e-10;

/// Outcome of evaluating one inequality (lhs <= rhs) or identity.
struct BoundCheck {
    std::string name;
    double lhs = 0.0;
    double rhs = 0.0;
    bool holds = false;
    double slack = 0.0;  // rhs - lhs
};

inline BoundCheck make_bound(std::string name, double lhs, double rhs) {
    return {std::move(name), lhs, rhs, lhs <= rhs + kBoundTolerance, rhs - lhs};
}

/// Identity a == b, recorded as |a - b| <= 1e-10 * max(1, |a|, |b|).
inline BoundCheck make_identity(std::string name, double a, double b) {
    const double scale = std::max({1.0, std::abs(a), std::abs(b)});
    return make_bound(std::move(name), std::abs(a - b), kBoundTolerance * scale);
}

namespace detail {

/// Keeps the instance with the smallest slack among many evaluations of the
/// same inequality.
class WorstCase {
public:
    explicit WorstCase(std::string name) : name_(std::move(name)) {}

    void bound(double lhs, double rhs) {
        BoundCheck c = make_bound(name_, lhs, rhs);
        take(c);
    }
    void identity(double a, double b) {
        BoundCheck c = make_identity(name_, a, b);
        take(c);
    }
    [[nodiscard]] BoundCheck result() const {
        if (!seen_) return make_bound(name_, 0.0, 0.0);
        return worst_;
    }

private:
    void take(const BoundCheck& c) {
        // rank by normalized slack so identities at different scales compare
        const double score = c.slack - kBoundTolerance;
        if (!seen_ || (c.holds ? 1 : 0) < (worst_.holds ? 1 : 0) ||
            ((c.holds == worst_.holds) && score < best_score_)) {
            worst_ = c;
            best_score_ = score;
            seen_ = true;
        }
    }

    std::string name_;
    BoundCheck worst_;
    double best_score_ = std::numeric_limits<double>::infinity();
    bool seen_ = false;
};

struct ExactContext {
    const Decomposition& dec;
    std::vector<double> y;
    std::vector<double> ycheck;
    const ExactDistribution& dist;
    XiMoments xi;
    double center = 0.0;      // t_y / n
    double fourth = 0.0;      // sum pi_k (y_k/pi_k - t_y/n)^4
    double inverse_gap = 0.0; // 1 / (1 - pi_M)

    ExactContext(const Decomposition& d, std::span<const double> values, const ExactDistribution& e)
        : dec(d), y(values.begin(), values.end()), dist(e) {
        if (d.pi_max() >= 1.0) {
            throw std::invalid_argument("bound checks need every inclusion probability below 1");
        }
        if (y.size() != d.population_size()) throw std::invalid_argument("y has the wrong length");
        ycheck = check_values(y, d.pi());
        xi = exact_xi_moments(d, y, d.population_size());
        CompensatedSum t;
        for (double v : y) t += v;
        center = t.value() / static_cast<double>(d.sample_size());
        fourth = centered_fourth_moment(d, y);
        inverse_gap = 1.0 / (1.0 - d.pi_max());
    }

    [[nodiscard]] double yc(Unit k) const { return k == kPhantom ? 0.0 : ycheck[k]; }
};

inline std::vector<BoundCheck> increment_checks(const ExactContext& ctx) {
    const std::size_t n = ctx.dec.sample_size();
    WorstCase mean("xi_mean_zero");
    WorstCase conditional("xi_conditional_mean_zero");
    WorstCase cov("xi_uncorrelated");
    for (std::size_t i = 0; i < n; ++i) {
        mean.identity(ctx.xi.mean[i], 0.0);
        for (const auto& [unit, c] : ctx.xi.conditional[i]) conditional.identity(c.mean, 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            if (i != j) cov.identity(ctx.xi.covariance(i, j), 0.0);
        }
    }
    const double variance = exact_design_variance(ctx.dist, ctx.y).value();
    return {mean.result(), conditional.result(), cov.result(),
            make_identity("xi_variance_sum", ctx.xi.variance_sum(), variance)};
}

inline BoundCheck fourth_moment_check(const ExactContext& ctx) {
    const double rhs = 16.0 * (2.0 + ctx.inverse_gap) * ctx.fourth;
    return make_bound("increment_fourth_moment", ctx.xi.fourth_sum(), rhs);
}

inline BoundCheck variance_lower_check(const ExactContext& ctx) {
    const double gap = 1.0 - ctx.dec.pi_max();
    const double bound = gap * gap * microstratum_dispersion(ctx.dec, ctx.ycheck);
    return make_bound("variance_lower_bound", bound, exact_design_variance(ctx.dist, ctx.y).value());
}

inline BoundCheck conditional_spread_check(const ExactContext& ctx) {
    const double rhs = 8.0 * (3.0 + 2.0 * ctx.inverse_gap) * (2.0 + ctx.inverse_gap) * ctx.fourth;
    return make_bound("conditional_variance_spread", ctx.xi.conditional_variance_sum_variance, rhs);
}

inline std::vector<BoundCheck> supporting_checks(const ExactContext& ctx) {
    const Decomposition& dec = ctx.dec;
    const std::size_t n = dec.sample_size();
    const auto phi = [](double x) { return x * x * x * x; };

    // members of U'_i for a given carried unit
    auto candidates = [&](std::size_t i, Unit carried) {
        auto m = dec.members(i);
        m.front().unit = carried;
        return m;
    };

    WorstCase forms("increment_alternative_forms");
    WorstCase pathwise("pathwise_convexity");
    for_each_path(dec, [&](double, std::span<const TraceStep> path) {
        SampleDraw d;
        d.trace.assign(path.begin(), path.end());
        for (const auto& step : path) d.selected.push_back(step.selected);
        const XiDecomposition parts = xi_decompose(d, dec, ctx.y);
        for (std::size_t i = 1; i <= n; ++i) {
            forms.identity(parts.xi[i - 1], parts.xi_alt_first[i - 1]);
            forms.identity(parts.xi[i - 1], parts.xi_alt_second[i - 1]);

            const TraceStep& step = path[i - 1];
            const double bi = dec.b(i);
            double rhs = 0.0;
            for (const auto& m : candidates(i, step.carried)) {
                rhs += (1.0 - bi) * m.alpha * phi(ctx.yc(step.selected) - ctx.yc(m.unit));
                rhs += bi * m.alpha * phi(ctx.yc(step.pick) - ctx.yc(m.unit));
            }
            pathwise.bound(phi(parts.xi[i - 1]), rhs);
        }
    });

    WorstCase convex_conditional("conditional_convexity");
    WorstCase closed_form("conditional_variance_closed_form");
    for (std::size_t i = 1; i <= n; ++i) {
        for (const auto& [carried, c] : ctx.xi.conditional[i - 1]) {
            const auto members = candidates(i, carried);
            double rhs = 0.0;
            for (const auto& mk : members) {
                for (const auto& ml : members) rhs += mk.alpha * ml.alpha * phi(ctx.yc(ml.unit) - ctx.yc(mk.unit));
            }
            convex_conditional.bound(c.fourth, rhs);
            closed_form.identity(c.variance(), conditional_xi_variance(dec, i, carried, ctx.ycheck));
        }
    }

    // c(i, j) = prod_{l=i}^{j-1} c_l
    const double limit = 1.0 + ctx.inverse_gap;
    WorstCase ratio("carry_ratio");
    WorstCase forward("carry_forward_sum");
    WorstCase backward("carry_backward_sum");
    for (std::size_t l = 1; l <= n; ++l) ratio.bound(dec.carry_ratio(l), 1.0 / (2.0 - dec.pi_max()));
    for (std::size_t i = 1; i <= n; ++i) {
        double chain = 1.0;
        double sum = 0.0;
        for (std::size_t j = i; j <= n; ++j) {
            sum += chain;
            chain *= dec.carry_ratio(j);
        }
        forward.bound(sum, limit);
    }
    for (std::size_t j = 1; j <= n; ++j) {
        double chain = 1.0;
        double sum = 0.0;
        for (std::size_t i = j; i >= 1; --i) {
            sum += chain;
            if (i > 1) chain *= dec.carry_ratio(i - 1);
        }
        backward.bound(sum, limit);
    }

    // E sum_j b_j z_{L_j} with z = (y_k/pi_k - t_y/n)^4
    auto z = [&](Unit k) { return phi(ctx.yc(k) - ctx.center); };
    double carried_lhs = 0.0;
    for (std::size_t j = 1; j + 1 <= n; ++j) {
        for (const auto& [unit, p] : ctx.dist.carried_law[j]) {
            if (unit != kPhantom) carried_lhs += dec.b(j) * p * z(unit);
        }
    }
    double carried_rhs = 0.0;
    for (Unit k = 0; k < dec.population_size(); ++k) carried_rhs += dec.pi(k) * z(k);
    carried_rhs *= limit;

    WorstCase recursion("carry_recursion");
    WorstCase mass("carried_mass_bound");
    for (std::size_t j = 1; j <= n; ++j) {
        for (const auto& [unit, p] : ctx.dist.carried_law[j]) {
            if (unit == kPhantom) continue;
            mass.bound(dec.b(j) * p, dec.pi(unit));
        }
        if (j < 2) continue;
        for (const auto& [unit, p] : ctx.dist.carried_law[j - 1]) {
            if (unit == kPhantom) continue;
            recursion.identity(dec.b(j) * ctx.dist.carried_probability(j, unit),
                               dec.carry_ratio(j) * dec.b(j - 1) * p);
        }
    }

    return {forms.result(),    pathwise.result(), convex_conditional.result(),
            ratio.result(),     forward.result(),     backward.result(),
            make_bound("carried_fourth_moment", carried_lhs, carried_rhs),
            closed_form.result(),    recursion.result(),   mass.result()};
}

}  // namespace detail

inline std::vector<BoundCheck> check_increments(const Decomposition& dec, std::span<const double> y,
                                           const ExactDistribution& dist) {
    return detail::increment_checks(detail::ExactContext(dec, y, dist));
}

/// sum_i E xi_i^4 <= 16 {2 + 1/(1-pi_M)} sum_l pi_l (y_l/pi_l - t_y/n)^4.
inline BoundCheck check_fourth_moment_bound(const Decomposition& dec, std::span<const double> y, const ExactDistribution& dist) {
    return detail::fourth_moment_check(detail::ExactContext(dec, y, dist));
}

/// Lower bound on the design variance from the within-microstratum dispersion.
inline BoundCheck check_variance_lower_bound(const Decomposition& dec, std::span<const double> y, const ExactDistribution& dist) {
    return detail::variance_lower_check(detail::ExactContext(dec, y, dist));
}

/// Upper bound on the variance of the summed conditional variances.
inline BoundCheck check_conditional_variance_bound(const Decomposition& dec, std::span<const double> y, const ExactDistribution& dist) {
    return detail::conditional_spread_check(detail::ExactContext(dec, y, dist));
}

inline std::vector<BoundCheck> check_supporting_bounds(const Decomposition& dec, std::span<const double> y,
                                            const ExactDistribution& dist) {
    return detail::supporting_checks(detail::ExactContext(dec, y, dist));
}

/// Every check above, sharing one enumeration of the xi moments.
inline std::vector<BoundCheck> check_all(const Decomposition& dec, std::span<const double> y,
                                         const ExactDistribution& dist) {
    const detail::ExactContext ctx(dec, y, dist);
    std::vector<BoundCheck> out = detail::increment_checks(ctx);
    out.push_back(detail::fourth_moment_check(ctx));
    out.push_back(detail::variance_lower_check(ctx));
    out.push_back(detail::conditional_spread_check(ctx));
    for (auto& c : detail::supporting_checks(ctx)) out.push_back(std::move(c));
    return out;
}

/// Kolmogorov-Smirnov distance between the empirical CDF of the sorted
/// values and the standard normal CDF.
inline double ks_statistic(std::span<const double> sorted) {
    if (sorted.empty()) throw std::invalid_argument("ks_statistic: empty input");
    const double m = static_cast<double>(sorted.size());
    double d = 0.0;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (!std::isfinite(sorted[i])) throw std::invalid_argument("ks_statistic: non-finite value");
        if (i > 0 && sorted[i] < sorted[i - 1]) throw std::invalid_argument("ks_statistic: input not sorted");
        const double f = normal_cdf(sorted[i]);
        d = std::max({d, static_cast<double>(i + 1) / m - f, f - static_cast<double>(i) / m});
    }
    return d;
}

/// 1% critical value of the KS distance, 1.63 / sqrt(R).
inline double ks_critical_1pct(std::size_t replicates) {
    return 1.63 / std::sqrt(static_cast<double>(replicates));
}

}  // namespace opsample
