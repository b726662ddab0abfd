#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "opsample/microstrata.hpp"
#include "opsample/numeric.hpp"
#include "opsample/sampler.hpp"

namespace opsample {

namespace detail {

inline double value_at(std::span<const double> values, Unit k) {
    return k == kPhantom ? 0.0 : values[k];
}

inline void require_unit(Unit k, std::size_t N) {
    if (k >= N) throw std::out_of_range("sampled unit " + std::to_string(k) + " outside the population");
}

}  // namespace detail

/// Horvitz-Thompson estimate of the total: sum over the sample of y_k / pi_k.
inline double ht_estimate(std::span<const Unit> sample, std::span<const double> y,
                          std::span<const double> pi) {
    if (y.size() != pi.size()) throw std::invalid_argument("y and pi have different lengths");
    CompensatedSum sum;
    for (Unit k : sample) {
        detail::require_unit(k, pi.size());
        sum += y[k] / pi[k];
    }
    return sum.value();
}

/// Per-stratum martingale increments of one draw, with the two alternative
/// algebraic forms of each increment kept alongside for cross-checking.
struct XiDecomposition {
    std::vector<double> xi;
    std::vector<double> xi_alt_first;   // b_i(y_S - y_F) + sum alpha (y_F - y_k)
    std::vector<double> xi_alt_second;  // (1-b_i) sum alpha (y_F - y_k) + b_i sum alpha (y_S - y_k)
    double ht = 0.0;
    double total = 0.0;

    [[nodiscard]] double sum() const {
        CompensatedSum s;
        for (double v : xi) s += v;
        return s.value();
    }
};

/// xi_i = y_F + b_i y_L - (sum_{U'_i} alpha y + b_i y_{k_i}) on check-values,
/// where U'_i is U_i with k_{i-1} replaced by the carried unit.
inline double xi_increment(const Decomposition& dec, std::size_t i, const TraceStep& step,
                           std::span<const double> ycheck) {
    const Stratum& s = dec.stratum(i);
    CompensatedSum weighted;
    weighted += s.head_weight * detail::value_at(ycheck, step.carried);
    for (Unit u = s.first; u < s.last; ++u) weighted += dec.pi(u) * ycheck[u];
    weighted += s.tail_weight * detail::value_at(ycheck, s.tail);
    const double bi = s.tail_residual;
    return detail::value_at(ycheck, step.selected) + bi * detail::value_at(ycheck, step.loser) -
           (weighted.value() + bi * detail::value_at(ycheck, s.tail));
}

inline XiDecomposition xi_decompose(const SampleDraw& draw, const Decomposition& dec,
                                    std::span<const double> y) {
    const std::size_t n = dec.sample_size();
    if (draw.trace.size() != n) throw std::invalid_argument("draw has no complete trace");
    if (y.size() != dec.population_size()) throw std::invalid_argument("y has the wrong length");
    const std::vector<double> ycheck = check_values({y.begin(), y.end()}, dec.pi());

    XiDecomposition out;
    out.xi.resize(n);
    out.xi_alt_first.resize(n);
    out.xi_alt_second.resize(n);
    for (std::size_t i = 1; i <= n; ++i) {
        const TraceStep& step = draw.trace[i - 1];
        out.xi[i - 1] = xi_increment(dec, i, step, ycheck);

        const Stratum& s = dec.stratum(i);
        const double yf = detail::value_at(ycheck, step.selected);
        const double ys = detail::value_at(ycheck, step.pick);
        CompensatedSum from_f;
        CompensatedSum from_s;
        auto add = [&](Unit k, double alpha) {
            const double yk = detail::value_at(ycheck, k);
            from_f += alpha * (yf - yk);
            from_s += alpha * (ys - yk);
        };
        add(step.carried, s.head_weight);
        for (Unit u = s.first; u < s.last; ++u) add(u, dec.pi(u));
        add(s.tail, s.tail_weight);
        const double bi = s.tail_residual;
        out.xi_alt_first[i - 1] = bi * (ys - yf) + from_f.value();
        out.xi_alt_second[i - 1] = (1.0 - bi) * from_f.value() + bi * from_s.value();
    }
    out.ht = ht_estimate(draw.selected, y, dec.pi());
    CompensatedSum t;
    for (double v : y) t += v;
    out.total = t.value();
    return out;
}

/// Variance of xi_i given the carried unit, in closed form:
/// sum_{k<l} alpha_k alpha_l (y_k - y_l)^2 over the S_i candidates plus
/// (1-a_i-b_i)/(1-a_i) * a_i * sum alpha_k (y_k - y_{k_i})^2.
inline double conditional_xi_variance(const Decomposition& dec, std::size_t i, Unit carried,
                                      std::span<const double> ycheck) {
    const Stratum& s = dec.stratum(i);
    const double w = s.head_weight;
    const double yl = detail::value_at(ycheck, carried);

    double W = w;
    CompensatedSum first;
    first += w * yl;
    for (Unit u = s.first; u < s.last; ++u) {
        W += dec.pi(u);
        first += dec.pi(u) * ycheck[u];
    }
    if (W <= 0.0) return 0.0;
    const double mean = first.value() / W;
    CompensatedSum spread;
    spread += w * (yl - mean) * (yl - mean);
    for (Unit u = s.first; u < s.last; ++u) spread += dec.pi(u) * (ycheck[u] - mean) * (ycheck[u] - mean);
    double result = W * spread.value();

    if (s.tail != kPhantom && s.tail_weight > 0.0 && s.tail_weight < 1.0) {
        const double ai = s.tail_weight;
        const double coef = (1.0 - s.tail_pi) / (1.0 - ai);
        const double yk = ycheck[s.tail];
        CompensatedSum gap;
        gap += w * (yl - yk) * (yl - yk);
        for (Unit u = s.first; u < s.last; ++u) gap += dec.pi(u) * (ycheck[u] - yk) * (ycheck[u] - yk);
        result += coef * ai * gap.value();
    }
    return result;
}

/// Exact design variance of the HT estimator for any population size.
///
/// The variance is the sum over strata of E[V(xi_i | L_{i-1})]. The
/// conditional variance is quadratic in the carried check-value, so only the
/// first two moments of y_{L_{i-1}} are needed, and those follow a forward
/// recursion through the face-offs. Check-values are centered at t_y / n.
inline double design_variance(const Decomposition& dec, std::span<const double> y) {
    if (y.size() != dec.population_size()) throw std::invalid_argument("y has the wrong length");
    std::vector<double> ycheck = check_values({y.begin(), y.end()}, dec.pi());
    CompensatedSum t;
    for (double v : y) t += v;
    const double center = t.value() / static_cast<double>(dec.sample_size());
    for (double& v : ycheck) v -= center;

    double m1 = 0.0;  // E[y_L], E[y_L^2] for the carried unit
    double m2 = 0.0;
    CompensatedSum total;
    for (std::size_t i = 1; i <= dec.sample_size(); ++i) {
        const Stratum& s = dec.stratum(i);
        const double w = s.head_weight;

        double W0 = 0.0;
        CompensatedSum p1;
        for (Unit u = s.first; u < s.last; ++u) {
            W0 += dec.pi(u);
            p1 += dec.pi(u) * ycheck[u];
        }
        const double mu = W0 > 0.0 ? p1.value() / W0 : 0.0;
        CompensatedSum p2c;
        for (Unit u = s.first; u < s.last; ++u) p2c += dec.pi(u) * (ycheck[u] - mu) * (ycheck[u] - mu);
        const double W = w + W0;

        // E over L of W * sum alpha (y - mean)^2 = W W0 var0 + w W0 E(y_L - mu)^2
        double term = W * p2c.value() + w * W0 * (m2 - 2.0 * mu * m1 + mu * mu);
        if (s.tail != kPhantom && s.tail_weight > 0.0 && s.tail_weight < 1.0) {
            const double ai = s.tail_weight;
            const double coef = (1.0 - s.tail_pi) / (1.0 - ai);
            const double yk = ycheck[s.tail];
            CompensatedSum q;
            for (Unit u = s.first; u < s.last; ++u) q += dec.pi(u) * (ycheck[u] - yk) * (ycheck[u] - yk);
            term += coef * ai * (w * (m2 - 2.0 * yk * m1 + yk * yk) + q.value());
        }
        total += term;

        // moments of S_i, then of L_i
        double s1 = m1;
        double s2 = m2;
        if (W > 0.0) {
            CompensatedSum raw2;
            for (Unit u = s.first; u < s.last; ++u) raw2 += dec.pi(u) * ycheck[u] * ycheck[u];
            s1 = (w * m1 + p1.value()) / W;
            s2 = (w * m2 + raw2.value()) / W;
        }
        if (s.tail == kPhantom) break;
        const double keep = dec.keep_probability(i);
        const double yk = ycheck[s.tail];
        m1 = keep * yk + (1.0 - keep) * s1;
        m2 = keep * yk * yk + (1.0 - keep) * s2;
    }
    return total.value();
}

/// What to do with sampled pairs whose joint inclusion probability is 0.
enum class ZeroPairPolicy { reject, drop };

/// Raised when the SYG estimator meets sampled pairs that can never be
/// selected together.
class ZeroJointProbabilityError : public std::domain_error {
public:
    ZeroJointProbabilityError(std::vector<std::pair<Unit, Unit>> pairs, const std::string& what)
        : std::domain_error(what), pairs_(std::move(pairs)) {}
    [[nodiscard]] const std::vector<std::pair<Unit, Unit>>& pairs() const noexcept { return pairs_; }

private:
    std::vector<std::pair<Unit, Unit>> pairs_;
};

/// Sen-Yates-Grundy variance estimator,
/// 1/2 sum_{k != l in S} (pi_k pi_l - pi_kl) / pi_kl (y_k/pi_k - y_l/pi_l)^2.
///
/// Pairs with |pi_kl - pi_k pi_l| <= 1e-12 contribute nothing; a pair with
/// pi_kl exceeding pi_k pi_l beyond that means the joint probabilities do not
/// come from this design and is rejected.
inline double syg_variance(std::span<const Unit> sample, std::span<const double> y,
                           std::span<const double> pi, const Matrix& pi2,
                           ZeroPairPolicy policy = ZeroPairPolicy::reject) {
    if (y.size() != pi.size() || pi2.size() != pi.size()) {
        throw std::invalid_argument("syg_variance: dimension mismatch");
    }
    std::vector<std::pair<Unit, Unit>> zero_pairs;
    CompensatedSum sum;
    for (std::size_t x = 0; x < sample.size(); ++x) {
        const Unit k = sample[x];
        detail::require_unit(k, pi.size());
        for (std::size_t z = x + 1; z < sample.size(); ++z) {
            const Unit l = sample[z];
            detail::require_unit(l, pi.size());
            const double joint = pi2(k, l);
            if (joint <= 0.0) {
                zero_pairs.emplace_back(k, l);
                continue;
            }
            const double gap = pi[k] * pi[l] - joint;
            if (gap < -1e-12) {
                std::ostringstream msg;
                msg << "joint probability of units " << k << " and " << l
                    << " exceeds the product of their inclusion probabilities";
                throw std::domain_error(msg.str());
            }
            if (std::abs(gap) <= 1e-12) continue;
            const double d = y[k] / pi[k] - y[l] / pi[l];
            sum += gap / joint * d * d;
        }
    }
    if (!zero_pairs.empty() && policy == ZeroPairPolicy::reject) {
        std::ostringstream msg;
        msg << "zero joint inclusion probability for sampled pairs:";
        for (auto [k, l] : zero_pairs) msg << " (" << k << "," << l << ")";
        throw ZeroJointProbabilityError(std::move(zero_pairs), msg.str());
    }
    return sum.value();
}

/// sigma^2 estimate 1/(2n(n-1)) sum_{k != l in S} (y_l/pi_l - y_k/pi_k)^2,
/// evaluated through the equivalent centered form.
inline double sigma_hat_squared(std::span<const Unit> sample, std::span<const double> y,
                                std::span<const double> pi) {
    const std::size_t n = sample.size();
    if (n < 2) throw std::invalid_argument("sigma_hat_squared needs at least two sampled units");
    CompensatedSum s;
    for (Unit k : sample) {
        detail::require_unit(k, pi.size());
        s += y[k] / pi[k];
    }
    const double mean = s.value() / static_cast<double>(n);
    CompensatedSum ss;
    for (Unit k : sample) {
        const double d = y[k] / pi[k] - mean;
        ss += d * d;
    }
    return ss.value() / static_cast<double>(n - 1);
}

/// Model-assisted variance sigma^2 * sum_U pi_k (1 - pi_k).
inline double model_variance(double sigma2, std::span<const double> pi) {
    CompensatedSum s;
    for (double p : pi) s += p * (1.0 - p);
    return sigma2 * s.value();
}

struct ConfidenceInterval {
    double low;
    double high;
};

/// ht -/+ u_{1-alpha} sqrt(variance).
inline ConfidenceInterval confidence_interval(double ht, double variance, double alpha) {
    if (!(alpha > 0.0 && alpha <= 0.5)) throw std::invalid_argument("alpha must lie in (0, 0.5]");
    if (!(variance >= 0.0)) throw std::domain_error("negative variance");
    const double half = normal_quantile(1.0 - alpha) * std::sqrt(variance);
    return {ht - half, ht + half};
}

struct EstimatorReport {
    double ht = 0.0;
    std::optional<double> variance_syg;
    std::optional<double> variance_model;
    double ci_low = 0.0;
    double ci_high = 0.0;
    double alpha = 0.025;
    std::string ci_variance;  // "syg" or "model"
};

}  // namespace opsample
