#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "opsample/numeric.hpp"
#include "opsample/population.hpp"

namespace opsample {

/// Cumulative sums within this distance of an integer are snapped onto it.
inline constexpr double kSnapTolerance = 1e-9;

/// A member of a microstratum together with its weight alpha_ik.
struct Member {
    Unit unit;
    double alpha;
};

/// Microstratum U_i: the cross-border unit k_{i-1} (carrying b_{i-1}), the
/// interior units strictly between k_{i-1} and k_i, and k_i (carrying a_i).
struct Stratum {
    Unit head = kPhantom;       // k_{i-1}
    double head_weight = 0.0;   // b_{i-1}
    Unit first = 0;             // interior units are [first, last)
    Unit last = 0;
    Unit tail = kPhantom;       // k_i
    double tail_weight = 0.0;   // a_i
    double tail_residual = 0.0; // b_i
    double tail_pi = 0.0;       // pi_{k_i}, 0 for the phantom

    [[nodiscard]] std::size_t interior_size() const noexcept { return last - first; }
};

/// Cumulative-probability geometry of an ordered pivotal design.
///
/// Boundaries and strata use the natural 1-based numbering: a(i), b(i) and
/// crossborder(i) for i = 0..n, stratum(i) for i = 1..n. k_0 and k_n are
/// phantoms, so every real unit after k_{n-1} is an interior member of U_n.
class Decomposition {
public:
    explicit Decomposition(const PopulationSpec& pop) : pi_(pop.pi()), pi_max_(pop.pi_max()) {
        const std::size_t N = pi_.size();
        cumulative_.assign(N + 1, 0.0);
        CompensatedSum running;
        for (std::size_t k = 0; k < N; ++k) {
            running += pi_[k];
            double v = running.value();
            const double r = std::round(v);
            if (std::abs(v - r) <= kSnapTolerance) v = r;
            cumulative_[k + 1] = v;
        }
        n_ = pop.sample_size();
        cumulative_[N] = static_cast<double>(n_);

        crossborder_.assign(n_ + 1, kPhantom);
        a_.assign(n_ + 1, 0.0);
        b_.assign(n_ + 1, 0.0);
        std::size_t k = 0;  // cumulative_[k + 1] is V after unit k
        for (std::size_t i = 1; i < n_; ++i) {
            const double boundary = static_cast<double>(i);
            while (cumulative_[k + 1] < boundary) ++k;
            crossborder_[i] = k;
            a_[i] = boundary - cumulative_[k];
            b_[i] = cumulative_[k + 1] - boundary;
            ++k;
        }

        strata_.resize(n_);
        stratum_of_.assign(N, 0);
        for (std::size_t i = 1; i <= n_; ++i) {
            Stratum& s = strata_[i - 1];
            s.head = crossborder_[i - 1];
            s.head_weight = b_[i - 1];
            s.first = (s.head == kPhantom) ? 0 : s.head + 1;
            s.tail = crossborder_[i];
            s.last = (s.tail == kPhantom) ? N : s.tail;
            s.tail_weight = a_[i];
            s.tail_residual = b_[i];
            s.tail_pi = (s.tail == kPhantom) ? 0.0 : pi_[s.tail];
            for (Unit u = s.first; u < s.last; ++u) stratum_of_[u] = i;
            if (s.tail != kPhantom) stratum_of_[s.tail] = i;
        }
    }

    [[nodiscard]] std::size_t population_size() const noexcept { return pi_.size(); }
    [[nodiscard]] std::size_t sample_size() const noexcept { return n_; }
    [[nodiscard]] const std::vector<double>& pi() const noexcept { return pi_; }
    [[nodiscard]] double pi(Unit k) const noexcept { return k == kPhantom ? 0.0 : pi_[k]; }
    [[nodiscard]] double pi_max() const noexcept { return pi_max_; }

    /// V_0..V_N after snapping.
    [[nodiscard]] const std::vector<double>& cumulative() const noexcept { return cumulative_; }
    [[nodiscard]] Unit crossborder(std::size_t i) const { return crossborder_.at(i); }
    [[nodiscard]] const std::vector<Unit>& crossborders() const noexcept { return crossborder_; }
    [[nodiscard]] double a(std::size_t i) const { return a_.at(i); }
    [[nodiscard]] double b(std::size_t i) const { return b_.at(i); }

    [[nodiscard]] const Stratum& stratum(std::size_t i) const {
        if (i < 1 || i > n_) throw std::out_of_range("stratum index " + std::to_string(i) + " out of range");
        return strata_[i - 1];
    }

    /// Stratum in which the unit is an interior member or the closing
    /// cross-border unit k_i.
    [[nodiscard]] std::size_t home_stratum(Unit k) const { return stratum_of_.at(k); }

    [[nodiscard]] bool is_crossborder(Unit k) const {
        const std::size_t i = stratum_of_.at(k);
        return strata_[i - 1].tail == k;
    }

    /// Members of U_i in order k_{i-1}, interior..., k_i. Phantoms and zero
    /// residuals appear with weight 0.
    [[nodiscard]] std::vector<Member> members(std::size_t i) const {
        const Stratum& s = stratum(i);
        std::vector<Member> out;
        out.reserve(s.interior_size() + 2);
        out.push_back({s.head, s.head_weight});
        for (Unit u = s.first; u < s.last; ++u) out.push_back({u, pi_[u]});
        out.push_back({s.tail, s.tail_weight});
        return out;
    }

    /// Probability that S_i wins the face-off against k_i.
    [[nodiscard]] double keep_probability(std::size_t i) const {
        const Stratum& s = stratum(i);
        if (s.tail == kPhantom) return 1.0;
        return (1.0 - s.tail_pi) / (1.0 - s.tail_residual);
    }

    /// c_i = a_i b_i / ((1 - a_i)(1 - b_i)), taken as 0 when a_i b_i = 0.
    [[nodiscard]] double carry_ratio(std::size_t i) const {
        const double ai = a(i);
        const double bi = b(i);
        if (ai * bi == 0.0) return 0.0;
        return ai * bi / ((1.0 - ai) * (1.0 - bi));
    }

private:
    std::vector<double> pi_;
    double pi_max_ = 0.0;
    std::size_t n_ = 0;
    std::vector<double> cumulative_;
    std::vector<Unit> crossborder_;
    std::vector<double> a_;
    std::vector<double> b_;
    std::vector<Stratum> strata_;
    std::vector<std::size_t> stratum_of_;
};

inline Decomposition decompose(const PopulationSpec& pop) { return Decomposition(pop); }

}  // namespace opsample
