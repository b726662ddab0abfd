#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "opsample/microstrata.hpp"
#include "opsample/random.hpp"

namespace opsample {

/// Decisions taken in microstratum i during one run.
struct TraceStep {
    Unit carried;   // L_{i-1}
    Unit pick;      // S_i
    Unit selected;  // F_i
    Unit loser;     // L_i

    friend bool operator==(const TraceStep&, const TraceStep&) = default;
};

/// One run of ordered pivotal sampling.
struct SampleDraw {
    /// F_1..F_n in stratum order. This is not always population order: when
    /// k_i wins stratum i, the unit it beat may be selected in stratum i + 1.
    std::vector<Unit> selected;
    std::vector<TraceStep> trace;
    std::uint64_t stream_id = 0;
};

/// Candidate for S_i with its unnormalized weight.
struct Candidate {
    Unit unit;
    double weight;
};

/// Candidates for S_i given the carried unit: L_{i-1} first with weight
/// b_{i-1}, then the interior units with weight pi_k. Weights sum to 1 - a_i.
inline std::vector<Candidate> selection_probabilities(const Decomposition& dec, std::size_t i,
                                                      Unit carried) {
    const Stratum& s = dec.stratum(i);
    std::vector<Candidate> out;
    out.reserve(s.interior_size() + 1);
    out.push_back({carried, s.head_weight});
    for (Unit u = s.first; u < s.last; ++u) out.push_back({u, dec.pi(u)});
    return out;
}

namespace detail {

/// Draws S_i. A uniform is consumed only when at least two candidates carry
/// positive weight; candidates occupy left-closed cumulative intervals in the
/// order L_{i-1}, interior units.
template <UniformSource G>
Unit pick_candidate(const Decomposition& dec, const Stratum& s, Unit carried, G& uniforms) {
    const std::size_t positive = s.interior_size() + (s.head_weight > 0.0 ? 1 : 0);
    if (positive == 0) return carried;
    if (positive == 1) return s.head_weight > 0.0 ? carried : s.first;

    double total = s.head_weight;
    for (Unit u = s.first; u < s.last; ++u) total += dec.pi(u);
    const double target = static_cast<double>(uniforms()) * total;

    double acc = s.head_weight;
    if (target < acc) return carried;
    for (Unit u = s.first; u < s.last; ++u) {
        acc += dec.pi(u);
        if (target < acc) return u;
    }
    return s.last - 1;  // rounding at the top of the last interval
}

}  // namespace detail

/// Runs the recursion once, writing into `out` (buffers are reused).
template <UniformSource G>
void draw_into(const Decomposition& dec, G& uniforms, SampleDraw& out) {
    const std::size_t n = dec.sample_size();
    out.selected.resize(n);
    out.trace.resize(n);
    Unit carried = dec.crossborder(0);
    for (std::size_t i = 1; i <= n; ++i) {
        const Stratum& s = dec.stratum(i);
        if (s.head_weight > 0.0 && carried == kPhantom) {
            throw std::logic_error("phantom unit carried with positive residual");
        }
        const Unit pick = detail::pick_candidate(dec, s, carried, uniforms);

        bool keep = true;
        if (s.tail != kPhantom) {
            const double p_keep = dec.keep_probability(i);
            if (p_keep <= 0.0) {
                keep = false;
            } else if (p_keep < 1.0) {
                keep = static_cast<double>(uniforms()) < p_keep;
            }
        }
        const Unit selected = keep ? pick : s.tail;
        const Unit loser = keep ? s.tail : pick;
        out.trace[i - 1] = {carried, pick, selected, loser};
        out.selected[i - 1] = selected;
        carried = loser;
    }
}

template <UniformSource G>
SampleDraw draw(const Decomposition& dec, G& uniforms, std::uint64_t stream_id = 0) {
    SampleDraw out;
    out.stream_id = stream_id;
    draw_into(dec, uniforms, out);
    return out;
}

inline SampleDraw draw(const Decomposition& dec, UniformStream& uniforms) {
    return draw<UniformStream>(dec, uniforms, uniforms.seed());
}

/// Number of uniforms one run consumes. Depends only on the decomposition.
inline std::size_t uniforms_per_draw(const Decomposition& dec) {
    std::size_t count = 0;
    for (std::size_t i = 1; i <= dec.sample_size(); ++i) {
        const Stratum& s = dec.stratum(i);
        if (s.interior_size() + (s.head_weight > 0.0 ? 1 : 0) >= 2) ++count;
        const double p_keep = dec.keep_probability(i);
        if (p_keep > 0.0 && p_keep < 1.0) ++count;
    }
    return count;
}

}  // namespace opsample
