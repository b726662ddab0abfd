#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "test_support.hpp"

using namespace opsample;
using namespace opsample::testing;
using Catch::Approx;

namespace {

/// Replays a fixed list of uniforms and counts how many were used.
struct ScriptedUniforms {
    std::vector<double> values;
    std::size_t used = 0;
    double operator()() { return values.at(used++); }
};

std::map<std::vector<Unit>, double> frequencies(const Decomposition& dec, std::size_t R, std::uint64_t seed) {
    std::map<std::vector<Unit>, double> freq;
    UniformStream g(seed);
    SampleDraw d;
    for (std::size_t r = 0; r < R; ++r) {
        draw_into(dec, g, d);
        std::vector<Unit> key = d.selected;
        std::sort(key.begin(), key.end());
        freq[key] += 1.0 / static_cast<double>(R);
    }
    return freq;
}

}  // namespace

TEST_CASE("selection weights for the carried unit and interior units", "[sampler]") {
    const Decomposition dec(population({0.6, 0.8, 0.6}));
    const auto w = selection_probabilities(dec, 2, 0);
    REQUIRE(w.size() == 2);
    CHECK(w[0].unit == 0);
    CHECK(w[0].weight == Approx(0.4).margin(1e-15));
    CHECK(w[1].unit == 2);
    CHECK(w[1].weight == 0.6);
    CHECK(w[0].weight + w[1].weight == Approx(1.0 - dec.a(2)).margin(1e-15));

    const Decomposition flat(population({0.5, 0.5, 0.5, 0.5}));
    const auto first = selection_probabilities(flat, 1, flat.crossborder(0));
    CHECK(first[0].unit == kPhantom);
    CHECK(first[0].weight == 0.0);
    CHECK(first[1].weight == 0.5);
    CHECK(flat.keep_probability(2) == 1.0);
    CHECK_THROWS_AS(selection_probabilities(flat, 3, 0), std::out_of_range);
}

TEST_CASE("weights over U'_i minus k_i sum to 1 - a_i on random populations", "[sampler]") {
    for (const auto& pi : pi_battery(100, 40, 17)) {
        const Decomposition dec(population(pi));
        for (std::size_t i = 1; i <= dec.sample_size(); ++i) {
            double total = 0.0;
            for (const auto& c : selection_probabilities(dec, i, dec.crossborder(i - 1))) total += c.weight;
            CHECK(total == Approx(1.0 - dec.a(i)).margin(1e-12));
            if (dec.a(i) == 0.0) CHECK(dec.keep_probability(i) == 1.0);
        }
    }
}

TEST_CASE("scripted uniforms drive the documented interval layout", "[sampler]") {
    const Decomposition dec(population({0.6, 0.8, 0.6}));
    REQUIRE(uniforms_per_draw(dec) == 2);
    // stratum 1: only unit 1 has positive pick weight, so no uniform is spent on S_1.
    // face-off keeps S_1 = 1 when u < 1/3; stratum 2 picks the carried unit when u * 1 < 0.4.
    ScriptedUniforms keep{{0.2, 0.1}};
    const SampleDraw a = draw(dec, keep);
    CHECK(keep.used == 2);
    CHECK(a.selected == std::vector<Unit>{0, 1});  // F_1 = 1, L_1 = 2 picked in stratum 2
    CHECK(a.trace[0].pick == 0);
    CHECK(a.trace[0].loser == 1);

    ScriptedUniforms swap{{0.5, 0.7}};
    const SampleDraw b = draw(dec, swap);
    CHECK(swap.used == 2);
    CHECK(b.selected == std::vector<Unit>{1, 2});

    ScriptedUniforms boundary{{dec.keep_probability(1), 0.9}};
    const SampleDraw c = draw(dec, boundary);
    // left-closed intervals: u equal to a cut point falls in the next interval
    CHECK(c.trace[0].selected == 1);
    CHECK(c.trace[1].selected == 2);

    ScriptedUniforms reversed{{0.5, 0.1}};
    const SampleDraw e = draw(dec, reversed);
    // k_1 wins stratum 1 and the unit it beat wins stratum 2
    CHECK(e.selected == std::vector<Unit>{1, 0});
}

TEST_CASE("exact laws of the small reference designs", "[sampler]") {
    SECTION("two units, one draw") {
        const auto dist = enumerate(Decomposition(population({0.4, 0.6})));
        CHECK(dist.outcomes.size() == 2);
        CHECK(dist.outcomes.at({0}) == Approx(0.4).margin(1e-15));
        CHECK(dist.outcomes.at({1}) == Approx(0.6).margin(1e-15));
    }
    SECTION("four equal units") {
        const auto dist = enumerate(Decomposition(population({0.5, 0.5, 0.5, 0.5})));
        CHECK(dist.outcomes.size() == 4);
        for (const auto& key : std::vector<std::vector<Unit>>{{0, 2}, {0, 3}, {1, 2}, {1, 3}}) {
            CHECK(dist.outcomes.at(key) == Approx(0.25).margin(1e-15));
        }
        CHECK(dist.outcomes.count({0, 1}) == 0);
        CHECK(dist.outcomes.count({2, 3}) == 0);
    }
    SECTION("three units") {
        const auto dist = enumerate(Decomposition(population({0.6, 0.8, 0.6})));
        CHECK(dist.outcomes.at({0, 2}) == Approx(0.2).margin(1e-15));
        CHECK(dist.outcomes.at({1, 2}) == Approx(0.4).margin(1e-15));
        CHECK(dist.outcomes.at({0, 1}) == Approx(0.4).margin(1e-15));
    }
}

TEST_CASE("every draw has n distinct units and a consistent trace", "[sampler]") {
    UniformStream g(3);
    for (const auto& pi : pi_battery(60, 40, 23, true)) {
        const Decomposition dec(population(pi));
        const std::size_t expected_uniforms = uniforms_per_draw(dec);
        for (int rep = 0; rep < 50; ++rep) {
            const std::uint64_t before = g.consumed();
            const SampleDraw d = draw(dec, g);
            CHECK(g.consumed() - before == expected_uniforms);
            REQUIRE(d.selected.size() == dec.sample_size());
            CHECK(std::set<Unit>(d.selected.begin(), d.selected.end()).size() == dec.sample_size());
            Unit carried = dec.crossborder(0);
            for (std::size_t i = 1; i <= dec.sample_size(); ++i) {
                const TraceStep& s = d.trace[i - 1];
                const Stratum& st = dec.stratum(i);
                CHECK(s.carried == carried);
                CHECK(s.selected == d.selected[i - 1]);
                // S_i comes from U'_i without k_i
                const bool interior = s.pick != kPhantom && s.pick >= st.first && s.pick < st.last;
                CHECK((s.pick == s.carried || interior));
                // {F_i, L_i} = {S_i, k_i}
                CHECK(std::set<Unit>{s.selected, s.loser} == std::set<Unit>{s.pick, st.tail});
                if (dec.a(i) == 0.0) CHECK(s.selected == s.pick);
                if (st.head_weight == 0.0 && st.interior_size() > 0) CHECK(s.pick != s.carried);
                CHECK(s.selected != kPhantom);
                carried = s.loser;
            }
            for (std::size_t k = 0; k < pi.size(); ++k) {
                if (pi[k] == 1.0) CHECK(std::find(d.selected.begin(), d.selected.end(), k) != d.selected.end());
            }
        }
    }
}

TEST_CASE("certainty units are always selected", "[sampler]") {
    for (const auto& pi : std::vector<std::vector<double>>{{1.0, 0.5, 0.5}, {0.5, 1.0, 0.5}, {0.5, 0.5, 1.0}}) {
        const auto dist = enumerate(Decomposition(population(pi)));
        for (std::size_t k = 0; k < 3; ++k) CHECK(dist.first_order[k] == Approx(pi[k]).margin(1e-14));
    }
}

TEST_CASE("same stream gives the same draw", "[sampler]") {
    const Decomposition dec(population({0.2, 0.7, 0.3, 0.5, 0.9, 0.4}));
    UniformStream a(derive_seed(5, 1));
    UniformStream b(derive_seed(5, 1));
    for (int i = 0; i < 100; ++i) {
        const SampleDraw x = draw(dec, a);
        const SampleDraw y = draw(dec, b);
        CHECK(x.selected == y.selected);
        CHECK(x.trace == y.trace);
    }
}

TEST_CASE("Monte Carlo marginals stay within four binomial standard errors", "[sampler]") {
    const std::size_t R = 200000;
    const auto battery = pi_battery(10, 30, 31);
    for (std::size_t p = 0; p < battery.size(); ++p) {
        const auto& pi = battery[p];
        const Decomposition dec(population(pi));
        std::vector<double> count(pi.size(), 0.0);
        UniformStream g(derive_seed(77, p));
        SampleDraw d;
        for (std::size_t r = 0; r < R; ++r) {
            draw_into(dec, g, d);
            for (Unit k : d.selected) count[k] += 1.0;
        }
        for (std::size_t k = 0; k < pi.size(); ++k) {
            const double freq = count[k] / static_cast<double>(R);
            CHECK(std::abs(freq - pi[k]) <= 4.0 * std::sqrt(pi[k] * (1.0 - pi[k]) / static_cast<double>(R)));
        }
    }
}

TEST_CASE("empirical sample-set law converges to the enumerated law", "[sampler]") {
    const auto battery = pi_battery(5, 8, 41);
    for (std::size_t p = 0; p < battery.size(); ++p) {
        const Decomposition dec(population(battery[p]));
        const auto dist = enumerate(dec);
        const auto freq = frequencies(dec, 200000, derive_seed(9, p));
        double tv = 0.0;
        for (const auto& [key, prob] : dist.outcomes) {
            const auto it = freq.find(key);
            tv += std::abs(prob - (it == freq.end() ? 0.0 : it->second));
        }
        for (const auto& [key, f] : freq) {
            CHECK(dist.outcomes.count(key) == 1);
        }
        CHECK(0.5 * tv <= 0.01);
    }
}
