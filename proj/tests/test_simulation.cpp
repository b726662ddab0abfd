#include <catch_amalgamated.hpp>

#include <atomic>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "test_support.hpp"

using namespace opsample;
using namespace opsample::testing;
using Catch::Approx;

namespace {

CltConfig small_config(CltMode mode) {
    CltConfig c;
    c.mode = mode;
    c.population_size = 400;
    c.sample_size = 40;
    c.replicates = 300;
    c.seed = 17;
    c.pilot_replicates = 500;
    return c;
}

}  // namespace

TEST_CASE("mode names round trip", "[simulation]") {
    CHECK(parse_mode("design") == CltMode::design);
    CHECK(parse_mode("model") == CltMode::model);
    CHECK(std::string(mode_name(CltMode::model)) == "model");
    CHECK_THROWS_AS(parse_mode("both"), std::invalid_argument);
}

TEST_CASE("parallel_for visits every index once and rethrows", "[simulation]") {
    std::vector<std::atomic<int>> hits(1000);
    parallel_for(hits.size(), 4, [&](std::size_t i) { ++hits[i]; });
    for (const auto& h : hits) CHECK(h.load() == 1);
    CHECK_THROWS_AS(parallel_for(100, 3,
                                 [](std::size_t i) {
                                     if (i == 57) throw std::domain_error("boom");
                                 }),
                    std::domain_error);
    parallel_for(0, 4, [](std::size_t) { FAIL("called on empty range"); });
}

TEST_CASE("a single replicate still produces a report", "[simulation]") {
    CltConfig c = small_config(CltMode::design);
    c.replicates = 1;
    const SimulationReport r = clt_experiment(c);
    CHECK(r.standardized.size() == 1);
    CHECK((r.coverage == 0.0 || r.coverage == 1.0));
    CHECK(r.condition_b == 0.0);
    CHECK(r.variance_used == "exact");
}

TEST_CASE("zero variance is reported as an error", "[simulation]") {
    CltConfig c = small_config(CltMode::design);
    c.y = std::vector<double>(c.population_size, 0.1 * 3.0);  // y = 3 pi with pi = 0.1
    CHECK_THROWS_AS(clt_experiment(c), std::domain_error);
}

TEST_CASE("invalid configurations are rejected", "[simulation]") {
    CltConfig c = small_config(CltMode::design);
    c.sample_size = 0;
    CHECK_THROWS_AS(clt_experiment(c), std::invalid_argument);
    c = small_config(CltMode::design);
    c.replicates = 0;
    CHECK_THROWS_AS(clt_experiment(c), std::invalid_argument);
    c = small_config(CltMode::design);
    c.alpha = 0.0;
    CHECK_THROWS_AS(clt_experiment(c), std::invalid_argument);
    c = small_config(CltMode::model);
    c.model.sigma = 0.0;
    CHECK_THROWS_AS(clt_experiment(c), std::invalid_argument);
    c = small_config(CltMode::design);
    c.pi = std::vector<double>(c.population_size, 0.05);
    CHECK_THROWS_AS(clt_experiment(c), std::invalid_argument);
}

TEST_CASE("reports do not depend on the thread count", "[simulation]") {
    for (CltMode mode : {CltMode::design, CltMode::model}) {
        CltConfig c = small_config(mode);
        c.model.kernel = Ar1Kernel{0.4};
        c.variance_source = VarianceSource::pilot;
        const SimulationReport one = clt_experiment(c);
        c.threads = 4;
        const SimulationReport four = clt_experiment(c);
        CHECK(one.standardized == four.standardized);
        CHECK(one.variance == four.variance);
        CHECK(one.condition_a == four.condition_a);
        CHECK(one.condition_b == four.condition_b);
        CHECK(one.model_variance_mean == four.model_variance_mean);
    }
}

TEST_CASE("design-mode run with the exact variance", "[simulation]") {
    CltConfig c = small_config(CltMode::design);
    c.replicates = 2000;
    const SimulationReport r = clt_experiment(c);
    CHECK(r.variance_used == "exact");
    CHECK(r.pilot_replicates == 0);
    CHECK(r.ks_critical == Approx(1.63 / std::sqrt(2000.0)).margin(1e-15));
    CHECK(r.ks_stat <= r.ks_critical);
    CHECK(r.coverage >= 0.93);
    CHECK(r.coverage <= 0.97);
    CHECK_FALSE(r.model_variance_mean.has_value());

    // standardized values have mean about 0 and variance about 1
    double m = 0.0;
    for (double z : r.standardized) m += z;
    m /= static_cast<double>(r.standardized.size());
    CHECK(std::abs(m) <= 4.0 / std::sqrt(2000.0));
}

TEST_CASE("pilot variance estimate agrees with the exact variance", "[simulation]") {
    CltConfig c = small_config(CltMode::design);
    c.replicates = 10;
    const double exact = clt_experiment(c).variance;
    c.variance_source = VarianceSource::pilot;
    c.pilot_replicates = 20000;
    const SimulationReport pilot = clt_experiment(c);
    CHECK(pilot.variance_used == "mc-estimated");
    CHECK(pilot.pilot_replicates == 20000);
    // relative standard error of a mean of squared near-normal errors is sqrt(2 / R0)
    CHECK(std::abs(pilot.variance / exact - 1.0) <= 4.0 * std::sqrt(2.0 / 20000.0));
}

TEST_CASE("model mode reports the model-assisted variance estimate", "[simulation]") {
    CltConfig c = small_config(CltMode::model);
    c.model.sigma = 2.0;
    c.replicates = 1000;
    const SimulationReport r = clt_experiment(c);
    CHECK(r.variance_used == "exact");
    CHECK(r.variance == Approx(4.0 * 400 * 0.1 * 0.9).epsilon(1e-12));
    REQUIRE(r.model_variance_mean.has_value());
    CHECK(std::abs(*r.model_variance_mean - r.variance) <= 3.0 * *r.model_variance_se);
}

TEST_CASE("unequal probabilities are accepted", "[simulation]") {
    const auto battery = pi_battery(1, 60, 88);
    CltConfig c;
    c.pi = battery[0];
    c.population_size = battery[0].size();
    double total = 0.0;
    for (double p : battery[0]) total += p;
    c.sample_size = static_cast<std::size_t>(std::lround(total));
    c.replicates = 200;
    const SimulationReport r = clt_experiment(c);
    CHECK(r.standardized.size() == 200);
    CHECK(std::isfinite(r.condition_a));
}
