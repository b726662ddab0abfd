#include <catch_amalgamated.hpp>

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "test_support.hpp"

using namespace opsample;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result invoke(std::vector<std::string> args) {
    std::ostringstream out;
    std::ostringstream err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string fixture(const std::string& name) { return std::string(OPSAMPLE_DATA_DIR) + "/" + name; }

/// Fresh scratch directory, removed when the test ends.
struct Scratch {
    fs::path dir;
    Scratch() {
        static int counter = 0;
        dir = fs::temp_directory_path() / ("opsample-cli-" + std::to_string(::getpid()) + "-" + std::to_string(++counter));
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Scratch() { fs::remove_all(dir); }
    [[nodiscard]] std::string path(const std::string& name) const { return (dir / name).string(); }
    [[nodiscard]] std::string write(const std::string& name, const std::string& content) const {
        std::ofstream(dir / name) << content;
        return path(name);
    }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json parse_file(const std::string& path) { return json::parse(slurp(path)); }

}  // namespace

TEST_CASE("enumerate emits the exact law", "[cli]") {
    const Result r = invoke({"enumerate", "--population", fixture("two.csv")});
    REQUIRE(r.code == cli::kExitOk);
    const json doc = json::parse(r.out);
    REQUIRE(doc["outcomes"].size() == 2);
    CHECK(doc["outcomes"][0]["units"] == json::array({"a"}));
    CHECK(doc["outcomes"][0]["p"].get<double>() == Approx(0.4).margin(1e-15));
    CHECK(doc["outcomes"][1]["units"] == json::array({"b"}));
    CHECK(doc["outcomes"][1]["p"].get<double>() == Approx(0.6).margin(1e-15));
    CHECK(doc["variance"].is_null());
    CHECK(doc["pi1"][1].get<double>() == Approx(0.6).margin(1e-15));

    const Result three = invoke({"enumerate", "--population", fixture("three.csv"), "--decomposition"});
    REQUIRE(three.code == cli::kExitOk);
    const json t = json::parse(three.out);
    CHECK(t["variance"]["value"].get<double>() == Approx(0.16).epsilon(1e-13));
    CHECK(t["leaf_count"] == 4);
    CHECK(t["decomposition"]["n"] == 2);
    CHECK(t["pi2"][0][1].get<double>() == Approx(0.4).margin(1e-15));
}

TEST_CASE("enumerate refuses populations above the cap", "[cli]") {
    const Result r = invoke({"enumerate", "--population", fixture("six.csv"), "--cap", "4"});
    CHECK(r.code == cli::kExitInvalid);
    CHECK_THAT(r.err, ContainsSubstring("cap"));
}

TEST_CASE("sample output is reproducible", "[cli]") {
    Scratch s;
    const std::string a = s.path("a.csv");
    const std::string b = s.path("b.csv");
    const std::string c = s.path("c.csv");
    REQUIRE(invoke({"sample", "--population", fixture("three.csv"), "--draws", "200000", "--seed", "7", "--out", a})
                .code == cli::kExitOk);
    REQUIRE(invoke({"sample", "--population", fixture("three.csv"), "--draws", "200000", "--seed", "7", "--out", b})
                .code == cli::kExitOk);
    REQUIRE(invoke({"sample", "--population", fixture("three.csv"), "--draws", "200000", "--seed", "7", "--out", c,
                    "--threads", "4"})
                .code == cli::kExitOk);
    const std::string first = slurp(a);
    CHECK(first == slurp(b));
    CHECK(first == slurp(c));
    CHECK_FALSE(fs::exists(a + ".tmp"));

    const SampleTable table = read_sample_csv(a, read_population_csv(fixture("three.csv")));
    REQUIRE(table.draw_ids.size() == 200000);
    std::vector<double> count(3, 0.0);
    for (const auto& [id, units] : table.draws) {
        CHECK(units.size() == 2);
        for (Unit k : units) count[k] += 1.0;
    }
    const std::vector<double> pi = {0.6, 0.8, 0.6};
    for (std::size_t k = 0; k < 3; ++k) {
        CHECK(std::abs(count[k] / 200000 - pi[k]) <= 4.0 * std::sqrt(pi[k] * (1 - pi[k]) / 200000));
    }

    const std::string seven = s.path("seven.csv");
    const std::string eight = s.path("eight.csv");
    REQUIRE(invoke({"sample", "--population", fixture("three.csv"), "--draws", "50", "--seed", "7", "--out", seven})
                .code == cli::kExitOk);
    REQUIRE(invoke({"sample", "--population", fixture("three.csv"), "--draws", "50", "--seed", "8", "--out", eight})
                .code == cli::kExitOk);
    CHECK(first.rfind(slurp(seven), 0) == 0);
    CHECK(slurp(seven) != slurp(eight));
}

TEST_CASE("sample writes a trace on request", "[cli]") {
    Scratch s;
    const std::string trace = s.path("trace.json");
    REQUIRE(invoke({"sample", "--population", fixture("six.csv"), "--draws", "3", "--out", s.path("o.csv"), "--trace",
                    trace})
                .code == cli::kExitOk);
    const json doc = parse_file(trace);
    CHECK(doc.size() == 3);
}

TEST_CASE("check-bounds on the three-unit fixture", "[cli]") {
    Scratch s;
    const std::string out = s.path("bounds.json");
    const Result r = invoke({"check-bounds", "--population", fixture("three.csv"), "--out", out});
    CHECK(r.code == cli::kExitOk);
    const json doc = parse_file(out);
    REQUIRE(doc.size() == 17);
    for (const auto& c : doc) CHECK(c["holds"].get<bool>());

    // without y there is nothing to check
    CHECK(invoke({"check-bounds", "--population", fixture("two.csv")}).code == cli::kExitInvalid);
}

TEST_CASE("gen output parses back to the same population", "[cli]") {
    Scratch s;
    const std::string out = s.path("gen.csv");
    REQUIRE(invoke({"gen", "--population", fixture("six.csv"), "--out", out, "--beta", "2", "--sigma", "0.5",
                    "--kernel", "ar1:0.3", "--seed", "11"})
                .code == cli::kExitOk);
    const PopulationSpec base = read_population_csv(fixture("six.csv"));
    const PopulationSpec back = read_population_csv(out);
    CHECK(back.ids() == base.ids());
    CHECK(back.pi() == base.pi());

    ModelConfig m;
    m.beta = 2.0;
    m.sigma = 0.5;
    m.kernel = Ar1Kernel{0.3};
    UniformStream g(derive_seed(11, 0));
    CHECK(back.y() == generate_y(m, base.pi(), g));

    // a second generation from the written file reproduces it byte for byte
    const std::string again = s.path("again.csv");
    REQUIRE(invoke({"gen", "--population", out, "--out", again, "--beta", "2", "--sigma", "0.5", "--kernel", "ar1:0.3",
                    "--seed", "11"})
                .code == cli::kExitOk);
    CHECK(slurp(again) == slurp(out));

    CHECK(invoke({"gen", "--population", fixture("six.csv"), "--out", out, "--kernel", "ar1:2"}).code ==
          cli::kExitInvalid);
    CHECK(invoke({"gen", "--population", fixture("six.csv"), "--out", out, "--sigma", "0"}).code ==
          cli::kExitInvalid);
}

TEST_CASE("malformed CSV reports row and column", "[cli]") {
    Scratch s;
    const std::string bad = s.write("bad.csv", "id,pi\na,0.4\nb,zz\n");
    const Result r = invoke({"enumerate", "--population", bad});
    CHECK(r.code == cli::kExitInvalid);
    CHECK_THAT(r.err, ContainsSubstring("row 3, column 2"));

    const std::string header = s.write("header.csv", "unit,prob\na,0.4\nb,0.6\n");
    CHECK_THAT(invoke({"enumerate", "--population", header}).err, ContainsSubstring("row 1"));

    const std::string total = s.write("total.csv", "id,pi\na,0.4\nb,0.7\n");
    CHECK(invoke({"enumerate", "--population", total}).code == cli::kExitInvalid);
}

TEST_CASE("argument errors exit with status one", "[cli]") {
    CHECK(invoke({"enumerate", "--population", fixture("two.csv"), "--bogus"}).code == cli::kExitInvalid);
    CHECK(invoke({}).code == cli::kExitInvalid);
    CHECK(invoke({"frobnicate"}).code == cli::kExitInvalid);
    CHECK(invoke({"enumerate"}).code == cli::kExitInvalid);
    CHECK(invoke({"enumerate", "--population", "/nonexistent/pop.csv"}).code == cli::kExitInvalid);
    CHECK(invoke({"enumerate", "--population", fixture("two.csv"), "--out", "/nonexistent/dir/x.json"}).code ==
          cli::kExitInvalid);
    CHECK(invoke({"simulate-clt", "--mode", "both", "--N", "20", "--n", "2", "--R", "5"}).code == cli::kExitInvalid);

    const Result help = invoke({"--help"});
    CHECK(help.code == cli::kExitOk);
    CHECK_THAT(help.out, ContainsSubstring("simulate-clt"));
}

TEST_CASE("estimate with joint probabilities and with the model variance", "[cli]") {
    Scratch s;
    const std::string pi2 = s.path("pi2.json");
    REQUIRE(invoke({"enumerate", "--population", fixture("three.csv"), "--out", pi2}).code == cli::kExitOk);
    const std::string sample = s.write("sample.csv", "draw_id,unit_id\n1,u1\n1,u2\n2,u2\n2,u3\n");

    const Result syg = invoke({"estimate", "--population", fixture("three.csv"), "--sample", sample, "--pi2", pi2});
    REQUIRE(syg.code == cli::kExitOk);
    const json a = json::parse(syg.out);
    CHECK(a["ht"].get<double>() == Approx(3.0).epsilon(1e-15));
    CHECK(a["variance_syg"].get<double>() == Approx(0.2).epsilon(1e-13));
    CHECK(a["ci_variance"] == "syg");
    CHECK(a["ci_high"].get<double>() - 3.0 == Approx(1.959963984540054 * std::sqrt(0.2)).epsilon(1e-12));

    // check-values (1, 2): sigma-hat^2 = 0.5 and sum pi (1 - pi) = 0.64
    const Result model = invoke({"estimate", "--population", fixture("three.csv"), "--sample", sample});
    REQUIRE(model.code == cli::kExitOk);
    const json b = json::parse(model.out);
    CHECK(b["variance_syg"].is_null());
    CHECK(b["variance_model"].get<double>() == Approx(0.32).epsilon(1e-14));
    CHECK(b["ci_variance"] == "model");

    const Result second = invoke({"estimate", "--population", fixture("three.csv"), "--sample", sample, "--draw", "2"});
    REQUIRE(second.code == cli::kExitOk);
    CHECK(json::parse(second.out)["ht"].get<double>() == Approx(3.0).epsilon(1e-15));
    CHECK(invoke({"estimate", "--population", fixture("three.csv"), "--sample", sample, "--draw", "9"}).code ==
          cli::kExitInvalid);

    const std::string unknown = s.write("unknown.csv", "draw_id,unit_id\n1,u1\n1,zz\n");
    CHECK(invoke({"estimate", "--population", fixture("three.csv"), "--sample", unknown}).code == cli::kExitInvalid);
}

TEST_CASE("estimate rejects zero joint probabilities unless told to drop them", "[cli]") {
    Scratch s;
    const std::string pi2 = s.path("pi2.json");
    REQUIRE(invoke({"enumerate", "--population", fixture("flat.csv"), "--out", pi2}).code == cli::kExitOk);
    const std::string sample = s.write("sample.csv", "draw_id,unit_id\n1,1\n1,2\n");
    const Result reject = invoke({"estimate", "--population", fixture("flat.csv"), "--sample", sample, "--pi2", pi2});
    CHECK(reject.code == cli::kExitInvalid);
    const Result drop = invoke(
        {"estimate", "--population", fixture("flat.csv"), "--sample", sample, "--pi2", pi2, "--drop-zero-pairs"});
    REQUIRE(drop.code == cli::kExitOk);
    CHECK(json::parse(drop.out)["variance_syg"].get<double>() == 0.0);
}

TEST_CASE("assumptions report", "[cli]") {
    const Result plain = invoke({"assumptions", "--population", fixture("three.csv")});
    REQUIRE(plain.code == cli::kExitOk);
    const json a = json::parse(plain.out);
    CHECK(a["dispersion"]["value"].get<double>() == Approx(0.48).epsilon(1e-13));
    CHECK(a["model_fourth_moment"].is_null());
    CHECK_FALSE(a["certainty_units"].get<bool>());

    const Result model = invoke({"assumptions", "--population", fixture("six.csv"), "--model", "--kernel", "ar1:0.5"});
    REQUIRE(model.code == cli::kExitOk);
    const json b = json::parse(model.out);
    CHECK(b["dependence_squares"]["value"].get<double>() > 0.0);
    CHECK(b["dependence_triples"].is_object());
    CHECK(b["dependence_quadruples"].is_object());
}

TEST_CASE("simulate-clt writes a report and the standardized statistics", "[cli]") {
    Scratch s;
    const std::string report = s.path("report.json");
    const std::string stats = s.path("z.csv");
    const std::vector<std::string> base = {"simulate-clt", "--N", "200", "--n", "20", "--R", "100", "--seed", "5"};
    auto with = [&](std::vector<std::string> extra) {
        std::vector<std::string> args = base;
        args.insert(args.end(), extra.begin(), extra.end());
        return args;
    };
    REQUIRE(invoke(with({"--out", report, "--stats-csv", stats})).code == cli::kExitOk);
    const json doc = parse_file(report);
    CHECK(doc["mode"] == "design");
    CHECK(doc["N"] == 200);
    CHECK(doc["replicates"] == 100);
    CHECK(doc["variance_used"] == "exact");
    const std::string z = slurp(stats);
    CHECK(z.rfind("replicate,z\n", 0) == 0);
    CHECK(std::count(z.begin(), z.end(), '\n') == 101);

    const std::string threaded = s.path("threaded.json");
    const std::string threaded_stats = s.path("threaded.csv");
    REQUIRE(invoke(with({"--out", threaded, "--stats-csv", threaded_stats, "--threads", "3"})).code == cli::kExitOk);
    CHECK(slurp(threaded) == slurp(report));
    CHECK(slurp(threaded_stats) == z);

    const Result model = invoke(with({"--mode", "model", "--kernel", "exp:2", "--pilot-replicates", "200"}));
    REQUIRE(model.code == cli::kExitOk);
    const json m = json::parse(model.out);
    CHECK(m["variance_used"] == "mc-estimated");
    CHECK(m["model_variance_mean"].is_number());

    const Result fixed = invoke({"simulate-clt", "--population", fixture("six.csv"), "--R", "50"});
    REQUIRE(fixed.code == cli::kExitOk);
    CHECK(json::parse(fixed.out)["N"] == 6);
}
