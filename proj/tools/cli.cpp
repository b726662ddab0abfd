#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "opsample/opsample.hpp"

namespace opsample::cli {
namespace {

namespace fs = std::filesystem;

/// A bound or identity that did not hold; maps to exit status 2.
class CheckFailed : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void require_input(const std::string& path) {
    if (!fs::is_regular_file(path)) throw std::invalid_argument("input file '" + path + "' does not exist");
}

void require_output(const std::string& path) {
    if (path.empty()) return;
    const fs::path parent = fs::absolute(fs::path(path)).parent_path();
    if (!fs::is_directory(parent)) {
        throw std::invalid_argument("output directory '" + parent.string() + "' does not exist");
    }
}

void emit(const std::string& path, const std::string& content, std::ostream& out) {
    if (path.empty()) {
        out << content;
    } else {
        write_file_atomic(path, content);
    }
}

struct ModelFlags {
    double beta = 1.0;
    double sigma = 1.0;
    std::string kernel = "iid";

    void attach(CLI::App* cmd) {
        cmd->add_option("--beta", beta, "Model slope")->capture_default_str();
        cmd->add_option("--sigma", sigma, "Model error standard deviation")->capture_default_str();
        cmd->add_option("--kernel", kernel, "Error correlation: iid, ar1:RHO or exp:RANGE")->capture_default_str();
    }
    [[nodiscard]] ModelConfig config() const {
        ModelConfig m;
        m.beta = beta;
        m.sigma = sigma;
        m.kernel = parse_kernel(kernel);
        m.validate();
        return m;
    }
};

struct SampleCommand {
    std::string population;
    std::size_t draws = 1;
    std::uint64_t seed = 1;
    std::string out;
    std::string trace;
    unsigned threads = 1;

    void attach(CLI::App& app) {
        auto* cmd = app.add_subcommand("sample", "Draw samples by ordered pivotal sampling");
        cmd->add_option("--population", population, "Population CSV (id,pi[,y])")->required();
        cmd->add_option("--draws", draws, "Number of independent draws")->capture_default_str();
        cmd->add_option("--seed", seed, "Master seed")->capture_default_str();
        cmd->add_option("--out", out, "Output CSV (draw_id,unit_id)")->required();
        cmd->add_option("--trace", trace, "Optional JSON dump of every draw's decisions");
        cmd->add_option("--threads", threads, "Worker threads")->capture_default_str();
    }

    int operator()(std::ostream&) const {
        require_input(population);
        require_output(out);
        require_output(trace);
        if (draws < 1) throw std::invalid_argument("--draws must be at least 1");
        const PopulationSpec pop = read_population_csv(population);
        const Decomposition dec(pop);

        // draw d (1-based) uses stream index d
        std::vector<SampleDraw> results(draws);
        parallel_for(draws, threads, [&](std::size_t d) {
            UniformStream g(derive_seed(seed, d + 1));
            results[d] = opsample::draw(dec, g, d + 1);
        });

        std::string csv = "draw_id,unit_id\n";
        for (std::size_t d = 0; d < draws; ++d) {
            const std::string prefix = std::to_string(d + 1) + ",";
            for (Unit k : results[d].selected) {
                csv += prefix;
                csv += pop.ids()[k];
                csv += '\n';
            }
        }
        write_file_atomic(out, csv);
        if (!trace.empty()) {
            json doc = json::array();
            for (const auto& d : results) doc.push_back(trace_json(pop, d));
            write_file_atomic(trace, dump(doc));
        }
        return kExitOk;
    }
};

struct EnumerateCommand {
    std::string population;
    std::string out;
    std::size_t cap = kDefaultOracleCap;
    bool decomposition = false;

    void attach(CLI::App& app) {
        auto* cmd = app.add_subcommand("enumerate", "Exact design law by exhaustive enumeration");
        cmd->add_option("--population", population, "Population CSV (id,pi[,y])")->required();
        cmd->add_option("--out", out, "Output JSON (stdout when omitted)");
        cmd->add_option("--cap", cap, "Largest population size accepted")->capture_default_str();
        cmd->add_flag("--decomposition", decomposition, "Also include the microstrata decomposition");
    }

    int operator()(std::ostream& os) const {
        require_input(population);
        require_output(out);
        const PopulationSpec pop = read_population_csv(population);
        const Decomposition dec(pop);
        const ExactDistribution dist = enumerate(dec, {cap, false});
        std::optional<DesignVariance> variance;
        if (pop.has_y()) variance = exact_design_variance(dist, pop.y());
        json doc = distribution_json(pop, dist, variance);
        if (decomposition) doc["decomposition"] = decomposition_json(pop, dec);
        emit(out, dump(doc), os);
        return kExitOk;
    }
};

struct EstimateCommand {
    std::string population;
    std::string sample;
    std::optional<std::uint64_t> draw_id;
    std::string pi2;
    bool drop_zero_pairs = false;
    double alpha = 0.025;
    std::string out;

    void attach(CLI::App& app) {
        auto* cmd = app.add_subcommand("estimate", "HT estimate, variance estimates and confidence interval");
        cmd->add_option("--population", population, "Population CSV with a y column")->required();
        cmd->add_option("--sample", sample, "Sample CSV (draw_id,unit_id)")->required();
        cmd->add_option("--draw", draw_id, "Draw to use (default: the first in the file)");
        cmd->add_option("--pi2", pi2, "Joint inclusion probabilities (JSON written by enumerate)");
        cmd->add_flag("--drop-zero-pairs", drop_zero_pairs, "Skip sampled pairs with zero joint probability");
        cmd->add_option("--alpha", alpha, "One-sided level; the interval has coverage 1 - 2 alpha")
            ->capture_default_str();
        cmd->add_option("--out", out, "Output JSON (stdout when omitted)");
    }

    int operator()(std::ostream& os) const {
        require_input(population);
        require_input(sample);
        if (!pi2.empty()) require_input(pi2);
        require_output(out);
        const PopulationSpec pop = read_population_csv(population);
        const std::vector<double>& y = pop.y();
        const SampleTable table = read_sample_csv(sample, pop);
        const std::uint64_t id = draw_id.value_or(table.draw_ids.front());
        const auto it = table.draws.find(id);
        if (it == table.draws.end()) throw std::invalid_argument("no draw with id " + std::to_string(id));
        const std::vector<Unit>& units = it->second;
        if (units.size() != pop.sample_size()) {
            throw std::invalid_argument("draw " + std::to_string(id) + " has " + std::to_string(units.size()) +
                                        " units, expected " + std::to_string(pop.sample_size()));
        }

        EstimatorReport report;
        report.alpha = alpha;
        report.ht = ht_estimate(units, y, pop.pi());
        if (!pi2.empty()) {
            std::ifstream in(pi2);
            const Matrix joint = joint_probabilities_from_json(json::parse(in), pop);
            report.variance_syg = syg_variance(units, y, pop.pi(), joint,
                                               drop_zero_pairs ? ZeroPairPolicy::drop : ZeroPairPolicy::reject);
        }
        if (units.size() >= 2) report.variance_model = model_variance(sigma_hat_squared(units, y, pop.pi()), pop.pi());

        double variance = 0.0;
        if (report.variance_syg) {
            variance = *report.variance_syg;
            report.ci_variance = "syg";
        } else if (report.variance_model) {
            variance = *report.variance_model;
            report.ci_variance = "model";
        } else {
            throw std::invalid_argument("no variance estimate available: pass --pi2 or use n >= 2");
        }
        const ConfidenceInterval ci = confidence_interval(report.ht, variance, alpha);
        report.ci_low = ci.low;
        report.ci_high = ci.high;
        emit(out, dump(estimator_json(report)), os);
        return kExitOk;
    }
};

struct GenCommand {
    std::string population;
    std::string out;
    ModelFlags model;
    std::uint64_t seed = 1;

    void attach(CLI::App& app) {
        auto* cmd = app.add_subcommand("gen", "Generate y from the superpopulation model");
        cmd->add_option("--population", population, "Population CSV (id,pi[,y])")->required();
        cmd->add_option("--out", out, "Output CSV with the y column")->required();
        model.attach(cmd);
        cmd->add_option("--seed", seed, "Master seed")->capture_default_str();
    }

    int operator()(std::ostream&) const {
        require_input(population);
        require_output(out);
        const ModelConfig config = model.config();
        const PopulationSpec pop = read_population_csv(population);
        UniformStream g(derive_seed(seed, 0));
        const PopulationSpec result = pop.with_y(generate_y(config, pop.pi(), g));
        write_file_atomic(out, population_csv(result));
        return kExitOk;
    }
};

struct AssumptionsCommand {
    std::string population;
    std::string out;
    ModelFlags model;
    bool with_model = false;
    std::size_t cap = kDefaultOracleCap;

    void attach(CLI::App& app) {
        auto* cmd = app.add_subcommand("assumptions", "Regularity statistics for the limit theorems");
        cmd->add_option("--population", population, "Population CSV (id,pi[,y])")->required();
        cmd->add_option("--out", out, "Output JSON (stdout when omitted)");
        cmd->add_flag("--model", with_model, "Include the model-based statistics");
        model.attach(cmd);
        cmd->add_option("--cap", cap, "Largest size for which joint probabilities are enumerated")
            ->capture_default_str();
    }

    int operator()(std::ostream& os) const {
        require_input(population);
        require_output(out);
        const PopulationSpec pop = read_population_csv(population);
        const Decomposition dec(pop);
        std::optional<ModelConfig> config;
        if (with_model) config = model.config();
        std::optional<std::span<const double>> y;
        if (pop.has_y()) y = std::span<const double>(pop.y());
        std::optional<ExactDistribution> dist;
        if (config && pop.size() <= cap) dist = enumerate(dec, {cap, false});
        const AssumptionReport report = assumption_report(dec, y, config, dist ? &dist->second_order : nullptr);
        emit(out, dump(assumptions_json(report)), os);
        return kExitOk;
    }
};

struct CheckBoundsCommand {
    std::string population;
    std::string out;
    std::size_t cap = kDefaultOracleCap;

    void attach(CLI::App& app) {
        auto* cmd = app.add_subcommand("check-bounds", "Exact checks of the moment bounds and lemmas");
        cmd->add_option("--population", population, "Population CSV with a y column")->required();
        cmd->add_option("--out", out, "Output JSON (stdout when omitted)");
        cmd->add_option("--cap", cap, "Largest population size accepted")->capture_default_str();
    }

    int operator()(std::ostream& os) const {
        require_input(population);
        require_output(out);
        const PopulationSpec pop = read_population_csv(population);
        const Decomposition dec(pop);
        const ExactDistribution dist = enumerate(dec, {cap, false});
        const std::vector<BoundCheck> checks = check_all(dec, pop.y(), dist);
        emit(out, dump(bounds_json(checks)), os);
        for (const auto& c : checks) {
            if (!c.holds) throw CheckFailed("check '" + c.name + "' does not hold");
        }
        return kExitOk;
    }
};

struct SimulateCommand {
    std::string mode = "design";
    std::size_t N = 10000;
    std::size_t n = 500;
    std::size_t R = 2000;
    std::uint64_t seed = 1;
    double alpha = 0.025;
    ModelFlags model;
    bool pilot = false;
    std::size_t pilot_replicates = kDefaultPilotReplicates;
    std::string population;
    unsigned threads = 1;
    std::string out;
    std::string stats_csv;

    void attach(CLI::App& app) {
        auto* cmd = app.add_subcommand("simulate-clt", "Monte Carlo check of the normal limit of the HT estimator");
        cmd->add_option("--mode", mode, "design (fixed y) or model (fresh y per replicate)")->capture_default_str();
        cmd->add_option("--N", N, "Population size")->capture_default_str();
        cmd->add_option("--n", n, "Sample size")->capture_default_str();
        cmd->add_option("--R", R, "Replicates")->capture_default_str();
        cmd->add_option("--seed", seed, "Master seed")->capture_default_str();
        cmd->add_option("--alpha", alpha, "One-sided level of the confidence interval")->capture_default_str();
        model.attach(cmd);
        cmd->add_flag("--pilot", pilot, "Estimate the variance from a pilot run instead of the exact value");
        cmd->add_option("--pilot-replicates", pilot_replicates, "Pilot run size")->capture_default_str();
        cmd->add_option("--population", population, "Population CSV supplying pi (and y in design mode)");
        cmd->add_option("--threads", threads, "Worker threads")->capture_default_str();
        cmd->add_option("--out", out, "Report JSON (stdout when omitted)");
        cmd->add_option("--stats-csv", stats_csv, "CSV of the standardized statistics");
    }

    int operator()(std::ostream& os) const {
        if (!population.empty()) require_input(population);
        require_output(out);
        require_output(stats_csv);
        CltConfig config;
        config.mode = parse_mode(mode);
        config.population_size = N;
        config.sample_size = n;
        config.replicates = R;
        config.seed = seed;
        config.alpha = alpha;
        config.model = model.config();
        config.variance_source = pilot ? VarianceSource::pilot : VarianceSource::exact;
        config.pilot_replicates = pilot_replicates;
        config.threads = threads;
        if (!population.empty()) {
            const PopulationSpec pop = read_population_csv(population);
            config.population_size = pop.size();
            config.sample_size = pop.sample_size();
            config.pi = pop.pi();
            if (pop.has_y() && config.mode == CltMode::design) config.y = pop.y();
        }
        const SimulationReport report = clt_experiment(config);
        emit(out, dump(simulation_json(report)), os);
        if (!stats_csv.empty()) write_file_atomic(stats_csv, standardized_csv(report));
        return kExitOk;
    }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Ordered pivotal sampling: draws, exact laws, estimators and diagnostics", "opsample"};
    app.require_subcommand(1);
    SampleCommand sample;
    EnumerateCommand enumerate_cmd;
    EstimateCommand estimate;
    GenCommand gen;
    AssumptionsCommand assumptions;
    CheckBoundsCommand check_bounds;
    SimulateCommand simulate;
    sample.attach(app);
    enumerate_cmd.attach(app);
    estimate.attach(app);
    gen.attach(app);
    assumptions.attach(app);
    check_bounds.attach(app);
    simulate.attach(app);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitInvalid;
    }

    try {
        const std::string name = app.get_subcommands().front()->get_name();
        if (name == "sample") return sample(out);
        if (name == "enumerate") return enumerate_cmd(out);
        if (name == "estimate") return estimate(out);
        if (name == "gen") return gen(out);
        if (name == "assumptions") return assumptions(out);
        if (name == "check-bounds") return check_bounds(out);
        return simulate(out);
    } catch (const CheckFailed& e) {
        err << "check failed: " << e.what() << "\n";
        return kExitCheckFailed;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return kExitInvalid;
    } catch (const std::domain_error& e) {
        err << "error: " << e.what() << "\n";
        return kExitInvalid;
    } catch (const std::length_error& e) {
        err << "error: " << e.what() << "\n";
        return kExitInvalid;
    } catch (const std::out_of_range& e) {
        err << "error: " << e.what() << "\n";
        return kExitInvalid;
    } catch (const nlohmann::json::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitInvalid;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kExitInvalid;
    } catch (const std::exception& e) {
        err << "internal check failed: " << e.what() << "\n";
        return kExitCheckFailed;
    }
}

}  // namespace opsample::cli
