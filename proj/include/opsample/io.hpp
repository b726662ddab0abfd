#pragma once

#include <charconv>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "json.hpp"

#include "opsample/diagnostics.hpp"
#include "opsample/estimation.hpp"
#include "opsample/microstrata.hpp"
#include "opsample/model.hpp"
#include "opsample/numeric.hpp"
#include "opsample/oracle.hpp"
#include "opsample/population.hpp"
#include "opsample/sampler.hpp"
#include "opsample/simulation.hpp"

namespace opsample {

using json = nlohmann::ordered_json;

/// Malformed tabular input. Rows and columns are 1-based; row 1 is the header.
class CsvError : public std::invalid_argument {
public:
    CsvError(std::string source, std::size_t row, std::size_t column, const std::string& what)
        : std::invalid_argument(source + ": row " + std::to_string(row) +
                                (column > 0 ? ", column " + std::to_string(column) : std::string()) + ": " + what),
          row_(row),
          column_(column) {}
    [[nodiscard]] std::size_t row() const noexcept { return row_; }
    [[nodiscard]] std::size_t column() const noexcept { return column_; }

private:
    std::size_t row_;
    std::size_t column_;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string> split_row(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        out.emplace_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_of;  // file line of each row
};

inline CsvTable read_table(std::istream& in, const std::string& source) {
    CsvTable table;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string_view view(line);
        if (line_no == 1 && view.starts_with("\xEF\xBB\xBF")) view.remove_prefix(3);
        if (trim(view).empty()) continue;
        if (view.find('"') != std::string_view::npos) {
            throw CsvError(source, line_no, 0, "quoted fields are not supported");
        }
        auto cells = split_row(view);
        if (table.header.empty()) {
            table.header = std::move(cells);
            continue;
        }
        if (cells.size() != table.header.size()) {
            throw CsvError(source, line_no, 0,
                           "expected " + std::to_string(table.header.size()) + " fields, found " +
                               std::to_string(cells.size()));
        }
        table.rows.push_back(std::move(cells));
        table.line_of.push_back(line_no);
    }
    if (table.header.empty()) throw CsvError(source, 1, 0, "missing header");
    return table;
}

inline double parse_real(const std::string& text, const std::string& source, std::size_t row, std::size_t col) {
    double value = 0.0;
    const char* first = text.data();
    const char* last = first + text.size();
    if (first != last && *first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last || text.empty()) {
        throw CsvError(source, row, col, "'" + text + "' is not a number");
    }
    if (!std::isfinite(value)) throw CsvError(source, row, col, "'" + text + "' is not finite");
    return value;
}

inline std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open '" + path.string() + "'");
    return in;
}

}  // namespace detail

/// Parses a population table with header `id,pi` or `id,pi,y`.
inline PopulationSpec parse_population_csv(std::istream& in, const std::string& source = "population") {
    const detail::CsvTable table = detail::read_table(in, source);
    const auto& h = table.header;
    const bool with_y = h.size() == 3 && h[2] == "y";
    if (!((h.size() == 2 || with_y) && h[0] == "id" && h[1] == "pi")) {
        throw CsvError(source, 1, 0, "header must be id,pi or id,pi,y");
    }
    std::vector<std::string> ids;
    std::vector<double> pi;
    std::vector<double> y;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const std::size_t line = table.line_of[r];
        if (row[0].empty()) throw CsvError(source, line, 1, "empty id");
        ids.push_back(row[0]);
        pi.push_back(detail::parse_real(row[1], source, line, 2));
        if (with_y) y.push_back(detail::parse_real(row[2], source, line, 3));
    }
    if (ids.empty()) throw CsvError(source, 2, 0, "no units");
    std::optional<std::vector<double>> ycol;
    if (with_y) ycol = std::move(y);
    return PopulationSpec(std::move(ids), std::move(pi), std::move(ycol));
}

inline PopulationSpec read_population_csv(const std::filesystem::path& path) {
    std::ifstream in = detail::open_input(path);
    return parse_population_csv(in, path.string());
}

inline std::string population_csv(const PopulationSpec& pop) {
    std::string out = pop.has_y() ? "id,pi,y\n" : "id,pi\n";
    for (std::size_t k = 0; k < pop.size(); ++k) {
        out += pop.ids()[k];
        out += ',';
        out += format_number(pop.pi()[k]);
        if (pop.has_y()) {
            out += ',';
            out += format_number(pop.y()[k]);
        }
        out += '\n';
    }
    return out;
}

/// Writes through a temporary file in the same directory and renames it
/// over the target, so readers never see a partial file.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::invalid_argument("cannot write '" + path.string() + "'");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) {
            std::error_code ignored;
            std::filesystem::remove(tmp, ignored);
            throw std::runtime_error("write to '" + tmp.string() + "' failed");
        }
    }
    std::filesystem::rename(tmp, path);
}

/// Draws from a `draw_id,unit_id` table, keyed by draw id in file order.
struct SampleTable {
    std::vector<std::uint64_t> draw_ids;
    std::map<std::uint64_t, std::vector<Unit>> draws;
};

inline SampleTable parse_sample_csv(std::istream& in, const PopulationSpec& pop, const std::string& source = "sample") {
    const detail::CsvTable table = detail::read_table(in, source);
    if (table.header != std::vector<std::string>{"draw_id", "unit_id"}) {
        throw CsvError(source, 1, 0, "header must be draw_id,unit_id");
    }
    std::map<std::string, Unit> index;
    for (std::size_t k = 0; k < pop.size(); ++k) index.emplace(pop.ids()[k], k);
    SampleTable out;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const std::size_t line = table.line_of[r];
        std::uint64_t id = 0;
        const auto [ptr, ec] = std::from_chars(row[0].data(), row[0].data() + row[0].size(), id);
        if (ec != std::errc{} || ptr != row[0].data() + row[0].size() || row[0].empty()) {
            throw CsvError(source, line, 1, "'" + row[0] + "' is not a draw id");
        }
        const auto it = index.find(row[1]);
        if (it == index.end()) throw CsvError(source, line, 2, "unknown unit id '" + row[1] + "'");
        auto [slot, fresh] = out.draws.try_emplace(id);
        if (fresh) out.draw_ids.push_back(id);
        slot->second.push_back(it->second);
    }
    if (out.draws.empty()) throw CsvError(source, 2, 0, "no sampled units");
    return out;
}

inline SampleTable read_sample_csv(const std::filesystem::path& path, const PopulationSpec& pop) {
    std::ifstream in = detail::open_input(path);
    return parse_sample_csv(in, pop, path.string());
}

// JSON views --------------------------------------------------------------

namespace detail {

inline json unit_id(const PopulationSpec& pop, Unit k) {
    return k == kPhantom ? json(nullptr) : json(pop.ids()[k]);
}

template <class T>
json optional_value(const std::optional<T>& v) {
    return v ? json(*v) : json(nullptr);
}

}  // namespace detail

/// Cross-border positions are 1-based; the phantom ends k_0 and k_n are
/// written as 0 and N + 1.
inline json decomposition_json(const PopulationSpec& pop, const Decomposition& dec) {
    const std::size_t N = dec.population_size();
    const std::size_t n = dec.sample_size();
    json crossborder = json::array();
    json a = json::array();
    json b = json::array();
    for (std::size_t i = 0; i <= n; ++i) {
        const Unit k = dec.crossborder(i);
        crossborder.push_back(k == kPhantom ? (i == 0 ? 0 : N + 1) : k + 1);
        a.push_back(dec.a(i));
        b.push_back(dec.b(i));
    }
    json strata = json::array();
    for (std::size_t i = 1; i <= n; ++i) {
        json members = json::array();
        for (const auto& m : dec.members(i)) {
            members.push_back({{"id", detail::unit_id(pop, m.unit)}, {"alpha", m.alpha}});
        }
        strata.push_back({{"index", i}, {"members", std::move(members)}});
    }
    return {{"N", N},
            {"n", n},
            {"V", dec.cumulative()},
            {"crossborder", std::move(crossborder)},
            {"a", std::move(a)},
            {"b", std::move(b)},
            {"strata", std::move(strata)}};
}

inline json trace_json(const PopulationSpec& pop, const SampleDraw& d) {
    json steps = json::array();
    for (std::size_t i = 0; i < d.trace.size(); ++i) {
        const TraceStep& s = d.trace[i];
        steps.push_back({{"stratum", i + 1},
                         {"carried", detail::unit_id(pop, s.carried)},
                         {"pick", detail::unit_id(pop, s.pick)},
                         {"selected", detail::unit_id(pop, s.selected)},
                         {"loser", detail::unit_id(pop, s.loser)}});
    }
    return {{"stream", d.stream_id}, {"steps", std::move(steps)}};
}

inline json distribution_json(const PopulationSpec& pop, const ExactDistribution& dist,
                              const std::optional<DesignVariance>& variance) {
    json outcomes = json::array();
    for (const auto& [units, p] : dist.outcomes) {
        json ids = json::array();
        for (Unit k : units) ids.push_back(pop.ids()[k]);
        outcomes.push_back({{"units", std::move(ids)}, {"p", p}});
    }
    json pi2 = json::array();
    for (std::size_t k = 0; k < dist.pi.size(); ++k) {
        json row = json::array();
        for (std::size_t l = 0; l < dist.pi.size(); ++l) row.push_back(dist.second_order(k, l));
        pi2.push_back(std::move(row));
    }
    json out = {{"ids", pop.ids()},
                {"leaf_count", dist.leaf_count},
                {"outcomes", std::move(outcomes)},
                {"pi1", dist.first_order},
                {"pi2", std::move(pi2)}};
    if (variance) {
        out["variance"] = {{"value", variance->value()},
                           {"moment_form", variance->moment_form},
                           {"quadratic_form", variance->quadratic_form}};
    } else {
        out["variance"] = nullptr;
    }
    return out;
}

/// Reads the `pi2` matrix written by distribution_json, reordered to the
/// population's unit order through the `ids` list.
inline Matrix joint_probabilities_from_json(const json& doc, const PopulationSpec& pop) {
    if (!doc.contains("ids") || !doc.contains("pi2")) {
        throw std::invalid_argument("joint probability file needs 'ids' and 'pi2'");
    }
    const auto ids = doc.at("ids").get<std::vector<std::string>>();
    const auto& rows = doc.at("pi2");
    if (ids.size() != pop.size() || rows.size() != pop.size()) {
        throw std::invalid_argument("joint probability file does not match the population size");
    }
    std::vector<Unit> position(ids.size());
    for (std::size_t k = 0; k < ids.size(); ++k) position[k] = pop.index_of(ids[k]);
    Matrix m(pop.size());
    for (std::size_t k = 0; k < ids.size(); ++k) {
        if (rows[k].size() != ids.size()) throw std::invalid_argument("pi2 must be square");
        for (std::size_t l = 0; l < ids.size(); ++l) m(position[k], position[l]) = rows[k][l].get<double>();
    }
    return m;
}

inline json estimator_json(const EstimatorReport& r) {
    return {{"ht", r.ht},
            {"variance_syg", detail::optional_value(r.variance_syg)},
            {"variance_model", detail::optional_value(r.variance_model)},
            {"ci_low", r.ci_low},
            {"ci_high", r.ci_high},
            {"alpha", r.alpha},
            {"ci_variance", r.ci_variance}};
}

inline json rated_json(const std::optional<RatedStatistic>& s) {
    if (!s) return nullptr;
    return {{"value", s->value}, {"rate", s->rate}, {"ratio", s->ratio}};
}

inline json assumptions_json(const AssumptionReport& r) {
    return {{"pi_max", r.pi_max},
            {"certainty_units", r.certainty_units},
            {"fourth_moment", rated_json(r.fourth_moment)},
            {"dispersion", rated_json(r.dispersion)},
            {"model_fourth_moment", rated_json(r.model_fourth_moment)},
            {"model_dispersion", rated_json(r.model_dispersion)},
            {"dependence_squares", rated_json(r.dependence_squares)},
            {"dependence_triples", rated_json(r.dependence_triples)},
            {"dependence_quadruples", rated_json(r.dependence_quadruples)}};
}

inline json bounds_json(const std::vector<BoundCheck>& checks) {
    json out = json::array();
    for (const auto& c : checks) {
        out.push_back({{"name", c.name}, {"lhs", c.lhs}, {"rhs", c.rhs}, {"holds", c.holds}, {"slack", c.slack}});
    }
    return out;
}

/// The standardized statistics go to a separate CSV; the report keeps only
/// their summary.
inline json simulation_json(const SimulationReport& r) {
    json out = {{"mode", mode_name(r.mode)},
                {"N", r.population_size},
                {"n", r.sample_size},
                {"replicates", r.replicates},
                {"seed", r.seed},
                {"alpha", r.alpha},
                {"kernel", r.kernel},
                {"ks_stat", r.ks_stat},
                {"ks_critical", r.ks_critical},
                {"coverage", r.coverage},
                {"variance_used", r.variance_used},
                {"variance", r.variance},
                {"pilot_replicates", r.pilot_replicates},
                {"condition_a", r.condition_a},
                {"condition_b", r.condition_b},
                {"model_variance_mean", detail::optional_value(r.model_variance_mean)},
                {"model_variance_se", detail::optional_value(r.model_variance_se)}};
    return out;
}

inline std::string standardized_csv(const SimulationReport& r) {
    std::string out = "replicate,z\n";
    for (std::size_t i = 0; i < r.standardized.size(); ++i) {
        out += std::to_string(i + 1);
        out += ',';
        out += format_number(r.standardized[i]);
        out += '\n';
    }
    return out;
}

inline std::string dump(const json& doc) { return doc.dump(2) + "\n"; }

}  // namespace opsample
