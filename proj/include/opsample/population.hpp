#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "opsample/numeric.hpp"

namespace opsample {

/// Index of a population unit (0-based, population order).
using Unit = std::size_t;

/// Marker for the zero-probability units k_0 and k_n that close the first
/// and last microstrata.
inline constexpr Unit kPhantom = std::numeric_limits<Unit>::max();

/// Absolute tolerance on the integrality of the total inclusion probability.
inline constexpr double kSizeTolerance = 1e-9;

/// A finite population with prescribed first-order inclusion probabilities
/// and, optionally, values of the study variable.
class PopulationSpec {
public:
    PopulationSpec(std::vector<std::string> ids, std::vector<double> pi,
                   std::optional<std::vector<double>> y = std::nullopt)
        : ids_(std::move(ids)), pi_(std::move(pi)), y_(std::move(y)) {
        validate();
    }

    /// Population with ids "1".."N".
    static PopulationSpec from_probabilities(std::vector<double> pi,
                                             std::optional<std::vector<double>> y = std::nullopt) {
        std::vector<std::string> ids;
        ids.reserve(pi.size());
        for (std::size_t k = 0; k < pi.size(); ++k) ids.push_back(std::to_string(k + 1));
        return PopulationSpec(std::move(ids), std::move(pi), std::move(y));
    }

    [[nodiscard]] std::size_t size() const noexcept { return pi_.size(); }
    [[nodiscard]] std::size_t sample_size() const noexcept { return n_; }
    [[nodiscard]] const std::vector<std::string>& ids() const noexcept { return ids_; }
    [[nodiscard]] const std::vector<double>& pi() const noexcept { return pi_; }
    [[nodiscard]] bool has_y() const noexcept { return y_.has_value(); }
    [[nodiscard]] const std::vector<double>& y() const {
        if (!y_) throw std::invalid_argument("population has no y column");
        return *y_;
    }
    [[nodiscard]] double pi_max() const noexcept { return pi_max_; }
    /// True when some unit has pi = 1 (selected with certainty).
    [[nodiscard]] bool has_certainty_units() const noexcept { return pi_max_ >= 1.0; }

    [[nodiscard]] double total() const {
        CompensatedSum s;
        for (double v : y()) s += v;
        return s.value();
    }

    [[nodiscard]] PopulationSpec with_y(std::vector<double> y) const {
        return PopulationSpec(ids_, pi_, std::move(y));
    }

    /// Position of the unit with the given id.
    [[nodiscard]] Unit index_of(const std::string& id) const {
        const auto it = std::find(ids_.begin(), ids_.end(), id);
        if (it == ids_.end()) throw std::invalid_argument("unknown unit id '" + id + "'");
        return static_cast<Unit>(it - ids_.begin());
    }

    friend bool operator==(const PopulationSpec&, const PopulationSpec&) = default;

private:
    void validate() {
        if (pi_.empty()) throw std::invalid_argument("empty population");
        if (ids_.size() != pi_.size()) {
            throw std::invalid_argument("ids and pi have different lengths");
        }
        if (y_ && y_->size() != pi_.size()) {
            throw std::invalid_argument("y and pi have different lengths");
        }
        std::unordered_set<std::string> seen;
        for (const auto& id : ids_) {
            if (!seen.insert(id).second) throw std::invalid_argument("duplicate unit id '" + id + "'");
        }
        CompensatedSum total;
        pi_max_ = 0.0;
        for (std::size_t k = 0; k < pi_.size(); ++k) {
            const double p = pi_[k];
            if (!(p > 0.0 && p <= 1.0)) {
                std::ostringstream msg;
                msg << "inclusion probability of unit '" << ids_[k] << "' is " << p
                    << ", outside (0, 1]";
                throw std::invalid_argument(msg.str());
            }
            total += p;
            pi_max_ = std::max(pi_max_, p);
        }
        const double sum = total.value();
        const double rounded = std::round(sum);
        if (rounded < 1.0 || std::abs(sum - rounded) > kSizeTolerance) {
            std::ostringstream msg;
            msg.precision(17);
            msg << "inclusion probabilities sum to " << sum
                << ", which is not a positive integer (deviation " << sum - rounded << ")";
            throw std::invalid_argument(msg.str());
        }
        n_ = static_cast<std::size_t>(rounded);
        if (y_) {
            for (double v : *y_) {
                if (!std::isfinite(v)) throw std::invalid_argument("non-finite y value");
            }
        }
    }

    std::vector<std::string> ids_;
    std::vector<double> pi_;
    std::optional<std::vector<double>> y_;
    std::size_t n_ = 0;
    double pi_max_ = 0.0;
};

/// Check-values y_k / pi_k.
inline std::vector<double> check_values(const std::vector<double>& y, const std::vector<double>& pi) {
    if (y.size() != pi.size()) throw std::invalid_argument("y and pi have different lengths");
    std::vector<double> out(y.size());
    for (std::size_t k = 0; k < y.size(); ++k) out[k] = y[k] / pi[k];
    return out;
}

}  // namespace opsample
