#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <numbers>
#include <random>

namespace opsample {

/// Anything that yields uniforms in [0, 1) when called.
template <class G>
concept UniformSource = requires(G& g) {
    { g() } -> std::convertible_to<double>;
};

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Seed for stream `index` under a master seed.
///
/// Split rule: mix64(master + (index + 1) * 0x9E3779B97F4A7C15). Streams with
/// distinct indices are decorrelated by the finalizer, so replicates can run
/// in any order on any number of threads.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) noexcept {
    return mix64(master + (index + 1) * 0x9E3779B97F4A7C15ULL);
}

/// Uniform stream backed by mt19937_64. The engine's output sequence is fixed
/// by the standard and the conversion to double is done by hand, so a given
/// seed produces the same uniforms on every conforming platform.
class UniformStream {
public:
    explicit UniformStream(std::uint64_t seed) : engine_(seed), seed_(seed) {}

    /// 53-bit uniform in [0, 1).
    double operator()() noexcept {
        ++consumed_;
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
    [[nodiscard]] std::uint64_t consumed() const noexcept { return consumed_; }

private:
    std::mt19937_64 engine_;
    std::uint64_t seed_;
    std::uint64_t consumed_ = 0;
};

/// Box-Muller standard normals drawn from a UniformSource. Keeps the second
/// variate of each pair for the next call.
class NormalSampler {
public:
    template <UniformSource G>
    double operator()(G& uniforms) {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - static_cast<double>(uniforms());  // (0, 1]
        const double u2 = static_cast<double>(uniforms());
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

private:
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace opsample
