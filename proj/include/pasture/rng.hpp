#pragma once

#include <cstdint>
#include <random>

namespace pasture {

// Deterministic random stream. Every stochastic operation takes an explicit
// Rng; reruns with the same seed are byte-identical. Gaussian draws use
// Box-Muller on the raw 64-bit stream instead of std::normal_distribution,
// whose output is implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1)
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // standard normal, two uniforms per draw
    double gaussian();

    double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

    // uniform integer in [0, n), unbiased
    std::uint64_t below(std::uint64_t n);

private:
    std::mt19937_64 engine_;
};

// splitmix64 finalizer; decorrelates derived stream seeds
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t index);

inline Rng stream_rng(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0) {
    return Rng(mix_seed(seed, tag, index));
}

// One tag per stochastic stage so parallel per-index streams stay independent
// of scheduling order.
namespace stream {
inline constexpr std::uint64_t gp_weights = 1;
inline constexpr std::uint64_t map_noise = 2;
inline constexpr std::uint64_t point_cloud = 3;
inline constexpr std::uint64_t dropout_mask = 4;
inline constexpr std::uint64_t param_init = 5;
inline constexpr std::uint64_t shuffle = 6;
inline constexpr std::uint64_t trial = 7;
inline constexpr std::uint64_t measurement = 8;
inline constexpr std::uint64_t policy = 9;
}  // namespace stream

}  // namespace pasture
