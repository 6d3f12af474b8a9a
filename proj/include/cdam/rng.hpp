#pragma once

#include <cstdint>

namespace cdam {

// Counter-based generator. Output k (k = 1, 2, ...) is
//   splitmix64_mix(seed + k * 0x9E3779B97F4A7C15)
// so the stream depends only on the seed and the number of draws, on every
// platform. Normals use Box-Muller on 53-bit uniforms, consuming two words per
// pair and caching the second variate.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed) noexcept : seed_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }

    std::uint64_t next_u64() noexcept;

    // Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept;

    // Uniform integer in [0, bound). Rejection sampling, no modulo bias.
    std::uint64_t uniform_below(std::uint64_t bound) noexcept;

    double normal() noexcept;

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t splitmix64_mix(std::uint64_t z) noexcept;

// Split rule for concurrent work: task k of a job seeded with `seed` uses
//   derive_seed(seed, k) = splitmix64_mix(seed ^ splitmix64_mix(k + 0xD1B54A32D192ED03))
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t task_index) noexcept;

}  // namespace cdam
