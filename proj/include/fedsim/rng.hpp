#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace fedsim::rng {

/// SplitMix64 (Vigna's public-domain counter-based generator). Every seeded
/// behavior in the framework flows through this generator rather than the
/// standard library distributions, so partitions, shuffles and model
/// initialization reproduce bit-for-bit across platforms and runs.
class SplitMix64 {
public:
    explicit SplitMix64(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1), 53 random bits.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Unbiased uniform integer in [0, bound). bound must be nonzero.
    uint64_t next_below(uint64_t bound);

    /// Standard normal via Box-Muller (pair cached).
    double next_normal();

    /// Gamma(shape, 1) via Marsaglia-Tsang squeeze; shape > 0.
    double next_gamma(double shape);

private:
    uint64_t state_;
    double spare_normal_ = 0.0;
    bool has_spare_ = false;
};

/// SplitMix64 finalizer, used to derive independent seed streams.
inline uint64_t mix(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Derive a child seed from a parent seed and a stream tag. Chained calls
/// give per-(domain, id, round) streams that never collide in practice.
inline uint64_t derive(uint64_t seed, uint64_t tag) {
    return mix(seed + 0x9E3779B97F4A7C15ULL * (tag + 1));
}
inline uint64_t derive(uint64_t seed, uint64_t a, uint64_t b) { return derive(derive(seed, a), b); }
inline uint64_t derive(uint64_t seed, uint64_t a, uint64_t b, uint64_t c) {
    return derive(derive(seed, a, b), c);
}

// Stream domain tags. Each seeded subsystem owns one.
namespace domain {
constexpr uint64_t dataset = 1;
constexpr uint64_t partition = 2;
constexpr uint64_t test_split = 3;
constexpr uint64_t init_params = 4;
constexpr uint64_t scheduler = 5;
constexpr uint64_t client_train = 6;
}  // namespace domain

/// In-place Fisher-Yates shuffle driven by SplitMix64.
template <typename T>
void shuffle(std::vector<T>& v, SplitMix64& g) {
    for (size_t i = v.size(); i > 1; --i) {
        size_t j = static_cast<size_t>(g.next_below(i));
        std::swap(v[i - 1], v[j]);
    }
}

/// [0, n) shuffled.
std::vector<uint32_t> shuffled_indices(size_t n, SplitMix64& g);

}  // namespace fedsim::rng
