#include "fedsim/rng.hpp"

#include <cassert>
#include <numeric>

namespace fedsim::rng {

uint64_t SplitMix64::next_below(uint64_t bound) {
    assert(bound > 0);
    const uint64_t threshold = (0 - bound) % bound;
    for (;;) {
        uint64_t r = next_u64();
        if (r >= threshold) return r % bound;
    }
}

double SplitMix64::next_normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_normal_;
    }
    // u1 in (0, 1] so the log is finite.
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    double u2 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * u2;
    spare_normal_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

double SplitMix64::next_gamma(double shape) {
    assert(shape > 0.0);
    if (shape < 1.0) {
        // Boost to shape+1 and scale back (Marsaglia-Tsang appendix).
        double u = next_double();
        while (u == 0.0) u = next_double();
        return next_gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x = next_normal();
        double t = 1.0 + c * x;
        if (t <= 0.0) continue;
        double v = t * t * t;
        double u = next_double();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

std::vector<uint32_t> shuffled_indices(size_t n, SplitMix64& g) {
    std::vector<uint32_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0u);
    shuffle(idx, g);
    return idx;
}

}  // namespace fedsim::rng
