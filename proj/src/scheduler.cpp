#include "fedsim/scheduler.hpp"

#include <algorithm>
#include <cmath>

#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"

namespace fedsim::fed {

size_t selection_count(double fraction, size_t pool_size) {
    if (pool_size == 0) throw ConfigError("scheduler: empty client pool");
    auto k = static_cast<size_t>(std::ceil(fraction * static_cast<double>(pool_size)));
    return std::clamp<size_t>(k, 1, pool_size);
}

RandomScheduler::RandomScheduler(double fraction, uint64_t seed)
    : fraction_(fraction), seed_(seed) {
    if (fraction <= 0.0 || fraction > 1.0)
        throw ConfigError("scheduler: fraction must be in (0, 1]");
}

std::vector<uint32_t> RandomScheduler::select(const std::vector<uint32_t>& pool, uint64_t round) {
    const size_t k = selection_count(fraction_, pool.size());
    std::vector<uint32_t> shuffled = pool;
    rng::SplitMix64 g(rng::derive(seed_, rng::domain::scheduler, round));
    rng::shuffle(shuffled, g);
    shuffled.resize(k);
    std::sort(shuffled.begin(), shuffled.end());
    return shuffled;
}

RoundRobinScheduler::RoundRobinScheduler(double fraction) : fraction_(fraction) {
    if (fraction <= 0.0 || fraction > 1.0)
        throw ConfigError("scheduler: fraction must be in (0, 1]");
}

std::vector<uint32_t> RoundRobinScheduler::select(const std::vector<uint32_t>& pool,
                                                  uint64_t round) {
    const size_t n = pool.size();
    const size_t k = selection_count(fraction_, n);
    std::vector<uint32_t> out;
    out.reserve(k);
    const size_t start = (round * k) % n;
    for (size_t i = 0; i < k; ++i) out.push_back(pool[(start + i) % n]);
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace fedsim::fed
