#pragma once

#include <cstdint>
#include <memory>
#include <vector>

namespace fedsim::fed {

/// Picks the round's participants from the registered client pool. Pure in
/// (pool, round), so every execution mode sees identical selections.
class Scheduler {
public:
    virtual ~Scheduler() = default;
    /// pool is sorted ascending; the result is sorted ascending too.
    virtual std::vector<uint32_t> select(const std::vector<uint32_t>& pool, uint64_t round) = 0;
    /// True when every pool member must stay available (fraction 1.0); a
    /// client leaving mid-run then aborts the experiment instead of shrinking
    /// the pool.
    virtual bool requires_full_participation() const = 0;
};

/// Seeded uniform sample of ceil(fraction * pool size) clients.
class RandomScheduler : public Scheduler {
public:
    RandomScheduler(double fraction, uint64_t seed);
    std::vector<uint32_t> select(const std::vector<uint32_t>& pool, uint64_t round) override;
    bool requires_full_participation() const override { return fraction_ == 1.0; }

private:
    double fraction_;
    uint64_t seed_;
};

/// Deterministic rotation: round r takes k consecutive pool entries starting
/// at (r * k) mod n, wrapping. fraction .5 over {1,2,3,4} gives rounds
/// {1,2}, {3,4}, {1,2}, ...
class RoundRobinScheduler : public Scheduler {
public:
    explicit RoundRobinScheduler(double fraction);
    std::vector<uint32_t> select(const std::vector<uint32_t>& pool, uint64_t round) override;
    bool requires_full_participation() const override { return fraction_ == 1.0; }

private:
    double fraction_;
};

size_t selection_count(double fraction, size_t pool_size);

}  // namespace fedsim::fed
