#define DOCTEST_CONFIG_IMPROVE_SUCCESS_MESSAGES
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "fedsim/aggregate.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/scheduler.hpp"

using namespace fedsim;
using namespace fedsim::fed;
using learn::ParamVector;

namespace {

ParamVector vec2(double a, double b) {
    ParamVector p({{1, 2}});
    p.values = {a, b};
    return p;
}

/// The cohort frozen by the aggregation reference run: global [1, 2],
/// client 1 sends [0.5, 1] with n=2 tau=4, client 2 sends [2, 0] n=6 tau=2.
std::vector<UpdateRecord> frozen_cohort(uint64_t base_version) {
    UpdateRecord u1{1, base_version, vec2(0.5, 1.0), 2, 4, 10, {}};
    UpdateRecord u2{2, base_version, vec2(2.0, 0.0), 6, 2, 11, {}};
    return {u1, u2};
}

std::vector<UpdateRecord> random_cohort(size_t n, rng::SplitMix64& g) {
    std::vector<UpdateRecord> out;
    for (size_t i = 0; i < n; ++i) {
        UpdateRecord u;
        u.client_id = static_cast<uint32_t>(i + 1);
        u.base_version = 3;
        u.params = vec2(g.next_normal(), g.next_normal());
        u.n_samples = 1 + static_cast<uint32_t>(g.next_below(100));
        u.tau = 1 + static_cast<uint32_t>(g.next_below(8));
        u.recv_time = g.next_below(1000);
        out.push_back(std::move(u));
    }
    return out;
}

}  // namespace

TEST_CASE("selection_count rounds and clamps") {
    CHECK(selection_count(0.5, 4) == 2);
    CHECK(selection_count(1.0, 4) == 4);
    CHECK(selection_count(0.1, 4) == 1);  // ceil(0.4)
    CHECK(selection_count(0.3, 10) == 3);
    CHECK(selection_count(0.26, 10) == 3);  // ceil(2.6)
    CHECK(selection_count(0.25, 8) == 2);   // exact product stays exact
    CHECK(selection_count(1.0, 1) == 1);
    CHECK_THROWS_AS(selection_count(0.5, 0), ConfigError);
}

TEST_CASE("round robin: the frozen rotation example") {
    RoundRobinScheduler s(0.5);
    const std::vector<uint32_t> pool = {1, 2, 3, 4};
    CHECK(s.select(pool, 0) == std::vector<uint32_t>{1, 2});
    CHECK(s.select(pool, 1) == std::vector<uint32_t>{3, 4});
    CHECK(s.select(pool, 2) == std::vector<uint32_t>{1, 2});
    CHECK(s.select(pool, 3) == std::vector<uint32_t>{3, 4});
}

TEST_CASE("round robin wraps an odd pool") {
    RoundRobinScheduler s(0.4);  // k = 2 over 5 clients
    const std::vector<uint32_t> pool = {1, 2, 3, 4, 5};
    CHECK(s.select(pool, 0) == std::vector<uint32_t>{1, 2});
    CHECK(s.select(pool, 1) == std::vector<uint32_t>{3, 4});
    CHECK(s.select(pool, 2) == std::vector<uint32_t>{1, 5});  // wrapped, sorted
    CHECK(s.select(pool, 3) == std::vector<uint32_t>{2, 3});
    CHECK(s.select(pool, 4) == std::vector<uint32_t>{4, 5});
    CHECK(s.select(pool, 5) == s.select(pool, 0));  // full cycle
}

TEST_CASE("random scheduler: deterministic, sorted, inside the pool") {
    RandomScheduler s(0.5, 42);
    const std::vector<uint32_t> pool = {3, 7, 11, 15, 19, 23};
    bool varied = false;
    std::vector<uint32_t> first;
    for (uint64_t r = 0; r < 10; ++r) {
        auto sel = s.select(pool, r);
        CHECK(sel.size() == 3);
        CHECK(std::is_sorted(sel.begin(), sel.end()));
        for (uint32_t c : sel) CHECK(std::count(pool.begin(), pool.end(), c) == 1);
        CHECK(std::adjacent_find(sel.begin(), sel.end()) == sel.end());
        CHECK(s.select(pool, r) == sel);  // pure in (pool, round)
        if (r == 0) first = sel;
        varied = varied || sel != first;
    }
    CHECK(varied);

    RandomScheduler other(0.5, 43);
    bool seed_matters = false;
    for (uint64_t r = 0; r < 10; ++r)
        seed_matters = seed_matters || other.select(pool, r) != s.select(pool, r);
    CHECK(seed_matters);

    RandomScheduler all(1.0, 0);
    CHECK(all.select(pool, 5) == pool);
}

TEST_CASE("scheduler rejects bad fractions") {
    CHECK_THROWS_AS(RandomScheduler(0.0, 1), ConfigError);
    CHECK_THROWS_AS(RandomScheduler(1.5, 1), ConfigError);
    CHECK_THROWS_AS(RoundRobinScheduler(-0.1), ConfigError);
}

TEST_CASE("fedavg: frozen reference values") {
    FedavgAggregator agg;
    auto out = agg.reduce(vec2(1.0, 2.0), 5, frozen_cohort(5));
    CHECK(out.values[0] == 1.625);
    CHECK(out.values[1] == 0.25);
    CHECK(agg.kind() == AggKind::sync);
}

TEST_CASE("fedavg: arrival order never changes a bit") {
    FedavgAggregator agg;
    rng::SplitMix64 g(8);
    auto cohort = random_cohort(6, g);
    auto base = vec2(0.1, -0.4);
    auto expect = agg.reduce(base, 3, cohort);
    for (int trial = 0; trial < 10; ++trial) {
        rng::shuffle(cohort, g);
        CHECK(agg.reduce(base, 3, cohort) == expect);
    }
}

TEST_CASE("fedavg of identical params is the identity") {
    FedavgAggregator agg;
    auto cohort = frozen_cohort(5);
    cohort[0].params = vec2(3.25, -1.5);
    cohort[1].params = vec2(3.25, -1.5);
    auto out = agg.reduce(vec2(0, 0), 5, cohort);  // weights 0.25/0.75: exact
    CHECK(out == vec2(3.25, -1.5));
}

TEST_CASE("sync aggregators reject bad cohorts") {
    FedavgAggregator agg;
    auto global = vec2(1.0, 2.0);

    CHECK_THROWS_AS(agg.reduce(global, 5, {}), RuntimeAbort);

    auto stale = frozen_cohort(5);
    stale[1].base_version = 4;
    try {
        agg.reduce(global, 5, stale);
        FAIL("expected RuntimeAbort");
    } catch (const RuntimeAbort& e) {
        CHECK(std::string(e.what()).find("stale") != std::string::npos);
        CHECK(std::string(e.what()).find("client 2") != std::string::npos);
    }

    auto dup = frozen_cohort(5);
    dup[1].client_id = 1;
    CHECK_THROWS_AS(agg.reduce(global, 5, dup), RuntimeAbort);

    auto shapes = frozen_cohort(5);
    shapes[0].params = ParamVector({{1, 3}});
    CHECK_THROWS_AS(agg.reduce(global, 5, shapes), RuntimeAbort);

    auto zero = frozen_cohort(5);
    zero[0].n_samples = 0;
    CHECK_THROWS_AS(agg.reduce(global, 5, zero), RuntimeAbort);
}

TEST_CASE("fednova: frozen reference values") {
    FednovaAggregator agg;
    auto out = agg.reduce(vec2(1.0, 2.0), 5, frozen_cohort(5));
    CHECK(out.values[0] == 1.859375);
    CHECK(out.values[1] == -0.03125);

    auto no_steps = frozen_cohort(5);
    no_steps[0].tau = 0;
    CHECK_THROWS_AS(agg.reduce(vec2(1.0, 2.0), 5, no_steps), RuntimeAbort);
}

TEST_CASE("fednova equals fedavg when every tau is 1") {
    FednovaAggregator nova;
    FedavgAggregator avg;
    rng::SplitMix64 g(12);
    auto cohort = random_cohort(4, g);
    for (auto& u : cohort) u.tau = 1;
    auto global = vec2(g.next_normal(), g.next_normal());
    auto a = nova.reduce(global, 3, cohort);
    auto b = avg.reduce(global, 3, cohort);
    for (size_t j = 0; j < a.size(); ++j)
        CHECK(a.values[j] == doctest::Approx(b.values[j]).epsilon(1e-12));
}

TEST_CASE("fedadam: frozen two-round trajectory with carried state") {
    FedadamAggregator agg(0.9, 0.99, 0.1, 1e-3);
    auto g1 = agg.reduce(vec2(1.0, 2.0), 5, frozen_cohort(5));
    CHECK(g1.values[0] == 1.0984251968503935);
    CHECK(g1.values[1] == 1.9005681818181819);
    // Same cohort re-sent against the new global; m and v carry over.
    auto c2 = frozen_cohort(6);
    auto g2 = agg.reduce(g1, 6, c2);
    CHECK(g2.values[0] == 1.2304563791374517);
    CHECK(g2.values[1] == 1.7666837737692518);

    CHECK_THROWS_AS(FedadamAggregator(1.0, 0.99, 0.1, 1e-3), ConfigError);
    CHECK_THROWS_AS(FedadamAggregator(0.9, 0.99, 0.1, 0.0), ConfigError);
}

TEST_CASE("fedasync: frozen staleness damping") {
    FedasyncAggregator agg(0.6, 0.5);
    CHECK(agg.kind() == AggKind::async);
    UpdateRecord u{2, 2, vec2(2.0, 0.0), 6, 2, 20, {}};
    // global version 5, base 2: s = 3, alpha_eff = 0.6 / sqrt(4) = 0.3.
    auto out = agg.merge_async(vec2(1.0, 2.0), 5, u);
    CHECK(out.values[0] == 1.2999999999999998);
    CHECK(out.values[1] == 1.4);

    // Fresh update with alpha 1 replaces the global entirely.
    FedasyncAggregator take_all(1.0, 0.0);
    UpdateRecord fresh{1, 7, vec2(-3.0, 4.0), 5, 1, 21, {}};
    CHECK(take_all.merge_async(vec2(1.0, 2.0), 7, fresh) == vec2(-3.0, 4.0));

    UpdateRecord future{1, 9, vec2(0.0, 0.0), 5, 1, 22, {}};
    CHECK_THROWS_AS(agg.merge_async(vec2(1.0, 2.0), 7, future), RuntimeAbort);
    CHECK_THROWS_AS(FedasyncAggregator(0.0, 0.5), ConfigError);
    CHECK_THROWS_AS(FedasyncAggregator(0.5, -1.0), ConfigError);
}

TEST_CASE("buffered: stale tolerated, duplicates allowed, weighted like fedavg") {
    BufferedAggregator agg(2);
    CHECK(agg.kind() == AggKind::buffered);
    CHECK(agg.buffer_size() == 2);

    auto mixed = frozen_cohort(5);
    mixed[0].base_version = 1;  // stale is fine here
    auto out = agg.reduce(vec2(1.0, 2.0), 5, mixed);
    CHECK(out.values[0] == 1.625);
    CHECK(out.values[1] == 0.25);

    auto dup = frozen_cohort(5);
    dup[1].client_id = 1;  // same client twice in the buffer
    CHECK_NOTHROW(agg.reduce(vec2(1.0, 2.0), 5, dup));
    CHECK_THROWS_AS(BufferedAggregator(0), ConfigError);
}

TEST_CASE("pfedme server reduction mixes the fedavg mean into the global") {
    // beta = 1 is bitwise fedavg.
    PfedmeAggregator full(1.0);
    auto out = full.reduce(vec2(1.0, 2.0), 5, frozen_cohort(5));
    CHECK(out.values[0] == 1.625);
    CHECK(out.values[1] == 0.25);

    // beta = 0.5 splits the move: 0.5*global + 0.5*mean, frozen by hand.
    PfedmeAggregator half(0.5);
    auto mixed = half.reduce(vec2(1.0, 2.0), 5, frozen_cohort(5));
    CHECK(mixed.values[0] == 0.5 * 1.0 + 0.5 * 1.625);
    CHECK(mixed.values[1] == 0.5 * 2.0 + 0.5 * 0.25);

    CHECK_THROWS_AS(PfedmeAggregator(0.0), ConfigError);
    CHECK_THROWS_AS(PfedmeAggregator(1.5), ConfigError);
}

TEST_CASE("base aggregator stubs refuse the wrong family") {
    FedavgAggregator avg;
    UpdateRecord u{1, 1, vec2(0, 0), 1, 1, 0, {}};
    CHECK_THROWS_AS(avg.merge_async(vec2(0, 0), 1, u), RuntimeAbort);
    FedasyncAggregator async_agg(0.5, 0.5);
    CHECK_THROWS_AS(async_agg.reduce(vec2(0, 0), 1, {u}), RuntimeAbort);
}
