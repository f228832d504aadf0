#include "fedsim/assemble.hpp"

#include <algorithm>
#include <numeric>

#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"

namespace fedsim::cfg {

ExperimentPlan assemble(const ExperimentConfig& cfg, const Registry& reg) {
    ExperimentPlan plan;
    plan.cfg = cfg;
    BuildContext ctx{cfg.seed, 0, 0};

    // Benchmark: dataset, held-out split, partition of the training part.
    plan.dataset = reg.dataset.make(cfg.dataset.type, cfg.dataset.params, ctx);
    const size_t n = plan.dataset.n_samples();
    const size_t n_test = n / 10;
    if (n_test == 0)
        throw ConfigError("benchmark.dataset: needs >= 10 samples for the 10% test split, has " +
                          std::to_string(n));

    std::vector<uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng::SplitMix64 g(rng::derive(cfg.seed, rng::domain::test_split));
    rng::shuffle(order, g);
    plan.test_indices.assign(order.begin(), order.begin() + n_test);
    std::sort(plan.test_indices.begin(), plan.test_indices.end());
    std::vector<uint32_t> train_ids(order.begin() + n_test, order.end());
    std::sort(train_ids.begin(), train_ids.end());

    data::Dataset train;
    train.name = plan.dataset.name + ":train";
    train.feature_dim = plan.dataset.feature_dim;
    train.n_classes = plan.dataset.n_classes;
    train.features.reserve(train_ids.size() * train.feature_dim);
    train.labels.reserve(train_ids.size());
    for (uint32_t id : train_ids) {
        auto row = data::view_of(plan.dataset).row(id);
        train.features.insert(train.features.end(), row.begin(), row.end());
        train.labels.push_back(plan.dataset.labels[id]);
    }

    data::PartitionResult shards =
        data::partition(data::view_of(train), cfg.partition, cfg.client_count);
    // Map shard positions back to original dataset ids (order-preserving:
    // train_ids is ascending).
    for (auto& shard : shards.client_indices)
        for (auto& pos : shard) pos = train_ids[pos];

    for (size_t i = 0; i < shards.client_indices.size(); ++i)
        if (shards.client_indices[i].empty())
            throw ConfigError("client " + std::to_string(i + 1) +
                              " has an empty data shard; every client needs >= 1 sample");

    if (cfg.preload) plan.store = data::PreloadStore::build(data::view_of(plan.dataset));
    plan.distribution = data::distribution_matrix(shards, data::view_of(plan.dataset));

    // Queue before server, server before manager.
    plan.queue = reg.queue.make(cfg.queue.type, cfg.queue.params, ctx);

    ctx.feature_dim = plan.dataset.feature_dim;
    ctx.n_classes = plan.dataset.n_classes;
    plan.model = reg.model.make(cfg.model.type, cfg.model.params, ctx);
    plan.trainer = reg.trainer.make(cfg.trainer.type, cfg.trainer.params, ctx);
    plan.scheduler = reg.scheduler.make(cfg.scheduler.type, cfg.scheduler.params, ctx);
    plan.aggregator = reg.aggregator.make(cfg.aggregator.type, cfg.aggregator.params, ctx);
    if (plan.aggregator->buffer_size() > cfg.client_count)
        throw ConfigError("server.aggregator: buffer size " +
                          std::to_string(plan.aggregator->buffer_size()) +
                          " exceeds client_count " + std::to_string(cfg.client_count));

    plan.mode = reg.mode.make(cfg.mode.type, cfg.mode.params, ctx);
    if (plan.mode.kind == ModeKind::distributed) {
        uint64_t total = 0;
        for (const auto& node : plan.mode.nodes) total += node.clients;
        if (total != cfg.client_count)
            throw ConfigError("client_manager.mode: node client counts sum to " +
                              std::to_string(total) + " but client_count is " +
                              std::to_string(cfg.client_count));
    }

    std::vector<ProfileGroupCfg> groups = cfg.profiles;
    if (groups.empty()) groups.push_back({cfg.client_count, 1.0, 1, std::nullopt});
    uint32_t id = 1;
    for (const auto& gcfg : groups) {
        for (uint32_t i = 0; i < gcfg.count; ++i, ++id) {
            ClientProfile p;
            p.id = id;
            p.speed_factor = gcfg.speed_factor;
            p.base_train_cost = gcfg.base_train_cost;
            p.stop_after_updates = gcfg.stop_after_updates;
            p.sample_indices = std::move(shards.client_indices[id - 1]);
            plan.profiles.push_back(std::move(p));
        }
    }
    return plan;
}

}  // namespace fedsim::cfg
