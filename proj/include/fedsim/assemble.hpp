#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "fedsim/config.hpp"
#include "fedsim/registry.hpp"

namespace fedsim::cfg {

/// One fully wired client: profile fields expanded from its group plus the
/// partition shard it owns (original-dataset sample ids, sorted).
struct ClientProfile {
    uint32_t id = 0;
    double speed_factor = 1.0;
    uint32_t base_train_cost = 1;
    std::optional<uint32_t> stop_after_updates;
    std::vector<uint32_t> sample_indices;
};

/// Immutable wiring produced by assemble(); nothing has started yet.
struct ExperimentPlan {
    ExperimentConfig cfg;
    data::Dataset dataset;
    std::vector<uint32_t> test_indices;  // held-out 10% split, sorted
    learn::ModelSpec model;
    learn::TrainerConfig trainer;
    std::shared_ptr<fed::Scheduler> scheduler;
    std::shared_ptr<fed::Aggregator> aggregator;
    ModeSpec mode;
    QueueSpec queue;
    std::shared_ptr<data::PreloadStore> store;  // set when cfg.preload
    std::vector<ClientProfile> profiles;
    std::vector<std::vector<uint64_t>> distribution;  // client x class counts
};

/// Resolves every ModuleRef and wires the plan in the order benchmark ->
/// queue -> server -> client manager. The held-out test split is a seeded
/// 10% sample; clients partition only the remaining 90%.
ExperimentPlan assemble(const ExperimentConfig& cfg, const Registry& reg = default_registry());

}  // namespace fedsim::cfg
