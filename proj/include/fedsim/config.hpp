#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedsim/partition.hpp"
#include "fedsim/registry.hpp"

namespace fedsim::cfg {

/// A named module plus its parameter map, resolved against one registry
/// category at assembly. In JSON either a bare string ("fedavg") or an
/// object whose "type" names the module and whose remaining keys are the
/// params ({"type": "fedadam", "beta1": 0.9}).
struct ModuleRefCfg {
    std::string type;
    nlohmann::json params = nlohmann::json::object();
    bool operator==(const ModuleRefCfg&) const = default;
};

/// One group of identical clients; groups expand to consecutive ids.
struct ProfileGroupCfg {
    uint32_t count = 1;
    double speed_factor = 1.0;
    uint32_t base_train_cost = 1;  // virtual slices per local step at speed 1
    /// Scripted leave: the client stops after publishing this many updates.
    std::optional<uint32_t> stop_after_updates;
    bool operator==(const ProfileGroupCfg&) const = default;
};

/// The full experiment surface with every section-level default filled.
/// Module params (ModuleRefCfg.params) keep factory defaults implicit and
/// are echoed exactly as written.
struct ExperimentConfig {
    // [global]
    uint64_t seed = 0;
    uint32_t rounds = 20;
    std::string output_dir = "runs";
    uint64_t slice_wall_us = 0;  // wall-clock length of one virtual slice
    uint64_t max_activations = 10'000'000;

    // [server]
    ModuleRefCfg scheduler{"random"};
    ModuleRefCfg aggregator{"fedavg"};
    std::optional<double> target_accuracy;
    uint64_t await_grace_us = 10'000'000;  // node-teardown grace before kill

    // [client]
    ModuleRefCfg trainer{"sgd"};
    ModuleRefCfg model{"softmax"};
    std::vector<ProfileGroupCfg> profiles;  // empty = one uniform group

    // [client_manager]
    ModuleRefCfg mode{"sequential"};
    uint32_t client_count = 1;

    // [queue]
    ModuleRefCfg queue{"memory"};

    // [benchmark]
    ModuleRefCfg dataset{"synthetic"};
    data::PartitionSpec partition;  // seed defaults to global seed
    bool preload = false;
    uint64_t io_latency_us = 0;

    // [logging]
    std::string log_level = "info";
    bool emit_distribution = false;
    bool normalize = false;  // zero wall times in logs for byte-diffing runs
};

/// Strict parse: unknown sections/keys are errors naming the valid set;
/// type mismatches report expected vs. found; all defaults filled.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig parse_config(const nlohmann::json& doc);

/// Canonical form: sorted keys, section defaults materialized, module params
/// echoed verbatim. parse(serialize(parse(x))) == parse(x).
nlohmann::json serialize_config(const ExperimentConfig& cfg);
std::string config_to_text(const ExperimentConfig& cfg);

/// CLI overrides, applied to the raw document before parsing so defaults
/// derived from the overridden values follow along.
void override_mode(nlohmann::json& doc, const std::string& mode);
void override_seed(nlohmann::json& doc, uint64_t seed);

}  // namespace fedsim::cfg
