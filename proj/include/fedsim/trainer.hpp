#pragma once

#include <cstdint>
#include <optional>
#include <variant>

#include "fedsim/dataset.hpp"
#include "fedsim/model.hpp"
#include "fedsim/params.hpp"

namespace fedsim::learn {

struct PlainVariant {
    bool operator==(const PlainVariant&) const = default;
};
/// FedProx: per-step gradient augmented by mu * (w - global).
struct ProxVariant {
    double mu = 0.0;
    bool operator==(const ProxVariant&) const = default;
};
/// pFedMe-lite: per outer step, inner_steps SGD steps fit a personalized
/// vector theta against loss + (lambda/2)||theta - w||^2, then
/// w <- w - lr * lambda * (w - theta).
struct PfedmeVariant {
    double lambda = 1.0;
    uint32_t inner_steps = 1;
    bool operator==(const PfedmeVariant&) const = default;
};
using TrainerVariant = std::variant<PlainVariant, ProxVariant, PfedmeVariant>;

/// Partial upload: only the final layer leaves the client except on every
/// period-th round, which uploads the full vector.
struct MaskPolicy {
    enum class Kind { full, partial_last_layer };
    Kind kind = Kind::full;
    uint32_t period = 1;
    bool operator==(const MaskPolicy&) const = default;
};

struct TrainerConfig {
    double lr = 0.01;
    uint32_t local_epochs = 2;
    uint32_t batch_size = 64;
    TrainerVariant variant = PlainVariant{};
    MaskPolicy mask_policy;
    bool operator==(const TrainerConfig&) const = default;
};

/// Either the whole vector or one contiguous index range of it.
struct UpdateMask {
    bool full = true;
    size_t offset = 0;
    size_t count = 0;
};

/// base with the masked range overwritten by full_update's values; a full
/// mask returns full_update verbatim.
ParamVector apply_mask(const ParamVector& full_update, const ParamVector& base,
                       const UpdateMask& mask);

struct TrainOutcome {
    ParamVector params;
    uint32_t n_samples = 0;
    uint32_t tau = 0;  // gradient steps taken
    /// Set for the pfedme variant; carries theta across rounds.
    std::optional<ParamVector> personalized;
    /// True when batch_size exceeded the shard and a full batch was used.
    bool full_batch_fallback = false;
};

/// Deterministic local SGD for local_epochs over seeded-shuffled mini-batches.
/// personalized_in supplies the previous round's theta for pfedme.
TrainOutcome local_train(const ModelSpec& spec, const ParamVector& global_params,
                         const data::DataView& data, const TrainerConfig& cfg, uint64_t rng_seed,
                         const ParamVector* personalized_in = nullptr);

/// Gradient steps a shard of n samples produces, before running them.
uint32_t planned_steps(const TrainerConfig& cfg, size_t n_samples);

}  // namespace fedsim::learn
