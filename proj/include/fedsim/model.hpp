#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "fedsim/dataset.hpp"
#include "fedsim/params.hpp"

namespace fedsim::learn {

struct SoftmaxSpec {
    uint32_t feature_dim = 0;
    uint32_t n_classes = 0;
    bool operator==(const SoftmaxSpec&) const = default;
};

/// One tanh hidden layer, softmax output.
struct MlpSpec {
    uint32_t feature_dim = 0;
    uint32_t hidden_dim = 0;
    uint32_t n_classes = 0;
    bool operator==(const MlpSpec&) const = default;
};

using ModelSpec = std::variant<SoftmaxSpec, MlpSpec>;

/// Layer order: weight then bias per linear layer, biases as (1, n) rows.
std::vector<LayerShape> param_shapes(const ModelSpec& spec);
size_t param_count(const ModelSpec& spec);
uint32_t output_classes(const ModelSpec& spec);
uint32_t input_dim(const ModelSpec& spec);

/// Index range of the final linear layer (its weights and bias).
struct ParamRange {
    size_t offset = 0;
    size_t count = 0;
};
ParamRange last_layer_range(const ModelSpec& spec);

/// Weights uniform(-s, s) with s = sqrt(6 / (fan_in + fan_out)); biases zero.
/// Draw order is layer-major then row-major, from SplitMix64(seed).
ParamVector init_params(const ModelSpec& spec, uint64_t seed);

struct LossGrad {
    double loss = 0.0;
    ParamVector grad;
};

/// Mean cross-entropy over the batch and its analytic gradient. Pure.
LossGrad loss_and_grad(const ModelSpec& spec, const ParamVector& params, const data::Batch& batch);

double loss_only(const ModelSpec& spec, const ParamVector& params, const data::Batch& batch);

struct EvalResult {
    double accuracy = 0.0;
    double mean_loss = 0.0;
    /// Per class; NaN marks a class absent from the evaluated set.
    std::vector<double> per_class_accuracy;
};

/// Argmax prediction accuracy; ties resolve to the lowest class index.
EvalResult evaluate(const ModelSpec& spec, const ParamVector& params, const data::Batch& batch);

}  // namespace fedsim::learn
