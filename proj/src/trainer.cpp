#include "fedsim/trainer.hpp"

#include <algorithm>

#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"

namespace fedsim::learn {

ParamVector apply_mask(const ParamVector& full_update, const ParamVector& base,
                       const UpdateMask& mask) {
    if (!full_update.same_shape(base)) throw ConfigError("apply_mask: shape mismatch");
    if (mask.full) return full_update;
    if (mask.offset + mask.count > base.size())
        throw ConfigError("apply_mask: mask range exceeds parameter vector");
    ParamVector out = base;
    std::copy(full_update.values.begin() + static_cast<long>(mask.offset),
              full_update.values.begin() + static_cast<long>(mask.offset + mask.count),
              out.values.begin() + static_cast<long>(mask.offset));
    return out;
}

uint32_t planned_steps(const TrainerConfig& cfg, size_t n_samples) {
    const size_t bs = std::min<size_t>(cfg.batch_size, n_samples);
    const size_t batches = (n_samples + bs - 1) / bs;
    return cfg.local_epochs * static_cast<uint32_t>(batches);
}

TrainOutcome local_train(const ModelSpec& spec, const ParamVector& global_params,
                         const data::DataView& data, const TrainerConfig& cfg, uint64_t rng_seed,
                         const ParamVector* personalized_in) {
    const size_t n = data.size();
    if (n == 0) throw ConfigError("local_train: empty data shard");
    if (cfg.lr < 0.0) throw ConfigError("local_train: negative learning rate");

    TrainOutcome out;
    out.params = global_params;
    out.n_samples = static_cast<uint32_t>(n);
    out.full_batch_fallback = cfg.batch_size > n;
    const size_t bs = std::min<size_t>(cfg.batch_size, n);

    const auto* pfedme = std::get_if<PfedmeVariant>(&cfg.variant);
    const auto* prox = std::get_if<ProxVariant>(&cfg.variant);
    ParamVector theta;
    if (pfedme != nullptr)
        theta = (personalized_in != nullptr && personalized_in->same_shape(global_params))
                    ? *personalized_in
                    : global_params;

    rng::SplitMix64 g(rng_seed);
    std::vector<uint32_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = static_cast<uint32_t>(i);

    ParamVector& w = out.params;
    for (uint32_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
        rng::shuffle(order, g);
        for (size_t start = 0; start < n; start += bs) {
            const size_t len = std::min(bs, n - start);
            auto batch = data.load_batch({order.data() + start, len});

            if (pfedme != nullptr) {
                for (uint32_t s = 0; s < pfedme->inner_steps; ++s) {
                    auto lg = loss_and_grad(spec, theta, batch);
                    for (size_t i = 0; i < theta.size(); ++i)
                        theta.values[i] -= cfg.lr * (lg.grad.values[i] +
                                                     pfedme->lambda * (theta.values[i] - w.values[i]));
                }
                for (size_t i = 0; i < w.size(); ++i)
                    w.values[i] -= cfg.lr * pfedme->lambda * (w.values[i] - theta.values[i]);
            } else {
                auto lg = loss_and_grad(spec, w, batch);
                if (prox != nullptr && prox->mu != 0.0) {
                    for (size_t i = 0; i < w.size(); ++i)
                        lg.grad.values[i] += prox->mu * (w.values[i] - global_params.values[i]);
                }
                for (size_t i = 0; i < w.size(); ++i) w.values[i] -= cfg.lr * lg.grad.values[i];
            }
            out.tau += 1;
        }
    }
    if (pfedme != nullptr) out.personalized = std::move(theta);
    return out;
}

}  // namespace fedsim::learn
