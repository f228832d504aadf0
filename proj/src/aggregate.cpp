#include "fedsim/aggregate.hpp"

#include <algorithm>
#include <cmath>

#include "fedsim/errors.hpp"

namespace fedsim::fed {

namespace {

/// Shared cohort validation: non-empty, shapes match the global vector,
/// client-sorted order for deterministic reduction arithmetic.
void sort_and_check(const learn::ParamVector& global, std::vector<UpdateRecord>& updates,
                    bool unique_clients) {
    if (updates.empty()) throw RuntimeAbort("aggregate: empty update cohort");
    for (const auto& u : updates) {
        if (!u.params.same_shape(global))
            throw RuntimeAbort("aggregate: client " + std::to_string(u.client_id) +
                               " sent a mismatched parameter shape");
        if (u.n_samples == 0)
            throw RuntimeAbort("aggregate: client " + std::to_string(u.client_id) +
                               " reported zero samples");
    }
    std::sort(updates.begin(), updates.end(), [](const UpdateRecord& a, const UpdateRecord& b) {
        if (a.client_id != b.client_id) return a.client_id < b.client_id;
        if (a.recv_time != b.recv_time) return a.recv_time < b.recv_time;
        return a.base_version < b.base_version;
    });
    if (unique_clients) {
        for (size_t i = 1; i < updates.size(); ++i)
            if (updates[i].client_id == updates[i - 1].client_id)
                throw RuntimeAbort("aggregate: duplicate update from client " +
                                   std::to_string(updates[i].client_id) + " in one round");
    }
}

void check_versions(uint64_t global_version, const std::vector<UpdateRecord>& updates) {
    for (const auto& u : updates)
        if (u.base_version != global_version)
            throw RuntimeAbort("aggregate: stale update from client " +
                               std::to_string(u.client_id) + " (base " +
                               std::to_string(u.base_version) + ", round " +
                               std::to_string(global_version) + ")");
}

double total_samples(const std::vector<UpdateRecord>& updates) {
    double total = 0.0;
    for (const auto& u : updates) total += static_cast<double>(u.n_samples);
    return total;
}

learn::ParamVector weighted_average(const learn::ParamVector& global,
                                    const std::vector<UpdateRecord>& updates) {
    const double total = total_samples(updates);
    learn::ParamVector out;
    out.shapes = global.shapes;
    out.values.assign(global.size(), 0.0);
    for (const auto& u : updates) {
        const double p = static_cast<double>(u.n_samples) / total;
        for (size_t j = 0; j < out.size(); ++j) out.values[j] += p * u.params.values[j];
    }
    return out;
}

}  // namespace

learn::ParamVector Aggregator::reduce(const learn::ParamVector&, uint64_t,
                                      std::vector<UpdateRecord>) {
    throw RuntimeAbort("aggregate: this aggregator has no cohort reduce");
}

learn::ParamVector Aggregator::merge_async(const learn::ParamVector&, uint64_t,
                                           const UpdateRecord&) {
    throw RuntimeAbort("aggregate: this aggregator has no async merge");
}

learn::ParamVector FedavgAggregator::reduce(const learn::ParamVector& global,
                                            uint64_t global_version,
                                            std::vector<UpdateRecord> updates) {
    sort_and_check(global, updates, true);
    check_versions(global_version, updates);
    return weighted_average(global, updates);
}

learn::ParamVector FednovaAggregator::reduce(const learn::ParamVector& global,
                                             uint64_t global_version,
                                             std::vector<UpdateRecord> updates) {
    sort_and_check(global, updates, true);
    check_versions(global_version, updates);
    for (const auto& u : updates)
        if (u.tau == 0)
            throw RuntimeAbort("aggregate: client " + std::to_string(u.client_id) +
                               " reported zero local steps");
    const double total = total_samples(updates);
    double tau_eff = 0.0;
    for (const auto& u : updates)
        tau_eff += static_cast<double>(u.n_samples) / total * static_cast<double>(u.tau);
    std::vector<double> direction(global.size(), 0.0);
    for (const auto& u : updates) {
        const double p = static_cast<double>(u.n_samples) / total;
        const double tau = static_cast<double>(u.tau);
        for (size_t j = 0; j < direction.size(); ++j)
            direction[j] += p * ((global.values[j] - u.params.values[j]) / tau);
    }
    learn::ParamVector out = global;
    for (size_t j = 0; j < out.size(); ++j) out.values[j] -= tau_eff * direction[j];
    return out;
}

FedadamAggregator::FedadamAggregator(double beta1, double beta2, double eta_server,
                                     double tau_adapt)
    : beta1_(beta1), beta2_(beta2), eta_(eta_server), tau_(tau_adapt) {
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
        throw ConfigError("fedadam: betas must be in [0, 1)");
    if (tau_adapt <= 0) throw ConfigError("fedadam: tau_adapt must be positive");
}

learn::ParamVector FedadamAggregator::reduce(const learn::ParamVector& global,
                                             uint64_t global_version,
                                             std::vector<UpdateRecord> updates) {
    sort_and_check(global, updates, true);
    check_versions(global_version, updates);
    if (m_.empty()) {
        m_.assign(global.size(), 0.0);
        v_.assign(global.size(), 0.0);
    }
    if (m_.size() != global.size()) throw RuntimeAbort("fedadam: parameter size changed mid-run");
    const double total = total_samples(updates);
    std::vector<double> delta(global.size(), 0.0);
    for (const auto& u : updates) {
        const double p = static_cast<double>(u.n_samples) / total;
        for (size_t j = 0; j < delta.size(); ++j)
            delta[j] += p * (u.params.values[j] - global.values[j]);
    }
    learn::ParamVector out = global;
    for (size_t j = 0; j < out.size(); ++j) {
        m_[j] = beta1_ * m_[j] + (1 - beta1_) * delta[j];
        v_[j] = beta2_ * v_[j] + (1 - beta2_) * delta[j] * delta[j];
        out.values[j] += eta_ * m_[j] / (std::sqrt(v_[j]) + tau_);
    }
    return out;
}

FedasyncAggregator::FedasyncAggregator(double alpha, double a) : alpha_(alpha), a_(a) {
    if (alpha <= 0 || alpha > 1) throw ConfigError("fedasync: alpha must be in (0, 1]");
    if (a < 0) throw ConfigError("fedasync: staleness exponent must be >= 0");
}

learn::ParamVector FedasyncAggregator::merge_async(const learn::ParamVector& global,
                                                   uint64_t global_version,
                                                   const UpdateRecord& update) {
    if (!update.params.same_shape(global))
        throw RuntimeAbort("aggregate: client " + std::to_string(update.client_id) +
                           " sent a mismatched parameter shape");
    if (update.base_version > global_version)
        throw RuntimeAbort("aggregate: update from the future (base " +
                           std::to_string(update.base_version) + " > version " +
                           std::to_string(global_version) + ")");
    const double s = static_cast<double>(global_version - update.base_version);
    const double alpha_eff = alpha_ * std::pow(s + 1.0, -a_);
    learn::ParamVector out = global;
    for (size_t j = 0; j < out.size(); ++j)
        out.values[j] = (1 - alpha_eff) * global.values[j] + alpha_eff * update.params.values[j];
    return out;
}

BufferedAggregator::BufferedAggregator(size_t k) : k_(k) {
    if (k == 0) throw ConfigError("buffered: buffer size must be positive");
}

learn::ParamVector BufferedAggregator::reduce(const learn::ParamVector& global, uint64_t,
                                              std::vector<UpdateRecord> updates) {
    // Staleness is tolerated and duplicates are possible: a fast client may
    // appear twice in one buffer.
    sort_and_check(global, updates, false);
    return weighted_average(global, updates);
}

PfedmeAggregator::PfedmeAggregator(double beta) : beta_(beta) {
    if (beta <= 0.0 || beta > 1.0) throw ConfigError("pfedme: beta must be in (0, 1]");
}

learn::ParamVector PfedmeAggregator::reduce(const learn::ParamVector& global,
                                            uint64_t global_version,
                                            std::vector<UpdateRecord> updates) {
    learn::ParamVector mean = FedavgAggregator::reduce(global, global_version, std::move(updates));
    if (beta_ == 1.0) return mean;  // skip the mix so beta=1 is bitwise fedavg
    learn::ParamVector next = global;
    for (size_t i = 0; i < next.values.size(); ++i)
        next.values[i] = (1.0 - beta_) * global.values[i] + beta_ * mean.values[i];
    return next;
}

}  // namespace fedsim::fed
