#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "fedsim/params.hpp"

namespace fedsim::fed {

/// A client update after wire decode and mask reconstruction: params is
/// always the full vector.
struct UpdateRecord {
    uint32_t client_id = 0;
    uint64_t base_version = 0;
    learn::ParamVector params;
    uint32_t n_samples = 0;
    uint32_t tau = 0;
    uint64_t recv_time = 0;
    std::map<std::string, double> metrics;
};

enum class AggKind { sync, async, buffered };

/// Pure merge arithmetic in f64. The sync family sorts its cohort by client
/// id before reducing, so the result is invariant to arrival order — the
/// keystone of cross-mode bitwise equality.
class Aggregator {
public:
    virtual ~Aggregator() = default;
    virtual AggKind kind() const { return AggKind::sync; }
    /// Buffered family: how many updates fill the merge buffer.
    virtual size_t buffer_size() const { return 1; }

    /// Sync/buffered: next global params from a cohort of updates.
    virtual learn::ParamVector reduce(const learn::ParamVector& global, uint64_t global_version,
                                      std::vector<UpdateRecord> updates);
    /// Async: merge a single update, staleness-weighted.
    virtual learn::ParamVector merge_async(const learn::ParamVector& global,
                                           uint64_t global_version, const UpdateRecord& update);
};

/// Sample-count-weighted parameter average over the cohort.
class FedavgAggregator : public Aggregator {
public:
    learn::ParamVector reduce(const learn::ParamVector& global, uint64_t global_version,
                              std::vector<UpdateRecord> updates) override;
};

/// Normalized averaging: d_i = (global - params_i) / tau_i,
/// tau_eff = sum p_i tau_i, next = global - tau_eff * sum p_i d_i.
class FednovaAggregator : public Aggregator {
public:
    learn::ParamVector reduce(const learn::ParamVector& global, uint64_t global_version,
                              std::vector<UpdateRecord> updates) override;
};

/// Server-side Adam over the average client delta.
class FedadamAggregator : public Aggregator {
public:
    FedadamAggregator(double beta1, double beta2, double eta_server, double tau_adapt);
    learn::ParamVector reduce(const learn::ParamVector& global, uint64_t global_version,
                              std::vector<UpdateRecord> updates) override;

private:
    double beta1_, beta2_, eta_, tau_;
    std::vector<double> m_, v_;
};

/// Staleness-damped one-update merge:
/// alpha_eff = alpha * (s + 1)^(-a), s = global_version - base_version.
class FedasyncAggregator : public Aggregator {
public:
    FedasyncAggregator(double alpha, double a);
    AggKind kind() const override { return AggKind::async; }
    learn::ParamVector merge_async(const learn::ParamVector& global, uint64_t global_version,
                                   const UpdateRecord& update) override;

private:
    double alpha_, a_;
};

/// Weighted average over each batch of k updates, staleness tolerated.
class BufferedAggregator : public Aggregator {
public:
    explicit BufferedAggregator(size_t k);
    AggKind kind() const override { return AggKind::buffered; }
    size_t buffer_size() const override { return k_; }
    learn::ParamVector reduce(const learn::ParamVector& global, uint64_t global_version,
                              std::vector<UpdateRecord> updates) override;

private:
    size_t k_;
};

/// pFedMe server step: next = (1 - beta) * global + beta * weighted mean of
/// the clients' w vectors; the personalized models never leave the clients.
/// beta = 1 reduces to plain fedavg.
class PfedmeAggregator : public FedavgAggregator {
public:
    explicit PfedmeAggregator(double beta = 1.0);
    learn::ParamVector reduce(const learn::ParamVector& global, uint64_t global_version,
                              std::vector<UpdateRecord> updates) override;

private:
    double beta_;
};

}  // namespace fedsim::fed
