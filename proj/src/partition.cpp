#include "fedsim/partition.hpp"

#include <algorithm>
#include <numeric>

#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"

namespace fedsim::data {

namespace {

std::vector<std::vector<uint32_t>> indices_by_class(const DatasetView& d) {
    std::vector<std::vector<uint32_t>> by_class(d.n_classes);
    for (size_t i = 0; i < d.n_samples(); ++i)
        by_class[d.labels[i]].push_back(static_cast<uint32_t>(i));
    return by_class;
}

/// Proportions -> integer counts summing to total, largest remainder first,
/// ties to the lower client index.
std::vector<uint32_t> largest_remainder_counts(const std::vector<double>& proportions,
                                               uint32_t total) {
    const size_t k = proportions.size();
    std::vector<uint32_t> counts(k);
    std::vector<std::pair<double, size_t>> remainders(k);
    uint32_t assigned = 0;
    for (size_t i = 0; i < k; ++i) {
        const double exact = proportions[i] * total;
        counts[i] = static_cast<uint32_t>(exact);
        remainders[i] = {exact - counts[i], i};
        assigned += counts[i];
    }
    std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (uint32_t r = 0; r < total - assigned; ++r) counts[remainders[r].second] += 1;
    return counts;
}

PartitionResult partition_iid(const DatasetView& d, uint64_t seed, uint32_t n_clients) {
    rng::SplitMix64 g(rng::derive(seed, rng::domain::partition));
    auto shuffled = rng::shuffled_indices(d.n_samples(), g);
    PartitionResult r;
    r.client_indices.resize(n_clients);
    for (size_t j = 0; j < shuffled.size(); ++j)
        r.client_indices[j % n_clients].push_back(shuffled[j]);
    return r;
}

PartitionResult partition_dirichlet(const DatasetView& d, double beta, uint64_t seed,
                                    uint32_t n_clients) {
    if (beta <= 0.0) throw ConfigError("dirichlet partition: beta must be positive");
    rng::SplitMix64 g(rng::derive(seed, rng::domain::partition));
    auto by_class = indices_by_class(d);
    PartitionResult r;
    r.client_indices.resize(n_clients);
    std::vector<double> proportions(n_clients);
    for (uint32_t c = 0; c < d.n_classes; ++c) {
        double sum = 0.0;
        for (auto& p : proportions) {
            p = g.next_gamma(beta);
            sum += p;
        }
        for (auto& p : proportions) p /= sum;
        auto counts =
            largest_remainder_counts(proportions, static_cast<uint32_t>(by_class[c].size()));
        size_t pos = 0;
        for (uint32_t i = 0; i < n_clients; ++i)
            for (uint32_t t = 0; t < counts[i]; ++t)
                r.client_indices[i].push_back(by_class[c][pos++]);
    }
    return r;
}

PartitionResult partition_explicit(const DatasetView& d, const ExplicitPartition& spec,
                                   uint64_t seed, uint32_t n_clients) {
    if (spec.assignments.size() != n_clients)
        throw ConfigError("explicit partition: " + std::to_string(spec.assignments.size()) +
                          " assignment rows for " + std::to_string(n_clients) + " clients");
    auto by_class = indices_by_class(d);
    std::vector<size_t> taken(d.n_classes, 0);
    for (uint32_t c = 0; c < d.n_classes; ++c) {
        rng::SplitMix64 g(rng::derive(seed, rng::domain::partition, c));
        rng::shuffle(by_class[c], g);
    }
    PartitionResult r;
    r.client_indices.resize(n_clients);
    for (uint32_t i = 0; i < n_clients; ++i) {
        for (const auto& [cls, count] : spec.assignments[i]) {
            if (cls >= d.n_classes)
                throw ConfigError("explicit partition: class " + std::to_string(cls) +
                                  " not present in dataset");
            if (taken[cls] + count > by_class[cls].size())
                throw ConfigError("explicit partition: class " + std::to_string(cls) +
                                  " over-allocated by " +
                                  std::to_string(taken[cls] + count - by_class[cls].size()) +
                                  " samples");
            for (uint32_t t = 0; t < count; ++t)
                r.client_indices[i].push_back(by_class[cls][taken[cls]++]);
        }
    }
    return r;
}

}  // namespace

PartitionResult partition(const DatasetView& dataset, const PartitionSpec& spec,
                          uint32_t n_clients) {
    if (n_clients == 0) throw ConfigError("partition: need at least one client");
    PartitionResult r;
    if (std::holds_alternative<IidPartition>(spec.variant)) {
        r = partition_iid(dataset, spec.seed, n_clients);
    } else if (const auto* dir = std::get_if<DirichletPartition>(&spec.variant)) {
        r = partition_dirichlet(dataset, dir->beta, spec.seed, n_clients);
    } else {
        r = partition_explicit(dataset, std::get<ExplicitPartition>(spec.variant), spec.seed,
                               n_clients);
    }
    for (auto& list : r.client_indices) std::sort(list.begin(), list.end());
    return r;
}

std::vector<std::vector<uint64_t>> distribution_matrix(const PartitionResult& result,
                                                       const DatasetView& dataset) {
    std::vector<std::vector<uint64_t>> m(result.client_indices.size(),
                                         std::vector<uint64_t>(dataset.n_classes, 0));
    for (size_t i = 0; i < result.client_indices.size(); ++i)
        for (uint32_t idx : result.client_indices[i]) {
            if (idx >= dataset.n_samples())
                throw ConfigError("distribution_matrix: index out of range");
            m[i][dataset.labels[idx]] += 1;
        }
    return m;
}

void write_distribution_csv(std::ostream& out, const std::vector<std::vector<uint64_t>>& matrix) {
    const size_t k = matrix.empty() ? 0 : matrix[0].size();
    out << "client";
    for (size_t c = 0; c < k; ++c) out << ",class_" << c;
    out << "\n";
    for (size_t i = 0; i < matrix.size(); ++i) {
        out << i;
        for (uint64_t v : matrix[i]) out << "," << v;
        out << "\n";
    }
}

}  // namespace fedsim::data
