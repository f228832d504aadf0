#pragma once

#include <cstdint>
#include <ostream>
#include <variant>
#include <vector>

#include "fedsim/dataset.hpp"

namespace fedsim::data {

struct IidPartition {
    bool operator==(const IidPartition&) const = default;
};
struct DirichletPartition {
    double beta = 0.5;
    bool operator==(const DirichletPartition&) const = default;
};
/// Per-client list of (class, sample_count).
struct ExplicitPartition {
    std::vector<std::vector<std::pair<uint16_t, uint32_t>>> assignments;
    bool operator==(const ExplicitPartition&) const = default;
};

struct PartitionSpec {
    std::variant<IidPartition, DirichletPartition, ExplicitPartition> variant;
    uint64_t seed = 0;
    bool operator==(const PartitionSpec&) const = default;
};

/// Pairwise-disjoint, per-client sorted sample index lists.
struct PartitionResult {
    std::vector<std::vector<uint32_t>> client_indices;
};

/// iid: seeded shuffle dealt round-robin (sizes differ by <= 1).
/// dirichlet: per class, client proportions from Gamma(beta,1) draws
///   normalized to a simplex point; class samples (ascending index order)
///   sliced by cumulative proportion with largest-remainder rounding.
/// explicit: exact class/count assignment, samples taken per class in
///   seeded shuffled order; over-allocation is an error naming the class.
PartitionResult partition(const DatasetView& dataset, const PartitionSpec& spec,
                          uint32_t n_clients);

/// Entry (i, c) = number of client-i samples labelled c.
std::vector<std::vector<uint64_t>> distribution_matrix(const PartitionResult& result,
                                                       const DatasetView& dataset);

/// Header "client,class_0,...,class_{k-1}", one row per client.
void write_distribution_csv(std::ostream& out, const std::vector<std::vector<uint64_t>>& matrix);

}  // namespace fedsim::data
