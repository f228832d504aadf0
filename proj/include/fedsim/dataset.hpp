#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fedsim::data {

/// Owning dataset: f32 feature matrix (row-major) + u16 class labels.
struct Dataset {
    std::string name;
    uint32_t feature_dim = 0;
    uint32_t n_classes = 0;
    std::vector<float> features;   // n_samples x feature_dim
    std::vector<uint16_t> labels;  // n_samples

    size_t n_samples() const { return labels.size(); }
};

/// Non-owning read-only view; safe to share across any number of readers.
struct DatasetView {
    std::string name;
    uint32_t feature_dim = 0;
    uint32_t n_classes = 0;
    std::span<const float> features;
    std::span<const uint16_t> labels;

    size_t n_samples() const { return labels.size(); }
    std::span<const float> row(size_t i) const {
        return features.subspan(i * feature_dim, feature_dim);
    }
};

DatasetView view_of(const Dataset& d);

/// Desk-scale synthetic benchmark: class c's samples are drawn from an
/// isotropic Gaussian (std 1.0) around a seeded random center with components
/// in [-1, 1]. Deterministic for fixed arguments.
Dataset generate_synthetic(uint32_t n_classes, uint32_t per_class, uint32_t feature_dim,
                           uint64_t seed);

// ---- FMDS binary store layout (little-endian) ----
// magic "FMDS", version u32=1, n_samples u64, feature_dim u64, n_classes u32,
// reserved u32=0, features f32 row-major, labels u16.

std::vector<uint8_t> encode_store(const DatasetView& d);
/// Zero-copy view into an encoded store image. Validates header and bounds.
DatasetView parse_store(std::span<const uint8_t> bytes, std::string name = "store");
Dataset materialize(const DatasetView& v);

void write_store_file(const std::filesystem::path& path, const DatasetView& d);

/// Memory-resident (or memory-mapped) immutable image of a dataset shared by
/// all clients; tracks how many readers attached.
class PreloadStore {
public:
    static std::shared_ptr<PreloadStore> build(const DatasetView& d);
    static std::shared_ptr<PreloadStore> map_file(const std::filesystem::path& path);
    ~PreloadStore();

    PreloadStore(const PreloadStore&) = delete;
    PreloadStore& operator=(const PreloadStore&) = delete;

    /// Zero-copy view of the stored dataset; counts the attachment.
    DatasetView attach();
    void detach();
    /// After release, attach() is an error.
    void release();

    int attach_count() const { return attach_count_.load(); }
    const uint8_t* bytes() const { return bytes_ptr_; }
    size_t size_bytes() const { return byte_len_; }

private:
    PreloadStore() = default;

    std::vector<uint8_t> owned_;  // empty when mapped
    void* map_addr_ = nullptr;
    size_t map_len_ = 0;
    const uint8_t* bytes_ptr_ = nullptr;
    size_t byte_len_ = 0;
    std::string name_ = "store";
    std::atomic<int> attach_count_{0};
    std::atomic<bool> released_{false};
};

/// A batch with features widened to f64 for all federation-visible arithmetic.
struct Batch {
    std::vector<double> features;
    std::vector<uint16_t> labels;
    uint32_t feature_dim = 0;
    size_t size() const { return labels.size(); }
};

/// A client's read path over its assigned sample indices. When io_latency_us
/// is nonzero every load_batch call sleeps that long, modelling a per-batch
/// disk read; a preloaded store uses latency 0.
class DataView {
public:
    DataView() = default;
    DataView(DatasetView base, std::vector<uint32_t> sample_indices, uint32_t io_latency_us);

    size_t size() const { return indices_.size(); }
    uint32_t feature_dim() const { return base_.feature_dim; }
    uint32_t n_classes() const { return base_.n_classes; }
    std::span<const uint32_t> indices() const { return indices_; }

    /// positions index into this view's sample list, not the base dataset.
    Batch load_batch(std::span<const uint32_t> positions) const;
    Batch load_all() const;

private:
    DatasetView base_;
    std::vector<uint32_t> indices_;
    uint32_t io_latency_us_ = 0;
};

}  // namespace fedsim::data
