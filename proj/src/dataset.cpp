#include "fedsim/dataset.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <thread>

#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "store layout assumes a little-endian host");

namespace fedsim::data {

DatasetView view_of(const Dataset& d) {
    DatasetView v;
    v.name = d.name;
    v.feature_dim = d.feature_dim;
    v.n_classes = d.n_classes;
    v.features = d.features;
    v.labels = d.labels;
    return v;
}

Dataset generate_synthetic(uint32_t n_classes, uint32_t per_class, uint32_t feature_dim,
                           uint64_t seed) {
    if (n_classes == 0 || per_class == 0 || feature_dim == 0)
        throw ConfigError("generate_synthetic: all arguments must be positive");
    Dataset d;
    d.name = "synthetic";
    d.feature_dim = feature_dim;
    d.n_classes = n_classes;
    const size_t n = static_cast<size_t>(n_classes) * per_class;
    d.features.reserve(n * feature_dim);
    d.labels.reserve(n);

    rng::SplitMix64 g(rng::derive(seed, rng::domain::dataset));
    std::vector<double> center(feature_dim);
    for (uint32_t c = 0; c < n_classes; ++c) {
        for (auto& v : center) v = 2.0 * g.next_double() - 1.0;
        for (uint32_t i = 0; i < per_class; ++i) {
            for (uint32_t f = 0; f < feature_dim; ++f)
                d.features.push_back(static_cast<float>(center[f] + g.next_normal()));
            d.labels.push_back(static_cast<uint16_t>(c));
        }
    }
    return d;
}

namespace {

constexpr char kMagic[4] = {'F', 'M', 'D', 'S'};
constexpr uint32_t kVersion = 1;
constexpr size_t kHeaderLen = 4 + 4 + 8 + 8 + 4 + 4;

template <typename T>
void put(std::vector<uint8_t>& out, T v) {
    uint8_t buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.insert(out.end(), buf, buf + sizeof(T));
}

template <typename T>
T get(std::span<const uint8_t> bytes, size_t pos) {
    T v;
    std::memcpy(&v, bytes.data() + pos, sizeof(T));
    return v;
}

}  // namespace

std::vector<uint8_t> encode_store(const DatasetView& d) {
    std::vector<uint8_t> out;
    out.reserve(kHeaderLen + d.features.size() * 4 + d.labels.size() * 2);
    out.insert(out.end(), kMagic, kMagic + 4);
    put<uint32_t>(out, kVersion);
    put<uint64_t>(out, d.n_samples());
    put<uint64_t>(out, d.feature_dim);
    put<uint32_t>(out, d.n_classes);
    put<uint32_t>(out, 0);  // reserved
    const auto* fbytes = reinterpret_cast<const uint8_t*>(d.features.data());
    out.insert(out.end(), fbytes, fbytes + d.features.size() * 4);
    const auto* lbytes = reinterpret_cast<const uint8_t*>(d.labels.data());
    out.insert(out.end(), lbytes, lbytes + d.labels.size() * 2);
    return out;
}

DatasetView parse_store(std::span<const uint8_t> bytes, std::string name) {
    if (bytes.size() < kHeaderLen) throw ConfigError("store: truncated header");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw ConfigError("store: bad magic");
    if (get<uint32_t>(bytes, 4) != kVersion) throw ConfigError("store: unsupported version");
    const uint64_t n_samples = get<uint64_t>(bytes, 8);
    const uint64_t feature_dim = get<uint64_t>(bytes, 16);
    const uint32_t n_classes = get<uint32_t>(bytes, 24);
    const size_t want = kHeaderLen + n_samples * feature_dim * 4 + n_samples * 2;
    if (bytes.size() != want)
        throw ConfigError("store: size mismatch, expected " + std::to_string(want) + " bytes, have " +
                          std::to_string(bytes.size()));
    DatasetView v;
    v.name = std::move(name);
    v.feature_dim = static_cast<uint32_t>(feature_dim);
    v.n_classes = n_classes;
    v.features = {reinterpret_cast<const float*>(bytes.data() + kHeaderLen),
                  static_cast<size_t>(n_samples * feature_dim)};
    v.labels = {reinterpret_cast<const uint16_t*>(bytes.data() + kHeaderLen + n_samples * feature_dim * 4),
                static_cast<size_t>(n_samples)};
    for (uint16_t l : v.labels)
        if (l >= n_classes) throw ConfigError("store: label out of range");
    return v;
}

Dataset materialize(const DatasetView& v) {
    Dataset d;
    d.name = v.name;
    d.feature_dim = v.feature_dim;
    d.n_classes = v.n_classes;
    d.features.assign(v.features.begin(), v.features.end());
    d.labels.assign(v.labels.begin(), v.labels.end());
    return d;
}

void write_store_file(const std::filesystem::path& path, const DatasetView& d) {
    auto bytes = encode_store(d);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeAbort("cannot open store file for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw RuntimeAbort("short write to store file: " + path.string());
}

std::shared_ptr<PreloadStore> PreloadStore::build(const DatasetView& d) {
    auto store = std::shared_ptr<PreloadStore>(new PreloadStore());
    store->owned_ = encode_store(d);
    store->bytes_ptr_ = store->owned_.data();
    store->byte_len_ = store->owned_.size();
    store->name_ = d.name;
    return store;
}

std::shared_ptr<PreloadStore> PreloadStore::map_file(const std::filesystem::path& path) {
    int fd = ::open(path.c_str(), O_RDONLY);
    if (fd < 0) throw RuntimeAbort("cannot open store file: " + path.string());
    struct stat st {};
    if (::fstat(fd, &st) != 0) {
        ::close(fd);
        throw RuntimeAbort("cannot stat store file: " + path.string());
    }
    void* addr = ::mmap(nullptr, static_cast<size_t>(st.st_size), PROT_READ, MAP_PRIVATE, fd, 0);
    ::close(fd);
    if (addr == MAP_FAILED) throw RuntimeAbort("mmap failed: " + path.string());

    auto store = std::shared_ptr<PreloadStore>(new PreloadStore());
    store->map_addr_ = addr;
    store->map_len_ = static_cast<size_t>(st.st_size);
    store->bytes_ptr_ = static_cast<const uint8_t*>(addr);
    store->byte_len_ = store->map_len_;
    store->name_ = path.stem().string();
    return store;
}

PreloadStore::~PreloadStore() {
    if (map_addr_ != nullptr) ::munmap(map_addr_, map_len_);
}

DatasetView PreloadStore::attach() {
    if (released_.load()) throw RuntimeAbort("preload store: attach after release");
    auto v = parse_store({bytes_ptr_, byte_len_}, name_);
    attach_count_.fetch_add(1);
    return v;
}

void PreloadStore::detach() { attach_count_.fetch_sub(1); }

void PreloadStore::release() { released_.store(true); }

DataView::DataView(DatasetView base, std::vector<uint32_t> sample_indices, uint32_t io_latency_us)
    : base_(std::move(base)), indices_(std::move(sample_indices)), io_latency_us_(io_latency_us) {
    for (uint32_t idx : indices_)
        if (idx >= base_.n_samples()) throw ConfigError("data view: sample index out of range");
}

Batch DataView::load_batch(std::span<const uint32_t> positions) const {
    if (io_latency_us_ > 0)
        std::this_thread::sleep_for(std::chrono::microseconds(io_latency_us_));
    Batch b;
    b.feature_dim = base_.feature_dim;
    b.features.reserve(positions.size() * base_.feature_dim);
    b.labels.reserve(positions.size());
    for (uint32_t pos : positions) {
        const uint32_t idx = indices_[pos];
        for (float f : base_.row(idx)) b.features.push_back(static_cast<double>(f));
        b.labels.push_back(base_.labels[idx]);
    }
    return b;
}

Batch DataView::load_all() const {
    std::vector<uint32_t> all(indices_.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<uint32_t>(i);
    return load_batch(all);
}

}  // namespace fedsim::data
