#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "fedsim/dataset.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/partition.hpp"
#include "fedsim/rng.hpp"

using namespace fedsim;
using namespace fedsim::data;

namespace {

std::filesystem::path test_data_dir() { return FEDSIM_TEST_DATA_DIR; }

std::vector<std::vector<uint64_t>> read_counts_csv(const std::filesystem::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    std::string line;
    std::getline(in, line);  // header
    std::vector<std::vector<uint64_t>> rows;
    while (std::getline(in, line)) {
        std::vector<uint64_t> row;
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');  // client id
        while (std::getline(ss, cell, ',')) row.push_back(std::stoull(cell));
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<std::vector<uint32_t>> read_indices_csv(const std::filesystem::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    std::string line;
    std::vector<std::vector<uint32_t>> rows;
    while (std::getline(in, line)) {
        std::vector<uint32_t> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(static_cast<uint32_t>(std::stoul(cell)));
        rows.push_back(std::move(row));
    }
    return rows;
}

void check_disjoint_cover(const PartitionResult& r, size_t n_samples) {
    std::set<uint32_t> seen;
    size_t total = 0;
    for (const auto& list : r.client_indices) {
        CHECK(std::is_sorted(list.begin(), list.end()));
        for (uint32_t i : list) {
            CHECK(i < n_samples);
            CHECK(seen.insert(i).second);  // no index twice
        }
        total += list.size();
    }
    CHECK(total == n_samples);
}

}  // namespace

TEST_CASE("synthetic dataset: layout, labels grouped by class, determinism") {
    auto d = generate_synthetic(4, 50, 8, 123);
    CHECK(d.n_samples() == 200);
    CHECK(d.feature_dim == 8);
    CHECK(d.n_classes == 4);
    CHECK(d.features.size() == 200 * 8);
    for (size_t i = 0; i < d.n_samples(); ++i) CHECK(d.labels[i] == i / 50);
    for (float f : d.features) CHECK(std::isfinite(f));

    auto d2 = generate_synthetic(4, 50, 8, 123);
    CHECK(d2.features == d.features);
    auto d3 = generate_synthetic(4, 50, 8, 124);
    CHECK(d3.features != d.features);
}

TEST_CASE("synthetic classes are separated") {
    // Per-class means should sit near the class centers, which almost surely
    // differ across classes by far more than the sampling noise of 300 draws.
    auto d = generate_synthetic(3, 300, 16, 42);
    auto v = view_of(d);
    std::vector<std::vector<double>> mean(3, std::vector<double>(16, 0.0));
    for (size_t i = 0; i < d.n_samples(); ++i)
        for (uint32_t f = 0; f < 16; ++f) mean[d.labels[i]][f] += v.row(i)[f] / 300.0;
    for (int a = 0; a < 3; ++a)
        for (int b = a + 1; b < 3; ++b) {
            double dist2 = 0.0;
            for (uint32_t f = 0; f < 16; ++f) {
                double diff = mean[a][f] - mean[b][f];
                dist2 += diff * diff;
            }
            CHECK(dist2 > 0.5);  // noise alone would be ~16/300
        }
}

TEST_CASE("store encode/parse: golden header and bit-exact round trip") {
    auto d = generate_synthetic(2, 3, 4, 9);
    auto bytes = encode_store(view_of(d));
    REQUIRE(bytes.size() == 32 + 6 * 4 * 4 + 6 * 2);
    CHECK(std::memcmp(bytes.data(), "FMDS", 4) == 0);
    const uint8_t expect_head[28] = {
        1, 0, 0, 0,              // version
        6, 0, 0, 0, 0, 0, 0, 0,  // n_samples
        4, 0, 0, 0, 0, 0, 0, 0,  // feature_dim
        2, 0, 0, 0,              // n_classes
        0, 0, 0, 0,              // reserved
    };
    CHECK(std::memcmp(bytes.data() + 4, expect_head, 28) == 0);

    auto back = parse_store(bytes, "roundtrip");
    CHECK(back.n_samples() == 6);
    CHECK(back.feature_dim == 4);
    CHECK(back.n_classes == 2);
    auto owned = materialize(back);
    CHECK(owned.features == d.features);
    CHECK(owned.labels == d.labels);
}

TEST_CASE("store parse rejects corruption") {
    auto d = generate_synthetic(2, 3, 4, 9);
    auto bytes = encode_store(view_of(d));

    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(parse_store(bad_magic), ConfigError);

    auto bad_version = bytes;
    bad_version[4] = 9;
    CHECK_THROWS_AS(parse_store(bad_version), ConfigError);

    auto truncated = bytes;
    truncated.pop_back();
    CHECK_THROWS_AS(parse_store(truncated), ConfigError);

    std::vector<uint8_t> tiny(bytes.begin(), bytes.begin() + 16);
    CHECK_THROWS_AS(parse_store(tiny), ConfigError);

    auto bad_label = bytes;
    bad_label[bytes.size() - 2] = 0xFF;  // label 2+ with n_classes 2
    bad_label[bytes.size() - 1] = 0xFF;
    CHECK_THROWS_AS(parse_store(bad_label), ConfigError);
}

TEST_CASE("store file round trip") {
    auto dir = std::filesystem::temp_directory_path() / "fedsim_store_test";
    std::filesystem::create_directories(dir);
    auto path = dir / "d.fmds";
    auto d = generate_synthetic(3, 10, 5, 21);
    write_store_file(path, view_of(d));

    auto store = PreloadStore::map_file(path);
    auto v = store->attach();
    CHECK(v.n_samples() == 30);
    auto owned = materialize(v);
    CHECK(owned.features == d.features);
    CHECK(owned.labels == d.labels);
    store->detach();
    std::filesystem::remove_all(dir);
}

TEST_CASE("preload store: one image, counted attachments, hard release") {
    auto d = generate_synthetic(2, 8, 3, 4);
    auto store = PreloadStore::build(view_of(d));
    CHECK(store->attach_count() == 0);

    auto v1 = store->attach();
    auto v2 = store->attach();
    CHECK(store->attach_count() == 2);
    // Both views alias the same backing image; no per-reader copy exists.
    CHECK(v1.features.data() == v2.features.data());
    CHECK(reinterpret_cast<const uint8_t*>(v1.features.data()) >= store->bytes());
    CHECK(reinterpret_cast<const uint8_t*>(v1.features.data()) < store->bytes() + store->size_bytes());

    store->detach();
    store->detach();
    CHECK(store->attach_count() == 0);

    store->release();
    CHECK_THROWS_AS(store->attach(), RuntimeAbort);
}

TEST_CASE("data view: position indirection and f64 widening") {
    Dataset d;
    d.name = "tiny";
    d.feature_dim = 2;
    d.n_classes = 3;
    d.features = {0.5f, 1.5f, 2.5f, 3.5f, 4.5f, 5.5f};
    d.labels = {0, 1, 2};
    DataView view(view_of(d), {2, 0}, 0);  // view position 0 -> sample 2

    CHECK(view.size() == 2);
    auto b = view.load_batch(std::vector<uint32_t>{0});
    REQUIRE(b.size() == 1);
    CHECK(b.labels[0] == 2);
    CHECK(b.features == std::vector<double>{4.5, 5.5});

    auto all = view.load_all();
    CHECK(all.labels == std::vector<uint16_t>{2, 0});
    CHECK(all.features == std::vector<double>{4.5, 5.5, 0.5, 1.5});
}

TEST_CASE("data view: io latency is charged per batch read") {
    auto d = generate_synthetic(2, 20, 4, 3);
    std::vector<uint32_t> all(d.n_samples());
    for (uint32_t i = 0; i < all.size(); ++i) all[i] = i;

    DataView slow(view_of(d), all, 20000);
    auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < 3; ++i) slow.load_batch(std::vector<uint32_t>{0, 1});
    auto elapsed = std::chrono::duration_cast<std::chrono::microseconds>(
                       std::chrono::steady_clock::now() - t0)
                       .count();
    CHECK(elapsed >= 3 * 20000);

    DataView fast(view_of(d), all, 0);
    auto t1 = std::chrono::steady_clock::now();
    for (int i = 0; i < 3; ++i) fast.load_batch(std::vector<uint32_t>{0, 1});
    auto fast_elapsed = std::chrono::duration_cast<std::chrono::microseconds>(
                            std::chrono::steady_clock::now() - t1)
                            .count();
    CHECK(fast_elapsed < 20000);
}

TEST_CASE("partition: disjoint cover across randomized specs") {
    rng::SplitMix64 g(314);
    auto d = generate_synthetic(5, 40, 3, 6);
    for (int trial = 0; trial < 200; ++trial) {
        const auto n_clients = static_cast<uint32_t>(1 + g.next_below(12));
        PartitionSpec spec;
        spec.seed = g.next_u64();
        switch (g.next_below(2)) {
            case 0: spec.variant = IidPartition{}; break;
            default: spec.variant = DirichletPartition{0.1 + g.next_double() * 5.0}; break;
        }
        auto r = partition(view_of(d), spec, n_clients);
        REQUIRE(r.client_indices.size() == n_clients);
        check_disjoint_cover(r, d.n_samples());
    }
}

TEST_CASE("iid partition: near-equal sizes and determinism") {
    auto d = generate_synthetic(4, 25, 3, 8);  // 100 samples
    PartitionSpec spec{IidPartition{}, 5};
    auto r = partition(view_of(d), spec, 7);
    size_t lo = d.n_samples(), hi = 0;
    for (const auto& list : r.client_indices) {
        lo = std::min(lo, list.size());
        hi = std::max(hi, list.size());
    }
    CHECK(hi - lo <= 1);
    auto r2 = partition(view_of(d), spec, 7);
    CHECK(r2.client_indices == r.client_indices);
    spec.seed = 6;
    auto r3 = partition(view_of(d), spec, 7);
    CHECK(r3.client_indices != r.client_indices);
}

TEST_CASE("dirichlet partition matches the frozen reference run") {
    // Frozen by an independent reference implementation of the partition
    // procedure (tests/oracle/dirichlet_oracle.py): seed 42, beta 0.5,
    // 3 clients over 10 classes x 300 samples.
    auto d = generate_synthetic(10, 300, 4, 42);
    PartitionSpec spec{DirichletPartition{0.5}, 42};
    auto r = partition(view_of(d), spec, 3);
    check_disjoint_cover(r, d.n_samples());

    auto golden_counts = read_counts_csv(test_data_dir() / "dirichlet_counts_golden.csv");
    auto counts = distribution_matrix(r, view_of(d));
    REQUIRE(counts.size() == golden_counts.size());
    for (size_t i = 0; i < counts.size(); ++i) CHECK(counts[i] == golden_counts[i]);

    auto golden_indices = read_indices_csv(test_data_dir() / "dirichlet_indices_golden.csv");
    REQUIRE(golden_indices.size() == 3);
    for (size_t i = 0; i < 3; ++i) CHECK(r.client_indices[i] == golden_indices[i]);
}

TEST_CASE("dirichlet with huge beta is nearly uniform") {
    auto d = generate_synthetic(10, 100, 3, 11);  // 1000 samples
    PartitionSpec spec{DirichletPartition{1e9}, 3};
    auto r = partition(view_of(d), spec, 2);
    for (const auto& list : r.client_indices) {
        CHECK(list.size() >= 450);
        CHECK(list.size() <= 550);
    }
}

TEST_CASE("dirichlet rejects non-positive beta") {
    auto d = generate_synthetic(2, 5, 3, 1);
    CHECK_THROWS_AS(partition(view_of(d), {DirichletPartition{0.0}, 1}, 2), ConfigError);
    CHECK_THROWS_AS(partition(view_of(d), {DirichletPartition{-1.0}, 1}, 2), ConfigError);
}

TEST_CASE("explicit partition: the 3/5/7-class grouped scenario") {
    // 30 clients in three groups of ten limited to 3, 5, and 7 classes.
    auto d = generate_synthetic(10, 300, 4, 42);
    ExplicitPartition ex;
    for (int i = 0; i < 30; ++i) {
        const int n_cls = i < 10 ? 3 : (i < 20 ? 5 : 7);
        std::vector<std::pair<uint16_t, uint32_t>> row;
        for (int c = 0; c < n_cls; ++c)
            row.push_back({static_cast<uint16_t>((i + c) % 10), 8});
        ex.assignments.push_back(std::move(row));
    }
    auto r = partition(view_of(d), {ex, 42}, 30);
    REQUIRE(r.client_indices.size() == 30);
    auto m = distribution_matrix(r, view_of(d));
    for (int i = 0; i < 30; ++i) {
        const int n_cls = i < 10 ? 3 : (i < 20 ? 5 : 7);
        size_t nonzero = 0;
        for (uint64_t c : m[i]) nonzero += c > 0;
        CHECK(nonzero == static_cast<size_t>(n_cls));
        for (int c = 0; c < n_cls; ++c) CHECK(m[i][(i + c) % 10] == 8);
        CHECK(r.client_indices[i].size() == static_cast<size_t>(n_cls) * 8);
    }
    // Disjoint but not covering: explicit assignments may leave samples unused.
    std::set<uint32_t> seen;
    for (const auto& list : r.client_indices)
        for (uint32_t idx : list) CHECK(seen.insert(idx).second);
}

TEST_CASE("explicit partition: errors name the failing class") {
    auto d = generate_synthetic(3, 10, 2, 1);
    ExplicitPartition over;
    over.assignments = {{{0, 6}}, {{0, 6}}};  // 12 wanted, 10 available
    try {
        partition(view_of(d), {over, 1}, 2);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("class 0") != std::string::npos);
        CHECK(std::string(e.what()).find("2") != std::string::npos);  // deficit
    }

    ExplicitPartition missing;
    missing.assignments = {{{7, 1}}, {}};
    CHECK_THROWS_AS(partition(view_of(d), {missing, 1}, 2), ConfigError);

    ExplicitPartition wrong_rows;
    wrong_rows.assignments = {{{0, 1}}};
    CHECK_THROWS_AS(partition(view_of(d), {wrong_rows, 1}, 2), ConfigError);
}

TEST_CASE("distribution matrix conserves samples and the csv is stable") {
    auto d = generate_synthetic(3, 12, 2, 5);
    PartitionSpec spec{IidPartition{}, 9};
    auto r = partition(view_of(d), spec, 4);
    auto m = distribution_matrix(r, view_of(d));
    std::vector<uint64_t> per_class(3, 0);
    for (const auto& row : m)
        for (size_t c = 0; c < row.size(); ++c) per_class[c] += row[c];
    CHECK(per_class == std::vector<uint64_t>{12, 12, 12});

    std::ostringstream out;
    write_distribution_csv(out, {{1, 2, 3}, {4, 5, 6}});
    CHECK(out.str() == "client,class_0,class_1,class_2\n0,1,2,3\n1,4,5,6\n");
}
