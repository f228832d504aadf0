#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "fedsim/errors.hpp"
#include "fedsim/model.hpp"
#include "fedsim/params.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/trainer.hpp"

using namespace fedsim;
using namespace fedsim::learn;

namespace {

data::Batch random_batch(size_t n, uint32_t feature_dim, uint32_t n_classes, rng::SplitMix64& g) {
    data::Batch b;
    b.feature_dim = feature_dim;
    for (size_t i = 0; i < n; ++i) {
        for (uint32_t f = 0; f < feature_dim; ++f) b.features.push_back(g.next_normal());
        b.labels.push_back(static_cast<uint16_t>(g.next_below(n_classes)));
    }
    return b;
}

ParamVector random_params(const ModelSpec& spec, rng::SplitMix64& g) {
    ParamVector p(param_shapes(spec));
    for (auto& v : p.values) v = 0.5 * g.next_normal();
    return p;
}

/// Central-difference gradient check of every coordinate.
void check_gradient(const ModelSpec& spec, const ParamVector& params, const data::Batch& batch) {
    const double h = 1e-5;
    auto lg = loss_and_grad(spec, params, batch);
    REQUIRE(lg.grad.size() == params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        ParamVector lo = params, hi = params;
        lo.values[i] -= h;
        hi.values[i] += h;
        const double fd = (loss_only(spec, hi, batch) - loss_only(spec, lo, batch)) / (2 * h);
        const double g = lg.grad.values[i];
        const double denom = std::max({1.0, std::fabs(g), std::fabs(fd)});
        CHECK(std::fabs(g - fd) / denom < 1e-4);
    }
}

}  // namespace

TEST_CASE("param shapes and counts") {
    ModelSpec softmax = SoftmaxSpec{3, 2};
    CHECK(param_shapes(softmax) == std::vector<LayerShape>{{3, 2}, {1, 2}});
    CHECK(param_count(softmax) == 8);
    CHECK(output_classes(softmax) == 2);
    CHECK(input_dim(softmax) == 3);
    auto r = last_layer_range(softmax);
    CHECK(r.offset == 0);
    CHECK(r.count == 8);

    ModelSpec mlp = MlpSpec{4, 5, 3};
    CHECK(param_shapes(mlp) == std::vector<LayerShape>{{4, 5}, {1, 5}, {5, 3}, {1, 3}});
    CHECK(param_count(mlp) == 43);
    auto rm = last_layer_range(mlp);
    CHECK(rm.offset == 25);
    CHECK(rm.count == 18);
}

TEST_CASE("init_params: glorot bounds, zero biases, seed determinism") {
    ModelSpec mlp = MlpSpec{6, 4, 3};
    auto p = init_params(mlp, 7);
    REQUIRE(p.shapes == param_shapes(mlp));
    const double s0 = std::sqrt(6.0 / (6 + 4));
    for (double v : p.layer(0)) {
        CHECK(std::fabs(v) < s0);
        CHECK(v != 0.0);
    }
    for (double v : p.layer(1)) CHECK(v == 0.0);
    const double s1 = std::sqrt(6.0 / (4 + 3));
    for (double v : p.layer(2)) CHECK(std::fabs(v) < s1);
    for (double v : p.layer(3)) CHECK(v == 0.0);

    CHECK(init_params(mlp, 7) == p);
    CHECK(init_params(mlp, 8) != p);
    CHECK(p.all_finite());
}

TEST_CASE("zero-weight softmax loss is ln(n_classes)") {
    ModelSpec spec = SoftmaxSpec{5, 7};
    ParamVector zero(param_shapes(spec));
    rng::SplitMix64 g(11);
    auto batch = random_batch(13, 5, 7, g);
    CHECK(loss_only(spec, zero, batch) == doctest::Approx(std::log(7.0)).epsilon(1e-14));
}

TEST_CASE("analytic gradients match central differences") {
    rng::SplitMix64 g(2026);
    for (int trial = 0; trial < 50; ++trial) {
        const auto dim = static_cast<uint32_t>(2 + g.next_below(5));
        const auto classes = static_cast<uint32_t>(2 + g.next_below(4));
        ModelSpec spec = SoftmaxSpec{dim, classes};
        auto params = random_params(spec, g);
        auto batch = random_batch(1 + g.next_below(7), dim, classes, g);
        check_gradient(spec, params, batch);
    }
    for (int trial = 0; trial < 50; ++trial) {
        const auto dim = static_cast<uint32_t>(2 + g.next_below(5));
        const auto hidden = static_cast<uint32_t>(2 + g.next_below(5));
        const auto classes = static_cast<uint32_t>(2 + g.next_below(4));
        ModelSpec spec = MlpSpec{dim, hidden, classes};
        auto params = random_params(spec, g);
        auto batch = random_batch(1 + g.next_below(7), dim, classes, g);
        check_gradient(spec, params, batch);
    }
}

TEST_CASE("hand-derived single softmax step") {
    // One sample x = (1, -1, 0.5), y = 1, two classes, zero-initialized
    // params. Probabilities are (1/2, 1/2), so dlogits = (1/2, -1/2) and the
    // weight gradient is x (outer) dlogits, feature-major.
    ModelSpec spec = SoftmaxSpec{3, 2};
    data::Dataset d;
    d.name = "hand";
    d.feature_dim = 3;
    d.n_classes = 2;
    d.features = {1.0f, -1.0f, 0.5f};
    d.labels = {1};
    data::DataView view(data::view_of(d), {0}, 0);

    TrainerConfig cfg;
    cfg.lr = 0.1;
    cfg.local_epochs = 1;
    cfg.batch_size = 64;
    ParamVector zero(param_shapes(spec));
    auto out = local_train(spec, zero, view, cfg, 99);

    CHECK(out.tau == 1);
    CHECK(out.n_samples == 1);
    CHECK(out.full_batch_fallback);
    const std::vector<double> expect = {
        -(0.1 * 0.5),  0.1 * 0.5,        // feature 0 row
        0.1 * 0.5,     -(0.1 * 0.5),     // feature 1 row
        -(0.1 * 0.25), 0.1 * 0.25,       // feature 2 row
        -(0.1 * 0.5),  0.1 * 0.5,        // bias
    };
    REQUIRE(out.params.values.size() == expect.size());
    for (size_t i = 0; i < expect.size(); ++i) CHECK(out.params.values[i] == expect[i]);
}

TEST_CASE("local_train: lr 0 leaves params bitwise unchanged") {
    auto d = data::generate_synthetic(3, 20, 4, 5);
    std::vector<uint32_t> all(d.n_samples());
    for (uint32_t i = 0; i < all.size(); ++i) all[i] = i;
    data::DataView view(data::view_of(d), all, 0);

    ModelSpec spec = SoftmaxSpec{4, 3};
    auto start = init_params(spec, 1);
    TrainerConfig cfg;
    cfg.lr = 0.0;
    auto out = local_train(spec, start, view, cfg, 3);
    CHECK(out.params == start);
    CHECK(out.tau == planned_steps(cfg, d.n_samples()));
}

TEST_CASE("local_train: seed determinism") {
    auto d = data::generate_synthetic(3, 30, 4, 5);
    std::vector<uint32_t> all(d.n_samples());
    for (uint32_t i = 0; i < all.size(); ++i) all[i] = i;
    data::DataView view(data::view_of(d), all, 0);
    ModelSpec spec = SoftmaxSpec{4, 3};
    auto start = init_params(spec, 1);
    TrainerConfig cfg;
    cfg.batch_size = 16;

    auto a = local_train(spec, start, view, cfg, 42);
    auto b = local_train(spec, start, view, cfg, 42);
    auto c = local_train(spec, start, view, cfg, 43);
    CHECK(a.params == b.params);
    CHECK(a.params != c.params);
    CHECK(a.tau == planned_steps(cfg, d.n_samples()));
}

TEST_CASE("prox with mu 0 is bitwise the plain trainer") {
    auto d = data::generate_synthetic(3, 25, 4, 9);
    std::vector<uint32_t> all(d.n_samples());
    for (uint32_t i = 0; i < all.size(); ++i) all[i] = i;
    data::DataView view(data::view_of(d), all, 0);
    ModelSpec spec = SoftmaxSpec{4, 3};
    auto start = init_params(spec, 2);

    TrainerConfig plain;
    plain.batch_size = 32;
    TrainerConfig prox = plain;
    prox.variant = ProxVariant{0.0};
    TrainerConfig prox_on = plain;
    prox_on.variant = ProxVariant{0.5};

    auto a = local_train(spec, start, view, plain, 7);
    auto b = local_train(spec, start, view, prox, 7);
    auto c = local_train(spec, start, view, prox_on, 7);
    CHECK(a.params == b.params);
    CHECK(a.params != c.params);
}

TEST_CASE("pfedme produces a personalized vector and counts outer steps") {
    auto d = data::generate_synthetic(3, 25, 4, 9);
    std::vector<uint32_t> all(d.n_samples());
    for (uint32_t i = 0; i < all.size(); ++i) all[i] = i;
    data::DataView view(data::view_of(d), all, 0);
    ModelSpec spec = SoftmaxSpec{4, 3};
    auto start = init_params(spec, 2);

    TrainerConfig cfg;
    cfg.batch_size = 32;
    cfg.variant = PfedmeVariant{2.0, 3};
    auto out = local_train(spec, start, view, cfg, 7);
    REQUIRE(out.personalized.has_value());
    CHECK(out.tau == planned_steps(cfg, d.n_samples()));
    CHECK(out.params != start);
    CHECK(*out.personalized != out.params);

    // Carrying theta into the next round changes the result.
    auto next_warm = local_train(spec, out.params, view, cfg, 8, &*out.personalized);
    auto next_cold = local_train(spec, out.params, view, cfg, 8);
    CHECK(next_warm.params != next_cold.params);
}

TEST_CASE("local_train rejects an empty shard") {
    auto d = data::generate_synthetic(2, 5, 3, 1);
    data::DataView view(data::view_of(d), {}, 0);
    ModelSpec spec = SoftmaxSpec{3, 2};
    ParamVector zero(param_shapes(spec));
    CHECK_THROWS_AS(local_train(spec, zero, view, TrainerConfig{}, 1), ConfigError);
}

TEST_CASE("planned_steps") {
    TrainerConfig cfg;  // epochs 2, batch 64
    CHECK(planned_steps(cfg, 100) == 4);
    CHECK(planned_steps(cfg, 30) == 2);
    CHECK(planned_steps(cfg, 64) == 2);
    CHECK(planned_steps(cfg, 65) == 4);
    cfg.local_epochs = 1;
    cfg.batch_size = 1;
    CHECK(planned_steps(cfg, 3) == 3);
}

TEST_CASE("evaluate: tie-break to lowest class, per-class NaN when absent") {
    ModelSpec spec = SoftmaxSpec{2, 2};
    ParamVector zero(param_shapes(spec));
    data::Batch b;
    b.feature_dim = 2;
    b.features = {1.0, 0.0, 0.0, 1.0};
    b.labels = {0, 1};
    auto r = evaluate(spec, zero, b);
    CHECK(r.accuracy == 0.5);  // all-equal logits predict class 0
    CHECK(r.mean_loss == std::log(2.0));
    REQUIRE(r.per_class_accuracy.size() == 2);
    CHECK(r.per_class_accuracy[0] == 1.0);
    CHECK(r.per_class_accuracy[1] == 0.0);

    ModelSpec spec3 = SoftmaxSpec{2, 3};
    ParamVector zero3(param_shapes(spec3));
    data::Batch only0;
    only0.feature_dim = 2;
    only0.features = {1.0, 2.0};
    only0.labels = {0};
    auto r3 = evaluate(spec3, zero3, only0);
    CHECK(r3.per_class_accuracy[0] == 1.0);
    CHECK(std::isnan(r3.per_class_accuracy[1]));
    CHECK(std::isnan(r3.per_class_accuracy[2]));
}

TEST_CASE("evaluate: hand-built perfect classifier") {
    ModelSpec spec = SoftmaxSpec{2, 2};
    ParamVector p(param_shapes(spec));
    // Feature-major weights: strong diagonal.
    p.values = {10.0, -10.0, -10.0, 10.0, 0.0, 0.0};
    data::Batch b;
    b.feature_dim = 2;
    b.features = {1.0, 0.0, 0.0, 1.0, 0.7, 0.1};
    b.labels = {0, 1, 0};
    auto r = evaluate(spec, p, b);
    CHECK(r.accuracy == 1.0);
    CHECK(r.per_class_accuracy[0] == 1.0);
    CHECK(r.per_class_accuracy[1] == 1.0);
}

TEST_CASE("apply_mask") {
    ModelSpec spec = MlpSpec{4, 5, 3};
    ParamVector base(param_shapes(spec));
    ParamVector update(param_shapes(spec));
    for (size_t i = 0; i < base.size(); ++i) {
        base.values[i] = static_cast<double>(i);
        update.values[i] = 1000.0 + static_cast<double>(i);
    }

    SUBCASE("full mask returns the update verbatim") {
        auto out = apply_mask(update, base, UpdateMask{true, 0, 0});
        CHECK(out == update);
    }
    SUBCASE("partial mask overwrites only the range") {
        auto range = last_layer_range(spec);
        CHECK(range.offset == 25);
        CHECK(range.count == 18);
        auto out = apply_mask(update, base, UpdateMask{false, range.offset, range.count});
        for (size_t i = 0; i < 25; ++i) CHECK(out.values[i] == base.values[i]);
        for (size_t i = 25; i < 43; ++i) CHECK(out.values[i] == update.values[i]);
    }
    SUBCASE("out-of-range mask throws") {
        CHECK_THROWS_AS(apply_mask(update, base, UpdateMask{false, 40, 10}), ConfigError);
    }
    SUBCASE("shape mismatch throws") {
        ParamVector other(param_shapes(ModelSpec{SoftmaxSpec{4, 3}}));
        CHECK_THROWS_AS(apply_mask(other, base, UpdateMask{true, 0, 0}), ConfigError);
    }
}

TEST_CASE("param serialization: golden bytes") {
    ParamVector p({{1, 2}});
    p.values = {1.0, -2.0};
    auto bytes = serialize(p);
    const std::vector<uint8_t> expect = {
        1, 0, 0, 0,                       // layer count
        1, 0, 0, 0, 2, 0, 0, 0,           // rows, cols
        0, 0, 0, 0, 0, 0, 0xF0, 0x3F,     // 1.0 LE
        0, 0, 0, 0, 0, 0, 0,    0xC0,     // -2.0 LE
    };
    CHECK(bytes == expect);
    auto back = deserialize(bytes);
    CHECK(back == p);
}

TEST_CASE("param serialization: round-trips every bit pattern") {
    rng::SplitMix64 g(77);
    for (int trial = 0; trial < 50; ++trial) {
        const uint32_t n_layers = 1 + static_cast<uint32_t>(g.next_below(4));
        std::vector<LayerShape> shapes;
        for (uint32_t l = 0; l < n_layers; ++l)
            shapes.push_back({1 + static_cast<uint32_t>(g.next_below(5)),
                              1 + static_cast<uint32_t>(g.next_below(5))});
        ParamVector p(shapes);
        for (auto& v : p.values) {
            uint64_t bits = g.next_u64();  // includes NaN / inf patterns
            std::memcpy(&v, &bits, sizeof v);
        }
        auto bytes = serialize(p);
        auto back = deserialize(bytes);
        CHECK(serialize(back) == bytes);  // bit-for-bit, NaN-safe comparison
        CHECK(back.shapes == p.shapes);
    }
}

TEST_CASE("param deserialization rejects malformed input") {
    ParamVector p({{2, 2}});
    p.values = {1, 2, 3, 4};
    auto bytes = serialize(p);
    CHECK_THROWS_AS(deserialize(std::span(bytes).subspan(0, bytes.size() - 1)), TransportError);
    CHECK_THROWS_AS(deserialize(std::span(bytes).subspan(0, 3)), TransportError);
    auto extra = bytes;
    extra.push_back(0);
    CHECK_THROWS_AS(deserialize(extra), TransportError);
}
