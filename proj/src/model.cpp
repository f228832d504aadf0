#include "fedsim/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"

namespace fedsim::learn {

std::vector<LayerShape> param_shapes(const ModelSpec& spec) {
    if (const auto* s = std::get_if<SoftmaxSpec>(&spec)) {
        return {{s->feature_dim, s->n_classes}, {1, s->n_classes}};
    }
    const auto& m = std::get<MlpSpec>(spec);
    return {{m.feature_dim, m.hidden_dim},
            {1, m.hidden_dim},
            {m.hidden_dim, m.n_classes},
            {1, m.n_classes}};
}

size_t param_count(const ModelSpec& spec) {
    size_t total = 0;
    for (const auto& sh : param_shapes(spec)) total += sh.size();
    return total;
}

uint32_t output_classes(const ModelSpec& spec) {
    return std::visit([](const auto& s) { return s.n_classes; }, spec);
}

uint32_t input_dim(const ModelSpec& spec) {
    return std::visit([](const auto& s) { return s.feature_dim; }, spec);
}

ParamRange last_layer_range(const ModelSpec& spec) {
    auto shapes = param_shapes(spec);
    size_t total = 0;
    for (const auto& sh : shapes) total += sh.size();
    // final weight + bias pair
    size_t last = shapes[shapes.size() - 2].size() + shapes[shapes.size() - 1].size();
    return {total - last, last};
}

ParamVector init_params(const ModelSpec& spec, uint64_t seed) {
    ParamVector p(param_shapes(spec));
    rng::SplitMix64 g(seed);
    for (size_t l = 0; l < p.shapes.size(); l += 2) {
        auto w = p.layer(l);
        const double fan_in = p.shapes[l].rows;
        const double fan_out = p.shapes[l].cols;
        const double s = std::sqrt(6.0 / (fan_in + fan_out));
        for (auto& v : w) v = (2.0 * g.next_double() - 1.0) * s;
        // bias layer l+1 stays zero
    }
    return p;
}

namespace {

void check_batch(const ModelSpec& spec, const ParamVector& params, const data::Batch& batch) {
    if (batch.size() == 0) throw ConfigError("learn: empty batch");
    if (batch.feature_dim != input_dim(spec))
        throw ConfigError("learn: batch feature_dim " + std::to_string(batch.feature_dim) +
                          " does not match model input " + std::to_string(input_dim(spec)));
    if (params.shapes != param_shapes(spec))
        throw ConfigError("learn: parameter shapes do not match model spec");
}

/// Forward pass for sample x; fills logits and, for the MLP, the hidden
/// activations (hidden may be empty for softmax).
void forward_logits(const ModelSpec& spec, const ParamVector& params, const double* x,
                    std::vector<double>& hidden, std::vector<double>& logits) {
    if (const auto* s = std::get_if<SoftmaxSpec>(&spec)) {
        auto W = params.layer(0);
        auto b = params.layer(1);
        const uint32_t d = s->feature_dim, k = s->n_classes;
        for (uint32_t c = 0; c < k; ++c) {
            double z = b[c];
            for (uint32_t f = 0; f < d; ++f) z += x[f] * W[f * k + c];
            logits[c] = z;
        }
        return;
    }
    const auto& m = std::get<MlpSpec>(spec);
    auto W1 = params.layer(0);
    auto b1 = params.layer(1);
    auto W2 = params.layer(2);
    auto b2 = params.layer(3);
    const uint32_t d = m.feature_dim, h = m.hidden_dim, k = m.n_classes;
    for (uint32_t j = 0; j < h; ++j) {
        double z = b1[j];
        for (uint32_t f = 0; f < d; ++f) z += x[f] * W1[f * h + j];
        hidden[j] = std::tanh(z);
    }
    for (uint32_t c = 0; c < k; ++c) {
        double z = b2[c];
        for (uint32_t j = 0; j < h; ++j) z += hidden[j] * W2[j * k + c];
        logits[c] = z;
    }
}

/// logits <- softmax probabilities in place; returns -log p[label].
double softmax_ce(std::vector<double>& logits, uint16_t label) {
    double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double& v : logits) {
        v = std::exp(v - mx);
        sum += v;
    }
    double loss = -std::log(logits[label] / sum);
    for (double& v : logits) v /= sum;
    return loss;
}

}  // namespace

LossGrad loss_and_grad(const ModelSpec& spec, const ParamVector& params, const data::Batch& batch) {
    check_batch(spec, params, batch);
    const size_t bsz = batch.size();
    const double inv_b = 1.0 / static_cast<double>(bsz);
    const uint32_t k = output_classes(spec);
    const uint32_t d = input_dim(spec);
    const bool is_mlp = std::holds_alternative<MlpSpec>(spec);
    const uint32_t h = is_mlp ? std::get<MlpSpec>(spec).hidden_dim : 0;

    LossGrad out;
    out.grad = ParamVector(params.shapes);
    std::vector<double> hidden(h), logits(k), dhidden(h);

    for (size_t i = 0; i < bsz; ++i) {
        const double* x = batch.features.data() + i * d;
        forward_logits(spec, params, x, hidden, logits);
        out.loss += softmax_ce(logits, batch.labels[i]);
        logits[batch.labels[i]] -= 1.0;  // now dlogits

        if (!is_mlp) {
            auto gW = out.grad.layer(0);
            auto gb = out.grad.layer(1);
            for (uint32_t c = 0; c < k; ++c) {
                const double dl = logits[c] * inv_b;
                gb[c] += dl;
                for (uint32_t f = 0; f < d; ++f) gW[f * k + c] += x[f] * dl;
            }
            continue;
        }
        auto W2 = params.layer(2);
        auto gW1 = out.grad.layer(0);
        auto gb1 = out.grad.layer(1);
        auto gW2 = out.grad.layer(2);
        auto gb2 = out.grad.layer(3);
        std::fill(dhidden.begin(), dhidden.end(), 0.0);
        for (uint32_t c = 0; c < k; ++c) {
            const double dl = logits[c] * inv_b;
            gb2[c] += dl;
            for (uint32_t j = 0; j < h; ++j) {
                gW2[j * k + c] += hidden[j] * dl;
                dhidden[j] += W2[j * k + c] * dl;
            }
        }
        for (uint32_t j = 0; j < h; ++j) {
            const double dz = dhidden[j] * (1.0 - hidden[j] * hidden[j]);
            gb1[j] += dz;
            for (uint32_t f = 0; f < d; ++f) gW1[f * h + j] += x[f] * dz;
        }
    }
    out.loss *= inv_b;
    return out;
}

double loss_only(const ModelSpec& spec, const ParamVector& params, const data::Batch& batch) {
    check_batch(spec, params, batch);
    const uint32_t k = output_classes(spec);
    const uint32_t d = input_dim(spec);
    const uint32_t h = std::holds_alternative<MlpSpec>(spec) ? std::get<MlpSpec>(spec).hidden_dim : 0;
    std::vector<double> hidden(h), logits(k);
    double loss = 0.0;
    for (size_t i = 0; i < batch.size(); ++i) {
        forward_logits(spec, params, batch.features.data() + i * d, hidden, logits);
        loss += softmax_ce(logits, batch.labels[i]);
    }
    return loss / static_cast<double>(batch.size());
}

EvalResult evaluate(const ModelSpec& spec, const ParamVector& params, const data::Batch& batch) {
    check_batch(spec, params, batch);
    const uint32_t k = output_classes(spec);
    const uint32_t d = input_dim(spec);
    const uint32_t h = std::holds_alternative<MlpSpec>(spec) ? std::get<MlpSpec>(spec).hidden_dim : 0;
    std::vector<double> hidden(h), logits(k);
    std::vector<uint64_t> correct(k, 0), total(k, 0);
    double loss = 0.0;

    for (size_t i = 0; i < batch.size(); ++i) {
        forward_logits(spec, params, batch.features.data() + i * d, hidden, logits);
        uint32_t pred = 0;
        for (uint32_t c = 1; c < k; ++c)
            if (logits[c] > logits[pred]) pred = c;
        loss += softmax_ce(logits, batch.labels[i]);
        const uint16_t y = batch.labels[i];
        total[y] += 1;
        if (pred == y) correct[y] += 1;
    }

    EvalResult r;
    r.mean_loss = loss / static_cast<double>(batch.size());
    uint64_t hits = 0;
    r.per_class_accuracy.resize(k);
    for (uint32_t c = 0; c < k; ++c) {
        hits += correct[c];
        r.per_class_accuracy[c] = total[c] == 0
                                      ? std::numeric_limits<double>::quiet_NaN()
                                      : static_cast<double>(correct[c]) / static_cast<double>(total[c]);
    }
    r.accuracy = static_cast<double>(hits) / static_cast<double>(batch.size());
    return r;
}

}  // namespace fedsim::learn
