#include "fedsim/registry.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "fedsim/errors.hpp"
#include "fedsim/jsonio.hpp"
#include "fedsim/rng.hpp"

namespace fedsim::cfg {

const char* mode_name(ModeKind kind) {
    switch (kind) {
        case ModeKind::sequential: return "sequential";
        case ModeKind::concurrent: return "concurrent";
        case ModeKind::multiprocess: return "multiprocess";
        case ModeKind::distributed: return "distributed";
    }
    return "?";
}

namespace {

std::vector<std::string> split_path(const std::string& category, const std::string& dotted) {
    if (dotted.empty()) throw ConfigError(category + ": module name must be non-empty");
    std::vector<std::string> segs;
    std::string cur;
    for (char c : dotted) {
        if (c == '.') {
            if (cur.empty())
                throw ConfigError(category + ": malformed module name \"" + dotted + "\"");
            segs.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (cur.empty()) throw ConfigError(category + ": malformed module name \"" + dotted + "\"");
    segs.push_back(std::move(cur));
    return segs;
}

size_t edit_distance(const std::string& a, const std::string& b) {
    std::vector<size_t> row(b.size() + 1);
    for (size_t j = 0; j <= b.size(); ++j) row[j] = j;
    for (size_t i = 1; i <= a.size(); ++i) {
        size_t diag = row[0];
        row[0] = i;
        for (size_t j = 1; j <= b.size(); ++j) {
            size_t next = std::min({row[j] + 1, row[j - 1] + 1,
                                    diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
            diag = row[j];
            row[j] = next;
        }
    }
    return row[b.size()];
}

}  // namespace

size_t PathTree::add(const std::string& dotted) {
    auto segs = split_path(category_, dotted);
    Node* node = &root_;
    for (size_t i = 0; i < segs.size(); ++i) {
        if (node->leaf)
            throw ConfigError(category_ + ": \"" + dotted +
                              "\" conflicts with an already registered module");
        node = &node->children[segs[i]];
    }
    if (node->leaf || !node->children.empty())
        throw ConfigError(category_ + ": module \"" + dotted + "\" already registered");
    node->leaf = count_++;
    return *node->leaf;
}

size_t PathTree::find(const std::string& dotted) const {
    auto segs = split_path(category_, dotted);
    const Node* node = &root_;
    bool lost = false;
    for (const auto& seg : segs) {
        auto it = node->children.find(seg);
        if (it == node->children.end()) {
            lost = true;
            break;
        }
        node = &it->second;
    }
    if (!lost && node->leaf) return *node->leaf;

    auto all = names();
    std::ostringstream msg;
    msg << category_ << ": unknown module \"" << dotted << "\"";
    std::string best;
    size_t best_d = SIZE_MAX;
    for (const auto& n : all) {
        size_t d = edit_distance(dotted, n);
        if (d < best_d) {
            best_d = d;
            best = n;
        }
    }
    if (!best.empty() && best_d <= std::max<size_t>(2, best.size() / 3))
        msg << "; did you mean \"" << best << "\"?";
    msg << " available: ";
    for (size_t i = 0; i < all.size(); ++i) msg << (i ? ", " : "") << all[i];
    throw ConfigError(msg.str());
}

std::vector<std::string> PathTree::names() const {
    std::vector<std::string> out;
    std::function<void(const Node&, const std::string&)> walk = [&](const Node& node,
                                                                    const std::string& prefix) {
        if (node.leaf) out.push_back(prefix);
        for (const auto& [seg, child] : node.children)
            walk(child, prefix.empty() ? seg : prefix + "." + seg);
    };
    walk(root_, "");
    std::sort(out.begin(), out.end());
    return out;
}

namespace {

using nlohmann::json;

jsonio::Obj params_obj(const std::string& category, const std::string& name, const json& params) {
    return jsonio::Obj(category + "." + name, params);
}

void register_schedulers(Registry& r) {
    r.scheduler.add("random", [](const json& params, const BuildContext& ctx) {
        auto p = params_obj("scheduler", "random", params);
        double fraction = p.num("fraction", 1.0);
        uint64_t seed = p.u64("seed", ctx.seed);
        p.done();
        return std::shared_ptr<fed::Scheduler>(new fed::RandomScheduler(fraction, seed));
    });
    r.scheduler.add("round_robin", [](const json& params, const BuildContext&) {
        auto p = params_obj("scheduler", "round_robin", params);
        double fraction = p.num("fraction", 1.0);
        p.done();
        return std::shared_ptr<fed::Scheduler>(new fed::RoundRobinScheduler(fraction));
    });
}

void register_aggregators(Registry& r) {
    r.aggregator.add("fedavg", [](const json& params, const BuildContext&) {
        params_obj("aggregator", "fedavg", params).done();
        return std::shared_ptr<fed::Aggregator>(new fed::FedavgAggregator());
    });
    r.aggregator.add("fednova", [](const json& params, const BuildContext&) {
        params_obj("aggregator", "fednova", params).done();
        return std::shared_ptr<fed::Aggregator>(new fed::FednovaAggregator());
    });
    r.aggregator.add("fedadam", [](const json& params, const BuildContext&) {
        auto p = params_obj("aggregator", "fedadam", params);
        double beta1 = p.num("beta1", 0.9);
        double beta2 = p.num("beta2", 0.99);
        double eta = p.num("eta_server", 0.01);
        double tau = p.num("tau_adapt", 1e-3);
        p.done();
        return std::shared_ptr<fed::Aggregator>(new fed::FedadamAggregator(beta1, beta2, eta, tau));
    });
    r.aggregator.add("fedasync", [](const json& params, const BuildContext&) {
        auto p = params_obj("aggregator", "fedasync", params);
        double alpha = p.num("alpha", 0.6);
        double a = p.num("a", 0.5);
        p.done();
        return std::shared_ptr<fed::Aggregator>(new fed::FedasyncAggregator(alpha, a));
    });
    r.aggregator.add("buffered", [](const json& params, const BuildContext&) {
        auto p = params_obj("aggregator", "buffered", params);
        uint32_t k = p.u32_pos("k", 2);
        p.done();
        return std::shared_ptr<fed::Aggregator>(new fed::BufferedAggregator(k));
    });
    r.aggregator.add("pfedme", [](const json& params, const BuildContext&) {
        auto p = params_obj("aggregator", "pfedme", params);
        double beta = p.num("beta", 1.0);
        p.done();
        return std::shared_ptr<fed::Aggregator>(new fed::PfedmeAggregator(beta));
    });
}

learn::TrainerConfig common_trainer(jsonio::Obj& p, learn::TrainerVariant variant) {
    learn::TrainerConfig cfg;
    cfg.lr = p.num("lr", 0.01);
    cfg.local_epochs = p.u32_pos("local_epochs", 2);
    cfg.batch_size = p.u32_pos("batch_size", 64);
    cfg.variant = std::move(variant);
    uint64_t period = p.u64("mask_period", 0);
    if (period == 0) {
        cfg.mask_policy = {learn::MaskPolicy::Kind::full, 1};
    } else {
        cfg.mask_policy = {learn::MaskPolicy::Kind::partial_last_layer,
                           static_cast<uint32_t>(period)};
    }
    if (cfg.lr <= 0.0) throw ConfigError(p.path() + ".lr: must be positive");
    return cfg;
}

void register_trainers(Registry& r) {
    r.trainer.add("sgd", [](const json& params, const BuildContext&) {
        auto p = params_obj("trainer", "sgd", params);
        auto cfg = common_trainer(p, learn::PlainVariant{});
        p.done();
        return cfg;
    });
    r.trainer.add("prox", [](const json& params, const BuildContext&) {
        auto p = params_obj("trainer", "prox", params);
        double mu = p.num("mu", 0.01);
        if (mu < 0.0) throw ConfigError("trainer.prox.mu: must be non-negative");
        auto cfg = common_trainer(p, learn::ProxVariant{mu});
        p.done();
        return cfg;
    });
    r.trainer.add("pfedme", [](const json& params, const BuildContext&) {
        auto p = params_obj("trainer", "pfedme", params);
        double lambda = p.num("lambda", 1.0);
        uint32_t inner = p.u32_pos("inner_steps", 1);
        if (lambda <= 0.0) throw ConfigError("trainer.pfedme.lambda: must be positive");
        auto cfg = common_trainer(p, learn::PfedmeVariant{lambda, inner});
        p.done();
        return cfg;
    });
}

void register_models(Registry& r) {
    r.model.add("softmax", [](const json& params, const BuildContext& ctx) {
        params_obj("model", "softmax", params).done();
        return learn::ModelSpec(learn::SoftmaxSpec{ctx.feature_dim, ctx.n_classes});
    });
    r.model.add("mlp", [](const json& params, const BuildContext& ctx) {
        auto p = params_obj("model", "mlp", params);
        uint32_t hidden = p.u32_pos("hidden_dim", 32);
        p.done();
        return learn::ModelSpec(learn::MlpSpec{ctx.feature_dim, hidden, ctx.n_classes});
    });
}

void register_datasets(Registry& r) {
    r.dataset.add("synthetic", [](const json& params, const BuildContext& ctx) {
        auto p = params_obj("dataset", "synthetic", params);
        uint32_t n_classes = p.u32_pos("n_classes", 10);
        uint32_t per_class = p.u32_pos("per_class", 300);
        uint32_t feature_dim = p.u32_pos("feature_dim", 16);
        uint64_t seed = p.u64("seed", ctx.seed);
        p.done();
        return data::generate_synthetic(n_classes, per_class, feature_dim, seed);
    });
    r.dataset.add("file", [](const json& params, const BuildContext&) {
        auto p = params_obj("dataset", "file", params);
        std::string path = p.str_req("path");
        p.done();
        std::ifstream in(path, std::ios::binary);
        if (!in) throw ConfigError("dataset.file: cannot open \"" + path + "\"");
        std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
        return data::materialize(data::parse_store(bytes, path));
    });
}

void register_modes(Registry& r) {
    r.mode.add("sequential", [](const json& params, const BuildContext&) {
        params_obj("mode", "sequential", params).done();
        return ModeSpec{ModeKind::sequential, 1, {}};
    });
    r.mode.add("concurrent", [](const json& params, const BuildContext&) {
        params_obj("mode", "concurrent", params).done();
        return ModeSpec{ModeKind::concurrent, 1, {}};
    });
    r.mode.add("multiprocess", [](const json& params, const BuildContext&) {
        auto p = params_obj("mode", "multiprocess", params);
        uint32_t workers = p.u32_pos("workers_per_process", 1);
        p.done();
        return ModeSpec{ModeKind::multiprocess, workers, {}};
    });
    r.mode.add("distributed", [](const json& params, const BuildContext&) {
        auto p = params_obj("mode", "distributed", params);
        const nlohmann::json* nodes_j = p.opt("nodes");
        p.done();
        ModeSpec spec{ModeKind::distributed, 1, {}};
        if (nodes_j) {
            if (!nodes_j->is_array()) jsonio::type_error("mode.distributed.nodes", "array", *nodes_j);
            for (size_t i = 0; i < nodes_j->size(); ++i) {
                auto np = jsonio::Obj("mode.distributed.nodes[" + std::to_string(i) + "]",
                                      (*nodes_j)[i]);
                std::string address = np.str_req("address");
                uint32_t clients = np.u32_pos("clients", 1);
                np.done();
                NodeAddr node;
                node.clients = clients;
                auto colon = address.rfind(':');
                if (colon == std::string::npos) {
                    node.host = address;
                } else {
                    node.host = address.substr(0, colon);
                    try {
                        int port = std::stoi(address.substr(colon + 1));
                        if (port < 1 || port > 65535) throw std::out_of_range("port");
                        node.port = static_cast<uint16_t>(port);
                    } catch (const std::exception&) {
                        throw ConfigError(np.path() + ".address: bad port in \"" + address + "\"");
                    }
                }
                if (node.host.empty())
                    throw ConfigError(np.path() + ".address: empty host in \"" + address + "\"");
                spec.nodes.push_back(std::move(node));
            }
        }
        if (spec.nodes.empty()) throw ConfigError("distributed mode requires >=1 node");
        return spec;
    });
}

void register_queues(Registry& r) {
    r.queue.add("memory", [](const json& params, const BuildContext&) {
        params_obj("queue", "memory", params).done();
        return QueueSpec{"memory"};
    });
}

}  // namespace

const Registry& default_registry() {
    static const Registry* reg = [] {
        auto* r = new Registry();
        register_schedulers(*r);
        register_aggregators(*r);
        register_trainers(*r);
        register_models(*r);
        register_datasets(*r);
        register_modes(*r);
        register_queues(*r);
        return r;
    }();
    return *reg;
}

}  // namespace fedsim::cfg
