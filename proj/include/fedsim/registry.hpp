#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedsim/aggregate.hpp"
#include "fedsim/dataset.hpp"
#include "fedsim/model.hpp"
#include "fedsim/scheduler.hpp"
#include "fedsim/trainer.hpp"

namespace fedsim::cfg {

enum class ModeKind { sequential, concurrent, multiprocess, distributed };
const char* mode_name(ModeKind kind);

struct NodeAddr {
    std::string host;
    uint16_t port = 7607;
    uint32_t clients = 0;
    bool operator==(const NodeAddr&) const = default;
};

struct ModeSpec {
    ModeKind kind = ModeKind::sequential;
    uint32_t workers_per_process = 1;  // multiprocess only
    std::vector<NodeAddr> nodes;       // distributed only
};

struct QueueSpec {
    std::string type = "memory";
};

/// Ambient values module factories may draw defaults from: the global seed
/// and, for model factories, the dims of the already-built dataset.
struct BuildContext {
    uint64_t seed = 0;
    uint32_t feature_dim = 0;
    uint32_t n_classes = 0;
};

/// Dotted-path namespace tree behind every registry slot. Registration is
/// write-once; lookup errors list all registered names plus the nearest
/// candidate by edit distance.
class PathTree {
public:
    explicit PathTree(std::string category) : category_(std::move(category)) {}
    /// Returns the slot index for the new leaf (registration order).
    size_t add(const std::string& dotted);
    size_t find(const std::string& dotted) const;
    std::vector<std::string> names() const;
    const std::string& category() const { return category_; }

private:
    struct Node {
        std::map<std::string, Node> children;
        std::optional<size_t> leaf;
    };
    std::string category_;
    Node root_;
    size_t count_ = 0;
};

/// One registry category: name -> factory producing a configured T.
template <typename T>
class Slot {
public:
    using Factory = std::function<T(const nlohmann::json& params, const BuildContext& ctx)>;

    explicit Slot(std::string category) : tree_(std::move(category)) {}

    void add(const std::string& name, Factory f) {
        size_t idx = tree_.add(name);
        factories_.resize(std::max(factories_.size(), idx + 1));
        factories_[idx] = std::move(f);
    }

    T make(const std::string& name, const nlohmann::json& params, const BuildContext& ctx) const {
        return factories_[tree_.find(name)](params, ctx);
    }

    std::vector<std::string> names() const { return tree_.names(); }

private:
    PathTree tree_;
    std::vector<Factory> factories_;
};

/// The module locator: per-category write-once factories keyed by the dotted
/// names configs use. Built-ins are registered by default_registry(); user
/// code may add more before assembly.
struct Registry {
    Slot<std::shared_ptr<fed::Scheduler>> scheduler{"scheduler"};
    Slot<std::shared_ptr<fed::Aggregator>> aggregator{"aggregator"};
    Slot<learn::TrainerConfig> trainer{"trainer"};
    Slot<learn::ModelSpec> model{"model"};
    Slot<data::Dataset> dataset{"dataset"};
    Slot<ModeSpec> mode{"mode"};
    Slot<QueueSpec> queue{"queue"};
};

/// All built-in modules:
///   scheduler: random{fraction=1.0, seed=global}, round_robin{fraction=1.0}
///   aggregator: fedavg, fednova, fedadam{beta1=.9, beta2=.99,
///     eta_server=.01, tau_adapt=1e-3}, fedasync{alpha=.6, a=.5},
///     buffered{k=2}, pfedme{beta=1.0}
///   trainer: sgd | prox{mu=.01} | pfedme{lambda=1.0, inner_steps=1}, all
///     with lr=.01, local_epochs=2, batch_size=64, mask_period=0 (full)
///   model: softmax, mlp{hidden_dim=32}
///   dataset: synthetic{n_classes=10, per_class=300, feature_dim=16,
///     seed=global}, file{path}
///   mode: sequential, concurrent, multiprocess{workers_per_process=1},
///     distributed{nodes=[{address, clients}]}
///   queue: memory
const Registry& default_registry();

}  // namespace fedsim::cfg
