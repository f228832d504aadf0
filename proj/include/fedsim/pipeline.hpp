#pragma once

#include <functional>
#include <memory>
#include <optional>

#include "fedsim/aggregate.hpp"
#include "fedsim/codec.hpp"
#include "fedsim/dataset.hpp"
#include "fedsim/events.hpp"
#include "fedsim/model.hpp"
#include "fedsim/scheduler.hpp"
#include "fedsim/task.hpp"
#include "fedsim/trainer.hpp"

namespace fedsim::run {

// Topic map. Client-to-server traffic (registrations, updates) rides
// "updates"; server-to-client model broadcasts ride "global"; directives and
// shutdown ride "control". The server listens on updates+control, clients on
// global+control, matching the forwarding directions of the node adapters.
inline constexpr const char* topic_global = "global";
inline constexpr const char* topic_updates = "updates";
inline constexpr const char* topic_control = "control";

/// Control actions. "stop" is a directive to one client; "client_stopped"
/// and "client_failed" are notices a client leaves behind; "transport_down"
/// is an adapter's report of a lost node connection.
inline constexpr const char* act_stop = "stop";
inline constexpr const char* act_client_stopped = "client_stopped";
inline constexpr const char* act_client_failed = "client_failed";
inline constexpr const char* act_transport_down = "transport_down";

inline constexpr uint32_t server_id = 0;

/// Reports the current virtual clock; empty outside the sequential engine.
using VirtualClock = std::function<std::optional<uint64_t>()>;

// ---- Pure helpers (unit-tested directly) ----

/// Virtual slices one local training run costs:
/// ceil(base_train_cost * planned_steps / speed_factor).
uint64_t train_cost_slices(uint32_t base_train_cost, uint32_t steps, double speed_factor);

/// Whether the round that trained on base_version uploads the full vector.
bool full_upload(const learn::MaskPolicy& policy, uint64_t base_version);

/// Decodes a broadcast into a ParamVector with the model's shapes.
/// TransportError when the value count does not match the model.
learn::ParamVector decode_global(const comm::GlobalModelMsg& msg, const learn::ModelSpec& model);

/// Full update vector from a possibly-masked wire update: masked ranges are
/// pasted over a copy of the current global params.
learn::ParamVector reconstruct_update(const comm::UpdateMsg& msg,
                                      const learn::ParamVector& global);

/// The wire update for a trained vector under the round's mask decision.
comm::UpdateMsg make_update_msg(uint32_t client_id, uint64_t base_version,
                                const learn::TrainOutcome& outcome,
                                const learn::ModelSpec& model, const learn::MaskPolicy& policy);

// ---- Pipelines ----

/// Everything a client coroutine needs; the struct is copied into the
/// coroutine frame, so contexts stay valid however the driver schedules it.
struct ClientContext {
    comm::MessageQueue* mq = nullptr;
    std::shared_ptr<comm::Endpoint> endpoint;  // subscribed: global, control
    obs::EventLog* log = nullptr;
    VirtualClock vclock;
    uint32_t id = 0;
    uint64_t seed = 0;  // experiment seed; per-round streams derive from it
    learn::ModelSpec model;
    learn::TrainerConfig trainer;
    data::DataView data;
    double speed_factor = 1.0;
    uint32_t base_train_cost = 1;
    std::optional<uint32_t> stop_after_updates;  // scripted leave
};

/// Register -> (receive model -> train -> update)* -> stop. Training
/// failures never unwind the driver: the client publishes a client_failed
/// notice and exits, and the server turns that into the abort.
exec::ResumableTask client_pipeline(ClientContext ctx);

struct ServerResult {
    learn::ParamVector params;
    uint64_t version = 0;
    bool target_reached = false;
};

struct ServerContext {
    comm::MessageQueue* mq = nullptr;
    std::shared_ptr<comm::Endpoint> endpoint;  // subscribed: updates, control
    obs::EventLog* log = nullptr;
    VirtualClock vclock;
    uint64_t seed = 0;
    uint64_t rounds = 0;
    uint32_t client_count = 0;
    std::optional<double> target_accuracy;
    learn::ModelSpec model;
    std::shared_ptr<fed::Scheduler> scheduler;
    std::shared_ptr<fed::Aggregator> aggregator;
    data::Batch test_batch;  // held-out split, loaded once
    ServerResult* out = nullptr;  // runner-owned; filled before the task ends
};

/// Registration barrier, then the aggregator family's loop: sync rounds of
/// (select, broadcast, collect, reduce, evaluate); async/buffered free-run
/// merges until `rounds` aggregations happened. Ends with a shutdown
/// broadcast. A client that leaves mid-run shrinks the pool, unless the
/// scheduler requires full participation -- then the server aborts.
exec::ResumableTask server_pipeline(ServerContext ctx);

}  // namespace fedsim::run
