#include "fedsim/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <span>

#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"

namespace fedsim::run {

using namespace comm;

uint64_t train_cost_slices(uint32_t base_train_cost, uint32_t steps, double speed_factor) {
    double cost = static_cast<double>(base_train_cost) * static_cast<double>(steps) / speed_factor;
    return static_cast<uint64_t>(std::ceil(cost));
}

bool full_upload(const learn::MaskPolicy& policy, uint64_t base_version) {
    if (policy.kind == learn::MaskPolicy::Kind::full || policy.period == 0) return true;
    return (base_version + 1) % policy.period == 0;
}

learn::ParamVector decode_global(const GlobalModelMsg& msg, const learn::ModelSpec& model) {
    auto values = decode_values(msg.params_b64);
    learn::ParamVector p;
    p.shapes = learn::param_shapes(model);
    if (values.size() != learn::param_count(model))
        throw TransportError("global model carries " + std::to_string(values.size()) +
                             " values but the model has " +
                             std::to_string(learn::param_count(model)));
    p.values = std::move(values);
    return p;
}

learn::ParamVector reconstruct_update(const UpdateMsg& msg, const learn::ParamVector& global) {
    auto values = decode_values(msg.params_b64);
    learn::ParamVector p = global;
    if (!msg.mask) {
        if (values.size() != global.size())
            throw TransportError("update carries " + std::to_string(values.size()) +
                                 " values but the model has " + std::to_string(global.size()));
        p.values = std::move(values);
        return p;
    }
    if (msg.mask->offset + msg.mask->count > global.size() ||
        values.size() != msg.mask->count)
        throw TransportError("masked update range [" + std::to_string(msg.mask->offset) + ", +" +
                             std::to_string(msg.mask->count) + ") with " +
                             std::to_string(values.size()) + " values does not fit the model");
    std::copy(values.begin(), values.end(), p.values.begin() + static_cast<long>(msg.mask->offset));
    return p;
}

comm::UpdateMsg make_update_msg(uint32_t client_id, uint64_t base_version,
                                const learn::TrainOutcome& outcome,
                                const learn::ModelSpec& model, const learn::MaskPolicy& policy) {
    UpdateMsg m;
    m.client_id = client_id;
    m.base_version = base_version;
    m.n_samples = outcome.n_samples;
    m.tau = outcome.tau;
    if (full_upload(policy, base_version)) {
        m.params_b64 = encode_values(outcome.params.values);
    } else {
        auto range = learn::last_layer_range(model);
        m.params_b64 = encode_values(
            std::span<const double>(outcome.params.values.data() + range.offset, range.count));
        m.mask = MaskRange{range.offset, range.count};
    }
    return m;
}

namespace {

std::optional<uint64_t> now_of(const VirtualClock& vclock) {
    return vclock ? vclock() : std::optional<uint64_t>{};
}

void emit(obs::EventLog* log, obs::EventRecord rec) {
    if (log) log->emit(std::move(rec));
}

}  // namespace

exec::ResumableTask client_pipeline(ClientContext ctx) {
    {
        obs::EventRecord rec;
        rec.event = obs::Event::client_start;
        rec.client_id = ctx.id;
        rec.virtual_time = now_of(ctx.vclock);
        rec.metrics["n_samples"] = static_cast<double>(ctx.data.size());
        emit(ctx.log, std::move(rec));
    }
    ctx.mq->publish(topic_updates, ctx.id, MsgKind::register_client,
                    encode_payload(RegisterMsg{ctx.id, static_cast<uint32_t>(ctx.data.size())}));

    std::optional<learn::ParamVector> personalized;
    uint32_t updates_published = 0;
    bool warned_fallback = false;

    auto leave_notice = [&] {
        ctx.mq->publish(topic_updates, ctx.id, MsgKind::control,
                        encode_payload(ControlMsg{act_client_stopped, ctx.id, "directed stop"}));
    };

    for (;;) {
        auto env = co_await exec::Receive{ctx.endpoint.get()};
        if (!env || env->kind == MsgKind::shutdown) break;
        if (env->kind == MsgKind::control) {
            auto c = parse_control(env->text());
            if (c.action == act_stop && c.target == ctx.id) {
                leave_notice();
                break;
            }
            continue;  // a directive for someone else
        }
        if (env->kind != MsgKind::global_model) continue;

        bool leaving = false;
        bool failed = false;
        try {
            auto g = parse_global_model(env->text());
            if (g.participants.empty()) {
                // Free-run: several broadcasts may have queued up while we
                // trained; only the newest model is worth training on.
                bool exiting = false;
                while (ctx.endpoint->pending() > 0) {
                    auto next = ctx.endpoint->try_receive();
                    if (!next) break;
                    if (next->kind == MsgKind::shutdown) {
                        exiting = true;
                        break;
                    }
                    if (next->kind == MsgKind::control) {
                        auto c = parse_control(next->text());
                        if (c.action == act_stop && c.target == ctx.id) {
                            leave_notice();
                            exiting = true;
                            break;
                        }
                        continue;
                    }
                    if (next->kind == MsgKind::global_model) g = parse_global_model(next->text());
                }
                if (exiting) break;
            } else if (std::find(g.participants.begin(), g.participants.end(), ctx.id) ==
                       g.participants.end()) {
                continue;  // sat out this round
            }

            auto global = decode_global(g, ctx.model);
            uint32_t steps = learn::planned_steps(ctx.trainer, ctx.data.size());
            co_await exec::YieldFor{train_cost_slices(ctx.base_train_cost, steps,
                                                      ctx.speed_factor)};
            uint64_t train_seed =
                rng::derive(ctx.seed, rng::domain::client_train, ctx.id, g.version);
            auto outcome = learn::local_train(ctx.model, global, ctx.data, ctx.trainer,
                                              train_seed, personalized ? &*personalized : nullptr);
            if (outcome.personalized) personalized = outcome.personalized;
            if (outcome.full_batch_fallback && !warned_fallback) {
                warned_fallback = true;
                obs::EventRecord rec;
                rec.event = obs::Event::warning;
                rec.client_id = ctx.id;
                rec.virtual_time = now_of(ctx.vclock);
                rec.detail = "batch_size exceeds the shard; training on full batches";
                emit(ctx.log, std::move(rec));
            }
            auto msg =
                make_update_msg(ctx.id, g.version, outcome, ctx.model, ctx.trainer.mask_policy);
            ++updates_published;
            if (ctx.stop_after_updates && updates_published >= *ctx.stop_after_updates) {
                // The leave rides the update itself, so the server learns of
                // it exactly when the update lands -- no notice race.
                msg.metrics["final_update"] = 1.0;
                leaving = true;
            }
            ctx.mq->publish(topic_updates, ctx.id, MsgKind::update, encode_payload(msg));
        } catch (const std::exception& e) {
            ctx.mq->publish(topic_updates, ctx.id, MsgKind::control,
                            encode_payload(ControlMsg{act_client_failed, ctx.id, e.what()}));
            failed = true;
        }
        if (leaving || failed) break;
    }

    obs::EventRecord rec;
    rec.event = obs::Event::client_stop;
    rec.client_id = ctx.id;
    rec.virtual_time = now_of(ctx.vclock);
    rec.metrics["updates_published"] = static_cast<double>(updates_published);
    if (std::holds_alternative<learn::PfedmeVariant>(ctx.trainer.variant) && personalized) {
        auto eval = learn::evaluate(ctx.model, *personalized, ctx.data.load_all());
        rec.metrics["personal_accuracy"] = eval.accuracy;
    }
    emit(ctx.log, std::move(rec));
}

namespace {

struct Notice {
    std::string action;
    uint32_t target = 0;
    std::string detail;
};

}  // namespace

exec::ResumableTask server_pipeline(ServerContext ctx) {
    learn::ParamVector global =
        learn::init_params(ctx.model, rng::derive(ctx.seed, rng::domain::init_params));
    uint64_t version = 0;
    bool target_reached = false;

    std::vector<uint32_t> pool;
    std::vector<Notice> deferred;  // stops applied at the next round boundary

    auto emit_aggregate = [&](double participants, std::optional<double> staleness) {
        obs::EventRecord rec;
        rec.event = obs::Event::aggregate;
        rec.round = version;
        rec.client_id = server_id;
        rec.virtual_time = now_of(ctx.vclock);
        rec.metrics["participants"] = participants;
        if (staleness) rec.metrics["staleness"] = *staleness;
        emit(ctx.log, std::move(rec));
    };
    auto emit_evaluate = [&] {
        auto eval = learn::evaluate(ctx.model, global, ctx.test_batch);
        obs::EventRecord rec;
        rec.event = obs::Event::evaluate;
        rec.round = version;
        rec.client_id = server_id;
        rec.virtual_time = now_of(ctx.vclock);
        rec.metrics["accuracy"] = eval.accuracy;
        rec.metrics["mean_loss"] = eval.mean_loss;
        for (size_t c = 0; c < eval.per_class_accuracy.size(); ++c)
            if (!std::isnan(eval.per_class_accuracy[c]))
                rec.metrics["acc_class_" + std::to_string(c)] = eval.per_class_accuracy[c];
        emit(ctx.log, std::move(rec));
        if (ctx.target_accuracy && eval.accuracy >= *ctx.target_accuracy) target_reached = true;
    };
    auto handle_notice = [&](const Notice& n) {
        if (n.action == act_client_failed)
            throw RuntimeAbort("client " + std::to_string(n.target) + " failed: " + n.detail);
        if (n.action == act_transport_down)
            throw TransportError("node connection lost: " + n.detail);
        if (n.action != act_client_stopped) return;  // directives pass the server by
        auto it = std::find(pool.begin(), pool.end(), n.target);
        if (it == pool.end()) return;  // already removed
        if (ctx.scheduler->requires_full_participation())
            throw RuntimeAbort("client " + std::to_string(n.target) +
                               " stopped mid-run but the scheduler requires full participation; "
                               "aborting");
        pool.erase(it);
        if (pool.empty()) throw RuntimeAbort("all clients stopped; aborting");
    };

    // Registration barrier: every configured client reports in before any
    // model leaves the server.
    std::map<uint32_t, uint32_t> roster;
    while (roster.size() < ctx.client_count) {
        auto env = co_await exec::Receive{ctx.endpoint.get()};
        if (!env) throw RuntimeAbort("queue shut down during registration");
        if (env->kind == MsgKind::register_client) {
            auto r = parse_register(env->text());
            if (r.client_id == 0 || r.client_id > ctx.client_count)
                throw RuntimeAbort("registration from unknown client " +
                                   std::to_string(r.client_id));
            if (!roster.emplace(r.client_id, r.n_samples).second)
                throw RuntimeAbort("duplicate registration from client " +
                                   std::to_string(r.client_id));
        } else if (env->kind == MsgKind::control) {
            auto c = parse_control(env->text());
            if (c.action == act_client_stopped)
                deferred.push_back({c.action, c.target, c.detail});  // pool not built yet
            else
                handle_notice({c.action, c.target, c.detail});
        } else if (env->kind != MsgKind::shutdown) {
            throw RuntimeAbort(std::string("unexpected ") + kind_name(env->kind) +
                               " before registration completed");
        }
    }
    for (const auto& [id, n_samples] : roster) pool.push_back(id);

    if (ctx.aggregator->kind() == fed::AggKind::sync) {
        for (uint64_t r = 0; r < ctx.rounds && !target_reached; ++r) {
            for (const auto& n : deferred) handle_notice(n);
            deferred.clear();
            while (ctx.endpoint->pending() > 0) {
                auto env = ctx.endpoint->try_receive();
                if (!env) break;
                if (env->kind == MsgKind::control) {
                    auto c = parse_control(env->text());
                    handle_notice({c.action, c.target, c.detail});
                } else if (env->kind == MsgKind::update) {
                    throw RuntimeAbort("unexpected update from client " +
                                       std::to_string(parse_update(env->text()).client_id) +
                                       " between rounds");
                } else if (env->kind == MsgKind::register_client) {
                    throw RuntimeAbort("late registration from client " +
                                       std::to_string(parse_register(env->text()).client_id));
                }
            }

            auto selected = ctx.scheduler->select(pool, r);
            ctx.mq->publish(
                topic_global, server_id, MsgKind::global_model,
                encode_payload(GlobalModelMsg{version, encode_values(global.values), selected}));

            std::set<uint32_t> want(selected.begin(), selected.end());
            std::map<uint32_t, fed::UpdateRecord> got;
            while (got.size() < want.size()) {
                auto env = co_await exec::Receive{ctx.endpoint.get()};
                if (!env)
                    throw RuntimeAbort("queue shut down while collecting round " +
                                       std::to_string(version + 1) + " updates");
                if (env->kind == MsgKind::update) {
                    auto u = parse_update(env->text());
                    if (!want.count(u.client_id) || got.count(u.client_id))
                        throw RuntimeAbort("unexpected update from client " +
                                           std::to_string(u.client_id) + " in round " +
                                           std::to_string(version + 1));
                    if (u.base_version != version)
                        throw RuntimeAbort("client " + std::to_string(u.client_id) +
                                           " trained version " + std::to_string(u.base_version) +
                                           " but round " + std::to_string(version + 1) +
                                           " holds version " + std::to_string(version));
                    fed::UpdateRecord rec;
                    rec.client_id = u.client_id;
                    rec.base_version = u.base_version;
                    rec.n_samples = u.n_samples;
                    rec.tau = u.tau;
                    rec.recv_time = now_of(ctx.vclock).value_or(0);
                    rec.metrics = u.metrics;
                    rec.params = reconstruct_update(u, global);
                    if (u.metrics.count("final_update"))
                        deferred.push_back({act_client_stopped, u.client_id, "scripted leave"});
                    got.emplace(u.client_id, std::move(rec));
                } else if (env->kind == MsgKind::control) {
                    auto c = parse_control(env->text());
                    if (c.action == act_client_stopped) {
                        if (want.count(c.target) && !got.count(c.target))
                            throw RuntimeAbort("client " + std::to_string(c.target) +
                                               " stopped before delivering its round " +
                                               std::to_string(version + 1) + " update; aborting");
                        deferred.push_back({c.action, c.target, c.detail});
                    } else {
                        handle_notice({c.action, c.target, c.detail});
                    }
                } else if (env->kind == MsgKind::register_client) {
                    throw RuntimeAbort("late registration from client " +
                                       std::to_string(parse_register(env->text()).client_id));
                }
            }

            std::vector<fed::UpdateRecord> cohort;
            cohort.reserve(got.size());
            for (auto& [id, rec] : got) cohort.push_back(std::move(rec));
            global = ctx.aggregator->reduce(global, version, std::move(cohort));
            version += 1;
            emit_aggregate(static_cast<double>(want.size()), std::nullopt);
            emit_evaluate();
        }
    } else {
        // Free-run: no cohorts. Every update (async) or every k-th update
        // (buffered) advances the version and triggers a fresh broadcast.
        const bool buffered = ctx.aggregator->kind() == fed::AggKind::buffered;
        const size_t k = buffered ? ctx.aggregator->buffer_size() : 1;
        ctx.mq->publish(topic_global, server_id, MsgKind::global_model,
                        encode_payload(GlobalModelMsg{version, encode_values(global.values), {}}));
        std::vector<fed::UpdateRecord> buffer;
        while (version < ctx.rounds && !target_reached) {
            auto env = co_await exec::Receive{ctx.endpoint.get()};
            if (!env)
                throw RuntimeAbort("queue shut down after " + std::to_string(version) +
                                   " of " + std::to_string(ctx.rounds) + " merges");
            if (env->kind == MsgKind::update) {
                auto u = parse_update(env->text());
                if (u.base_version > version)
                    throw RuntimeAbort("client " + std::to_string(u.client_id) +
                                       " reports future version " +
                                       std::to_string(u.base_version));
                fed::UpdateRecord rec;
                rec.client_id = u.client_id;
                rec.base_version = u.base_version;
                rec.n_samples = u.n_samples;
                rec.tau = u.tau;
                rec.recv_time = now_of(ctx.vclock).value_or(0);
                rec.metrics = u.metrics;
                rec.params = reconstruct_update(u, global);
                bool leaving = u.metrics.count("final_update") > 0;
                uint32_t who = u.client_id;
                double staleness = static_cast<double>(version - u.base_version);
                buffer.push_back(std::move(rec));
                if (buffer.size() >= k) {
                    if (buffered) {
                        global = ctx.aggregator->reduce(global, version, std::move(buffer));
                    } else {
                        global = ctx.aggregator->merge_async(global, version, buffer.front());
                    }
                    buffer.clear();
                    version += 1;
                    emit_aggregate(static_cast<double>(k),
                                   buffered ? std::nullopt : std::optional<double>(staleness));
                    emit_evaluate();
                    if (version < ctx.rounds && !target_reached)
                        ctx.mq->publish(topic_global, server_id, MsgKind::global_model,
                                        encode_payload(GlobalModelMsg{
                                            version, encode_values(global.values), {}}));
                }
                if (leaving && version < ctx.rounds && !target_reached)
                    handle_notice({act_client_stopped, who, "scripted leave"});
            } else if (env->kind == MsgKind::control) {
                auto c = parse_control(env->text());
                handle_notice({c.action, c.target, c.detail});
            } else if (env->kind == MsgKind::register_client) {
                throw RuntimeAbort("late registration from client " +
                                   std::to_string(parse_register(env->text()).client_id));
            }
        }
    }

    ctx.mq->publish(topic_control, server_id, MsgKind::shutdown, "");
    if (ctx.out) {
        ctx.out->params = std::move(global);
        ctx.out->version = version;
        ctx.out->target_reached = target_reached;
    }
}

}  // namespace fedsim::run
