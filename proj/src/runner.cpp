#include "fedsim/runner.hpp"

#include <sys/resource.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "fedsim/engine.hpp"
#include "fedsim/errors.hpp"
#include "run_internal.hpp"

namespace fedsim::run {

namespace fs = std::filesystem;

namespace detail {

std::optional<uint32_t> subscriber_id(const std::string& name) {
    if (name == "server") return server_id;
    if (name.rfind("client_", 0) == 0) {
        try {
            return static_cast<uint32_t>(std::stoul(name.substr(7)));
        } catch (...) {
        }
    }
    return std::nullopt;
}

comm::QueueObserver make_observer(obs::EventLog& log, VirtualClock vclock) {
    comm::QueueObserver o;
    o.on_publish = [&log, vclock](const comm::Envelope& env, size_t admitted) {
        obs::EventRecord rec;
        rec.event = obs::Event::publish;
        rec.client_id = env.sender;
        rec.topic = env.topic;
        rec.detail = comm::kind_name(env.kind);
        if (vclock) rec.virtual_time = vclock();
        rec.metrics["admitted"] = static_cast<double>(admitted);
        log.emit(std::move(rec));
    };
    o.on_deliver = [&log, vclock](const comm::Envelope& env, const std::string& sub) {
        obs::EventRecord rec;
        rec.event = obs::Event::deliver;
        rec.client_id = subscriber_id(sub);
        rec.topic = env.topic;
        rec.detail = comm::kind_name(env.kind);
        if (vclock) rec.virtual_time = vclock();
        rec.metrics["sender"] = static_cast<double>(env.sender);
        log.emit(std::move(rec));
    };
    return o;
}

ServerContext make_server_ctx(const cfg::ExperimentPlan& plan, comm::MessageQueue& mq,
                              obs::EventLog& log, VirtualClock vclock, ServerResult* out) {
    ServerContext s;
    s.mq = &mq;
    s.endpoint = mq.subscribe(topic_updates, "server");
    mq.subscribe(s.endpoint, topic_control);
    s.log = &log;
    s.vclock = std::move(vclock);
    s.seed = plan.cfg.seed;
    s.rounds = plan.cfg.rounds;
    s.client_count = plan.cfg.client_count;
    s.target_accuracy = plan.cfg.target_accuracy;
    s.model = plan.model;
    s.scheduler = plan.scheduler;
    s.aggregator = plan.aggregator;
    s.test_batch = data::DataView(data::view_of(plan.dataset), plan.test_indices, 0).load_all();
    s.out = out;
    return s;
}

ClientContext make_client_ctx(const cfg::ExperimentPlan& plan, const cfg::ClientProfile& profile,
                              comm::MessageQueue& mq, obs::EventLog& log, VirtualClock vclock) {
    ClientContext c;
    c.mq = &mq;
    c.endpoint = mq.subscribe(topic_global, "client_" + std::to_string(profile.id));
    mq.subscribe(c.endpoint, topic_control);
    c.log = &log;
    c.vclock = std::move(vclock);
    c.id = profile.id;
    c.seed = plan.cfg.seed;
    c.model = plan.model;
    c.trainer = plan.trainer;
    data::DatasetView base = plan.store ? plan.store->attach() : data::view_of(plan.dataset);
    uint32_t latency = plan.cfg.preload ? 0 : static_cast<uint32_t>(plan.cfg.io_latency_us);
    c.data = data::DataView(base, profile.sample_indices, latency);
    c.speed_factor = profile.speed_factor;
    c.base_train_cost = profile.base_train_cost;
    c.stop_after_updates = profile.stop_after_updates;
    return c;
}

void detach_all(const cfg::ExperimentPlan& plan) {
    if (!plan.store) return;
    for (size_t i = 0; i < plan.profiles.size(); ++i) plan.store->detach();
}

}  // namespace detail

using detail::detach_all;
using detail::make_client_ctx;
using detail::make_observer;
using detail::make_server_ctx;

std::filesystem::path resolve_run_dir(const cfg::ExperimentConfig& cfg) {
    if (const char* env = std::getenv("FEDSIM_OUTPUT_DIR"); env && *env) return env;
    return cfg.output_dir;
}

std::string distribution_csv(const std::vector<std::vector<uint64_t>>& distribution) {
    std::ostringstream out;
    size_t classes = distribution.empty() ? 0 : distribution[0].size();
    out << "client";
    for (size_t c = 0; c < classes; ++c) out << ",class_" << c;
    out << "\n";
    for (size_t i = 0; i < distribution.size(); ++i) {
        out << (i + 1);
        for (uint64_t v : distribution[i]) out << "," << v;
        out << "\n";
    }
    return out.str();
}

ServerResult run_sequential(const cfg::ExperimentPlan& plan, obs::EventLog& log) {
    exec::TimesliceEngine::Options opts;
    opts.max_activations = plan.cfg.max_activations;
    opts.on_activation = [&log](uint32_t id, uint64_t clock) {
        obs::EventRecord rec;
        rec.event = obs::Event::activation;
        rec.client_id = id;
        rec.virtual_time = clock;
        log.emit(std::move(rec));
    };
    exec::TimesliceEngine engine(opts);
    VirtualClock vclock = [&engine]() -> std::optional<uint64_t> { return engine.now(); };
    comm::MessageQueue mq([&engine] { return engine.now(); });
    mq.set_observer(make_observer(log, vclock));

    ServerResult out;
    engine.add_task(server_id, "server",
                    server_pipeline(make_server_ctx(plan, mq, log, vclock, &out)));
    for (const auto& p : plan.profiles)
        engine.add_task(p.id, "client_" + std::to_string(p.id),
                        client_pipeline(make_client_ctx(plan, p, mq, log, vclock)));
    engine.run();
    detach_all(plan);
    return out;
}

ServerResult run_concurrent(const cfg::ExperimentPlan& plan, obs::EventLog& log) {
    auto t0 = std::chrono::steady_clock::now();
    comm::MessageQueue mq([t0] {
        return static_cast<uint64_t>(std::chrono::duration_cast<std::chrono::microseconds>(
                                         std::chrono::steady_clock::now() - t0)
                                         .count());
    });
    mq.set_observer(make_observer(log, {}));

    ServerResult out;
    // All subscriptions happen here, before any thread can publish.
    ServerContext sctx = make_server_ctx(plan, mq, log, {}, &out);
    std::vector<ClientContext> cctxs;
    cctxs.reserve(plan.profiles.size());
    for (const auto& p : plan.profiles) cctxs.push_back(make_client_ctx(plan, p, mq, log, {}));

    const uint64_t slice = plan.cfg.slice_wall_us;
    std::exception_ptr server_err;
    std::vector<std::exception_ptr> client_errs(cctxs.size());

    std::thread server_thread([&] {
        try {
            auto task = server_pipeline(std::move(sctx));
            exec::drive_wall(task, slice);
        } catch (...) {
            server_err = std::current_exception();
        }
        mq.shutdown();  // releases everyone whichever way the server left
    });
    std::vector<std::thread> client_threads;
    client_threads.reserve(cctxs.size());
    for (size_t i = 0; i < cctxs.size(); ++i) {
        client_threads.emplace_back([&, i] {
            uint32_t cid = cctxs[i].id;
            try {
                auto task = client_pipeline(std::move(cctxs[i]));
                exec::drive_wall(task, slice);
            } catch (...) {
                client_errs[i] = std::current_exception();
                // Unblock a server that may be waiting on this client.
                comm::ControlMsg note{act_client_failed, cid, "client thread terminated"};
                try {
                    mq.publish(topic_updates, cid, comm::MsgKind::control,
                               comm::encode_payload(note));
                } catch (...) {
                }
            }
        });
    }
    server_thread.join();
    for (auto& t : client_threads) t.join();
    detach_all(plan);
    if (server_err) std::rethrow_exception(server_err);
    for (auto& e : client_errs)
        if (e) std::rethrow_exception(e);
    return out;
}

RunResult run_experiment(const cfg::ExperimentPlan& plan) {
    fs::path run_dir = resolve_run_dir(plan.cfg);
    fs::create_directories(run_dir);
    {
        std::ofstream out(run_dir / "config.echo", std::ios::binary | std::ios::trunc);
        out << cfg::config_to_text(plan.cfg);
        if (!out) throw RuntimeAbort("cannot write " + (run_dir / "config.echo").string());
    }
    if (plan.cfg.emit_distribution) {
        std::ofstream out(run_dir / "distribution.csv", std::ios::binary | std::ios::trunc);
        out << distribution_csv(plan.distribution);
        if (!out) throw RuntimeAbort("cannot write " + (run_dir / "distribution.csv").string());
    }

    obs::EventLog log(run_dir / "events.jsonl", plan.cfg.normalize);
    {
        obs::EventRecord rec;
        rec.event = obs::Event::node_up;
        rec.client_id = server_id;
        rec.detail = mode_name(plan.mode.kind);
        log.emit(std::move(rec));
    }

    ServerResult server;
    try {
        switch (plan.mode.kind) {
            case cfg::ModeKind::sequential:
                server = run_sequential(plan, log);
                break;
            case cfg::ModeKind::concurrent:
                server = run_concurrent(plan, log);
                break;
            case cfg::ModeKind::multiprocess:
                server = run_multiprocess(plan, log, run_dir);
                break;
            case cfg::ModeKind::distributed:
                server = run_distributed(plan, log, run_dir);
                break;
        }
    } catch (const std::exception& e) {
        try {  // leave a closing line for postmortems, then re-raise
            obs::EventRecord rec;
            rec.event = obs::Event::node_down;
            rec.client_id = server_id;
            rec.detail = std::string("aborted: ") + e.what();
            log.emit(std::move(rec));
        } catch (...) {
        }
        throw;
    }

    {
        obs::EventRecord rec;
        rec.event = obs::Event::node_down;
        rec.client_id = server_id;
        if (!plan.cfg.normalize) {
            rusage ru{};
            getrusage(RUSAGE_SELF, &ru);
            rec.metrics["peak_rss_kb"] = static_cast<double>(ru.ru_maxrss);
        }
        log.emit(std::move(rec));
    }
    {
        auto bytes = learn::serialize(server.params);
        std::ofstream out(run_dir / "checkpoint_final.params", std::ios::binary | std::ios::trunc);
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        if (!out) throw RuntimeAbort("cannot write " + (run_dir / "checkpoint_final.params").string());
    }

    RunResult result;
    result.run_dir = run_dir;
    result.server = std::move(server);
    result.summary = obs::summarize(run_dir);
    obs::write_summary_files(run_dir, result.summary);
    return result;
}

}  // namespace fedsim::run
