#include "fedsim/nodes.hpp"

#include <signal.h>
#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <numeric>
#include <fstream>
#include <iostream>
#include <thread>

#include "fedsim/engine.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/runner.hpp"
#include "run_internal.hpp"

namespace fedsim::run {

namespace fs = std::filesystem;

namespace {

uint64_t wall_clock_us(std::chrono::steady_clock::time_point t0) {
    return static_cast<uint64_t>(std::chrono::duration_cast<std::chrono::microseconds>(
                                     std::chrono::steady_clock::now() - t0)
                                     .count());
}

void emit_node_event(obs::EventLog& log, obs::Event event, uint32_t node_id,
                     std::string detail = "") {
    obs::EventRecord rec;
    rec.event = event;
    rec.client_id = node_id;
    rec.detail = std::move(detail);
    log.emit(std::move(rec));
}

/// The sender a frame would have carried had it been published locally;
/// client-to-server payloads all name their origin.
uint32_t frame_sender(const comm::Frame& f) {
    switch (f.kind) {
        case comm::MsgKind::register_client:
            return comm::parse_register(f.payload).client_id;
        case comm::MsgKind::update:
            return comm::parse_update(f.payload).client_id;
        case comm::MsgKind::control:
            return comm::parse_control(f.payload).target;
        default:
            throw TransportError(std::string("unexpected ") + comm::kind_name(f.kind) +
                                 " frame from node");
    }
}

/// Main-process handshake + forwarding for every node link, then the server
/// pipeline on the calling thread. Used by both node-based modes.
ServerResult run_with_nodes(const cfg::ExperimentPlan& plan, obs::EventLog& log,
                            std::vector<net::Connection>& links,
                            const std::vector<std::vector<uint32_t>>& groups) {
    const std::string config_json = cfg::config_to_text(plan.cfg);
    const std::string store_b64 =
        comm::base64_encode(data::encode_store(data::view_of(plan.dataset)));
    const char* tok = std::getenv("FEDSIM_NODE_TOKEN");
    const std::string token = tok ? tok : "";

    for (size_t i = 0; i < links.size(); ++i) {
        const uint32_t node_id = static_cast<uint32_t>(i) + 1;
        auto hello = links[i].recv_frame();
        if (!hello || hello->kind != comm::MsgKind::node_hello)
            throw TransportError("node " + std::to_string(node_id) +
                                 ": expected node_hello, got " +
                                 (hello ? comm::kind_name(hello->kind) : "EOF"));
        auto h = comm::parse_node_hello(hello->payload);
        if (!token.empty() && h.token != token)
            throw TransportError("node " + std::to_string(node_id) + ": bad auth token");
        if (h.capacity < groups[i].size())
            throw TransportError("node " + std::to_string(node_id) + ": capacity " +
                                 std::to_string(h.capacity) + " < assigned " +
                                 std::to_string(groups[i].size()) + " clients");
        comm::NodeAssignMsg assign{node_id, groups[i], config_json, store_b64};
        links[i].send_frame(comm::MsgKind::node_assign, comm::encode_payload(assign));
        auto ack = links[i].recv_frame();
        if (!ack || ack->kind != comm::MsgKind::ack)
            throw TransportError("node " + std::to_string(node_id) + ": expected ack, got " +
                                 (ack ? comm::kind_name(ack->kind) : "EOF"));
        emit_node_event(log, obs::Event::node_up, node_id, "node");
    }

    auto t0 = std::chrono::steady_clock::now();
    comm::MessageQueue mq([t0] { return wall_clock_us(t0); });
    mq.set_observer(detail::make_observer(log, {}));

    ServerResult out;
    ServerContext sctx = detail::make_server_ctx(plan, mq, log, {}, &out);

    // One bridge per node: a writer forwards broadcasts and directives out,
    // a reader publishes whatever the node's clients sent. A dead link
    // becomes a transport_down notice, which the publish path drops silently
    // once the run is already over.
    std::vector<std::thread> writers, readers;
    for (size_t i = 0; i < links.size(); ++i) {
        const uint32_t node_id = static_cast<uint32_t>(i) + 1;
        auto ep = mq.subscribe(topic_global, "node_" + std::to_string(node_id));
        mq.subscribe(ep, topic_control);
        net::Connection& link = links[i];

        writers.emplace_back([&link, ep] {
            try {
                for (;;) {
                    ep->wait_pending_wall();
                    auto env = ep->try_receive();
                    if (!env) {
                        if (ep->closed()) break;
                        continue;
                    }
                    link.send_frame(env->kind, env->text());
                }
            } catch (const std::exception&) {
                // Reader sees the same dead link and reports it.
            }
            link.shutdown_write();
        });
        readers.emplace_back([&link, &mq, &log, node_id] {
            std::string fault = "node " + std::to_string(node_id) + " closed the connection";
            try {
                for (;;) {
                    auto f = link.recv_frame();
                    if (!f) break;
                    mq.publish(topic_updates, frame_sender(*f), f->kind, f->payload);
                }
            } catch (const std::exception& e) {
                fault = "node " + std::to_string(node_id) + ": " + e.what();
            }
            // Published unconditionally: during a live run any hangup, clean
            // or not, means this node's clients are gone; after shutdown the
            // publish is dropped silently.
            comm::ControlMsg note{act_transport_down, node_id, fault};
            try {
                mq.publish(topic_updates, node_id, comm::MsgKind::control,
                           comm::encode_payload(note));
            } catch (...) {
            }
            emit_node_event(log, obs::Event::node_down, node_id, fault);
        });
    }

    std::exception_ptr err;
    try {
        auto task = server_pipeline(std::move(sctx));
        exec::drive_wall(task, plan.cfg.slice_wall_us);
    } catch (...) {
        err = std::current_exception();
    }
    mq.shutdown();
    for (auto& t : writers) t.join();
    for (auto& t : readers) t.join();
    if (err) std::rethrow_exception(err);
    return out;
}

/// Collects every child within grace_us, then SIGKILLs stragglers.
/// Returns each child's exit code; -1 means it had to be killed.
std::vector<int> reap_children(const std::vector<pid_t>& pids, uint64_t grace_us) {
    std::vector<int> codes(pids.size(), -1);
    std::vector<bool> done(pids.size(), false);
    auto deadline = std::chrono::steady_clock::now() + std::chrono::microseconds(grace_us);
    size_t left = pids.size();
    while (left > 0 && std::chrono::steady_clock::now() < deadline) {
        for (size_t i = 0; i < pids.size(); ++i) {
            if (done[i]) continue;
            int st = 0;
            pid_t r = ::waitpid(pids[i], &st, WNOHANG);
            if (r == pids[i]) {
                codes[i] = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
                done[i] = true;
                --left;
            }
        }
        if (left > 0) std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    for (size_t i = 0; i < pids.size(); ++i) {
        if (done[i]) continue;
        ::kill(pids[i], SIGKILL);
        int st = 0;
        ::waitpid(pids[i], &st, 0);
    }
    return codes;
}

}  // namespace

ServerResult run_multiprocess(const cfg::ExperimentPlan& plan, obs::EventLog& log,
                              const fs::path& run_dir) {
    const uint32_t per_node = std::max(1u, plan.mode.workers_per_process);
    const uint32_t n = plan.cfg.client_count;
    std::vector<std::vector<uint32_t>> groups((n + per_node - 1) / per_node);
    for (uint32_t id = 1; id <= n; ++id) groups[(id - 1) / per_node].push_back(id);

    // Fork every worker before this process grows any threads.
    std::vector<net::Connection> links;
    std::vector<pid_t> pids;
    for (size_t i = 0; i < groups.size(); ++i) {
        auto [parent_end, child_end] = net::socket_pair();
        pid_t pid = ::fork();
        if (pid < 0) {
            for (pid_t p : pids) ::kill(p, SIGKILL);
            reap_children(pids, 0);
            throw TransportError("fork failed: " + std::string(std::strerror(errno)));
        }
        if (pid == 0) {
            parent_end.close();
            for (auto& l : links) l.close();
            int code = 0;
            try {
                net::NodeOptions opts;
                opts.capacity = per_node;
                opts.workdir = run_dir;
                net::node_session(std::move(child_end), opts);
            } catch (const std::exception& e) {
                std::fprintf(stderr, "node: %s\n", e.what());
                code = 3;
            }
            // _Exit: the child must not flush streams inherited from the
            // parent or run its destructors.
            std::_Exit(code);
        }
        child_end.close();
        links.push_back(std::move(parent_end));
        pids.push_back(pid);
    }

    std::exception_ptr err;
    ServerResult out;
    try {
        out = run_with_nodes(plan, log, links, groups);
    } catch (...) {
        err = std::current_exception();
    }
    for (auto& l : links) l.close();  // EOF wakes any child still reading
    std::vector<int> codes = reap_children(pids, plan.cfg.await_grace_us);
    if (err) std::rethrow_exception(err);
    for (size_t i = 0; i < codes.size(); ++i) {
        if (codes[i] == 0) continue;
        obs::EventRecord rec;
        rec.event = obs::Event::warning;
        rec.client_id = static_cast<uint32_t>(i) + 1;
        rec.detail = codes[i] < 0 ? "node " + std::to_string(i + 1) + " killed at teardown"
                                  : "node " + std::to_string(i + 1) + " exited with status " +
                                        std::to_string(codes[i]);
        log.emit(std::move(rec));
    }
    return out;
}

ServerResult run_distributed(const cfg::ExperimentPlan& plan, obs::EventLog& log,
                             const fs::path&) {
    std::vector<net::Connection> links;
    std::vector<std::vector<uint32_t>> groups;
    uint32_t next_id = 1;
    for (const auto& node : plan.mode.nodes) {
        links.push_back(net::connect_to(node.host, node.port));
        std::vector<uint32_t> ids(node.clients);
        std::iota(ids.begin(), ids.end(), next_id);
        next_id += node.clients;
        groups.push_back(std::move(ids));
    }
    return run_with_nodes(plan, log, links, groups);
}

}  // namespace fedsim::run

namespace fedsim::net {

namespace fs = std::filesystem;

void node_session(Connection conn, const NodeOptions& opts) {
    const char* tok = std::getenv("FEDSIM_NODE_TOKEN");
    comm::NodeHelloMsg hello{opts.capacity, tok ? tok : ""};
    conn.send_frame(comm::MsgKind::node_hello, comm::encode_payload(hello));

    auto frame = conn.recv_frame();
    if (!frame)
        throw TransportError("node: connection closed before assignment");
    if (frame->kind != comm::MsgKind::node_assign)
        throw TransportError(std::string("node: expected node_assign, got ") +
                             comm::kind_name(frame->kind));
    auto assign = comm::parse_node_assign(frame->payload);
    if (assign.clients.size() > opts.capacity)
        throw TransportError("node: assigned " + std::to_string(assign.clients.size()) +
                             " clients but capacity is " + std::to_string(opts.capacity));

    fs::path dir = opts.workdir / ("node_" + std::to_string(assign.node_id));
    fs::create_directories(dir);

    // The wire is the only source of truth: the config arrives as JSON and
    // the dataset as an FMDS image, re-read through the normal file factory
    // so partitioning reruns on bit-identical bytes.
    cfg::ExperimentConfig c = cfg::parse_config(assign.config_json);
    fs::path store_path = dir / "store.fmds";
    {
        auto bytes = comm::base64_decode(assign.store_b64);
        std::ofstream out(store_path, std::ios::binary | std::ios::trunc);
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        if (!out) throw TransportError("node: cannot write " + store_path.string());
    }
    c.dataset.type = "file";
    c.dataset.params = nlohmann::json{{"path", store_path.string()}};
    cfg::ExperimentPlan plan = cfg::assemble(c);

    obs::EventLog nlog(dir / "events.jsonl", c.normalize);
    {
        obs::EventRecord rec;
        rec.event = obs::Event::node_up;
        rec.client_id = assign.node_id;
        rec.detail = "clients " + std::to_string(assign.clients.size());
        nlog.emit(std::move(rec));
    }

    auto t0 = std::chrono::steady_clock::now();
    comm::MessageQueue mq([t0] {
        return static_cast<uint64_t>(std::chrono::duration_cast<std::chrono::microseconds>(
                                         std::chrono::steady_clock::now() - t0)
                                         .count());
    });
    mq.set_observer(run::detail::make_observer(nlog, {}));

    // Every local subscription must exist before the ack releases the main
    // process to broadcast.
    std::vector<run::ClientContext> ctxs;
    for (uint32_t id : assign.clients) {
        const cfg::ClientProfile* profile = nullptr;
        for (const auto& p : plan.profiles)
            if (p.id == id) profile = &p;
        if (!profile)
            throw TransportError("node: assigned unknown client id " + std::to_string(id));
        ctxs.push_back(run::detail::make_client_ctx(plan, *profile, mq, nlog, {}));
    }
    auto uplink = mq.subscribe(run::topic_updates, "uplink");
    conn.send_frame(comm::MsgKind::ack,
                    comm::encode_payload(comm::AckMsg{"node_" + std::to_string(assign.node_id)}));

    // Reader: broadcasts and directives from the main process into the local
    // queue. Its exit -- clean hangup or fault -- ends the session for the
    // client threads too.
    std::thread reader([&conn, &mq, &nlog] {
        try {
            for (;;) {
                auto f = conn.recv_frame();
                if (!f) break;
                switch (f->kind) {
                    case comm::MsgKind::global_model:
                        mq.publish(run::topic_global, run::server_id, f->kind, f->payload);
                        break;
                    case comm::MsgKind::control:
                    case comm::MsgKind::shutdown:
                        mq.publish(run::topic_control, run::server_id, f->kind, f->payload);
                        break;
                    default:
                        throw TransportError(std::string("node: unexpected ") +
                                             comm::kind_name(f->kind) + " frame");
                }
            }
        } catch (const std::exception& e) {
            try {
                obs::EventRecord rec;
                rec.event = obs::Event::warning;
                rec.detail = e.what();
                nlog.emit(std::move(rec));
            } catch (...) {
            }
        }
        mq.shutdown();
    });
    // Writer: everything local clients publish goes upstream.
    std::thread writer([&conn, &mq, uplink] {
        try {
            for (;;) {
                uplink->wait_pending_wall();
                auto env = uplink->try_receive();
                if (!env) {
                    if (uplink->closed()) break;
                    continue;
                }
                conn.send_frame(env->kind, env->text());
            }
        } catch (const std::exception&) {
            mq.shutdown();  // main is gone; release the clients
        }
        conn.shutdown_write();
    });

    const uint64_t slice = c.slice_wall_us;
    std::vector<std::exception_ptr> errs(ctxs.size());
    std::vector<std::thread> client_threads;
    client_threads.reserve(ctxs.size());
    for (size_t i = 0; i < ctxs.size(); ++i) {
        client_threads.emplace_back([&, i] {
            uint32_t cid = ctxs[i].id;
            try {
                auto task = run::client_pipeline(std::move(ctxs[i]));
                exec::drive_wall(task, slice);
            } catch (...) {
                errs[i] = std::current_exception();
                comm::ControlMsg note{run::act_client_failed, cid, "client thread terminated"};
                try {
                    mq.publish(run::topic_updates, cid, comm::MsgKind::control,
                               comm::encode_payload(note));
                } catch (...) {
                }
            }
        });
    }

    // Clients can finish early (scripted leaves); only the main process
    // hanging up ends the session, so the reader is the join barrier.
    for (auto& t : client_threads) t.join();
    reader.join();
    writer.join();
    run::detail::detach_all(plan);

    {
        obs::EventRecord rec;
        rec.event = obs::Event::node_down;
        rec.client_id = assign.node_id;
        if (!c.normalize) {
            rusage ru{};
            getrusage(RUSAGE_SELF, &ru);
            rec.metrics["peak_rss_kb"] = static_cast<double>(ru.ru_maxrss);
        }
        nlog.emit(std::move(rec));
    }
    for (auto& e : errs)
        if (e) std::rethrow_exception(e);
}

int serve_node(const std::string& host, uint16_t port, const NodeOptions& opts, bool once) {
    Listener listener(host, port);
    std::cout << "node listening on " << host << ":" << listener.port() << std::endl;
    for (;;) {
        Connection conn = listener.accept();
        try {
            node_session(std::move(conn), opts);
        } catch (const std::exception& e) {
            std::cerr << "node session failed: " << e.what() << "\n";
            if (once) return 3;
        }
        if (once) return 0;
    }
}

}  // namespace fedsim::net
