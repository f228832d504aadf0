#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace fedsim::comm {

/// Wire message kinds; the numeric values are the framing kind byte.
enum class MsgKind : uint8_t {
    register_client = 1,
    global_model = 2,
    update = 3,
    control = 4,
    shutdown = 5,
    node_hello = 6,
    node_assign = 7,
    ack = 8,
};

const char* kind_name(MsgKind k);

/// One queued message. Fan-out shares the payload text; every subscriber
/// gets its own envelope copy. Payload is the same JSON text that crosses
/// sockets in the distributed modes, so every mode moves identical bytes.
struct Envelope {
    std::string topic;
    uint32_t sender = 0;
    MsgKind kind = MsgKind::control;
    std::shared_ptr<const std::string> payload;
    uint64_t enqueue_time = 0;
    uint64_t seq = 0;  // global admission order

    const std::string& text() const;
};

struct TopicCounters {
    uint64_t published = 0;
    uint64_t admitted = 0;  // per-subscriber copies enqueued
    uint64_t dropped_no_subscriber = 0;
};

struct QueueObserver {
    std::function<void(const Envelope&, size_t n_admitted)> on_publish;
    std::function<void(const Envelope&, const std::string& subscriber)> on_deliver;
};

class MessageQueue;

/// A subscriber's read handle. Messages from all of its subscribed topics
/// arrive merged, ordered by (enqueue_time, topic name, admission order).
class Endpoint {
public:
    /// Non-blocking; empty when nothing is pending.
    std::optional<Envelope> try_receive();
    /// Blocks until a message, queue shutdown, or endpoint close.
    std::optional<Envelope> receive_wall();
    /// Blocks at most timeout_us; empty on timeout/shutdown/close.
    std::optional<Envelope> receive_wall_for(uint64_t timeout_us);
    /// Blocks until a message is pending or the endpoint can never get one.
    /// Does not consume; the owner polls with try_receive afterwards.
    void wait_pending_wall();

    size_t pending() const;
    /// True once no message will ever arrive again (shut down and drained).
    bool closed() const;
    const std::string& subscriber() const { return subscriber_; }

private:
    friend class MessageQueue;
    Endpoint(MessageQueue* mq, std::string subscriber) : mq_(mq), subscriber_(std::move(subscriber)) {}

    void push(Envelope env);  // caller holds the queue mutex

    MessageQueue* mq_;
    std::string subscriber_;
    std::deque<Envelope> buffer_;  // kept sorted by (time, topic, seq)
    std::condition_variable cv_;
    bool detached_ = false;
};

/// Topic-based pub-sub hub shared by the server, clients, and adapters.
/// No replay: a subscriber only sees messages published after it subscribed.
class MessageQueue {
public:
    /// clock stamps enqueue_time; defaults to a constant 0 (pure topic/seq
    /// order). The sequential engine injects its virtual clock, the wall
    /// drivers a microsecond timer.
    explicit MessageQueue(std::function<uint64_t()> clock = {});

    /// Duplicate (topic, subscriber) registration is an error.
    std::shared_ptr<Endpoint> subscribe(const std::string& topic, const std::string& subscriber);
    /// Also subscribes an existing endpoint to a further topic.
    void subscribe(const std::shared_ptr<Endpoint>& ep, const std::string& topic);

    /// Returns the number of subscribers the message was admitted to.
    size_t publish(const std::string& topic, uint32_t sender, MsgKind kind, std::string payload);

    /// Removes the endpoint from every topic and discards its buffer.
    void close_endpoint(const std::shared_ptr<Endpoint>& ep);
    /// Wakes every blocked receiver; drained endpoints then read as closed.
    void shutdown();
    bool is_shut_down() const;

    TopicCounters counters(const std::string& topic) const;
    std::vector<std::string> topics() const;
    void set_observer(QueueObserver obs);

private:
    friend class Endpoint;

    mutable std::mutex mu_;
    std::function<uint64_t()> clock_;
    std::map<std::string, std::vector<std::shared_ptr<Endpoint>>> subs_;
    std::map<std::string, TopicCounters> counters_;
    QueueObserver observer_;
    uint64_t next_seq_ = 0;
    bool shut_down_ = false;
};

}  // namespace fedsim::comm
