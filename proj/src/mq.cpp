#include "fedsim/mq.hpp"

#include <algorithm>
#include <chrono>

#include "fedsim/errors.hpp"

namespace fedsim::comm {

const char* kind_name(MsgKind k) {
    switch (k) {
        case MsgKind::register_client: return "register";
        case MsgKind::global_model: return "global_model";
        case MsgKind::update: return "update";
        case MsgKind::control: return "control";
        case MsgKind::shutdown: return "shutdown";
        case MsgKind::node_hello: return "node_hello";
        case MsgKind::node_assign: return "node_assign";
        case MsgKind::ack: return "ack";
    }
    return "unknown";
}

const std::string& Envelope::text() const {
    static const std::string empty;
    return payload ? *payload : empty;
}

namespace {

/// Delivery order within one endpoint.
bool before(const Envelope& a, const Envelope& b) {
    if (a.enqueue_time != b.enqueue_time) return a.enqueue_time < b.enqueue_time;
    if (a.topic != b.topic) return a.topic < b.topic;
    return a.seq < b.seq;
}

}  // namespace

void Endpoint::push(Envelope env) {
    auto it = std::upper_bound(buffer_.begin(), buffer_.end(), env,
                               [](const Envelope& a, const Envelope& b) { return before(a, b); });
    buffer_.insert(it, std::move(env));
    cv_.notify_all();
}

std::optional<Envelope> Endpoint::try_receive() {
    std::unique_lock lk(mq_->mu_);
    if (buffer_.empty()) return std::nullopt;
    Envelope env = std::move(buffer_.front());
    buffer_.pop_front();
    auto deliver = mq_->observer_.on_deliver;
    lk.unlock();
    if (deliver) deliver(env, subscriber_);
    return env;
}

std::optional<Envelope> Endpoint::receive_wall() {
    std::unique_lock lk(mq_->mu_);
    cv_.wait(lk, [&] { return !buffer_.empty() || mq_->shut_down_ || detached_; });
    if (buffer_.empty()) return std::nullopt;
    Envelope env = std::move(buffer_.front());
    buffer_.pop_front();
    auto deliver = mq_->observer_.on_deliver;
    lk.unlock();
    if (deliver) deliver(env, subscriber_);
    return env;
}

std::optional<Envelope> Endpoint::receive_wall_for(uint64_t timeout_us) {
    std::unique_lock lk(mq_->mu_);
    cv_.wait_for(lk, std::chrono::microseconds(timeout_us),
                 [&] { return !buffer_.empty() || mq_->shut_down_ || detached_; });
    if (buffer_.empty()) return std::nullopt;
    Envelope env = std::move(buffer_.front());
    buffer_.pop_front();
    auto deliver = mq_->observer_.on_deliver;
    lk.unlock();
    if (deliver) deliver(env, subscriber_);
    return env;
}

void Endpoint::wait_pending_wall() {
    std::unique_lock lk(mq_->mu_);
    cv_.wait(lk, [&] { return !buffer_.empty() || mq_->shut_down_ || detached_; });
}

size_t Endpoint::pending() const {
    std::lock_guard lk(mq_->mu_);
    return buffer_.size();
}

bool Endpoint::closed() const {
    std::lock_guard lk(mq_->mu_);
    return (mq_->shut_down_ || detached_) && buffer_.empty();
}

MessageQueue::MessageQueue(std::function<uint64_t()> clock) : clock_(std::move(clock)) {}

std::shared_ptr<Endpoint> MessageQueue::subscribe(const std::string& topic,
                                                  const std::string& subscriber) {
    auto ep = std::shared_ptr<Endpoint>(new Endpoint(this, subscriber));
    subscribe(ep, topic);
    return ep;
}

void MessageQueue::subscribe(const std::shared_ptr<Endpoint>& ep, const std::string& topic) {
    std::lock_guard lk(mu_);
    if (shut_down_) throw RuntimeAbort("mq: subscribe after shutdown");
    auto& subs = subs_[topic];
    for (const auto& existing : subs)
        if (existing->subscriber_ == ep->subscriber_)
            throw ConfigError("mq: '" + ep->subscriber_ + "' already subscribes to topic '" +
                              topic + "'");
    subs.push_back(ep);
}

size_t MessageQueue::publish(const std::string& topic, uint32_t sender, MsgKind kind,
                             std::string payload) {
    std::unique_lock lk(mu_);
    if (shut_down_) return 0;
    Envelope env;
    env.topic = topic;
    env.sender = sender;
    env.kind = kind;
    env.payload = std::make_shared<const std::string>(std::move(payload));
    env.enqueue_time = clock_ ? clock_() : 0;
    env.seq = next_seq_++;

    auto& c = counters_[topic];
    c.published += 1;
    auto it = subs_.find(topic);
    size_t admitted = 0;
    if (it != subs_.end()) {
        for (const auto& ep : it->second) {
            if (ep->detached_) continue;
            ep->push(env);
            admitted += 1;
        }
    }
    c.admitted += admitted;
    if (admitted == 0) c.dropped_no_subscriber += 1;
    auto on_publish = observer_.on_publish;
    lk.unlock();
    if (on_publish) on_publish(env, admitted);
    return admitted;
}

void MessageQueue::close_endpoint(const std::shared_ptr<Endpoint>& ep) {
    std::lock_guard lk(mu_);
    ep->detached_ = true;
    ep->buffer_.clear();
    for (auto& [topic, subs] : subs_)
        std::erase_if(subs, [&](const auto& e) { return e == ep; });
    ep->cv_.notify_all();
}

void MessageQueue::shutdown() {
    std::lock_guard lk(mu_);
    shut_down_ = true;
    for (auto& [topic, subs] : subs_)
        for (auto& ep : subs) ep->cv_.notify_all();
}

bool MessageQueue::is_shut_down() const {
    std::lock_guard lk(mu_);
    return shut_down_;
}

TopicCounters MessageQueue::counters(const std::string& topic) const {
    std::lock_guard lk(mu_);
    auto it = counters_.find(topic);
    return it == counters_.end() ? TopicCounters{} : it->second;
}

std::vector<std::string> MessageQueue::topics() const {
    std::lock_guard lk(mu_);
    std::vector<std::string> out;
    for (const auto& [topic, c] : counters_) out.push_back(topic);
    return out;
}

void MessageQueue::set_observer(QueueObserver obs) {
    std::lock_guard lk(mu_);
    observer_ = std::move(obs);
}

}  // namespace fedsim::comm
