#include "fedsim/engine.hpp"

#include <chrono>
#include <thread>

namespace fedsim::exec {

void TimesliceEngine::add_task(uint32_t id, std::string name, ResumableTask task) {
    if (participants_.contains(id))
        throw ConfigError("engine: duplicate participant id " + std::to_string(id));
    if (!task.valid()) throw ConfigError("engine: invalid task for '" + name + "'");
    participants_.emplace(id, Participant{std::move(name), std::move(task), nullptr, false});
    ready_.insert({0, id});
}

void TimesliceEngine::run() {
    size_t remaining = participants_.size();
    while (remaining > 0) {
        if (ready_.empty()) {
            // Everyone left is parked on an endpoint that has no message and
            // is not closed: nothing can ever make progress again.
            std::string who;
            for (const auto& [id, p] : participants_)
                if (!p.done && p.blocked_on != nullptr)
                    who += (who.empty() ? "" : ", ") + p.name;
            throw RuntimeAbort("engine: deadlock, blocked participants wait forever: " + who);
        }
        auto [wake, id] = *ready_.begin();
        ready_.erase(ready_.begin());
        clock_ = wake;  // never decreases: wake times are >= the current clock

        if (++activations_ > opts_.max_activations)
            throw RuntimeAbort("engine: exceeded max_activations (" +
                               std::to_string(opts_.max_activations) + "), likely livelock");
        activation_clocks_.push_back(clock_);
        activation_schedule_.push_back({clock_, id});
        if (opts_.on_activation) opts_.on_activation(id, clock_);

        Participant& p = participants_.at(id);
        TaskStatus st = p.task.resume();
        switch (st.kind) {
            case SuspendKind::yield:
                ready_.insert({clock_ + st.slices, id});
                break;
            case SuspendKind::blocked:
                p.blocked_on = st.endpoint;
                break;
            case SuspendKind::done:
                p.done = true;
                remaining -= 1;
                break;
        }

        // The activation may have published; wake parked tasks that now have
        // input (or whose endpoint closed). They become runnable at the
        // current virtual time and compete in (time, id) order.
        for (auto& [pid, part] : participants_) {
            if (part.blocked_on == nullptr || part.done) continue;
            if (part.blocked_on->pending() > 0 || part.blocked_on->closed()) {
                part.blocked_on = nullptr;
                ready_.insert({clock_, pid});
            }
        }
    }
}

void drive_wall(ResumableTask& task, uint64_t slice_wall_us) {
    while (!task.done()) {
        TaskStatus st = task.resume();
        switch (st.kind) {
            case SuspendKind::yield:
                if (slice_wall_us > 0)
                    std::this_thread::sleep_for(std::chrono::microseconds(st.slices * slice_wall_us));
                break;
            case SuspendKind::blocked:
                st.endpoint->wait_pending_wall();
                break;
            case SuspendKind::done:
                return;
        }
    }
}

}  // namespace fedsim::exec
