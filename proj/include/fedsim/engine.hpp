#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "fedsim/task.hpp"

namespace fedsim::exec {

/// Deterministic discrete-event driver for the sequential mode. Every
/// participant is a ResumableTask; the engine activates the runnable task
/// with the smallest (wake_time, participant_id) — the server, id 0, always
/// goes first at equal times. Receive-blocked tasks park until a message
/// reaches their endpoint and wake at the then-current virtual time.
class TimesliceEngine {
public:
    struct Options {
        uint64_t max_activations = 10'000'000;
        /// Called as (participant id, virtual clock) right before each resume.
        std::function<void(uint32_t, uint64_t)> on_activation;
    };

    TimesliceEngine() = default;
    explicit TimesliceEngine(Options opts) : opts_(opts) {}

    /// Participant ids must be unique; id 0 is the server by convention.
    void add_task(uint32_t id, std::string name, ResumableTask task);

    /// Runs until every task completed. Throws RuntimeAbort on deadlock
    /// (parked tasks that can never wake) or when max_activations trips;
    /// exceptions thrown inside task bodies propagate unchanged.
    void run();

    uint64_t now() const { return clock_; }
    uint64_t activations() const { return activations_; }
    /// Virtual clock value at each activation, in order.
    const std::vector<uint64_t>& activation_clocks() const { return activation_clocks_; }
    /// (clock, participant) per activation, in order.
    const std::vector<std::pair<uint64_t, uint32_t>>& activation_schedule() const {
        return activation_schedule_;
    }

private:
    struct Participant {
        std::string name;
        ResumableTask task;
        comm::Endpoint* blocked_on = nullptr;
        bool done = false;
    };

    Options opts_{};
    uint64_t clock_ = 0;
    uint64_t activations_ = 0;
    std::map<uint32_t, Participant> participants_;
    std::set<std::pair<uint64_t, uint32_t>> ready_;  // (wake_time, id)
    std::vector<uint64_t> activation_clocks_;
    std::vector<std::pair<uint64_t, uint32_t>> activation_schedule_;
};

/// Wall-clock driver for the thread-per-participant modes: yields sleep for
/// slices x slice_wall_us, receive blocks on the endpoint. Runs the task to
/// completion; exceptions from the task body propagate to the caller.
void drive_wall(ResumableTask& task, uint64_t slice_wall_us);

}  // namespace fedsim::exec
