#pragma once

#include <coroutine>
#include <exception>
#include <optional>
#include <utility>

#include "fedsim/errors.hpp"
#include "fedsim/mq.hpp"

namespace fedsim::exec {

/// Why a task suspended. `yield` consumed virtual time, `blocked` waits on a
/// queue endpoint, `done` means the coroutine returned.
enum class SuspendKind { yield, blocked, done };

struct TaskStatus {
    SuspendKind kind = SuspendKind::done;
    uint64_t slices = 0;              // yield
    comm::Endpoint* endpoint = nullptr;  // blocked
};

/// A participant pipeline as a resumable coroutine. The same coroutine body
/// runs under the virtual-clock engine and under wall-clock thread drivers;
/// only the driver interprets the suspensions differently.
class ResumableTask {
public:
    struct promise_type {
        TaskStatus status;
        std::exception_ptr error;

        ResumableTask get_return_object() {
            return ResumableTask(std::coroutine_handle<promise_type>::from_promise(*this));
        }
        std::suspend_always initial_suspend() noexcept { return {}; }
        std::suspend_always final_suspend() noexcept { return {}; }
        void return_void() {}
        void unhandled_exception() { error = std::current_exception(); }
    };

    ResumableTask() = default;
    explicit ResumableTask(std::coroutine_handle<promise_type> h) : h_(h) {}
    ResumableTask(ResumableTask&& other) noexcept : h_(std::exchange(other.h_, {})) {}
    ResumableTask& operator=(ResumableTask&& other) noexcept {
        if (this != &other) {
            destroy();
            h_ = std::exchange(other.h_, {});
        }
        return *this;
    }
    ResumableTask(const ResumableTask&) = delete;
    ResumableTask& operator=(const ResumableTask&) = delete;
    ~ResumableTask() { destroy(); }

    bool valid() const { return static_cast<bool>(h_); }
    bool done() const { return !h_ || h_.done(); }

    /// Runs until the next suspension and reports it. A task that already
    /// finished must not be resumed again. Exceptions from the coroutine
    /// body rethrow here, in the driver's context.
    TaskStatus resume() {
        if (done()) throw RuntimeAbort("task: resumed after completion");
        h_.resume();
        if (h_.promise().error) std::rethrow_exception(h_.promise().error);
        if (h_.done()) return TaskStatus{};
        return h_.promise().status;
    }

private:
    void destroy() {
        if (h_) {
            h_.destroy();
            h_ = {};
        }
    }
    std::coroutine_handle<promise_type> h_;
};

/// co_await YieldFor{n}: consume n timeslices. Zero slices never suspends.
struct YieldFor {
    uint64_t slices = 1;

    bool await_ready() const noexcept { return slices == 0; }
    void await_suspend(std::coroutine_handle<ResumableTask::promise_type> h) const {
        h.promise().status = {SuspendKind::yield, slices, nullptr};
    }
    void await_resume() const noexcept {}
};

/// co_await Receive{ep}: next envelope from the endpoint, or std::nullopt
/// once the endpoint is closed. Suspends only when nothing is pending; the
/// driver must resume it only when a message arrived or the endpoint closed.
struct Receive {
    comm::Endpoint* ep;

    bool await_ready() const { return ep->pending() > 0 || ep->closed(); }
    void await_suspend(std::coroutine_handle<ResumableTask::promise_type> h) const {
        h.promise().status = {SuspendKind::blocked, 0, ep};
    }
    std::optional<comm::Envelope> await_resume() const {
        auto env = ep->try_receive();
        if (env) return env;
        if (ep->closed()) return std::nullopt;
        throw RuntimeAbort("task: resumed from receive with nothing pending");
    }
};

}  // namespace fedsim::exec
