#pragma once

// Context builders shared by the in-process drivers (runner.cpp) and the
// node-based drivers (nodes.cpp).

#include <optional>
#include <string>

#include "fedsim/assemble.hpp"
#include "fedsim/events.hpp"
#include "fedsim/pipeline.hpp"

namespace fedsim::run::detail {

std::optional<uint32_t> subscriber_id(const std::string& name);
comm::QueueObserver make_observer(obs::EventLog& log, VirtualClock vclock);
ServerContext make_server_ctx(const cfg::ExperimentPlan& plan, comm::MessageQueue& mq,
                              obs::EventLog& log, VirtualClock vclock, ServerResult* out);
ClientContext make_client_ctx(const cfg::ExperimentPlan& plan, const cfg::ClientProfile& profile,
                              comm::MessageQueue& mq, obs::EventLog& log, VirtualClock vclock);
void detach_all(const cfg::ExperimentPlan& plan);

}  // namespace fedsim::run::detail
