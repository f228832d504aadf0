#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "fedsim/transport.hpp"

namespace fedsim::net {

struct NodeOptions {
    /// Most clients this node will host; offered in NodeHello.
    uint32_t capacity = 64;
    /// Session artifacts land in workdir/node_<id>/.
    std::filesystem::path workdir = ".";
};

/// Worker half of the node protocol, shared by fork children and remote
/// `fedsim node` processes: sends NodeHello (token from FEDSIM_NODE_TOKEN),
/// rebuilds the experiment from the NodeAssign it gets back (config JSON plus
/// an inline dataset image), acks, then hosts its assigned clients on a local
/// queue bridged to the connection until the main process hangs up.
void node_session(Connection conn, const NodeOptions& opts);

/// `fedsim node --listen`: accepts and serves sessions on host:port. Prints
/// the bound address once ready. Serves forever unless once is set; returns
/// a process exit code.
int serve_node(const std::string& host, uint16_t port, const NodeOptions& opts, bool once);

}  // namespace fedsim::net
