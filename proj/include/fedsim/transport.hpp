#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fedsim/codec.hpp"

namespace fedsim::net {

/// Owning fd with framed message I/O (u32-BE length, u8 kind, payload).
/// Safe to use from one reader thread and one writer thread concurrently.
class Connection {
  public:
    Connection() = default;
    explicit Connection(int fd) : fd_(fd) {}
    ~Connection() { close(); }
    Connection(Connection&& other) noexcept { *this = std::move(other); }
    Connection& operator=(Connection&& other) noexcept;
    Connection(const Connection&) = delete;
    Connection& operator=(const Connection&) = delete;

    bool valid() const { return fd_ >= 0; }
    int fd() const { return fd_; }

    /// Writes one whole frame; TransportError on any failure.
    void send_frame(comm::MsgKind kind, std::string_view payload);

    /// Blocks for the next frame. Empty result means clean EOF at a frame
    /// boundary; EOF mid-frame or malformed bytes throw TransportError.
    std::optional<comm::Frame> recv_frame();

    /// Half-close: peer's next recv_frame sees EOF once drained.
    void shutdown_write();
    void close();

  private:
    int fd_ = -1;
    std::vector<uint8_t> rbuf_;
};

/// Blocking TCP acceptor on host:port (port 0 picks a free one).
class Listener {
  public:
    Listener(const std::string& host, uint16_t port);
    ~Listener() { close(); }
    Listener(const Listener&) = delete;
    Listener& operator=(const Listener&) = delete;

    uint16_t port() const { return port_; }
    Connection accept();
    void close();

  private:
    int fd_ = -1;
    uint16_t port_ = 0;
};

/// TCP connect with retries inside timeout_ms (covers just-launched peers).
Connection connect_to(const std::string& host, uint16_t port, int timeout_ms = 10000);

/// Connected AF_UNIX pair for fork-based workers: {parent_end, child_end}.
std::pair<Connection, Connection> socket_pair();

/// "host:port" -> parts; ConfigError if malformed.
std::pair<std::string, uint16_t> split_address(const std::string& addr);

}  // namespace fedsim::net
