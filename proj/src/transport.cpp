#include "fedsim/transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <thread>

#include "fedsim/errors.hpp"

namespace fedsim::net {

namespace {

[[noreturn]] void fail(const std::string& what) {
    throw TransportError(what + ": " + std::strerror(errno));
}

}  // namespace

Connection& Connection::operator=(Connection&& other) noexcept {
    if (this != &other) {
        close();
        fd_ = other.fd_;
        rbuf_ = std::move(other.rbuf_);
        other.fd_ = -1;
    }
    return *this;
}

void Connection::send_frame(comm::MsgKind kind, std::string_view payload) {
    if (fd_ < 0) throw TransportError("send on closed connection");
    std::vector<uint8_t> frame = comm::encode_frame(kind, payload);
    size_t off = 0;
    while (off < frame.size()) {
        // MSG_NOSIGNAL: a dead peer surfaces as EPIPE, not SIGPIPE.
        ssize_t n = ::send(fd_, frame.data() + off, frame.size() - off, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            fail("send");
        }
        off += static_cast<size_t>(n);
    }
}

std::optional<comm::Frame> Connection::recv_frame() {
    if (fd_ < 0) throw TransportError("recv on closed connection");
    for (;;) {
        size_t consumed = 0;
        if (auto frame = comm::try_decode_frame(rbuf_, consumed)) {
            rbuf_.erase(rbuf_.begin(), rbuf_.begin() + static_cast<ptrdiff_t>(consumed));
            return frame;
        }
        uint8_t chunk[4096];
        ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
        if (n < 0) {
            if (errno == EINTR) continue;
            fail("recv");
        }
        if (n == 0) {
            if (rbuf_.empty()) return std::nullopt;
            throw TransportError("connection closed mid-frame (" +
                                 std::to_string(rbuf_.size()) + " bytes pending)");
        }
        rbuf_.insert(rbuf_.end(), chunk, chunk + n);
    }
}

void Connection::shutdown_write() {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_WR);
}

void Connection::close() {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
    rbuf_.clear();
}

Listener::Listener(const std::string& host, uint16_t port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) fail("socket");
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        ::close(fd_);
        fd_ = -1;
        throw TransportError("listen: bad address \"" + host + "\"");
    }
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 ||
        ::listen(fd_, 16) < 0) {
        int e = errno;
        ::close(fd_);
        fd_ = -1;
        errno = e;
        fail("listen on " + host + ":" + std::to_string(port));
    }
    socklen_t len = sizeof addr;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
}

Connection Listener::accept() {
    if (fd_ < 0) throw TransportError("accept on closed listener");
    for (;;) {
        int cfd = ::accept(fd_, nullptr, nullptr);
        if (cfd >= 0) {
            int one = 1;
            ::setsockopt(cfd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
            return Connection(cfd);
        }
        if (errno != EINTR) fail("accept");
    }
}

void Listener::close() {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

Connection connect_to(const std::string& host, uint16_t port, int timeout_ms) {
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    std::string ip = (host == "localhost") ? "127.0.0.1" : host;
    if (::inet_pton(AF_INET, ip.c_str(), &addr.sin_addr) != 1)
        throw TransportError("connect: bad address \"" + host + "\"");
    auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    for (;;) {
        int fd = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd < 0) fail("socket");
        if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0) {
            int one = 1;
            ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
            return Connection(fd);
        }
        int e = errno;
        ::close(fd);
        if (std::chrono::steady_clock::now() >= deadline) {
            errno = e;
            fail("connect to " + host + ":" + std::to_string(port));
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
}

std::pair<Connection, Connection> socket_pair() {
    int fds[2];
    if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) < 0) fail("socketpair");
    return {Connection(fds[0]), Connection(fds[1])};
}

std::pair<std::string, uint16_t> split_address(const std::string& addr) {
    size_t colon = addr.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == addr.size())
        throw ConfigError("address \"" + addr + "\" is not host:port");
    unsigned long port = 0;
    try {
        size_t used = 0;
        port = std::stoul(addr.substr(colon + 1), &used);
        if (used != addr.size() - colon - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
        throw ConfigError("address \"" + addr + "\" has a bad port");
    }
    if (port > 65535) throw ConfigError("address \"" + addr + "\" has a bad port");
    // Port 0 stays legal: --listen uses it to pick a free port.
    return {addr.substr(0, colon), static_cast<uint16_t>(port)};
}

}  // namespace fedsim::net
