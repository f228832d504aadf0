#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedsim/mq.hpp"
#include "fedsim/params.hpp"

namespace fedsim::comm {

// ---- Framing ----
// A frame is: u32 big-endian payload length, u8 kind, payload bytes.
// An empty-payload shutdown frame is therefore exactly 00 00 00 00 05.

constexpr size_t max_frame_payload = 64u << 20;

struct Frame {
    MsgKind kind;
    std::string payload;
};

std::vector<uint8_t> encode_frame(MsgKind kind, std::string_view payload);

/// Consumes one frame from the front of bytes. Empty result means the buffer
/// holds only a frame prefix so far; consumed is then untouched. Unknown kind
/// bytes and oversized lengths throw TransportError.
std::optional<Frame> try_decode_frame(std::span<const uint8_t> bytes, size_t& consumed);

// ---- Base64 (RFC 4648, padded) ----
std::string base64_encode(std::span<const uint8_t> bytes);
std::vector<uint8_t> base64_decode(std::string_view text);

/// f64 little-endian array <-> base64 text; exact for every bit pattern.
std::string encode_values(std::span<const double> values);
std::vector<double> decode_values(std::string_view b64);

// ---- Typed payloads (JSON) ----
// Parsers are strict: missing or unknown keys throw TransportError.

struct RegisterMsg {
    uint32_t client_id = 0;
    uint32_t n_samples = 0;
    bool operator==(const RegisterMsg&) const = default;
};

struct GlobalModelMsg {
    uint64_t version = 0;
    std::string params_b64;
    /// Clients asked to train on this model; empty means everyone.
    std::vector<uint32_t> participants;
    bool operator==(const GlobalModelMsg&) const = default;
};

struct MaskRange {
    uint64_t offset = 0;
    uint64_t count = 0;
    bool operator==(const MaskRange&) const = default;
};

struct UpdateMsg {
    uint32_t client_id = 0;
    uint64_t base_version = 0;
    uint32_t n_samples = 0;
    uint32_t tau = 0;
    /// Raw f64 values: the full vector, or just the masked range.
    std::string params_b64;
    std::optional<MaskRange> mask;
    std::map<std::string, double> metrics;
    bool operator==(const UpdateMsg&) const = default;
};

struct ControlMsg {
    std::string action;
    uint32_t target = 0;
    std::string detail;
    bool operator==(const ControlMsg&) const = default;
};

struct NodeHelloMsg {
    uint32_t capacity = 0;
    std::string token;
    bool operator==(const NodeHelloMsg&) const = default;
};

struct NodeAssignMsg {
    uint32_t node_id = 0;
    std::vector<uint32_t> clients;
    std::string config_json;
    /// Inline FMDS image so remote nodes need no shared filesystem.
    std::string store_b64;
    bool operator==(const NodeAssignMsg&) const = default;
};

struct AckMsg {
    std::string what;
    bool operator==(const AckMsg&) const = default;
};

std::string encode_payload(const RegisterMsg&);
std::string encode_payload(const GlobalModelMsg&);
std::string encode_payload(const UpdateMsg&);
std::string encode_payload(const ControlMsg&);
std::string encode_payload(const NodeHelloMsg&);
std::string encode_payload(const NodeAssignMsg&);
std::string encode_payload(const AckMsg&);

RegisterMsg parse_register(std::string_view payload);
GlobalModelMsg parse_global_model(std::string_view payload);
UpdateMsg parse_update(std::string_view payload);
ControlMsg parse_control(std::string_view payload);
NodeHelloMsg parse_node_hello(std::string_view payload);
NodeAssignMsg parse_node_assign(std::string_view payload);
AckMsg parse_ack(std::string_view payload);

/// Parses payload text per kind; shutdown requires an empty payload.
/// Throws TransportError on any malformation. Used directly by the fuzz
/// tests: every byte string either parses or throws, never crashes.
void validate_payload(MsgKind kind, std::string_view payload);

}  // namespace fedsim::comm
