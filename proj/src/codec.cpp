#include "fedsim/codec.hpp"

#include <bit>
#include <cstring>

#include <json.hpp>

#include "fedsim/errors.hpp"

using nlohmann::json;

namespace fedsim::comm {

namespace {

bool known_kind(uint8_t k) {
    return k >= static_cast<uint8_t>(MsgKind::register_client) &&
           k <= static_cast<uint8_t>(MsgKind::ack);
}

/// Strict object accessor set: every key must be consumed exactly once.
class StrictObject {
public:
    explicit StrictObject(std::string_view payload) {
        json parsed = json::parse(payload, nullptr, false);
        if (parsed.is_discarded() || !parsed.is_object())
            throw TransportError("codec: payload is not a JSON object");
        obj_ = std::move(parsed);
    }

    template <typename T>
    T get(const char* key) {
        auto it = obj_.find(key);
        if (it == obj_.end())
            throw TransportError(std::string("codec: missing key '") + key + "'");
        seen_.push_back(key);
        try {
            return it->template get<T>();
        } catch (const json::exception&) {
            throw TransportError(std::string("codec: bad value for key '") + key + "'");
        }
    }

    bool has(const char* key) const { return obj_.contains(key); }

    /// Call last: any key not consumed is a malformation.
    void done() const {
        for (const auto& [key, value] : obj_.items()) {
            bool ok = false;
            for (const auto& s : seen_) ok = ok || s == key;
            if (!ok) throw TransportError("codec: unknown key '" + key + "'");
        }
    }

private:
    json obj_;
    std::vector<std::string> seen_;
};

constexpr char b64_alphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int8_t b64_value(char c) {
    if (c >= 'A' && c <= 'Z') return static_cast<int8_t>(c - 'A');
    if (c >= 'a' && c <= 'z') return static_cast<int8_t>(c - 'a' + 26);
    if (c >= '0' && c <= '9') return static_cast<int8_t>(c - '0' + 52);
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
}

}  // namespace

std::vector<uint8_t> encode_frame(MsgKind kind, std::string_view payload) {
    if (payload.size() > max_frame_payload) throw TransportError("codec: frame payload too large");
    std::vector<uint8_t> out;
    out.reserve(5 + payload.size());
    const auto len = static_cast<uint32_t>(payload.size());
    out.push_back(static_cast<uint8_t>(len >> 24));
    out.push_back(static_cast<uint8_t>(len >> 16));
    out.push_back(static_cast<uint8_t>(len >> 8));
    out.push_back(static_cast<uint8_t>(len));
    out.push_back(static_cast<uint8_t>(kind));
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

std::optional<Frame> try_decode_frame(std::span<const uint8_t> bytes, size_t& consumed) {
    if (bytes.size() < 5) return std::nullopt;
    const uint32_t len = (static_cast<uint32_t>(bytes[0]) << 24) |
                         (static_cast<uint32_t>(bytes[1]) << 16) |
                         (static_cast<uint32_t>(bytes[2]) << 8) | static_cast<uint32_t>(bytes[3]);
    if (len > max_frame_payload) throw TransportError("codec: frame length " + std::to_string(len) +
                                                      " exceeds the payload limit");
    if (!known_kind(bytes[4]))
        throw TransportError("codec: unknown frame kind " + std::to_string(bytes[4]));
    if (bytes.size() < 5 + static_cast<size_t>(len)) return std::nullopt;
    Frame f;
    f.kind = static_cast<MsgKind>(bytes[4]);
    f.payload.assign(reinterpret_cast<const char*>(bytes.data()) + 5, len);
    consumed += 5 + static_cast<size_t>(len);
    return f;
}

std::string base64_encode(std::span<const uint8_t> bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    size_t i = 0;
    for (; i + 3 <= bytes.size(); i += 3) {
        const uint32_t v = (static_cast<uint32_t>(bytes[i]) << 16) |
                           (static_cast<uint32_t>(bytes[i + 1]) << 8) | bytes[i + 2];
        out.push_back(b64_alphabet[(v >> 18) & 0x3F]);
        out.push_back(b64_alphabet[(v >> 12) & 0x3F]);
        out.push_back(b64_alphabet[(v >> 6) & 0x3F]);
        out.push_back(b64_alphabet[v & 0x3F]);
    }
    const size_t rest = bytes.size() - i;
    if (rest == 1) {
        const uint32_t v = static_cast<uint32_t>(bytes[i]) << 16;
        out.push_back(b64_alphabet[(v >> 18) & 0x3F]);
        out.push_back(b64_alphabet[(v >> 12) & 0x3F]);
        out.append("==");
    } else if (rest == 2) {
        const uint32_t v = (static_cast<uint32_t>(bytes[i]) << 16) |
                           (static_cast<uint32_t>(bytes[i + 1]) << 8);
        out.push_back(b64_alphabet[(v >> 18) & 0x3F]);
        out.push_back(b64_alphabet[(v >> 12) & 0x3F]);
        out.push_back(b64_alphabet[(v >> 6) & 0x3F]);
        out.push_back('=');
    }
    return out;
}

std::vector<uint8_t> base64_decode(std::string_view text) {
    if (text.size() % 4 != 0) throw TransportError("base64: length not a multiple of 4");
    std::vector<uint8_t> out;
    out.reserve(text.size() / 4 * 3);
    for (size_t i = 0; i < text.size(); i += 4) {
        const bool last = i + 4 == text.size();
        int pad = 0;
        uint32_t v = 0;
        for (int j = 0; j < 4; ++j) {
            const char c = text[i + j];
            if (c == '=') {
                if (!last || j < 2) throw TransportError("base64: misplaced padding");
                pad += 1;
                v <<= 6;
                continue;
            }
            if (pad > 0) throw TransportError("base64: data after padding");
            const int8_t d = b64_value(c);
            if (d < 0) throw TransportError("base64: invalid character");
            v = (v << 6) | static_cast<uint32_t>(d);
        }
        out.push_back(static_cast<uint8_t>(v >> 16));
        if (pad < 2) out.push_back(static_cast<uint8_t>(v >> 8));
        if (pad < 1) out.push_back(static_cast<uint8_t>(v));
    }
    return out;
}

std::string encode_values(std::span<const double> values) {
    static_assert(std::endian::native == std::endian::little);
    std::vector<uint8_t> raw(values.size() * sizeof(double));
    if (!values.empty()) std::memcpy(raw.data(), values.data(), raw.size());
    return base64_encode(raw);
}

std::vector<double> decode_values(std::string_view b64) {
    auto raw = base64_decode(b64);
    if (raw.size() % sizeof(double) != 0)
        throw TransportError("codec: value array is not a whole number of doubles");
    std::vector<double> out(raw.size() / sizeof(double));
    if (!out.empty()) std::memcpy(out.data(), raw.data(), raw.size());
    return out;
}

std::string encode_payload(const RegisterMsg& m) {
    return json{{"client_id", m.client_id}, {"n_samples", m.n_samples}}.dump();
}

std::string encode_payload(const GlobalModelMsg& m) {
    return json{{"version", m.version}, {"params_b64", m.params_b64},
                {"participants", m.participants}}
        .dump();
}

std::string encode_payload(const UpdateMsg& m) {
    json j{{"client_id", m.client_id},  {"base_version", m.base_version},
           {"n_samples", m.n_samples}, {"tau", m.tau},
           {"params_b64", m.params_b64}};
    if (m.mask) j["mask"] = {{"offset", m.mask->offset}, {"count", m.mask->count}};
    if (!m.metrics.empty()) j["metrics"] = m.metrics;
    return j.dump();
}

std::string encode_payload(const ControlMsg& m) {
    return json{{"action", m.action}, {"target", m.target}, {"detail", m.detail}}.dump();
}

std::string encode_payload(const NodeHelloMsg& m) {
    return json{{"capacity", m.capacity}, {"token", m.token}}.dump();
}

std::string encode_payload(const NodeAssignMsg& m) {
    return json{{"node_id", m.node_id},
                {"clients", m.clients},
                {"config_json", m.config_json},
                {"store_b64", m.store_b64}}
        .dump();
}

std::string encode_payload(const AckMsg& m) { return json{{"what", m.what}}.dump(); }

RegisterMsg parse_register(std::string_view payload) {
    StrictObject o(payload);
    RegisterMsg m;
    m.client_id = o.get<uint32_t>("client_id");
    m.n_samples = o.get<uint32_t>("n_samples");
    o.done();
    return m;
}

GlobalModelMsg parse_global_model(std::string_view payload) {
    StrictObject o(payload);
    GlobalModelMsg m;
    m.version = o.get<uint64_t>("version");
    m.params_b64 = o.get<std::string>("params_b64");
    m.participants = o.get<std::vector<uint32_t>>("participants");
    o.done();
    return m;
}

UpdateMsg parse_update(std::string_view payload) {
    StrictObject o(payload);
    UpdateMsg m;
    m.client_id = o.get<uint32_t>("client_id");
    m.base_version = o.get<uint64_t>("base_version");
    m.n_samples = o.get<uint32_t>("n_samples");
    m.tau = o.get<uint32_t>("tau");
    m.params_b64 = o.get<std::string>("params_b64");
    if (o.has("mask")) {
        auto mask = o.get<json>("mask");
        if (!mask.is_object() || !mask.contains("offset") || !mask.contains("count") ||
            mask.size() != 2)
            throw TransportError("codec: malformed mask object");
        try {
            m.mask = MaskRange{mask["offset"].get<uint64_t>(), mask["count"].get<uint64_t>()};
        } catch (const json::exception&) {
            throw TransportError("codec: malformed mask object");
        }
    }
    if (o.has("metrics")) m.metrics = o.get<std::map<std::string, double>>("metrics");
    o.done();
    return m;
}

ControlMsg parse_control(std::string_view payload) {
    StrictObject o(payload);
    ControlMsg m;
    m.action = o.get<std::string>("action");
    m.target = o.get<uint32_t>("target");
    m.detail = o.get<std::string>("detail");
    o.done();
    return m;
}

NodeHelloMsg parse_node_hello(std::string_view payload) {
    StrictObject o(payload);
    NodeHelloMsg m;
    m.capacity = o.get<uint32_t>("capacity");
    m.token = o.get<std::string>("token");
    o.done();
    return m;
}

NodeAssignMsg parse_node_assign(std::string_view payload) {
    StrictObject o(payload);
    NodeAssignMsg m;
    m.node_id = o.get<uint32_t>("node_id");
    m.clients = o.get<std::vector<uint32_t>>("clients");
    m.config_json = o.get<std::string>("config_json");
    m.store_b64 = o.get<std::string>("store_b64");
    o.done();
    return m;
}

AckMsg parse_ack(std::string_view payload) {
    StrictObject o(payload);
    AckMsg m;
    m.what = o.get<std::string>("what");
    o.done();
    return m;
}

void validate_payload(MsgKind kind, std::string_view payload) {
    switch (kind) {
        case MsgKind::register_client: parse_register(payload); return;
        case MsgKind::global_model: parse_global_model(payload); return;
        case MsgKind::update: parse_update(payload); return;
        case MsgKind::control: parse_control(payload); return;
        case MsgKind::shutdown:
            if (!payload.empty()) throw TransportError("codec: shutdown carries a payload");
            return;
        case MsgKind::node_hello: parse_node_hello(payload); return;
        case MsgKind::node_assign: parse_node_assign(payload); return;
        case MsgKind::ack: parse_ack(payload); return;
    }
    throw TransportError("codec: unknown kind");
}

}  // namespace fedsim::comm
