#include "fedsim/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include "fedsim/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

namespace fedsim::learn {

ParamVector::ParamVector(std::vector<LayerShape> s) : shapes(std::move(s)) {
    size_t total = 0;
    for (const auto& sh : shapes) total += sh.size();
    values.assign(total, 0.0);
}

size_t ParamVector::layer_offset(size_t layer) const {
    size_t off = 0;
    for (size_t i = 0; i < layer; ++i) off += shapes[i].size();
    return off;
}

std::span<double> ParamVector::layer(size_t i) {
    return {values.data() + layer_offset(i), shapes[i].size()};
}

std::span<const double> ParamVector::layer(size_t i) const {
    return {values.data() + layer_offset(i), shapes[i].size()};
}

bool ParamVector::all_finite() const {
    for (double v : values)
        if (!std::isfinite(v)) return false;
    return true;
}

namespace {

template <typename T>
void append_raw(std::vector<uint8_t>& out, T v) {
    uint8_t buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.insert(out.end(), buf, buf + sizeof(T));
}

template <typename T>
T read_raw(std::span<const uint8_t> bytes, size_t& pos) {
    if (pos + sizeof(T) > bytes.size())
        throw TransportError("param vector: truncated at byte " + std::to_string(pos));
    T v;
    std::memcpy(&v, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

}  // namespace

std::vector<uint8_t> serialize(const ParamVector& p) {
    std::vector<uint8_t> out;
    out.reserve(4 + p.shapes.size() * 8 + p.values.size() * 8);
    append_raw<uint32_t>(out, static_cast<uint32_t>(p.shapes.size()));
    for (const auto& sh : p.shapes) {
        append_raw<uint32_t>(out, sh.rows);
        append_raw<uint32_t>(out, sh.cols);
    }
    for (double v : p.values) append_raw<double>(out, v);
    return out;
}

ParamVector deserialize(std::span<const uint8_t> bytes) {
    size_t pos = 0;
    uint32_t n_layers = read_raw<uint32_t>(bytes, pos);
    ParamVector p;
    p.shapes.reserve(n_layers);
    size_t total = 0;
    for (uint32_t i = 0; i < n_layers; ++i) {
        LayerShape sh;
        sh.rows = read_raw<uint32_t>(bytes, pos);
        sh.cols = read_raw<uint32_t>(bytes, pos);
        total += sh.size();
        p.shapes.push_back(sh);
    }
    if (pos + total * 8 != bytes.size())
        throw TransportError("param vector: length mismatch (" + std::to_string(bytes.size() - pos) +
                             " value bytes for " + std::to_string(total) + " values)");
    p.values.reserve(total);
    for (size_t i = 0; i < total; ++i) p.values.push_back(read_raw<double>(bytes, pos));
    return p;
}

}  // namespace fedsim::learn
