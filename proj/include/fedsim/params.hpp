#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace fedsim::learn {

struct LayerShape {
    uint32_t rows = 0;
    uint32_t cols = 0;
    size_t size() const { return static_cast<size_t>(rows) * cols; }
    bool operator==(const LayerShape&) const = default;
};

/// Flat f64 parameter array plus per-layer shape metadata; the unit of all
/// model exchange between clients and the server.
class ParamVector {
public:
    ParamVector() = default;
    explicit ParamVector(std::vector<LayerShape> shapes);

    std::vector<double> values;
    std::vector<LayerShape> shapes;

    size_t size() const { return values.size(); }
    size_t layer_offset(size_t layer) const;
    std::span<double> layer(size_t i);
    std::span<const double> layer(size_t i) const;

    bool same_shape(const ParamVector& other) const { return shapes == other.shapes; }
    bool all_finite() const;

    bool operator==(const ParamVector&) const = default;
};

/// Wire/disk layout: u32 layer count, then (u32 rows, u32 cols) per layer,
/// then values as little-endian f64. Exact round-trip for every bit pattern.
std::vector<uint8_t> serialize(const ParamVector& p);
ParamVector deserialize(std::span<const uint8_t> bytes);

}  // namespace fedsim::learn
