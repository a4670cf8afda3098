#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>

#include "evflow/core.hpp"

namespace evflow {

struct FlowVector {
  float u = 0.0f;
  float v = 0.0f;

  friend bool operator==(const FlowVector&, const FlowVector&) = default;
};

/// Dense per-pixel displacement, in pixels per window, with a validity mask.
struct FlowField {
  Grid<FlowVector> vectors;
  Grid<std::uint8_t> valid;
  std::int64_t window_index = 0;

  FlowField() = default;
  explicit FlowField(SensorGeometry g, bool all_valid = false)
      : vectors(g), valid(g, all_valid ? 1 : 0) {}

  SensorGeometry geometry() const { return vectors.geometry(); }
  bool is_valid(std::size_t i) const { return valid[i] != 0; }
  bool is_valid(int x, int y) const { return valid(x, y) != 0; }

  std::size_t valid_count() const {
    std::size_t n = 0;
    for (auto b : valid.data()) n += (b != 0);
    return n;
  }

  /// Same geometry and mask, bit-identical vectors on valid pixels. Invalid
  /// pixels carry no vector and the window index is not part of the content.
  friend bool operator==(const FlowField& a, const FlowField& b) {
    if (a.geometry() != b.geometry() || a.valid != b.valid) return false;
    for (std::size_t i = 0; i < a.vectors.size(); ++i) {
      if (!a.valid[i]) continue;
      if (std::memcmp(&a.vectors[i], &b.vectors[i], sizeof(FlowVector)) != 0) return false;
    }
    return true;
  }
};

}  // namespace evflow
