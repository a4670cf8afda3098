#pragma once

#include <string>

#include "evflow/core.hpp"
#include "evflow/parallel.hpp"

namespace evflow {

struct FilterParams {
  int denoise_threshold = 1;  // N_d in [0, 4]; 0 disables denoising
  int fill_threshold = 4;     // N_f in [1, 5]; 5 disables filling

  void validate() const {
    if (denoise_threshold < 0 || denoise_threshold > 4)
      throw ParameterError("denoising threshold must be in [0,4], got " +
                           std::to_string(denoise_threshold));
    if (fill_threshold < 1 || fill_threshold > 5)
      throw ParameterError("filling threshold must be in [1,5], got " +
                           std::to_string(fill_threshold));
  }

  friend bool operator==(const FilterParams&, const FilterParams&) = default;
};

namespace detail {

/// Set 4-neighbours of (x, y); out-of-frame neighbours count as unset.
inline int edge_neighbours(const Grid<std::uint8_t>& b, int x, int y) {
  const int w = b.width(), h = b.height();
  int n = 0;
  if (x > 0) n += b(x - 1, y) != 0;
  if (x + 1 < w) n += b(x + 1, y) != 0;
  if (y > 0) n += b(x, y - 1) != 0;
  if (y + 1 < h) n += b(x, y + 1) != 0;
  return n;
}

}  // namespace detail

/// Drops edge pixels with fewer than `threshold` set 4-neighbours. Counts are
/// taken on the input only, so removals never cascade.
inline EdgeImage denoise(const EdgeImage& in, int threshold, ThreadPool* pool = nullptr) {
  FilterParams{threshold, 5}.validate();
  EdgeImage out = in;
  if (threshold == 0) return out;
  const auto& src = in.bits;
  auto& dst = out.bits;
  for_rows(pool, src.height(), [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y)
      for (int x = 0; x < src.width(); ++x)
        if (src(x, y) && detail::edge_neighbours(src, x, y) < threshold) dst(x, y) = 0;
  });
  return out;
}

/// Sets non-edge pixels with at least `threshold` set 4-neighbours. Existing
/// edge pixels are kept.
inline EdgeImage fill(const EdgeImage& in, int threshold, ThreadPool* pool = nullptr) {
  FilterParams{0, threshold}.validate();
  EdgeImage out = in;
  if (threshold == 5) return out;
  const auto& src = in.bits;
  auto& dst = out.bits;
  for_rows(pool, src.height(), [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y)
      for (int x = 0; x < src.width(); ++x)
        if (!src(x, y) && detail::edge_neighbours(src, x, y) >= threshold) dst(x, y) = 1;
  });
  return out;
}

inline EdgeImage denoise_fill(const EdgeImage& in, const FilterParams& params,
                              ThreadPool* pool = nullptr) {
  params.validate();
  return fill(denoise(in, params.denoise_threshold, pool), params.fill_threshold, pool);
}

}  // namespace evflow
