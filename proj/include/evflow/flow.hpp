#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "evflow/core.hpp"
#include "evflow/flow_field.hpp"
#include "evflow/parallel.hpp"

namespace evflow {

/// Pyramid and solver settings. Index 0 is the finest (full-resolution) level.
struct FlowConfig {
  int levels = 3;
  std::vector<double> regularization{50.0, 250.0, 500.0};
  std::vector<int> smooth_iterations{50, 25, 5};
  double temporal_decay = 0.5;  // gamma in [0, 1]
  /// Surfaces are multiplied by this before the solve; the regularisation
  /// weights are relative to squared gradients in these units.
  double intensity_scale = 64.0;

  void validate() const {
    if (levels < 1) throw ParameterError("pyramid needs at least one level");
    if (static_cast<int>(regularization.size()) != levels)
      throw ParameterError("expected " + std::to_string(levels) + " regularization weights, got " +
                           std::to_string(regularization.size()));
    if (static_cast<int>(smooth_iterations.size()) != levels)
      throw ParameterError("expected " + std::to_string(levels) + " iteration counts, got " +
                           std::to_string(smooth_iterations.size()));
    for (double l : regularization)
      if (!(l >= 0.0)) throw ParameterError("regularization weights must be >= 0");
    for (int n : smooth_iterations)
      if (n < 0) throw ParameterError("iteration counts must be >= 0");
    if (!(temporal_decay >= 0.0 && temporal_decay <= 1.0))
      throw ParameterError("temporal decay must be in [0,1]");
    if (!(intensity_scale > 0.0)) throw ParameterError("intensity scale must be > 0");
  }
};

using VectorGrid = Grid<FlowVector>;

// ---------------------------------------------------------------------------
// Sampling and warping
// ---------------------------------------------------------------------------

namespace detail {

inline FlowVector lerp(const FlowVector& a, const FlowVector& b, float t) {
  return {(1.0f - t) * a.u + t * b.u, (1.0f - t) * a.v + t * b.v};
}
inline float lerp(float a, float b, float t) { return (1.0f - t) * a + t * b; }

/// Bilinear sample with coordinates clamped to the grid.
template <typename T>
T sample_bilinear(const Grid<T>& g, float sx, float sy) {
  const int w = g.width(), h = g.height();
  sx = std::clamp(sx, 0.0f, static_cast<float>(w - 1));
  sy = std::clamp(sy, 0.0f, static_cast<float>(h - 1));
  const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
  const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const float fx = sx - static_cast<float>(x0), fy = sy - static_cast<float>(y0);
  const T top = lerp(g(x0, y0), g(x1, y0), fx);
  const T bottom = lerp(g(x0, y1), g(x1, y1), fx);
  return lerp(top, bottom, fy);
}

}  // namespace detail

/// output(p) = I(p + F(p)), bilinear, clamped at the border.
template <typename T>
Grid<T> warp_grid(const Grid<T>& image, const VectorGrid& flow, float sign = 1.0f,
                  ThreadPool* pool = nullptr) {
  if (image.geometry() != flow.geometry()) throw GeometryError("warp: geometry mismatch");
  Grid<T> out(image.geometry());
  for_rows(pool, image.height(), [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y)
      for (int x = 0; x < image.width(); ++x) {
        const auto& f = flow(x, y);
        out(x, y) = detail::sample_bilinear(image, static_cast<float>(x) + sign * f.u,
                                            static_cast<float>(y) + sign * f.v);
      }
  });
  return out;
}

inline ScalarGrid warp_image(const ScalarGrid& image, const FlowField& flow,
                             ThreadPool* pool = nullptr) {
  return warp_grid(image, flow.vectors, 1.0f, pool);
}

// ---------------------------------------------------------------------------
// Pyramid helpers
// ---------------------------------------------------------------------------

/// 2x2 mean; odd trailing rows/columns average what is available.
inline ScalarGrid downsample(const ScalarGrid& in) {
  const int w = (in.width() + 1) / 2, h = (in.height() + 1) / 2;
  ScalarGrid out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float sum = 0.0f;
      int n = 0;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          const int sx = 2 * x + dx, sy = 2 * y + dy;
          if (sx < in.width() && sy < in.height()) {
            sum += in(sx, sy);
            ++n;
          }
        }
      out(x, y) = sum / static_cast<float>(n);
    }
  return out;
}

/// Bilinear upsampling onto a finer grid, with vectors scaled by the size ratio.
inline VectorGrid upsample_flow(const VectorGrid& coarse, SensorGeometry fine) {
  VectorGrid out(fine);
  const float sx = static_cast<float>(fine.width) / coarse.width();
  const float sy = static_cast<float>(fine.height) / coarse.height();
  for (int y = 0; y < fine.height; ++y)
    for (int x = 0; x < fine.width; ++x) {
      const auto c = detail::sample_bilinear(coarse, (x + 0.5f) / sx - 0.5f, (y + 0.5f) / sy - 0.5f);
      out(x, y) = {c.u * sx, c.v * sy};
    }
  return out;
}

// ---------------------------------------------------------------------------
// Estimation
// ---------------------------------------------------------------------------

/// Carried between windows: the previous surface pyramid, the per-level
/// solver flow and the last reported (smoothed) flow.
struct FlowState {
  SensorGeometry geometry{};
  std::vector<ScalarGrid> previous;  // per level, finest first
  std::vector<VectorGrid> flow;      // per level, finest first
  VectorGrid output;                 // empty until the first estimate

  bool fresh() const { return previous.empty(); }
  void reset() {
    previous.clear();
    flow.clear();
    output = {};
  }
};

namespace detail {

inline std::vector<ScalarGrid> build_pyramid(const ScalarGrid& base, int levels, float scale) {
  std::vector<ScalarGrid> pyr;
  pyr.reserve(levels);
  ScalarGrid l0 = base;
  for (auto& v : l0.data()) v *= scale;
  pyr.push_back(std::move(l0));
  for (int l = 1; l < levels; ++l) pyr.push_back(downsample(pyr.back()));
  return pyr;
}

/// Incremental Horn-Schunck refinement of `flow` (initialised to the
/// prediction) between the warped previous level image and the current one.
inline void refine_level(const ScalarGrid& previous, const ScalarGrid& current, VectorGrid& flow,
                         double lambda, int iterations, ThreadPool* pool) {
  const int w = current.width(), h = current.height();
  const VectorGrid prediction = flow;
  const ScalarGrid warped = warp_grid(previous, prediction, -1.0f, pool);

  // Linearised constraint: gx*du + gy*dv + gt = 0 around the prediction.
  ScalarGrid gx(w, h), gy(w, h), gt(w, h), denom(w, h);
  for_rows(pool, h, [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y)
      for (int x = 0; x < w; ++x) {
        float dx, dy;
        if (w == 1) dx = 0.0f;
        else if (x == 0) dx = warped(1, y) - warped(0, y);
        else if (x == w - 1) dx = warped(x, y) - warped(x - 1, y);
        else dx = 0.5f * (warped(x + 1, y) - warped(x - 1, y));
        if (h == 1) dy = 0.0f;
        else if (y == 0) dy = warped(x, 1) - warped(x, 0);
        else if (y == h - 1) dy = warped(x, y) - warped(x, y - 1);
        else dy = 0.5f * (warped(x, y + 1) - warped(x, y - 1));
        gx(x, y) = dx;
        gy(x, y) = dy;
        gt(x, y) = current(x, y) - warped(x, y);
        denom(x, y) = static_cast<float>(lambda) + dx * dx + dy * dy;
      }
  });

  VectorGrid next(w, h);
  for (int it = 0; it < iterations; ++it) {
    for_rows(pool, h, [&](int y0, int y1) {
      for (int y = y0; y < y1; ++y)
        for (int x = 0; x < w; ++x) {
          float su = 0.0f, sv = 0.0f;
          int n = 0;
          if (x > 0) { su += flow(x - 1, y).u; sv += flow(x - 1, y).v; ++n; }
          if (x + 1 < w) { su += flow(x + 1, y).u; sv += flow(x + 1, y).v; ++n; }
          if (y > 0) { su += flow(x, y - 1).u; sv += flow(x, y - 1).v; ++n; }
          if (y + 1 < h) { su += flow(x, y + 1).u; sv += flow(x, y + 1).v; ++n; }
          const float inv = n ? 1.0f / static_cast<float>(n) : 0.0f;
          const float ubar = n ? su * inv : flow(x, y).u;
          const float vbar = n ? sv * inv : flow(x, y).v;
          const auto& p = prediction(x, y);
          const float ix = gx(x, y), iy = gy(x, y);
          const float r = ix * (ubar - p.u) + iy * (vbar - p.v) + gt(x, y);
          const float k = denom(x, y) > 0.0f ? r / denom(x, y) : 0.0f;
          next(x, y) = {ubar - ix * k, vbar - iy * k};
        }
    });
    std::swap(flow, next);
  }
  // The linearisation only holds for about a pixel around the prediction.
  for (std::size_t i = 0; i < flow.size(); ++i) {
    const float du = flow[i].u - prediction[i].u, dv = flow[i].v - prediction[i].v;
    const float m = std::sqrt(du * du + dv * dv);
    if (m > 1.0f) flow[i] = {prediction[i].u + du / m, prediction[i].v + dv / m};
  }
}

}  // namespace detail

/// Estimates the flow from the state's previous surface to `surface`
/// (values in [0, 1] for the inverse exponential transfer) and updates the
/// state. The first call after a reset returns an all-invalid zero field.
///
/// Vectors live on the current grid: current(p) ~ previous(p - F(p)).
inline FlowField estimate_flow(FlowState& state, const ScalarGrid& surface, const FlowConfig& cfg,
                               ThreadPool* pool = nullptr) {
  cfg.validate();
  const auto g = surface.geometry();
  if (!state.fresh() && state.geometry != g)
    throw StateError("surface " + std::to_string(g.width) + "x" + std::to_string(g.height) +
                     " does not match flow state " + std::to_string(state.geometry.width) + "x" +
                     std::to_string(state.geometry.height));

  auto current = detail::build_pyramid(surface, cfg.levels, static_cast<float>(cfg.intensity_scale));
  FlowField out(g, false);

  if (state.fresh() || static_cast<int>(state.previous.size()) != cfg.levels) {
    state.geometry = g;
    state.output = {};
    state.flow.clear();
    for (const auto& level : current) state.flow.emplace_back(level.geometry());
    state.previous = std::move(current);
    return out;
  }

  const float gamma = static_cast<float>(cfg.temporal_decay);
  // Carry the previous estimate forward along itself.
  std::vector<VectorGrid> propagated;
  propagated.reserve(cfg.levels);
  for (const auto& f : state.flow) propagated.push_back(warp_grid(f, f, -1.0f, pool));

  std::vector<VectorGrid> result(cfg.levels);
  for (int l = cfg.levels - 1; l >= 0; --l) {
    const auto lg = current[l].geometry();
    VectorGrid init(lg);
    if (l == cfg.levels - 1) {
      for (std::size_t i = 0; i < init.size(); ++i)
        init[i] = {gamma * propagated[l][i].u, gamma * propagated[l][i].v};
    } else {
      // Coarser estimate plus the decayed detail the previous window had at this level.
      const auto up = upsample_flow(result[l + 1], lg);
      const auto up_prev = upsample_flow(propagated[l + 1], lg);
      for (std::size_t i = 0; i < init.size(); ++i)
        init[i] = {up[i].u + gamma * (propagated[l][i].u - up_prev[i].u),
                   up[i].v + gamma * (propagated[l][i].v - up_prev[i].v)};
    }
    detail::refine_level(state.previous[l], current[l], init, cfg.regularization[l],
                         cfg.smooth_iterations[l], pool);
    result[l] = std::move(init);
  }

  // The reported flow is an exponential average along the motion, so
  // gamma also damps window-to-window jitter of the estimate.
  out.vectors = result[0];
  if (state.output.geometry() == g) {
    const auto carried = warp_grid(state.output, state.output, -1.0f, pool);
    for (std::size_t i = 0; i < out.vectors.size(); ++i)
      out.vectors[i] = {(1.0f - gamma) * out.vectors[i].u + gamma * carried[i].u,
                        (1.0f - gamma) * out.vectors[i].v + gamma * carried[i].v};
  }
  state.output = out.vectors;
  std::fill(out.valid.data().begin(), out.valid.data().end(), std::uint8_t{1});
  state.flow = std::move(result);
  state.previous = std::move(current);
  return out;
}

/// Keeps flow only where the (denoised) edge image has an edge pixel.
inline FlowField mask_to_edges(const FlowField& flow, const EdgeImage& edges) {
  if (flow.geometry() != edges.geometry()) throw GeometryError("mask: geometry mismatch");
  FlowField out = flow;
  for (std::size_t i = 0; i < out.valid.size(); ++i) {
    out.valid[i] = (flow.valid[i] && edges.bits[i]) ? 1 : 0;
    if (!out.valid[i]) out.vectors[i] = {};
  }
  return out;
}

}  // namespace evflow
