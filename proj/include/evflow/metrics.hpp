#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "evflow/core.hpp"
#include "evflow/flow_field.hpp"

namespace evflow {

/// Optional static exclusion mask: non-zero pixels are left out of AEE and
/// outlier statistics.
using ExclusionMask = Grid<std::uint8_t>;

struct MetricReport {
  double aee = 0.0;          // pixels
  double outlier_pct = 0.0;  // percent
  double fwl = 1.0;          // ratio
  std::size_t valid_pixel_count = 0;
};

namespace detail {

template <typename Visit>
std::size_t for_each_evaluated(const FlowField& est, const FlowField& gt,
                               const ExclusionMask* exclude, Visit&& visit) {
  if (est.geometry() != gt.geometry()) throw GeometryError("metric: geometry mismatch");
  if (exclude && exclude->geometry() != gt.geometry())
    throw GeometryError("metric: exclusion mask geometry mismatch");
  std::size_t n = 0;
  for (std::size_t i = 0; i < est.valid.size(); ++i) {
    if (!est.valid[i] || !gt.valid[i]) continue;
    if (exclude && (*exclude)[i]) continue;
    const double du = static_cast<double>(est.vectors[i].u) - gt.vectors[i].u;
    const double dv = static_cast<double>(est.vectors[i].v) - gt.vectors[i].v;
    const double gu = gt.vectors[i].u, gv = gt.vectors[i].v;
    visit(std::hypot(du, dv), std::hypot(gu, gv));
    ++n;
  }
  return n;
}

}  // namespace detail

/// Sum of endpoint errors and outlier count over the evaluation set; the
/// building block for both per-window and pooled statistics.
struct ErrorTally {
  double error_sum = 0.0;
  std::size_t outliers = 0;
  std::size_t count = 0;

  ErrorTally& operator+=(const ErrorTally& o) {
    error_sum += o.error_sum;
    outliers += o.outliers;
    count += o.count;
    return *this;
  }
  double aee() const {
    if (count == 0) throw UndefinedMetricError("no pixel is valid in both flow fields");
    return error_sum / static_cast<double>(count);
  }
  double outlier_pct() const {
    if (count == 0) throw UndefinedMetricError("no pixel is valid in both flow fields");
    return 100.0 * static_cast<double>(outliers) / static_cast<double>(count);
  }
};

/// Endpoint error > 3 px and > 5% of the ground-truth magnitude.
inline bool is_outlier(double endpoint_error, double gt_magnitude) {
  return endpoint_error > 3.0 && endpoint_error > 0.05 * gt_magnitude;
}

inline ErrorTally tally_errors(const FlowField& est, const FlowField& gt,
                               const ExclusionMask* exclude = nullptr) {
  ErrorTally t;
  t.count = detail::for_each_evaluated(est, gt, exclude, [&](double err, double mag) {
    t.error_sum += err;
    t.outliers += is_outlier(err, mag);
  });
  return t;
}

inline double aee(const FlowField& est, const FlowField& gt, const ExclusionMask* exclude = nullptr) {
  return tally_errors(est, gt, exclude).aee();
}

inline double outlier_pct(const FlowField& est, const FlowField& gt,
                          const ExclusionMask* exclude = nullptr) {
  return tally_errors(est, gt, exclude).outlier_pct();
}

// ---------------------------------------------------------------------------
// Flow-compensated event images and FWL
// ---------------------------------------------------------------------------

/// Polarity-signed, bilinearly splatted event mass.
using EventImage = Grid<double>;

struct CompensationParams {
  std::int64_t t_ref = 0;      // microseconds, normally the window end
  std::int64_t window_us = 1;  // flow vectors are pixels per window
  /// Events on pixels without valid flow borrow the nearest valid vector
  /// within this radius (pixels); otherwise they are not displaced.
  double lookup_radius = 6.0;
};

namespace detail {

/// Nearest valid flow vector within `radius`, scanning rings in row-major
/// order so ties resolve to the smallest (dy, dx).
inline std::optional<FlowVector> lookup_flow(const FlowField& f, int x, int y, double radius) {
  const auto g = f.geometry();
  if (f.valid(x, y)) return f.vectors(x, y);
  const int r = static_cast<int>(std::floor(radius));
  const long r2 = static_cast<long>(std::floor(radius * radius));
  long best = -1;
  FlowVector out{};
  for (int dy = -r; dy <= r; ++dy) {
    const int yy = y + dy;
    if (yy < 0 || yy >= g.height) continue;
    for (int dx = -r; dx <= r; ++dx) {
      const int xx = x + dx;
      if (xx < 0 || xx >= g.width || !f.valid(xx, yy)) continue;
      const long d2 = static_cast<long>(dx) * dx + static_cast<long>(dy) * dy;
      if (d2 > r2) continue;
      if (best < 0 || d2 < best) {
        best = d2;
        out = f.vectors(xx, yy);
      }
    }
  }
  if (best < 0) return std::nullopt;
  return out;
}

inline void splat(EventImage& img, double px, double py, double mass) {
  const int w = img.width(), h = img.height();
  if (!(px >= 0.0 && py >= 0.0 && px <= w - 1 && py <= h - 1)) return;
  const int x0 = static_cast<int>(std::floor(px)), y0 = static_cast<int>(std::floor(py));
  const double fx = px - x0, fy = py - y0;
  img(x0, y0) += (1.0 - fx) * (1.0 - fy) * mass;
  if (fx > 0.0) img(x0 + 1, y0) += fx * (1.0 - fy) * mass;
  if (fy > 0.0) img(x0, y0 + 1) += (1.0 - fx) * fy * mass;
  if (fx > 0.0 && fy > 0.0) img(x0 + 1, y0 + 1) += fx * fy * mass;
}

}  // namespace detail

/// Moves each event along its pixel's flow to `t_ref` and splats +-1 mass.
/// Events whose displaced position leaves the frame are dropped.
inline EventImage compensate_events(std::span<const Event> events, const FlowField& flow,
                                    const CompensationParams& p) {
  const auto g = flow.geometry();
  EventImage img(g, 0.0);
  if (p.window_us <= 0) throw ParameterError("window length must be > 0");
  std::vector<std::optional<FlowVector>> cache(g.area());
  std::vector<std::uint8_t> cached(g.area(), 0);
  for (const auto& e : events) {
    if (!g.contains(e.x, e.y)) throw GeometryError("event outside flow field");
    const auto i = flow.valid.index(e.x, e.y);
    if (!cached[i]) {
      cache[i] = detail::lookup_flow(flow, e.x, e.y, p.lookup_radius);
      cached[i] = 1;
    }
    double px = e.x, py = e.y;
    if (cache[i]) {
      const double s = static_cast<double>(p.t_ref - e.t) / static_cast<double>(p.window_us);
      px += cache[i]->u * s;
      py += cache[i]->v * s;
    }
    detail::splat(img, px, py, sign(e.polarity));
  }
  return img;
}

/// Population variance over all pixels.
inline double image_variance(const EventImage& img) {
  if (img.size() == 0) return 0.0;
  double mean = 0.0;
  for (double v : img.data()) mean += v;
  mean /= static_cast<double>(img.size());
  double acc = 0.0;
  for (double v : img.data()) acc += (v - mean) * (v - mean);
  return acc / static_cast<double>(img.size());
}

/// Variance of the compensated image over that of the uncompensated one.
inline double fwl(std::span<const Event> events, const FlowField& flow,
                  const CompensationParams& p) {
  if (events.empty()) throw UndefinedMetricError("FWL of an empty event window");
  const FlowField zero(flow.geometry(), true);
  const double base = image_variance(compensate_events(events, zero, p));
  if (!(base > 0.0)) throw UndefinedMetricError("uncompensated event image has zero variance");
  return image_variance(compensate_events(events, flow, p)) / base;
}

// ---------------------------------------------------------------------------
// Report serialisation
// ---------------------------------------------------------------------------

inline void write_report_text(std::ostream& out, const MetricReport& r) {
  out.precision(17);
  out << "aee=" << r.aee << '\n'
      << "outlier_pct=" << r.outlier_pct << '\n'
      << "fwl=" << r.fwl << '\n'
      << "valid_pixel_count=" << r.valid_pixel_count << '\n';
}

}  // namespace evflow
