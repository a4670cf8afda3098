#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "evflow/core.hpp"
#include "evflow/parallel.hpp"

namespace evflow {

// ---------------------------------------------------------------------------
// Exact Euclidean distance transform
// ---------------------------------------------------------------------------

/// Squared Euclidean distance (in pixels^2) from every pixel to the nearest
/// edge pixel. When the edge image is empty, `has_edges` is false and the
/// squared values are meaningless.
struct DistanceField {
  Grid<std::int32_t> squared;
  bool has_edges = false;

  SensorGeometry geometry() const { return squared.geometry(); }
  double distance(std::size_t i) const { return std::sqrt(static_cast<double>(squared[i])); }
  double distance(int x, int y) const { return distance(squared.index(x, y)); }
};

namespace detail {

inline constexpr std::int32_t kNoEdge = std::numeric_limits<std::int32_t>::max();

/// Lower envelope of parabolas f[q] + (p - q)^2 over one line. Entries equal
/// to kNoEdge are skipped. Breakpoints are kept as exact rationals.
class EnvelopeScratch {
 public:
  void resize(int n) {
    sites_.resize(n);
    num_.resize(n + 1);
    den_.resize(n + 1);
  }

  // f and out are strided views into a grid column or row.
  void run(const std::int32_t* f, std::int32_t* out, int n, std::ptrdiff_t stride) {
    int k = -1;
    for (int q = 0; q < n; ++q) {
      const std::int64_t fq = f[q * stride];
      if (fq == kNoEdge) continue;
      const std::int64_t hq = fq + static_cast<std::int64_t>(q) * q;
      while (k >= 0) {
        const int v = sites_[k];
        const std::int64_t hv = f[v * stride] + static_cast<std::int64_t>(v) * v;
        // Intersection of parabolas v and q at s = (hq - hv) / (2(q - v)).
        const std::int64_t num = hq - hv;
        const std::int64_t den = 2 * static_cast<std::int64_t>(q - v);
        // Pop v while s <= z[k] (z[0] = -inf).
        if (k > 0 && num * den_[k] <= num_[k] * den) {
          --k;
          continue;
        }
        sites_[++k] = q;
        num_[k] = num;
        den_[k] = den;
        break;
      }
      if (k < 0) sites_[k = 0] = q;
    }
    if (k < 0) {
      for (int p = 0; p < n; ++p) out[p * stride] = kNoEdge;
      return;
    }
    int j = 0;
    for (int p = 0; p < n; ++p) {
      // Advance while z[j+1] < p.
      while (j < k && num_[j + 1] < static_cast<std::int64_t>(p) * den_[j + 1]) ++j;
      const std::int64_t d = p - sites_[j];
      out[p * stride] = static_cast<std::int32_t>(d * d + f[sites_[j] * stride]);
    }
  }

 private:
  std::vector<int> sites_;
  std::vector<std::int64_t> num_, den_;
};

}  // namespace detail

/// Two-pass separable exact EDT: per-row 1-D distances, then a per-column
/// lower-envelope pass over the squared row distances.
inline DistanceField euclidean_dt(const EdgeImage& edges, ThreadPool* pool = nullptr) {
  const int w = edges.bits.width(), h = edges.bits.height();
  DistanceField df;
  df.squared = Grid<std::int32_t>(w, h, detail::kNoEdge);
  df.has_edges = edges.count() > 0;
  if (!df.has_edges) return df;

  Grid<std::int32_t> rows(w, h, detail::kNoEdge);
  for_rows(pool, h, [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y) {
      const auto* b = edges.bits.row(y);
      auto* r = rows.row(y);
      int last = -1;
      for (int x = 0; x < w; ++x) {
        if (b[x]) last = x;
        r[x] = last < 0 ? detail::kNoEdge : x - last;
      }
      last = -1;
      for (int x = w - 1; x >= 0; --x) {
        if (b[x]) last = x;
        if (last >= 0 && (r[x] == detail::kNoEdge || last - x < r[x])) r[x] = last - x;
      }
      for (int x = 0; x < w; ++x)
        if (r[x] != detail::kNoEdge) r[x] *= r[x];
    }
  });

  for_rows(pool, w, [&](int x0, int x1) {
    detail::EnvelopeScratch scratch;
    scratch.resize(h);
    for (int x = x0; x < x1; ++x)
      scratch.run(rows.row(0) + x, df.squared.row(0) + x, h, w);
  });
  return df;
}

// ---------------------------------------------------------------------------
// Transfer functions
// ---------------------------------------------------------------------------

enum class TransferKind { inverse_exp, linear, linear_bounded, log };

inline std::optional<TransferKind> parse_transfer(std::string_view s) {
  if (s == "invexp" || s == "inverse_exp") return TransferKind::inverse_exp;
  if (s == "linear") return TransferKind::linear;
  if (s == "bounded" || s == "linear_bounded") return TransferKind::linear_bounded;
  if (s == "log") return TransferKind::log;
  return std::nullopt;
}

inline std::string_view transfer_name(TransferKind k) {
  switch (k) {
    case TransferKind::inverse_exp: return "invexp";
    case TransferKind::linear: return "linear";
    case TransferKind::linear_bounded: return "bounded";
    case TransferKind::log: return "log";
  }
  return "?";
}

/// Gap to saturation at which an 8-bit surface reads 255.
inline constexpr double kQuantizationGap = 1.0 / 255.0;

/// Spreading parameter that saturates the 8-bit surface at `d_sat` pixels.
inline double alpha_from_dsat(double d_sat) {
  if (!(d_sat > 0.0) || !std::isfinite(d_sat))
    throw ParameterError("saturation distance must be > 0");
  return -d_sat / std::log(kQuantizationGap);
}

struct TransferParams {
  TransferKind kind = TransferKind::inverse_exp;
  double d_sat = 6.0;  // pixels, inverse_exp only
  double bound = 6.0;  // pixels, linear_bounded only

  double alpha() const { return alpha_from_dsat(d_sat); }

  void validate() const {
    if (kind == TransferKind::inverse_exp) (void)alpha();
    if (kind == TransferKind::linear_bounded && !(bound > 0.0))
      throw ParameterError("distance bound must be > 0");
  }
};

/// The transfer function evaluated in double precision.
inline double transfer_value(const TransferParams& p, double d) {
  switch (p.kind) {
    case TransferKind::inverse_exp: return 1.0 - std::exp(-d / p.alpha());
    case TransferKind::linear: return d;
    case TransferKind::linear_bounded: return std::min(d, p.bound);
    case TransferKind::log: return std::log(d + 1.0);
  }
  return d;
}

/// Round-half-away-from-zero of 255*v, clamped to [0, 255].
inline std::uint8_t quantize_unit(double v) {
  const double q = std::round(255.0 * v);
  return static_cast<std::uint8_t>(std::clamp(q, 0.0, 255.0));
}

struct DistanceSurface {
  ScalarGrid values;               // fed to the flow stage
  Grid<std::uint8_t> quantized;    // 8-bit view
  TransferParams params;
  bool has_edges = false;

  SensorGeometry geometry() const { return values.geometry(); }

  /// quantized / 255 as a real grid.
  ScalarGrid dequantized() const {
    ScalarGrid out(geometry());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = quantized[i] / 255.0f;
    return out;
  }
};

/// Maps a distance field through the selected transfer function. An empty
/// field yields the saturated surface (all 1.0, all 255).
inline DistanceSurface apply_transfer(const DistanceField& field, const TransferParams& params,
                                      ThreadPool* pool = nullptr) {
  params.validate();
  const auto g = field.geometry();
  DistanceSurface s;
  s.params = params;
  s.has_edges = field.has_edges;
  s.values = ScalarGrid(g, 1.0f);
  s.quantized = Grid<std::uint8_t>(g, 255);
  if (!field.has_edges) return s;

  if (params.kind == TransferKind::inverse_exp) {
    // Past 40 alpha the float value is exactly 1 and the 8-bit value 255.
    const double alpha = params.alpha();
    const double cutoff_d = 40.0 * alpha;
    const auto lut_size = static_cast<std::size_t>(std::ceil(cutoff_d * cutoff_d)) + 1;
    std::vector<float> value_lut(lut_size);
    std::vector<std::uint8_t> q_lut(lut_size);
    for (std::size_t sq = 0; sq < lut_size; ++sq) {
      const double v = 1.0 - std::exp(-std::sqrt(static_cast<double>(sq)) / alpha);
      value_lut[sq] = static_cast<float>(v);
      q_lut[sq] = quantize_unit(v);
    }
    for_rows(pool, g.height, [&](int y0, int y1) {
      for (int y = y0; y < y1; ++y) {
        const auto* sq = field.squared.row(y);
        auto* v = s.values.row(y);
        auto* q = s.quantized.row(y);
        for (int x = 0; x < g.width; ++x) {
          const auto d2 = static_cast<std::size_t>(sq[x]);
          if (d2 < lut_size) {
            v[x] = value_lut[d2];
            q[x] = q_lut[d2];
          } else {
            v[x] = 1.0f;
            q[x] = 255;
          }
        }
      }
    });
    return s;
  }

  for_rows(pool, g.height, [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y) {
      auto* v = s.values.row(y);
      for (int x = 0; x < g.width; ++x)
        v[x] = static_cast<float>(transfer_value(params, field.distance(x, y)));
    }
  });
  // Unbounded variants are normalised by the frame maximum for the 8-bit view.
  float vmax = 0.0f;
  for (float v : s.values.data()) vmax = std::max(vmax, v);
  for (std::size_t i = 0; i < s.values.size(); ++i)
    s.quantized[i] = vmax > 0.0f ? quantize_unit(s.values[i] / static_cast<double>(vmax)) : 0;
  return s;
}

}  // namespace evflow
