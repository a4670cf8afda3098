#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <iterator>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "evflow/core.hpp"
#include "evflow/flow_field.hpp"

namespace evflow {

static_assert(std::endian::native == std::endian::little,
              "flow files are written by memcpy of little-endian words");

// ---------------------------------------------------------------------------
// Event CSV: one `t,x,y,p` per line, `#` comments, p in {0,1}
// ---------------------------------------------------------------------------

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename Int>
bool parse_int(std::string_view s, Int& out) {
  s = trim(s);
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

}  // namespace detail

/// Incremental reader over an event CSV stream. Validates bounds and
/// timestamp order as it goes; errors carry the 1-based line number.
class EventCsvReader {
 public:
  EventCsvReader(std::istream& in, SensorGeometry geometry) : in_(in), geometry_(geometry) {
    geometry_.validate();
  }

  std::optional<Event> next() {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      auto body = detail::trim(line);
      if (body.empty() || body.front() == '#') continue;
      return parse_line(body);
    }
    if (in_.bad()) throw Error("read failure after line " + std::to_string(line_no_));
    return std::nullopt;
  }

  std::size_t line() const { return line_no_; }

 private:
  Event parse_line(std::string_view body) {
    std::string_view fields[4];
    std::size_t n = 0;
    while (true) {
      auto comma = body.find(',');
      if (n == 4) throw ParseError(line_no_, "expected 4 fields `t,x,y,p`");
      fields[n++] = body.substr(0, comma);
      if (comma == std::string_view::npos) break;
      body.remove_prefix(comma + 1);
    }
    if (n != 4) throw ParseError(line_no_, "expected 4 fields `t,x,y,p`");

    Event e;
    int p = 0;
    if (!detail::parse_int(fields[0], e.t) || e.t < 0)
      throw ParseError(line_no_, "bad timestamp `" + std::string(fields[0]) + "`");
    if (!detail::parse_int(fields[1], e.x))
      throw ParseError(line_no_, "bad x `" + std::string(fields[1]) + "`");
    if (!detail::parse_int(fields[2], e.y))
      throw ParseError(line_no_, "bad y `" + std::string(fields[2]) + "`");
    if (!detail::parse_int(fields[3], p) || (p != 0 && p != 1))
      throw ParseError(line_no_, "polarity must be 0 or 1, got `" + std::string(fields[3]) + "`");
    e.polarity = p ? Polarity::positive : Polarity::negative;

    if (!geometry_.contains(e.x, e.y))
      throw GeometryError("line " + std::to_string(line_no_) + ": pixel (" + std::to_string(e.x) +
                          "," + std::to_string(e.y) + ") outside " +
                          std::to_string(geometry_.width) + "x" +
                          std::to_string(geometry_.height));
    if (last_t_ && e.t < *last_t_)
      throw OrderingError("line " + std::to_string(line_no_) + ": timestamp " +
                          std::to_string(e.t) + " precedes " + std::to_string(*last_t_));
    last_t_ = e.t;
    return e;
  }

  std::istream& in_;
  SensorGeometry geometry_;
  std::size_t line_no_ = 0;
  std::optional<std::int64_t> last_t_;
};

inline std::vector<Event> parse_event_stream(std::istream& in, SensorGeometry geometry) {
  EventCsvReader reader(in, geometry);
  std::vector<Event> events;
  while (auto e = reader.next()) events.push_back(*e);
  return events;
}

inline std::vector<Event> parse_event_stream(std::string_view text, SensorGeometry geometry) {
  std::istringstream in{std::string(text)};
  return parse_event_stream(in, geometry);
}

inline void write_events(std::ostream& out, const std::vector<Event>& events) {
  char buf[96];
  for (const auto& e : events) {
    int n = std::snprintf(buf, sizeof buf, "%lld,%d,%d,%d\n", static_cast<long long>(e.t), e.x,
                          e.y, e.polarity == Polarity::positive ? 1 : 0);
    out.write(buf, n);
  }
}

// ---------------------------------------------------------------------------
// Flow files: "PIEH" float tag, int32 width/height, row-major (u,v) float32
// ---------------------------------------------------------------------------

inline constexpr float kFlowTag = 202021.25f;

/// Invalid pixels are written as this value in both components.
inline constexpr float kInvalidFlow = 1e10f;

inline bool is_invalid_flow_value(float c) { return !(std::fabs(c) <= 1e9f); }

inline void write_flow(const FlowField& field, std::ostream& out) {
  const auto g = field.geometry();
  g.validate();
  const std::int32_t dims[2] = {g.width, g.height};
  out.write(reinterpret_cast<const char*>(&kFlowTag), 4);
  out.write(reinterpret_cast<const char*>(dims), 8);
  std::vector<float> payload(g.area() * 2);
  for (std::size_t i = 0; i < g.area(); ++i) {
    if (field.is_valid(i)) {
      payload[2 * i] = field.vectors[i].u;
      payload[2 * i + 1] = field.vectors[i].v;
    } else {
      payload[2 * i] = payload[2 * i + 1] = kInvalidFlow;
    }
  }
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!out) throw Error("failed to write flow payload");
}

inline FlowField read_flow(std::istream& in) {
  float tag = 0;
  std::int32_t dims[2] = {0, 0};
  if (!in.read(reinterpret_cast<char*>(&tag), 4)) throw FormatError("flow file truncated: no tag");
  if (std::memcmp(&tag, &kFlowTag, 4) != 0) throw FormatError("bad flow file magic tag");
  if (!in.read(reinterpret_cast<char*>(dims), 8)) throw FormatError("flow file truncated: no size");
  if (dims[0] < 1 || dims[1] < 1 || dims[0] > (1 << 16) || dims[1] > (1 << 16))
    throw FormatError("flow file has invalid size " + std::to_string(dims[0]) + "x" +
                      std::to_string(dims[1]));
  FlowField f(SensorGeometry{dims[0], dims[1]});
  std::vector<float> payload(f.geometry().area() * 2);
  if (!in.read(reinterpret_cast<char*>(payload.data()),
               static_cast<std::streamsize>(payload.size() * sizeof(float))))
    throw FormatError("flow file truncated: payload shorter than " +
                      std::to_string(payload.size() * sizeof(float)) + " bytes");
  for (std::size_t i = 0; i < f.geometry().area(); ++i) {
    float u = payload[2 * i], v = payload[2 * i + 1];
    if (is_invalid_flow_value(u) || is_invalid_flow_value(v)) continue;
    f.valid[i] = 1;
    f.vectors[i] = {u, v};
  }
  return f;
}

inline void write_flow_file(const FlowField& field, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_flow(field, out);
}

inline FlowField read_flow_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return read_flow(in);
}

/// `flow_000042.flo` style name for window `index`.
inline std::string flow_file_name(std::int64_t index, std::string_view prefix = "flow") {
  char buf[64];
  std::snprintf(buf, sizeof buf, "_%06lld.flo", static_cast<long long>(index));
  return std::string(prefix) + buf;
}

/// Sorted list of *.flo files in `dir`.
inline std::vector<std::filesystem::path> list_flow_files(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".flo") out.push_back(entry.path());
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic scenes with analytic ground truth
// ---------------------------------------------------------------------------

enum class ShapeKind { square, checkerboard, bar };

inline std::optional<ShapeKind> parse_shape(std::string_view s) {
  if (s == "square") return ShapeKind::square;
  if (s == "checkerboard") return ShapeKind::checkerboard;
  if (s == "bar") return ShapeKind::bar;
  return std::nullopt;
}

struct SyntheticSceneSpec {
  SensorGeometry geometry{64, 64};
  ShapeKind shape = ShapeKind::square;
  int shape_size = 16;
  int origin_x = 8;  // top-left corner at t = 0
  int origin_y = 8;
  double velocity_x = 1.0;  // pixels per window
  double velocity_y = 0.0;
  int windows = 10;
  int events_per_pixel = 2;  // per boundary pixel per window
  int noise_events = 0;      // spurious events per window
  std::uint64_t seed = 1;
  std::int64_t window_us = 10000;
};

struct SyntheticScene {
  std::vector<Event> events;
  std::vector<FlowField> ground_truth;  // one per window
};

namespace detail {

/// Region labels of a shape at the origin: 0 outside, otherwise a region id.
inline int shape_label(ShapeKind kind, int size, int x, int y) {
  switch (kind) {
    case ShapeKind::square:
      return (x >= 0 && y >= 0 && x < size && y < size) ? 1 : 0;
    case ShapeKind::bar: {
      const int w = std::max(1, size / 4);
      return (x >= 0 && y >= 0 && x < w && y < size) ? 1 : 0;
    }
    case ShapeKind::checkerboard: {
      if (x < 0 || y < 0 || x >= size || y >= size) return 0;
      const int cell = std::max(1, size / 4);
      return 1 + ((x / cell + y / cell) & 1);
    }
  }
  return 0;
}

inline int shape_width(ShapeKind kind, int size) {
  return kind == ShapeKind::bar ? std::max(1, size / 4) : size;
}

/// Pixels of the shape whose label differs from a 4-neighbour's.
inline std::vector<std::pair<int, int>> shape_boundary(ShapeKind kind, int size) {
  std::vector<std::pair<int, int>> out;
  const int w = shape_width(kind, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < w; ++x) {
      const int l = shape_label(kind, size, x, y);
      if (l == 0) continue;
      if (shape_label(kind, size, x - 1, y) != l || shape_label(kind, size, x + 1, y) != l ||
          shape_label(kind, size, x, y - 1) != l || shape_label(kind, size, x, y + 1) != l)
        out.emplace_back(x, y);
    }
  return out;
}

inline long round_half_away(double v) { return std::lround(v); }

}  // namespace detail

inline SyntheticScene generate_synthetic_scene(const SyntheticSceneSpec& spec) {
  spec.geometry.validate();
  if (spec.shape_size < 1) throw ParameterError("shape size must be >= 1");
  if (spec.windows < 1) throw ParameterError("window count must be >= 1");
  if (spec.events_per_pixel < 1) throw ParameterError("events per pixel must be >= 1");
  if (spec.noise_events < 0) throw ParameterError("noise rate must be >= 0");
  if (spec.window_us < 1) throw ParameterError("window length must be >= 1 us");
  const double speed = std::hypot(spec.velocity_x, spec.velocity_y);
  if (speed > std::min(spec.geometry.width, spec.geometry.height) / 4.0)
    throw ParameterError("velocity magnitude exceeds min(width, height)/4");

  const int n = spec.events_per_pixel;
  const int sw = detail::shape_width(spec.shape, spec.shape_size);
  const int sh = spec.shape_size;
  auto shift_at = [&](long step) {  // step counts sub-window intervals
    const double s = static_cast<double>(step) / n;
    return std::pair<long, long>{detail::round_half_away(spec.velocity_x * s),
                                 detail::round_half_away(spec.velocity_y * s)};
  };
  for (long step : {0L, static_cast<long>(spec.windows) * n - 1}) {
    auto [dx, dy] = shift_at(step);
    const long x0 = spec.origin_x + dx, y0 = spec.origin_y + dy;
    if (x0 < 0 || y0 < 0 || x0 + sw > spec.geometry.width || y0 + sh > spec.geometry.height)
      throw GenerationError("shape leaves the frame during the scene");
  }

  const auto boundary = detail::shape_boundary(spec.shape, spec.shape_size);
  const double cx = (sw - 1) / 2.0, cy = (sh - 1) / 2.0;
  std::vector<Polarity> polarity;
  polarity.reserve(boundary.size());
  for (auto [x, y] : boundary) {
    const double along = (x - cx) * spec.velocity_x + (y - cy) * spec.velocity_y;
    polarity.push_back(along >= 0 ? Polarity::positive : Polarity::negative);
  }

  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<int> noise_x(0, spec.geometry.width - 1);
  std::uniform_int_distribution<int> noise_y(0, spec.geometry.height - 1);
  std::uniform_int_distribution<std::int64_t> noise_t(0, spec.window_us - 1);
  std::bernoulli_distribution noise_p(0.5);

  SyntheticScene scene;
  scene.ground_truth.reserve(spec.windows);
  for (int k = 0; k < spec.windows; ++k) {
    const std::int64_t t_start = static_cast<std::int64_t>(k) * spec.window_us;
    FlowField gt(spec.geometry);
    gt.window_index = k;
    std::vector<Event> window;
    window.reserve(boundary.size() * n + spec.noise_events);
    for (int j = 0; j < n; ++j) {
      const std::int64_t t = t_start + spec.window_us * j / n;
      auto [dx, dy] = shift_at(static_cast<long>(k) * n + j);
      for (std::size_t b = 0; b < boundary.size(); ++b) {
        const int x = static_cast<int>(spec.origin_x + dx + boundary[b].first);
        const int y = static_cast<int>(spec.origin_y + dy + boundary[b].second);
        window.push_back({t, x, y, polarity[b]});
        const auto i = gt.valid.index(x, y);
        gt.valid[i] = 1;
        gt.vectors[i] = {static_cast<float>(spec.velocity_x), static_cast<float>(spec.velocity_y)};
      }
    }
    std::vector<Event> noise;
    noise.reserve(spec.noise_events);
    for (int m = 0; m < spec.noise_events; ++m) {
      Event e;
      e.x = noise_x(rng);
      e.y = noise_y(rng);
      e.t = t_start + noise_t(rng);
      e.polarity = noise_p(rng) ? Polarity::positive : Polarity::negative;
      noise.push_back(e);
    }
    std::stable_sort(noise.begin(), noise.end(),
                     [](const Event& a, const Event& b) { return a.t < b.t; });
    std::vector<Event> merged;
    merged.reserve(window.size() + noise.size());
    std::merge(window.begin(), window.end(), noise.begin(), noise.end(),
               std::back_inserter(merged),
               [](const Event& a, const Event& b) { return a.t < b.t; });
    scene.events.insert(scene.events.end(), merged.begin(), merged.end());
    scene.ground_truth.push_back(std::move(gt));
  }
  return scene;
}

}  // namespace evflow
