#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "evflow/accumulator.hpp"
#include "evflow/bounded_queue.hpp"
#include "evflow/distance_surface.hpp"
#include "evflow/filtering.hpp"
#include "evflow/flow.hpp"
#include "evflow/parallel.hpp"

namespace evflow {

struct PipelineConfig {
  SensorGeometry geometry{346, 260};
  std::int64_t window_us = 15000;
  FilterParams filter{1, 4};
  TransferParams transfer{};
  /// Feed the flow stage the 8-bit surface instead of the real-valued one.
  bool quantize_surface = false;
  FlowConfig flow{};
  std::size_t queue_capacity = 2;
  int threads = 1;  // data-parallel workers per stage

  void validate() const {
    geometry.validate();
    if (window_us <= 0) throw ParameterError("dt_us must be > 0");
    filter.validate();
    transfer.validate();
    flow.validate();
    if (queue_capacity < 1) throw ParameterError("queue capacity must be >= 1");
    if (threads < 1) throw ParameterError("thread count must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Timing
// ---------------------------------------------------------------------------

enum Stage : int { kAccumulate = 0, kFilter = 1, kDistance = 2, kFlow = 3, kStageCount = 4 };

inline constexpr std::array<const char*, kStageCount> kStageNames = {
    "Edge image", "Denoising & filling", "Distance transform", "Optical flow"};

/// Per-window compute time of each stage, in milliseconds (queue waits excluded).
struct WindowTimes {
  std::array<double, kStageCount> stage_ms{};
  double total_ms() const {
    double t = 0;
    for (double s : stage_ms) t += s;
    return t;
  }
};

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;
};

struct StageTimings {
  std::vector<WindowTimes> per_window;

  MeanStd stage(int s) const { return summarise([s](const WindowTimes& w) { return w.stage_ms[s]; }); }
  MeanStd total() const { return summarise([](const WindowTimes& w) { return w.total_ms(); }); }

 private:
  template <typename F>
  MeanStd summarise(F&& get) const {
    MeanStd r;
    if (per_window.empty()) return r;
    for (const auto& w : per_window) r.mean += get(w);
    r.mean /= static_cast<double>(per_window.size());
    for (const auto& w : per_window) r.stddev += (get(w) - r.mean) * (get(w) - r.mean);
    r.stddev = std::sqrt(r.stddev / static_cast<double>(per_window.size()));
    return r;
  }
};

class StopWatch {
 public:
  StopWatch() : start_(std::chrono::steady_clock::now()) {}
  double elapsed_ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

// ---------------------------------------------------------------------------
// Stage functions (shared by the sequential and concurrent runners)
// ---------------------------------------------------------------------------

struct FilteredWindow {
  EdgeImage denoised;  // masks the flow
  EdgeImage filtered;  // denoised then filled; feeds the distance transform
};

inline FilteredWindow filter_stage(const EdgeImage& edges, const FilterParams& p,
                                   ThreadPool* pool = nullptr) {
  FilteredWindow out;
  out.denoised = denoise(edges, p.denoise_threshold, pool);
  out.filtered = fill(out.denoised, p.fill_threshold, pool);
  return out;
}

inline ScalarGrid surface_stage(const EdgeImage& filtered, const PipelineConfig& cfg,
                                ThreadPool* pool = nullptr) {
  auto surface = apply_transfer(euclidean_dt(filtered, pool), cfg.transfer, pool);
  return cfg.quantize_surface ? surface.dequantized() : std::move(surface.values);
}

/// Output of one window.
struct WindowResult {
  std::int64_t index = 0;
  std::int64_t window_start = 0;
  FlowField flow;  // masked to the denoised edge pixels
  WindowTimes times;
};

using EventSource = std::function<std::optional<Event>()>;
using FlowSink = std::function<void(const WindowResult&)>;

inline EventSource vector_source(std::span<const Event> events) {
  return [events, i = std::size_t{0}]() mutable -> std::optional<Event> {
    if (i >= events.size()) return std::nullopt;
    return events[i++];
  };
}

/// Wraps an error with the index of the window it happened in.
struct PipelineError : Error {
  PipelineError(std::int64_t window, const std::string& what)
      : Error("window " + std::to_string(window) + ": " + what), window(window) {}
  std::int64_t window;
};

struct RunSummary {
  std::size_t windows = 0;
  StageTimings timings;
  double wall_ms = 0.0;
  std::size_t queue_high_water = 0;  // max items seen in any hand-off queue

  double windows_per_second() const {
    return wall_ms > 0.0 ? 1000.0 * static_cast<double>(windows) / wall_ms : 0.0;
  }
};

enum class RunMode { sequential, concurrent };

namespace detail {

template <typename Fn>
auto rethrow_with_window(std::int64_t window, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError(window, e.what());
  }
}

/// Window indices are known only once the first event arrived.
inline std::int64_t current_window(const WindowSplitter& s) { return s.open_window().value_or(0); }

inline RunSummary run_sequential(const PipelineConfig& cfg, const EventSource& source,
                                 const std::vector<FlowSink>& sinks) {
  StopWatch wall;
  ThreadPool pool(cfg.threads);
  WindowSplitter splitter(cfg.geometry, cfg.window_us);
  FlowState state;
  RunSummary summary;
  std::vector<EventWindow> ready;

  auto process = [&](const EventWindow& w) {
    WindowResult r;
    r.index = w.index;
    r.window_start = w.start;
    rethrow_with_window(w.index, [&] {
      StopWatch t0;
      const auto edges = rasterize(w, cfg.geometry);
      r.times.stage_ms[kAccumulate] = t0.elapsed_ms();
      StopWatch t1;
      const auto filtered = filter_stage(edges, cfg.filter, &pool);
      r.times.stage_ms[kFilter] = t1.elapsed_ms();
      StopWatch t2;
      const auto surface = surface_stage(filtered.filtered, cfg, &pool);
      r.times.stage_ms[kDistance] = t2.elapsed_ms();
      StopWatch t3;
      r.flow = mask_to_edges(estimate_flow(state, surface, cfg.flow, &pool), filtered.denoised);
      r.flow.window_index = w.index;
      r.times.stage_ms[kFlow] = t3.elapsed_ms();
      for (const auto& sink : sinks) sink(r);
    });
    summary.timings.per_window.push_back(r.times);
    ++summary.windows;
  };

  for (;;) {
    auto e = rethrow_with_window(current_window(splitter), source);
    if (!e) break;
    rethrow_with_window(current_window(splitter), [&] { splitter.push(*e, ready); });
    for (const auto& w : ready) process(w);
    ready.clear();
  }
  splitter.finish(ready);
  for (const auto& w : ready) process(w);
  summary.wall_ms = wall.elapsed_ms();
  return summary;
}

struct EdgePacket {
  EdgeImage edges;
  WindowTimes times;
};
struct FilterPacket {
  FilteredWindow filtered;
  WindowTimes times;
};
struct SurfacePacket {
  EdgeImage denoised;
  ScalarGrid surface;
  WindowTimes times;
};

inline RunSummary run_concurrent(const PipelineConfig& cfg, const EventSource& source,
                                 const std::vector<FlowSink>& sinks) {
  StopWatch wall;
  BoundedQueue<EdgePacket> q_edges(cfg.queue_capacity);
  BoundedQueue<FilterPacket> q_filtered(cfg.queue_capacity);
  BoundedQueue<SurfacePacket> q_surface(cfg.queue_capacity);
  BoundedQueue<WindowResult> q_flow(cfg.queue_capacity);

  std::mutex err_mu;
  std::exception_ptr first_error;
  auto fail = [&](std::exception_ptr e) {
    {
      std::lock_guard lk(err_mu);
      if (!first_error) first_error = e;
    }
    q_edges.abort();
    q_filtered.abort();
    q_surface.abort();
    q_flow.abort();
  };

  std::thread accumulate_thread([&] {
    try {
      WindowSplitter splitter(cfg.geometry, cfg.window_us);
      std::vector<EventWindow> ready;
      auto emit = [&] {
        for (const auto& w : ready) {
          EdgePacket p;
          StopWatch t;
          p.edges = rasterize(w, cfg.geometry);
          p.times.stage_ms[kAccumulate] = t.elapsed_ms();
          if (!q_edges.push(std::move(p))) return false;
        }
        ready.clear();
        return true;
      };
      for (;;) {
        auto e = rethrow_with_window(current_window(splitter), source);
        if (!e) break;
        rethrow_with_window(current_window(splitter), [&] { splitter.push(*e, ready); });
        if (!ready.empty() && !emit()) return;
      }
      splitter.finish(ready);
      emit();
      q_edges.close();
    } catch (...) {
      fail(std::current_exception());
    }
  });

  std::thread filter_thread([&] {
    try {
      ThreadPool pool(cfg.threads);
      while (auto in = q_edges.pop()) {
        FilterPacket p;
        p.times = in->times;
        rethrow_with_window(in->edges.window_index, [&] {
          StopWatch t;
          p.filtered = filter_stage(in->edges, cfg.filter, &pool);
          p.times.stage_ms[kFilter] = t.elapsed_ms();
        });
        if (!q_filtered.push(std::move(p))) return;
      }
      q_filtered.close();
    } catch (...) {
      fail(std::current_exception());
    }
  });

  std::thread distance_thread([&] {
    try {
      ThreadPool pool(cfg.threads);
      while (auto in = q_filtered.pop()) {
        SurfacePacket p;
        p.times = in->times;
        rethrow_with_window(in->filtered.filtered.window_index, [&] {
          StopWatch t;
          p.surface = surface_stage(in->filtered.filtered, cfg, &pool);
          p.times.stage_ms[kDistance] = t.elapsed_ms();
        });
        p.denoised = std::move(in->filtered.denoised);
        if (!q_surface.push(std::move(p))) return;
      }
      q_surface.close();
    } catch (...) {
      fail(std::current_exception());
    }
  });

  std::thread flow_thread([&] {
    try {
      ThreadPool pool(cfg.threads);
      FlowState state;
      while (auto in = q_surface.pop()) {
        WindowResult r;
        r.index = in->denoised.window_index;
        r.window_start = in->denoised.window_start;
        r.times = in->times;
        rethrow_with_window(r.index, [&] {
          StopWatch t;
          r.flow = mask_to_edges(estimate_flow(state, in->surface, cfg.flow, &pool), in->denoised);
          r.flow.window_index = r.index;
          r.times.stage_ms[kFlow] = t.elapsed_ms();
        });
        if (!q_flow.push(std::move(r))) return;
      }
      q_flow.close();
    } catch (...) {
      fail(std::current_exception());
    }
  });

  RunSummary summary;
  try {
    while (auto r = q_flow.pop()) {
      rethrow_with_window(r->index, [&] {
        for (const auto& sink : sinks) sink(*r);
      });
      summary.timings.per_window.push_back(r->times);
      ++summary.windows;
    }
  } catch (...) {
    fail(std::current_exception());
  }

  accumulate_thread.join();
  filter_thread.join();
  distance_thread.join();
  flow_thread.join();
  if (first_error) std::rethrow_exception(first_error);

  summary.wall_ms = wall.elapsed_ms();
  summary.queue_high_water = std::max({q_edges.high_water_mark(), q_filtered.high_water_mark(),
                                       q_surface.high_water_mark(), q_flow.high_water_mark()});
  return summary;
}

}  // namespace detail

/// Runs accumulate -> denoise/fill -> distance surface -> flow -> mask over
/// the source and hands every window's masked flow to the sinks, in window
/// order. Both modes produce bit-identical flow.
inline RunSummary run_pipeline(const PipelineConfig& cfg, const EventSource& source,
                               const std::vector<FlowSink>& sinks,
                               RunMode mode = RunMode::concurrent) {
  cfg.validate();
  return mode == RunMode::sequential ? detail::run_sequential(cfg, source, sinks)
                                     : detail::run_concurrent(cfg, source, sinks);
}

/// Table layout of per-stage mean +- standard deviation, in milliseconds.
inline void write_timing_table(std::ostream& out, const std::string& label,
                               const RunSummary& summary) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-14s | %-22s | %-22s | %-22s | %-22s | %-22s\n", "Version",
                kStageNames[0], kStageNames[1], kStageNames[2], kStageNames[3], "Total");
  out << buf;
  auto cell = [](MeanStd m) {
    char c[64];
    std::snprintf(c, sizeof c, "%.2f +- %.2f", m.mean, m.stddev);
    return std::string(c);
  };
  const auto& t = summary.timings;
  std::snprintf(buf, sizeof buf, "%-14s | %-22s | %-22s | %-22s | %-22s | %-22s\n", label.c_str(),
                cell(t.stage(0)).c_str(), cell(t.stage(1)).c_str(), cell(t.stage(2)).c_str(),
                cell(t.stage(3)).c_str(), cell(t.total()).c_str());
  out << buf;
}

}  // namespace evflow
