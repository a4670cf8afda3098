#pragma once

// Subcommand implementations for the evflow command-line tool. Kept in a
// header so tests can drive them in-process.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "evflow/evflow.hpp"

namespace evflow::cli {

namespace fs = std::filesystem;
using nlohmann::json;

/// Flag values that mirror config keys; set ones win over the config file.
using Overrides = std::map<std::string, std::string>;

inline PipelineConfig load_config(const std::optional<fs::path>& path, const Overrides& overrides) {
  ConfigValues values;
  if (path) values = parse_config_file(*path);
  for (const auto& [k, v] : overrides) values[k] = v;
  return pipeline_config_from(values);
}

inline std::vector<Event> load_events(const fs::path& path, SensorGeometry geometry) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open events " + path.string());
  return parse_event_stream(in, geometry);
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

/// Writes events.csv, config.txt and gt/flow_NNNNNN.flo under `out`.
inline void write_scene(const SyntheticSceneSpec& spec, const fs::path& out) {
  const auto scene = generate_synthetic_scene(spec);
  fs::create_directories(out / "gt");
  {
    std::ofstream ev(out / "events.csv", std::ios::binary);
    ev << "# t,x,y,p\n";
    write_events(ev, scene.events);
    if (!ev) throw Error("failed writing " + (out / "events.csv").string());
  }
  {
    std::ofstream cfg(out / "config.txt");
    cfg << "width = " << spec.geometry.width << "\nheight = " << spec.geometry.height
        << "\ndt_us = " << spec.window_us << '\n';
  }
  for (const auto& gt : scene.ground_truth)
    write_flow_file(gt, out / "gt" / flow_file_name(gt.window_index));
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

struct RunOptions {
  fs::path events;
  std::optional<fs::path> config;
  Overrides overrides;
  fs::path out;
  bool png = false;
  bool sequential = false;
  bool realtime = false;
};

inline json timing_json(const RunSummary& s) {
  json j;
  j["windows"] = s.windows;
  j["wall_ms"] = s.wall_ms;
  j["windows_per_second"] = s.windows_per_second();
  j["queue_high_water"] = s.queue_high_water;
  json stages = json::array();
  for (int i = 0; i < kStageCount; ++i) {
    const auto m = s.timings.stage(i);
    stages.push_back({{"stage", kStageNames[i]}, {"mean_ms", m.mean}, {"std_ms", m.stddev}});
  }
  j["stages"] = stages;
  const auto t = s.timings.total();
  j["total"] = {{"mean_ms", t.mean}, {"std_ms", t.stddev}};
  return j;
}

/// Streams events from a CSV file; with `realtime`, each event is released
/// no earlier than its timestamp relative to the first one.
inline EventSource csv_source(std::istream& in, SensorGeometry g, bool realtime) {
  auto reader = std::make_shared<EventCsvReader>(in, g);
  if (!realtime) return [reader] { return reader->next(); };
  auto start = std::make_shared<std::optional<std::pair<std::chrono::steady_clock::time_point,
                                                        std::int64_t>>>();
  return [reader, start]() -> std::optional<Event> {
    auto e = reader->next();
    if (!e) return e;
    if (!*start) *start = std::pair{std::chrono::steady_clock::now(), e->t};
    std::this_thread::sleep_until((*start)->first + std::chrono::microseconds(e->t - (*start)->second));
    return e;
  };
}

inline RunSummary run_command(const RunOptions& opt, std::ostream& log) {
  const auto cfg = load_config(opt.config, opt.overrides);
  std::ifstream in(opt.events);
  if (!in) throw Error("cannot open events " + opt.events.string());
  const auto flow_dir = opt.out / "flow";
  const auto png_dir = opt.out / "png";
  fs::create_directories(flow_dir);
  if (opt.png) fs::create_directories(png_dir);

  std::vector<FlowSink> sinks;
  sinks.push_back([&](const WindowResult& r) {
    write_flow_file(r.flow, flow_dir / flow_file_name(r.index));
  });
  if (opt.png)
    sinks.push_back([&](const WindowResult& r) {
      write_png_file(render_flow(r.flow),
                     png_dir / (flow_file_name(r.index).substr(0, 11) + ".png"));
    });

  const auto summary = run_pipeline(cfg, csv_source(in, cfg.geometry, opt.realtime), sinks,
                                    opt.sequential ? RunMode::sequential : RunMode::concurrent);
  {
    std::ofstream t(opt.out / "timing.json");
    t << timing_json(summary).dump(2) << '\n';
  }
  {
    std::ofstream t(opt.out / "timing.txt");
    write_timing_table(t, opt.sequential ? "sequential" : "pipelined", summary);
  }
  log << "processed " << summary.windows << " windows in " << summary.wall_ms << " ms\n";
  return summary;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalOptions {
  fs::path est_dir;
  fs::path gt_dir;
  std::optional<fs::path> mask;
  /// FWL needs the raw events and the window length.
  std::optional<fs::path> events;
  std::optional<fs::path> config;
  Overrides overrides;
  std::optional<fs::path> out;  // report file prefix
};

struct EvalResult {
  MetricReport report;
  std::vector<double> window_fwl;  // windows where FWL is defined
  std::size_t windows = 0;
};

/// Pools endpoint errors over every window (each pixel counts once, so
/// windows weigh in proportion to their evaluated pixels) and averages FWL
/// over the windows where it is defined.
inline EvalResult evaluate(const std::vector<FlowField>& est, const std::vector<FlowField>& gt,
                           const ExclusionMask* mask,
                           const std::vector<EventWindow>* windows = nullptr,
                           double lookup_radius = 6.0) {
  if (est.size() != gt.size())
    throw Error("window count mismatch: " + std::to_string(est.size()) + " estimated vs " +
                std::to_string(gt.size()) + " ground truth");
  EvalResult r;
  r.windows = est.size();
  ErrorTally tally;
  for (std::size_t k = 0; k < est.size(); ++k) tally += tally_errors(est[k], gt[k], mask);
  r.report.aee = tally.aee();
  r.report.outlier_pct = tally.outlier_pct();
  r.report.valid_pixel_count = tally.count;
  r.report.fwl = std::nan("");
  if (windows) {
    for (std::size_t k = 0; k < est.size() && k < windows->size(); ++k) {
      const auto& w = (*windows)[k];
      try {
        r.window_fwl.push_back(
            fwl(w.events, est[k], CompensationParams{w.end(), w.length, lookup_radius}));
      } catch (const UndefinedMetricError&) {
      }
    }
    if (!r.window_fwl.empty()) {
      double s = 0;
      for (double f : r.window_fwl) s += f;
      r.report.fwl = s / static_cast<double>(r.window_fwl.size());
    }
  }
  return r;
}

inline std::vector<FlowField> load_flow_dir(const fs::path& dir) {
  std::vector<FlowField> out;
  for (const auto& p : list_flow_files(dir)) out.push_back(read_flow_file(p));
  return out;
}

inline json report_json(const EvalResult& r) {
  json j;
  j["aee"] = r.report.aee;
  j["outlier_pct"] = r.report.outlier_pct;
  j["valid_pixel_count"] = r.report.valid_pixel_count;
  j["windows"] = r.windows;
  if (std::isnan(r.report.fwl))
    j["fwl"] = nullptr;
  else
    j["fwl"] = r.report.fwl;
  j["fwl_per_window"] = r.window_fwl;
  return j;
}

inline EvalResult eval_command(const EvalOptions& opt, std::ostream& out) {
  const auto est = load_flow_dir(opt.est_dir);
  const auto gt = load_flow_dir(opt.gt_dir);
  std::optional<ExclusionMask> mask;
  if (opt.mask) mask = read_mask_png(*opt.mask);

  std::optional<std::vector<EventWindow>> windows;
  double radius = 6.0;
  if (opt.events) {
    const auto cfg = load_config(opt.config, opt.overrides);
    radius = cfg.transfer.d_sat;
    windows = split_windows(load_events(*opt.events, cfg.geometry), cfg.window_us, cfg.geometry);
  }
  const auto r = evaluate(est, gt, mask ? &*mask : nullptr, windows ? &*windows : nullptr, radius);
  write_report_text(out, r.report);
  if (opt.out) {
    std::ofstream txt(opt.out->string() + ".txt");
    write_report_text(txt, r.report);
    std::ofstream js(opt.out->string() + ".json");
    js << report_json(r).dump(2) << '\n';
  }
  return r;
}

// ---------------------------------------------------------------------------
// viz
// ---------------------------------------------------------------------------

/// Renders one flow file, or every flow file of a directory, to PNG.
inline std::size_t viz_command(const fs::path& input, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::vector<fs::path> files;
  if (fs::is_directory(input))
    files = list_flow_files(input);
  else
    files.push_back(input);
  for (const auto& f : files) {
    auto name = f.stem().string() + ".png";
    write_png_file(render_flow(read_flow_file(f)), out_dir / name);
  }
  return files.size();
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

struct SweepOptions {
  fs::path events;
  fs::path gt_dir;
  std::optional<fs::path> config;
  Overrides overrides;
  std::vector<int> nd{0, 1, 2, 3, 4};
  std::vector<int> nf{1, 2, 3, 4, 5};
  std::vector<double> dsat{3, 6, 9, 12};
  std::optional<fs::path> mask;
  std::optional<fs::path> out;  // table/json prefix
};

struct SweepCell {
  int nd = 0;
  int nf = 0;
  double dsat = 0;
  std::optional<double> aee;
  std::optional<double> outlier_pct;
  std::string error;
};

/// Runs the pipeline in-process and returns the masked flow of every window.
inline std::vector<FlowField> run_in_memory(const PipelineConfig& cfg,
                                            std::span<const Event> events,
                                            RunMode mode = RunMode::sequential) {
  std::vector<FlowField> flows;
  run_pipeline(cfg, vector_source(events), {[&](const WindowResult& r) { flows.push_back(r.flow); }},
               mode);
  return flows;
}

inline std::vector<SweepCell> sweep_command(const SweepOptions& opt, std::ostream& out) {
  const auto base = load_config(opt.config, opt.overrides);
  const auto events = load_events(opt.events, base.geometry);
  const auto gt = load_flow_dir(opt.gt_dir);
  std::optional<ExclusionMask> mask;
  if (opt.mask) mask = read_mask_png(*opt.mask);

  std::vector<SweepCell> cells;
  for (int nd : opt.nd)
    for (int nf : opt.nf)
      for (double dsat : opt.dsat) {
        SweepCell c{nd, nf, dsat, {}, {}, {}};
        try {
          auto cfg = base;
          cfg.filter = {nd, nf};
          cfg.transfer.d_sat = dsat;
          const auto r = evaluate(run_in_memory(cfg, events), gt, mask ? &*mask : nullptr);
          c.aee = r.report.aee;
          c.outlier_pct = r.report.outlier_pct;
        } catch (const std::exception& e) {
          c.error = e.what();
        }
        cells.push_back(c);
      }

  std::ostringstream table;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%4s %4s %6s %10s %10s\n", "N_d", "N_f", "d_sat", "AEE", "%out");
  table << buf;
  const SweepCell* best = nullptr;
  for (const auto& c : cells) {
    if (c.aee) {
      std::snprintf(buf, sizeof buf, "%4d %4d %6.2f %10.4f %10.3f\n", c.nd, c.nf, c.dsat, *c.aee,
                    *c.outlier_pct);
      if (!best || *c.aee < *best->aee) best = &c;
    } else {
      std::snprintf(buf, sizeof buf, "%4d %4d %6.2f %10s %10s  error: ", c.nd, c.nf, c.dsat, "-",
                    "-");
    }
    table << buf;
    if (!c.aee) table << c.error << '\n';
  }
  if (best) {
    std::snprintf(buf, sizeof buf, "best: N_d=%d N_f=%d d_sat=%.2f AEE=%.4f\n", best->nd, best->nf,
                  best->dsat, *best->aee);
    table << buf;
  }
  out << table.str();

  if (opt.out) {
    std::ofstream txt(opt.out->string() + ".txt");
    txt << table.str();
    json j = json::array();
    for (const auto& c : cells) {
      json row{{"nd", c.nd}, {"nf", c.nf}, {"dsat", c.dsat}};
      row["aee"] = c.aee ? json(*c.aee) : json(nullptr);
      row["outlier_pct"] = c.outlier_pct ? json(*c.outlier_pct) : json(nullptr);
      if (!c.error.empty()) row["error"] = c.error;
      j.push_back(row);
    }
    std::ofstream js(opt.out->string() + ".json");
    js << j.dump(2) << '\n';
  }
  return cells;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

/// A square translating diagonally, sized to the sensor, used when no
/// recording is given.
inline SyntheticSceneSpec bench_scene(SensorGeometry g, std::int64_t window_us, int windows,
                                      std::uint64_t seed) {
  SyntheticSceneSpec s;
  s.geometry = g;
  s.shape = ShapeKind::checkerboard;
  s.shape_size = std::max(8, std::min(g.width, g.height) / 3);
  s.origin_x = std::max(0, g.width / 8);
  s.origin_y = std::max(0, (g.height - s.shape_size) / 2);
  const double room = g.width - s.origin_x - s.shape_size - 1;
  s.velocity_x = std::clamp(room / std::max(1, windows), 0.0, std::min(g.width, g.height) / 4.0);
  s.velocity_y = 0.0;
  s.windows = windows;
  s.events_per_pixel = 4;
  s.noise_events = static_cast<int>(0.001 * g.area());
  s.seed = seed;
  s.window_us = window_us;
  return s;
}


struct BenchResult {
  RunSummary sequential;
  RunSummary pipelined;
};

/// Times the sequential and the pipelined run over the same stream and
/// prints both rows of the timing table plus throughput. Geometry defaults
/// to 346x260 with 15 ms windows when no config names it.
inline BenchResult bench_command(const std::optional<fs::path>& config, Overrides overrides,
                                 const std::optional<fs::path>& events_path, int windows,
                                 std::uint64_t seed, bool realtime, std::ostream& out) {
  ConfigValues values;
  if (config) values = parse_config_file(*config);
  for (auto& [k, v] : overrides) values[k] = v;
  values.try_emplace("width", "346");
  values.try_emplace("height", "260");
  values.try_emplace("dt_us", "15000");
  const auto cfg = pipeline_config_from(values);

  std::vector<Event> events;
  if (events_path)
    events = load_events(*events_path, cfg.geometry);
  else
    events = generate_synthetic_scene(bench_scene(cfg.geometry, cfg.window_us, windows, seed)).events;

  auto source = [&] {
    if (!realtime) return vector_source(events);
    auto pos = std::make_shared<std::size_t>(0);
    auto start = std::make_shared<std::chrono::steady_clock::time_point>();
    return EventSource([&events, pos, start]() -> std::optional<Event> {
      if (*pos >= events.size()) return std::nullopt;
      const auto& e = events[*pos];
      if (*pos == 0) *start = std::chrono::steady_clock::now();
      std::this_thread::sleep_until(*start + std::chrono::microseconds(e.t - events.front().t));
      ++*pos;
      return e;
    });
  };

  BenchResult r;
  r.sequential = run_pipeline(cfg, source(), {}, RunMode::sequential);
  r.pipelined = run_pipeline(cfg, source(), {}, RunMode::concurrent);

  out << cfg.geometry.width << "x" << cfg.geometry.height << ", " << r.pipelined.windows
      << " windows of " << cfg.window_us << " us, " << cfg.threads << " worker thread(s)\n";
  write_timing_table(out, "sequential", r.sequential);
  std::ostringstream row;
  write_timing_table(row, "pipelined", r.pipelined);
  // Skip the repeated header line.
  const auto s = row.str();
  out << s.substr(s.find('\n') + 1);
  char buf[160];
  std::snprintf(buf, sizeof buf, "throughput: sequential %.1f windows/s, pipelined %.1f windows/s\n",
                r.sequential.windows_per_second(), r.pipelined.windows_per_second());
  out << buf;
  return r;
}

}  // namespace evflow::cli
