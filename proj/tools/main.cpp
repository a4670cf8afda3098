#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "commands.hpp"

namespace {

using namespace evflow;
using namespace evflow::cli;

/// Flags shared with the config file. Unset flags leave the config alone.
struct ConfigFlags {
  std::optional<std::string> config;
  std::map<std::string, std::string> values;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "key = value configuration file");
    for (const char* key : {"width", "height", "nd", "nf", "dsat", "transfer", "bound", "levels",
                            "lambda", "iters", "gamma", "intensity_scale", "quantize",
                            "queue_capacity", "threads"}) {
      std::string flag = std::string("--") + key;
      for (auto& c : flag)
        if (c == '_') c = '-';
      app->add_option_function<std::string>(
          flag, [this, key](const std::string& v) { values[key] = v; }, std::string("overrides `") + key + "`");
    }
    app->add_option_function<std::string>(
        "--dt-us", [this](const std::string& v) { values["dt_us"] = v; }, "window length in microseconds");
  }

  std::optional<fs::path> path() const {
    if (!config) return std::nullopt;
    return fs::path(*config);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Event-camera optical flow from distance surfaces"};
  app.require_subcommand(1, 1);

  // run
  RunOptions run;
  ConfigFlags run_cfg;
  std::string run_events, run_out;
  auto* run_cmd = app.add_subcommand("run", "estimate flow for every window of an event file");
  run_cmd->add_option("events", run_events, "CSV events: t,x,y,p")->required();
  run_cmd->add_option("--out", run_out, "output directory")->required();
  run_cmd->add_flag("--png", run.png, "also render flow PNGs");
  run_cmd->add_flag("--sequential", run.sequential, "run the stages one after another");
  run_cfg.attach(run_cmd);

  // synth
  SyntheticSceneSpec spec;
  std::string synth_out, shape = "square";
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic translating scene");
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_option("--width", spec.geometry.width);
  synth_cmd->add_option("--height", spec.geometry.height);
  synth_cmd->add_option("--shape", shape, "square|checkerboard|bar");
  synth_cmd->add_option("--size", spec.shape_size);
  synth_cmd->add_option("--x0", spec.origin_x);
  synth_cmd->add_option("--y0", spec.origin_y);
  synth_cmd->add_option("--vx", spec.velocity_x, "pixels per window");
  synth_cmd->add_option("--vy", spec.velocity_y, "pixels per window");
  synth_cmd->add_option("--windows", spec.windows);
  synth_cmd->add_option("--events-per-pixel", spec.events_per_pixel);
  synth_cmd->add_option("--noise", spec.noise_events, "uniform noise events in total");
  synth_cmd->add_option("--seed", spec.seed);
  synth_cmd->add_option("--dt-us", spec.window_us);

  // eval
  EvalOptions eval;
  ConfigFlags eval_cfg;
  std::string est_dir, gt_dir;
  std::optional<std::string> eval_mask, eval_events, eval_out;
  auto* eval_cmd = app.add_subcommand("eval", "compare estimated flow against ground truth");
  eval_cmd->add_option("est", est_dir, "directory of estimated .flo files")->required();
  eval_cmd->add_option("gt", gt_dir, "directory of ground-truth .flo files")->required();
  eval_cmd->add_option("--mask", eval_mask, "PNG; non-zero pixels are excluded");
  eval_cmd->add_option("--events", eval_events, "CSV events, enables FWL");
  eval_cmd->add_option("--out", eval_out, "report path prefix (.txt and .json)");
  eval_cfg.attach(eval_cmd);

  // viz
  std::string viz_in, viz_out;
  auto* viz_cmd = app.add_subcommand("viz", "render .flo files as color-wheel PNGs");
  viz_cmd->add_option("flow", viz_in, ".flo file or directory")->required();
  viz_cmd->add_option("--out", viz_out, "output directory")->required();

  // sweep
  SweepOptions sweep;
  ConfigFlags sweep_cfg;
  std::string sweep_events, sweep_gt;
  std::optional<std::string> sweep_mask, sweep_out;
  auto* sweep_cmd = app.add_subcommand("sweep", "grid over N_d, N_f and d_sat");
  sweep_cmd->add_option("events", sweep_events)->required();
  sweep_cmd->add_option("gt", sweep_gt, "directory of ground-truth .flo files")->required();
  sweep_cmd->add_option("--nd-list", sweep.nd)->delimiter(',');
  sweep_cmd->add_option("--nf-list", sweep.nf)->delimiter(',');
  sweep_cmd->add_option("--dsat-list", sweep.dsat)->delimiter(',');
  sweep_cmd->add_option("--mask", sweep_mask);
  sweep_cmd->add_option("--out", sweep_out, "table path prefix (.txt and .json)");
  sweep_cfg.attach(sweep_cmd);

  // bench
  ConfigFlags bench_cfg;
  std::optional<std::string> bench_events;
  int bench_windows = 200;
  std::uint64_t bench_seed = 1;
  bool bench_realtime = false;
  auto* bench_cmd = app.add_subcommand("bench", "per-stage timing table");
  bench_cmd->add_option("--events", bench_events, "recorded stream; synthetic if omitted");
  bench_cmd->add_option("--windows", bench_windows, "synthetic windows");
  bench_cmd->add_option("--seed", bench_seed);
  bench_cmd->add_flag("--realtime", bench_realtime, "replay at wall-clock speed");
  bench_cfg.attach(bench_cmd);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) {
      run.events = run_events;
      run.out = run_out;
      run.config = run_cfg.path();
      run.overrides = run_cfg.values;
      run_command(run, std::cout);
    } else if (*synth_cmd) {
      auto kind = parse_shape(shape);
      if (!kind) throw ParameterError("unknown shape `" + shape + "`");
      spec.shape = *kind;
      write_scene(spec, synth_out);
      std::cout << "wrote " << spec.windows << " windows to " << synth_out << '\n';
    } else if (*eval_cmd) {
      eval.est_dir = est_dir;
      eval.gt_dir = gt_dir;
      if (eval_mask) eval.mask = *eval_mask;
      if (eval_events) eval.events = *eval_events;
      if (eval_out) eval.out = *eval_out;
      eval.config = eval_cfg.path();
      eval.overrides = eval_cfg.values;
      eval_command(eval, std::cout);
    } else if (*viz_cmd) {
      std::cout << "rendered " << viz_command(viz_in, viz_out) << " images\n";
    } else if (*sweep_cmd) {
      sweep.events = sweep_events;
      sweep.gt_dir = sweep_gt;
      if (sweep_mask) sweep.mask = *sweep_mask;
      if (sweep_out) sweep.out = *sweep_out;
      sweep.config = sweep_cfg.path();
      sweep.overrides = sweep_cfg.values;
      sweep_command(sweep, std::cout);
    } else if (*bench_cmd) {
      bench_command(bench_cfg.path(), bench_cfg.values,
                    bench_events ? std::optional<fs::path>(*bench_events) : std::nullopt,
                    bench_windows, bench_seed, bench_realtime, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
