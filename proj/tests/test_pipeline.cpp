#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <sstream>
#include <thread>

#include "evflow/bounded_queue.hpp"
#include "evflow/config.hpp"
#include "evflow/pipeline.hpp"

using namespace evflow;

namespace {

SyntheticSceneSpec scene_spec(int windows) {
  SyntheticSceneSpec s;
  s.geometry = {96, 64};
  s.shape = ShapeKind::checkerboard;
  s.shape_size = 20;
  s.origin_x = 4;
  s.origin_y = 20;
  s.velocity_x = 1.2;
  s.velocity_y = 0.2;
  s.windows = windows;
  s.noise_events = 30;
  return s;
}

PipelineConfig config_for(const SyntheticSceneSpec& s) {
  PipelineConfig c;
  c.geometry = s.geometry;
  c.window_us = s.window_us;
  return c;
}

/// Flow files of every window, serialised in memory.
std::vector<std::string> run_bytes(const PipelineConfig& cfg, const std::vector<Event>& events,
                                   RunMode mode, RunSummary* summary = nullptr) {
  std::vector<std::string> out;
  auto s = run_pipeline(cfg, vector_source(events),
                        {[&](const WindowResult& r) {
                          std::ostringstream buf;
                          write_flow(r.flow, buf);
                          out.push_back(buf.str());
                        }},
                        mode);
  if (summary) *summary = s;
  return out;
}

}  // namespace

TEST(BoundedQueue, FifoAndCapacity) {
  BoundedQueue<int> q(2);
  EXPECT_TRUE(q.push(1));
  EXPECT_TRUE(q.push(2));
  std::atomic<bool> pushed{false};
  std::thread producer([&] {
    q.push(3);
    pushed = true;
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(20));
  EXPECT_FALSE(pushed.load());
  EXPECT_EQ(q.pop(), 1);
  producer.join();
  EXPECT_EQ(q.pop(), 2);
  EXPECT_EQ(q.pop(), 3);
  q.close();
  EXPECT_FALSE(q.pop());
  EXPECT_FALSE(q.push(4));
  EXPECT_LE(q.high_water_mark(), 2u);
}

TEST(BoundedQueue, AbortWakesWaiters) {
  BoundedQueue<int> q(1);
  std::thread consumer([&] { EXPECT_FALSE(q.pop()); });
  std::this_thread::sleep_for(std::chrono::milliseconds(10));
  q.abort();
  consumer.join();
}

TEST(Pipeline, ConcurrentMatchesSequentialBytes) {
  const auto spec = scene_spec(50);
  const auto events = generate_synthetic_scene(spec).events;
  auto cfg = config_for(spec);
  const auto reference = run_bytes(cfg, events, RunMode::sequential);
  ASSERT_EQ(reference.size(), 50u);
  for (int threads : {1, 2, 8})
    for (std::size_t capacity : {1u, 4u}) {
      cfg.threads = threads;
      cfg.queue_capacity = capacity;
      RunSummary summary;
      const auto got = run_bytes(cfg, events, RunMode::concurrent, &summary);
      EXPECT_EQ(got, reference) << threads << " threads, capacity " << capacity;
      EXPECT_LE(summary.queue_high_water, capacity);
    }
}

TEST(Pipeline, MatchesStageComposition) {
  const auto spec = scene_spec(8);
  const auto events = generate_synthetic_scene(spec).events;
  const auto cfg = config_for(spec);
  std::vector<FlowField> expected;
  FlowState state;
  for (const auto& e : accumulate(events, cfg.window_us, cfg.geometry)) {
    const auto filtered = denoise_fill(e, cfg.filter);
    const auto denoised = denoise(e, cfg.filter.denoise_threshold);
    const auto surface = apply_transfer(euclidean_dt(filtered), cfg.transfer);
    expected.push_back(mask_to_edges(estimate_flow(state, surface.values, cfg.flow), denoised));
  }
  std::vector<FlowField> got;
  run_pipeline(cfg, vector_source(events), {[&](const WindowResult& r) { got.push_back(r.flow); }});
  ASSERT_EQ(got.size(), expected.size());
  for (std::size_t k = 0; k < got.size(); ++k) {
    EXPECT_EQ(got[k], expected[k]) << "window " << k;
    EXPECT_EQ(got[k].window_index, std::int64_t(k));
  }
}

TEST(Pipeline, OneSinkCallPerWindowInOrder) {
  const auto spec = scene_spec(12);
  const auto events = generate_synthetic_scene(spec).events;
  std::vector<std::int64_t> seen;
  const auto summary = run_pipeline(config_for(spec), vector_source(events),
                                    {[&](const WindowResult& r) { seen.push_back(r.index); }});
  ASSERT_EQ(seen.size(), 12u);
  for (std::size_t k = 0; k < seen.size(); ++k) EXPECT_EQ(seen[k], std::int64_t(k));
  EXPECT_EQ(summary.windows, 12u);
  EXPECT_EQ(summary.timings.per_window.size(), 12u);
}

TEST(Pipeline, SourceErrorCarriesWindowIndex) {
  const auto spec = scene_spec(10);
  const auto events = generate_synthetic_scene(spec).events;
  for (auto mode : {RunMode::sequential, RunMode::concurrent}) {
    std::size_t i = 0;
    EventSource source = [&]() -> std::optional<Event> {
      if (i < events.size() && events[i].t >= 5 * spec.window_us) throw FormatError("bad record");
      if (i >= events.size()) return std::nullopt;
      return events[i++];
    };
    try {
      run_pipeline(config_for(spec), source, {}, mode);
      FAIL() << "no error";
    } catch (const PipelineError& e) {
      EXPECT_EQ(e.window, 4);
      EXPECT_NE(std::string(e.what()).find("bad record"), std::string::npos);
    }
  }
}

TEST(Pipeline, OrderingErrorPropagates) {
  const std::vector<Event> events{{10, 0, 0}, {5, 1, 1}};
  PipelineConfig cfg;
  cfg.geometry = {4, 4};
  for (auto mode : {RunMode::sequential, RunMode::concurrent})
    EXPECT_THROW(run_pipeline(cfg, vector_source(events), {}, mode), PipelineError);
}

TEST(Pipeline, SinkFailureAbortsCleanly) {
  const auto spec = scene_spec(30);
  const auto events = generate_synthetic_scene(spec).events;
  for (auto mode : {RunMode::sequential, RunMode::concurrent}) {
    int calls = 0;
    FlowSink sink = [&](const WindowResult& r) {
      ++calls;
      if (r.index == 3) throw std::runtime_error("disk full");
    };
    auto cfg = config_for(spec);
    cfg.queue_capacity = 1;
    try {
      run_pipeline(cfg, vector_source(events), {sink}, mode);
      FAIL() << "no error";
    } catch (const PipelineError& e) {
      EXPECT_EQ(e.window, 3);
    }
    EXPECT_EQ(calls, 4);
  }
}

TEST(Pipeline, EmptySourceProducesNothing) {
  const auto s = run_pipeline(PipelineConfig{}, vector_source({}), {});
  EXPECT_EQ(s.windows, 0u);
}

TEST(Pipeline, QuantizedSurfaceToggle) {
  const auto spec = scene_spec(6);
  const auto events = generate_synthetic_scene(spec).events;
  auto cfg = config_for(spec);
  cfg.quantize_surface = true;
  EXPECT_EQ(run_bytes(cfg, events, RunMode::concurrent), run_bytes(cfg, events, RunMode::sequential));
}

TEST(Timing, TableLayout) {
  RunSummary s;
  s.windows = 2;
  s.timings.per_window = {WindowTimes{{1.0, 2.0, 3.0, 4.0}}, WindowTimes{{3.0, 2.0, 1.0, 0.0}}};
  EXPECT_DOUBLE_EQ(s.timings.stage(0).mean, 2.0);
  EXPECT_DOUBLE_EQ(s.timings.stage(0).stddev, 1.0);
  EXPECT_DOUBLE_EQ(s.timings.total().mean, 8.0);
  EXPECT_DOUBLE_EQ(s.timings.total().stddev, 2.0);
  std::ostringstream out;
  write_timing_table(out, "cpu", s);
  const auto text = out.str();
  for (const char* col :
       {"Edge image", "Denoising & filling", "Distance transform", "Optical flow", "Total"})
    EXPECT_NE(text.find(col), std::string::npos) << col;
  EXPECT_NE(text.find("2.00 +- 1.00"), std::string::npos);
  EXPECT_NE(text.find("8.00 +- 2.00"), std::string::npos);
}

TEST(Config, ParsesAndValidates) {
  std::istringstream in(
      "# sensor\nwidth = 346\nheight=260\ndt_us = 15000\nnd = 2\nnf = 3\n"
      "transfer = linear_bounded\nbound = 6\nlevels = 2\nlambda = 10, 20\niters = 7,3\n"
      "gamma = 0.25\n");
  const auto cfg = pipeline_config_from(parse_config(in));
  EXPECT_EQ(cfg.geometry, (SensorGeometry{346, 260}));
  EXPECT_EQ(cfg.window_us, 15000);
  EXPECT_EQ(cfg.filter.denoise_threshold, 2);
  EXPECT_EQ(cfg.filter.fill_threshold, 3);
  EXPECT_EQ(cfg.transfer.kind, TransferKind::linear_bounded);
  EXPECT_EQ(cfg.flow.levels, 2);
  EXPECT_EQ(cfg.flow.regularization, (std::vector<double>{10, 20}));
  EXPECT_EQ(cfg.flow.smooth_iterations, (std::vector<int>{7, 3}));
  EXPECT_DOUBLE_EQ(cfg.flow.temporal_decay, 0.25);
}

TEST(Config, MissingFieldNamesKey) {
  std::istringstream in("width = 10\nheight = 10\n");
  try {
    pipeline_config_from(parse_config(in));
    FAIL();
  } catch (const ParameterError& e) {
    EXPECT_NE(std::string(e.what()).find("missing field `dt_us`"), std::string::npos);
  }
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  ConfigValues v{{"width", "10"}, {"height", "10"}, {"dt_us", "100"}};
  auto with = [&](std::string k, std::string val) {
    auto c = v;
    c[k] = val;
    return c;
  };
  EXPECT_THROW(pipeline_config_from(with("colour", "red")), ParameterError);
  EXPECT_THROW(pipeline_config_from(with("nd", "five")), ParameterError);
  EXPECT_THROW(pipeline_config_from(with("nd", "5")), ParameterError);
  EXPECT_THROW(pipeline_config_from(with("transfer", "cubic")), ParameterError);
  EXPECT_THROW(pipeline_config_from(with("dt_us", "0")), ParameterError);
  EXPECT_THROW(pipeline_config_from(with("lambda", "1,2")), ParameterError);
  std::istringstream bad("width 10\n");
  EXPECT_THROW(parse_config(bad), ParseError);
}

TEST(Config, EnvironmentOverridesThreads) {
  ConfigValues v{{"width", "10"}, {"height", "10"}, {"dt_us", "100"}, {"threads", "2"}};
  ::setenv("EVFLOW_THREADS", "5", 1);
  EXPECT_EQ(pipeline_config_from(v).threads, 5);
  ::unsetenv("EVFLOW_THREADS");
  EXPECT_EQ(pipeline_config_from(v).threads, 2);
}

TEST(Config, WriteRoundTrips) {
  ConfigValues v{{"width", "33"}, {"height", "21"}, {"dt_us", "500"}, {"levels", "2"},
                 {"transfer", "log"}, {"quantize", "yes"}};
  const auto cfg = pipeline_config_from(v);
  std::stringstream buf;
  write_config(buf, cfg);
  const auto again = pipeline_config_from(parse_config(buf));
  std::stringstream buf2;
  write_config(buf2, again);
  EXPECT_EQ(buf.str(), buf2.str());
  EXPECT_TRUE(again.quantize_surface);
}
