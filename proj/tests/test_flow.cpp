#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "evflow/accumulator.hpp"
#include "evflow/flow.hpp"
#include "evflow/io_formats.hpp"
#include "evflow/pipeline.hpp"

using namespace evflow;

namespace {

ScalarGrid ramp(int w, int h) {
  ScalarGrid g(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) g(x, y) = static_cast<float>(x);
  return g;
}

ScalarGrid random_grid(int w, int h, std::mt19937& rng) {
  std::uniform_real_distribution<float> u(0.f, 1.f);
  ScalarGrid g(w, h);
  for (auto& v : g.data()) v = u(rng);
  return g;
}

FlowConfig single_level() {
  FlowConfig c;
  c.levels = 1;
  c.regularization = {50.0};
  c.smooth_iterations = {50};
  return c;
}

struct SceneRun {
  std::vector<FlowField> flows;  // masked to denoised edges
  std::vector<ScalarGrid> surfaces;
  std::vector<FlowField> dense;
};

SceneRun run_scene(const SyntheticSceneSpec& spec, const FlowConfig& flow_cfg,
                   const FilterParams& filter = {1, 4}) {
  const auto scene = generate_synthetic_scene(spec);
  PipelineConfig cfg;
  cfg.geometry = spec.geometry;
  cfg.window_us = spec.window_us;
  cfg.filter = filter;
  cfg.flow = flow_cfg;
  FlowState state;
  SceneRun out;
  for (const auto& edges : accumulate(scene.events, spec.window_us, spec.geometry)) {
    const auto filtered = filter_stage(edges, filter);
    auto surface = surface_stage(filtered.filtered, cfg);
    auto dense = estimate_flow(state, surface, flow_cfg);
    out.flows.push_back(mask_to_edges(dense, filtered.denoised));
    out.dense.push_back(std::move(dense));
    out.surfaces.push_back(std::move(surface));
  }
  return out;
}

SyntheticSceneSpec square_scene(double vx, int windows = 50) {
  SyntheticSceneSpec s;
  s.geometry = {128, 96};
  s.shape_size = 24;
  s.origin_x = 8;
  s.origin_y = 36;
  s.velocity_x = vx;
  s.windows = windows;
  return s;
}

double mean_u(const FlowField& f) {
  double s = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < f.valid.size(); ++i)
    if (f.valid[i]) {
      s += f.vectors[i].u;
      ++n;
    }
  return n ? s / n : 0.0;
}

}  // namespace

TEST(Warp, ZeroFlowIsIdentity) {
  std::mt19937 rng(1);
  const auto img = random_grid(17, 11, rng);
  const FlowField zero({17, 11}, true);
  EXPECT_EQ(warp_image(img, zero), img);
}

TEST(Warp, IntegerShift) {
  std::mt19937 rng(2);
  const auto img = random_grid(17, 11, rng);
  FlowField f({17, 11}, true);
  for (auto& v : f.vectors.data()) v = {1.0f, 0.0f};
  const auto out = warp_image(img, f);
  for (int y = 0; y < 11; ++y)
    for (int x = 0; x + 1 < 17; ++x) EXPECT_EQ(out(x, y), img(x + 1, y));
  // Out-of-frame samples clamp to the border.
  for (int y = 0; y < 11; ++y) EXPECT_EQ(out(16, y), img(16, y));
}

TEST(Warp, HalfPixelOnRamp) {
  const auto img = ramp(20, 5);
  FlowField f({20, 5}, true);
  for (auto& v : f.vectors.data()) v = {0.5f, 0.0f};
  const auto out = warp_image(img, f);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x + 1 < 20; ++x) EXPECT_FLOAT_EQ(out(x, y), x + 0.5f);
}

TEST(Pyramid, DownsampleAveragesAndUpsampleScales) {
  ScalarGrid g(5, 3, 0.0f);
  g(0, 0) = 4.0f;
  g(4, 2) = 2.0f;
  const auto d = downsample(g);
  EXPECT_EQ(d.width(), 3);
  EXPECT_EQ(d.height(), 2);
  EXPECT_FLOAT_EQ(d(0, 0), 1.0f);
  EXPECT_FLOAT_EQ(d(2, 1), 2.0f);

  VectorGrid coarse(4, 3, FlowVector{1.0f, -0.5f});
  const auto fine = upsample_flow(coarse, {8, 6});
  for (const auto& v : fine.data()) EXPECT_EQ(v, (FlowVector{2.0f, -1.0f}));
}

TEST(EstimateFlow, FreshStateGivesInvalidZeroField) {
  std::mt19937 rng(3);
  FlowState state;
  const auto f = estimate_flow(state, random_grid(16, 12, rng), FlowConfig{});
  EXPECT_EQ(f.valid_count(), 0u);
  for (const auto& v : f.vectors.data()) EXPECT_EQ(v, (FlowVector{}));
  EXPECT_FALSE(state.fresh());
}

TEST(EstimateFlow, IdenticalSurfacesGiveZeroFlow) {
  std::mt19937 rng(4);
  const auto s = random_grid(40, 30, rng);
  FlowState state;
  estimate_flow(state, s, FlowConfig{});
  const auto f = estimate_flow(state, s, FlowConfig{});
  EXPECT_EQ(f.valid_count(), s.size());
  for (const auto& v : f.vectors.data()) {
    EXPECT_LT(std::fabs(v.u), 1e-6);
    EXPECT_LT(std::fabs(v.v), 1e-6);
  }
}

TEST(EstimateFlow, ZeroMotionFixedPoint) {
  auto spec = square_scene(0.0, 1);
  const auto run = run_scene(spec, FlowConfig{});
  FlowState state;
  for (int k = 0; k < 20; ++k) {
    const auto f = estimate_flow(state, run.surfaces[0], FlowConfig{});
    for (const auto& v : f.vectors.data()) ASSERT_LT(std::hypot(v.u, v.v), 1e-3) << "k=" << k;
  }
}

TEST(EstimateFlow, GeometryMismatchIsStateError) {
  FlowState state;
  estimate_flow(state, ScalarGrid(8, 8), FlowConfig{});
  EXPECT_THROW(estimate_flow(state, ScalarGrid(9, 8), FlowConfig{}), StateError);
  state.reset();
  EXPECT_NO_THROW(estimate_flow(state, ScalarGrid(9, 8), FlowConfig{}));
}

TEST(EstimateFlow, ConfigValidation) {
  FlowConfig c;
  c.regularization = {1.0, 2.0};
  EXPECT_THROW(c.validate(), ParameterError);
  c = FlowConfig{};
  c.temporal_decay = 1.5;
  EXPECT_THROW(c.validate(), ParameterError);
  c = FlowConfig{};
  c.levels = 0;
  EXPECT_THROW(c.validate(), ParameterError);
}

TEST(EstimateFlow, TranslatingSquareUnitSpeed) {
  const auto run = run_scene(square_scene(1.0), FlowConfig{});
  double sum = 0;
  for (int k = 10; k < 50; ++k) sum += mean_u(run.flows[k]);
  EXPECT_NEAR(sum / 40, 1.0, 0.5);
  for (int k = 10; k < 50; ++k) EXPECT_NEAR(mean_u(run.flows[k]), 1.0, 0.5) << "window " << k;
}

TEST(EstimateFlow, PyramidRecoversLargeMotion) {
  // Denser events keep the 8 px/window edges contiguous.
  auto spec = square_scene(8.0, 45);
  spec.geometry = {400, 96};
  spec.events_per_pixel = 8;
  auto mean_after_warmup = [&](const FlowConfig& c) {
    const auto run = run_scene(spec, c);
    double s = 0;
    for (int k = 10; k < 45; ++k) s += mean_u(run.flows[k]);
    return s / 35;
  };
  EXPECT_GE(mean_after_warmup(FlowConfig{}), 0.8 * 8.0);
  EXPECT_LT(mean_after_warmup(single_level()), 0.5 * 8.0);
}

TEST(EstimateFlow, TemporalDecayReducesJitter) {
  auto jitter = [](double gamma) {
    FlowConfig c;
    c.temporal_decay = gamma;
    const auto run = run_scene(square_scene(1.0), c);
    double s = 0, ss = 0;
    for (int k = 10; k < 50; ++k) {
      const double m = mean_u(run.flows[k]);
      s += m;
      ss += m * m;
    }
    const double mean = s / 40;
    return ss / 40 - mean * mean;
  };
  EXPECT_LT(jitter(0.5), jitter(0.0));
}

TEST(EstimateFlow, WarpingWithEstimateExplainsMotion) {
  const auto run = run_scene(square_scene(1.0, 20), FlowConfig{});
  const int k = 15;
  const auto& prev = run.surfaces[k - 1];
  const auto& curr = run.surfaces[k];
  // Previous surface sampled where each current pixel came from.
  FlowField back = run.dense[k];
  for (auto& v : back.vectors.data()) v = {-v.u, -v.v};
  const auto warped = warp_image(prev, back);
  double with = 0, without = 0;
  std::size_t n = 0;
  for (int y = 1; y + 1 < 96; ++y)
    for (int x = 1; x + 1 < 128; ++x) {
      bool near_edge = false;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) near_edge |= run.flows[k].is_valid(x + dx, y + dy);
      if (!near_edge) continue;
      with += std::fabs(warped(x, y) - curr(x, y));
      without += std::fabs(prev(x, y) - curr(x, y));
      ++n;
    }
  ASSERT_GT(n, 0u);
  EXPECT_LT(with, 0.5 * without);
}

TEST(EstimateFlow, TranslationEquivariance) {
  auto a = square_scene(1.0, 16);
  a.origin_x = 24;
  a.origin_y = 32;
  auto b = a;
  b.origin_x += 8;
  b.origin_y += 4;
  const auto ra = run_scene(a, FlowConfig{});
  const auto rb = run_scene(b, FlowConfig{});
  for (int k = 1; k < 16; ++k) {
    const auto& fa = ra.flows[k];
    const auto& fb = rb.flows[k];
    ASSERT_EQ(fa.valid_count(), fb.valid_count());
    for (int y = 0; y + 4 < 96; ++y)
      for (int x = 0; x + 8 < 128; ++x) {
        ASSERT_EQ(fa.is_valid(x, y), fb.is_valid(x + 8, y + 4));
        if (!fa.is_valid(x, y)) continue;
        EXPECT_NEAR(fa.vectors(x, y).u, fb.vectors(x + 8, y + 4).u, 1e-3);
        EXPECT_NEAR(fa.vectors(x, y).v, fb.vectors(x + 8, y + 4).v, 1e-3);
      }
  }
}

TEST(EstimateFlow, ThreadCountDoesNotChangeResult) {
  const auto spec = square_scene(1.0, 6);
  const auto scene = generate_synthetic_scene(spec);
  const auto edges = accumulate(scene.events, spec.window_us, spec.geometry);
  PipelineConfig cfg;
  cfg.geometry = spec.geometry;
  ThreadPool pool(3);
  FlowState s1, s2;
  for (const auto& e : edges) {
    const auto surface = surface_stage(filter_stage(e, cfg.filter).filtered, cfg);
    const auto a = estimate_flow(s1, surface, cfg.flow);
    const auto b = estimate_flow(s2, surface, cfg.flow, &pool);
    ASSERT_EQ(a, b);
  }
}

TEST(MaskToEdges, Semantics) {
  FlowField f({4, 4}, true);
  for (auto& v : f.vectors.data()) v = {1.0f, 2.0f};
  EXPECT_EQ(mask_to_edges(f, EdgeImage({4, 4})).valid_count(), 0u);

  EdgeImage full({4, 4});
  for (auto& b : full.bits.data()) b = 1;
  EXPECT_EQ(mask_to_edges(f, full), f);

  EdgeImage half({4, 4});
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 4; ++x) half.set(x, y);
  f.valid(0, 0) = 0;
  const auto m = mask_to_edges(f, half);
  EXPECT_EQ(m.valid_count(), 7u);
  EXPECT_EQ(m.vectors(1, 0), (FlowVector{1.0f, 2.0f}));

  EXPECT_THROW(mask_to_edges(f, EdgeImage({3, 4})), GeometryError);
}
