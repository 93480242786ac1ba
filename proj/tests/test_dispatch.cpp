// Copyright (c) 2026, The NVE Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "nve/dispatch.hpp"
#include "nve/error.hpp"

namespace nve {
namespace {

const std::vector<double> kTable3 = {0.30, 0.699, 0.00, 0.07, 0.12, 0.08, 0.09, 0.03,
                                     0.07, 0.27,  0.19, 0.24, 0.32, 0.38, 0.475, 1.00};

const ModelSpec kQuantSpec{4, 32, 64, 4, 48, 5};

std::size_t count(const std::vector<Precision>& r, Precision p) {
  return static_cast<std::size_t>(std::ranges::count(r, p));
}

std::vector<std::size_t> all_layers(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no nve::Error thrown";
  return ErrorCode::kIo;
}

TEST(Route, ThresholdEndpointsAndTable3) {
  const auto p = profile_from_scores(kTable3, 0.7);
  EXPECT_EQ(count(route_layers(p, 2.0), Precision::kW4A16), 0u);
  EXPECT_EQ(count(route_layers(p, 0.0), Precision::kW4A16), 16u);
  const auto r = route_layers(p, 0.7);
  EXPECT_EQ(count(r, Precision::kW4A16), 1u);
  EXPECT_EQ(r[15], Precision::kW4A16);
}

TEST(Route, RaisingTauNeverPromotesALayer) {
  const auto p = profile_from_scores(kTable3, 0.7);
  auto prev = route_layers(p, 0.0);
  for (double tau = 0.01; tau <= 1.2; tau += 0.01) {
    const auto r = route_layers(p, tau);
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (prev[i] == Precision::kW4A8) {
        EXPECT_EQ(r[i], Precision::kW4A8);
      }
    }
    prev = r;
  }
}

TEST(HotSet, GreedyByScore) {
  const std::vector<double> s{0.1, 0.9, 0.4, 1.0};
  const std::vector<std::uint64_t> b(4, 10);
  EXPECT_EQ(hot_set(s, 20, b), (std::vector<std::size_t>{3, 1}));
  EXPECT_EQ(hot_set(s, 0, b), (std::vector<std::size_t>{}));
  EXPECT_EQ(hot_set(s, 40, b).size(), 4u);
  EXPECT_EQ(hot_set(s, 9, b), (std::vector<std::size_t>{}));
  EXPECT_EQ(code_of([&] { hot_set(s, 10, std::vector<std::uint64_t>{1}); }), ErrorCode::kLengthMismatch);
}

TEST(HotSet, GrowsWithBudget) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::uint64_t> sz(1, 9);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> s(12);
    std::vector<std::uint64_t> b(12);
    for (auto& x : s) x = u(rng);
    for (auto& x : b) x = sz(rng);
    std::size_t prev = 0;
    for (std::uint64_t budget = 0; budget <= 120; ++budget) {
      const auto h = hot_set(s, budget, b);
      std::uint64_t used = 0;
      for (auto l : h) used += b[l];
      EXPECT_LE(used, budget);
      EXPECT_GE(h.size(), prev);
      prev = h.size();
    }
  }
}

TEST(SelectMode, RatioTable) {
  EXPECT_EQ(choose_mode(1.0, true), Mode::kHotAwq);
  EXPECT_EQ(choose_mode(1.0, false), Mode::kHotOnly);
  EXPECT_EQ(choose_mode(0.5, false), Mode::kHotOnly);
  EXPECT_EQ(choose_mode(0.36, true), Mode::kPaged);
  EXPECT_EQ(choose_mode(0.25, false), Mode::kPaged);
  EXPECT_EQ(choose_mode(0.49, false, 0.4), Mode::kHotOnly);
}

TEST(SelectMode, BuildsConsistentPlans) {
  const auto p = profile_from_scores(kTable3, 0.7);
  const std::vector<std::uint64_t> b(16, 100);
  const ModePlan big = select_mode(p, 1600, b, true);
  EXPECT_EQ(big.mode, Mode::kHotAwq);
  EXPECT_EQ(big.active_ratio, 1.0);
  EXPECT_EQ(big.active_layers, all_layers(16));
  const ModePlan half = select_mode(p, 800, b, false);
  EXPECT_EQ(half.mode, Mode::kHotOnly);
  EXPECT_EQ(half.active_layers.size(), 8u);
  EXPECT_TRUE(std::ranges::is_sorted(half.active_layers));
  const ModePlan tight = select_mode(p, 400, b, false);
  EXPECT_EQ(tight.mode, Mode::kPaged);
  EXPECT_EQ(tight.active_ratio, 0.25);
  EXPECT_EQ(tight.active_layers, all_layers(16));
  EXPECT_EQ(count(tight.routes, Precision::kW4A16), 1u);
  EXPECT_EQ(code_of([&] { make_plan(p, Mode::kHotAwq, 1600, b, false); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([&] { make_plan(p, Mode::kHotOnly, 1600, b, false, 1.5); }), ErrorCode::kInvalidArgument);
  const Json j = half.to_json();
  EXPECT_EQ(j["mode"], "B_hot_only");
  EXPECT_EQ(j["w4a16_layers"].get<int>() + j["w4a8_layers"].get<int>(), 16);
}

TEST(Modes, NamesParse) {
  EXPECT_EQ(parse_mode("A"), Mode::kPaged);
  EXPECT_EQ(parse_mode("C_hot_awq"), Mode::kHotAwq);
  EXPECT_EQ(mode_name(Mode::kHotOnly), "B_hot_only");
  EXPECT_FALSE(parse_mode("D").has_value());
}

ModePlan full_plan(std::size_t layers, Mode mode, Precision route) {
  ModePlan plan;
  plan.mode = mode;
  plan.active_layers = all_layers(layers);
  plan.routes.assign(layers, route);
  plan.active_ratio = 1.0;
  return plan;
}

TEST(RunPlan, IdentityPlanHasZeroDivergence) {
  const ToyModel m = build_toy_model(kQuantSpec);
  const std::vector<std::uint32_t> toks{1, 2, 3, 40, 7};
  const PlanRun r = run_plan(m, full_plan(4, Mode::kHotOnly, Precision::kW4A16), toks);
  EXPECT_EQ(r.divergence, 0.0);
  EXPECT_EQ(r.hidden, r.baseline);
}

TEST(RunPlan, PagedModeIsBitExactAndTouchesEveryUnit) {
  const ToyModel m = build_toy_model(kQuantSpec);
  const std::vector<std::uint32_t> toks{5, 6, 7};
  const auto sizes = subblock_storage_bytes(kQuantSpec);
  std::vector<std::uint64_t> sb;
  for (int l = 0; l < 4; ++l) sb.insert(sb.end(), sizes.begin(), sizes.end());
  const auto units = pmi_clusters(cyclic_trace(4, 1), 0.1, sb);
  const auto unit_of = unit_index(units, sb.size());
  Pager pager(units, TierConfig{2 * (sizes[0] + sizes[1]), 4 * (sizes[0] + sizes[1])});
  RunOptions opt;
  opt.pager = &pager;
  opt.unit_of_subblock = unit_of;
  const PlanRun r = run_plan(m, full_plan(4, Mode::kPaged, Precision::kW4A8), toks, opt);
  EXPECT_EQ(r.divergence, 0.0);
  EXPECT_EQ(pager.stats().accesses(), 3u * 4u * 2u);
  EXPECT_EQ(pager.check_invariants(), "");
}

TEST(RunPlan, SkippedLayersAreIdentity) {
  const ToyModel m = build_toy_model(kQuantSpec);
  const std::vector<std::uint32_t> toks{9, 8, 7, 6};
  ModePlan plan = full_plan(4, Mode::kHotOnly, Precision::kW4A16);
  plan.active_layers = {1, 3};
  EXPECT_EQ(plan_forward(m, plan, toks), forward(m, toks, plan.active_layers).hidden);
  EXPECT_GT(run_plan(m, plan, toks).divergence, 0.0);
}

TEST(RunPlan, MismatchedPlansAreRejected) {
  const ToyModel m = build_toy_model(kQuantSpec);
  const std::vector<std::uint32_t> toks{1};
  EXPECT_EQ(code_of([&] { run_plan(m, full_plan(3, Mode::kHotOnly, Precision::kW4A8), toks); }),
            ErrorCode::kShapeMismatch);
  ModePlan p = full_plan(4, Mode::kHotOnly, Precision::kW4A8);
  p.active_layers = {0, 4};
  EXPECT_EQ(code_of([&] { run_plan(m, p, toks); }), ErrorCode::kOutOfRange);
  p.active_layers = {2, 1};
  EXPECT_EQ(code_of([&] { run_plan(m, p, toks); }), ErrorCode::kInvalidArgument);
}

TEST(CosineDivergence, Basics) {
  Matrix a(2, 3), b(2, 3);
  a.data = {1, 0, 0, 0, 1, 0};
  b.data = {0, 1, 0, 0, 1, 0};
  EXPECT_DOUBLE_EQ(cosine_divergence(a, b), 0.5);
  EXPECT_EQ(cosine_divergence(a, a), 0.0);
  EXPECT_THROW(cosine_divergence(a, Matrix(3, 2)), Error);
}

// Per-op composition: for each quantized linear the W4A8 and W4A16 outputs
// differ by at most sum_c |w'_rc| * s_g / 2 (activation rounding only).
TEST(QuantizedLinear, W4A8DeviatesOnlyByActivationRounding) {
  const ToyModel m = build_toy_model(kQuantSpec);
  const QuantizedModel q = quantize_model(m);
  std::mt19937_64 rng(6);
  std::normal_distribution<float> n(0.0F, 1.0F);
  for (std::size_t l = 0; l < 4; ++l) {
    const LinearFn lin8 = quantized_linear(q.layers[l], Precision::kW4A8);
    const LinearFn lin16 = quantized_linear(q.layers[l], Precision::kW4A16);
    for (Slot s : kAllSlots) {
      const QuantMatrix& w = q.layers[l].w[static_cast<std::size_t>(s)];
      std::vector<float> x(w.cols), y8(w.rows), y16(w.rows);
      for (auto& v : x) v = n(rng);
      lin8(s, x, y8);
      lin16(s, x, y16);
      const auto groups = quantize_activations_q8(x);
      const Matrix wd = dequantize_matrix(w);
      for (std::size_t r = 0; r < w.rows; ++r) {
        double bound = 0.0, mag = 0.0;
        for (std::size_t c = 0; c < w.cols; ++c) {
          bound += std::fabs(wd.at(r, c)) * groups[c / 32].scale / 2.0;
          mag += std::fabs(wd.at(r, c) * x[c]);
        }
        EXPECT_LE(std::fabs(y8[r] - y16[r]), bound + 1e-5 * mag) << l << " " << r;
      }
    }
  }
}

TEST(QuantizedRun, W4A8AndW4A16StayClose) {
  const ToyModel m = build_toy_model(kQuantSpec);
  const auto calib = synthetic_calibration(48, 6, 2);
  RunOptions opt;
  opt.execution = Execution::kQuantized;
  const double d16 = plan_divergence(m, full_plan(4, Mode::kHotOnly, Precision::kW4A16), calib, opt);
  const double d8 = plan_divergence(m, full_plan(4, Mode::kHotOnly, Precision::kW4A8), calib, opt);
  EXPECT_GT(d16, 0.0);
  EXPECT_GT(d8, 0.0);
  EXPECT_LT(d16, 0.05);
  EXPECT_LT(d8, 0.05);
}

TEST(StorageBytes, Q4BlocksPlusBiases) {
  const ToyModel m = build_toy_model(kQuantSpec);
  // 4 (32x32) + 2 (64x32) + 1 (32x64), 18 bytes per 32 weights.
  const std::uint64_t per_layer = (4 * 32 * 32 + 3 * 64 * 32) / 32 * 18;
  EXPECT_EQ(layer_storage_bytes(m), std::vector<std::uint64_t>(4, per_layer));
  const auto sb = subblock_storage_bytes(kQuantSpec);
  EXPECT_EQ(sb[0] + sb[1], per_layer);
  EXPECT_EQ(sb[0], 4u * 32 * 32 / 32 * 18);
}

TEST(Sweep, ThresholdRowsFromProfile) {
  const std::vector<double> taus{0.0, 0.3, 0.7, 2.0};
  const auto rep = threshold_sweep(profile_from_scores(kTable3, 0.7), taus);
  ASSERT_EQ(rep.rows.size(), 4u);
  EXPECT_EQ(rep.setting_name, "tau");
  const std::vector<std::size_t> want{16, 6, 1, 0};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(rep.rows[i].w4a16_layers, want[i]);
    EXPECT_EQ(rep.rows[i].w4a16_layers + rep.rows[i].w4a8_layers, 16u);
  }
  EXPECT_THROW(threshold_sweep(profile_from_scores(kTable3, 0.7), std::vector<double>{0.3, 0.3}), Error);
  EXPECT_THROW(threshold_sweep(profile_from_scores(kTable3, 0.7), std::vector<double>{}), Error);
}

TEST(Sweep, FourBitRowIsTheUntruncatedPipeline) {
  const ToyModel m = build_toy_model(kQuantSpec);
  const auto calib = synthetic_calibration(48, 5, 3);
  const std::vector<int> bits{4};
  const auto rep = bpw_sweep(m, calib, bits);
  const auto p = profile(m, calib);
  ModePlan plan = full_plan(4, Mode::kHotOnly, Precision::kW4A8);
  plan.routes = route_layers(p, kDefaultTau);
  RunOptions opt;
  opt.execution = Execution::kQuantized;
  EXPECT_EQ(*rep.rows[0].divergence, plan_divergence(m, plan, calib, opt));
  EXPECT_EQ(*rep.rows[0].bpw, 4.5);
}

TEST(Sweep, TwoBitCodesDivergeMoreOnEverySeed) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const ToyModel m = build_toy_model({4, 32, 64, 4, 48, seed});
    const std::vector<int> bits{4, 2};
    const auto rep = bpw_sweep(m, synthetic_calibration(48, 4, seed + 7), bits);
    EXPECT_GT(*rep.rows[1].divergence, *rep.rows[0].divergence) << seed;
  }
}

TEST(Sweep, LayerSweepCountsAndEndpoints) {
  const ToyModel m = build_toy_model({8, 16, 32, 2, 32, 1});
  const std::vector<double> ratios{1.0, 0.75, 0.5, 0.25, 0.0};
  const auto rep = layer_sweep(m, synthetic_calibration(32, 4, 1), ratios);
  ASSERT_EQ(rep.rows.size(), 5u);
  EXPECT_EQ(rep.setting_name, "active_ratio");
  EXPECT_EQ(*rep.rows[0].divergence, 0.0);
  const std::vector<std::size_t> active{8, 6, 4, 2, 0};
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(rep.rows[i].active_layers, active[i]);
  EXPECT_EQ(rep.to_json()["rows"].size(), 5u);
}

}  // namespace
}  // namespace nve
