// Copyright (c) 2026, The NVE Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "nve/error.hpp"
#include "nve/profiler.hpp"
#include "nve/spec_json.hpp"
#include "test_support.hpp"

namespace nve {
namespace {

// Llama-3.2-1B per-layer normalised scores; L1 and L14 at the caption's
// three-digit values (0.699, 0.475).
const std::vector<double> kTable3 = {0.30, 0.699, 0.00, 0.07, 0.12, 0.08, 0.09, 0.03,
                                     0.07, 0.27,  0.19, 0.24, 0.32, 0.38, 0.475, 1.00};

std::size_t count_w4a16(const std::vector<Precision>& a) {
  return static_cast<std::size_t>(std::ranges::count(a, Precision::kW4A16));
}

TEST(Normalize, MinMaxByHand) {
  const std::vector<double> raw{2.0, 4.0, 3.0, 6.0};
  const auto n = minmax_normalize(raw, 1e-9);
  EXPECT_EQ(n, (std::vector<double>{0.0, 0.5, 0.25, 1.0}));
}

TEST(Normalize, DegenerateRangeGivesZerosForRandomConstants) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> val(-1e3, 1e3);
  std::uniform_real_distribution<double> log_eps(-12.0, 2.0);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng() % 40;
    const std::vector<double> raw(n, val(rng));
    const double eps = std::pow(10.0, log_eps(rng));
    const auto norm = minmax_normalize(raw, eps);
    EXPECT_TRUE(std::ranges::all_of(norm, [](double s) { return s == 0.0; }));
    const auto a = assign_precision(norm, kDefaultTau);
    EXPECT_EQ(count_w4a16(a), 0u);
  }
}

TEST(Normalize, SpreadBelowEpsilonIsDegenerate) {
  const auto n = minmax_normalize(std::vector<double>{1.0, 1.0 + 1e-12, 1.0}, 1e-9);
  EXPECT_EQ(n, (std::vector<double>{0.0, 0.0, 0.0}));
}

TEST(Normalize, EmptyIsRejected) {
  EXPECT_THROW(minmax_normalize(std::vector<double>{}, 1e-9), Error);
}

TEST(Assign, Table3Thresholds) {
  auto at = [](double tau) { return profile_from_scores(kTable3, tau).assignments; };
  const auto a07 = at(0.7);
  EXPECT_EQ(count_w4a16(a07), 1u);
  EXPECT_EQ(a07[15], Precision::kW4A16);
  EXPECT_EQ(count_w4a16(at(0.0)), 16u);
  EXPECT_EQ(count_w4a16(at(2.0)), 0u);
  // Counting the table's own scores >= 0.3: L0, L1, L12, L13, L14, L15.
  EXPECT_EQ(count_w4a16(at(0.3)), 6u);
}

TEST(Assign, MonotoneInTau) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> s(20);
  for (auto& x : s) x = u(rng);
  std::size_t prev = s.size() + 1;
  for (double tau = 0.0; tau <= 1.05; tau += 0.05) {
    const std::size_t c = count_w4a16(assign_precision(s, tau));
    EXPECT_LE(c, prev);
    prev = c;
  }
}

TEST(Precision, NamesRoundTrip) {
  EXPECT_EQ(parse_precision("W4A16"), Precision::kW4A16);
  EXPECT_EQ(parse_precision(precision_name(Precision::kW4A8)), Precision::kW4A8);
  for (auto id : {ScorerId::kCombined, ScorerId::kFfnOnly, ScorerId::kAttnOnly, ScorerId::kInputL2}) {
    EXPECT_EQ(parse_scorer(scorer_name(id)), id);
  }
  EXPECT_FALSE(parse_scorer("gptq").has_value());
}

/// Non-streaming reference: full forward per prompt, plain means.
std::vector<double> oracle_scores(const ToyModel& m, const CalibrationSet& calib) {
  std::vector<double> acc(m.num_layers(), 0.0);
  for (const auto& p : calib.prompts) {
    const auto r = forward(m, p.tokens);
    for (const auto& t : r.taps) {
      double s = 0.0;
      for (std::size_t i = 0; i < p.tokens.size(); ++i) {
        double qv = 0.0, f = 0.0;
        for (float x : t.q.row(i)) qv += static_cast<double>(x) * x;
        for (float x : t.v.row(i)) qv += static_cast<double>(x) * x;
        for (float x : t.ffn_out.row(i)) f += static_cast<double>(x) * x;
        s += std::sqrt(qv) + std::sqrt(f);
      }
      acc[t.layer] += s / static_cast<double>(p.tokens.size());
    }
  }
  for (auto& a : acc) a /= static_cast<double>(calib.size());
  return acc;
}

TEST(Profile, MatchesFullForwardOracle) {
  const ToyModel m = inject_outlier(build_toy_model({5, 16, 32, 2, 40, 21}), 1, Slot::kDown, 4.0F);
  const CalibrationSet calib = synthetic_calibration(40, 7, 3);
  const auto p = profile(m, calib);
  const auto want = oracle_scores(m, calib);
  ASSERT_EQ(p.raw_scores.size(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(p.raw_scores[i], want[i], 1e-12 * want[i]);
  EXPECT_EQ(p.prompt_count, 7u);
  EXPECT_EQ(p.architecture_key, architecture_key(m));
}

TEST(Profile, FfnOutlierOnLayerTwoRanksFirst) {
  const ToyModel m = inject_outlier(build_toy_model({4, 8, 16, 2, 32, 7}), 2, Slot::kDown, 10.0F);
  const auto p = profile(m, synthetic_calibration(32, 12, 1));
  EXPECT_EQ(top_k(p.raw_scores, 1), (std::vector<std::size_t>{2}));
  EXPECT_EQ(p.normalized_scores[2], 1.0);
}

TEST(Profile, PromptOrderDoesNotChangeBits) {
  const ToyModel m = build_toy_model({3, 8, 16, 2, 32, 4});
  CalibrationSet calib = synthetic_calibration(32, 9, 2);
  const auto a = profile(m, calib);
  std::ranges::reverse(calib.prompts);
  std::swap(calib.prompts[1], calib.prompts[5]);
  EXPECT_EQ(profile(m, calib), a);
}

TEST(Profile, StreamingHoldsOneLayerAtATime) {
  const ToyModel m = build_toy_model({6, 16, 32, 2, 32, 8});
  ResidencyMeter meter;
  const auto run = profile_streaming(m, synthetic_calibration(32, 5, 1), {}, &meter);
  EXPECT_EQ(meter.peak(), 1);
  EXPECT_EQ(meter.current(), 0);
  EXPECT_EQ(meter.loads(), 6u);
  EXPECT_EQ(run.peak_resident_layers, 1);
  EXPECT_EQ(run.per_prompt.size(), 6u);
  EXPECT_EQ(run.per_prompt[0].size(), 5u);
}

TEST(Profile, ScorersAgreeWithTheirDefinitions) {
  const ToyModel m = build_toy_model({3, 8, 16, 2, 32, 12});
  const CalibrationSet calib = synthetic_calibration(32, 4, 9);
  const auto comb = profile(m, calib, ScorerId::kCombined).raw_scores;
  const auto ffn = profile(m, calib, ScorerId::kFfnOnly).raw_scores;
  const auto attn = profile(m, calib, ScorerId::kAttnOnly).raw_scores;
  const auto in = profile(m, calib, ScorerId::kInputL2).raw_scores;
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(comb[i], ffn[i] + attn[i], 1e-12 * comb[i]);
    EXPECT_NE(in[i], comb[i]);
  }
}

TEST(Profile, NonFiniteActivationNamesLayerAndPrompt) {
  const ToyModel m = inject_outlier(build_toy_model({3, 8, 16, 2, 32, 1}), 1, Slot::kUp, 3e38F);
  try {
    profile(m, synthetic_calibration(32, 3, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonFinite);
    const std::string what = e.what();
    EXPECT_NE(what.find("layer 1"), std::string::npos) << what;
    EXPECT_NE(what.find("prompt"), std::string::npos) << what;
  }
}

TEST(Profile, RejectsBadOptions) {
  const ToyModel m = build_toy_model({2, 8, 16, 2, 32, 1});
  EXPECT_THROW(profile(m, CalibrationSet{}), Error);
  EXPECT_THROW(profile(m, synthetic_calibration(32, 2, 1), ScorerId::kCombined, -0.1), Error);
  EXPECT_THROW(profile(m, synthetic_calibration(32, 2, 1), ScorerId::kCombined, 0.7, 0.0), Error);
}

TEST(Calibration, ValidateAndRoundTrip) {
  test::TempDir dir("calib");
  CalibrationSet c = synthetic_calibration(50, 6, 4);
  for (const auto& p : c.prompts) {
    EXPECT_GE(p.tokens.size(), 6u);
    EXPECT_LE(p.tokens.size(), 12u);
  }
  save_calibration(dir / "c.json", c);
  const CalibrationSet back = load_calibration(dir / "c.json");
  ASSERT_EQ(back.size(), c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    EXPECT_EQ(back.prompts[i].tokens, c.prompts[i].tokens);
    EXPECT_EQ(back.prompts[i].domain, c.prompts[i].domain);
  }
  EXPECT_NO_THROW(back.validate(50));
  EXPECT_THROW(back.validate(5), Error);
  c.prompts[2].tokens.clear();
  EXPECT_THROW(c.validate(50), Error);
  EXPECT_THROW(load_calibration(dir / "absent.json"), Error);
}

TEST(Ranking, TopKTiesGoToLowerIndex) {
  const std::vector<double> s{0.5, 0.9, 0.9, 0.1};
  EXPECT_EQ(top_k(s, 2), (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(top_k(s, 1), (std::vector<std::size_t>{1}));
  EXPECT_EQ(top_k(s, 0), (std::vector<std::size_t>{}));
}

TEST(Ranking, SpearmanByHand) {
  // 1 - 6 * sum d^2 / (n (n^2 - 1)) with d = (0, 1, 1, 0): 1 - 12 / 60.
  EXPECT_NEAR(spearman(std::vector<double>{1, 2, 3, 4}, std::vector<double>{1, 3, 2, 4}), 0.8, 1e-15);
  EXPECT_NEAR(spearman(std::vector<double>{1, 2, 3}, std::vector<double>{3, 2, 1}), -1.0, 1e-15);
  // Zero variance on both sides with identical ranks.
  EXPECT_EQ(spearman(std::vector<double>{2, 2, 2}, std::vector<double>{5, 5, 5}), 1.0);
  EXPECT_EQ(spearman(std::vector<double>{2, 2, 2}, std::vector<double>{1, 5, 5}), 0.0);
}

TEST(Ranking, SpearmanWithTiesUsesAverageRanks) {
  // ranks a = (1, 2.5, 2.5, 4), b = (1, 2, 3, 4); Pearson on ranks.
  const std::vector<double> ra{1, 2.5, 2.5, 4}, rb{1, 2, 3, 4};
  const double ma = 2.5, mb = 2.5;
  double sab = 0, saa = 0, sbb = 0;
  for (int i = 0; i < 4; ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  EXPECT_NEAR(spearman(std::vector<double>{0.1, 0.5, 0.5, 0.9}, std::vector<double>{1, 2, 3, 4}),
              sab / std::sqrt(saa * sbb), 1e-15);
}

TEST(Ranking, TopKOverlap) {
  EXPECT_EQ(topk_overlap(std::vector<double>{1, 5, 3, 4}, std::vector<double>{1, 5, 4, 3}, 2), 0.5);
  EXPECT_EQ(topk_overlap(std::vector<double>{1, 5, 3, 4}, std::vector<double>{0, 9, 1, 2}, 2), 1.0);
}

TEST(Ranking, SplitHalfStableOnStrongOutlier) {
  const ToyModel m = inject_outlier(build_toy_model({6, 16, 32, 2, 48, 30}), 4, Slot::kDown, 6.0F);
  EXPECT_EQ(split_half_overlap(m, synthetic_calibration(48, 12, 7), ScorerId::kCombined, 1), 1.0);
}

}  // namespace
}  // namespace nve
