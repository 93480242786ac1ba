// Copyright (c) 2026, The NVE Authors
// SPDX-License-Identifier: Apache-2.0
//
// Monte Carlo activation profiling. For every layer i the score is
//
//   s_i = mean_prompts( mean_tokens( ||[Q_i h_t, V_i h_t]|| + ||FFN_i(h_t)|| ) )
//
// followed by min-max normalisation (all zeros when max - min < epsilon) and a
// threshold split: normalised score >= tau runs W4A16, everything else W4A8.
//
// The profiler walks the network layer by layer against recorded inter-layer
// hidden states for all prompts, so at most one layer's weights are resident
// at any time. ResidencyMeter makes that observable.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nve/model.hpp"

namespace nve {

inline constexpr double kDefaultTau = 0.7;
inline constexpr double kDefaultEpsilon = 1e-9;
inline constexpr int kProfileFormatVersion = 1;

enum class ScorerId : std::uint8_t { kCombined, kFfnOnly, kAttnOnly, kInputL2 };
std::string_view scorer_name(ScorerId id);
std::optional<ScorerId> parse_scorer(std::string_view name);

enum class Precision : std::uint8_t { kW4A16, kW4A8 };
std::string_view precision_name(Precision p);
std::optional<Precision> parse_precision(std::string_view name);

struct CalibrationPrompt {
  std::vector<std::uint32_t> tokens;
  std::string domain;
};

struct CalibrationSet {
  std::vector<CalibrationPrompt> prompts;

  std::size_t size() const { return prompts.size(); }
  /// Throws if empty, if a prompt is empty, or a token id >= vocab_size.
  void validate(std::size_t vocab_size) const;
};

/// {"prompts":[{"domain":"science","tokens":[...]}, ...]}
CalibrationSet load_calibration(const std::filesystem::path& path);
void save_calibration(const std::filesystem::path& path, const CalibrationSet& calib);

/// Deterministic stand-in for a stratified prompt set: `count` prompts with
/// lengths cycling through [min_len, max_len], domains cycling through
/// science/code/history/math.
CalibrationSet synthetic_calibration(std::size_t vocab_size, std::size_t count,
                                     std::uint64_t seed, std::size_t min_len = 6,
                                     std::size_t max_len = 12);

struct ImportanceProfile {
  int format_version = kProfileFormatVersion;
  std::string architecture_key;
  ScorerId scorer_id = ScorerId::kCombined;
  std::size_t prompt_count = 0;
  double epsilon = kDefaultEpsilon;
  double tau = kDefaultTau;
  std::vector<double> raw_scores;
  std::vector<double> normalized_scores;
  std::vector<Precision> assignments;

  std::size_t num_layers() const { return raw_scores.size(); }
  friend bool operator==(const ImportanceProfile&, const ImportanceProfile&) = default;
};

/// Euclidean norm of the concatenation [q, v].
double attn_proxy(std::span<const float> q, std::span<const float> v);
/// Euclidean norm of the FFN output.
double ffn_magnitude(std::span<const float> ffn_out);

std::vector<double> minmax_normalize(std::span<const double> scores, double epsilon);
std::vector<Precision> assign_precision(std::span<const double> normalized, double tau);

/// Builds a profile from already-aggregated raw scores (normalise + assign).
ImportanceProfile profile_from_scores(std::vector<double> raw_scores, double tau,
                                      double epsilon = kDefaultEpsilon,
                                      ScorerId scorer = ScorerId::kCombined,
                                      std::size_t prompt_count = 0,
                                      std::string architecture_key = {});

/// Counts layer weight buffers that are resident at the same time.
class ResidencyMeter {
 public:
  void acquire();
  void release();
  int current() const { return current_; }
  int peak() const { return peak_; }
  std::size_t loads() const { return loads_; }

 private:
  int current_ = 0;
  int peak_ = 0;
  std::size_t loads_ = 0;
};

/// Working copy of one layer's weights, registered with a meter while alive.
class ResidentLayer {
 public:
  ResidentLayer(const LayerWeights& source, ResidencyMeter& meter);
  ~ResidentLayer();
  ResidentLayer(const ResidentLayer&) = delete;
  ResidentLayer& operator=(const ResidentLayer&) = delete;

  const LayerWeights& weights() const { return weights_; }

 private:
  LayerWeights weights_;
  ResidencyMeter& meter_;
};

struct ProfileOptions {
  ScorerId scorer = ScorerId::kCombined;
  double tau = kDefaultTau;
  double epsilon = kDefaultEpsilon;
};

struct ProfileRun {
  ImportanceProfile profile;
  /// per_prompt[i][j]: token-mean statistic of layer i on prompt j.
  std::vector<std::vector<double>> per_prompt;
  int peak_resident_layers = 0;
  std::size_t layer_loads = 0;
};

/// Throws kInvalidArgument for an empty calibration set or tau < 0 /
/// epsilon <= 0, and kNonFinite naming layer and prompt on NaN/Inf.
ProfileRun profile_streaming(const ToyModel& model, const CalibrationSet& calib,
                             const ProfileOptions& options, ResidencyMeter* meter = nullptr);

ImportanceProfile profile(const ToyModel& model, const CalibrationSet& calib,
                          ScorerId scorer = ScorerId::kCombined, double tau = kDefaultTau,
                          double epsilon = kDefaultEpsilon);

/// Indices of the k largest scores (k may be 0); ties go to the lower index.
std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k);

double topk_overlap(std::span<const double> a, std::span<const double> b, std::size_t k);
double topk_overlap(const ImportanceProfile& a, const ImportanceProfile& b, std::size_t k);

/// Rank correlation with average ranks for ties. When either side has zero
/// rank variance the coefficient is undefined; returns 1 if the rank vectors
/// are identical and 0 otherwise.
double spearman(std::span<const double> a, std::span<const double> b);
double spearman(const ImportanceProfile& a, const ImportanceProfile& b);

/// Profiles even-indexed and odd-indexed prompts separately and returns the
/// fraction of shared top-k layers (on raw scores).
double split_half_overlap(const ToyModel& model, const CalibrationSet& calib, ScorerId scorer,
                          std::size_t k);

}  // namespace nve
