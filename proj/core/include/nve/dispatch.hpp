// Copyright (c) 2026, The NVE Authors
// SPDX-License-Identifier: Apache-2.0
//
// Plans: per-layer precision routes, the hot layer set under a byte budget,
// and the deployment mode.
//   A  paged      every layer runs, residency goes through the pager
//   B  hot-only   layers outside the hot set are identity on the residual
//   C  hot + AWQ  as B; the within-layer scaling is a flag only
// Quality is measured as hidden-state cosine divergence from the float
// all-layer baseline.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nve/canonical_json.hpp"
#include "nve/model.hpp"
#include "nve/pager.hpp"
#include "nve/profiler.hpp"
#include "nve/quant.hpp"

namespace nve {

enum class Mode : std::uint8_t { kPaged, kHotOnly, kHotAwq };
std::string_view mode_name(Mode m);  ///< "A_paged", "B_hot_only", "C_hot_awq"
/// Accepts the full names and the letters A, B, C.
std::optional<Mode> parse_mode(std::string_view name);

inline constexpr double kDefaultFloorRatio = 0.5;

struct ModePlan {
  Mode mode = Mode::kPaged;
  std::vector<std::size_t> active_layers;  ///< ascending
  std::vector<Precision> routes;           ///< one per layer
  std::uint64_t budget_bytes = 0;
  double active_ratio = 0.0;  ///< |hot set| / L
  double floor_ratio = kDefaultFloorRatio;
  bool awq_viable = false;

  std::size_t num_layers() const { return routes.size(); }
  Json to_json() const;
  friend bool operator==(const ModePlan&, const ModePlan&) = default;
};

/// W4A16 iff normalised score >= tau.
std::vector<Precision> route_layers(const ImportanceProfile& profile, double tau);

/// Greedy by descending score (ties to the lower index) while the running
/// byte total stays within budget; stops at the first layer that does not fit.
std::vector<std::size_t> hot_set(std::span<const double> scores, std::uint64_t budget_bytes,
                                 std::span<const std::uint64_t> per_layer_bytes);
std::vector<std::size_t> hot_set(const ImportanceProfile& profile, std::uint64_t budget_bytes,
                                 std::span<const std::uint64_t> per_layer_bytes);

/// ratio >= floor -> C if awq_viable else B; otherwise A.
Mode choose_mode(double active_ratio, bool awq_viable, double floor_ratio = kDefaultFloorRatio);

/// Builds a plan in a given mode. A forced C without awq_viable is rejected.
ModePlan make_plan(const ImportanceProfile& profile, Mode mode, std::uint64_t budget_bytes,
                   std::span<const std::uint64_t> per_layer_bytes, bool awq_viable,
                   double floor_ratio = kDefaultFloorRatio,
                   std::optional<double> tau = std::nullopt);

/// Routes use `tau`, or the profile's own tau when absent.
ModePlan select_mode(const ImportanceProfile& profile, std::uint64_t budget_bytes,
                     std::span<const std::uint64_t> per_layer_bytes, bool awq_viable,
                     double floor_ratio = kDefaultFloorRatio,
                     std::optional<double> tau = std::nullopt);

/// Q4_0 storage bytes of each layer's seven matrices (biases in f32).
std::vector<std::uint64_t> layer_storage_bytes(const ToyModel& model);
/// Q4_0 bytes of the attention (q, k, v, o) and FFN (gate, up, down) groups.
std::array<std::uint64_t, 2> subblock_storage_bytes(const ModelSpec& spec);

/// Q4_0 copy of every layer. Needs hidden_dim and ffn_dim divisible by 32.
struct QuantizedLayer {
  std::array<QuantMatrix, kNumSlots> w;
  std::array<std::optional<std::vector<float>>, kNumSlots> bias;
};
struct QuantizedModel {
  std::vector<QuantizedLayer> layers;
};
QuantizedModel quantize_model(const ToyModel& model, int code_bits = 4);

/// W4A16 dots the f32 input with dequantised weights; W4A8 quantises the
/// input per 32-group and uses the integer kernel. Biases are added in f32.
LinearFn quantized_linear(const QuantizedLayer& layer, Precision route);

enum class Execution : std::uint8_t {
  kReference,  ///< float weights; routes are labels only
  kQuantized,  ///< Q4_0 weights with per-layer activation route
};

struct RunOptions {
  Execution execution = Execution::kReference;
  int code_bits = 4;  ///< quantized execution only
  /// Mode A: every token touches each layer's attn then ffn unit.
  Pager* pager = nullptr;
  std::span<const std::size_t> unit_of_subblock = {};
};

struct PlanRun {
  Matrix hidden;    ///< final-norm hidden states of the plan run
  Matrix baseline;  ///< float all-layer run
  double divergence = 0.0;
};

/// Mean over tokens of (1 - cosine) between rows; rows that are bitwise
/// equal contribute exactly 0.
double cosine_divergence(const Matrix& a, const Matrix& b);

/// Forward pass with inactive layers as identity and a per-layer LinearFn.
Matrix plan_forward(const ToyModel& model, const ModePlan& plan,
                    std::span<const std::uint32_t> tokens, const RunOptions& options = {},
                    const QuantizedModel* quantized = nullptr);

/// Throws kShapeMismatch when the plan's layer count differs from the model,
/// kOutOfRange for active layers outside it.
PlanRun run_plan(const ToyModel& model, const ModePlan& plan,
                 std::span<const std::uint32_t> tokens, const RunOptions& options = {});

/// Mean divergence over the prompts of a calibration set.
double plan_divergence(const ToyModel& model, const ModePlan& plan, const CalibrationSet& prompts,
                       const RunOptions& options = {});

struct SweepRow {
  double setting = 0.0;
  std::size_t w4a16_layers = 0;
  std::size_t w4a8_layers = 0;
  std::size_t active_layers = 0;
  std::optional<double> bpw;
  std::optional<double> divergence;

  Json to_json() const;
};

struct SweepReport {
  std::string setting_name;  ///< "tau", "code_bits" or "active_ratio"
  std::vector<SweepRow> rows;

  Json to_json() const;
};

/// Profiles the model on `calib`, then for each tau runs the quantized
/// all-layer plan and records the route split and divergence. Settings must
/// be strictly monotone.
SweepReport threshold_sweep(const ToyModel& model, const CalibrationSet& calib,
                            std::span<const double> taus,
                            ScorerId scorer = ScorerId::kCombined);
/// Route split only, from an existing profile.
SweepReport threshold_sweep(const ImportanceProfile& profile, std::span<const double> taus);

/// Code-bit truncation stand-in for bits-per-weight: each setting b in [1, 4]
/// keeps 2^b code levels; storage bpw is reported as b + 0.5.
SweepReport bpw_sweep(const ToyModel& model, const CalibrationSet& calib,
                      std::span<const int> code_bits, double tau = kDefaultTau,
                      ScorerId scorer = ScorerId::kCombined);

/// Keeps the round(ratio * L) top-scored layers active (float weights).
SweepReport layer_sweep(const ToyModel& model, const CalibrationSet& calib,
                        std::span<const double> active_ratios,
                        ScorerId scorer = ScorerId::kCombined);

}  // namespace nve
