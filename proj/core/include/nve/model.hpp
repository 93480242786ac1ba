// Copyright (c) 2026, The NVE Authors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic toy decoder-only transformer. Pre-norm blocks:
//   x += O * attn(Q h, K h, V h),  h = rmsnorm(x)
//   x += Down * (silu(Gate h2) * (Up h2)),  h2 = rmsnorm(x)
// Every weight element is addressable from (seed, layer, slot, index), so two
// builds of the same spec are bit-identical regardless of generation order.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nve {

inline constexpr float kRmsNormEps = 1e-5F;

struct ModelSpec {
  std::size_t num_layers = 0;
  std::size_t hidden_dim = 0;
  std::size_t ffn_dim = 0;
  std::size_t num_heads = 1;
  std::size_t vocab_size = 0;
  std::uint64_t seed = 0;

  /// Throws nve::Error(kInvalidArgument) naming the violated constraint.
  void validate() const;
  std::size_t head_dim() const { return hidden_dim / num_heads; }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

enum class Slot : std::uint8_t { kQ = 0, kK, kV, kO, kGate, kUp, kDown };
inline constexpr std::size_t kNumSlots = 7;
inline constexpr std::array<Slot, kNumSlots> kAllSlots = {
    Slot::kQ, Slot::kK, Slot::kV, Slot::kO, Slot::kGate, Slot::kUp, Slot::kDown};

std::string_view slot_name(Slot slot);
/// Accepts q,k,v,o,gate,up,down; "ffn" is an alias for the down projection
/// (the FFN output matrix, so scaling it scales the FFN update exactly).
std::optional<Slot> parse_slot(std::string_view name);

/// Dense row-major matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0F) {}

  std::span<float> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const float> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
  float& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  float at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

Matrix transpose(const Matrix& m);

/// y = W x, accumulated in float, column order fixed.
void matvec(const Matrix& w, std::span<const float> x, std::span<float> y);

/// Canonical (out x in) shape of a slot.
std::pair<std::size_t, std::size_t> slot_shape(const ModelSpec& spec, Slot slot);

struct LayerWeights {
  std::array<Matrix, kNumSlots> w;
  std::array<std::optional<std::vector<float>>, kNumSlots> bias;

  Matrix& operator[](Slot s) { return w[static_cast<std::size_t>(s)]; }
  const Matrix& operator[](Slot s) const { return w[static_cast<std::size_t>(s)]; }
  const std::optional<std::vector<float>>& bias_of(Slot s) const {
    return bias[static_cast<std::size_t>(s)];
  }

  friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

/// Uniform draw in [-bound, bound] addressed by (seed, layer, slot, index).
float counter_uniform(std::uint64_t seed, std::uint64_t layer, std::uint64_t slot,
                      std::uint64_t index, float bound);

class ToyModel {
 public:
  /// Validates spec and every weight shape.
  ToyModel(ModelSpec spec, Matrix embedding, std::vector<LayerWeights> layers);

  const ModelSpec& spec() const { return spec_; }
  const Matrix& embedding() const { return embedding_; }
  const LayerWeights& layer(std::size_t i) const { return layers_.at(i); }
  std::span<const LayerWeights> layers() const { return layers_; }
  std::size_t num_layers() const { return layers_.size(); }

  friend bool operator==(const ToyModel&, const ToyModel&) = default;

 private:
  ModelSpec spec_;
  Matrix embedding_;
  std::vector<LayerWeights> layers_;
};

ToyModel build_toy_model(const ModelSpec& spec);

/// Copy of `model` with one slot of one layer multiplied by `factor` (>= 0).
ToyModel inject_outlier(const ToyModel& model, std::size_t layer, Slot slot, float factor);

/// Per-layer activations recorded during a forward pass. Rows are tokens.
struct LayerTaps {
  std::size_t layer = 0;
  Matrix input;    ///< residual stream entering the layer (pre-norm)
  Matrix q;        ///< Q projection of the normalised input
  Matrix v;        ///< V projection of the normalised input
  Matrix ffn_out;  ///< FFN update added to the residual stream
};

struct ForwardResult {
  Matrix hidden;  ///< final-norm hidden states, tokens x hidden_dim
  std::vector<LayerTaps> taps;
};

/// Linear map for one slot of the current layer: out = W_slot * in (+ bias).
/// Lets the quantized execution path reuse the exact block structure.
using LinearFn = std::function<void(Slot, std::span<const float>, std::span<float>)>;

/// Float linear map over a layer's weights, including biases.
LinearFn float_linear(const LayerWeights& weights);

/// Embedding lookup; throws kOutOfRange on token ids >= vocab_size or an
/// empty sequence.
Matrix embed(const ToyModel& model, std::span<const std::uint32_t> tokens);

/// Runs one block over `hidden` (tokens x d) in place.
void run_layer(const ModelSpec& spec, const LinearFn& linear, Matrix& hidden,
               LayerTaps* taps = nullptr);

void rms_norm(std::span<const float> x, std::span<float> y, float eps = kRmsNormEps);
Matrix final_norm(const Matrix& hidden);

/// Full forward pass. Layers not in `active_layers` are identity on the
/// residual stream and produce no taps.
ForwardResult forward(const ToyModel& model, std::span<const std::uint32_t> tokens,
                      const std::optional<std::vector<std::size_t>>& active_layers = std::nullopt,
                      bool record_taps = true);

}  // namespace nve
