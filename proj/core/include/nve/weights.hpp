// Copyright (c) 2026, The NVE Authors
// SPDX-License-Identifier: Apache-2.0
//
// Architecture-agnostic weight normalisation. Raw checkpoints come with fused
// projections and transposed Conv1D storage; everything downstream sees only
// the seven canonical per-layer slots in (out x in) orientation.
//
// Tensor naming inside a container:
//   embedding                      vocab x d
//   layers.<i>.<slot>[.bias]       slot in q,k,v,o,gate,up,down
//   layers.<i>.qkv[.bias]          fused Q/K/V, (3d x d), rows in Q,K,V order
//   layers.<i>.gate_up[.bias]      fused gate/up, (2f x d), gate rows first
// A conv1d-transposed tag means the matrix is stored (in x out); it may be
// combined with the fused names (GPT-2 style c_attn).

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nve/model.hpp"

namespace nve {

enum class Layout : std::uint8_t { kPlain, kFusedQkv, kFusedGateUp, kConv1dTransposed };

std::string_view layout_name(Layout layout);
std::optional<Layout> parse_layout(std::string_view name);

struct RawTensor {
  std::string name;
  std::vector<std::size_t> shape;
  Layout layout = Layout::kPlain;
  std::vector<float> data;

  std::size_t element_count() const;
};

struct RawWeightContainer {
  std::vector<RawTensor> tensors;

  const RawTensor* find(std::string_view name) const;
};

struct GenericBlockWeights {
  std::vector<LayerWeights> layers;
};

/// Splits fused tensors, transposes Conv1D storage and checks every shape.
/// Either returns all seven slots for every layer or throws (kShapeMismatch,
/// kMissingSlot, kInvalidArgument); never a partial result.
GenericBlockWeights normalize_weights(const RawWeightContainer& raw, const ModelSpec& spec);

/// Builds a model from a container that also carries an `embedding` tensor.
ToyModel model_from_container(const RawWeightContainer& raw, const ModelSpec& spec);

/// Exports a model as plain, canonical-slot tensors.
RawWeightContainer to_container(const ToyModel& model);

/// NVEW1 weight file: "NVEW1", u32 LE header length, canonical JSON header
/// {dtype, format, spec, tensors:[{layout,name,shape}]}, then little-endian f32
/// tensor data in header order.
void write_weight_file(const std::filesystem::path& path, const RawWeightContainer& raw,
                       const ModelSpec& spec);

struct WeightFile {
  ModelSpec spec;
  RawWeightContainer container;
};

WeightFile read_weight_file(const std::filesystem::path& path);

}  // namespace nve
