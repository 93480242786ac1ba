// Copyright (c) 2026, The NVE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "nve/canonical_json.hpp"
#include "nve/model.hpp"

namespace nve {

/// {ffn_dim, hidden_dim, num_heads, num_layers, rms_eps, seed, vocab_size}
Json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const Json& j);

/// SHA-256 of the canonical spec JSON.
std::string spec_digest(const ModelSpec& spec);

/// SHA-256 over the embedding and every layer's weights and biases, as
/// little-endian f32 in canonical slot order.
std::string weight_content_digest(const ToyModel& model);

/// Cache/profile identity: SHA-256 of {"spec": ..., "weights_sha256": ...}.
std::string architecture_key(const ToyModel& model);

}  // namespace nve
