// Copyright (c) 2026, The NVE Authors
// SPDX-License-Identifier: Apache-2.0

#include "nve/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "nve/error.hpp"

namespace nve {

namespace {

constexpr std::uint64_t kEmbeddingLayer = 0xFFFF'FFFFULL;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::kInvalidArgument, "invalid ModelSpec: " + what);
}

float fan_in_bound(std::size_t fan_in) {
  return 1.0F / std::sqrt(static_cast<float>(fan_in));
}

}  // namespace

void ModelSpec::validate() const {
  require(num_layers >= 1, "num_layers must be >= 1");
  require(hidden_dim >= 1, "hidden_dim must be >= 1");
  require(ffn_dim >= 1, "ffn_dim must be >= 1");
  require(num_heads >= 1, "num_heads must be >= 1");
  require(vocab_size >= 1, "vocab_size must be >= 1");
  require(hidden_dim % num_heads == 0, "hidden_dim % num_heads == 0");
}

std::string_view slot_name(Slot slot) {
  switch (slot) {
    case Slot::kQ: return "q";
    case Slot::kK: return "k";
    case Slot::kV: return "v";
    case Slot::kO: return "o";
    case Slot::kGate: return "gate";
    case Slot::kUp: return "up";
    case Slot::kDown: return "down";
  }
  return "?";
}

std::optional<Slot> parse_slot(std::string_view name) {
  for (Slot s : kAllSlots) {
    if (slot_name(s) == name) return s;
  }
  if (name == "ffn") return Slot::kDown;
  return std::nullopt;
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols, m.rows);
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) t.at(j, i) = m.at(i, j);
  }
  return t;
}

void matvec(const Matrix& w, std::span<const float> x, std::span<float> y) {
  for (std::size_t i = 0; i < w.rows; ++i) {
    const float* row = w.data.data() + i * w.cols;
    float acc = 0.0F;
    for (std::size_t j = 0; j < w.cols; ++j) acc += row[j] * x[j];
    y[i] = acc;
  }
}

std::pair<std::size_t, std::size_t> slot_shape(const ModelSpec& spec, Slot slot) {
  const std::size_t d = spec.hidden_dim;
  switch (slot) {
    case Slot::kGate:
    case Slot::kUp: return {spec.ffn_dim, d};
    case Slot::kDown: return {d, spec.ffn_dim};
    default: return {d, d};
  }
}

float counter_uniform(std::uint64_t seed, std::uint64_t layer, std::uint64_t slot,
                      std::uint64_t index, float bound) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ layer);
  h = splitmix64(h ^ (slot << 32));
  h = splitmix64(h ^ index);
  // 24 random bits -> u in [0, 1); 2u - 1 is exact in float.
  const float u = static_cast<float>(h >> 40) * 0x1p-24F;
  return (2.0F * u - 1.0F) * bound;
}

ToyModel::ToyModel(ModelSpec spec, Matrix embedding, std::vector<LayerWeights> layers)
    : spec_(spec), embedding_(std::move(embedding)), layers_(std::move(layers)) {
  spec_.validate();
  if (embedding_.rows != spec_.vocab_size || embedding_.cols != spec_.hidden_dim) {
    throw Error(ErrorCode::kShapeMismatch, "embedding must be vocab_size x hidden_dim");
  }
  if (layers_.size() != spec_.num_layers) {
    throw Error(ErrorCode::kShapeMismatch, "layer count does not match num_layers");
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (Slot s : kAllSlots) {
      const auto [r, c] = slot_shape(spec_, s);
      const Matrix& m = layers_[i][s];
      if (m.rows != r || m.cols != c || m.data.size() != r * c) {
        std::ostringstream os;
        os << "layers." << i << "." << slot_name(s) << " expected shape (" << r << "x" << c
           << "), got (" << m.rows << "x" << m.cols << ")";
        throw Error(ErrorCode::kShapeMismatch, os.str());
      }
      const auto& b = layers_[i].bias_of(s);
      if (b && b->size() != r) {
        std::ostringstream os;
        os << "layers." << i << "." << slot_name(s) << ".bias expected length " << r;
        throw Error(ErrorCode::kShapeMismatch, os.str());
      }
    }
  }
}

ToyModel build_toy_model(const ModelSpec& spec) {
  spec.validate();
  const std::size_t d = spec.hidden_dim;
  Matrix embedding(spec.vocab_size, d);
  // unit variance, like the usual N(0, 1) embedding table
  const float emb_bound = std::sqrt(3.0F);
  for (std::size_t i = 0; i < embedding.data.size(); ++i) {
    embedding.data[i] = counter_uniform(spec.seed, kEmbeddingLayer, 0, i, emb_bound);
  }
  std::vector<LayerWeights> layers(spec.num_layers);
  for (std::size_t l = 0; l < spec.num_layers; ++l) {
    for (Slot s : kAllSlots) {
      const auto [r, c] = slot_shape(spec, s);
      Matrix m(r, c);
      const float bound = fan_in_bound(c);
      for (std::size_t i = 0; i < m.data.size(); ++i) {
        m.data[i] = counter_uniform(spec.seed, l, static_cast<std::uint64_t>(s), i, bound);
      }
      layers[l][s] = std::move(m);
    }
  }
  return ToyModel(spec, std::move(embedding), std::move(layers));
}

ToyModel inject_outlier(const ToyModel& model, std::size_t layer, Slot slot, float factor) {
  if (layer >= model.num_layers()) {
    throw Error(ErrorCode::kOutOfRange, "inject_outlier: layer " + std::to_string(layer) +
                                            " >= num_layers " +
                                            std::to_string(model.num_layers()));
  }
  if (!(factor >= 0.0F) || !std::isfinite(factor)) {
    throw Error(ErrorCode::kInvalidArgument, "inject_outlier: factor must be finite and >= 0");
  }
  std::vector<LayerWeights> layers(model.layers().begin(), model.layers().end());
  for (float& x : layers[layer][slot].data) x *= factor;
  auto& bias = layers[layer].bias[static_cast<std::size_t>(slot)];
  if (bias) {
    for (float& x : *bias) x *= factor;
  }
  return ToyModel(model.spec(), model.embedding(), std::move(layers));
}

LinearFn float_linear(const LayerWeights& weights) {
  return [&weights](Slot s, std::span<const float> in, std::span<float> out) {
    matvec(weights[s], in, out);
    if (const auto& b = weights.bias_of(s)) {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += (*b)[i];
    }
  };
}

Matrix embed(const ToyModel& model, std::span<const std::uint32_t> tokens) {
  if (tokens.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "token sequence must be non-empty");
  }
  const ModelSpec& spec = model.spec();
  Matrix x(tokens.size(), spec.hidden_dim);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t] >= spec.vocab_size) {
      throw Error(ErrorCode::kOutOfRange, "token id " + std::to_string(tokens[t]) +
                                              " at position " + std::to_string(t) +
                                              " >= vocab_size " +
                                              std::to_string(spec.vocab_size));
    }
    std::ranges::copy(model.embedding().row(tokens[t]), x.row(t).begin());
  }
  return x;
}

void rms_norm(std::span<const float> x, std::span<float> y, float eps) {
  float ss = 0.0F;
  for (float v : x) ss += v * v;
  const float inv = 1.0F / std::sqrt(ss / static_cast<float>(x.size()) + eps);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * inv;
}

Matrix final_norm(const Matrix& hidden) {
  Matrix out(hidden.rows, hidden.cols);
  for (std::size_t t = 0; t < hidden.rows; ++t) rms_norm(hidden.row(t), out.row(t));
  return out;
}

void run_layer(const ModelSpec& spec, const LinearFn& linear, Matrix& hidden, LayerTaps* taps) {
  const std::size_t n = hidden.rows;
  const std::size_t d = spec.hidden_dim;
  const std::size_t heads = spec.num_heads;
  const std::size_t hd = spec.head_dim();

  if (taps != nullptr) taps->input = hidden;

  Matrix q(n, d), k(n, d), v(n, d);
  std::vector<float> h(d);
  for (std::size_t t = 0; t < n; ++t) {
    rms_norm(hidden.row(t), h);
    linear(Slot::kQ, h, q.row(t));
    linear(Slot::kK, h, k.row(t));
    linear(Slot::kV, h, v.row(t));
  }

  // Causal multi-head attention over the token prefix.
  const float scale = 1.0F / std::sqrt(static_cast<float>(hd));
  std::vector<float> ctx(d), attn_out(d), scores(n);
  for (std::size_t t = 0; t < n; ++t) {
    std::ranges::fill(ctx, 0.0F);
    for (std::size_t hh = 0; hh < heads; ++hh) {
      const std::size_t off = hh * hd;
      float max_score = -INFINITY;
      for (std::size_t s = 0; s <= t; ++s) {
        float dot = 0.0F;
        for (std::size_t j = 0; j < hd; ++j) dot += q.at(t, off + j) * k.at(s, off + j);
        scores[s] = dot * scale;
        max_score = std::max(max_score, scores[s]);
      }
      float denom = 0.0F;
      for (std::size_t s = 0; s <= t; ++s) {
        scores[s] = std::exp(scores[s] - max_score);
        denom += scores[s];
      }
      for (std::size_t s = 0; s <= t; ++s) {
        const float p = scores[s] / denom;
        for (std::size_t j = 0; j < hd; ++j) ctx[off + j] += p * v.at(s, off + j);
      }
    }
    linear(Slot::kO, ctx, attn_out);
    auto row = hidden.row(t);
    for (std::size_t j = 0; j < d; ++j) row[j] += attn_out[j];
  }

  Matrix ffn_out(n, d);
  std::vector<float> gate(spec.ffn_dim), up(spec.ffn_dim);
  for (std::size_t t = 0; t < n; ++t) {
    rms_norm(hidden.row(t), h);
    linear(Slot::kGate, h, gate);
    linear(Slot::kUp, h, up);
    for (std::size_t j = 0; j < spec.ffn_dim; ++j) {
      const float g = gate[j];
      gate[j] = g / (1.0F + std::exp(-g)) * up[j];
    }
    linear(Slot::kDown, gate, ffn_out.row(t));
    auto row = hidden.row(t);
    for (std::size_t j = 0; j < d; ++j) row[j] += ffn_out.at(t, j);
  }

  if (taps != nullptr) {
    taps->q = std::move(q);
    taps->v = std::move(v);
    taps->ffn_out = std::move(ffn_out);
  }
}

ForwardResult forward(const ToyModel& model, std::span<const std::uint32_t> tokens,
                      const std::optional<std::vector<std::size_t>>& active_layers,
                      bool record_taps) {
  const std::size_t num_layers = model.num_layers();
  std::vector<bool> active(num_layers, !active_layers.has_value());
  if (active_layers) {
    for (std::size_t i : *active_layers) {
      if (i >= num_layers) {
        throw Error(ErrorCode::kOutOfRange, "active layer " + std::to_string(i) +
                                                " >= num_layers " + std::to_string(num_layers));
      }
      active[i] = true;
    }
  }

  ForwardResult result;
  Matrix hidden = embed(model, tokens);
  for (std::size_t i = 0; i < num_layers; ++i) {
    if (!active[i]) continue;
    LayerTaps taps;
    taps.layer = i;
    run_layer(model.spec(), float_linear(model.layer(i)), hidden,
              record_taps ? &taps : nullptr);
    if (record_taps) result.taps.push_back(std::move(taps));
  }
  result.hidden = final_norm(hidden);
  return result;
}

}  // namespace nve
