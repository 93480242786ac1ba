// Copyright (c) 2026, The NVE Authors
// SPDX-License-Identifier: Apache-2.0

#include "nve/weights.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "nve/canonical_json.hpp"
#include "nve/error.hpp"
#include "nve/spec_json.hpp"

namespace nve {

namespace {

constexpr char kWeightMagic[] = "NVEW1";
constexpr std::size_t kMagicLen = 5;

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ")";
  return os.str();
}

[[noreturn]] void shape_error(const RawTensor& t, const std::string& expected) {
  throw Error(ErrorCode::kShapeMismatch, "tensor '" + t.name + "' has shape " +
                                             shape_str(t.shape) + ", expected " + expected);
}

Matrix as_matrix(const RawTensor& t) {
  Matrix m(t.shape[0], t.shape[1]);
  m.data = t.data;
  return m;
}

/// Canonical (out x in) matrix from a 2-D tensor, undoing Conv1D storage.
Matrix oriented(const RawTensor& t, std::size_t out, std::size_t in) {
  if (t.shape.size() != 2) shape_error(t, "a 2-D tensor");
  if (t.layout == Layout::kConv1dTransposed) {
    if (t.shape[0] != in || t.shape[1] != out) {
      shape_error(t, "(" + std::to_string(in) + "x" + std::to_string(out) + ") conv1d storage");
    }
    return transpose(as_matrix(t));
  }
  if (t.shape[0] != out || t.shape[1] != in) {
    shape_error(t, "(" + std::to_string(out) + "x" + std::to_string(in) + ")");
  }
  return as_matrix(t);
}

Matrix row_block(const Matrix& m, std::size_t begin, std::size_t count) {
  Matrix out(count, m.cols);
  std::copy_n(m.data.begin() + static_cast<std::ptrdiff_t>(begin * m.cols), count * m.cols,
              out.data.begin());
  return out;
}

std::vector<float> bias_vector(const RawTensor& t, std::size_t len) {
  if (t.shape.size() != 1 || t.shape[0] != len) {
    shape_error(t, "(" + std::to_string(len) + ")");
  }
  return t.data;
}

std::vector<float> slice(const std::vector<float>& v, std::size_t begin, std::size_t count) {
  return {v.begin() + static_cast<std::ptrdiff_t>(begin),
          v.begin() + static_cast<std::ptrdiff_t>(begin + count)};
}

}  // namespace

std::string_view layout_name(Layout layout) {
  switch (layout) {
    case Layout::kPlain: return "plain";
    case Layout::kFusedQkv: return "fused-qkv";
    case Layout::kFusedGateUp: return "fused-gate-up";
    case Layout::kConv1dTransposed: return "conv1d-transposed";
  }
  return "?";
}

std::optional<Layout> parse_layout(std::string_view name) {
  for (Layout l : {Layout::kPlain, Layout::kFusedQkv, Layout::kFusedGateUp,
                   Layout::kConv1dTransposed}) {
    if (layout_name(l) == name) return l;
  }
  return std::nullopt;
}

std::size_t RawTensor::element_count() const {
  std::size_t n = 1;
  for (std::size_t s : shape) n *= s;
  return n;
}

const RawTensor* RawWeightContainer::find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

GenericBlockWeights normalize_weights(const RawWeightContainer& raw, const ModelSpec& spec) {
  spec.validate();
  const std::size_t d = spec.hidden_dim;
  const std::size_t f = spec.ffn_dim;

  std::map<std::string, const RawTensor*, std::less<>> by_name;
  for (const auto& t : raw.tensors) {
    if (t.element_count() != t.data.size()) {
      throw Error(ErrorCode::kShapeMismatch,
                  "tensor '" + t.name + "' element count " + std::to_string(t.data.size()) +
                      " != product of shape " + shape_str(t.shape));
    }
    if (!by_name.emplace(t.name, &t).second) {
      throw Error(ErrorCode::kInvalidArgument, "duplicate tensor '" + t.name + "'");
    }
  }
  auto get = [&](const std::string& name) -> const RawTensor* {
    auto it = by_name.find(name);
    return it == by_name.end() ? nullptr : it->second;
  };

  GenericBlockWeights out;
  out.layers.resize(spec.num_layers);
  for (std::size_t i = 0; i < spec.num_layers; ++i) {
    const std::string prefix = "layers." + std::to_string(i) + ".";
    LayerWeights& lw = out.layers[i];

    auto check_fusion_tag = [](const RawTensor& t, Layout fused) {
      if (t.layout != fused && t.layout != Layout::kConv1dTransposed) {
        throw Error(ErrorCode::kInvalidArgument,
                    "tensor '" + t.name + "' must be tagged " + std::string(layout_name(fused)) +
                        " or conv1d-transposed");
      }
    };
    auto check_plain_tag = [](const RawTensor& t) {
      if (t.layout == Layout::kFusedQkv || t.layout == Layout::kFusedGateUp) {
        throw Error(ErrorCode::kInvalidArgument,
                    "tensor '" + t.name + "' carries fused layout tag " +
                        std::string(layout_name(t.layout)) + " but is not a fused tensor");
      }
    };

    // Attention projections: fused qkv or separate q/k/v.
    if (const RawTensor* qkv = get(prefix + "qkv")) {
      check_fusion_tag(*qkv, Layout::kFusedQkv);
      for (const char* s : {"q", "k", "v"}) {
        if (get(prefix + s)) {
          throw Error(ErrorCode::kInvalidArgument,
                      "layer " + std::to_string(i) + " has both fused qkv and separate " + s);
        }
      }
      const Matrix fused = oriented(*qkv, 3 * d, d);
      lw[Slot::kQ] = row_block(fused, 0, d);
      lw[Slot::kK] = row_block(fused, d, d);
      lw[Slot::kV] = row_block(fused, 2 * d, d);
      if (const RawTensor* b = get(prefix + "qkv.bias")) {
        const auto bias = bias_vector(*b, 3 * d);
        lw.bias[0] = slice(bias, 0, d);
        lw.bias[1] = slice(bias, d, d);
        lw.bias[2] = slice(bias, 2 * d, d);
      }
    }
    // FFN gate/up: fused gate_up or separate.
    if (const RawTensor* gu = get(prefix + "gate_up")) {
      check_fusion_tag(*gu, Layout::kFusedGateUp);
      for (const char* s : {"gate", "up"}) {
        if (get(prefix + s)) {
          throw Error(ErrorCode::kInvalidArgument, "layer " + std::to_string(i) +
                                                       " has both fused gate_up and separate " +
                                                       s);
        }
      }
      const Matrix fused = oriented(*gu, 2 * f, d);
      lw[Slot::kGate] = row_block(fused, 0, f);
      lw[Slot::kUp] = row_block(fused, f, f);
      if (const RawTensor* b = get(prefix + "gate_up.bias")) {
        const auto bias = bias_vector(*b, 2 * f);
        lw.bias[static_cast<std::size_t>(Slot::kGate)] = slice(bias, 0, f);
        lw.bias[static_cast<std::size_t>(Slot::kUp)] = slice(bias, f, f);
      }
    }

    for (Slot s : kAllSlots) {
      const std::string name = prefix + std::string(slot_name(s));
      const RawTensor* t = get(name);
      Matrix& dst = lw[s];
      if (t == nullptr) {
        if (dst.data.empty()) {
          throw Error(ErrorCode::kMissingSlot, "missing tensor '" + name + "'");
        }
        continue;
      }
      check_plain_tag(*t);
      const auto [r, c] = slot_shape(spec, s);
      dst = oriented(*t, r, c);
      if (const RawTensor* b = get(name + ".bias")) {
        lw.bias[static_cast<std::size_t>(s)] = bias_vector(*b, r);
      }
    }
  }
  return out;
}

ToyModel model_from_container(const RawWeightContainer& raw, const ModelSpec& spec) {
  GenericBlockWeights blocks = normalize_weights(raw, spec);
  const RawTensor* emb = raw.find("embedding");
  if (emb == nullptr) throw Error(ErrorCode::kMissingSlot, "missing tensor 'embedding'");
  if (emb->shape.size() != 2 || emb->shape[0] != spec.vocab_size ||
      emb->shape[1] != spec.hidden_dim) {
    shape_error(*emb, "(" + std::to_string(spec.vocab_size) + "x" +
                          std::to_string(spec.hidden_dim) + ")");
  }
  return ToyModel(spec, as_matrix(*emb), std::move(blocks.layers));
}

RawWeightContainer to_container(const ToyModel& model) {
  RawWeightContainer out;
  const Matrix& e = model.embedding();
  out.tensors.push_back({"embedding", {e.rows, e.cols}, Layout::kPlain, e.data});
  for (std::size_t i = 0; i < model.num_layers(); ++i) {
    const std::string prefix = "layers." + std::to_string(i) + ".";
    for (Slot s : kAllSlots) {
      const Matrix& m = model.layer(i)[s];
      const std::string name = prefix + std::string(slot_name(s));
      out.tensors.push_back({name, {m.rows, m.cols}, Layout::kPlain, m.data});
      if (const auto& b = model.layer(i).bias_of(s)) {
        out.tensors.push_back({name + ".bias", {b->size()}, Layout::kPlain, *b});
      }
    }
  }
  return out;
}

void write_weight_file(const std::filesystem::path& path, const RawWeightContainer& raw,
                       const ModelSpec& spec) {
  Json tensors = Json::array();
  for (const auto& t : raw.tensors) {
    if (t.element_count() != t.data.size()) {
      throw Error(ErrorCode::kShapeMismatch, "tensor '" + t.name + "' data/shape mismatch");
    }
    tensors.push_back({{"layout", std::string(layout_name(t.layout))},
                       {"name", t.name},
                       {"shape", t.shape}});
  }
  const Json header = {{"dtype", "f32"},
                       {"format", kWeightMagic},
                       {"spec", spec_to_json(spec)},
                       {"tensors", tensors}};
  const std::string text = canonical_dump(header);

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "' for writing");
  os.write(kWeightMagic, kMagicLen);
  const auto len = static_cast<std::uint32_t>(text.size());
  const unsigned char len_le[4] = {static_cast<unsigned char>(len),
                                   static_cast<unsigned char>(len >> 8),
                                   static_cast<unsigned char>(len >> 16),
                                   static_cast<unsigned char>(len >> 24)};
  os.write(reinterpret_cast<const char*>(len_le), 4);
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : raw.tensors) {
    for (float x : t.data) {
      const auto bits = std::bit_cast<std::uint32_t>(x);
      const unsigned char b[4] = {static_cast<unsigned char>(bits),
                                  static_cast<unsigned char>(bits >> 8),
                                  static_cast<unsigned char>(bits >> 16),
                                  static_cast<unsigned char>(bits >> 24)};
      os.write(reinterpret_cast<const char*>(b), 4);
    }
  }
  if (!os) throw Error(ErrorCode::kIo, "write failed for '" + path.string() + "'");
}

WeightFile read_weight_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::kIo, "cannot open weight file '" + path.string() + "'");
  char magic[kMagicLen];
  unsigned char len_le[4];
  if (!is.read(magic, kMagicLen) || std::memcmp(magic, kWeightMagic, kMagicLen) != 0) {
    throw Error(ErrorCode::kFormat, "'" + path.string() + "' is not an NVEW1 weight file");
  }
  if (!is.read(reinterpret_cast<char*>(len_le), 4)) {
    throw Error(ErrorCode::kFormat, "truncated NVEW1 header");
  }
  const std::uint32_t len = len_le[0] | (len_le[1] << 8) | (len_le[2] << 16) |
                            (static_cast<std::uint32_t>(len_le[3]) << 24);
  std::string text(len, '\0');
  if (!is.read(text.data(), len)) throw Error(ErrorCode::kFormat, "truncated NVEW1 header");

  const Json header = parse_json(text);
  WeightFile out;
  try {
    if (header.at("format") != kWeightMagic || header.at("dtype") != "f32") {
      throw Error(ErrorCode::kFormat, "unsupported NVEW1 header");
    }
    out.spec = spec_from_json(header.at("spec"));
    for (const auto& jt : header.at("tensors")) {
      RawTensor t;
      t.name = jt.at("name").get<std::string>();
      t.shape = jt.at("shape").get<std::vector<std::size_t>>();
      const auto layout = parse_layout(jt.at("layout").get<std::string>());
      if (!layout) throw Error(ErrorCode::kFormat, "unknown layout tag on '" + t.name + "'");
      t.layout = *layout;
      t.data.resize(t.element_count());
      out.container.tensors.push_back(std::move(t));
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("bad NVEW1 header: ") + e.what());
  }
  for (auto& t : out.container.tensors) {
    for (float& x : t.data) {
      unsigned char b[4];
      if (!is.read(reinterpret_cast<char*>(b), 4)) {
        throw Error(ErrorCode::kFormat, "truncated tensor data for '" + t.name + "'");
      }
      const std::uint32_t bits = b[0] | (b[1] << 8) | (b[2] << 16) |
                                 (static_cast<std::uint32_t>(b[3]) << 24);
      x = std::bit_cast<float>(bits);
    }
  }
  return out;
}

}  // namespace nve

