// Copyright (c) 2026, The NVE Authors
// SPDX-License-Identifier: Apache-2.0

#include "nve/spec_json.hpp"

#include <bit>
#include <cstdint>
#include <vector>

#include "nve/digest.hpp"
#include "nve/error.hpp"

namespace nve {

Json spec_to_json(const ModelSpec& spec) {
  return {{"ffn_dim", spec.ffn_dim},       {"hidden_dim", spec.hidden_dim},
          {"num_heads", spec.num_heads},   {"num_layers", spec.num_layers},
          {"rms_eps", static_cast<double>(kRmsNormEps)},
          {"seed", spec.seed},             {"vocab_size", spec.vocab_size}};
}

ModelSpec spec_from_json(const Json& j) {
  try {
    ModelSpec s;
    s.ffn_dim = j.at("ffn_dim").get<std::size_t>();
    s.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    s.num_heads = j.at("num_heads").get<std::size_t>();
    s.num_layers = j.at("num_layers").get<std::size_t>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.vocab_size = j.at("vocab_size").get<std::size_t>();
    if (j.contains("rms_eps") &&
        j.at("rms_eps").get<double>() != static_cast<double>(kRmsNormEps)) {
      throw Error(ErrorCode::kFormat, "unsupported rms_eps in model spec");
    }
    s.validate();
    return s;
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("bad model spec JSON: ") + e.what());
  }
}

std::string spec_digest(const ModelSpec& spec) {
  return sha256_hex(canonical_dump(spec_to_json(spec)));
}

namespace {

void hash_floats(Sha256& h, const std::vector<float>& v) {
  std::vector<unsigned char> buf(v.size() * 4);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(v[i]);
    buf[4 * i] = static_cast<unsigned char>(bits);
    buf[4 * i + 1] = static_cast<unsigned char>(bits >> 8);
    buf[4 * i + 2] = static_cast<unsigned char>(bits >> 16);
    buf[4 * i + 3] = static_cast<unsigned char>(bits >> 24);
  }
  h.update(buf.data(), buf.size());
}

}  // namespace

std::string weight_content_digest(const ToyModel& model) {
  Sha256 h;
  hash_floats(h, model.embedding().data);
  for (const auto& layer : model.layers()) {
    for (Slot s : kAllSlots) {
      hash_floats(h, layer[s].data);
      const auto& b = layer.bias_of(s);
      const unsigned char tag = b ? 1 : 0;
      h.update(&tag, 1);
      if (b) hash_floats(h, *b);
    }
  }
  return h.hex_digest();
}

std::string architecture_key(const ToyModel& model) {
  const Json j = {{"spec", spec_to_json(model.spec())},
                  {"weights_sha256", weight_content_digest(model)}};
  return sha256_hex(canonical_dump(j));
}

}  // namespace nve
