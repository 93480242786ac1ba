// Copyright (c) 2026, The NVE Authors
// SPDX-License-Identifier: Apache-2.0

#include "nve/quant.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "nve/error.hpp"

namespace nve {

std::uint16_t f32_to_f16_bits(float x) {
  return std::bit_cast<std::uint16_t>(Eigen::half(x));
}

float f16_bits_to_f32(std::uint16_t bits) {
  return static_cast<float>(std::bit_cast<Eigen::half>(bits));
}

void BlockQ4::set_code(std::size_t i, std::uint8_t c) {
  c &= 0x0F;
  if (i < 16) {
    qs[i] = static_cast<std::uint8_t>((qs[i] & 0xF0) | c);
  } else {
    qs[i - 16] = static_cast<std::uint8_t>((qs[i - 16] & 0x0F) | (c << 4));
  }
}

std::array<std::uint8_t, kQ4BlockBytes> BlockQ4::to_bytes() const {
  std::array<std::uint8_t, kQ4BlockBytes> out{};
  out[0] = static_cast<std::uint8_t>(d_bits & 0xFF);
  out[1] = static_cast<std::uint8_t>(d_bits >> 8);
  std::ranges::copy(qs, out.begin() + 2);
  return out;
}

BlockQ4 BlockQ4::from_bytes(std::span<const std::uint8_t, kQ4BlockBytes> bytes) {
  BlockQ4 b;
  b.d_bits = static_cast<std::uint16_t>(bytes[0] | (bytes[1] << 8));
  std::copy(bytes.begin() + 2, bytes.end(), b.qs.begin());
  return b;
}

namespace {

void require_finite(std::span<const float> x, const char* what) {
  for (float v : x) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kNonFinite, std::string(what) + ": non-finite input");
  }
}

std::uint16_t scale_bits(float d) {
  const std::uint16_t bits = f32_to_f16_bits(d);
  if (!std::isfinite(f16_bits_to_f32(bits))) {
    throw Error(ErrorCode::kOutOfRange, "quantize_q4_0: block scale overflows binary16");
  }
  return bits;
}

/// Codes for a given stored scale; returns false if any element needed
/// clamping into [0, 15].
bool encode_with(std::span<const float, kQkBlock> x, float d, BlockQ4& out) {
  bool clipped = false;
  for (std::size_t i = 0; i < kQkBlock; ++i) {
    const long q = std::lround(x[i] / d) + 8;
    if (q < 0 || q > 15) clipped = true;
    out.set_code(i, static_cast<std::uint8_t>(std::clamp(q, 0L, 15L)));
  }
  return !clipped;
}

/// Smallest binary16 magnitude >= v, for finite v > 0.
std::uint16_t f16_bits_round_up(float v) {
  std::uint16_t bits = f32_to_f16_bits(v);
  if (f16_bits_to_f32(bits) < v) ++bits;
  return bits;
}

}  // namespace

BlockQ4 quantize_q4_0(std::span<const float, kQkBlock> x) {
  require_finite(x, "quantize_q4_0");
  std::size_t imax = 0;
  for (std::size_t i = 1; i < kQkBlock; ++i) {
    if (std::fabs(x[i]) > std::fabs(x[imax])) imax = i;
  }
  const float m = x[imax];

  BlockQ4 out;
  out.qs.fill(0x88);  // all codes 8
  if (m == 0.0F) return out;

  out.d_bits = scale_bits(m / -8.0F);
  if (out.scale() != 0.0F && encode_with(x, out.scale(), out)) return out;

  // Opposite-sign elements would clip at +7: rescale so the largest of them
  // lands on +-7. Every code then lies in [1, 15], so the sign of d is free;
  // it is kept positive so re-quantising a dequantised block is a fixpoint.
  float o = 0.0F;
  for (float v : x) {
    if ((v > 0.0F) != (m > 0.0F)) o = std::max(o, std::fabs(v));
  }
  if (o > 0.0F) {
    out.d_bits = scale_bits(o / 7.0F);
    if (out.scale() != 0.0F && encode_with(x, out.scale(), out)) return out;
  }

  // Subnormal scales are too coarse for either rule. Take the covering scale
  // (one side within 7 steps, the other within 8) rounded up, so nothing clips.
  float pos = 0.0F, neg = 0.0F;
  for (float v : x) {
    if (v > 0.0F) pos = std::max(pos, v);
    if (v < 0.0F) neg = std::max(neg, -v);
  }
  const float up = std::max(pos / 7.0F, neg / 8.0F);
  const float down = std::max(neg / 7.0F, pos / 8.0F);
  out.d_bits = f16_bits_round_up(std::min(up, down));
  if (down < up) out.d_bits |= 0x8000;
  if (!std::isfinite(out.scale())) {
    throw Error(ErrorCode::kOutOfRange, "quantize_q4_0: block scale overflows binary16");
  }
  encode_with(x, out.scale(), out);
  return out;
}

std::array<float, kQkBlock> dequantize_q4_0(const BlockQ4& block) {
  std::array<float, kQkBlock> out{};
  const float d = block.scale();
  for (std::size_t i = 0; i < kQkBlock; ++i) {
    out[i] = d * static_cast<float>(static_cast<int>(block.code(i)) - 8);
  }
  return out;
}

GroupQ8 quantize_q8(std::span<const float, kQkBlock> x) {
  require_finite(x, "quantize_q8");
  float amax = 0.0F;
  for (float v : x) amax = std::max(amax, std::fabs(v));
  GroupQ8 g;
  if (amax == 0.0F) return g;
  g.scale = amax / 127.0F;
  for (std::size_t i = 0; i < kQkBlock; ++i) {
    const long q = std::lround(x[i] / g.scale);
    g.codes[i] = static_cast<std::int8_t>(std::clamp(q, -127L, 127L));
  }
  return g;
}

std::array<float, kQkBlock> dequantize_q8(const GroupQ8& group) {
  std::array<float, kQkBlock> out{};
  for (std::size_t i = 0; i < kQkBlock; ++i) out[i] = group.scale * group.codes[i];
  return out;
}

std::vector<GroupQ8> quantize_activations_q8(std::span<const float> x) {
  if (x.size() % kQkBlock != 0) {
    throw Error(ErrorCode::kShapeMismatch, "activation length " + std::to_string(x.size()) +
                                               " is not a multiple of 32");
  }
  std::vector<GroupQ8> out;
  out.reserve(x.size() / kQkBlock);
  for (std::size_t g = 0; g < x.size(); g += kQkBlock) {
    out.push_back(quantize_q8(std::span<const float, kQkBlock>(x.data() + g, kQkBlock)));
  }
  return out;
}

DeferredTerms deferred_terms(const BlockQ4& w, const GroupQ8& x) {
  DeferredTerms t;
  for (std::size_t i = 0; i < kQkBlock; ++i) {
    t.sumi += static_cast<std::int32_t>(w.code(i)) * x.codes[i];
    t.sum_x += x.codes[i];
  }
  return t;
}

BlockQ4 truncate_codes(const BlockQ4& block, int bits) {
  if (bits < 1 || bits > 4) {
    throw Error(ErrorCode::kInvalidArgument, "code bits must lie in [1, 4]");
  }
  const int step = 1 << (4 - bits);
  BlockQ4 out = block;
  for (std::size_t i = 0; i < kQkBlock; ++i) {
    const int k = static_cast<int>(block.code(i)) - 8;
    const long snapped = std::lround(static_cast<double>(k) / step) * step;
    const long level = std::clamp(snapped, -8L, static_cast<long>(8 - step));
    out.set_code(i, static_cast<std::uint8_t>(level + 8));
  }
  return out;
}

QuantMatrix quantize_matrix(const Matrix& m) {
  if (m.cols % kQkBlock != 0) {
    throw Error(ErrorCode::kShapeMismatch, "quantize_matrix: cols " + std::to_string(m.cols) +
                                               " is not a multiple of 32");
  }
  QuantMatrix q;
  q.rows = m.rows;
  q.cols = m.cols;
  q.blocks.reserve(m.rows * m.cols / kQkBlock);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const float* row = m.data.data() + r * m.cols;
    for (std::size_t c = 0; c < m.cols; c += kQkBlock) {
      q.blocks.push_back(quantize_q4_0(std::span<const float, kQkBlock>(row + c, kQkBlock)));
    }
  }
  return q;
}

Matrix dequantize_matrix(const QuantMatrix& q) {
  Matrix m(q.rows, q.cols);
  for (std::size_t r = 0; r < q.rows; ++r) {
    for (std::size_t b = 0; b < q.blocks_per_row(); ++b) {
      const auto vals = dequantize_q4_0(q.block(r, b));
      std::ranges::copy(vals, m.row(r).begin() + static_cast<std::ptrdiff_t>(b * kQkBlock));
    }
  }
  return m;
}

QuantMatrix truncate_codes(const QuantMatrix& q, int bits) {
  QuantMatrix out = q;
  for (auto& b : out.blocks) b = truncate_codes(b, bits);
  return out;
}

std::vector<float> matvec_w4a8(const QuantMatrix& w, std::span<const GroupQ8> x) {
  if (x.size() != w.blocks_per_row()) {
    throw Error(ErrorCode::kShapeMismatch, "matvec_w4a8: " + std::to_string(x.size()) +
                                               " activation groups for " +
                                               std::to_string(w.cols) + " columns");
  }
  std::vector<float> y(w.rows);
  for (std::size_t r = 0; r < w.rows; ++r) {
    double acc = 0.0;
    for (std::size_t b = 0; b < w.blocks_per_row(); ++b) {
      const BlockQ4& blk = w.block(r, b);
      const DeferredTerms t = deferred_terms(blk, x[b]);
      acc += static_cast<double>(blk.scale()) * static_cast<double>(x[b].scale) *
             static_cast<double>(t.corrected());
    }
    y[r] = static_cast<float>(acc);
  }
  return y;
}

std::vector<float> matvec_w4a16(const QuantMatrix& w, std::span<const float> x) {
  if (x.size() != w.cols) {
    throw Error(ErrorCode::kShapeMismatch, "matvec_w4a16: input length " +
                                               std::to_string(x.size()) + " != cols " +
                                               std::to_string(w.cols));
  }
  std::vector<float> y(w.rows);
  for (std::size_t r = 0; r < w.rows; ++r) {
    float acc = 0.0F;
    for (std::size_t b = 0; b < w.blocks_per_row(); ++b) {
      const auto vals = dequantize_q4_0(w.block(r, b));
      const float* xs = x.data() + b * kQkBlock;
      for (std::size_t i = 0; i < kQkBlock; ++i) acc += vals[i] * xs[i];
    }
    y[r] = acc;
  }
  return y;
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(std::string_view s, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
  }
  return v;
}

}  // namespace

std::string serialize_quant_matrix(const QuantMatrix& q) {
  std::string out("NVEQ1");
  put_u32(out, static_cast<std::uint32_t>(q.rows));
  put_u32(out, static_cast<std::uint32_t>(q.cols));
  out.push_back(static_cast<char>(kQ4_0FormatId));
  out.reserve(kQuantMatrixHeaderBytes + q.blocks.size() * kQ4BlockBytes);
  for (const auto& b : q.blocks) {
    const auto bytes = b.to_bytes();
    out.append(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  }
  return out;
}

QuantMatrix deserialize_quant_matrix(std::string_view bytes) {
  if (bytes.size() < kQuantMatrixHeaderBytes || bytes.substr(0, 5) != "NVEQ1") {
    throw Error(ErrorCode::kFormat, "not an NVEQ1 quantized matrix");
  }
  QuantMatrix q;
  q.rows = get_u32(bytes, 5);
  q.cols = get_u32(bytes, 9);
  if (static_cast<std::uint8_t>(bytes[13]) != kQ4_0FormatId) {
    throw Error(ErrorCode::kFormat, "unsupported block format id " +
                                        std::to_string(static_cast<unsigned char>(bytes[13])));
  }
  if (q.cols % kQkBlock != 0) throw Error(ErrorCode::kFormat, "NVEQ1 cols not a multiple of 32");
  const std::size_t n = q.rows * q.cols / kQkBlock;
  if (bytes.size() != kQuantMatrixHeaderBytes + n * kQ4BlockBytes) {
    throw Error(ErrorCode::kLengthMismatch, "NVEQ1 payload length does not match header");
  }
  q.blocks.reserve(n);
  const auto* p = reinterpret_cast<const std::uint8_t*>(bytes.data()) + kQuantMatrixHeaderBytes;
  for (std::size_t i = 0; i < n; ++i) {
    q.blocks.push_back(BlockQ4::from_bytes(
        std::span<const std::uint8_t, kQ4BlockBytes>(p + i * kQ4BlockBytes, kQ4BlockBytes)));
  }
  return q;
}

void write_quant_matrix(const std::filesystem::path& path, const QuantMatrix& q) {
  const std::string bytes = serialize_quant_matrix(q);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorCode::kIo, "cannot write '" + path.string() + "'");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

QuantMatrix read_quant_matrix(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return deserialize_quant_matrix(ss.str());
}

double effective_bpw(std::span<const Precision> plan, std::span<const std::uint64_t> layer_sizes,
                     const BpwPolicy& policy) {
  if (plan.size() != layer_sizes.size()) {
    throw Error(ErrorCode::kLengthMismatch, "effective_bpw: plan and sizes differ in length");
  }
  double bits = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const double n = static_cast<double>(layer_sizes[i]);
    bits += n * (plan[i] == Precision::kW4A16 ? policy.w4a16_bits : policy.w4a8_bits);
    total += n;
  }
  return total == 0.0 ? 0.0 : bits / total;
}

}  // namespace nve
