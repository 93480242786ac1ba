// Copyright (c) 2026, The NVE Authors
// SPDX-License-Identifier: Apache-2.0
//
// Scalar reference arithmetic for 4-bit weights and 8-bit activations.
//
// Q4_0 block (18 bytes, 32 weights):
//   bytes 0..1   scale d, IEEE binary16, little-endian
//   bytes 2..17  byte j = code[j] | code[j + 16] << 4   (split nibble layout)
//   weight_i = d * (code_i - 8),  code_i in [0, 15]
//
// Q8 activation group (32 values): s = amax / 127, q_i = round(x_i / s) in
// [-127, 127]. W4A8 dot products use deferred bias correction:
//   d * s * (sum_i code_i q_i - 8 sum_i q_i)
// with both sums in exact integer arithmetic.
//
// Rounding is half-away-from-zero throughout.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nve/model.hpp"
#include "nve/profiler.hpp"

namespace nve {

inline constexpr std::size_t kQkBlock = 32;
inline constexpr std::size_t kQ4BlockBytes = 18;
inline constexpr std::uint8_t kQ4_0FormatId = 2;
inline constexpr std::size_t kQuantMatrixHeaderBytes = 14;

std::uint16_t f32_to_f16_bits(float x);  ///< round to nearest even
float f16_bits_to_f32(std::uint16_t bits);

struct BlockQ4 {
  std::uint16_t d_bits = 0;
  std::array<std::uint8_t, kQkBlock / 2> qs{};

  float scale() const { return f16_bits_to_f32(d_bits); }
  std::uint8_t code(std::size_t i) const {
    return i < 16 ? (qs[i] & 0x0F) : static_cast<std::uint8_t>(qs[i - 16] >> 4);
  }
  void set_code(std::size_t i, std::uint8_t c);

  std::array<std::uint8_t, kQ4BlockBytes> to_bytes() const;
  static BlockQ4 from_bytes(std::span<const std::uint8_t, kQ4BlockBytes> bytes);

  friend bool operator==(const BlockQ4&, const BlockQ4&) = default;
};

struct GroupQ8 {
  float scale = 0.0F;
  std::array<std::int8_t, kQkBlock> codes{};

  friend bool operator==(const GroupQ8&, const GroupQ8&) = default;
};

/// Scale from the signed max-magnitude element m (first on ties): d = m / -8,
/// which puts m exactly on code 0. When that choice would clip an element of
/// the opposite sign at code 15 (|x / d| > 7.5), the block instead uses
/// d = o / 7 with o the largest opposite-sign magnitude, keeping every
/// element within half a step. When the binary16 scale is subnormal and
/// neither rule fits, d is the smallest binary16 covering the block (one sign
/// within 7 steps, the other within 8). All-zero blocks store d = 0, codes 8.
/// Throws kNonFinite on NaN/Inf, kOutOfRange if d overflows binary16.
BlockQ4 quantize_q4_0(std::span<const float, kQkBlock> x);
std::array<float, kQkBlock> dequantize_q4_0(const BlockQ4& block);

GroupQ8 quantize_q8(std::span<const float, kQkBlock> x);
std::array<float, kQkBlock> dequantize_q8(const GroupQ8& group);

/// Quantizes a vector whose length is a multiple of 32, one group per 32.
std::vector<GroupQ8> quantize_activations_q8(std::span<const float> x);

struct DeferredTerms {
  std::int32_t sumi = 0;   ///< sum code_w * q_x, codes unsigned
  std::int32_t sum_x = 0;  ///< sum q_x
  std::int32_t corrected() const { return sumi - 8 * sum_x; }
};
DeferredTerms deferred_terms(const BlockQ4& w, const GroupQ8& x);

/// Snaps codes onto 2^bits levels centred at 8 (bits in [1, 4]; 4 is identity).
BlockQ4 truncate_codes(const BlockQ4& block, int bits);

struct QuantMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;  ///< multiple of 32
  std::vector<BlockQ4> blocks;  ///< row-major, cols / 32 blocks per row

  std::size_t blocks_per_row() const { return cols / kQkBlock; }
  const BlockQ4& block(std::size_t r, std::size_t b) const {
    return blocks[r * blocks_per_row() + b];
  }

  friend bool operator==(const QuantMatrix&, const QuantMatrix&) = default;
};

/// Throws kShapeMismatch unless cols is a multiple of 32.
QuantMatrix quantize_matrix(const Matrix& m);
Matrix dequantize_matrix(const QuantMatrix& q);
QuantMatrix truncate_codes(const QuantMatrix& q, int bits);

/// Per row: sum over blocks of d * s_x * (sumi - 8 sum_x), integer inner sums.
std::vector<float> matvec_w4a8(const QuantMatrix& w, std::span<const GroupQ8> x);
/// Per row: dequantised weights dotted with x, float accumulation in column order.
std::vector<float> matvec_w4a16(const QuantMatrix& w, std::span<const float> x);

/// NVEQ1: "NVEQ1", u32 LE rows, u32 LE cols, u8 block format id (2 = Q4_0),
/// then rows * cols / 32 packed 18-byte blocks.
std::string serialize_quant_matrix(const QuantMatrix& q);
QuantMatrix deserialize_quant_matrix(std::string_view bytes);
void write_quant_matrix(const std::filesystem::path& path, const QuantMatrix& q);
QuantMatrix read_quant_matrix(const std::filesystem::path& path);

inline constexpr double kQ4_0BitsPerWeight = 18.0 * 8.0 / 32.0;  // 4.5

/// Storage bits per weight element of each precision route. W4A8 and W4A16
/// share Q4_0 weights by default; the activation width is reported separately.
struct BpwPolicy {
  double w4a8_bits = kQ4_0BitsPerWeight;
  double w4a16_bits = kQ4_0BitsPerWeight;
};

/// Size-weighted mean of per-layer storage bits.
double effective_bpw(std::span<const Precision> plan, std::span<const std::uint64_t> layer_sizes,
                     const BpwPolicy& policy = {});

}  // namespace nve
