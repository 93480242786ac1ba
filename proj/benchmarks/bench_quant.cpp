// Copyright (c) 2026, The NVE Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <random>

#include "nve/quant.hpp"

namespace {

nve::Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0F, 1.0F);
  nve::Matrix m(rows, cols);
  for (auto& v : m.data) v = u(rng);
  return m;
}

void BM_QuantizeMatrix(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const nve::Matrix m = random_matrix(n, n, 1);
  for (auto _ : state) benchmark::DoNotOptimize(nve::quantize_matrix(m));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n));
}
BENCHMARK(BM_QuantizeMatrix)->Arg(64)->Arg(256)->Arg(1024);

void BM_MatvecW4A8(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto q = nve::quantize_matrix(random_matrix(n, n, 2));
  const auto x = random_matrix(1, n, 3);
  for (auto _ : state) {
    // Activation quantization is part of the W4A8 path.
    const auto groups = nve::quantize_activations_q8(x.data);
    benchmark::DoNotOptimize(nve::matvec_w4a8(q, groups));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n));
}
BENCHMARK(BM_MatvecW4A8)->Arg(64)->Arg(256)->Arg(1024);

void BM_MatvecW4A16(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto q = nve::quantize_matrix(random_matrix(n, n, 2));
  const auto x = random_matrix(1, n, 3);
  for (auto _ : state) benchmark::DoNotOptimize(nve::matvec_w4a16(q, x.data));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n));
}
BENCHMARK(BM_MatvecW4A16)->Arg(64)->Arg(256)->Arg(1024);

}  // namespace
