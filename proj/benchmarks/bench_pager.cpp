// Copyright (c) 2026, The NVE Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <numeric>

#include "nve/pager.hpp"

namespace {

void BM_PagerDecodeReplay(benchmark::State& state) {
  const auto layers = static_cast<std::size_t>(state.range(0));
  const std::size_t hot_layers = layers * 3 / 4;
  std::vector<std::size_t> decode(hot_layers);
  std::iota(decode.begin(), decode.end(), 0);
  const auto trace = nve::decode_trace(layers, 270, decode);
  const std::vector<std::uint64_t> bytes(2 * layers, 1 << 20);
  const auto units = nve::pmi_clusters(nve::cyclic_trace(layers, 1), 0.1, bytes);
  const auto unit_of = nve::unit_index(units, 2 * layers);
  const nve::TierConfig cfg{hot_layers * (2ULL << 20), layers * (2ULL << 20)};
  std::vector<double> scores(layers, 0.0);
  for (auto _ : state) {
    nve::Pager p = nve::init_placement(scores, units, cfg);
    nve::replay(p, trace, unit_of);
    benchmark::DoNotOptimize(p.stats());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * trace.size()));
}
BENCHMARK(BM_PagerDecodeReplay)->Arg(16)->Arg(64);

void BM_PmiClusters(benchmark::State& state) {
  const auto layers = static_cast<std::size_t>(state.range(0));
  const auto trace = nve::cyclic_trace(layers, 8);
  for (auto _ : state) benchmark::DoNotOptimize(nve::pmi_clusters(trace, 0.1));
}
BENCHMARK(BM_PmiClusters)->Arg(16)->Arg(64);

}  // namespace
