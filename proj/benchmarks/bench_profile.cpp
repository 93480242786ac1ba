// Copyright (c) 2026, The NVE Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "nve/profile_io.hpp"
#include "nve/profiler.hpp"

namespace {

void BM_ProfileStreaming(benchmark::State& state) {
  const auto layers = static_cast<std::size_t>(state.range(0));
  const nve::ToyModel m = nve::build_toy_model({layers, 32, 64, 4, 64, 0});
  const auto calib = nve::synthetic_calibration(64, 12, 1);
  for (auto _ : state) benchmark::DoNotOptimize(nve::profile(m, calib));
}
BENCHMARK(BM_ProfileStreaming)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_SerializeProfile(benchmark::State& state) {
  const nve::ToyModel m = nve::build_toy_model({32, 32, 64, 4, 64, 0});
  const auto p = nve::profile(m, nve::synthetic_calibration(64, 4, 1));
  for (auto _ : state) {
    const std::string s = nve::serialize_profile(p);
    benchmark::DoNotOptimize(nve::profile_digest(s));
  }
}
BENCHMARK(BM_SerializeProfile);

}  // namespace
