// Copyright (c) 2026, The NVE Authors
// SPDX-License-Identifier: Apache-2.0
//
// Top-k recovery bound for sample-mean layer rankings. With per-prompt
// statistics sub-Gaussian with parameter sigma and a top-k gap delta, the
// empirical top-k set differs from the population one with probability at most
//
//   2 k (L - k) exp(-N delta^2 / (8 sigma^2))
//
// (a union bound over the k(L-k) straddling pairs). Reported clamped to [0, 1].

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace nve {

struct RecoveryParams {
  std::size_t num_layers = 0;  ///< L
  std::size_t k = 1;
  double delta = 0.0;  ///< gap between the k-th and (k+1)-th population scores
  double sigma = 0.0;  ///< sub-Gaussian parameter, score units
  std::uint64_t prompts = 0;  ///< N
};

/// Throws kInvalidArgument unless 1 <= k < L, delta > 0 and sigma > 0.
double failure_bound(const RecoveryParams& p);

/// Smallest N with failure_bound <= target, target in (0, 1).
std::uint64_t min_prompts(std::size_t num_layers, std::size_t k, double delta, double sigma,
                          double target);

/// Gap between the k-th and (k+1)-th largest scores.
double topk_gap(std::span<const double> scores, std::size_t k);

/// Conservative sigma estimate from a profiling run: the per-layer sample
/// standard deviation (n - 1 denominator) of per-prompt statistics, maximised
/// over layers. per_prompt[i][j] is layer i on prompt j; needs >= 2 prompts.
double estimate_sigma(const std::vector<std::vector<double>>& per_prompt);

}  // namespace nve
