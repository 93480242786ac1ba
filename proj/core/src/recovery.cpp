// Copyright (c) 2026, The NVE Authors
// SPDX-License-Identifier: Apache-2.0

#include "nve/recovery.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "nve/error.hpp"

namespace nve {

namespace {

void check(std::size_t num_layers, std::size_t k, double delta, double sigma) {
  if (k < 1 || k >= num_layers) {
    throw Error(ErrorCode::kInvalidArgument, "recovery bound needs 1 <= k < L (k=" +
                                                 std::to_string(k) +
                                                 ", L=" + std::to_string(num_layers) + ")");
  }
  if (!(delta > 0.0) || !std::isfinite(delta)) {
    throw Error(ErrorCode::kInvalidArgument, "recovery bound needs delta > 0");
  }
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw Error(ErrorCode::kInvalidArgument, "recovery bound needs sigma > 0");
  }
}

double prefactor(std::size_t num_layers, std::size_t k) {
  return 2.0 * static_cast<double>(k) * static_cast<double>(num_layers - k);
}

}  // namespace

double failure_bound(const RecoveryParams& p) {
  check(p.num_layers, p.k, p.delta, p.sigma);
  const double exponent = static_cast<double>(p.prompts) * p.delta * p.delta /
                          (8.0 * p.sigma * p.sigma);
  return std::clamp(prefactor(p.num_layers, p.k) * std::exp(-exponent), 0.0, 1.0);
}

std::uint64_t min_prompts(std::size_t num_layers, std::size_t k, double delta, double sigma,
                          double target) {
  check(num_layers, k, delta, sigma);
  if (!(target > 0.0 && target < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "target probability must lie in (0, 1)");
  }
  const double closed = 8.0 * sigma * sigma / (delta * delta) *
                        std::log(prefactor(num_layers, k) / target);
  auto n = static_cast<std::uint64_t>(std::max(0.0, std::ceil(closed)));
  // The closed form can land one off after rounding; settle on the exact minimum.
  auto bound_at = [&](std::uint64_t prompts) {
    return failure_bound({num_layers, k, delta, sigma, prompts});
  };
  while (bound_at(n) > target) ++n;
  while (n > 0 && bound_at(n - 1) <= target) --n;
  return n;
}

double topk_gap(std::span<const double> scores, std::size_t k) {
  if (k < 1 || k >= scores.size()) {
    throw Error(ErrorCode::kInvalidArgument, "topk_gap needs 1 <= k < number of scores");
  }
  std::vector<double> sorted(scores.begin(), scores.end());
  std::ranges::sort(sorted, std::greater<>());
  return sorted[k - 1] - sorted[k];
}

double estimate_sigma(const std::vector<std::vector<double>>& per_prompt) {
  double worst = 0.0;
  for (const auto& row : per_prompt) {
    if (row.size() < 2) {
      throw Error(ErrorCode::kInvalidArgument, "estimate_sigma needs at least 2 prompts");
    }
    double mean = 0.0;
    for (double x : row) mean += x;
    mean /= static_cast<double>(row.size());
    double ss = 0.0;
    for (double x : row) ss += (x - mean) * (x - mean);
    worst = std::max(worst, std::sqrt(ss / static_cast<double>(row.size() - 1)));
  }
  return worst;
}

}  // namespace nve
