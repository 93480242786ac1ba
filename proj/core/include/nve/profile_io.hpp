// Copyright (c) 2026, The NVE Authors
// SPDX-License-Identifier: Apache-2.0
//
// Profile artifact: canonical JSON with the fields
//   architecture_key, assignments[], epsilon, format_version,
//   normalized_scores[], prompt_count, raw_scores[], scorer_id, tau
// serialize(load(serialize(p))) is byte-identical, and the SHA-256 of those
// bytes is the profile's portable identity.

#pragma once

#include <chrono>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "nve/profiler.hpp"

namespace nve {

std::string serialize_profile(const ImportanceProfile& profile);

/// Throws kUnknownFormatVersion, kLengthMismatch, or kFormat.
ImportanceProfile load_profile(std::string_view bytes);

std::string profile_digest(std::string_view bytes);

ImportanceProfile read_profile_file(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it into place, so readers
/// never observe a partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

/// $NVE_CACHE_DIR, else $HOME/.cache/nve/importance, else ./.nve-cache.
std::filesystem::path default_cache_dir();

struct CacheResult {
  ImportanceProfile profile;
  bool cache_hit = false;
  double on_device_ms = 0.0;
  std::vector<std::string> warnings;
};

/// One file per architecture key: <cache_dir>/<architecture_key>.json.
/// A stored entry is reused only if it parses and its scorer, tau, epsilon and
/// prompt count match the request; anything else is a miss (corrupt entries
/// add a warning) and the entry is recomputed and replaced.
CacheResult cache_get_or_profile(const std::filesystem::path& cache_dir, const ToyModel& model,
                                 const CalibrationSet& calib, ScorerId scorer = ScorerId::kCombined,
                                 double tau = kDefaultTau, double epsilon = kDefaultEpsilon);

}  // namespace nve
