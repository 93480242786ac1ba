// Copyright (c) 2026, The NVE Authors
// SPDX-License-Identifier: Apache-2.0

#include "nve/profile_io.hpp"

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "nve/canonical_json.hpp"
#include "nve/digest.hpp"
#include "nve/error.hpp"
#include "nve/spec_json.hpp"

namespace nve {

std::string serialize_profile(const ImportanceProfile& p) {
  Json assignments = Json::array();
  for (Precision a : p.assignments) assignments.push_back(std::string(precision_name(a)));
  const Json j = {{"architecture_key", p.architecture_key},
                  {"assignments", assignments},
                  {"epsilon", p.epsilon},
                  {"format_version", p.format_version},
                  {"normalized_scores", p.normalized_scores},
                  {"prompt_count", p.prompt_count},
                  {"raw_scores", p.raw_scores},
                  {"scorer_id", std::string(scorer_name(p.scorer_id))},
                  {"tau", p.tau}};
  return canonical_dump(j);
}

ImportanceProfile load_profile(std::string_view bytes) {
  const Json j = parse_json(std::string(bytes));
  ImportanceProfile p;
  try {
    p.format_version = j.at("format_version").get<int>();
    if (p.format_version != kProfileFormatVersion) {
      throw Error(ErrorCode::kUnknownFormatVersion,
                  "unsupported profile format_version " + std::to_string(p.format_version));
    }
    p.architecture_key = j.at("architecture_key").get<std::string>();
    const auto scorer = parse_scorer(j.at("scorer_id").get<std::string>());
    if (!scorer) throw Error(ErrorCode::kFormat, "unknown scorer_id");
    p.scorer_id = *scorer;
    p.prompt_count = j.at("prompt_count").get<std::size_t>();
    p.epsilon = j.at("epsilon").get<double>();
    p.tau = j.at("tau").get<double>();
    p.raw_scores = j.at("raw_scores").get<std::vector<double>>();
    p.normalized_scores = j.at("normalized_scores").get<std::vector<double>>();
    for (const auto& a : j.at("assignments")) {
      const auto prec = parse_precision(a.get<std::string>());
      if (!prec) throw Error(ErrorCode::kFormat, "unknown precision in assignments");
      p.assignments.push_back(*prec);
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("bad profile JSON: ") + e.what());
  }
  if (p.raw_scores.size() != p.normalized_scores.size() ||
      p.raw_scores.size() != p.assignments.size()) {
    throw Error(ErrorCode::kLengthMismatch,
                "profile arrays disagree: raw=" + std::to_string(p.raw_scores.size()) +
                    " normalized=" + std::to_string(p.normalized_scores.size()) +
                    " assignments=" + std::to_string(p.assignments.size()));
  }
  if (p.raw_scores.empty()) throw Error(ErrorCode::kLengthMismatch, "profile has no layers");
  return p;
}

std::string profile_digest(std::string_view bytes) { return sha256_hex(bytes); }

namespace {

std::string read_all(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

ImportanceProfile read_profile_file(const std::filesystem::path& path) {
  return load_profile(read_all(path));
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  static std::atomic<unsigned> counter{0};
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++);
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorCode::kIo, "cannot write '" + tmp.string() + "'");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os.flush()) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw Error(ErrorCode::kIo, "write failed for '" + tmp.string() + "'");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorCode::kIo, "cannot rename into '" + path.string() + "'");
  }
}

std::filesystem::path default_cache_dir() {
  if (const char* env = std::getenv("NVE_CACHE_DIR"); env != nullptr && *env != '\0') {
    return env;
  }
  if (const char* home = std::getenv("HOME"); home != nullptr && *home != '\0') {
    return std::filesystem::path(home) / ".cache" / "nve" / "importance";
  }
  return ".nve-cache";
}

CacheResult cache_get_or_profile(const std::filesystem::path& cache_dir, const ToyModel& model,
                                 const CalibrationSet& calib, ScorerId scorer, double tau,
                                 double epsilon) {
  CacheResult result;
  const std::string key = architecture_key(model);
  const std::filesystem::path entry = cache_dir / (key + ".json");

  std::error_code ec;
  if (std::filesystem::exists(entry, ec)) {
    try {
      ImportanceProfile cached = read_profile_file(entry);
      if (cached.architecture_key == key && cached.scorer_id == scorer && cached.tau == tau &&
          cached.epsilon == epsilon && cached.prompt_count == calib.size() &&
          cached.num_layers() == model.num_layers()) {
        result.profile = std::move(cached);
        result.cache_hit = true;
        result.on_device_ms = 0.0;
        return result;
      }
    } catch (const Error& e) {
      result.warnings.push_back("ignoring corrupt cache entry '" + entry.string() +
                                "': " + e.what());
    }
  }

  const auto start = std::chrono::steady_clock::now();
  result.profile = profile(model, calib, scorer, tau, epsilon);
  const auto stop = std::chrono::steady_clock::now();
  result.on_device_ms = std::chrono::duration<double, std::milli>(stop - start).count();

  std::filesystem::create_directories(cache_dir, ec);
  try {
    write_file_atomic(entry, serialize_profile(result.profile));
  } catch (const Error& e) {
    result.warnings.push_back(std::string("could not store cache entry: ") + e.what());
  }
  return result;
}

}  // namespace nve
