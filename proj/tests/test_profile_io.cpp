// Copyright (c) 2026, The NVE Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <fstream>

#include "nve/error.hpp"
#include "nve/profile_io.hpp"
#include "nve/spec_json.hpp"
#include "test_support.hpp"

namespace nve {
namespace {

ImportanceProfile golden_profile(const Json& g) {
  return profile_from_scores(g["raw_scores"].get<std::vector<double>>(), g["tau"].get<double>(),
                             g["epsilon"].get<double>(), ScorerId::kCombined,
                             g["prompt_count"].get<std::size_t>(),
                             g["architecture_key"].get<std::string>());
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no nve::Error thrown";
  return ErrorCode::kIo;
}

TEST(ProfileIo, MatchesIndependentGolden) {
  const Json g = test::golden("profile_golden.json");
  const std::string bytes = serialize_profile(golden_profile(g));
  EXPECT_EQ(bytes, g["canonical"].get<std::string>());
  EXPECT_EQ(profile_digest(bytes), g["sha256"].get<std::string>());
}

TEST(ProfileIo, SerializeLoadSerializeIsByteIdentical) {
  const ToyModel m = build_toy_model({4, 8, 16, 2, 32, 3});
  const auto p = profile(m, synthetic_calibration(32, 5, 2));
  const std::string once = serialize_profile(p);
  const ImportanceProfile back = load_profile(once);
  EXPECT_EQ(back, p);
  EXPECT_EQ(serialize_profile(back), once);
}

TEST(ProfileIo, RejectsUnknownVersionAndRaggedArrays) {
  const Json g = test::golden("profile_golden.json");
  Json j = parse_json(g["canonical"].get<std::string>());
  Json v2 = j;
  v2["format_version"] = 2;
  EXPECT_EQ(code_of([&] { load_profile(canonical_dump(v2)); }), ErrorCode::kUnknownFormatVersion);
  Json ragged = j;
  ragged["raw_scores"].erase(0);
  EXPECT_EQ(code_of([&] { load_profile(canonical_dump(ragged)); }), ErrorCode::kLengthMismatch);
  Json bad = j;
  bad["scorer_id"] = "hessian";
  EXPECT_EQ(code_of([&] { load_profile(canonical_dump(bad)); }), ErrorCode::kFormat);
  EXPECT_EQ(code_of([] { load_profile("not json"); }), ErrorCode::kFormat);
}

TEST(ProfileIo, AtomicWriteLeavesNoTemporaries) {
  test::TempDir dir("atomic");
  write_file_atomic(dir / "p.json", "first");
  write_file_atomic(dir / "p.json", "second");
  EXPECT_EQ(test::read_file(dir / "p.json"), "second");
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir.path())) ++files;
  EXPECT_EQ(files, 1u);
  EXPECT_EQ(code_of([&] { write_file_atomic(dir / "missing" / "p.json", "x"); }), ErrorCode::kIo);
}

TEST(ProfileCache, SecondCallIsAHitWithZeroDeviceTime) {
  test::TempDir dir("cache");
  const ToyModel m = build_toy_model({3, 8, 16, 2, 32, 9});
  const auto calib = synthetic_calibration(32, 4, 1);
  const auto first = cache_get_or_profile(dir.path(), m, calib);
  EXPECT_FALSE(first.cache_hit);
  const auto second = cache_get_or_profile(dir.path(), m, calib);
  EXPECT_TRUE(second.cache_hit);
  EXPECT_EQ(second.on_device_ms, 0.0);
  EXPECT_EQ(second.profile, first.profile);
  EXPECT_TRUE(std::filesystem::exists(dir / (architecture_key(m) + ".json")));
}

TEST(ProfileCache, CorruptEntryIsRecomputedWithWarning) {
  test::TempDir dir("cache-bad");
  const ToyModel m = build_toy_model({3, 8, 16, 2, 32, 9});
  const auto calib = synthetic_calibration(32, 4, 1);
  {
    std::ofstream os(dir / (architecture_key(m) + ".json"));
    os << "{\"format_version\":";
  }
  const auto r = cache_get_or_profile(dir.path(), m, calib);
  EXPECT_FALSE(r.cache_hit);
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_NE(r.warnings[0].find("corrupt"), std::string::npos);
  EXPECT_TRUE(cache_get_or_profile(dir.path(), m, calib).cache_hit);
}

TEST(ProfileCache, DifferentRequestIsAMiss) {
  test::TempDir dir("cache-miss");
  const ToyModel m = build_toy_model({3, 8, 16, 2, 32, 9});
  const auto calib = synthetic_calibration(32, 4, 1);
  cache_get_or_profile(dir.path(), m, calib);
  const auto other = cache_get_or_profile(dir.path(), m, calib, ScorerId::kInputL2);
  EXPECT_FALSE(other.cache_hit);
  EXPECT_TRUE(other.warnings.empty());
  EXPECT_EQ(other.profile.scorer_id, ScorerId::kInputL2);
  EXPECT_FALSE(cache_get_or_profile(dir.path(), m, calib, ScorerId::kCombined, 0.5).cache_hit);
}

}  // namespace
}  // namespace nve
