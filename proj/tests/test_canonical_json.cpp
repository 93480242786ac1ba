// Copyright (c) 2026, The NVE Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "nve/canonical_json.hpp"
#include "nve/digest.hpp"
#include "nve/error.hpp"

namespace nve {
namespace {

TEST(CanonicalJson, SortsKeysAndDropsWhitespace) {
  const Json j = {{"b", 1}, {"a", {{"z", true}, {"y", nullptr}}}, {"c", Json::array({1, "x"})}};
  EXPECT_EQ(canonical_dump(j), R"({"a":{"y":null,"z":true},"b":1,"c":[1,"x"]})");
}

TEST(CanonicalJson, DoublesUseShortestRoundTrip) {
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(1.0), "1");
  EXPECT_EQ(format_double(-0.0), "0");
  EXPECT_EQ(format_double(1e-9), "1e-09");
  EXPECT_EQ(format_double(0.0001), "1e-04");
  EXPECT_EQ(format_double(123456.5), "123456.5");
}

TEST(CanonicalJson, NonFiniteIsRejected) {
  EXPECT_THROW(format_double(std::nan("")), Error);
  EXPECT_THROW(format_double(std::numeric_limits<double>::infinity()), Error);
}

TEST(CanonicalJson, RandomDoublesRoundTripExactly) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 2000; ++i) {
    const double v = u(rng) * std::pow(10.0, static_cast<int>(rng() % 20) - 10);
    const std::string s = format_double(v);
    EXPECT_EQ(std::stod(s), v) << s;
  }
}

TEST(CanonicalJson, ParseSerializeIsIdempotent) {
  const std::string text = R"({"k":[0.30000000000000004,2,"s"],"a":{"n":-1.5e-07}})";
  const std::string once = canonical_dump(parse_json(text));
  EXPECT_EQ(canonical_dump(parse_json(once)), once);
}

TEST(CanonicalJson, MalformedInputIsFormatError) {
  try {
    parse_json("{\"a\":");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kFormat);
  }
}

TEST(Digest, KnownVectors) {
  // FIPS 180-2 examples.
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Digest, IncrementalMatchesOneShot) {
  Sha256 h;
  h.update("ab", 2);
  h.update("c", 1);
  EXPECT_EQ(h.hex_digest(), sha256_hex("abc"));
}

}  // namespace
}  // namespace nve
