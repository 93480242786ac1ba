// Copyright (c) 2026, The NVE Authors
// SPDX-License-Identifier: Apache-2.0
//
// Canonical JSON: object keys in byte order, no insignificant whitespace,
// doubles rendered as the shortest decimal that round-trips. Two equal
// documents always produce identical bytes, which is what makes the
// SHA-256 of an artifact meaningful as its identity.

#pragma once

#include <string>

#include <nlohmann/json.hpp>

namespace nve {

using Json = nlohmann::json;

/// Throws nve::Error(kNonFinite) on NaN/Inf, which JSON cannot represent.
std::string canonical_dump(const Json& value);

/// Shortest round-trip decimal for a finite double ("0.5", "1e-09", "3").
std::string format_double(double value);

/// Parses text; wraps parser failures in nve::Error(kFormat).
Json parse_json(const std::string& text);

}  // namespace nve
