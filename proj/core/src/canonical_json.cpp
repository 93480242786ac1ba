// Copyright (c) 2026, The NVE Authors
// SPDX-License-Identifier: Apache-2.0

#include "nve/canonical_json.hpp"

#include <array>
#include <charconv>
#include <cmath>

#include "nve/error.hpp"

namespace nve {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kMissingSlot: return "missing_slot";
    case ErrorCode::kOutOfRange: return "out_of_range";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kUnknownFormatVersion: return "unknown_format_version";
    case ErrorCode::kLengthMismatch: return "length_mismatch";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kKeyMismatch: return "key_mismatch";
  }
  return "unknown";
}

std::string format_double(double value) {
  if (!std::isfinite(value)) {
    throw Error(ErrorCode::kNonFinite, "cannot encode non-finite number in JSON");
  }
  if (value == 0.0) return "0";  // folds -0.0 as well
  std::array<char, 32> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  if (ec != std::errc{}) {
    throw Error(ErrorCode::kFormat, "to_chars failed");
  }
  return std::string(buf.data(), end);
}

namespace {

void write(const Json& v, std::string& out) {
  switch (v.type()) {
    case Json::value_t::object: {
      out.push_back('{');
      bool first = true;
      // object_t is a std::map, so iteration is already in byte order.
      for (const auto& [key, item] : v.items()) {
        if (!first) out.push_back(',');
        first = false;
        out += Json(key).dump();
        out.push_back(':');
        write(item, out);
      }
      out.push_back('}');
      break;
    }
    case Json::value_t::array: {
      out.push_back('[');
      bool first = true;
      for (const auto& item : v) {
        if (!first) out.push_back(',');
        first = false;
        write(item, out);
      }
      out.push_back(']');
      break;
    }
    case Json::value_t::number_float:
      out += format_double(v.get<double>());
      break;
    case Json::value_t::discarded:
      throw Error(ErrorCode::kFormat, "discarded JSON value");
    default:
      // strings, integers, booleans and null have a single encoding in nlohmann
      out += v.dump();
      break;
  }
}

}  // namespace

std::string canonical_dump(const Json& value) {
  std::string out;
  write(value, out);
  return out;
}

Json parse_json(const std::string& text) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::kFormat, std::string("malformed JSON: ") + e.what());
  }
}

}  // namespace nve
