// Copyright (c) 2026, The NVE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace nve {

enum class ErrorCode {
  kInvalidArgument,
  kShapeMismatch,
  kMissingSlot,
  kOutOfRange,
  kNonFinite,
  kFormat,
  kUnknownFormatVersion,
  kLengthMismatch,
  kIo,
  kKeyMismatch,
};

const char* to_string(ErrorCode code);

/// Every failure raised by the library carries a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace nve
