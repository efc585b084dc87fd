// Copyright 2026 The LOCA Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef LOCA_ERRORS_HPP_
#define LOCA_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace loca {

enum class ErrorKind {
  kDimension,
  kParameter,
  kRange,
  kContract,
  kState,
  kConfig,
  kIo,
  kDegenerateInput,
  kNumeric,
  kUndefined,
};

const char* error_kind_name(ErrorKind kind);

/// Single exception type thrown by the library; `kind()` says which
/// contract was broken so callers (and the C API) can map it to a code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(error_kind_name(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace loca

#endif  // LOCA_ERRORS_HPP_
