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

#include "loca/errors.hpp"

namespace loca {

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDimension: return "dimension error";
    case ErrorKind::kParameter: return "parameter error";
    case ErrorKind::kRange: return "range error";
    case ErrorKind::kContract: return "contract error";
    case ErrorKind::kState: return "state error";
    case ErrorKind::kConfig: return "config error";
    case ErrorKind::kIo: return "io error";
    case ErrorKind::kDegenerateInput: return "degenerate input";
    case ErrorKind::kNumeric: return "numeric error";
    case ErrorKind::kUndefined: return "undefined result";
  }
  return "error";
}

}  // namespace loca
