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

#ifndef LOCA_GRADCHECK_HPP_
#define LOCA_GRADCHECK_HPP_

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "loca/autodiff.hpp"

namespace loca {

struct GradCheckOptions {
  double eps = 1e-5;
  /// 0 checks every coordinate; otherwise a seeded sample per tensor.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::string worst;  // "tensor#index"
};

using ScalarGraphFn = std::function<ad::Var<double>(ad::Tape<double>&)>;

/// Compares reverse-mode gradients of f against central differences.
/// Relative error per coordinate is |a - cd| / (|a| + |cd| + 1e-12).
/// f must register each tensor in `params` via Tape::parameter.
GradCheckReport finite_difference_check(const ScalarGraphFn& f,
                                        std::span<TensorD* const> params,
                                        const GradCheckOptions& options = {});

/// Single-input form: f maps the recorded x to a scalar.
double finite_difference_check(const std::function<ad::Var<double>(ad::Var<double>)>& f,
                               TensorD& x, double eps);

}  // namespace loca

#endif  // LOCA_GRADCHECK_HPP_
