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

#include "loca/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

namespace loca {
namespace {

double evaluate(const ScalarGraphFn& f) {
  ad::Tape<double> tape;
  return f(tape).value().item();
}

}  // namespace

GradCheckReport finite_difference_check(const ScalarGraphFn& f,
                                        std::span<TensorD* const> params,
                                        const GradCheckOptions& options) {
  require(options.eps >= 1e-6 && options.eps <= 1e-2, ErrorKind::kParameter,
          "finite-difference eps must lie in [1e-6, 1e-2]");
  std::vector<bool> previous(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    previous[i] = params[i]->requires_grad();
    params[i]->set_requires_grad(true);
    params[i]->zero_grad();
  }
  {
    ad::Tape<double> tape;
    auto loss = f(tape);
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (TensorD* p : params) {
    auto g = p->grad();
    analytic.emplace_back(g.begin(), g.end());
  }

  const double base = evaluate(f);
  require(base == evaluate(f), ErrorKind::kContract,
          "function under check is not deterministic");

  GradCheckReport report;
  std::mt19937_64 rng(options.seed);
  for (std::size_t t = 0; t < params.size(); ++t) {
    TensorD& p = *params[t];
    std::vector<std::size_t> coords(p.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_tensor > 0 && coords.size() > options.max_coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_tensor);
    }
    for (std::size_t c : coords) {
      const double orig = p[c];
      p[c] = orig + options.eps;
      const double up = evaluate(f);
      p[c] = orig - options.eps;
      const double down = evaluate(f);
      p[c] = orig;
      const double cd = (up - down) / (2.0 * options.eps);
      const double a = analytic[t][c];
      const double rel = std::abs(a - cd) / (std::abs(a) + std::abs(cd) + 1e-12);
      ++report.coords_checked;
      if (rel > report.max_rel_error || report.worst.empty()) {
        if (rel >= report.max_rel_error) {
          report.max_rel_error = rel;
          report.worst = std::to_string(t) + "#" + std::to_string(c);
        }
      }
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->set_requires_grad(previous[i]);
  return report;
}

double finite_difference_check(const std::function<ad::Var<double>(ad::Var<double>)>& f,
                               TensorD& x, double eps) {
  TensorD* ptr = &x;
  GradCheckOptions options;
  options.eps = eps;
  return finite_difference_check(
             [&](ad::Tape<double>& tape) { return f(tape.parameter(x)); },
             std::span<TensorD* const>(&ptr, 1), options)
      .max_rel_error;
}

}  // namespace loca
