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

#include "loca/objective.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "loca/errors.hpp"

namespace loca {

using ad::Var;

template <typename T>
ClusterTargets<T> assign_teacher_labels(const BasicTensor<T>& z_ref, const BasicTensor<T>& q,
                                        double tau_teacher) {
  require(tau_teacher > 0, ErrorKind::kParameter,
          "teacher temperature must be positive, got " + std::to_string(tau_teacher));
  require(z_ref.rank() == 2 && q.rank() == 2 && z_ref.dim(1) == q.dim(0), ErrorKind::kDimension,
          "teacher features " + shape_str(z_ref.shape()) + " vs prototypes " + shape_str(q.shape()));
  const std::size_t n = z_ref.dim(0), k = q.dim(1);
  ClusterTargets<T> out;
  out.tau_teacher = tau_teacher;
  out.y = BasicTensor<T>(Shape{n, k});
  ad::kernels::gemm_nn(n, q.dim(0), k, z_ref.data(), q.data(), out.y.data(), false);
  const T inv_tau = static_cast<T>(1.0 / tau_teacher);
  for (std::size_t r = 0; r < n; ++r) {
    T* row = &out.y(r, 0);
    T mx = row[0];
    for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, row[c]);
    T s = 0;
    for (std::size_t c = 0; c < k; ++c) {
      row[c] = std::exp((row[c] - mx) * inv_tau);
      s += row[c];
    }
    for (std::size_t c = 0; c < k; ++c) row[c] /= s;
  }
  return out;
}

namespace {

template <typename T>
double column_deviation(const BasicTensor<T>& a, double target) {
  const std::size_t n = a.dim(0), k = a.dim(1);
  std::vector<double> cols(k, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < k; ++c) cols[c] += a(r, c);
  double dev = 0;
  for (double s : cols) dev = std::max(dev, std::abs(s - target));
  return dev;
}

}  // namespace

template <typename T>
BasicTensor<T> sinkhorn_normalize(BasicTensor<T> a, std::size_t n_iters,
                                  std::vector<double>* deviation) {
  require(a.rank() == 2 && a.dim(0) > 0 && a.dim(1) > 0, ErrorKind::kDimension,
          "sinkhorn expects a non-empty matrix, got " + shape_str(a.shape()));
  const std::size_t n = a.dim(0), k = a.dim(1);
  for (std::size_t r = 0; r < n; ++r) {
    T s = 0;
    for (std::size_t c = 0; c < k; ++c) {
      require(a(r, c) >= 0, ErrorKind::kParameter, "sinkhorn input has a negative entry");
      s += a(r, c);
    }
    require(s > 0, ErrorKind::kDegenerateInput,
            "sinkhorn input row " + std::to_string(r) + " has no mass");
  }
  const double target = static_cast<double>(n) / static_cast<double>(k);
  if (deviation) deviation->assign(1, column_deviation(a, target));
  std::vector<double> cols(k);
  for (std::size_t it = 0; it < n_iters; ++it) {
    std::fill(cols.begin(), cols.end(), 0.0);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < k; ++c) cols[c] += a(r, c);
    for (std::size_t c = 0; c < k; ++c) cols[c] = cols[c] > 0 ? target / cols[c] : 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      T* row = &a(r, 0);
      double s = 0;
      for (std::size_t c = 0; c < k; ++c) {
        row[c] = static_cast<T>(row[c] * cols[c]);
        s += row[c];
      }
      const double inv = 1.0 / s;
      for (std::size_t c = 0; c < k; ++c) row[c] = static_cast<T>(row[c] * inv);
    }
    if (deviation) deviation->push_back(column_deviation(a, target));
  }
  return a;
}

template <typename T>
std::optional<Var<T>> cluster_loss(Var<T> student_logits, const ClusterTargets<T>& targets,
                                   const Correspondence& corr) {
  const auto positions = corr.supervised_positions();
  if (positions.empty()) return std::nullopt;
  const std::size_t k = targets.y.dim(1);
  require(student_logits.value().dim(1) == k, ErrorKind::kDimension,
          "student logits " + shape_str(student_logits.shape()) + " vs targets " +
              shape_str(targets.y.shape()));
  BasicTensor<T> y(Shape{positions.size(), k});
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const std::size_t h = *corr.h[positions[i]];
    require(h < targets.y.dim(0), ErrorKind::kRange, "correspondence outside the reference");
    std::copy_n(&targets.y(h, 0), k, &y(i, 0));
  }
  return ad::cross_entropy(ad::gather_rows(student_logits, positions), y);
}

template <typename T>
Var<T> memax_penalty(Var<T> probs) {
  return ad::scale(ad::entropy(ad::mean_rows(probs)), T{-1});
}

std::size_t visible_count(std::size_t n_ref, double eta) {
  require(eta >= 0 && eta <= 1, ErrorKind::kRange,
          "eta must lie in [0, 1], got " + std::to_string(eta));
  // The epsilon keeps decimal ratios such as 0.3 * 10 from rounding down.
  const auto dropped = static_cast<std::size_t>(std::floor(eta * static_cast<double>(n_ref) + 1e-9));
  return n_ref - std::min(dropped, n_ref);
}

MaskPlan mask_reference(std::size_t n_ref, double eta, bool structured, Rng& rng) {
  MaskPlan plan;
  plan.eta = eta;
  plan.structured = structured;
  const std::size_t keep = visible_count(n_ref, eta);
  if (keep == 0) return plan;
  if (structured) {
    const std::size_t start = uniform_index(rng, n_ref - keep + 1);
    plan.visible.resize(keep);
    std::iota(plan.visible.begin(), plan.visible.end(), start);
    return plan;
  }
  std::vector<std::size_t> all(n_ref);
  std::iota(all.begin(), all.end(), 0);
  for (std::size_t i = 0; i < keep; ++i) std::swap(all[i], all[i + uniform_index(rng, n_ref - i)]);
  plan.visible.assign(all.begin(), all.begin() + keep);
  std::sort(plan.visible.begin(), plan.visible.end());
  return plan;
}

template <typename T>
std::optional<Var<T>> position_loss(Var<T> logits, const Correspondence& corr) {
  const auto positions = corr.supervised_positions();
  if (positions.empty()) return std::nullopt;
  std::vector<std::size_t> targets;
  for (std::size_t j : positions) targets.push_back(*corr.h[j]);
  return ad::cross_entropy(ad::gather_rows(logits, positions),
                           std::span<const std::size_t>(targets));
}

template <typename T>
std::size_t count_argmax_hits(const BasicTensor<T>& logits, std::span<const std::size_t> rows,
                              std::span<const std::size_t> targets) {
  require(rows.size() == targets.size(), ErrorKind::kDimension, "rows and targets differ in length");
  std::size_t hits = 0;
  const std::size_t n = logits.dim(1);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const T* row = &logits(rows[i], 0);
    hits += static_cast<std::size_t>(std::max_element(row, row + n) - row) == targets[i];
  }
  return hits;
}

template <typename T>
LossResult<T> total_loss(Var<T> cluster_logits, Var<T> position_logits,
                         const BasicTensor<T>& targets, const std::vector<QuerySlice>& slices,
                         const LossOptions& options) {
  const std::size_t k = cluster_logits.value().dim(1);
  const std::size_t n_ref = position_logits.value().dim(1);
  require(targets.rank() == 2 && targets.dim(1) == k, ErrorKind::kDimension,
          "targets " + shape_str(targets.shape()) + " vs logits " +
              shape_str(cluster_logits.shape()));
  LossResult<T> res;
  res.pairs = slices.size();
  std::vector<std::size_t> rows, hard;
  std::vector<std::size_t> target_rows;
  std::vector<double> per_pair_count;
  for (const auto& s : slices) {
    require(s.row_end - s.row_begin == s.corr.h.size(), ErrorKind::kContract,
            "query slice rows do not match its correspondence");
    const auto pos = s.corr.supervised_positions();
    if (pos.empty()) {
      ++res.empty_pairs;
      continue;
    }
    per_pair_count.push_back(static_cast<double>(pos.size()));
    for (std::size_t j : pos) {
      const std::size_t h = *s.corr.h[j];
      require(h < n_ref, ErrorKind::kRange,
              "position target " + std::to_string(h) + " outside " + std::to_string(n_ref));
      rows.push_back(s.row_begin + j);
      hard.push_back(h);
      target_rows.push_back(s.ref_offset + h);
    }
  }
  const std::size_t active = per_pair_count.size();
  if (active == 0) {
    res.skipped = true;
    return res;
  }
  res.supervised = rows.size();
  res.omega_mean = static_cast<double>(rows.size()) / static_cast<double>(active);

  // Each pair contributes its own mean, then pairs are averaged.
  std::vector<T> weights;
  weights.reserve(rows.size());
  for (double c : per_pair_count)
    for (std::size_t i = 0; i < static_cast<std::size_t>(c); ++i)
      weights.push_back(static_cast<T>(1.0 / (c * static_cast<double>(active))));

  BasicTensor<T> y(Shape{rows.size(), k});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(target_rows[i] < targets.dim(0), ErrorKind::kRange, "reference offset out of range");
    std::copy_n(&targets(target_rows[i], 0), k, &y(i, 0));
  }
  Var<T> student = ad::gather_rows(cluster_logits, rows);
  Var<T> cl = ad::cross_entropy(student, y, std::span<const T>(weights));
  Var<T> pos_rows = ad::gather_rows(position_logits, rows);
  Var<T> pl = ad::cross_entropy(pos_rows, std::span<const std::size_t>(hard),
                                std::span<const T>(weights));
  Var<T> mm = memax_penalty(ad::softmax_rows(student, T{1}));
  Var<T> total = ad::add(cl, pl);
  if (options.lambda_memax != 0) total = ad::add(total, ad::scale(mm, static_cast<T>(options.lambda_memax)));

  res.total = total;
  res.cluster = cl.value().item();
  res.position = pl.value().item();
  res.memax = mm.value().item();
  res.entropy = -res.memax;
  res.total_value = total.value().item();
  std::vector<std::size_t> local(rows.size());
  std::iota(local.begin(), local.end(), 0);
  res.pos_accuracy = static_cast<double>(count_argmax_hits(pos_rows.value(), local, hard)) /
                     static_cast<double>(rows.size());
  return res;
}

#define LOCA_INSTANTIATE_OBJECTIVE(T)                                                         \
  template ClusterTargets<T> assign_teacher_labels(const BasicTensor<T>&, const BasicTensor<T>&, \
                                                   double);                                   \
  template BasicTensor<T> sinkhorn_normalize(BasicTensor<T>, std::size_t, std::vector<double>*); \
  template std::optional<Var<T>> cluster_loss(Var<T>, const ClusterTargets<T>&,              \
                                              const Correspondence&);                        \
  template Var<T> memax_penalty(Var<T>);                                                     \
  template std::optional<Var<T>> position_loss(Var<T>, const Correspondence&);               \
  template std::size_t count_argmax_hits(const BasicTensor<T>&, std::span<const std::size_t>, \
                                         std::span<const std::size_t>);                      \
  template LossResult<T> total_loss(Var<T>, Var<T>, const BasicTensor<T>&,                   \
                                    const std::vector<QuerySlice>&, const LossOptions&);

LOCA_INSTANTIATE_OBJECTIVE(float)
LOCA_INSTANTIATE_OBJECTIVE(double)

}  // namespace loca
