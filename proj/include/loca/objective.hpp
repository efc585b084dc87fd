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

#ifndef LOCA_OBJECTIVE_HPP_
#define LOCA_OBJECTIVE_HPP_

#include <cstddef>
#include <optional>
#include <vector>

#include "loca/autodiff.hpp"
#include "loca/rng.hpp"
#include "loca/tensor.hpp"
#include "loca/viewgen.hpp"

namespace loca {

/// Row-stochastic soft pseudo-labels for reference tokens, [N_ref, K].
template <typename T>
struct ClusterTargets {
  BasicTensor<T> y;
  double tau_teacher = 0;
};

/// softmax(Z~ Q / tau) per row, computed outside any tape.
template <typename T>
ClusterTargets<T> assign_teacher_labels(const BasicTensor<T>& z_ref, const BasicTensor<T>& q,
                                        double tau_teacher);

/// Alternating column (to rows/K) and row (to 1) normalisation, n_iters
/// rounds, ending on rows. Columns with no mass are left at zero. When
/// deviation is given it receives the max |column sum - rows/K| before the
/// first round and after each round.
template <typename T>
BasicTensor<T> sinkhorn_normalize(BasicTensor<T> a, std::size_t n_iters,
                                  std::vector<double>* deviation = nullptr);

/// Mean soft-target cross-entropy over the supervised tokens of one query.
/// student_logits are already divided by the student temperature and hold
/// one row per kept query token. Returns nothing when omega is empty.
template <typename T>
std::optional<ad::Var<T>> cluster_loss(ad::Var<T> student_logits, const ClusterTargets<T>& targets,
                                       const Correspondence& corr);

/// -H(mean row) of a matrix of probability rows.
template <typename T>
ad::Var<T> memax_penalty(ad::Var<T> probs);

struct MaskPlan {
  double eta = 0;
  std::vector<std::size_t> visible;  // sorted
  bool structured = false;
};

/// Number of reference tokens kept visible: n_ref - floor(eta * n_ref).
std::size_t visible_count(std::size_t n_ref, double eta);

MaskPlan mask_reference(std::size_t n_ref, double eta, bool structured, Rng& rng);

/// Mean hard-target cross-entropy over omega; nothing when omega is empty.
template <typename T>
std::optional<ad::Var<T>> position_loss(ad::Var<T> logits, const Correspondence& corr);

/// One (query, sample) pair inside a batch: its rows in the stacked query
/// outputs and the first row of its reference inside the stacked targets.
struct QuerySlice {
  std::size_t row_begin = 0, row_end = 0;
  std::size_t ref_offset = 0;
  Correspondence corr;
};

struct LossOptions {
  double lambda_memax = 1.0;
};

template <typename T>
struct LossResult {
  ad::Var<T> total;  // invalid when skipped
  bool skipped = false;
  double total_value = 0, cluster = 0, position = 0, memax = 0;
  std::size_t pairs = 0, empty_pairs = 0, supervised = 0;
  double omega_mean = 0;
  double pos_accuracy = 0;
  double entropy = 0;  // H(mean student prediction), nats
};

/// Mean over pairs with non-empty omega of (cluster + position) plus
/// lambda * me-max over every supervised student row. cluster_logits
/// [rows, K] are divided by the student temperature; targets stack every
/// reference's (balanced) labels; position_logits are [rows, N_ref].
template <typename T>
LossResult<T> total_loss(ad::Var<T> cluster_logits, ad::Var<T> position_logits,
                         const BasicTensor<T>& targets, const std::vector<QuerySlice>& slices,
                         const LossOptions& options);

/// Number of listed rows whose argmax (ties to the smallest index) equals
/// the target.
template <typename T>
std::size_t count_argmax_hits(const BasicTensor<T>& logits, std::span<const std::size_t> rows,
                              std::span<const std::size_t> targets);

}  // namespace loca

#endif  // LOCA_OBJECTIVE_HPP_
