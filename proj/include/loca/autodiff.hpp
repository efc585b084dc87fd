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

#ifndef LOCA_AUTODIFF_HPP_
#define LOCA_AUTODIFF_HPP_

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "loca/tensor.hpp"

namespace loca::ad {

template <typename T>
class Tape;

/// Handle to a value recorded on a tape.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const BasicTensor<T>& value() const { return tape_->value(*this); }
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Tape<T>* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Ordered record of operations. Values are appended in execution order so
/// the list is topologically sorted by construction; backward walks it in
/// reverse exactly once.
template <typename T>
class Tape {
 public:
  using TensorT = BasicTensor<T>;
  /// Receives the adjoint of the node's output and pushes it to inputs.
  using BackwardFn = std::function<void(Tape&, std::span<const T>)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Owned value that never receives a gradient.
  Var<T> constant(TensorT value);
  /// References an external tensor. When it has requires_grad set, backward
  /// accumulates into its grad buffer.
  Var<T> parameter(TensorT& param);

  /// Used by op implementations. The closure is dropped when no input needs
  /// a gradient.
  Var<T> record(TensorT value, std::initializer_list<Var<T>> inputs, BackwardFn backward);
  Var<T> record(TensorT value, const std::vector<Var<T>>& inputs, BackwardFn backward);

  const TensorT& value(Var<T> v) const;
  bool needs_grad(Var<T> v) const { return nodes_[v.id()]->needs_grad; }
  /// Adjoint buffer of a node, allocated zeroed on first access.
  std::span<T> adjoint(Var<T> v);

  void backward(Var<T> loss);
  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }
  void reset();

 private:
  struct Node {
    TensorT owned;
    TensorT* external = nullptr;
    std::vector<T> adj;
    bool needs_grad = false;
    BackwardFn backward;
  };

  Var<T> push(std::unique_ptr<Node> node);
  void check_owner(Var<T> v) const;

  std::vector<std::unique_ptr<Node>> nodes_;
  bool consumed_ = false;
};

/// One attention group: query rows [q_begin, q_end) attend to key/value rows
/// [kv_begin, kv_end). Self-attention over a stack of views uses one segment
/// per view with identical ranges.
struct AttentionSegment {
  std::size_t q_begin, q_end, kv_begin, kv_end;
};

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> x, T factor);
/// x[m,n] + bias[n] broadcast over rows.
template <typename T> Var<T> add_bias(Var<T> x, Var<T> bias);
template <typename T> Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias) {
  return add_bias(matmul(x, weight), bias);
}
template <typename T> Var<T> gelu(Var<T> x);
template <typename T> Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps);
template <typename T> Var<T> softmax_rows(Var<T> x, T temperature);
template <typename T> Var<T> l2_normalize_rows(Var<T> x);
template <typename T> Var<T> gather_rows(Var<T> x, std::span<const std::size_t> rows);
template <typename T> Var<T> concat_rows(const std::vector<Var<T>>& parts);
template <typename T> Var<T> sum(Var<T> x);
template <typename T> Var<T> mean(Var<T> x);
/// Column means, [m,n] -> [1,n].
template <typename T> Var<T> mean_rows(Var<T> x);
/// -sum p log p over all entries (nats).
template <typename T> Var<T> entropy(Var<T> p);

/// sum_r w_r * CE(softmax(logits_r), targets_r). Empty weights means 1/m each.
template <typename T>
Var<T> cross_entropy(Var<T> logits, const BasicTensor<T>& targets,
                     std::span<const T> row_weights = {});
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::size_t> targets,
                     std::span<const T> row_weights = {});

/// Multi-head scaled dot-product attention, q:[Nq,d] k,v:[Nk,d] -> [Nq,d].
template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::size_t num_heads,
                 std::span<const AttentionSegment> segments);

namespace kernels {
/// C[m,n] (+)= A[m,k] B[k,n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c,
             bool accumulate);
/// C[m,n] += A[k,m]^T B[k,n]
template <typename T>
void gemm_tn_acc(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c);
/// C[m,n] += A[m,k] B[n,k]^T
template <typename T>
void gemm_nt_acc(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c);
}  // namespace kernels

}  // namespace loca::ad

#endif  // LOCA_AUTODIFF_HPP_
