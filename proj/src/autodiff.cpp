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

#include "loca/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "loca/parallel.hpp"

namespace loca::ad {

// --- Tape -------------------------------------------------------------------

template <typename T>
Var<T> Tape<T>::push(std::unique_ptr<Node> node) {
  require(!consumed_, ErrorKind::kState, "recording on a consumed tape; call reset()");
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
void Tape<T>::check_owner(Var<T> v) const {
  require(v.tape() == this && v.id() < nodes_.size(), ErrorKind::kContract,
          "variable does not belong to this tape");
}

template <typename T>
Var<T> Tape<T>::constant(TensorT value) {
  auto node = std::make_unique<Node>();
  node->owned = std::move(value);
  return push(std::move(node));
}

template <typename T>
Var<T> Tape<T>::parameter(TensorT& param) {
  auto node = std::make_unique<Node>();
  node->external = &param;
  node->needs_grad = param.requires_grad();
  return push(std::move(node));
}

template <typename T>
Var<T> Tape<T>::record(TensorT value, std::initializer_list<Var<T>> inputs,
                       BackwardFn backward) {
  return record(std::move(value), std::vector<Var<T>>(inputs), std::move(backward));
}

template <typename T>
Var<T> Tape<T>::record(TensorT value, const std::vector<Var<T>>& inputs,
                       BackwardFn backward) {
  auto node = std::make_unique<Node>();
  node->owned = std::move(value);
  for (const auto& in : inputs) {
    check_owner(in);
    node->needs_grad = node->needs_grad || nodes_[in.id()]->needs_grad;
  }
  if (node->needs_grad) node->backward = std::move(backward);
  return push(std::move(node));
}

template <typename T>
const BasicTensor<T>& Tape<T>::value(Var<T> v) const {
  check_owner(v);
  const Node& n = *nodes_[v.id()];
  return n.external ? *n.external : n.owned;
}

template <typename T>
std::span<T> Tape<T>::adjoint(Var<T> v) {
  Node& n = *nodes_[v.id()];
  if (n.adj.empty()) n.adj.assign(value(v).size(), T{0});
  return n.adj;
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  check_owner(loss);
  require(!consumed_, ErrorKind::kState, "backward already ran on this tape");
  require(value(loss).rank() == 0, ErrorKind::kContract,
          "backward needs a scalar loss, got shape " + shape_str(value(loss).shape()));
  consumed_ = true;
  if (!nodes_[loss.id()]->needs_grad) return;
  adjoint(loss)[0] = T{1};
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = *nodes_[i];
    if (n.adj.empty() || !n.needs_grad) continue;
    if (n.backward) {
      n.backward(*this, n.adj);
    } else if (n.external != nullptr && n.external->requires_grad()) {
      auto g = n.external->grad();
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += n.adj[j];
    }
  }
  // Intermediate buffers are no longer needed.
  for (auto& n : nodes_) {
    n->backward = nullptr;
    std::vector<T>().swap(n->adj);
  }
}

template <typename T>
void Tape<T>::reset() {
  nodes_.clear();
  consumed_ = false;
}

// --- Kernels ----------------------------------------------------------------

namespace kernels {

template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c,
             bool accumulate) {
  parallel_for(
      m,
      [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
          T* crow = c + i * n;
          if (!accumulate) std::fill(crow, crow + n, T{0});
          const T* arow = a + i * k;
          for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
          }
        }
      },
      16);
}

template <typename T>
void gemm_tn_acc(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b,
                 T* c) {
  parallel_for(
      m,
      [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
          T* crow = c + i * n;
          for (std::size_t p = 0; p < k; ++p) {
            const T av = a[p * m + i];
            if (av == T{0}) continue;
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
          }
        }
      },
      16);
}

template <typename T>
void gemm_nt_acc(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b,
                 T* c) {
  std::vector<T> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_nn(m, k, n, a, bt.data(), c, true);
}

}  // namespace kernels

namespace {

template <typename T>
void require_matrix(const BasicTensor<T>& t, const char* op) {
  require(t.rank() == 2, ErrorKind::kDimension,
          std::string(op) + " expects a matrix, got " + shape_str(t.shape()));
}

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  require(a.shape() == b.shape(), ErrorKind::kDimension,
          std::string(op) + " shape mismatch: " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
}

template <typename T>
std::vector<T> resolve_weights(std::span<const T> weights, std::size_t rows) {
  if (weights.empty()) return std::vector<T>(rows, T{1} / static_cast<T>(std::max<std::size_t>(rows, 1)));
  require(weights.size() == rows, ErrorKind::kDimension,
          "row weight count " + std::to_string(weights.size()) + " != rows " +
              std::to_string(rows));
  return {weights.begin(), weights.end()};
}

// log-sum-exp and softmax of one row.
template <typename T>
T row_softmax(const T* in, T* out, std::size_t n) {
  T mx = -std::numeric_limits<T>::infinity();
  for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, in[j]);
  T total = 0;
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = std::exp(in[j] - mx);
    total += out[j];
  }
  for (std::size_t j = 0; j < n; ++j) out[j] /= total;
  return mx + std::log(total);
}

}  // namespace

// --- Ops --------------------------------------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const auto& A = a.value();
  const auto& B = b.value();
  require_matrix(A, "matmul");
  require_matrix(B, "matmul");
  require(A.dim(1) == B.dim(0), ErrorKind::kDimension,
          "matmul inner dimensions differ: " + shape_str(A.shape()) + " x " +
              shape_str(B.shape()));
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  BasicTensor<T> out(Shape{m, n});
  kernels::gemm_nn(m, k, n, A.data(), B.data(), out.data(), false);
  return a.tape()->record(std::move(out), {a, b},
                          [a, b, m, k, n](Tape<T>& t, std::span<const T> g) {
                            if (t.needs_grad(a))
                              kernels::gemm_nt_acc(m, n, k, g.data(), b.value().data(),
                                                   t.adjoint(a).data());
                            if (t.needs_grad(b))
                              kernels::gemm_tn_acc(k, m, n, a.value().data(), g.data(),
                                                   t.adjoint(b).data());
                          });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape(a.value(), b.value(), "add");
  BasicTensor<T> out = a.value();
  out.set_requires_grad(false);
  auto bv = b.value().values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::span<const T> g) {
    for (Var<T> in : {a, b}) {
      if (!t.needs_grad(in)) continue;
      auto adj = t.adjoint(in);
      for (std::size_t i = 0; i < g.size(); ++i) adj[i] += g[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape(a.value(), b.value(), "mul");
  BasicTensor<T> out(a.value().shape());
  auto av = a.value().values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::span<const T> g) {
    auto av = a.value().values();
    auto bv = b.value().values();
    if (t.needs_grad(a)) {
      auto adj = t.adjoint(a);
      for (std::size_t i = 0; i < g.size(); ++i) adj[i] += g[i] * bv[i];
    }
    if (t.needs_grad(b)) {
      auto adj = t.adjoint(b);
      for (std::size_t i = 0; i < g.size(); ++i) adj[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  BasicTensor<T> out(x.value().shape());
  auto xv = x.value().values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * factor;
  return x.tape()->record(std::move(out), {x}, [x, factor](Tape<T>& t, std::span<const T> g) {
    auto adj = t.adjoint(x);
    for (std::size_t i = 0; i < g.size(); ++i) adj[i] += g[i] * factor;
  });
}

template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  const auto& X = x.value();
  require_matrix(X, "add_bias");
  const std::size_t m = X.dim(0), n = X.dim(1);
  require(bias.value().size() == n, ErrorKind::kDimension,
          "add_bias: bias " + shape_str(bias.value().shape()) + " vs input " +
              shape_str(X.shape()));
  BasicTensor<T> out(Shape{m, n});
  auto bv = bias.value().values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) = X(i, j) + bv[j];
  return x.tape()->record(std::move(out), {x, bias},
                          [x, bias, m, n](Tape<T>& t, std::span<const T> g) {
                            if (t.needs_grad(x)) {
                              auto adj = t.adjoint(x);
                              for (std::size_t i = 0; i < g.size(); ++i) adj[i] += g[i];
                            }
                            if (t.needs_grad(bias)) {
                              auto adj = t.adjoint(bias);
                              for (std::size_t i = 0; i < m; ++i)
                                for (std::size_t j = 0; j < n; ++j) adj[j] += g[i * n + j];
                            }
                          });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  const T inv_sqrt2 = T{1} / std::sqrt(T{2});
  BasicTensor<T> out(x.value().shape());
  auto xv = x.value().values();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = T{0.5} * xv[i] * (T{1} + std::erf(xv[i] * inv_sqrt2));
  return x.tape()->record(std::move(out), {x}, [x, inv_sqrt2](Tape<T>& t, std::span<const T> g) {
    const T inv_sqrt_2pi = T{1} / std::sqrt(T{2} * static_cast<T>(M_PI));
    auto xv = x.value().values();
    auto adj = t.adjoint(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = xv[i];
      const T cdf = T{0.5} * (T{1} + std::erf(v * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T{-0.5} * v * v);
      adj[i] += g[i] * (cdf + v * pdf);
    }
  });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps) {
  const auto& X = x.value();
  require_matrix(X, "layer_norm");
  require(eps > T{0}, ErrorKind::kParameter, "layer_norm eps must be positive");
  const std::size_t m = X.dim(0), n = X.dim(1);
  require(gain.value().size() == n && bias.value().size() == n, ErrorKind::kDimension,
          "layer_norm affine size mismatch for input " + shape_str(X.shape()));
  auto stats = std::make_shared<std::vector<T>>(2 * m);  // mean, rstd
  BasicTensor<T> out(Shape{m, n});
  auto gv = gain.value().values();
  auto bv = bias.value().values();
  for (std::size_t i = 0; i < m; ++i) {
    auto r = X.row(i);
    T mu = 0;
    for (T v : r) mu += v;
    mu /= static_cast<T>(n);
    T var = 0;
    for (T v : r) var += (v - mu) * (v - mu);
    var /= static_cast<T>(n);
    const T rstd = T{1} / std::sqrt(var + eps);
    (*stats)[2 * i] = mu;
    (*stats)[2 * i + 1] = rstd;
    for (std::size_t j = 0; j < n; ++j) out(i, j) = (r[j] - mu) * rstd * gv[j] + bv[j];
  }
  return x.tape()->record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, stats, m, n](Tape<T>& t, std::span<const T> g) {
        const auto& X = x.value();
        auto gv = gain.value().values();
        const bool gx = t.needs_grad(x), gg = t.needs_grad(gain), gb = t.needs_grad(bias);
        std::span<T> ax = gx ? t.adjoint(x) : std::span<T>();
        std::span<T> ag = gg ? t.adjoint(gain) : std::span<T>();
        std::span<T> ab = gb ? t.adjoint(bias) : std::span<T>();
        std::vector<T> xhat(n), dxhat(n);
        for (std::size_t i = 0; i < m; ++i) {
          const T mu = (*stats)[2 * i], rstd = (*stats)[2 * i + 1];
          T mean_d = 0, mean_dx = 0;
          for (std::size_t j = 0; j < n; ++j) {
            const T gy = g[i * n + j];
            xhat[j] = (X(i, j) - mu) * rstd;
            dxhat[j] = gy * gv[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xhat[j];
            if (gg) ag[j] += gy * xhat[j];
            if (gb) ab[j] += gy;
          }
          if (!gx) continue;
          mean_d /= static_cast<T>(n);
          mean_dx /= static_cast<T>(n);
          for (std::size_t j = 0; j < n; ++j)
            ax[i * n + j] += rstd * (dxhat[j] - mean_d - xhat[j] * mean_dx);
        }
      });
}

template <typename T>
Var<T> softmax_rows(Var<T> x, T temperature) {
  const auto& X = x.value();
  require_matrix(X, "softmax_rows");
  require(temperature > T{0}, ErrorKind::kParameter,
          "softmax temperature must be positive, got " + std::to_string(temperature));
  const std::size_t m = X.dim(0), n = X.dim(1);
  BasicTensor<T> out(Shape{m, n});
  std::vector<T> scaled(n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) scaled[j] = X(i, j) / temperature;
    row_softmax(scaled.data(), &out(i, 0), n);
  }
  auto y = std::make_shared<BasicTensor<T>>(out);
  return x.tape()->record(std::move(out), {x},
                          [x, y, m, n, temperature](Tape<T>& t, std::span<const T> g) {
                            auto adj = t.adjoint(x);
                            for (std::size_t i = 0; i < m; ++i) {
                              T dot = 0;
                              for (std::size_t j = 0; j < n; ++j)
                                dot += g[i * n + j] * (*y)(i, j);
                              for (std::size_t j = 0; j < n; ++j)
                                adj[i * n + j] +=
                                    (*y)(i, j) * (g[i * n + j] - dot) / temperature;
                            }
                          });
}

template <typename T>
Var<T> l2_normalize_rows(Var<T> x) {
  const auto& X = x.value();
  require_matrix(X, "l2_normalize_rows");
  const std::size_t m = X.dim(0), n = X.dim(1);
  auto norms = std::make_shared<std::vector<T>>(m);
  BasicTensor<T> out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) {
    T ss = 0;
    for (T v : X.row(i)) ss += v * v;
    const T nrm = std::max(std::sqrt(ss), T{1e-12});
    (*norms)[i] = nrm;
    for (std::size_t j = 0; j < n; ++j) out(i, j) = X(i, j) / nrm;
  }
  auto y = std::make_shared<BasicTensor<T>>(out);
  return x.tape()->record(std::move(out), {x},
                          [x, y, norms, m, n](Tape<T>& t, std::span<const T> g) {
                            auto adj = t.adjoint(x);
                            for (std::size_t i = 0; i < m; ++i) {
                              T dot = 0;
                              for (std::size_t j = 0; j < n; ++j)
                                dot += g[i * n + j] * (*y)(i, j);
                              for (std::size_t j = 0; j < n; ++j)
                                adj[i * n + j] +=
                                    (g[i * n + j] - (*y)(i, j) * dot) / (*norms)[i];
                            }
                          });
}

template <typename T>
Var<T> gather_rows(Var<T> x, std::span<const std::size_t> rows) {
  const auto& X = x.value();
  require_matrix(X, "gather_rows");
  const std::size_t n = X.dim(1);
  auto idx = std::make_shared<std::vector<std::size_t>>(rows.begin(), rows.end());
  BasicTensor<T> out(Shape{idx->size(), n});
  for (std::size_t r = 0; r < idx->size(); ++r) {
    require((*idx)[r] < X.dim(0), ErrorKind::kRange,
            "gather_rows index " + std::to_string((*idx)[r]) + " out of " +
                std::to_string(X.dim(0)));
    std::copy_n(&X((*idx)[r], 0), n, &out(r, 0));
  }
  return x.tape()->record(std::move(out), {x}, [x, idx, n](Tape<T>& t, std::span<const T> g) {
    auto adj = t.adjoint(x);
    for (std::size_t r = 0; r < idx->size(); ++r)
      for (std::size_t j = 0; j < n; ++j) adj[(*idx)[r] * n + j] += g[r * n + j];
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), ErrorKind::kContract, "concat_rows of an empty list");
  const std::size_t n = parts.front().value().dim(1);
  std::size_t m = 0;
  for (const auto& p : parts) {
    require_matrix(p.value(), "concat_rows");
    require(p.value().dim(1) == n, ErrorKind::kDimension,
            "concat_rows column mismatch: " + shape_str(p.value().shape()));
    m += p.value().dim(0);
  }
  BasicTensor<T> out(Shape{m, n});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.value().values().begin(), p.value().values().end(), out.data() + offset);
    offset += p.value().size();
  }
  return parts.front().tape()->record(std::move(out), parts,
                                      [parts](Tape<T>& t, std::span<const T> g) {
                                        std::size_t off = 0;
                                        for (const auto& p : parts) {
                                          const std::size_t len = p.value().size();
                                          if (t.needs_grad(p)) {
                                            auto adj = t.adjoint(p);
                                            for (std::size_t i = 0; i < len; ++i)
                                              adj[i] += g[off + i];
                                          }
                                          off += len;
                                        }
                                      });
}

template <typename T>
Var<T> sum(Var<T> x) {
  T total = 0;
  for (T v : x.value().values()) total += v;
  return x.tape()->record(BasicTensor<T>::scalar(total), {x},
                          [x](Tape<T>& t, std::span<const T> g) {
                            auto adj = t.adjoint(x);
                            for (auto& a : adj) a += g[0];
                          });
}

template <typename T>
Var<T> mean(Var<T> x) {
  const std::size_t count = x.value().size();
  require(count > 0, ErrorKind::kContract, "mean of an empty tensor");
  return scale(sum(x), T{1} / static_cast<T>(count));
}

template <typename T>
Var<T> mean_rows(Var<T> x) {
  const auto& X = x.value();
  require_matrix(X, "mean_rows");
  const std::size_t m = X.dim(0), n = X.dim(1);
  require(m > 0, ErrorKind::kContract, "mean_rows of a matrix without rows");
  BasicTensor<T> out(Shape{1, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += X(i, j);
  for (std::size_t j = 0; j < n; ++j) out[j] /= static_cast<T>(m);
  return x.tape()->record(std::move(out), {x}, [x, m, n](Tape<T>& t, std::span<const T> g) {
    auto adj = t.adjoint(x);
    const T inv = T{1} / static_cast<T>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) adj[i * n + j] += g[j] * inv;
  });
}

template <typename T>
Var<T> entropy(Var<T> p) {
  T h = 0;
  for (T v : p.value().values()) {
    require(v >= T{0}, ErrorKind::kParameter, "entropy of a negative probability");
    if (v > T{0}) h -= v * std::log(v);
  }
  return p.tape()->record(BasicTensor<T>::scalar(h), {p}, [p](Tape<T>& t, std::span<const T> g) {
    auto pv = p.value().values();
    auto adj = t.adjoint(p);
    const T floor = std::numeric_limits<T>::min();
    for (std::size_t i = 0; i < pv.size(); ++i)
      adj[i] -= g[0] * (std::log(std::max(pv[i], floor)) + T{1});
  });
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, const BasicTensor<T>& targets,
                     std::span<const T> row_weights) {
  const auto& L = logits.value();
  require_matrix(L, "cross_entropy");
  require_same_shape(L, targets, "cross_entropy targets");
  const std::size_t m = L.dim(0), n = L.dim(1);
  auto w = std::make_shared<std::vector<T>>(resolve_weights(row_weights, m));
  auto probs = std::make_shared<BasicTensor<T>>(Shape{m, n});
  auto target_copy = std::make_shared<BasicTensor<T>>(targets);
  T loss = 0;
  for (std::size_t i = 0; i < m; ++i) {
    T mass = 0, dot = 0;
    for (std::size_t j = 0; j < n; ++j) {
      require(targets(i, j) >= T{0}, ErrorKind::kParameter, "negative soft target");
      mass += targets(i, j);
      dot += targets(i, j) * L(i, j);
    }
    require(std::abs(mass - T{1}) < T{1e-3}, ErrorKind::kParameter,
            "soft target row " + std::to_string(i) + " sums to " + std::to_string(mass));
    const T lse = row_softmax(&L(i, 0), &(*probs)(i, 0), n);
    loss += (*w)[i] * (lse * mass - dot);
  }
  return logits.tape()->record(
      BasicTensor<T>::scalar(loss), {logits},
      [logits, w, probs, target_copy, m, n](Tape<T>& t, std::span<const T> g) {
        auto adj = t.adjoint(logits);
        for (std::size_t i = 0; i < m; ++i) {
          T mass = 0;
          for (std::size_t j = 0; j < n; ++j) mass += (*target_copy)(i, j);
          const T s = g[0] * (*w)[i];
          for (std::size_t j = 0; j < n; ++j)
            adj[i * n + j] += s * ((*probs)(i, j) * mass - (*target_copy)(i, j));
        }
      });
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::size_t> targets,
                     std::span<const T> row_weights) {
  const auto& L = logits.value();
  require_matrix(L, "cross_entropy");
  const std::size_t m = L.dim(0), n = L.dim(1);
  require(targets.size() == m, ErrorKind::kDimension,
          "cross_entropy: " + std::to_string(targets.size()) + " targets for " +
              std::to_string(m) + " rows");
  auto idx = std::make_shared<std::vector<std::size_t>>(targets.begin(), targets.end());
  for (std::size_t c : *idx)
    require(c < n, ErrorKind::kRange,
            "class index " + std::to_string(c) + " outside [0," + std::to_string(n) + ")");
  auto w = std::make_shared<std::vector<T>>(resolve_weights(row_weights, m));
  auto probs = std::make_shared<BasicTensor<T>>(Shape{m, n});
  T loss = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const T lse = row_softmax(&L(i, 0), &(*probs)(i, 0), n);
    loss += (*w)[i] * (lse - L(i, (*idx)[i]));
  }
  return logits.tape()->record(BasicTensor<T>::scalar(loss), {logits},
                               [logits, w, probs, idx, m, n](Tape<T>& t, std::span<const T> g) {
                                 auto adj = t.adjoint(logits);
                                 for (std::size_t i = 0; i < m; ++i) {
                                   const T s = g[0] * (*w)[i];
                                   for (std::size_t j = 0; j < n; ++j)
                                     adj[i * n + j] += s * (*probs)(i, j);
                                   adj[i * n + (*idx)[i]] -= s;
                                 }
                               });
}

template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::size_t num_heads,
                 std::span<const AttentionSegment> segments) {
  const auto& Q = q.value();
  const auto& K = k.value();
  const auto& V = v.value();
  require_matrix(Q, "attention");
  require_matrix(K, "attention");
  require_same_shape(K, V, "attention keys/values");
  const std::size_t d = Q.dim(1);
  require(K.dim(1) == d, ErrorKind::kDimension,
          "attention width mismatch: " + shape_str(Q.shape()) + " vs " + shape_str(K.shape()));
  require(num_heads > 0 && d % num_heads == 0, ErrorKind::kDimension,
          "width " + std::to_string(d) + " not divisible by " + std::to_string(num_heads) +
              " heads");
  const std::size_t dh = d / num_heads;
  const T sc = T{1} / std::sqrt(static_cast<T>(dh));

  auto segs = std::make_shared<std::vector<AttentionSegment>>(segments.begin(), segments.end());
  std::vector<std::size_t> offsets;  // into the saved probability buffer
  std::size_t total = 0;
  for (const auto& s : *segs) {
    require(s.q_begin <= s.q_end && s.q_end <= Q.dim(0) && s.kv_begin < s.kv_end &&
                s.kv_end <= K.dim(0),
            ErrorKind::kContract, "attention segment out of range or without keys");
    offsets.push_back(total);
    total += (s.q_end - s.q_begin) * (s.kv_end - s.kv_begin) * num_heads;
  }
  auto probs = std::make_shared<std::vector<T>>(total);
  auto offs = std::make_shared<std::vector<std::size_t>>(std::move(offsets));

  BasicTensor<T> out(Shape{Q.dim(0), d});
  for (std::size_t si = 0; si < segs->size(); ++si) {
    const auto& s = (*segs)[si];
    const std::size_t nq = s.q_end - s.q_begin, nk = s.kv_end - s.kv_begin;
    for (std::size_t h = 0; h < num_heads; ++h) {
      T* P = probs->data() + (*offs)[si] + h * nq * nk;
      const std::size_t c0 = h * dh;
      for (std::size_t i = 0; i < nq; ++i) {
        const T* qi = &Q(s.q_begin + i, c0);
        T* prow = P + i * nk;
        for (std::size_t j = 0; j < nk; ++j) {
          const T* kj = &K(s.kv_begin + j, c0);
          T dot = 0;
          for (std::size_t c = 0; c < dh; ++c) dot += qi[c] * kj[c];
          prow[j] = dot * sc;
        }
        row_softmax(prow, prow, nk);
        T* oi = &out(s.q_begin + i, c0);
        for (std::size_t j = 0; j < nk; ++j) {
          const T* vj = &V(s.kv_begin + j, c0);
          for (std::size_t c = 0; c < dh; ++c) oi[c] += prow[j] * vj[c];
        }
      }
    }
  }

  return q.tape()->record(
      std::move(out), {q, k, v},
      [q, k, v, segs, offs, probs, num_heads, dh, d, sc](Tape<T>& t, std::span<const T> g) {
        const auto& Q = q.value();
        const auto& K = k.value();
        const auto& V = v.value();
        const bool gq = t.needs_grad(q), gk = t.needs_grad(k), gv = t.needs_grad(v);
        std::span<T> aq = gq ? t.adjoint(q) : std::span<T>();
        std::span<T> ak = gk ? t.adjoint(k) : std::span<T>();
        std::span<T> av = gv ? t.adjoint(v) : std::span<T>();
        std::vector<T> ds;
        for (std::size_t si = 0; si < segs->size(); ++si) {
          const auto& s = (*segs)[si];
          const std::size_t nq = s.q_end - s.q_begin, nk = s.kv_end - s.kv_begin;
          ds.assign(nk, T{0});
          for (std::size_t h = 0; h < num_heads; ++h) {
            const T* P = probs->data() + (*offs)[si] + h * nq * nk;
            const std::size_t c0 = h * dh;
            for (std::size_t i = 0; i < nq; ++i) {
              const T* go = g.data() + (s.q_begin + i) * d + c0;
              const T* prow = P + i * nk;
              T dot = 0;
              for (std::size_t j = 0; j < nk; ++j) {
                const T* vj = &V(s.kv_begin + j, c0);
                T dp = 0;
                for (std::size_t c = 0; c < dh; ++c) dp += go[c] * vj[c];
                ds[j] = dp;
                dot += dp * prow[j];
              }
              for (std::size_t j = 0; j < nk; ++j) ds[j] = prow[j] * (ds[j] - dot) * sc;
              for (std::size_t j = 0; j < nk; ++j) {
                const std::size_t kr = s.kv_begin + j;
                if (gq) {
                  T* aqi = aq.data() + (s.q_begin + i) * d + c0;
                  const T* kj = &K(kr, c0);
                  for (std::size_t c = 0; c < dh; ++c) aqi[c] += ds[j] * kj[c];
                }
                if (gk) {
                  T* akj = ak.data() + kr * d + c0;
                  const T* qi = &Q(s.q_begin + i, c0);
                  for (std::size_t c = 0; c < dh; ++c) akj[c] += ds[j] * qi[c];
                }
                if (gv) {
                  T* avj = av.data() + kr * d + c0;
                  for (std::size_t c = 0; c < dh; ++c) avj[c] += prow[j] * go[c];
                }
              }
            }
          }
        }
      });
}

#define LOCA_INSTANTIATE_AD(T)                                                           \
  template class Tape<T>;                                                                \
  template Var<T> matmul(Var<T>, Var<T>);                                                \
  template Var<T> add(Var<T>, Var<T>);                                                   \
  template Var<T> mul(Var<T>, Var<T>);                                                   \
  template Var<T> scale(Var<T>, T);                                                      \
  template Var<T> add_bias(Var<T>, Var<T>);                                              \
  template Var<T> gelu(Var<T>);                                                          \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                                 \
  template Var<T> softmax_rows(Var<T>, T);                                               \
  template Var<T> l2_normalize_rows(Var<T>);                                             \
  template Var<T> gather_rows(Var<T>, std::span<const std::size_t>);                     \
  template Var<T> concat_rows(const std::vector<Var<T>>&);                               \
  template Var<T> sum(Var<T>);                                                           \
  template Var<T> mean(Var<T>);                                                          \
  template Var<T> mean_rows(Var<T>);                                                     \
  template Var<T> entropy(Var<T>);                                                       \
  template Var<T> cross_entropy(Var<T>, const BasicTensor<T>&, std::span<const T>);      \
  template Var<T> cross_entropy(Var<T>, std::span<const std::size_t>, std::span<const T>); \
  template Var<T> attention(Var<T>, Var<T>, Var<T>, std::size_t,                         \
                            std::span<const AttentionSegment>);                          \
  template void kernels::gemm_nn(std::size_t, std::size_t, std::size_t, const T*,        \
                                 const T*, T*, bool);                                    \
  template void kernels::gemm_tn_acc(std::size_t, std::size_t, std::size_t, const T*,    \
                                     const T*, T*);                                      \
  template void kernels::gemm_nt_acc(std::size_t, std::size_t, std::size_t, const T*,    \
                                     const T*, T*);

LOCA_INSTANTIATE_AD(float)
LOCA_INSTANTIATE_AD(double)

}  // namespace loca::ad
