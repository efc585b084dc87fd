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

#include "loca/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "loca/errors.hpp"

namespace loca {

using ad::Tape;
using ad::Var;

void ViTConfig::validate() const {
  require(patch_size > 0, ErrorKind::kConfig, "patch_size must be positive");
  require(embed_dim > 0 && num_heads > 0 && embed_dim % num_heads == 0, ErrorKind::kConfig,
          "embed_dim " + std::to_string(embed_dim) + " not divisible by num_heads " +
              std::to_string(num_heads));
  require(mlp_ratio > 0 && proj_dim > 0, ErrorKind::kConfig, "mlp_ratio and proj_dim must be positive");
  require(num_prototypes >= 2, ErrorKind::kConfig, "need at least two prototypes");
  require(ref_grid.count() > 0, ErrorKind::kConfig, "empty reference grid");
  require(ln_eps > 0, ErrorKind::kConfig, "layer-norm eps must be positive");
}

bool is_student_only(const std::string& name) {
  return name.rfind("cross.", 0) == 0 || name.rfind("position.", 0) == 0 ||
         name == "placeholder";
}

namespace {

// Parameter kinds are recognised from their names so init and the visitor
// cannot drift apart.
bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

template <typename T>
void allocate(ModelParamsT<T>& m, const ViTConfig& c) {
  const std::size_t d = c.embed_dim, h = c.hidden_dim();
  auto block_shapes = [&](auto& b) {
    b.ln1_g = BasicTensor<T>(Shape{d});
    b.ln1_b = BasicTensor<T>(Shape{d});
    b.wq = BasicTensor<T>(Shape{d, d});
    b.bq = BasicTensor<T>(Shape{d});
    b.wk = BasicTensor<T>(Shape{d, d});
    b.bk = BasicTensor<T>(Shape{d});
    b.wv = BasicTensor<T>(Shape{d, d});
    b.bv = BasicTensor<T>(Shape{d});
    b.wo = BasicTensor<T>(Shape{d, d});
    b.bo = BasicTensor<T>(Shape{d});
    b.ln2_g = BasicTensor<T>(Shape{d});
    b.ln2_b = BasicTensor<T>(Shape{d});
    b.fc1_w = BasicTensor<T>(Shape{d, h});
    b.fc1_b = BasicTensor<T>(Shape{h});
    b.fc2_w = BasicTensor<T>(Shape{h, d});
    b.fc2_b = BasicTensor<T>(Shape{d});
  };
  m.patch_w = BasicTensor<T>(Shape{c.patch_dim(), d});
  m.patch_b = BasicTensor<T>(Shape{d});
  m.pos = BasicTensor<T>(Shape{c.num_positions(), d});
  m.blocks.resize(c.depth);
  for (auto& b : m.blocks) block_shapes(b);
  m.norm_g = BasicTensor<T>(Shape{d});
  m.norm_b = BasicTensor<T>(Shape{d});
  m.proj1_w = BasicTensor<T>(Shape{d, d});
  m.proj1_b = BasicTensor<T>(Shape{d});
  m.proj2_w = BasicTensor<T>(Shape{d, c.proj_dim});
  m.proj2_b = BasicTensor<T>(Shape{c.proj_dim});
  m.prototypes = BasicTensor<T>(Shape{c.proj_dim, c.num_prototypes});
  auto& x = m.cross;
  x.wq = BasicTensor<T>(Shape{d, d});
  x.bq = BasicTensor<T>(Shape{d});
  x.wk = BasicTensor<T>(Shape{d, d});
  x.bk = BasicTensor<T>(Shape{d});
  x.wv = BasicTensor<T>(Shape{d, d});
  x.bv = BasicTensor<T>(Shape{d});
  x.wo = BasicTensor<T>(Shape{d, d});
  x.bo = BasicTensor<T>(Shape{d});
  x.ln2_g = BasicTensor<T>(Shape{d});
  x.ln2_b = BasicTensor<T>(Shape{d});
  x.fc1_w = BasicTensor<T>(Shape{d, h});
  x.fc1_b = BasicTensor<T>(Shape{h});
  x.fc2_w = BasicTensor<T>(Shape{h, d});
  x.fc2_b = BasicTensor<T>(Shape{d});
  m.cross.lnq_g = BasicTensor<T>(Shape{d});
  m.cross.lnq_b = BasicTensor<T>(Shape{d});
  m.cross.lnkv_g = BasicTensor<T>(Shape{d});
  m.cross.lnkv_b = BasicTensor<T>(Shape{d});
  m.position_w = BasicTensor<T>(Shape{d, c.num_positions()});
  m.placeholder = BasicTensor<T>(Shape{1, d});
}

}  // namespace

template <typename T>
void normalize_prototypes(BasicTensor<T>& q) {
  require(q.rank() == 2, ErrorKind::kDimension, "prototypes must be a matrix");
  const std::size_t rows = q.dim(0), cols = q.dim(1);
  for (std::size_t k = 0; k < cols; ++k) {
    double s = 0;
    for (std::size_t r = 0; r < rows; ++r) s += double(q(r, k)) * double(q(r, k));
    require(s > 0, ErrorKind::kNumeric, "prototype column " + std::to_string(k) + " has zero norm");
    const double inv = 1.0 / std::sqrt(s);
    for (std::size_t r = 0; r < rows; ++r) q(r, k) = static_cast<T>(double(q(r, k)) * inv);
  }
}

namespace {

// Channel quarters hold sin(row), cos(row), sin(col), cos(col) at
// geometrically spaced frequencies. Leftover channels (d not a multiple of 4)
// keep their random init.
template <typename T>
void sincos_table(BasicTensor<T>& pos, const GridShape& grid) {
  const std::size_t d = pos.shape()[1], q = d / 4;
  for (std::size_t r = 0; r < grid.rows; ++r)
    for (std::size_t c = 0; c < grid.cols; ++c) {
      T* row = &pos(r * grid.cols + c, 0);
      for (std::size_t i = 0; i < q; ++i) {
        const double w = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(q));
        row[i] = static_cast<T>(std::sin(r * w));
        row[q + i] = static_cast<T>(std::cos(r * w));
        row[2 * q + i] = static_cast<T>(std::sin(c * w));
        row[3 * q + i] = static_cast<T>(std::cos(c * w));
      }
    }
}

}  // namespace

template <typename T>
ModelParamsT<T> init_params(const ViTConfig& cfg, Rng& rng) {
  cfg.validate();
  ModelParamsT<T> m;
  allocate(m, cfg);
  visit_model(m, [&](const std::string& name, BasicTensor<T>& t) {
    if (ends_with(name, ".gain")) {
      std::fill(t.data(), t.data() + t.size(), T{1});
    } else if (ends_with(name, ".bias") || ends_with(name, ".bq") || ends_with(name, ".bk") ||
               ends_with(name, ".bv") || ends_with(name, ".bo")) {
      // zero
    } else {
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(truncated_normal(rng, 0.02));
    }
  });
  if (cfg.sincos_pos_init) sincos_table(m.pos, cfg.ref_grid);
  normalize_prototypes(m.prototypes);
  return m;
}

template <typename T>
std::size_t parameter_count(const ModelParamsT<T>& m) {
  std::size_t n = 0;
  visit_model(m, [&](const std::string&, const BasicTensor<T>& t) { n += t.size(); });
  return n;
}

template <typename T>
void set_trainable(ModelParamsT<T>& m, bool trainable) {
  visit_model(m, [&](const std::string&, BasicTensor<T>& t) {
    t.set_requires_grad(trainable);
    if (!trainable) t.clear_grad();
  });
}

template <typename U, typename T>
ModelParamsT<U> cast_params(const ModelParamsT<T>& m) {
  ModelParamsT<U> out;
  out.blocks.resize(m.blocks.size());
  std::vector<const BasicTensor<T>*> src;
  visit_model(m, [&](const std::string&, const BasicTensor<T>& t) { src.push_back(&t); });
  std::size_t i = 0;
  visit_model(out, [&](const std::string&, BasicTensor<U>& t) { t = src[i++]->template cast<U>(); });
  return out;
}

template <typename T>
ModelVarsT<T> bind(Tape<T>& tape, ModelParamsT<T>& m) {
  ModelVarsT<T> vars;
  vars.blocks.resize(m.blocks.size());
  std::vector<BasicTensor<T>*> src;
  visit_model(m, [&](const std::string&, BasicTensor<T>& t) { src.push_back(&t); });
  std::size_t i = 0;
  visit_model(vars, [&](const std::string&, Var<T>& v) { v = tape.parameter(*src[i++]); });
  return vars;
}

template <typename T>
BasicTensor<T> interpolation_matrix(const GridShape& from, const GridShape& to) {
  require(from.count() > 0 && to.count() > 0, ErrorKind::kContract,
          "positional interpolation needs non-empty grids");
  BasicTensor<T> m(Shape{to.count(), from.count()});
  // 1-D bilinear weights with half-pixel centres.
  auto axis = [](std::size_t n_from, std::size_t n_to, std::size_t i, std::size_t& i0,
                 std::size_t& i1, double& w1) {
    double s = (static_cast<double>(i) + 0.5) * static_cast<double>(n_from) /
                   static_cast<double>(n_to) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(n_from - 1));
    i0 = static_cast<std::size_t>(std::floor(s));
    i1 = std::min(i0 + 1, n_from - 1);
    w1 = s - static_cast<double>(i0);
  };
  for (std::size_t r = 0; r < to.rows; ++r) {
    std::size_t r0, r1;
    double wr;
    axis(from.rows, to.rows, r, r0, r1, wr);
    for (std::size_t c = 0; c < to.cols; ++c) {
      std::size_t c0, c1;
      double wc;
      axis(from.cols, to.cols, c, c0, c1, wc);
      const std::size_t row = r * to.cols + c;
      m(row, r0 * from.cols + c0) += static_cast<T>((1 - wr) * (1 - wc));
      m(row, r0 * from.cols + c1) += static_cast<T>((1 - wr) * wc);
      m(row, r1 * from.cols + c0) += static_cast<T>(wr * (1 - wc));
      m(row, r1 * from.cols + c1) += static_cast<T>(wr * wc);
    }
  }
  return m;
}

template <typename T>
BasicTensor<T> interpolate_pos_embed(const BasicTensor<T>& table, const GridShape& from,
                                     const GridShape& to) {
  require(table.rank() == 2 && table.dim(0) == from.count(), ErrorKind::kDimension,
          "positional table " + shape_str(table.shape()) + " does not match grid " +
              std::to_string(from.rows) + "x" + std::to_string(from.cols));
  const BasicTensor<T> w = interpolation_matrix<T>(from, to);
  BasicTensor<T> out(Shape{to.count(), table.dim(1)});
  ad::kernels::gemm_nn(to.count(), from.count(), table.dim(1), w.data(), table.data(), out.data(),
                       false);
  return out;
}

template <typename T>
void TokenBatch<T>::add(BasicTensor<T> view_patches, std::vector<std::size_t> kept,
                        const GridShape& grid) {
  require(view_patches.rank() == 2 && view_patches.dim(0) == kept.size(), ErrorKind::kDimension,
          "patch rows " + shape_str(view_patches.shape()) + " vs " + std::to_string(kept.size()) +
              " kept tokens");
  for (std::size_t k : kept)
    require(k < grid.count(), ErrorKind::kRange, "kept token outside the view grid");
  patches.push_back(std::move(view_patches));
  positions.push_back(std::move(kept));
  grids.push_back(grid);
}

template <typename T>
std::size_t TokenBatch<T>::rows() const {
  std::size_t n = 0;
  for (const auto& p : positions) n += p.size();
  return n;
}

template <typename T>
std::vector<std::size_t> TokenBatch<T>::offsets() const {
  std::vector<std::size_t> off{0};
  for (const auto& p : positions) off.push_back(off.back() + p.size());
  return off;
}

namespace {

template <typename T>
Var<T> self_attention_block(const Block<Var<T>>& b, Var<T> x, std::size_t heads, T eps,
                            std::span<const ad::AttentionSegment> segs) {
  Var<T> h = ad::layer_norm(x, b.ln1_g, b.ln1_b, eps);
  Var<T> q = ad::linear(h, b.wq, b.bq);
  Var<T> k = ad::linear(h, b.wk, b.bk);
  Var<T> v = ad::linear(h, b.wv, b.bv);
  Var<T> a = ad::linear(ad::attention(q, k, v, heads, segs), b.wo, b.bo);
  x = ad::add(x, a);
  Var<T> u = ad::layer_norm(x, b.ln2_g, b.ln2_b, eps);
  u = ad::linear(ad::gelu(ad::linear(u, b.fc1_w, b.fc1_b)), b.fc2_w, b.fc2_b);
  return ad::add(x, u);
}

}  // namespace

template <typename T>
Var<T> encode(Tape<T>& tape, const ModelVarsT<T>& m, const ViTConfig& cfg,
              const TokenBatch<T>& batch) {
  require(batch.views() > 0, ErrorKind::kContract, "encode called with no views");
  const std::size_t rows = batch.rows(), pd = cfg.patch_dim();
  for (const auto& p : batch.positions)
    require(!p.empty(), ErrorKind::kContract, "view with no kept tokens");

  BasicTensor<T> pixels(Shape{rows, pd});
  BasicTensor<T> pos_weights(Shape{rows, cfg.num_positions()});
  std::vector<ad::AttentionSegment> segs;
  std::size_t r = 0;
  for (std::size_t v = 0; v < batch.views(); ++v) {
    require(batch.patches[v].dim(1) == pd, ErrorKind::kDimension,
            "patch width " + std::to_string(batch.patches[v].dim(1)) + " != " + std::to_string(pd));
    const BasicTensor<T> interp = interpolation_matrix<T>(cfg.ref_grid, batch.grids[v]);
    const std::size_t begin = r;
    for (std::size_t i = 0; i < batch.positions[v].size(); ++i, ++r) {
      std::copy_n(&batch.patches[v](i, 0), pd, &pixels(r, 0));
      std::copy_n(&interp(batch.positions[v][i], 0), cfg.num_positions(), &pos_weights(r, 0));
    }
    segs.push_back({begin, r, begin, r});
  }
  Var<T> x = ad::linear(tape.constant(std::move(pixels)), m.patch_w, m.patch_b);
  x = ad::add(x, ad::matmul(tape.constant(std::move(pos_weights)), m.pos));
  const T eps = static_cast<T>(cfg.ln_eps);
  for (const auto& b : m.blocks) x = self_attention_block(b, x, cfg.num_heads, eps, segs);
  return ad::layer_norm(x, m.norm_g, m.norm_b, eps);
}

template <typename T>
Var<T> encode_view(Tape<T>& tape, const ModelVarsT<T>& m, const ViTConfig& cfg,
                   const BasicTensor<T>& patches, const std::vector<std::size_t>& kept,
                   const GridShape& grid) {
  TokenBatch<T> batch;
  batch.add(patches, kept, grid);
  return encode(tape, m, cfg, batch);
}

template <typename T>
Var<T> project_features(const ModelVarsT<T>& m, Var<T> z) {
  Var<T> h = ad::gelu(ad::linear(z, m.proj1_w, m.proj1_b));
  return ad::l2_normalize_rows(ad::linear(h, m.proj2_w, m.proj2_b));
}

template <typename T>
Var<T> cross_attend(const ModelVarsT<T>& m, const ViTConfig& cfg, Var<T> zq, Var<T> zref,
                    std::span<const CrossGroup> groups, bool allow_placeholder) {
  const std::size_t n_ref = zref.valid() ? zref.value().dim(0) : 0;
  bool need_placeholder = false;
  for (const auto& g : groups) {
    require(g.q_begin <= g.q_end && g.q_end <= zq.value().dim(0) && g.kv_begin <= g.kv_end &&
                g.kv_end <= n_ref,
            ErrorKind::kContract, "cross-attention group out of range");
    if (g.kv_begin == g.kv_end) {
      require(allow_placeholder, ErrorKind::kContract,
              "cross-attention over an empty visible reference set");
      need_placeholder = true;
    }
  }
  Var<T> kv = zref;
  std::size_t placeholder_row = 0;
  if (need_placeholder) {
    placeholder_row = n_ref;
    kv = n_ref > 0 ? ad::concat_rows<T>({zref, m.placeholder}) : m.placeholder;
  }
  std::vector<ad::AttentionSegment> segs;
  for (const auto& g : groups) {
    if (g.q_begin == g.q_end) continue;
    if (g.kv_begin == g.kv_end)
      segs.push_back({g.q_begin, g.q_end, placeholder_row, placeholder_row + 1});
    else
      segs.push_back({g.q_begin, g.q_end, g.kv_begin, g.kv_end});
  }
  const auto& c = m.cross;
  const T eps = static_cast<T>(cfg.ln_eps);
  Var<T> hq = ad::layer_norm(zq, c.lnq_g, c.lnq_b, eps);
  Var<T> hkv = ad::layer_norm(kv, c.lnkv_g, c.lnkv_b, eps);
  Var<T> a = ad::attention(ad::linear(hq, c.wq, c.bq), ad::linear(hkv, c.wk, c.bk),
                           ad::linear(hkv, c.wv, c.bv), cfg.num_heads, segs);
  Var<T> x = ad::add(zq, ad::linear(a, c.wo, c.bo));
  Var<T> u = ad::layer_norm(x, c.ln2_g, c.ln2_b, eps);
  u = ad::linear(ad::gelu(ad::linear(u, c.fc1_w, c.fc1_b)), c.fc2_w, c.fc2_b);
  return ad::add(x, u);
}

template <typename T>
Var<T> position_logits(const ModelVarsT<T>& m, Var<T> g) {
  return ad::matmul(g, m.position_w);
}

#define LOCA_INSTANTIATE_ENCODER(T)                                                          \
  template void normalize_prototypes(BasicTensor<T>&);                                      \
  template ModelParamsT<T> init_params<T>(const ViTConfig&, Rng&);                          \
  template std::size_t parameter_count(const ModelParamsT<T>&);                             \
  template void set_trainable(ModelParamsT<T>&, bool);                                      \
  template ModelVarsT<T> bind(Tape<T>&, ModelParamsT<T>&);                                  \
  template BasicTensor<T> interpolation_matrix<T>(const GridShape&, const GridShape&);      \
  template BasicTensor<T> interpolate_pos_embed(const BasicTensor<T>&, const GridShape&,    \
                                                const GridShape&);                          \
  template struct TokenBatch<T>;                                                            \
  template Var<T> encode(Tape<T>&, const ModelVarsT<T>&, const ViTConfig&,                  \
                         const TokenBatch<T>&);                                             \
  template Var<T> encode_view(Tape<T>&, const ModelVarsT<T>&, const ViTConfig&,             \
                              const BasicTensor<T>&, const std::vector<std::size_t>&,       \
                              const GridShape&);                                            \
  template Var<T> project_features(const ModelVarsT<T>&, Var<T>);                           \
  template Var<T> cross_attend(const ModelVarsT<T>&, const ViTConfig&, Var<T>, Var<T>,       \
                               std::span<const CrossGroup>, bool);                          \
  template Var<T> position_logits(const ModelVarsT<T>&, Var<T>);

LOCA_INSTANTIATE_ENCODER(float)
LOCA_INSTANTIATE_ENCODER(double)

template ModelParamsT<double> cast_params<double, float>(const ModelParamsT<float>&);
template ModelParamsT<float> cast_params<float, double>(const ModelParamsT<double>&);
template ModelParamsT<float> cast_params<float, float>(const ModelParamsT<float>&);

}  // namespace loca
