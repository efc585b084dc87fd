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

#ifndef LOCA_ENCODER_HPP_
#define LOCA_ENCODER_HPP_

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "loca/autodiff.hpp"
#include "loca/rng.hpp"
#include "loca/tensor.hpp"
#include "loca/viewgen.hpp"

namespace loca {

struct ViTConfig {
  std::size_t patch_size = 8;
  std::size_t embed_dim = 64;
  std::size_t depth = 4;
  std::size_t num_heads = 4;
  std::size_t mlp_ratio = 4;
  GridShape ref_grid{8, 8};
  std::size_t proj_dim = 64;
  std::size_t num_prototypes = 256;
  double ln_eps = 1e-6;
  /// Start the positional table from 2-D sine-cosine codes instead of
  /// small random values. It stays trainable either way.
  bool sincos_pos_init = true;

  std::size_t num_positions() const { return ref_grid.count(); }
  std::size_t patch_dim() const { return patch_size * patch_size * 3; }
  std::size_t hidden_dim() const { return embed_dim * mlp_ratio; }
  void validate() const;
};

/// Parameter layout shared by tensors (ModelParamsT) and tape handles
/// (ModelVarsT). Fields named cross_*, position_w and placeholder form the
/// student-only position head.
template <typename S>
struct Block {
  S ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
};

template <typename S>
struct CrossBlock {
  S lnq_g, lnq_b, lnkv_g, lnkv_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, fc1_w, fc1_b,
      fc2_w, fc2_b;
};

template <typename S>
struct Model {
  S patch_w, patch_b, pos;
  std::vector<Block<S>> blocks;
  S norm_g, norm_b;
  S proj1_w, proj1_b, proj2_w, proj2_b;
  S prototypes;  // [proj_dim, K], unit columns
  CrossBlock<S> cross;
  S position_w;   // [embed_dim, N_ref]
  S placeholder;  // [1, embed_dim]
};

template <typename S, typename F>
void visit_block(Block<S>& b, const std::string& p, F&& f) {
  f(p + "ln1.gain", b.ln1_g);
  f(p + "ln1.bias", b.ln1_b);
  f(p + "attn.wq", b.wq);
  f(p + "attn.bq", b.bq);
  f(p + "attn.wk", b.wk);
  f(p + "attn.bk", b.bk);
  f(p + "attn.wv", b.wv);
  f(p + "attn.bv", b.bv);
  f(p + "attn.wo", b.wo);
  f(p + "attn.bo", b.bo);
  f(p + "ln2.gain", b.ln2_g);
  f(p + "ln2.bias", b.ln2_b);
  f(p + "mlp.fc1.weight", b.fc1_w);
  f(p + "mlp.fc1.bias", b.fc1_b);
  f(p + "mlp.fc2.weight", b.fc2_w);
  f(p + "mlp.fc2.bias", b.fc2_b);
}

/// Calls f(name, slot) for every parameter in a fixed order.
template <typename S, typename F>
void visit_model(Model<S>& m, F&& f) {
  f("patch_embed.weight", m.patch_w);
  f("patch_embed.bias", m.patch_b);
  f("pos_embed", m.pos);
  for (std::size_t i = 0; i < m.blocks.size(); ++i)
    visit_block(m.blocks[i], "blocks." + std::to_string(i) + ".", f);
  f("norm.gain", m.norm_g);
  f("norm.bias", m.norm_b);
  f("proj.fc1.weight", m.proj1_w);
  f("proj.fc1.bias", m.proj1_b);
  f("proj.fc2.weight", m.proj2_w);
  f("proj.fc2.bias", m.proj2_b);
  f("prototypes", m.prototypes);
  auto& c = m.cross;
  f("cross.lnq.gain", c.lnq_g);
  f("cross.lnq.bias", c.lnq_b);
  f("cross.lnkv.gain", c.lnkv_g);
  f("cross.lnkv.bias", c.lnkv_b);
  f("cross.attn.wq", c.wq);
  f("cross.attn.bq", c.bq);
  f("cross.attn.wk", c.wk);
  f("cross.attn.bk", c.bk);
  f("cross.attn.wv", c.wv);
  f("cross.attn.bv", c.bv);
  f("cross.attn.wo", c.wo);
  f("cross.attn.bo", c.bo);
  f("cross.ln2.gain", c.ln2_g);
  f("cross.ln2.bias", c.ln2_b);
  f("cross.mlp.fc1.weight", c.fc1_w);
  f("cross.mlp.fc1.bias", c.fc1_b);
  f("cross.mlp.fc2.weight", c.fc2_w);
  f("cross.mlp.fc2.bias", c.fc2_b);
  f("position.weight", m.position_w);
  f("placeholder", m.placeholder);
}

template <typename S, typename F>
void visit_model(const Model<S>& m, F&& f) {
  visit_model(const_cast<Model<S>&>(m),
              [&](const std::string& name, S& slot) { f(name, static_cast<const S&>(slot)); });
}

/// True for the position head (cross block, W, placeholder), which the EMA
/// teacher does not mirror.
bool is_student_only(const std::string& name);

template <typename T>
using ModelParamsT = Model<BasicTensor<T>>;
using ModelParams = ModelParamsT<float>;
using ModelParamsD = ModelParamsT<double>;
template <typename T>
using ModelVarsT = Model<ad::Var<T>>;

/// Truncated-normal (std 0.02) weights, zero biases, unit gains, unit-norm
/// prototype columns.
template <typename T>
ModelParamsT<T> init_params(const ViTConfig& cfg, Rng& rng);

template <typename T>
std::size_t parameter_count(const ModelParamsT<T>& m);

template <typename T>
void set_trainable(ModelParamsT<T>& m, bool trainable);

template <typename U, typename T>
ModelParamsT<U> cast_params(const ModelParamsT<T>& m);

/// Rescales every prototype column to unit L2 norm.
template <typename T>
void normalize_prototypes(BasicTensor<T>& q);

/// Registers every parameter on the tape.
template <typename T>
ModelVarsT<T> bind(ad::Tape<T>& tape, ModelParamsT<T>& m);

/// [to.count(), from.count()] bilinear weights (half-pixel centres, clamped).
template <typename T>
BasicTensor<T> interpolation_matrix(const GridShape& from, const GridShape& to);

/// Positional table resampled from `from` to `to` (rows are grid cells).
template <typename T>
BasicTensor<T> interpolate_pos_embed(const BasicTensor<T>& table, const GridShape& from,
                                     const GridShape& to);

/// Patch rows of several views stacked for one fused encoder pass.
template <typename T>
struct TokenBatch {
  std::vector<BasicTensor<T>> patches;        // per view, [n_kept, patch_dim]
  std::vector<std::vector<std::size_t>> positions;
  std::vector<GridShape> grids;

  void add(BasicTensor<T> view_patches, std::vector<std::size_t> kept, const GridShape& grid);
  std::size_t views() const { return patches.size(); }
  std::size_t rows() const;
  /// Row offset of each view inside the stacked output; size views()+1.
  std::vector<std::size_t> offsets() const;
};

/// ViT over every view in the batch; attention never crosses views.
/// Returns [total_rows, embed_dim] after the final layer norm.
template <typename T>
ad::Var<T> encode(ad::Tape<T>& tape, const ModelVarsT<T>& m, const ViTConfig& cfg,
                  const TokenBatch<T>& batch);

template <typename T>
ad::Var<T> encode_view(ad::Tape<T>& tape, const ModelVarsT<T>& m, const ViTConfig& cfg,
                       const BasicTensor<T>& patches, const std::vector<std::size_t>& kept,
                       const GridShape& grid);

/// Two-layer GELU MLP followed by row L2 normalization.
template <typename T>
ad::Var<T> project_features(const ModelVarsT<T>& m, ad::Var<T> z);

/// Rows of query tokens [q_begin, q_end) attend to reference rows
/// [kv_begin, kv_end); an empty range selects the learned placeholder token.
struct CrossGroup {
  std::size_t q_begin, q_end, kv_begin, kv_end;
};

/// One pre-norm cross-attention block with MLP. zref may be invalid when
/// every group is empty. Empty groups are a contract error unless
/// allow_placeholder is set.
template <typename T>
ad::Var<T> cross_attend(const ModelVarsT<T>& m, const ViTConfig& cfg, ad::Var<T> zq,
                        ad::Var<T> zref, std::span<const CrossGroup> groups,
                        bool allow_placeholder);

/// logits = G W, [N_q, N_ref].
template <typename T>
ad::Var<T> position_logits(const ModelVarsT<T>& m, ad::Var<T> g);

}  // namespace loca

#endif  // LOCA_ENCODER_HPP_
