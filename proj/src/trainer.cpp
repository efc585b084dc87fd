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

#include "loca/trainer.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "loca/errors.hpp"
#include "loca/parallel.hpp"

namespace loca {

using ad::Tape;
using ad::Var;

namespace {

// Stream tags keep init, shuffling and sampling draws independent.
constexpr std::uint64_t kInitTag = 0x1417;
constexpr std::uint64_t kShuffleTag = 0x5f1e;
constexpr std::uint64_t kSampleTag = 0x5a3b;

void check(bool ok, const char* key, const std::string& what) {
  if (!ok) fail(ErrorKind::kConfig, std::string(key) + ": " + what);
}

template <typename T>
BasicTensor<T> as(const Tensor& t) {
  if constexpr (std::is_same_v<T, float>)
    return t;
  else
    return t.template cast<T>();
}

}  // namespace

const char* preset_name(GeometryPreset preset) {
  return preset == GeometryPreset::kPaper ? "paper" : "desk";
}

void TrainConfig::validate() const {
  model.validate();
  if (!(eta >= 0.0 && eta <= 1.0))
    fail(ErrorKind::kRange, "eta must lie in [0, 1], got " + std::to_string(eta));
  check(total_epochs >= 1, "total_epochs", "must be at least 1");
  check(warmup_epochs < total_epochs, "warmup_epochs", "must be smaller than total_epochs");
  check(batch_size >= 1, "batch_size", "must be at least 1");
  check(ema_momentum_start >= 0 && ema_momentum_start <= 1, "ema_momentum_start",
        "must lie in [0, 1]");
  check(ema_momentum_end >= ema_momentum_start && ema_momentum_end <= 1, "ema_momentum_end",
        "must lie in [ema_momentum_start, 1]");
  check(base_lr >= 0, "base_lr", "must be non-negative");
  check(final_lr >= 0, "final_lr", "must be non-negative");
  check(weight_decay >= 0, "weight_decay", "must be non-negative");
  check(beta1 >= 0 && beta1 < 1, "beta1", "must lie in [0, 1)");
  check(beta2 >= 0 && beta2 < 1, "beta2", "must lie in [0, 1)");
  check(adam_eps > 0, "adam_eps", "must be positive");
  check(queries_per_reference >= 1, "queries_per_reference", "must be at least 1");
  check(query_keep_ratio > 0 && query_keep_ratio <= 1, "query_keep_ratio", "must lie in (0, 1]");
  check(tau_teacher > 0, "tau_teacher", "must be positive");
  check(tau_student > 0, "tau_student", "must be positive");
  check(lambda_memax >= 0, "lambda_memax", "must be non-negative");
  check(augment.patch_size == model.patch_size, "patch_size",
        "augmentation and model patch sizes differ");
  check(augment.reference_size % model.patch_size == 0, "reference_size",
        "not divisible by the patch size");
  check(augment.query_size % model.patch_size == 0, "query_size",
        "not divisible by the patch size");
  const std::size_t cells = augment.reference_size / model.patch_size;
  check(model.ref_grid.rows == cells && model.ref_grid.cols == cells, "reference_size",
        "does not match the positional grid");
}

TrainConfig desk_config() { return TrainConfig{}; }

TrainConfig paper_config() {
  TrainConfig c;
  c.preset = GeometryPreset::kPaper;
  c.model.patch_size = 16;
  c.model.embed_dim = 768;
  c.model.depth = 12;
  c.model.num_heads = 12;
  c.model.mlp_ratio = 4;
  c.model.ref_grid = {14, 14};
  c.model.proj_dim = 256;
  c.model.num_prototypes = 4096;
  c.augment.patch_size = 16;
  c.augment.reference_size = 224;
  c.augment.query_size = 96;
  c.batch_size = 1024;
  c.warmup_epochs = 15;
  c.total_epochs = 600;
  return c;
}

TrainConfig preset_config(GeometryPreset preset) {
  return preset == GeometryPreset::kPaper ? paper_config() : desk_config();
}

ConfigHash geometry_hash(const TrainConfig& cfg) {
  std::ostringstream os;
  const auto& m = cfg.model;
  os << "loca-geometry-v1;patch=" << m.patch_size << ";ref=" << cfg.augment.reference_size
     << ";query=" << cfg.augment.query_size << ";grid=" << m.ref_grid.rows << 'x'
     << m.ref_grid.cols << ";dim=" << m.embed_dim << ";depth=" << m.depth
     << ";heads=" << m.num_heads << ";mlp=" << m.mlp_ratio << ";proj=" << m.proj_dim
     << ";k=" << m.num_prototypes;
  const std::string s = os.str();
  ConfigHash h{};
  unsigned int len = 0;
  require(EVP_Digest(s.data(), s.size(), h.data(), &len, EVP_sha256(), nullptr) == 1 &&
              len == h.size(),
          ErrorKind::kState, "SHA-256 digest failed");
  return h;
}

std::string hex(const ConfigHash& hash) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  for (auto b : hash) {
    s.push_back(digits[b >> 4]);
    s.push_back(digits[b & 15]);
  }
  return s;
}

double cosine_value(std::size_t step, std::size_t total_steps, std::size_t warmup_steps,
                    double start, double end) {
  require(total_steps > 0, ErrorKind::kConfig, "schedule with zero total steps");
  require(step <= total_steps, ErrorKind::kRange,
          "schedule step " + std::to_string(step) + " beyond " + std::to_string(total_steps));
  warmup_steps = std::min(warmup_steps, total_steps);
  if (step < warmup_steps)
    return start * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (step == total_steps) return end;
  const double t = static_cast<double>(step - warmup_steps) /
                   static_cast<double>(total_steps - warmup_steps);
  return start + (end - start) * 0.5 * (1.0 - std::cos(M_PI * t));
}

double Schedule::lr(std::size_t step) const {
  return cosine_value(std::min(step, total_steps), total_steps, warmup_steps, base_lr, final_lr);
}

double Schedule::momentum(std::size_t step) const {
  return cosine_value(std::min(step, total_steps), total_steps, 0, momentum_start, momentum_end);
}

Schedule make_schedule(const TrainConfig& cfg, std::size_t corpus_size) {
  require(corpus_size > 0, ErrorKind::kContract, "empty training corpus");
  Schedule s;
  s.steps_per_epoch = (corpus_size + cfg.batch_size - 1) / cfg.batch_size;
  s.total_steps = s.steps_per_epoch * cfg.total_epochs;
  if (cfg.max_steps > 0) s.total_steps = std::min(s.total_steps, cfg.max_steps);
  s.warmup_steps = std::min(s.steps_per_epoch * cfg.warmup_epochs, s.total_steps);
  s.base_lr = cfg.base_lr;
  s.final_lr = cfg.final_lr;
  s.momentum_start = cfg.ema_momentum_start;
  s.momentum_end = cfg.ema_momentum_end;
  return s;
}

OptimizerState init_optimizer(const ModelParams& params) {
  OptimizerState s;
  visit_model(params, [&](const std::string&, const Tensor& t) {
    s.m.emplace_back(t.shape());
    s.v.emplace_back(t.shape());
  });
  return s;
}

void adamw_step(ModelParams& params, OptimizerState& state, const AdamWOptions& opt) {
  std::vector<std::pair<std::string, Tensor*>> list;
  visit_model(params, [&](const std::string& name, Tensor& t) { list.emplace_back(name, &t); });
  require(list.size() == state.m.size() && list.size() == state.v.size(), ErrorKind::kContract,
          "optimizer state does not match the parameter list");
  for (auto& [name, t] : list) {
    if (!t->requires_grad() || !t->has_grad()) continue;
    for (float g : std::as_const(*t).grad())
      if (!std::isfinite(g)) fail(ErrorKind::kNumeric, "non-finite gradient in parameter " + name);
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < list.size(); ++p) {
    Tensor& t = *list[p].second;
    if (!t.requires_grad()) continue;
    Tensor& m = state.m[p];
    Tensor& v = state.v[p];
    require(m.shape() == t.shape() && v.shape() == t.shape(), ErrorKind::kDimension,
            "moment buffer shape differs for " + list[p].first);
    const bool has = t.has_grad();
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double g = has ? static_cast<double>(std::as_const(t).grad()[i]) : 0.0;
      const double mi = opt.beta1 * m[i] + (1.0 - opt.beta1) * g;
      const double vi = opt.beta2 * v[i] + (1.0 - opt.beta2) * g * g;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double update = (mi / bc1) / (std::sqrt(vi / bc2) + opt.eps) + opt.weight_decay * t[i];
      t[i] = static_cast<float>(t[i] - opt.lr * update);
    }
  }
  normalize_prototypes(params.prototypes);
}

void ema_update(ModelParams& teacher, const ModelParams& student, double m) {
  require(m >= 0 && m <= 1, ErrorKind::kParameter,
          "EMA momentum must lie in [0, 1], got " + std::to_string(m));
  std::vector<const Tensor*> src;
  visit_model(student, [&](const std::string&, const Tensor& t) { src.push_back(&t); });
  std::size_t i = 0;
  visit_model(teacher, [&](const std::string& name, Tensor& t) {
    require(i < src.size(), ErrorKind::kContract, "teacher has more tensors than student");
    const Tensor& s = *src[i++];
    require(s.shape() == t.shape(), ErrorKind::kContract,
            "EMA shape mismatch for " + name + ": " + shape_str(t.shape()) + " vs " +
                shape_str(s.shape()));
    if (is_student_only(name)) return;
    if (m == 0.0) {
      std::copy(s.values().begin(), s.values().end(), t.values().begin());
      return;
    }
    for (std::size_t k = 0; k < t.size(); ++k)
      t[k] = static_cast<float>(m * t[k] + (1.0 - m) * s[k]);
  });
  require(i == src.size(), ErrorKind::kContract, "student has more tensors than teacher");
}

TrainingSample make_training_sample(const Image& image, const TrainConfig& cfg, Rng& rng) {
  TrainingSample s;
  const auto rrec = sample_view_record(ViewRole::kReference, rng, cfg.augment);
  s.reference = render_view(image, rrec, cfg.model.patch_size);
  for (std::size_t q = 0; q < cfg.queries_per_reference; ++q) {
    const auto rec = sample_view_record(ViewRole::kQuery, rng, cfg.augment);
    View v = drop_query_tokens(render_view(image, rec, cfg.model.patch_size),
                               q == 0 ? DropMode::kRandom : DropMode::kFocal,
                               cfg.query_keep_ratio, rng);
    s.corr.push_back(correspondence_nearest(v, s.reference));
    s.queries.push_back(std::move(v));
  }
  s.mask = mask_reference(cfg.model.num_positions(), cfg.eta, cfg.structured_mask, rng);
  return s;
}

template <typename T>
BatchForward<T> forward_batch(Tape<T>& tape, const ModelVarsT<T>& student,
                              ModelParamsT<T>& teacher, const TrainConfig& cfg,
                              const std::vector<TrainingSample>& samples) {
  require(!samples.empty(), ErrorKind::kContract, "empty batch");
  const std::size_t n_ref = cfg.model.num_positions();
  const std::size_t d = cfg.model.embed_dim;

  // Teacher side: no gradients, own tape.
  Tape<T> ttape;
  const auto tv = bind(ttape, teacher);
  TokenBatch<T> refs;
  for (const auto& s : samples) {
    require(s.reference.grid == cfg.model.ref_grid && s.reference.kept_tokens.size() == n_ref,
            ErrorKind::kContract, "reference view does not cover the positional grid");
    refs.add(as<T>(patch_pixels(s.reference)), s.reference.kept_tokens, s.reference.grid);
  }
  const Var<T> zr = encode(ttape, tv, cfg.model, refs);
  BasicTensor<T> targets =
      assign_teacher_labels(project_features(tv, zr).value(), teacher.prototypes, cfg.tau_teacher)
          .y;
  if (cfg.use_sinkhorn) targets = sinkhorn_normalize(std::move(targets), cfg.sinkhorn_iters);

  std::vector<std::size_t> kv_begin(samples.size()), kv_end(samples.size());
  std::vector<std::size_t> visible_rows;
  for (std::size_t b = 0; b < samples.size(); ++b) {
    kv_begin[b] = visible_rows.size();
    for (std::size_t v : samples[b].mask.visible) {
      require(v < n_ref, ErrorKind::kRange, "visible reference token out of range");
      visible_rows.push_back(b * n_ref + v);
    }
    kv_end[b] = visible_rows.size();
  }
  Var<T> kv;
  if (!visible_rows.empty()) {
    BasicTensor<T> rows(Shape{visible_rows.size(), d});
    for (std::size_t i = 0; i < visible_rows.size(); ++i)
      std::copy_n(&zr.value()(visible_rows[i], 0), d, &rows(i, 0));
    kv = tape.constant(std::move(rows));
  }

  // Student side.
  TokenBatch<T> qs;
  for (const auto& s : samples) {
    require(s.queries.size() == s.corr.size(), ErrorKind::kContract,
            "sample has mismatched queries and correspondences");
    for (std::size_t q = 0; q < s.queries.size(); ++q) {
      require(s.corr[q].h.size() == s.queries[q].kept_tokens.size(), ErrorKind::kContract,
              "correspondence does not match the query's kept tokens");
      qs.add(as<T>(patch_pixels(s.queries[q])), s.queries[q].kept_tokens, s.queries[q].grid);
    }
  }
  const auto offsets = qs.offsets();
  const Var<T> zq = encode(tape, student, cfg.model, qs);

  BatchForward<T> out;
  out.cluster_logits = ad::scale(ad::matmul(project_features(student, zq), student.prototypes),
                                 static_cast<T>(1.0 / cfg.tau_student));
  std::vector<CrossGroup> groups;
  std::size_t view = 0;
  for (std::size_t b = 0; b < samples.size(); ++b)
    for (std::size_t q = 0; q < samples[b].queries.size(); ++q, ++view) {
      groups.push_back({offsets[view], offsets[view + 1], kv_begin[b], kv_end[b]});
      out.slices.push_back({offsets[view], offsets[view + 1], b * n_ref, samples[b].corr[q]});
    }
  out.position_logits = position_logits(student, cross_attend(student, cfg.model, zq, kv, groups, true));
  out.loss = total_loss(out.cluster_logits, out.position_logits, targets, out.slices,
                        LossOptions{cfg.lambda_memax});
  return out;
}

template BatchForward<float> forward_batch(Tape<float>&, const ModelVarsT<float>&,
                                           ModelParamsT<float>&, const TrainConfig&,
                                           const std::vector<TrainingSample>&);
template BatchForward<double> forward_batch(Tape<double>&, const ModelVarsT<double>&,
                                            ModelParamsT<double>&, const TrainConfig&,
                                            const std::vector<TrainingSample>&);

TrainState init_train_state(const TrainConfig& cfg) {
  cfg.validate();
  TrainState st;
  st.cfg = cfg;
  Rng rng = derive_stream(cfg.seed, {kInitTag});
  st.student = init_params<float>(cfg.model, rng);
  st.teacher = st.student;
  set_trainable(st.student, true);
  set_trainable(st.teacher, false);
  st.opt = init_optimizer(st.student);
  return st;
}

StepMetrics train_step(TrainState& state, const Schedule& schedule,
                       const std::vector<TrainingSample>& samples) {
  StepMetrics m;
  m.step = state.step;
  m.epoch = schedule.steps_per_epoch ? state.step / schedule.steps_per_epoch : 0;
  m.lr = schedule.lr(state.step);
  m.momentum = schedule.momentum(state.step);

  visit_model(state.student, [](const std::string&, Tensor& t) { t.zero_grad(); });
  Tape<float> tape;
  const auto vars = bind(tape, state.student);
  const auto fw = forward_batch(tape, vars, state.teacher, state.cfg, samples);
  const auto& r = fw.loss;
  m.pairs = r.pairs;
  m.empty_pairs = r.empty_pairs;
  m.skipped = r.skipped;
  if (!r.skipped) {
    m.loss = r.total_value;
    m.cluster = r.cluster;
    m.position = r.position;
    m.memax = r.memax;
    m.pos_accuracy = r.pos_accuracy;
    m.entropy = r.entropy;
    m.omega_mean = r.omega_mean;
    tape.backward(r.total);
    const auto& c = state.cfg;
    adamw_step(state.student, state.opt, {m.lr, c.weight_decay, c.beta1, c.beta2, c.adam_eps});
    ema_update(state.teacher, state.student, m.momentum);
  }
  ++state.step;
  return m;
}

std::vector<std::size_t> batch_indices(const TrainConfig& cfg, std::size_t corpus_size,
                                       std::size_t step) {
  require(corpus_size > 0, ErrorKind::kContract, "empty training corpus");
  const std::size_t per_epoch = (corpus_size + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t epoch = step / per_epoch, b = step % per_epoch;
  std::vector<std::size_t> perm(corpus_size);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng = derive_stream(cfg.seed, {kShuffleTag, epoch});
  for (std::size_t i = corpus_size; i > 1; --i) std::swap(perm[i - 1], perm[uniform_index(rng, i)]);
  const std::size_t lo = b * cfg.batch_size, hi = std::min(lo + cfg.batch_size, corpus_size);
  return {perm.begin() + static_cast<std::ptrdiff_t>(lo), perm.begin() + static_cast<std::ptrdiff_t>(hi)};
}

std::vector<TrainingSample> make_batch(const TrainConfig& cfg, const std::vector<Image>& corpus,
                                       std::size_t step) {
  const auto idx = batch_indices(cfg, corpus.size(), step);
  const std::size_t per_epoch = (corpus.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::uint64_t epoch = step / per_epoch;
  std::vector<TrainingSample> out(idx.size());
  parallel_for(idx.size(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      Rng rng = derive_stream(cfg.seed, {kSampleTag, epoch, idx[i]});
      out[i] = make_training_sample(corpus[idx[i]], cfg, rng);
    }
  });
  return out;
}

void run_pretraining(TrainState& state, const std::vector<Image>& corpus, const RunHooks& hooks) {
  require(!corpus.empty(), ErrorKind::kContract, "empty training corpus");
  const Schedule schedule = make_schedule(state.cfg, corpus.size());
  const std::size_t end =
      hooks.stop_at ? std::min(hooks.stop_at, schedule.total_steps) : schedule.total_steps;
  while (state.step < end) {
    const auto samples = make_batch(state.cfg, corpus, state.step);
    const StepMetrics m = train_step(state, schedule, samples);
    if (hooks.on_step) hooks.on_step(m);
    const bool last = state.step == schedule.total_steps;
    if (!hooks.checkpoint_dir.empty()) {
      if (hooks.checkpoint_interval && state.step % hooks.checkpoint_interval == 0 && !last)
        save_checkpoint(hooks.checkpoint_dir / ("step_" + std::to_string(state.step) + ".ckpt"),
                        state);
      if (last) save_checkpoint(hooks.checkpoint_dir / "final.ckpt", state);
    }
    if (hooks.on_eval && ((hooks.eval_interval && state.step % hooks.eval_interval == 0) || last))
      hooks.on_eval(state);
  }
}

}  // namespace loca
