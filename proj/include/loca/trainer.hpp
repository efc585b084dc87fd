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

#ifndef LOCA_TRAINER_HPP_
#define LOCA_TRAINER_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "loca/encoder.hpp"
#include "loca/objective.hpp"
#include "loca/viewgen.hpp"

namespace loca {

enum class GeometryPreset { kDesk, kPaper };

const char* preset_name(GeometryPreset preset);

struct TrainConfig {
  GeometryPreset preset = GeometryPreset::kDesk;
  ViTConfig model;
  AugmentConfig augment;

  double base_lr = 1e-3;
  double final_lr = 1e-6;
  std::size_t warmup_epochs = 1;
  std::size_t total_epochs = 10;
  std::size_t max_steps = 0;  // 0: no cap
  std::size_t batch_size = 8;
  double weight_decay = 0.1;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  double ema_momentum_start = 0.996;
  double ema_momentum_end = 1.0;

  std::size_t queries_per_reference = 10;
  double query_keep_ratio = 0.5;
  double eta = 0.8;
  bool structured_mask = true;
  double tau_teacher = 0.05;
  double tau_student = 0.1;
  bool use_sinkhorn = true;
  std::size_t sinkhorn_iters = 3;
  double lambda_memax = 1.0;
  std::uint64_t seed = 0;

  /// Throws a config error naming the offending field.
  void validate() const;
};

/// 64/32 pixel views, P=8, d=64, four blocks, K=256.
TrainConfig desk_config();
/// 224/96 pixel views, P=16, ViT-B/16, K=4096, batch 1024, 600 epochs.
TrainConfig paper_config();
TrainConfig preset_config(GeometryPreset preset);

/// SHA-256 over the fields that fix tensor shapes and view geometry.
using ConfigHash = std::array<std::uint8_t, 32>;
ConfigHash geometry_hash(const TrainConfig& cfg);
std::string hex(const ConfigHash& hash);

/// Linear ramp from 0 to start over the warmup steps, then a half cosine
/// from start to end over the remaining steps.
double cosine_value(std::size_t step, std::size_t total_steps, std::size_t warmup_steps,
                    double start, double end);

struct Schedule {
  std::size_t steps_per_epoch = 0;
  std::size_t total_steps = 0;
  std::size_t warmup_steps = 0;
  double base_lr = 0, final_lr = 0;
  double momentum_start = 0, momentum_end = 1;

  double lr(std::size_t step) const;
  double momentum(std::size_t step) const;
};

Schedule make_schedule(const TrainConfig& cfg, std::size_t corpus_size);

/// Moment buffers in visit_model order.
struct OptimizerState {
  std::size_t step = 0;
  std::vector<Tensor> m, v;
};

OptimizerState init_optimizer(const ModelParams& params);

struct AdamWOptions {
  double lr = 1e-3, weight_decay = 0.1, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

/// Decoupled AdamW over every trainable tensor; a tensor without a gradient
/// buffer is treated as having zero gradient. Prototype columns are
/// renormalized afterwards. A non-finite gradient aborts with a numeric
/// error naming the parameter, before anything is modified.
void adamw_step(ModelParams& params, OptimizerState& state, const AdamWOptions& opt);

/// teacher <- m teacher + (1 - m) student over the shared parameters.
void ema_update(ModelParams& teacher, const ModelParams& student, double m);

/// One reference with its queries, correspondences and mask, drawn from one
/// image with one RNG stream.
struct TrainingSample {
  View reference;
  std::vector<View> queries;
  std::vector<Correspondence> corr;
  MaskPlan mask;
};

/// The first query gets random token dropping, the others focal dropping.
TrainingSample make_training_sample(const Image& image, const TrainConfig& cfg, Rng& rng);

/// Outputs of one fused forward pass over a batch of samples.
template <typename T>
struct BatchForward {
  LossResult<T> loss;
  ad::Var<T> cluster_logits;   // [rows, K], already divided by tau_student
  ad::Var<T> position_logits;  // [rows, N_ref]
  std::vector<QuerySlice> slices;
};

/// Teacher encodes references (own tape, no gradient) and produces the
/// balanced targets; the student encodes every query, predicts clusters
/// and attends to the teacher's visible reference tokens.
template <typename T>
BatchForward<T> forward_batch(ad::Tape<T>& tape, const ModelVarsT<T>& student,
                              ModelParamsT<T>& teacher, const TrainConfig& cfg,
                              const std::vector<TrainingSample>& samples);

struct StepMetrics {
  std::size_t step = 0, epoch = 0;
  double lr = 0, momentum = 0;
  double loss = 0, cluster = 0, position = 0, memax = 0;
  double pos_accuracy = 0, entropy = 0, omega_mean = 0;
  std::size_t pairs = 0, empty_pairs = 0;
  bool skipped = false;
};

struct TrainState {
  TrainConfig cfg;
  ModelParams student, teacher;
  OptimizerState opt;
  std::size_t step = 0;  // completed steps, including skipped ones
};

/// Student and teacher start identical; the teacher never holds gradients.
TrainState init_train_state(const TrainConfig& cfg);

StepMetrics train_step(TrainState& state, const Schedule& schedule,
                       const std::vector<TrainingSample>& samples);

/// Corpus indices of one batch. Epochs are shuffled with their own stream.
std::vector<std::size_t> batch_indices(const TrainConfig& cfg, std::size_t corpus_size,
                                       std::size_t step);
/// Per-sample streams keyed by (seed, epoch, corpus index).
std::vector<TrainingSample> make_batch(const TrainConfig& cfg, const std::vector<Image>& corpus,
                                       std::size_t step);

struct RunHooks {
  std::function<void(const StepMetrics&)> on_step;
  /// Called after every eval_interval steps and after the last step.
  std::size_t eval_interval = 0;
  std::function<void(const TrainState&)> on_eval;
  /// Writes <dir>/step_<n>.ckpt every interval steps and <dir>/final.ckpt.
  std::size_t checkpoint_interval = 0;
  std::filesystem::path checkpoint_dir;
  /// Stop once this many total steps are complete (0: run to the end).
  std::size_t stop_at = 0;
};

/// Continues from state.step to the end of the schedule.
void run_pretraining(TrainState& state, const std::vector<Image>& corpus, const RunHooks& hooks);

void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
/// Refuses a checkpoint whose geometry hash differs from cfg unless force
/// is set; shapes must match either way.
TrainState load_checkpoint(const std::filesystem::path& path, const TrainConfig& cfg,
                           bool force = false);
/// Header-only read: stored hash and step.
struct CheckpointInfo {
  std::uint32_t version = 0;
  ConfigHash hash{};
  std::size_t step = 0;
  std::size_t tensors = 0;
};
CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

}  // namespace loca

#endif  // LOCA_TRAINER_HPP_
