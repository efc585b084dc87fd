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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>

#include "loca/datagen.hpp"
#include "loca/errors.hpp"
#include "loca/gradcheck.hpp"
#include "loca/parallel.hpp"
#include "loca/trainer.hpp"

namespace loca {
namespace {

namespace fs = std::filesystem;

// 32-pixel references and 16-pixel queries keep these runs fast.
TrainConfig small_config() {
  TrainConfig c;
  c.model.embed_dim = 16;
  c.model.depth = 1;
  c.model.num_heads = 2;
  c.model.mlp_ratio = 2;
  c.model.ref_grid = {4, 4};
  c.model.proj_dim = 8;
  c.model.num_prototypes = 16;
  c.augment.reference_size = 32;
  c.augment.query_size = 16;
  c.batch_size = 4;
  c.queries_per_reference = 3;
  c.query_keep_ratio = 1.0;
  c.total_epochs = 4;
  c.warmup_epochs = 1;
  c.seed = 7;
  return c;
}

std::vector<Image> small_corpus(std::size_t n, std::uint64_t seed = 3) {
  SceneSpec spec;
  spec.height = spec.width = 48;
  spec.min_shape_size = 8;
  spec.max_shape_size = 24;
  std::vector<Image> out;
  for (auto& li : build_corpus(n, seed, spec)) out.push_back(li.image);
  return out;
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("loca_trainer_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<char> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void expect_same_metrics(const StepMetrics& a, const StepMetrics& b) {
  EXPECT_EQ(a.step, b.step);
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.cluster, b.cluster);
  EXPECT_EQ(a.position, b.position);
  EXPECT_EQ(a.memax, b.memax);
  EXPECT_EQ(a.pos_accuracy, b.pos_accuracy);
  EXPECT_EQ(a.entropy, b.entropy);
  EXPECT_EQ(a.lr, b.lr);
  EXPECT_EQ(a.momentum, b.momentum);
  EXPECT_EQ(a.skipped, b.skipped);
}

bool same_params(const ModelParams& a, const ModelParams& b) {
  std::vector<const Tensor*> ta;
  visit_model(a, [&](const std::string&, const Tensor& t) { ta.push_back(&t); });
  std::size_t i = 0;
  bool same = true;
  visit_model(b, [&](const std::string&, const Tensor& t) { same = same && *ta[i++] == t; });
  return same;
}

TEST(Schedule, CosineEndpointsAndMidpoint) {
  EXPECT_EQ(cosine_value(100, 100, 10, 1e-3, 1e-6), 1e-6);
  EXPECT_EQ(cosine_value(0, 100, 0, 0.996, 1.0), 0.996);
  EXPECT_EQ(cosine_value(100, 100, 0, 0.996, 1.0), 1.0);
  EXPECT_NEAR(cosine_value(55, 100, 10, 2.0, 1.0), 1.5, 1e-12);
  EXPECT_EQ(cosine_value(10, 100, 10, 2.0, 1.0), 2.0);
}

TEST(Schedule, WarmupRampsLinearlyFromZero) {
  EXPECT_EQ(cosine_value(0, 100, 10, 1e-3, 0), 0.0);
  EXPECT_NEAR(cosine_value(5, 100, 10, 1e-3, 0), 5e-4, 1e-15);
  double prev = -1;
  for (std::size_t s = 0; s <= 10; ++s) {
    const double v = cosine_value(s, 100, 10, 1e-3, 0);
    EXPECT_GT(v, prev);
    prev = v;
  }
}

TEST(Schedule, MomentumIsMonotoneWithoutWarmup) {
  Schedule s = make_schedule(small_config(), 16);
  EXPECT_EQ(s.steps_per_epoch, 4u);
  EXPECT_EQ(s.total_steps, 16u);
  EXPECT_EQ(s.warmup_steps, 4u);
  EXPECT_EQ(s.momentum(0), 0.996);
  EXPECT_EQ(s.momentum(16), 1.0);
  for (std::size_t k = 1; k <= 16; ++k) EXPECT_GE(s.momentum(k), s.momentum(k - 1));
}

TEST(Schedule, ZeroTotalStepsIsConfigError) {
  try {
    cosine_value(0, 0, 0, 1, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
  }
}

TEST(TrainConfigTest, PresetsValidate) {
  EXPECT_NO_THROW(desk_config().validate());
  EXPECT_NO_THROW(paper_config().validate());
  EXPECT_EQ(paper_config().model.num_positions(), 196u);
  EXPECT_NE(geometry_hash(desk_config()), geometry_hash(paper_config()));
  TrainConfig c = desk_config();
  c.eta = 0.3;
  c.base_lr = 0.5;
  EXPECT_EQ(geometry_hash(c), geometry_hash(desk_config()));
}

TEST(TrainConfigTest, InvalidFieldsAreNamed) {
  auto expect_error = [](TrainConfig c, const std::string& key) {
    try {
      c.validate();
      ADD_FAILURE() << key;
    } catch (const Error& e) {
      EXPECT_NE(std::string(e.what()).find(key), std::string::npos) << e.what();
    }
  };
  TrainConfig c = desk_config();
  c.warmup_epochs = c.total_epochs;
  expect_error(c, "warmup_epochs");
  c = desk_config();
  c.batch_size = 0;
  expect_error(c, "batch_size");
  c = desk_config();
  c.ema_momentum_start = 1.5;
  expect_error(c, "ema_momentum_start");
  c = desk_config();
  c.eta = 1.3;
  expect_error(c, "eta");
  c = desk_config();
  c.augment.reference_size = 72;
  expect_error(c, "reference_size");
}

class OptimTest : public ::testing::Test {
 protected:
  TrainConfig cfg = small_config();
  ModelParams params;
  OptimizerState state;
  void SetUp() override {
    Rng rng(1);
    params = init_params<float>(cfg.model, rng);
    set_trainable(params, true);
    state = init_optimizer(params);
    visit_model(params, [](const std::string&, Tensor& t) { t.zero_grad(); });
  }
};

TEST_F(OptimTest, ZeroGradientWithoutDecayLeavesParams) {
  const ModelParams before = params;
  adamw_step(params, state, {0.1, 0.0});
  EXPECT_TRUE(same_params(before, params));
  EXPECT_EQ(state.step, 1u);
}

TEST_F(OptimTest, FirstStepMovesByLearningRate) {
  params.norm_b[0] = 1.0f;
  params.norm_b.grad()[0] = 1.0f;
  params.norm_b.grad()[1] = -3.0f;
  adamw_step(params, state, {0.1, 0.0});
  EXPECT_NEAR(params.norm_b[0], 0.9, 1e-6);
  EXPECT_NEAR(params.norm_b[1], 0.1, 1e-6);
  EXPECT_EQ(params.norm_b[2], 0.0f);
}

TEST_F(OptimTest, DecoupledDecayShrinksByLrTimesDecay) {
  adamw_step(params, state, {0.1, 0.1});
  for (float g : params.norm_g.values()) EXPECT_NEAR(g, 0.99, 1e-7);
}

TEST_F(OptimTest, PrototypesStayUnitNorm) {
  for (float& g : params.prototypes.grad()) g = 0.3f;
  adamw_step(params, state, {0.1, 0.1});
  const auto& q = params.prototypes;
  for (std::size_t k = 0; k < q.dim(1); ++k) {
    double s = 0;
    for (std::size_t r = 0; r < q.dim(0); ++r) s += double(q(r, k)) * q(r, k);
    EXPECT_NEAR(std::sqrt(s), 1.0, 1e-6);
  }
}

TEST_F(OptimTest, NonFiniteGradientNamesParameterAndChangesNothing) {
  params.blocks[0].fc1_w.grad()[3] = std::numeric_limits<float>::quiet_NaN();
  params.norm_b.grad()[0] = 1.0f;
  const ModelParams before = params;
  try {
    adamw_step(params, state, {0.1, 0.1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNumeric);
    EXPECT_NE(std::string(e.what()).find("blocks.0.mlp.fc1.weight"), std::string::npos) << e.what();
  }
  EXPECT_TRUE(same_params(before, params));
  EXPECT_EQ(state.step, 0u);
}

TEST_F(OptimTest, EmaEndpoints) {
  ModelParams teacher = params;
  Rng rng(9);
  ModelParams student = init_params<float>(cfg.model, rng);
  const ModelParams before = teacher;
  ema_update(teacher, student, 1.0);
  EXPECT_TRUE(same_params(before, teacher));
  ema_update(teacher, student, 0.0);
  std::vector<const Tensor*> s;
  visit_model(student, [&](const std::string&, const Tensor& t) { s.push_back(&t); });
  std::vector<const Tensor*> b;
  visit_model(before, [&](const std::string&, const Tensor& t) { b.push_back(&t); });
  std::size_t i = 0;
  visit_model(teacher, [&](const std::string& name, const Tensor& t) {
    if (is_student_only(name))
      EXPECT_EQ(t, *b[i]) << name;
    else
      EXPECT_EQ(t, *s[i]) << name;
    ++i;
  });
}

TEST_F(OptimTest, EmaHalfwayAndShapeMismatch) {
  ModelParams teacher = params, student = params;
  teacher.norm_b[0] = 0.0f;
  student.norm_b[0] = 1.0f;
  ema_update(teacher, student, 0.5);
  EXPECT_EQ(teacher.norm_b[0], 0.5f);
  student.norm_b = Tensor(Shape{3});
  EXPECT_THROW(ema_update(teacher, student, 0.5), Error);
  EXPECT_THROW(ema_update(teacher, params, 1.5), Error);
}

TEST_F(OptimTest, EmaStaysInsideStudentHull) {
  ModelParams teacher = params;
  float lo = teacher.norm_b[0], hi = lo;
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    ModelParams student = params;
    student.norm_b[0] = static_cast<float>(uniform(rng, -2.0, 3.0));
    lo = std::min(lo, student.norm_b[0]);
    hi = std::max(hi, student.norm_b[0]);
    ema_update(teacher, student, uniform(rng, 0.0, 1.0));
    EXPECT_GE(teacher.norm_b[0], lo);
    EXPECT_LE(teacher.norm_b[0], hi);
  }
}

TEST(Sampling, QueriesUseRandomThenFocalDropping) {
  TrainConfig cfg = desk_config();
  cfg.queries_per_reference = 4;
  auto corpus = small_corpus(1);
  SceneSpec spec;
  Rng rng(5);
  auto s = make_training_sample(build_corpus(1, 2, spec)[0].image, cfg, rng);
  ASSERT_EQ(s.queries.size(), 4u);
  EXPECT_EQ(s.queries[0].kept_tokens.size(), 8u);  // ceil(0.5 * 16)
  for (std::size_t q = 1; q < 4; ++q) EXPECT_EQ(s.queries[q].kept_tokens.size(), 9u);  // 3x3
  EXPECT_EQ(s.reference.kept_tokens.size(), 64u);
  EXPECT_EQ(s.mask.visible.size(), 13u);  // 64 - floor(0.8 * 64)
  for (std::size_t q = 0; q < 4; ++q) EXPECT_EQ(s.corr[q].h.size(), s.queries[q].kept_tokens.size());
}

TEST(Sampling, EpochsCoverCorpusOnce) {
  TrainConfig cfg = small_config();
  cfg.batch_size = 3;
  for (std::size_t epoch = 0; epoch < 2; ++epoch) {
    std::multiset<std::size_t> seen;
    for (std::size_t b = 0; b < 4; ++b) {
      auto idx = batch_indices(cfg, 10, epoch * 4 + b);
      EXPECT_EQ(idx.size(), b == 3 ? 1u : 3u);
      seen.insert(idx.begin(), idx.end());
    }
    EXPECT_EQ(seen, (std::multiset<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}));
  }
  EXPECT_NE(batch_indices(cfg, 10, 0), batch_indices(cfg, 10, 4));
}

TEST(Sampling, BatchDoesNotDependOnThreadCount) {
  TrainConfig cfg = small_config();
  auto corpus = small_corpus(8);
  set_thread_count(1);
  auto a = make_batch(cfg, corpus, 2);
  set_thread_count(3);
  auto b = make_batch(cfg, corpus, 2);
  set_thread_count(1);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].reference.pixels, b[i].reference.pixels);
    EXPECT_EQ(a[i].mask.visible, b[i].mask.visible);
    for (std::size_t q = 0; q < a[i].queries.size(); ++q)
      EXPECT_EQ(a[i].corr[q].h, b[i].corr[q].h);
  }
}

TEST(ForwardBatch, GradientMatchesFiniteDifferences) {
  TrainConfig cfg = small_config();
  cfg.eta = 0.5;
  auto corpus = small_corpus(2);
  std::vector<TrainingSample> samples;
  for (std::size_t i = 0; i < 2; ++i) {
    Rng rng(40 + i);
    samples.push_back(make_training_sample(corpus[i], cfg, rng));
  }
  Rng rng(3);
  ModelParamsD student = init_params<double>(cfg.model, rng);
  // O(1) weights keep gradients above finite-difference noise.
  std::uint64_t seed = 50;
  visit_model(student, [&](const std::string& name, TensorD& t) {
    Rng r(seed++);
    const bool gain = name.find("gain") != std::string::npos;
    for (double& v : t.values()) v = (gain ? 1.0 : 0.0) + uniform(r, -0.5, 0.5);
  });
  normalize_prototypes(student.prototypes);
  ModelParamsD teacher = student;
  set_trainable(teacher, false);
  std::vector<TensorD*> params;
  visit_model(student, [&](const std::string& name, TensorD& t) {
    if (name.find("attn.bk") == std::string::npos) params.push_back(&t);
  });
  GradCheckOptions opt;
  opt.max_coords_per_tensor = 4;
  opt.seed = 2;
  auto report = finite_difference_check(
      [&](ad::Tape<double>& tape) {
        auto vars = bind(tape, student);
        auto fw = forward_batch(tape, vars, teacher, cfg, samples);
        EXPECT_FALSE(fw.loss.skipped);
        return fw.loss.total;
      },
      params, opt);
  EXPECT_LT(report.max_rel_error, 1e-4) << report.worst;
  EXPECT_GT(report.coords_checked, 100u);
}

class TrainTest : public ::testing::Test {
 protected:
  TrainConfig cfg = small_config();
  std::vector<Image> corpus = small_corpus(8);
};

TEST_F(TrainTest, IdenticalSeedsGiveIdenticalSteps) {
  auto a = init_train_state(cfg), b = init_train_state(cfg);
  const Schedule s = make_schedule(cfg, corpus.size());
  for (std::size_t k = 0; k < 10; ++k) {
    auto ma = train_step(a, s, make_batch(cfg, corpus, a.step));
    auto mb = train_step(b, s, make_batch(cfg, corpus, b.step));
    expect_same_metrics(ma, mb);
  }
  EXPECT_TRUE(same_params(a.student, b.student));
  EXPECT_TRUE(same_params(a.teacher, b.teacher));
}

TEST_F(TrainTest, LossStaysFinite) {
  cfg.total_epochs = 50;
  auto st = init_train_state(cfg);
  const Schedule s = make_schedule(cfg, corpus.size());
  std::size_t ran = 0;
  for (std::size_t k = 0; k < 100; ++k) {
    auto m = train_step(st, s, make_batch(cfg, corpus, st.step));
    if (m.skipped) continue;
    ++ran;
    EXPECT_TRUE(std::isfinite(m.loss)) << k;
  }
  EXPECT_GT(ran, 90u);
}

TEST_F(TrainTest, TeacherNeverHoldsGradients) {
  auto st = init_train_state(cfg);
  const Schedule s = make_schedule(cfg, corpus.size());
  train_step(st, s, make_batch(cfg, corpus, 0));
  visit_model(st.teacher, [](const std::string& name, const Tensor& t) {
    EXPECT_FALSE(t.has_grad()) << name;
    EXPECT_FALSE(t.requires_grad()) << name;
  });
  std::size_t with_grad = 0;
  visit_model(st.student, [&](const std::string&, const Tensor& t) { with_grad += t.has_grad(); });
  EXPECT_GT(with_grad, 0u);
}

TEST_F(TrainTest, ZeroLearningRateKeepsEverythingAtInit) {
  cfg.base_lr = cfg.final_lr = 0;
  cfg.weight_decay = 0;
  auto st = init_train_state(cfg);
  const auto init = st.student;
  const Schedule s = make_schedule(cfg, corpus.size());
  for (int k = 0; k < 3; ++k) train_step(st, s, make_batch(cfg, corpus, st.step));
  EXPECT_TRUE(same_params(init, st.student));
  EXPECT_TRUE(same_params(init, st.teacher));
}

TEST_F(TrainTest, AllDisjointBatchIsSkipped) {
  auto st = init_train_state(cfg);
  auto batch = make_batch(cfg, corpus, 0);
  for (auto& s : batch)
    for (auto& c : s.corr) {
      std::fill(c.h.begin(), c.h.end(), std::nullopt);
      c.omega.clear();
    }
  const auto before = st.student;
  auto m = train_step(st, make_schedule(cfg, corpus.size()), batch);
  EXPECT_TRUE(m.skipped);
  EXPECT_EQ(m.empty_pairs, m.pairs);
  EXPECT_EQ(st.step, 1u);
  EXPECT_TRUE(same_params(before, st.student));
}

TEST_F(TrainTest, OneEpochOfEightImagesIsTwoSteps) {
  cfg.total_epochs = 1;
  cfg.warmup_epochs = 0;
  auto st = init_train_state(cfg);
  std::size_t steps = 0, evals = 0;
  RunHooks hooks;
  hooks.on_step = [&](const StepMetrics&) { ++steps; };
  hooks.eval_interval = 1;
  hooks.on_eval = [&](const TrainState&) { ++evals; };
  run_pretraining(st, corpus, hooks);
  EXPECT_EQ(steps, 2u);
  EXPECT_EQ(evals, 2u);
  EXPECT_EQ(st.step, 2u);
}

TEST_F(TrainTest, ThreadCountDoesNotChangeMetrics) {
  std::vector<StepMetrics> runs[2];
  for (int r = 0; r < 2; ++r) {
    set_thread_count(r == 0 ? 1 : 4);
    auto st = init_train_state(cfg);
    RunHooks hooks;
    hooks.on_step = [&](const StepMetrics& m) { runs[r].push_back(m); };
    hooks.stop_at = 4;
    run_pretraining(st, corpus, hooks);
  }
  set_thread_count(1);
  ASSERT_EQ(runs[0].size(), 4u);
  ASSERT_EQ(runs[1].size(), 4u);
  for (std::size_t k = 0; k < 4; ++k) expect_same_metrics(runs[0][k], runs[1][k]);
}

TEST_F(TrainTest, ResumeMatchesUninterruptedRun) {
  const auto dir = temp_dir("resume");
  std::vector<StepMetrics> full, resumed;
  {
    auto st = init_train_state(cfg);
    RunHooks hooks;
    hooks.on_step = [&](const StepMetrics& m) { full.push_back(m); };
    hooks.stop_at = 7;
    run_pretraining(st, corpus, hooks);
    save_checkpoint(dir / "full.ckpt", st);
  }
  {
    auto st = init_train_state(cfg);
    RunHooks hooks;
    hooks.checkpoint_dir = dir;
    hooks.checkpoint_interval = 3;
    hooks.stop_at = 3;
    run_pretraining(st, corpus, hooks);
  }
  ASSERT_TRUE(fs::exists(dir / "step_3.ckpt"));
  auto st = load_checkpoint(dir / "step_3.ckpt", cfg);
  EXPECT_EQ(st.step, 3u);
  RunHooks hooks;
  hooks.on_step = [&](const StepMetrics& m) { resumed.push_back(m); };
  hooks.stop_at = 7;
  run_pretraining(st, corpus, hooks);
  ASSERT_EQ(resumed.size(), 4u);
  for (std::size_t k = 0; k < 4; ++k) expect_same_metrics(full[3 + k], resumed[k]);
  save_checkpoint(dir / "resumed.ckpt", st);
  EXPECT_EQ(file_bytes(dir / "full.ckpt"), file_bytes(dir / "resumed.ckpt"));
  fs::remove_all(dir);
}

TEST_F(TrainTest, CheckpointRoundTripIsByteIdentical) {
  const auto dir = temp_dir("roundtrip");
  auto st = init_train_state(cfg);
  const Schedule s = make_schedule(cfg, corpus.size());
  for (int k = 0; k < 3; ++k) train_step(st, s, make_batch(cfg, corpus, st.step));
  EXPECT_FALSE(same_params(st.student, st.teacher));
  save_checkpoint(dir / "a.ckpt", st);
  auto loaded = load_checkpoint(dir / "a.ckpt", cfg);
  EXPECT_TRUE(same_params(st.student, loaded.student));
  EXPECT_TRUE(same_params(st.teacher, loaded.teacher));
  EXPECT_EQ(loaded.opt.step, st.opt.step);
  save_checkpoint(dir / "b.ckpt", loaded);
  EXPECT_EQ(file_bytes(dir / "a.ckpt"), file_bytes(dir / "b.ckpt"));
  const auto info = read_checkpoint_info(dir / "a.ckpt");
  EXPECT_EQ(info.step, 3u);
  EXPECT_EQ(info.hash, geometry_hash(cfg));
  fs::remove_all(dir);
}

TEST_F(TrainTest, WrongGeometryIsRefusedUnlessForced) {
  const auto dir = temp_dir("hash");
  save_checkpoint(dir / "a.ckpt", init_train_state(cfg));
  try {
    load_checkpoint(dir / "a.ckpt", desk_config());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
    EXPECT_NE(std::string(e.what()).find("hash"), std::string::npos);
  }
  // Forcing skips the hash check but shapes still have to agree.
  EXPECT_THROW(load_checkpoint(dir / "a.ckpt", desk_config(), true), Error);
  TrainConfig same_shapes = cfg;
  same_shapes.augment.query_size = 24;
  EXPECT_THROW(load_checkpoint(dir / "a.ckpt", same_shapes), Error);
  EXPECT_NO_THROW(load_checkpoint(dir / "a.ckpt", same_shapes, true));
  fs::remove_all(dir);
}

TEST_F(TrainTest, CorruptOrMissingCheckpointIsIoError) {
  const auto dir = temp_dir("corrupt");
  save_checkpoint(dir / "a.ckpt", init_train_state(cfg));
  auto bytes = file_bytes(dir / "a.ckpt");
  bytes.resize(bytes.size() / 2);
  std::ofstream(dir / "b.ckpt", std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  for (const char* name : {"b.ckpt", "missing.ckpt"}) {
    try {
      load_checkpoint(dir / name, cfg);
      ADD_FAILURE() << name;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kIo);
      EXPECT_NE(std::string(e.what()).find(name), std::string::npos);
    }
  }
  fs::remove_all(dir);
}

}  // namespace
}  // namespace loca
