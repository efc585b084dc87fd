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

#include "loca/run.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "loca/errors.hpp"
#include "loca/image.hpp"

namespace loca {

namespace {

using nlohmann::ordered_json;

// Non-finite values become strings and flag the record.
struct Record {
  ordered_json j;
  bool nonfinite = false;

  void num(const char* key, double v) {
    if (std::isfinite(v)) {
      j[key] = v;
    } else {
      nonfinite = true;
      j[key] = std::isnan(v) ? "NaN" : (v > 0 ? "Infinity" : "-Infinity");
    }
  }
  std::string done() {
    j["nonfinite"] = nonfinite;
    return j.dump();
  }
};

std::vector<Image> images_of(std::vector<LabeledImage> v) {
  std::vector<Image> out;
  out.reserve(v.size());
  for (auto& li : v) out.push_back(std::move(li.image));
  return out;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, p.string() + ": cannot open for writing");
  out << text;
  if (!out) fail(ErrorKind::kIo, p.string() + ": write failed");
}

TrainState load_state(const RunConfig& cfg, const std::filesystem::path& checkpoint, bool force) {
  return load_checkpoint(checkpoint, cfg.train, force);
}

std::vector<TrainingSample> heldout_samples(const RunConfig& cfg) {
  return make_eval_samples(heldout_images(cfg), cfg.train, cfg.eval_seed, cfg.eval_pairs);
}

}  // namespace

std::string step_record(const StepMetrics& m) {
  Record r;
  r.j["event"] = "step";
  r.j["step"] = m.step;
  r.j["epoch"] = m.epoch;
  r.num("lr", m.lr);
  r.num("momentum", m.momentum);
  r.num("loss", m.loss);
  r.num("cluster", m.cluster);
  r.num("position", m.position);
  r.num("memax", m.memax);
  r.num("pos_accuracy", m.pos_accuracy);
  r.num("entropy", m.entropy);
  r.num("omega_mean", m.omega_mean);
  r.j["pairs"] = m.pairs;
  r.j["empty_pairs"] = m.empty_pairs;
  r.j["skipped"] = m.skipped;
  return r.done();
}

std::string eval_record(std::size_t step, const PositionEval& e) {
  Record r;
  r.j["event"] = "eval";
  r.j["step"] = step;
  r.num("accuracy", e.accuracy);
  r.num("pooled_accuracy", e.pooled_accuracy);
  r.num("position_loss", e.position_loss);
  r.num("entropy", e.entropy);
  r.j["pairs"] = e.pairs;
  r.j["empty_pairs"] = e.empty_pairs;
  r.j["tokens"] = e.tokens;
  r.j["hits"] = e.hits;
  return r.done();
}

std::vector<Image> training_images(const RunConfig& cfg) {
  if (cfg.data_dir.empty()) return images_of(build_corpus(cfg.corpus_size, cfg.corpus_seed, cfg.scene));
  auto dir = load_image_directory(cfg.data_dir);
  require(!dir.images.empty(), ErrorKind::kIo, cfg.data_dir + ": no readable PNG images");
  return std::move(dir.images);
}

std::vector<Image> heldout_images(const RunConfig& cfg) {
  return images_of(build_corpus(cfg.eval_images, cfg.eval_seed, cfg.scene));
}

PretrainSummary run_pretrain_job(const RunConfig& cfg, const PretrainOptions& opt) {
  validate(cfg);
  require(!opt.out_dir.empty(), ErrorKind::kConfig, "pretraining needs an output directory");
  std::error_code ec;
  std::filesystem::create_directories(opt.out_dir, ec);
  if (ec) fail(ErrorKind::kIo, opt.out_dir.string() + ": " + ec.message());
  write_text(opt.out_dir / "config.txt", dump_config(cfg));

  TrainState state = opt.resume.empty() ? init_train_state(cfg.train)
                                        : load_state(cfg, opt.resume, opt.force);
  const auto corpus = training_images(cfg);
  const auto eval_set = heldout_samples(cfg);

  const auto log_path = opt.out_dir / "metrics.jsonl";
  std::ofstream log(log_path, opt.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) fail(ErrorKind::kIo, log_path.string() + ": cannot open for writing");
  auto emit = [&](const std::string& line) {
    log << line << '\n';
    log.flush();
    if (!log) fail(ErrorKind::kIo, log_path.string() + ": write failed");
    if (opt.on_record) opt.on_record(line);
  };

  PretrainSummary summary;
  RunHooks hooks;
  hooks.on_step = [&](const StepMetrics& m) { emit(step_record(m)); };
  hooks.eval_interval = cfg.eval_interval;
  hooks.on_eval = [&](const TrainState& s) {
    summary.final_eval = evaluate_position(s.student, s.teacher, s.cfg, eval_set);
    emit(eval_record(s.step, summary.final_eval));
  };
  hooks.checkpoint_interval = cfg.checkpoint_interval;
  hooks.checkpoint_dir = opt.out_dir;
  hooks.stop_at = opt.stop_at;
  run_pretraining(state, corpus, hooks);

  summary.steps = state.step;
  summary.final_checkpoint = opt.out_dir / "final.ckpt";
  ordered_json report;
  report["steps"] = summary.steps;
  report["config_hash"] = hex(geometry_hash(cfg.train));
  report["eval"] = nlohmann::json::parse(eval_record(state.step, summary.final_eval));
  write_text(opt.out_dir / "report.json", report.dump(2) + "\n");
  return summary;
}

PositionEval run_eval_job(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                          bool force) {
  validate(cfg);
  const TrainState st = load_state(cfg, checkpoint, force);
  return evaluate_position(st.student, st.teacher, cfg.train, heldout_samples(cfg));
}

ProbeResult run_probe_job(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                          bool force) {
  validate(cfg);
  const TrainState st = checkpoint.empty() ? init_train_state(cfg.train)
                                           : load_state(cfg, checkpoint, force);
  std::vector<LabeledImage> train, eval;
  split_by_parity(build_corpus(cfg.probe_images, cfg.probe_seed, cfg.scene), train, eval);
  ProbeConfig pc = cfg.probe;
  pc.seed = cfg.probe_seed;
  return linear_probe_segmentation(st.teacher, cfg.train.model, train, eval, pc);
}

Image inspect_panel(const TrainingSample& s, std::size_t P,
                    const std::vector<std::vector<std::size_t>>& predicted, bool show_truth) {
  const Image& ref = s.reference.pixels;
  const std::size_t gap = 4, nq = s.queries.size();
  const std::size_t qh = nq ? s.queries[0].pixels.height : 0, qw = nq ? s.queries[0].pixels.width : 0;
  const std::size_t col_w = std::max(qw, ref.width);
  const std::size_t width = ref.width + gap + nq * (col_w + gap);
  const std::size_t height = std::max(ref.height, qh) + gap + ref.height;
  Image canvas(height, width);
  std::fill(canvas.pixels.begin(), canvas.pixels.end(), 1.f);

  auto blit = [&](const Image& im, std::size_t oy, std::size_t ox) {
    for (std::size_t y = 0; y < im.height; ++y)
      for (std::size_t x = 0; x < im.width; ++x)
        for (std::size_t c = 0; c < 3; ++c) canvas.at(oy + y, ox + x, c) = im.at(y, x, c);
  };
  auto tint = [&](Image& im, const GridShape& grid, std::size_t token, float r, float g, float b,
                  float a) {
    const PixelBox box = token_pixel_box(grid, P, token);
    const float col[3] = {r, g, b};
    for (std::size_t y = box.y0; y < box.y1; ++y)
      for (std::size_t x = box.x0; x < box.x1; ++x)
        for (std::size_t c = 0; c < 3; ++c) im.at(y, x, c) = (1 - a) * im.at(y, x, c) + a * col[c];
  };

  Image masked = ref;
  std::vector<bool> visible(s.reference.grid.count(), false);
  for (std::size_t v : s.mask.visible) visible[v] = true;
  for (std::size_t t = 0; t < visible.size(); ++t)
    if (!visible[t]) tint(masked, s.reference.grid, t, 0.5f, 0.5f, 0.5f, 0.75f);
  blit(masked, 0, 0);

  for (std::size_t q = 0; q < nq; ++q) {
    const View& qv = s.queries[q];
    Image qi = qv.pixels;
    std::vector<bool> kept(qv.grid.count(), false);
    for (std::size_t t : qv.kept_tokens) kept[t] = true;
    for (std::size_t t = 0; t < kept.size(); ++t)
      if (!kept[t]) tint(qi, qv.grid, t, 0.5f, 0.5f, 0.5f, 0.75f);
    const std::size_t ox = ref.width + gap + q * (col_w + gap);
    blit(qi, 0, ox);

    Image targets = ref;
    for (const auto& h : s.corr[q].h)
      if (h && show_truth) tint(targets, s.reference.grid, *h, 0.f, 0.f, 1.f, 0.45f);
    if (q < predicted.size())
      for (std::size_t p : predicted[q]) tint(targets, s.reference.grid, p, 1.f, 0.f, 0.f, 0.45f);
    blit(targets, std::max(ref.height, qh) + gap, ox);
  }
  return canvas;
}

void run_inspect_job(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                     std::size_t index, const std::filesystem::path& out_png, bool force) {
  validate(cfg);
  const auto images = heldout_images(cfg);
  const auto samples = make_eval_samples(images, cfg.train, cfg.eval_seed,
                                         (index + 1) * cfg.train.queries_per_reference);
  const TrainingSample& s = samples.at(index);
  std::vector<std::vector<std::size_t>> predicted(s.queries.size());
  if (!checkpoint.empty()) {
    TrainState st = load_state(cfg, checkpoint, force);
    set_trainable(st.student, false);
    ad::Tape<float> tape;
    const auto vars = bind(tape, st.student);
    const auto fw = forward_batch(tape, vars, st.teacher, cfg.train, {s});
    const Tensor& logits = fw.position_logits.value();
    for (std::size_t q = 0; q < fw.slices.size(); ++q)
      for (std::size_t r = fw.slices[q].row_begin; r < fw.slices[q].row_end; ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.dim(1); ++c)
          if (logits(r, c) > logits(r, best)) best = c;
        predicted[q].push_back(best);
      }
  }

  const Image panel = inspect_panel(s, cfg.train.model.patch_size, predicted);
  // Nearest-neighbour upscale so desk-sized views stay legible.
  const std::size_t f = std::max<std::size_t>(1, 224 / std::max<std::size_t>(1, s.reference.pixels.width));
  Image big(panel.height * f, panel.width * f);
  for (std::size_t y = 0; y < big.height; ++y)
    for (std::size_t x = 0; x < big.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) big.at(y, x, c) = panel.at(y / f, x / f, c);
  write_png(out_png, big);
}

}  // namespace loca
