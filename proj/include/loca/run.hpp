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

#ifndef LOCA_RUN_HPP_
#define LOCA_RUN_HPP_

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "loca/config.hpp"
#include "loca/eval.hpp"
#include "loca/trainer.hpp"

namespace loca {

/// One JSON object per line with a fixed key order. Non-finite numbers are
/// written as strings ("NaN", "Infinity") and the record gets
/// "nonfinite": true.
std::string step_record(const StepMetrics& m);
std::string eval_record(std::size_t step, const PositionEval& e);

/// Synthetic corpus, or the PNG directory when data_dir is set.
std::vector<Image> training_images(const RunConfig& cfg);
/// Held-out synthetic images (own seed, never used for training).
std::vector<Image> heldout_images(const RunConfig& cfg);

struct PretrainOptions {
  std::filesystem::path out_dir;
  std::filesystem::path resume;  // empty: fresh start
  bool force = false;
  std::size_t stop_at = 0;  // stop after this many total steps (0: run to the end)
  std::function<void(const std::string&)> on_record;  // every JSONL line
};

struct PretrainSummary {
  std::size_t steps = 0;
  PositionEval final_eval;
  std::filesystem::path final_checkpoint;
};

/// Writes <out>/config.txt, <out>/metrics.jsonl (appended on resume),
/// periodic and final checkpoints, and <out>/report.json.
PretrainSummary run_pretrain_job(const RunConfig& cfg, const PretrainOptions& opt);

/// Position accuracy and prediction entropy on held-out pairs at cfg's eta.
PositionEval run_eval_job(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                          bool force);

/// Linear probe on teacher features; an empty checkpoint path probes the
/// random initialisation for cfg's seed.
ProbeResult run_probe_job(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                          bool force);

/// Top row: the reference with masked tokens grayed, then each query with
/// dropped tokens grayed. Below each query: the reference with the query's
/// true cells (from h) tinted blue and predicted cells tinted red.
/// predicted[q] lists one reference token per kept query token.
Image inspect_panel(const TrainingSample& s, std::size_t patch_size,
                    const std::vector<std::vector<std::size_t>>& predicted,
                    bool show_truth = true);

/// inspect_panel for held-out sample `index`, written as PNG. Predictions
/// (argmax per query token) are drawn only when a checkpoint is given.
void run_inspect_job(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                     std::size_t index, const std::filesystem::path& out_png, bool force);

}  // namespace loca

#endif  // LOCA_RUN_HPP_
