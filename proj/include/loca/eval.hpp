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

#ifndef LOCA_EVAL_HPP_
#define LOCA_EVAL_HPP_

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "loca/datagen.hpp"
#include "loca/trainer.hpp"

namespace loca {

/// Held-out (reference, query) pairs drawn with the training augmentation
/// law. Pair k uses image k mod n and its own stream, so the set depends
/// only on (images, cfg, seed, n_pairs). Pairs are packed into samples of
/// cfg.queries_per_reference queries sharing one reference.
std::vector<TrainingSample> make_eval_samples(const std::vector<Image>& images,
                                              const TrainConfig& cfg, std::uint64_t seed,
                                              std::size_t n_pairs);

struct PositionEval {
  double accuracy = 0;       // mean over pairs with non-empty omega
  double pooled_accuracy = 0;  // hits / supervised tokens
  double position_loss = 0;  // mean over the same pairs
  double entropy = 0;        // H of the mean student cluster prediction
  std::size_t pairs = 0, empty_pairs = 0, tokens = 0, hits = 0;
};

/// Runs the training forward pass without updates. Student queries, g and W;
/// teacher reference keys. Chunked so memory stays bounded.
PositionEval evaluate_position(const ModelParams& student, const ModelParams& teacher,
                               const TrainConfig& cfg, const std::vector<TrainingSample>& samples,
                               std::size_t chunk = 16);

/// Per-pair accuracy from logits. Pairs with empty omega are skipped; an
/// undefined-result error is raised when no pair has a target.
double position_accuracy(const Tensor& position_logits, const std::vector<QuerySlice>& slices);

/// H(mean row) in nats over softmax rows.
double mean_prediction_entropy(const Tensor& probs);

struct ProbeResult {
  std::vector<double> per_class_iou;  // NaN for excluded classes
  std::vector<bool> included;
  double miou = 0;
  std::vector<std::vector<std::uint64_t>> confusion;  // [truth][prediction]
  double train_loss = 0;
  std::size_t train_patches = 0, eval_patches = 0;
};

/// IoU = TP / (TP + FP + FN); classes with zero union are excluded.
ProbeResult compute_miou(const std::vector<std::vector<std::uint64_t>>& confusion);

struct ProbeConfig {
  std::size_t steps = 300;
  double lr = 0.05;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
};

/// Majority label per P x P cell, ties to the smaller class id.
std::vector<std::uint8_t> patch_labels(const LabeledImage& image, std::size_t patch_size);

/// Frozen features for every patch of the full image; the positional table
/// is resampled to the image's grid. Returns [tokens, d].
Tensor image_features(const ModelParams& encoder, const ViTConfig& cfg, const Image& image);

/// Linear softmax probe on frozen patch features, trained full-batch with
/// AdamW on `train` and scored at patch level on `eval`.
ProbeResult linear_probe_segmentation(const ModelParams& encoder, const ViTConfig& cfg,
                                      const std::vector<LabeledImage>& train,
                                      const std::vector<LabeledImage>& eval,
                                      const ProbeConfig& probe);

std::string to_json(const PositionEval& e);
std::string to_json(const ProbeResult& r);

}  // namespace loca

#endif  // LOCA_EVAL_HPP_
