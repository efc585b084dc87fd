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

#include "loca/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "json.hpp"

#include "loca/errors.hpp"
#include "loca/parallel.hpp"

namespace loca {

namespace {

constexpr std::uint64_t kEvalTag = 0xe7a1;
constexpr std::uint64_t kProbeTag = 0x9b0e;

using ad::Tape;
using ad::Var;

// NaN and infinities are not JSON; they are written as strings.
nlohmann::json number(double v) {
  if (std::isfinite(v)) return v;
  return std::isnan(v) ? "NaN" : (v > 0 ? "Infinity" : "-Infinity");
}

}  // namespace

std::vector<TrainingSample> make_eval_samples(const std::vector<Image>& images,
                                              const TrainConfig& cfg, std::uint64_t seed,
                                              std::size_t n_pairs) {
  require(!images.empty(), ErrorKind::kContract, "no images to evaluate on");
  require(cfg.queries_per_reference > 0, ErrorKind::kConfig, "queries_per_reference must be positive");
  const std::size_t q = cfg.queries_per_reference;
  const std::size_t n = (n_pairs + q - 1) / q;
  std::vector<TrainingSample> out(n);
  parallel_for(n, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t k = lo; k < hi; ++k) {
      Rng rng = derive_stream(seed, {kEvalTag, k});
      out[k] = make_training_sample(images[k % images.size()], cfg, rng);
    }
  });
  if (!out.empty() && n * q > n_pairs) {
    const std::size_t keep = n_pairs - (n - 1) * q;
    out.back().queries.resize(keep);
    out.back().corr.resize(keep);
  }
  return out;
}

double position_accuracy(const Tensor& logits, const std::vector<QuerySlice>& slices) {
  double sum = 0;
  std::size_t pairs = 0;
  for (const auto& s : slices) {
    const auto pos = s.corr.supervised_positions();
    if (pos.empty()) continue;
    std::vector<std::size_t> rows, targets;
    for (std::size_t j : pos) {
      rows.push_back(s.row_begin + j);
      targets.push_back(*s.corr.h[j]);
    }
    sum += static_cast<double>(count_argmax_hits(logits, rows, targets)) /
           static_cast<double>(pos.size());
    ++pairs;
  }
  require(pairs > 0, ErrorKind::kUndefined, "position accuracy over pairs with no targets");
  return sum / static_cast<double>(pairs);
}

double mean_prediction_entropy(const Tensor& probs) {
  require(probs.rank() == 2 && probs.dim(0) > 0, ErrorKind::kDimension,
          "entropy needs a non-empty [rows, K] matrix");
  const std::size_t rows = probs.dim(0), k = probs.dim(1);
  std::vector<double> mean(k, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < k; ++c) mean[c] += probs(r, c);
  double h = 0;
  for (double m : mean) {
    const double p = m / static_cast<double>(rows);
    if (p > 0) h -= p * std::log(p);
  }
  return h;
}

PositionEval evaluate_position(const ModelParams& student, const ModelParams& teacher,
                               const TrainConfig& cfg, const std::vector<TrainingSample>& samples,
                               std::size_t chunk) {
  require(chunk > 0, ErrorKind::kParameter, "chunk must be positive");
  ModelParams s = student, t = teacher;
  set_trainable(s, false);
  set_trainable(t, false);
  PositionEval e;
  double acc_sum = 0, loss_sum = 0;
  std::vector<double> mean_pred(cfg.model.num_prototypes, 0.0);
  std::size_t pred_rows = 0;
  for (std::size_t lo = 0; lo < samples.size(); lo += chunk) {
    const std::vector<TrainingSample> part(samples.begin() + static_cast<std::ptrdiff_t>(lo),
                                           samples.begin() + static_cast<std::ptrdiff_t>(
                                                                 std::min(samples.size(), lo + chunk)));
    Tape<float> tape;
    const auto vars = bind(tape, s);
    const auto fw = forward_batch(tape, vars, t, cfg, part);
    const Tensor& logits = fw.position_logits.value();
    for (const auto& sl : fw.slices) {
      const auto pos = sl.corr.supervised_positions();
      if (pos.empty()) {
        ++e.empty_pairs;
        continue;
      }
      std::vector<std::size_t> rows, targets;
      double nll = 0;
      for (std::size_t j : pos) {
        const std::size_t r = sl.row_begin + j, h = *sl.corr.h[j];
        rows.push_back(r);
        targets.push_back(h);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < logits.dim(1); ++c) mx = std::max(mx, double{logits(r, c)});
        double z = 0;
        for (std::size_t c = 0; c < logits.dim(1); ++c) z += std::exp(logits(r, c) - mx);
        nll += mx + std::log(z) - logits(r, h);
      }
      const std::size_t hits = count_argmax_hits(logits, rows, targets);
      acc_sum += static_cast<double>(hits) / static_cast<double>(pos.size());
      loss_sum += nll / static_cast<double>(pos.size());
      e.hits += hits;
      e.tokens += pos.size();
      ++e.pairs;
    }
    const Tensor& cl = fw.cluster_logits.value();
    for (std::size_t r = 0; r < cl.dim(0); ++r) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < cl.dim(1); ++c) mx = std::max(mx, double{cl(r, c)});
      double z = 0;
      for (std::size_t c = 0; c < cl.dim(1); ++c) z += std::exp(cl(r, c) - mx);
      for (std::size_t c = 0; c < cl.dim(1); ++c) mean_pred[c] += std::exp(cl(r, c) - mx) / z;
      ++pred_rows;
    }
  }
  require(e.pairs > 0, ErrorKind::kUndefined, "position accuracy over pairs with no targets");
  e.accuracy = acc_sum / static_cast<double>(e.pairs);
  e.pooled_accuracy = static_cast<double>(e.hits) / static_cast<double>(e.tokens);
  e.position_loss = loss_sum / static_cast<double>(e.pairs);
  for (double m : mean_pred) {
    const double p = m / static_cast<double>(pred_rows);
    if (p > 0) e.entropy -= p * std::log(p);
  }
  return e;
}

ProbeResult compute_miou(const std::vector<std::vector<std::uint64_t>>& confusion) {
  const std::size_t c = confusion.size();
  require(c > 0, ErrorKind::kContract, "empty confusion matrix");
  for (const auto& row : confusion)
    require(row.size() == c, ErrorKind::kDimension, "confusion matrix must be square");
  ProbeResult r;
  r.confusion = confusion;
  r.per_class_iou.assign(c, std::numeric_limits<double>::quiet_NaN());
  r.included.assign(c, false);
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < c; ++k) {
    std::uint64_t tp = confusion[k][k], fp = 0, fn = 0;
    for (std::size_t o = 0; o < c; ++o) {
      if (o == k) continue;
      fn += confusion[k][o];
      fp += confusion[o][k];
    }
    const std::uint64_t uni = tp + fp + fn;
    if (uni == 0) continue;
    r.per_class_iou[k] = static_cast<double>(tp) / static_cast<double>(uni);
    r.included[k] = true;
    sum += r.per_class_iou[k];
    ++n;
  }
  require(n > 0, ErrorKind::kUndefined, "no class appears in truth or prediction");
  r.miou = sum / static_cast<double>(n);
  return r;
}

std::vector<std::uint8_t> patch_labels(const LabeledImage& image, std::size_t patch_size) {
  const std::size_t h = image.image.height, w = image.image.width, p = patch_size;
  require(p > 0 && h % p == 0 && w % p == 0, ErrorKind::kConfig,
          "image " + std::to_string(h) + "x" + std::to_string(w) +
              " is not divisible by patch size " + std::to_string(p));
  require(image.class_count > 0 && image.class_count <= 256, ErrorKind::kContract,
          "labeled image needs a class count in [1, 256]");
  std::vector<std::uint8_t> out;
  std::vector<std::size_t> votes(image.class_count);
  for (std::size_t gy = 0; gy < h / p; ++gy)
    for (std::size_t gx = 0; gx < w / p; ++gx) {
      std::fill(votes.begin(), votes.end(), 0);
      for (std::size_t y = gy * p; y < (gy + 1) * p; ++y)
        for (std::size_t x = gx * p; x < (gx + 1) * p; ++x) {
          const std::uint8_t l = image.label(y, x);
          require(l < image.class_count, ErrorKind::kRange, "label outside class range");
          ++votes[l];
        }
      out.push_back(static_cast<std::uint8_t>(
          std::max_element(votes.begin(), votes.end()) - votes.begin()));
    }
  return out;
}

Tensor image_features(const ModelParams& encoder, const ViTConfig& cfg, const Image& image) {
  require(image.height % cfg.patch_size == 0 && image.width % cfg.patch_size == 0 && !image.empty(),
          ErrorKind::kConfig,
          "image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
              " is not divisible by patch size " + std::to_string(cfg.patch_size));
  const GridShape grid = patch_grid(image.height, image.width, cfg.patch_size);
  View v;
  v.pixels = image;
  v.patch_size = cfg.patch_size;
  v.grid = grid;
  v.kept_tokens.resize(grid.count());
  for (std::size_t i = 0; i < grid.count(); ++i) v.kept_tokens[i] = i;
  ModelParams m = encoder;
  set_trainable(m, false);
  Tape<float> tape;
  const auto vars = bind(tape, m);
  return encode_view(tape, vars, cfg, patch_pixels(v), v.kept_tokens, grid).value();
}

ProbeResult linear_probe_segmentation(const ModelParams& encoder, const ViTConfig& cfg,
                                      const std::vector<LabeledImage>& train,
                                      const std::vector<LabeledImage>& eval,
                                      const ProbeConfig& probe) {
  require(!train.empty() && !eval.empty(), ErrorKind::kContract,
          "probe needs non-empty train and eval splits");
  const std::size_t c = train.front().class_count, d = cfg.embed_dim;
  for (const auto* split : {&train, &eval})
    for (const auto& im : *split)
      require(im.class_count == c, ErrorKind::kContract, "images disagree on class count");

  auto featurize = [&](const std::vector<LabeledImage>& imgs, std::vector<float>& x,
                       std::vector<std::uint8_t>& y) {
    std::vector<Tensor> feats(imgs.size());
    std::vector<std::vector<std::uint8_t>> labels(imgs.size());
    parallel_for(imgs.size(), [&](std::size_t lo, std::size_t hi) {
      for (std::size_t i = lo; i < hi; ++i) {
        feats[i] = image_features(encoder, cfg, imgs[i].image);
        labels[i] = patch_labels(imgs[i], cfg.patch_size);
      }
    });
    for (std::size_t i = 0; i < imgs.size(); ++i) {
      x.insert(x.end(), feats[i].values().begin(), feats[i].values().end());
      y.insert(y.end(), labels[i].begin(), labels[i].end());
    }
  };
  std::vector<float> xtr, xev;
  std::vector<std::uint8_t> ytr, yev;
  featurize(train, xtr, ytr);
  featurize(eval, xev, yev);
  const std::size_t ntr = ytr.size(), nev = yev.size();

  // Standardize with training statistics.
  std::vector<double> mu(d, 0.0), sd(d, 0.0);
  for (std::size_t i = 0; i < ntr; ++i)
    for (std::size_t k = 0; k < d; ++k) mu[k] += xtr[i * d + k];
  for (auto& m : mu) m /= static_cast<double>(ntr);
  for (std::size_t i = 0; i < ntr; ++i)
    for (std::size_t k = 0; k < d; ++k) sd[k] += std::pow(xtr[i * d + k] - mu[k], 2);
  for (auto& s : sd) s = std::sqrt(s / static_cast<double>(ntr)) + 1e-6;
  auto standardize = [&](std::vector<float>& x) {
    for (std::size_t i = 0; i < x.size(); ++i)
      x[i] = static_cast<float>((x[i] - mu[i % d]) / sd[i % d]);
  };
  standardize(xtr);
  standardize(xev);

  // Weights [d + 1, c]; the last row is the bias.
  const std::size_t np = (d + 1) * c;
  std::vector<double> w(np, 0.0), g(np), m1(np, 0.0), m2(np, 0.0);
  Rng rng = derive_stream(probe.seed, {kProbeTag});
  for (std::size_t i = 0; i < d * c; ++i) w[i] = truncated_normal(rng, 0.02);
  auto scores = [&](const float* x, std::vector<double>& s) {
    for (std::size_t k = 0; k < c; ++k) {
      double v = w[d * c + k];
      for (std::size_t j = 0; j < d; ++j) v += x[j] * w[j * c + k];
      s[k] = v;
    }
  };
  std::vector<double> s(c);
  double loss = 0;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (std::size_t step = 1; step <= probe.steps; ++step) {
    std::fill(g.begin(), g.end(), 0.0);
    loss = 0;
    for (std::size_t i = 0; i < ntr; ++i) {
      const float* x = &xtr[i * d];
      scores(x, s);
      const double mx = *std::max_element(s.begin(), s.end());
      double z = 0;
      for (double& v : s) z += (v = std::exp(v - mx));
      loss -= std::log(s[ytr[i]] / z);
      for (std::size_t k = 0; k < c; ++k) {
        const double dk = s[k] / z - (k == ytr[i] ? 1.0 : 0.0);
        for (std::size_t j = 0; j < d; ++j) g[j * c + k] += dk * x[j];
        g[d * c + k] += dk;
      }
    }
    loss /= static_cast<double>(ntr);
    const double bc1 = 1 - std::pow(b1, static_cast<double>(step));
    const double bc2 = 1 - std::pow(b2, static_cast<double>(step));
    for (std::size_t i = 0; i < np; ++i) {
      const double gi = g[i] / static_cast<double>(ntr);
      m1[i] = b1 * m1[i] + (1 - b1) * gi;
      m2[i] = b2 * m2[i] + (1 - b2) * gi * gi;
      w[i] -= probe.lr * ((m1[i] / bc1) / (std::sqrt(m2[i] / bc2) + eps) + probe.weight_decay * w[i]);
    }
  }

  std::vector<std::vector<std::uint64_t>> conf(c, std::vector<std::uint64_t>(c, 0));
  for (std::size_t i = 0; i < nev; ++i) {
    scores(&xev[i * d], s);
    const auto pred = static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
    ++conf[yev[i]][pred];
  }
  ProbeResult r = compute_miou(conf);
  r.train_loss = loss;
  r.train_patches = ntr;
  r.eval_patches = nev;
  return r;
}

std::string to_json(const PositionEval& e) {
  nlohmann::json j;
  j["accuracy"] = number(e.accuracy);
  j["pooled_accuracy"] = number(e.pooled_accuracy);
  j["position_loss"] = number(e.position_loss);
  j["entropy"] = number(e.entropy);
  j["pairs"] = e.pairs;
  j["empty_pairs"] = e.empty_pairs;
  j["tokens"] = e.tokens;
  j["hits"] = e.hits;
  return j.dump();
}

std::string to_json(const ProbeResult& r) {
  nlohmann::json j;
  j["miou"] = number(r.miou);
  nlohmann::json iou = nlohmann::json::array();
  for (std::size_t k = 0; k < r.per_class_iou.size(); ++k)
    iou.push_back(r.included[k] ? number(r.per_class_iou[k]) : nlohmann::json(nullptr));
  j["per_class_iou"] = iou;
  j["confusion"] = r.confusion;
  j["train_loss"] = number(r.train_loss);
  j["train_patches"] = r.train_patches;
  j["eval_patches"] = r.eval_patches;
  return j.dump();
}

}  // namespace loca
