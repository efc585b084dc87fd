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

#include "loca/viewgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "loca/errors.hpp"

namespace loca {

double intersection_area(const Box& a, const Box& b) {
  const double w = std::min(a.x1(), b.x1()) - std::max(a.x0, b.x0);
  const double h = std::min(a.y1(), b.y1()) - std::max(a.y0, b.y0);
  return (w > 0 && h > 0) ? w * h : 0.0;
}

std::vector<std::size_t> Correspondence::supervised_positions() const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < h.size(); ++j)
    if (h[j]) out.push_back(j);
  return out;
}

namespace {

void check_range(const ScaleRange& r, const char* name, double max) {
  require(r.lo > 0 && r.lo <= r.hi && r.hi <= max, ErrorKind::kConfig,
          std::string("invalid ") + name + " range [" + std::to_string(r.lo) + ", " +
              std::to_string(r.hi) + "]");
}

void check_record(const AugmentationRecord& rec) {
  const Box& c = rec.crop;
  require(c.width > 0 && c.height > 0 && c.x0 >= 0 && c.y0 >= 0 && c.x1() <= 1 + 1e-12 &&
              c.y1() <= 1 + 1e-12,
          ErrorKind::kContract, "crop box outside the unit square or without area");
}

float gray_of(const float* rgb) { return 0.299f * rgb[0] + 0.587f * rgb[1] + 0.114f * rgb[2]; }

void shift_hue(float* rgb, float shift) {
  const float r = rgb[0], g = rgb[1], b = rgb[2];
  const float mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const float delta = mx - mn;
  if (delta <= 0.f) return;  // achromatic: hue undefined, unchanged
  float h;
  if (mx == r)
    h = std::fmod((g - b) / delta, 6.f);
  else if (mx == g)
    h = (b - r) / delta + 2.f;
  else
    h = (r - g) / delta + 4.f;
  h /= 6.f;
  h += shift;
  h -= std::floor(h);
  const float s = delta / mx, v = mx;
  const float h6 = h * 6.f;
  const int sector = static_cast<int>(std::floor(h6)) % 6;
  const float f = h6 - std::floor(h6);
  const float p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
    case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
    case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
    case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
    case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
    default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
  }
}

void apply_jitter(Image& img, const ColorJitter& j) {
  if (j.is_identity()) return;
  auto clamp01 = [](float v) { return std::clamp(v, 0.f, 1.f); };
  const std::size_t n = img.height * img.width;
  if (j.brightness != 1)
    for (float& v : img.pixels) v = clamp01(v * static_cast<float>(j.brightness));
  if (j.contrast != 1) {
    double mean = 0;
    for (std::size_t i = 0; i < n; ++i) mean += gray_of(&img.pixels[3 * i]);
    const float pivot = static_cast<float>(mean / static_cast<double>(n));
    const float k = static_cast<float>(j.contrast);
    for (float& v : img.pixels) v = clamp01((v - pivot) * k + pivot);
  }
  if (j.saturation != 1) {
    const float k = static_cast<float>(j.saturation);
    for (std::size_t i = 0; i < n; ++i) {
      float* px = &img.pixels[3 * i];
      const float g = gray_of(px);
      for (int c = 0; c < 3; ++c) px[c] = clamp01((px[c] - g) * k + g);
    }
  }
  if (j.hue != 0)
    for (std::size_t i = 0; i < n; ++i) shift_hue(&img.pixels[3 * i], static_cast<float>(j.hue));
}

}  // namespace

AugmentationRecord sample_view_record(ViewRole role, Rng& rng, const AugmentConfig& cfg) {
  const ScaleRange& scale = role == ViewRole::kReference ? cfg.reference_scale : cfg.query_scale;
  check_range(scale, role == ViewRole::kReference ? "reference scale" : "query scale", 1.0);
  check_range(cfg.aspect, "aspect", 1e9);
  const std::size_t size = role == ViewRole::kReference ? cfg.reference_size : cfg.query_size;
  require(cfg.patch_size > 0 && size % cfg.patch_size == 0, ErrorKind::kConfig,
          "view size " + std::to_string(size) + " not divisible by patch size " +
              std::to_string(cfg.patch_size));

  AugmentationRecord rec;
  rec.out_height = rec.out_width = size;
  // Area is drawn first and kept; only the aspect ratio is redrawn when the
  // box does not fit, so the area law is exactly the configured one.
  const double area = uniform(rng, scale.lo, scale.hi);
  const double log_lo = std::log(cfg.aspect.lo), log_hi = std::log(cfg.aspect.hi);
  double w = std::sqrt(area), h = std::sqrt(area);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double ratio = std::exp(uniform(rng, log_lo, log_hi));
    const double cw = std::sqrt(area * ratio), ch = std::sqrt(area / ratio);
    if (cw <= 1.0 && ch <= 1.0) {
      w = cw;
      h = ch;
      break;
    }
  }
  rec.crop = Box{uniform(rng, 0.0, 1.0 - w), uniform(rng, 0.0, 1.0 - h), w, h};
  rec.hflip = bernoulli(rng, cfg.hflip_prob);
  if (bernoulli(rng, cfg.jitter_prob)) {
    rec.jitter.brightness = uniform(rng, 1 - cfg.brightness, 1 + cfg.brightness);
    rec.jitter.contrast = uniform(rng, 1 - cfg.contrast, 1 + cfg.contrast);
    rec.jitter.saturation = uniform(rng, 1 - cfg.saturation, 1 + cfg.saturation);
    rec.jitter.hue = uniform(rng, -cfg.hue, cfg.hue);
  }
  return rec;
}

GridShape patch_grid(std::size_t height, std::size_t width, std::size_t patch_size) {
  require(patch_size > 0, ErrorKind::kConfig, "patch size must be positive");
  return {height / patch_size, width / patch_size};
}

PixelBox token_pixel_box(const GridShape& grid, std::size_t patch_size, std::size_t token) {
  require(token < grid.count(), ErrorKind::kRange, "token index out of grid");
  const std::size_t r = token / grid.cols, c = token % grid.cols;
  return {c * patch_size, r * patch_size, (c + 1) * patch_size, (r + 1) * patch_size};
}

View render_view(const Image& image, const AugmentationRecord& record, std::size_t patch_size) {
  require(!image.empty(), ErrorKind::kContract, "render_view on an empty image");
  check_record(record);
  const std::size_t H = record.out_height, W = record.out_width;
  require(patch_size > 0 && H > 0 && W > 0 && H % patch_size == 0 && W % patch_size == 0,
          ErrorKind::kConfig,
          "view size " + std::to_string(H) + "x" + std::to_string(W) +
              " not divisible by patch size " + std::to_string(patch_size));

  View view;
  view.record = record;
  view.patch_size = patch_size;
  view.grid = patch_grid(H, W, patch_size);
  view.kept_tokens.resize(view.grid.count());
  std::iota(view.kept_tokens.begin(), view.kept_tokens.end(), 0);
  view.pixels = Image(H, W);

  const double W0 = static_cast<double>(image.width), H0 = static_cast<double>(image.height);
  const double sx = record.crop.width * W0 / static_cast<double>(W);
  const double sy = record.crop.height * H0 / static_cast<double>(H);
  const double ox = record.crop.x0 * W0, oy = record.crop.y0 * H0;
  for (std::size_t y = 0; y < H; ++y) {
    const double v = std::clamp(oy + (static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, H0 - 1);
    const std::size_t y0 = static_cast<std::size_t>(v);
    const std::size_t y1 = std::min(y0 + 1, image.height - 1);
    const double fy = v - static_cast<double>(y0);
    for (std::size_t x = 0; x < W; ++x) {
      const std::size_t src_col = record.hflip ? W - 1 - x : x;
      const double u =
          std::clamp(ox + (static_cast<double>(src_col) + 0.5) * sx - 0.5, 0.0, W0 - 1);
      const std::size_t x0 = static_cast<std::size_t>(u);
      const std::size_t x1 = std::min(x0 + 1, image.width - 1);
      const double fx = u - static_cast<double>(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        double val = image.at(y0, x0, c);
        if (fx != 0 || fy != 0) {
          const double top = image.at(y0, x0, c) * (1 - fx) + image.at(y0, x1, c) * fx;
          const double bot = image.at(y1, x0, c) * (1 - fx) + image.at(y1, x1, c) * fx;
          val = top * (1 - fy) + bot * fy;
        }
        view.pixels.at(y, x, c) = std::clamp(static_cast<float>(val), 0.f, 1.f);
      }
    }
  }
  apply_jitter(view.pixels, record.jitter);
  return view;
}

Tensor patch_pixels(const View& view) { return patch_pixels(view, view.kept_tokens); }

Tensor patch_pixels(const View& view, const std::vector<std::size_t>& tokens) {
  const std::size_t P = view.patch_size;
  Tensor out(Shape{tokens.size(), P * P * 3});
  for (std::size_t r = 0; r < tokens.size(); ++r) {
    const PixelBox b = token_pixel_box(view.grid, P, tokens[r]);
    float* dst = &out(r, 0);
    for (std::size_t y = b.y0; y < b.y1; ++y)
      for (std::size_t x = b.x0; x < b.x1; ++x)
        for (std::size_t c = 0; c < 3; ++c) *dst++ = view.pixels.at(y, x, c);
  }
  return out;
}

View drop_query_tokens(View view, DropMode mode, double keep_ratio, Rng& rng) {
  require(keep_ratio > 0 && keep_ratio <= 1, ErrorKind::kConfig,
          "keep ratio must lie in (0, 1], got " + std::to_string(keep_ratio));
  const std::size_t n = view.grid.count();
  if (keep_ratio == 1.0) return view;
  std::vector<std::size_t> kept;
  if (mode == DropMode::kRandom) {
    const auto count = static_cast<std::size_t>(std::ceil(keep_ratio * static_cast<double>(n) - 1e-9));
    require(count > 0, ErrorKind::kConfig, "keep ratio keeps no tokens");
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    // Partial Fisher-Yates.
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t j = i + uniform_index(rng, n - i);
      std::swap(all[i], all[j]);
    }
    kept.assign(all.begin(), all.begin() + count);
  } else {
    const auto side = static_cast<std::size_t>(std::lround(std::sqrt(keep_ratio * static_cast<double>(n))));
    require(side > 0, ErrorKind::kConfig, "keep ratio keeps no tokens");
    const std::size_t br = std::min(side, view.grid.rows), bc = std::min(side, view.grid.cols);
    const std::size_t r0 = uniform_index(rng, view.grid.rows - br + 1);
    const std::size_t c0 = uniform_index(rng, view.grid.cols - bc + 1);
    for (std::size_t r = r0; r < r0 + br; ++r)
      for (std::size_t c = c0; c < c0 + bc; ++c) kept.push_back(r * view.grid.cols + c);
  }
  std::sort(kept.begin(), kept.end());
  view.kept_tokens = std::move(kept);
  return view;
}

Box token_source_box(const AugmentationRecord& record, const GridShape& grid,
                     std::size_t patch_size, std::size_t token) {
  const PixelBox pb = token_pixel_box(grid, patch_size, token);
  const double W = static_cast<double>(record.out_width);
  const double H = static_cast<double>(record.out_height);
  double u0 = static_cast<double>(pb.x0), u1 = static_cast<double>(pb.x1);
  if (record.hflip) {
    const double f0 = W - u1, f1 = W - u0;
    u0 = f0;
    u1 = f1;
  }
  const Box& c = record.crop;
  const double x0 = c.x0 + u0 / W * c.width, x1 = c.x0 + u1 / W * c.width;
  const double y0 = c.y0 + static_cast<double>(pb.y0) / H * c.height;
  const double y1 = c.y0 + static_cast<double>(pb.y1) / H * c.height;
  return Box{x0, y0, x1 - x0, y1 - y0};
}

Correspondence correspondence_oracle(const View& query, const View& reference) {
  const std::size_t n_ref = reference.grid.count();
  std::vector<Box> ref_boxes(n_ref);
  for (std::size_t i = 0; i < n_ref; ++i)
    ref_boxes[i] =
        token_source_box(reference.record, reference.grid, reference.patch_size, i);

  Correspondence corr;
  corr.query_tokens = query.kept_tokens;
  corr.h.resize(query.kept_tokens.size());
  for (std::size_t j = 0; j < query.kept_tokens.size(); ++j) {
    const Box qb =
        token_source_box(query.record, query.grid, query.patch_size, query.kept_tokens[j]);
    double best = 0.0;
    for (std::size_t i = 0; i < n_ref; ++i) {
      const double a = intersection_area(qb, ref_boxes[i]);
      if (a > best) {
        best = a;
        corr.h[j] = i;
      }
    }
    if (corr.h[j]) corr.omega.push_back(query.kept_tokens[j]);
  }
  return corr;
}

Correspondence correspondence_nearest(const View& query, const View& reference) {
  const AugmentationRecord& rr = reference.record;
  Correspondence corr;
  corr.query_tokens = query.kept_tokens;
  corr.h.resize(query.kept_tokens.size());
  for (std::size_t j = 0; j < query.kept_tokens.size(); ++j) {
    const Box qb =
        token_source_box(query.record, query.grid, query.patch_size, query.kept_tokens[j]);
    // Defined wherever the footprint overlaps the reference crop. The centre
    // of the clipped footprint lands in a cell of maximal overlap per axis.
    if (intersection_area(qb, rr.crop) <= 0.0) continue;
    const double cx0 = std::max(qb.x0, rr.crop.x0), cx1 = std::min(qb.x1(), rr.crop.x1());
    const double cy0 = std::max(qb.y0, rr.crop.y0), cy1 = std::min(qb.y1(), rr.crop.y1());
    double u = (0.5 * (cx0 + cx1) - rr.crop.x0) / rr.crop.width;
    const double v = (0.5 * (cy0 + cy1) - rr.crop.y0) / rr.crop.height;
    if (rr.hflip) u = 1.0 - u;
    auto snap = [](double t, std::size_t cells) {
      const double idx = std::floor(t * static_cast<double>(cells));
      return static_cast<std::size_t>(std::clamp(idx, 0.0, static_cast<double>(cells - 1)));
    };
    const std::size_t col = snap(u, reference.grid.cols);
    const std::size_t row = snap(v, reference.grid.rows);
    corr.h[j] = row * reference.grid.cols + col;
    corr.omega.push_back(query.kept_tokens[j]);
  }
  return corr;
}

}  // namespace loca
