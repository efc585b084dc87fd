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

#include "loca/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "loca/errors.hpp"

namespace loca {
namespace {

constexpr std::uint64_t kCorpusStream = 0xC0125;

double edge_sign(double px, double py, double ax, double ay, double bx, double by) {
  return (px - bx) * (ay - by) - (ax - bx) * (py - by);
}

void check_spec(const SceneSpec& spec) {
  require(spec.height > 0 && spec.width > 0, ErrorKind::kConfig, "empty canvas");
  require(spec.min_shapes <= spec.max_shapes, ErrorKind::kConfig, "min_shapes > max_shapes");
  require(spec.class_count >= 1 && spec.class_count <= 255, ErrorKind::kConfig,
          "class_count must lie in [1, 255]");
  if (spec.max_shapes == 0) return;
  require(spec.class_count >= 2, ErrorKind::kConfig, "shapes need at least one shape class");
  require(spec.min_shape_size > 0 && spec.min_shape_size <= spec.max_shape_size,
          ErrorKind::kConfig, "invalid shape size range");
  require(spec.min_shape_size <= static_cast<double>(std::min(spec.height, spec.width)),
          ErrorKind::kConfig,
          "canvas " + std::to_string(spec.height) + "x" + std::to_string(spec.width) +
              " smaller than the minimum shape size");
}

}  // namespace

bool SceneShape::contains(double x, double y) const {
  switch (kind) {
    case ShapeKind::kRectangle:
      return x >= a && x < c && y >= b && y < d;
    case ShapeKind::kCircle:
      return (x - a) * (x - a) + (y - b) * (y - b) <= c * c;
    case ShapeKind::kTriangle: {
      const double d1 = edge_sign(x, y, a, b, c, d);
      const double d2 = edge_sign(x, y, c, d, e, f);
      const double d3 = edge_sign(x, y, e, f, a, b);
      const bool neg = d1 < 0 || d2 < 0 || d3 < 0;
      const bool pos = d1 > 0 || d2 > 0 || d3 > 0;
      return !(neg && pos);
    }
  }
  return false;
}

std::array<float, 3> class_color(std::size_t label, std::size_t class_count) {
  require(label >= 1 && label < class_count, ErrorKind::kRange,
          "class " + std::to_string(label) + " has no shape colour");
  static constexpr std::array<std::array<float, 3>, 4> kDefault = {{
      {0.85f, 0.15f, 0.15f},
      {0.15f, 0.75f, 0.20f},
      {0.20f, 0.30f, 0.90f},
      {0.90f, 0.85f, 0.15f},
  }};
  if (class_count == 5) return kDefault[label - 1];
  // Evenly spaced saturated hues.
  const float h = static_cast<float>(label - 1) / static_cast<float>(class_count - 1) * 6.f;
  const float s = 0.8f, v = 0.85f;
  const int sector = static_cast<int>(h) % 6;
  const float f = h - std::floor(h);
  const float p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

SceneLayout sample_scene_layout(Rng& rng, const SceneSpec& spec) {
  check_spec(spec);
  SceneLayout layout;
  layout.height = spec.height;
  layout.width = spec.width;
  const std::size_t count =
      spec.min_shapes + uniform_index(rng, spec.max_shapes - spec.min_shapes + 1);
  const double W = static_cast<double>(spec.width), H = static_cast<double>(spec.height);
  const double cap = std::min(W, H);
  for (std::size_t i = 0; i < count; ++i) {
    SceneShape s;
    s.kind = static_cast<ShapeKind>(uniform_index(rng, 3));
    s.label = static_cast<std::uint8_t>(1 + uniform_index(rng, spec.class_count - 1));
    const double hi = std::min(spec.max_shape_size, cap);
    switch (s.kind) {
      case ShapeKind::kRectangle: {
        const double w = uniform(rng, spec.min_shape_size, std::min(hi, W));
        const double h = uniform(rng, spec.min_shape_size, std::min(hi, H));
        s.a = uniform(rng, 0, W - w);
        s.b = uniform(rng, 0, H - h);
        s.c = s.a + w;
        s.d = s.b + h;
        break;
      }
      case ShapeKind::kCircle: {
        const double r = 0.5 * uniform(rng, spec.min_shape_size, hi);
        s.a = uniform(rng, r, W - r);
        s.b = uniform(rng, r, H - r);
        s.c = r;
        break;
      }
      case ShapeKind::kTriangle: {
        const double r = 0.5 * uniform(rng, spec.min_shape_size, hi);
        const double cx = uniform(rng, r, W - r), cy = uniform(rng, r, H - r);
        double angle = uniform(rng, 0, 2 * M_PI);
        double* coords[3][2] = {{&s.a, &s.b}, {&s.c, &s.d}, {&s.e, &s.f}};
        for (auto& v : coords) {
          *v[0] = cx + r * std::cos(angle);
          *v[1] = cy + r * std::sin(angle);
          angle += 2 * M_PI / 3 + uniform(rng, -0.3, 0.3);
        }
        break;
      }
    }
    layout.shapes.push_back(s);
  }
  return layout;
}

std::vector<std::uint8_t> rasterize_labels(const SceneLayout& layout) {
  std::vector<std::uint8_t> labels(layout.height * layout.width, 0);
  for (std::size_t y = 0; y < layout.height; ++y)
    for (std::size_t x = 0; x < layout.width; ++x)
      for (const auto& s : layout.shapes)
        if (s.contains(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5))
          labels[y * layout.width + x] = s.label;
  return labels;
}

LabeledImage render_scene(const SceneLayout& layout, Rng& rng, const SceneSpec& spec) {
  LabeledImage out;
  out.class_count = spec.class_count;
  out.image = Image(layout.height, layout.width);
  out.labels = rasterize_labels(layout);

  // Low-frequency background: two lattices of muted colours, bilinearly
  // upsampled. The coarse one sets the tone, the fine one (about a token
  // wide at reference scale) adds per-channel detail.
  constexpr std::size_t kCoarse = 5, kFine = 13;
  std::vector<float> coarse(kCoarse * kCoarse * 3), fine(kFine * kFine * 3);
  for (std::size_t i = 0; i < kCoarse * kCoarse; ++i) {
    const float g = static_cast<float>(uniform(rng, 0.3, 0.7));
    for (int c = 0; c < 3; ++c) coarse[i * 3 + c] = g + static_cast<float>(uniform(rng, -0.04, 0.04));
  }
  for (float& v : fine)
    v = static_cast<float>(uniform(rng, -spec.background_detail, spec.background_detail));
  auto lerp_lattice = [&](const std::vector<float>& lat, std::size_t n, std::size_t y,
                          std::size_t x, int c) {
    const double gy = static_cast<double>(y) * static_cast<double>(n - 1) /
                      std::max<double>(1.0, layout.height - 1.0);
    const double gx = static_cast<double>(x) * static_cast<double>(n - 1) /
                      std::max<double>(1.0, layout.width - 1.0);
    const std::size_t y0 = std::min<std::size_t>(static_cast<std::size_t>(gy), n - 2);
    const std::size_t x0 = std::min<std::size_t>(static_cast<std::size_t>(gx), n - 2);
    const double fy = gy - static_cast<double>(y0), fx = gx - static_cast<double>(x0);
    auto at = [&](std::size_t r, std::size_t q) { return lat[(r * n + q) * 3 + c]; };
    return (at(y0, x0) * (1 - fx) + at(y0, x0 + 1) * fx) * (1 - fy) +
           (at(y0 + 1, x0) * (1 - fx) + at(y0 + 1, x0 + 1) * fx) * fy;
  };
  std::vector<std::array<float, 3>> shape_colors;
  for (const auto& s : layout.shapes) {
    auto base = class_color(s.label, spec.class_count);
    for (float& ch : base) ch += static_cast<float>(uniform(rng, -spec.color_band, spec.color_band));
    shape_colors.push_back(base);
  }
  for (std::size_t y = 0; y < layout.height; ++y) {
    for (std::size_t x = 0; x < layout.width; ++x) {
      // Topmost shape covering the pixel (matches the label map).
      int top = -1;
      for (std::size_t k = 0; k < layout.shapes.size(); ++k)
        if (layout.shapes[k].contains(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5))
          top = static_cast<int>(k);
      float base[3];
      if (top >= 0) {
        for (int c = 0; c < 3; ++c) base[c] = shape_colors[top][c];
      } else {
        for (int c = 0; c < 3; ++c)
          base[c] = static_cast<float>(lerp_lattice(coarse, kCoarse, y, x, c) +
                                       lerp_lattice(fine, kFine, y, x, c));
      }
      for (int c = 0; c < 3; ++c)
        out.image.at(y, x, c) = std::clamp(
            base[c] + static_cast<float>(uniform(rng, -spec.pixel_noise, spec.pixel_noise)), 0.f,
            1.f);
    }
  }
  return out;
}

LabeledImage generate_synthetic_scene(Rng& rng, const SceneSpec& spec) {
  const SceneLayout layout = sample_scene_layout(rng, spec);
  return render_scene(layout, rng, spec);
}

LabeledImage corpus_item(std::size_t index, std::uint64_t seed, const SceneSpec& spec) {
  Rng rng = derive_stream(seed, {kCorpusStream, index});
  return generate_synthetic_scene(rng, spec);
}

std::vector<LabeledImage> build_corpus(std::size_t n, std::uint64_t seed, const SceneSpec& spec) {
  require(n >= 1, ErrorKind::kConfig, "corpus size must be at least 1");
  std::vector<LabeledImage> corpus;
  corpus.reserve(n);
  for (std::size_t i = 0; i < n; ++i) corpus.push_back(corpus_item(i, seed, spec));
  return corpus;
}

void split_by_parity(const std::vector<LabeledImage>& corpus, std::vector<LabeledImage>& train,
                     std::vector<LabeledImage>& eval) {
  train.clear();
  eval.clear();
  for (std::size_t i = 0; i < corpus.size(); ++i) (i % 2 == 0 ? train : eval).push_back(corpus[i]);
}

DirectoryImages load_image_directory(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  require(fs::is_directory(dir), ErrorKind::kIo, dir.string() + ": not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
  DirectoryImages out;
  for (const auto& f : files) {
    try {
      out.images.push_back(read_png(f));
      out.names.push_back(f.filename().string());
    } catch (const Error& e) {
      ++out.skipped;
      out.warnings.push_back(std::string("skipped ") + e.what());
    }
  }
  if (out.images.empty()) out.warnings.push_back(dir.string() + ": no readable PNG images");
  return out;
}

void export_corpus(const std::filesystem::path& dir, const std::vector<LabeledImage>& corpus) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, ErrorKind::kIo, dir.string() + ": " + ec.message());
  char name[64];
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    std::snprintf(name, sizeof(name), "image_%05zu.png", i);
    write_png(dir / name, corpus[i].image);
    std::snprintf(name, sizeof(name), "label_%05zu.png", i);
    write_gray_png(dir / name, corpus[i].image.height, corpus[i].image.width, corpus[i].labels);
  }
}

}  // namespace loca
