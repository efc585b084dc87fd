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

#ifndef LOCA_DATAGEN_HPP_
#define LOCA_DATAGEN_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "loca/image.hpp"
#include "loca/rng.hpp"

namespace loca {

struct SceneSpec {
  std::size_t height = 96;
  std::size_t width = 96;
  std::size_t min_shapes = 2;
  std::size_t max_shapes = 5;
  std::size_t class_count = 5;  // background + shape classes
  double min_shape_size = 14;   // pixels
  double max_shape_size = 44;
  double color_band = 0.06;     // per-shape colour offset bound
  double pixel_noise = 0.03;    // per-pixel noise bound
  double background_detail = 0.12;  // amplitude of the finer background octave
};

enum class ShapeKind { kRectangle, kCircle, kTriangle };

/// Geometry of one foreground shape in pixel coordinates. Rectangles use
/// (a,b)-(c,d) corners, circles centre (a,b) radius c, triangles the three
/// vertices (a,b), (c,d), (e,f).
struct SceneShape {
  ShapeKind kind = ShapeKind::kRectangle;
  std::uint8_t label = 1;
  double a = 0, b = 0, c = 0, d = 0, e = 0, f = 0;

  bool contains(double x, double y) const;
};

struct SceneLayout {
  std::size_t height = 0, width = 0;
  std::vector<SceneShape> shapes;  // later shapes occlude earlier ones
};

/// Centre colour of a class; class 0 is the background and has none.
std::array<float, 3> class_color(std::size_t label, std::size_t class_count);

SceneLayout sample_scene_layout(Rng& rng, const SceneSpec& spec);
std::vector<std::uint8_t> rasterize_labels(const SceneLayout& layout);
/// Paints a layout over a low-frequency background; rng drives colours and noise.
LabeledImage render_scene(const SceneLayout& layout, Rng& rng, const SceneSpec& spec);

LabeledImage generate_synthetic_scene(Rng& rng, const SceneSpec& spec);
/// Image i depends only on (seed, i).
std::vector<LabeledImage> build_corpus(std::size_t n, std::uint64_t seed, const SceneSpec& spec);
LabeledImage corpus_item(std::size_t index, std::uint64_t seed, const SceneSpec& spec);

/// Even indices train, odd indices evaluate.
void split_by_parity(const std::vector<LabeledImage>& corpus, std::vector<LabeledImage>& train,
                     std::vector<LabeledImage>& eval);

struct DirectoryImages {
  std::vector<Image> images;
  std::vector<std::string> names;
  std::vector<std::string> warnings;
  std::size_t skipped = 0;
};

/// PNG files sorted by filename. Unreadable files are skipped with a warning.
DirectoryImages load_image_directory(const std::filesystem::path& dir);

/// Writes image_NNNNN.png and label_NNNNN.png pairs.
void export_corpus(const std::filesystem::path& dir, const std::vector<LabeledImage>& corpus);

}  // namespace loca

#endif  // LOCA_DATAGEN_HPP_
