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

#ifndef LOCA_VIEWGEN_HPP_
#define LOCA_VIEWGEN_HPP_

#include <cstddef>
#include <optional>
#include <vector>

#include "loca/image.hpp"
#include "loca/rng.hpp"
#include "loca/tensor.hpp"

namespace loca {

enum class ViewRole { kReference, kQuery };
enum class DropMode { kRandom, kFocal };

/// Axis-aligned box in normalized [0,1] coordinates of the original image.
struct Box {
  double x0 = 0, y0 = 0, width = 1, height = 1;

  double x1() const { return x0 + width; }
  double y1() const { return y0 + height; }
  double area() const { return width * height; }
  bool operator==(const Box&) const = default;
};

double intersection_area(const Box& a, const Box& b);

/// Multiplicative brightness/contrast/saturation factors and additive hue
/// shift (fraction of a full turn). Defaults are the identity.
struct ColorJitter {
  double brightness = 1, contrast = 1, saturation = 1, hue = 0;

  bool is_identity() const {
    return brightness == 1 && contrast == 1 && saturation == 1 && hue == 0;
  }
  bool operator==(const ColorJitter&) const = default;
};

/// The exact randomized draw that produced a view.
struct AugmentationRecord {
  Box crop;
  bool hflip = false;
  ColorJitter jitter;
  std::size_t out_height = 0, out_width = 0;

  bool operator==(const AugmentationRecord&) const = default;
};

struct ScaleRange {
  double lo = 0, hi = 0;
};

/// Sampling law for views.
struct AugmentConfig {
  ScaleRange reference_scale{0.3, 1.0};
  ScaleRange query_scale{0.05, 0.3};
  ScaleRange aspect{3.0 / 4.0, 4.0 / 3.0};
  double hflip_prob = 0.5;
  double jitter_prob = 0.8;
  double brightness = 0.4, contrast = 0.4, saturation = 0.2, hue = 0.1;
  std::size_t patch_size = 8;
  std::size_t reference_size = 64;
  std::size_t query_size = 32;
};

struct GridShape {
  std::size_t rows = 0, cols = 0;
  std::size_t count() const { return rows * cols; }
  bool operator==(const GridShape&) const = default;
};

/// Pixel box [x0, x1) x [y0, y1) of one token inside its view.
struct PixelBox {
  std::size_t x0, y0, x1, y1;
};

struct View {
  Image pixels;
  AugmentationRecord record;
  std::size_t patch_size = 0;
  GridShape grid;
  std::vector<std::size_t> kept_tokens;  // sorted, unique
};

/// h is aligned with query kept_tokens; omega lists the query token ids
/// whose h is defined.
struct Correspondence {
  std::vector<std::size_t> query_tokens;
  std::vector<std::optional<std::size_t>> h;
  std::vector<std::size_t> omega;

  /// Positions j into query_tokens with a defined target.
  std::vector<std::size_t> supervised_positions() const;
};

AugmentationRecord sample_view_record(ViewRole role, Rng& rng, const AugmentConfig& cfg);

/// Crop + bilinear resize, then horizontal flip, then colour jitter.
View render_view(const Image& image, const AugmentationRecord& record, std::size_t patch_size);

GridShape patch_grid(std::size_t height, std::size_t width, std::size_t patch_size);
PixelBox token_pixel_box(const GridShape& grid, std::size_t patch_size, std::size_t token);

/// Flattened P*P*3 pixels for each kept token, one row per token.
Tensor patch_pixels(const View& view);
Tensor patch_pixels(const View& view, const std::vector<std::size_t>& tokens);

View drop_query_tokens(View view, DropMode mode, double keep_ratio, Rng& rng);

/// Token footprint in original-image coordinates, flip undone.
Box token_source_box(const AugmentationRecord& record, const GridShape& grid,
                     std::size_t patch_size, std::size_t token);

/// Exhaustive greatest-overlap matching.
Correspondence correspondence_oracle(const View& query, const View& reference);
/// Maps query token centres through the augmentations and snaps to the
/// reference grid.
Correspondence correspondence_nearest(const View& query, const View& reference);

}  // namespace loca

#endif  // LOCA_VIEWGEN_HPP_
