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

#ifndef LOCA_IMAGE_HPP_
#define LOCA_IMAGE_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace loca {

/// H x W x 3 floats in [0, 1], interleaved RGB, row-major.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w) : height(h), width(w), pixels(h * w * 3, 0.f) {}

  bool empty() const { return height == 0 || width == 0; }
  float& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
  float at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * 3 + c];
  }
  bool operator==(const Image&) const = default;
};

/// Image with a per-pixel class map.
struct LabeledImage {
  Image image;
  std::vector<std::uint8_t> labels;  // height * width
  std::size_t class_count = 0;

  std::uint8_t label(std::size_t y, std::size_t x) const { return labels[y * image.width + x]; }
  bool operator==(const LabeledImage&) const = default;
};

/// Decodes any PNG to RGB floats; grayscale is replicated to three channels.
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);
/// Single-channel 8-bit PNG, used for label maps.
void write_gray_png(const std::filesystem::path& path, std::size_t height, std::size_t width,
                    const std::vector<std::uint8_t>& values);

}  // namespace loca

#endif  // LOCA_IMAGE_HPP_
