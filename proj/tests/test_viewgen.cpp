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
#include <set>

#include "loca/viewgen.hpp"

namespace loca {
namespace {

Image gradient_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  Image img(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        img.at(y, x, c) = static_cast<float>(
            std::clamp(0.5 * std::sin(0.3 * x + c) * std::cos(0.2 * y) + 0.5 + 0.1 * uniform(rng, -1, 1), 0.0, 1.0));
  return img;
}

AugmentationRecord identity_record(std::size_t size) {
  AugmentationRecord r;
  r.out_height = r.out_width = size;
  return r;
}

TEST(SampleViewRecord, DegenerateRangeGivesFullCrop) {
  AugmentConfig cfg;
  cfg.reference_scale = {1, 1};
  cfg.aspect = {1, 1};
  Rng rng(1);
  auto rec = sample_view_record(ViewRole::kReference, rng, cfg);
  EXPECT_EQ(rec.crop, (Box{0, 0, 1, 1}));
  EXPECT_EQ(rec.out_height, 64u);
}

TEST(SampleViewRecord, MeanAreaMatchesUniformLaw) {
  AugmentConfig cfg;
  Rng rng(7);
  double total = 0;
  for (int i = 0; i < 10000; ++i) total += sample_view_record(ViewRole::kReference, rng, cfg).crop.area();
  const double analytic = 0.5 * (cfg.reference_scale.lo + cfg.reference_scale.hi);
  EXPECT_NEAR(total / 10000, analytic, 0.05);
}

TEST(SampleViewRecord, QueryAndReferenceUsuallyIntersect) {
  AugmentConfig cfg;
  Rng rng(8);
  int hits = 0;
  for (int i = 0; i < 1000; ++i) {
    auto r = sample_view_record(ViewRole::kReference, rng, cfg);
    auto q = sample_view_record(ViewRole::kQuery, rng, cfg);
    hits += intersection_area(r.crop, q.crop) > 0;
  }
  EXPECT_GT(hits, 900);
}

TEST(SampleViewRecord, RecordsStayInsideUnitSquare) {
  AugmentConfig cfg;
  Rng rng(9);
  for (int i = 0; i < 2000; ++i) {
    auto rec = sample_view_record(i % 2 ? ViewRole::kQuery : ViewRole::kReference, rng, cfg);
    EXPECT_GT(rec.crop.area(), 0);
    EXPECT_GE(rec.crop.x0, 0);
    EXPECT_LE(rec.crop.x1(), 1 + 1e-12);
    EXPECT_LE(rec.crop.y1(), 1 + 1e-12);
  }
}

TEST(SampleViewRecord, EmptyScaleRangeIsConfigError) {
  AugmentConfig cfg;
  cfg.query_scale = {0.3, 0.1};
  Rng rng(1);
  try {
    sample_view_record(ViewRole::kQuery, rng, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
  }
}

TEST(RenderView, IdentityRecordReproducesImage) {
  Image img = gradient_image(224, 224, 3);
  View v = render_view(img, identity_record(224), 16);
  EXPECT_EQ(v.pixels, img);
  EXPECT_EQ(v.grid.count(), 196u);
}

TEST(RenderView, FlipIsColumnReversal) {
  Image img = gradient_image(40, 40, 4);
  AugmentationRecord rec = identity_record(32);
  rec.crop = {0.1, 0.2, 0.6, 0.5};
  View plain = render_view(img, rec, 8);
  rec.hflip = true;
  View flipped = render_view(img, rec, 8);
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 32; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        EXPECT_EQ(flipped.pixels.at(y, x, c), plain.pixels.at(y, 31 - x, c));
}

TEST(RenderView, NonDivisibleSizeIsConfigError) {
  Image img = gradient_image(16, 16, 5);
  try {
    render_view(img, identity_record(20), 8);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
  }
}

// Independent per-pixel reimplementation of crop/resize/flip/jitter.
float oracle_gray(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }

void oracle_hue(float& r, float& g, float& b, float shift) {
  const float mx = std::max({r, g, b}), mn = std::min({r, g, b});
  if (mx == mn) return;
  const float d = mx - mn;
  float h = mx == r ? (g - b) / d : (mx == g ? 2 + (b - r) / d : 4 + (r - g) / d);
  h = h / 6.f + shift;
  h = h - std::floor(h);
  const float s = d / mx, v = mx;
  // Component form: f(n) = v - v s max(0, min(k, 4-k, 1)), k = (n + 6h) mod 6.
  auto comp = [&](float n) {
    float k = std::fmod(n + h * 6.f, 6.f);
    return v - v * s * std::max(0.f, std::min({k, 4.f - k, 1.f}));
  };
  r = comp(5);
  g = comp(3);
  b = comp(1);
}

Image oracle_render(const Image& src, const AugmentationRecord& rec) {
  const std::size_t H = rec.out_height, W = rec.out_width;
  Image out(H, W);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const double xs = rec.hflip ? double(W - 1 - x) : double(x);
      double u = rec.crop.x0 * src.width + (xs + 0.5) * (rec.crop.width * src.width / W) - 0.5;
      double v = rec.crop.y0 * src.height + (y + 0.5) * (rec.crop.height * src.height / H) - 0.5;
      u = std::min(std::max(u, 0.0), double(src.width - 1));
      v = std::min(std::max(v, 0.0), double(src.height - 1));
      const int x0 = int(std::floor(u)), y0 = int(std::floor(v));
      const int x1 = std::min(x0 + 1, int(src.width) - 1), y1 = std::min(y0 + 1, int(src.height) - 1);
      const double ax = u - x0, ay = v - y0;
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = float((1 - ay) * ((1 - ax) * src.at(y0, x0, c) + ax * src.at(y0, x1, c)) +
                                ay * ((1 - ax) * src.at(y1, x0, c) + ax * src.at(y1, x1, c)));
    }
  const auto& j = rec.jitter;
  auto cl = [](float v) { return std::min(std::max(v, 0.f), 1.f); };
  for (float& p : out.pixels) p = cl(p * float(j.brightness));
  double mean = 0;
  for (std::size_t i = 0; i < H * W; ++i)
    mean += oracle_gray(out.pixels[3 * i], out.pixels[3 * i + 1], out.pixels[3 * i + 2]);
  const float m = float(mean / (H * W));
  for (float& p : out.pixels) p = cl(float(j.contrast) * (p - m) + m);
  for (std::size_t i = 0; i < H * W; ++i) {
    float* px = &out.pixels[3 * i];
    const float g = oracle_gray(px[0], px[1], px[2]);
    for (int c = 0; c < 3; ++c) px[c] = cl(float(j.saturation) * (px[c] - g) + g);
    oracle_hue(px[0], px[1], px[2], float(j.hue));
  }
  return out;
}

TEST(RenderView, MatchesPerPixelOracle) {
  Image img = gradient_image(16, 16, 6);
  AugmentConfig cfg;
  cfg.query_size = 16;
  cfg.patch_size = 8;
  cfg.jitter_prob = 1.0;
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    auto rec = sample_view_record(ViewRole::kQuery, rng, cfg);
    Image expected = oracle_render(img, rec);
    View v = render_view(img, rec, 8);
    float worst = 0;
    for (std::size_t i = 0; i < expected.pixels.size(); ++i)
      worst = std::max(worst, std::abs(expected.pixels[i] - v.pixels.pixels[i]));
    EXPECT_LT(worst, 1e-5) << "trial " << trial;
  }
}

TEST(Patchify, TokenCounts) {
  EXPECT_EQ(patch_grid(224, 224, 16).count(), 196u);
  EXPECT_EQ(patch_grid(96, 96, 16).count(), 36u);
  EXPECT_EQ(patch_grid(64, 64, 8).count(), 64u);
}

TEST(Patchify, RowMajorPixelLayout) {
  Image img = gradient_image(16, 16, 7);
  View v = render_view(img, identity_record(16), 8);
  Tensor t = patch_pixels(v);
  ASSERT_EQ(t.shape(), (Shape{4, 192}));
  // Token 1 is the top-right patch; its first pixel is (0, 8).
  EXPECT_EQ(t(1, 0), img.at(0, 8, 0));
  EXPECT_EQ(t(2, 3 * 8 + 2), img.at(9, 0, 2));
}

TEST(DropQueryTokens, KeepAllLeavesViewUnchanged) {
  View v = render_view(gradient_image(48, 48, 1), identity_record(48), 8);
  Rng rng(1);
  EXPECT_EQ(drop_query_tokens(v, DropMode::kRandom, 1.0, rng).kept_tokens, v.kept_tokens);
}

TEST(DropQueryTokens, FocalKeepsContiguousSquare) {
  View v = render_view(gradient_image(48, 48, 1), identity_record(48), 8);
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    auto kept = drop_query_tokens(v, DropMode::kFocal, 0.44, rng).kept_tokens;
    ASSERT_EQ(kept.size(), 16u);
    const std::size_t r0 = kept.front() / 6, c0 = kept.front() % 6;
    for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(kept[i], (r0 + i / 4) * 6 + c0 + i % 4);
  }
}

TEST(DropQueryTokens, RandomKeepsExactCount) {
  View v = render_view(gradient_image(48, 48, 1), identity_record(48), 8);
  Rng rng(3);
  auto kept = drop_query_tokens(v, DropMode::kRandom, 0.5, rng).kept_tokens;
  EXPECT_EQ(kept.size(), 18u);
  EXPECT_EQ(std::set<std::size_t>(kept.begin(), kept.end()).size(), 18u);
  EXPECT_TRUE(std::is_sorted(kept.begin(), kept.end()));
  EXPECT_LT(kept.back(), 36u);
}

TEST(DropQueryTokens, InvalidRatioIsConfigError) {
  View v = render_view(gradient_image(16, 16, 1), identity_record(16), 8);
  Rng rng(4);
  EXPECT_THROW(drop_query_tokens(v, DropMode::kRandom, 0.0, rng), Error);
  EXPECT_THROW(drop_query_tokens(v, DropMode::kFocal, 0.01, rng), Error);
}

class CorrespondenceTest : public ::testing::Test {
 protected:
  Image img = gradient_image(96, 96, 11);
  AugmentConfig cfg;
};

TEST_F(CorrespondenceTest, IdentityAugmentationMapsTokensToThemselves) {
  AugmentationRecord rec = identity_record(64);
  rec.crop = {0.1, 0.15, 0.7, 0.6};
  View a = render_view(img, rec, 8), b = render_view(img, rec, 8);
  for (auto corr : {correspondence_oracle(a, b), correspondence_nearest(a, b)}) {
    ASSERT_EQ(corr.omega.size(), 64u);
    for (std::size_t j = 0; j < 64; ++j) EXPECT_EQ(corr.h[j], j);
  }
}

TEST_F(CorrespondenceTest, DisjointCropsHaveEmptyOmega) {
  AugmentationRecord q = identity_record(32), r = identity_record(64);
  q.crop = {0.0, 0.0, 0.3, 0.3};
  r.crop = {0.5, 0.5, 0.5, 0.5};
  View qv = render_view(img, q, 8), rv = render_view(img, r, 8);
  EXPECT_TRUE(correspondence_oracle(qv, rv).omega.empty());
  EXPECT_TRUE(correspondence_nearest(qv, rv).omega.empty());
}

TEST_F(CorrespondenceTest, ZoomedHalfMapsToCoveringReferenceToken) {
  AugmentationRecord r = identity_record(64), q = identity_record(64);
  q.crop = {0.25, 0.25, 0.5, 0.5};  // half the reference extent, shown at 2x
  View rv = render_view(img, r, 8), qv = render_view(img, q, 8);
  auto corr = correspondence_oracle(qv, rv);
  ASSERT_EQ(corr.omega.size(), 64u);
  for (std::size_t j = 0; j < 64; ++j) {
    const double cx = 0.25 + (j % 8 + 0.5) * 0.5 / 8, cy = 0.25 + (j / 8 + 0.5) * 0.5 / 8;
    const std::size_t expected = std::size_t(cy * 8) * 8 + std::size_t(cx * 8);
    EXPECT_EQ(corr.h[j], expected);
    // Exhaustive check: no other reference token overlaps more.
    const Box qb = token_source_box(qv.record, qv.grid, 8, j);
    const double best = intersection_area(qb, token_source_box(rv.record, rv.grid, 8, expected));
    for (std::size_t i = 0; i < 64; ++i)
      EXPECT_LE(intersection_area(qb, token_source_box(rv.record, rv.grid, 8, i)), best);
  }
  EXPECT_EQ(correspondence_nearest(qv, rv).h, corr.h);
}

TEST_F(CorrespondenceTest, FlippedReferenceReversesColumns) {
  AugmentationRecord r = identity_record(64), q = identity_record(32);
  q.crop = {0.3, 0.2, 0.4, 0.4};
  View qv = render_view(img, q, 8), rv = render_view(img, r, 8);
  auto plain = correspondence_oracle(qv, rv);
  r.hflip = true;
  View rf = render_view(img, r, 8);
  auto oracle = correspondence_oracle(qv, rf);
  auto nearest = correspondence_nearest(qv, rf);
  for (std::size_t j = 0; j < plain.h.size(); ++j) {
    ASSERT_TRUE(plain.h[j] && oracle.h[j]);
    EXPECT_EQ(*oracle.h[j], (*plain.h[j] / 8) * 8 + (7 - *plain.h[j] % 8));
  }
  EXPECT_EQ(nearest.h, oracle.h);
}

TEST_F(CorrespondenceTest, FlippedQueryPermutesQueryColumns) {
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    auto q = sample_view_record(ViewRole::kQuery, rng, cfg);
    auto r = sample_view_record(ViewRole::kReference, rng, cfg);
    View rv = render_view(img, r, 8);
    q.hflip = false;
    auto plain = correspondence_oracle(render_view(img, q, 8), rv);
    q.hflip = true;
    auto flipped = correspondence_oracle(render_view(img, q, 8), rv);
    for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(flipped.h[j], plain.h[(j / 4) * 4 + 3 - j % 4]);
  }
}

TEST_F(CorrespondenceTest, OracleIsDeterministicAndWellFormed) {
  Rng rng(22);
  for (int trial = 0; trial < 100; ++trial) {
    View rv = render_view(img, sample_view_record(ViewRole::kReference, rng, cfg), 8);
    View qv = render_view(img, sample_view_record(ViewRole::kQuery, rng, cfg), 8);
    qv = drop_query_tokens(qv, DropMode::kRandom, 0.5, rng);
    auto a = correspondence_oracle(qv, rv), b = correspondence_oracle(qv, rv);
    EXPECT_EQ(a.h, b.h);
    EXPECT_EQ(a.omega, b.omega);
    std::set<std::size_t> kept(qv.kept_tokens.begin(), qv.kept_tokens.end());
    for (std::size_t t : a.omega) EXPECT_TRUE(kept.count(t));
    for (const auto& h : a.h)
      if (h) EXPECT_LT(*h, 64u);
    std::vector<std::size_t> defined;
    for (std::size_t j = 0; j < a.h.size(); ++j)
      if (a.h[j]) defined.push_back(qv.kept_tokens[j]);
    EXPECT_EQ(defined, a.omega);
  }
}

TEST_F(CorrespondenceTest, ShrinkingQueryCropNeverRevivesDroppedTokens) {
  Rng rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    auto big = sample_view_record(ViewRole::kQuery, rng, cfg);
    auto r = sample_view_record(ViewRole::kReference, rng, cfg);
    View rv = render_view(img, r, 8);
    // A token-aligned 2x2 sub-crop of the 4x4 query.
    const std::size_t r0 = uniform_index(rng, 3), c0 = uniform_index(rng, 3);
    AugmentationRecord small = big;
    small.out_height = small.out_width = 16;
    small.crop.width = big.crop.width / 2;
    small.crop.height = big.crop.height / 2;
    const std::size_t src_c0 = big.hflip ? 4 - c0 - 2 : c0;
    small.crop.x0 = big.crop.x0 + big.crop.width * src_c0 / 4.0;
    small.crop.y0 = big.crop.y0 + big.crop.height * r0 / 4.0;
    auto full = correspondence_oracle(render_view(img, big, 8), rv);
    auto sub = correspondence_oracle(render_view(img, small, 8), rv);
    for (std::size_t j = 0; j < 4; ++j) {
      const std::size_t parent = (r0 + j / 2) * 4 + c0 + j % 2;
      if (!full.h[parent]) {
        EXPECT_FALSE(sub.h[j]);
      }
    }
  }
}

TEST_F(CorrespondenceTest, NearestAgreesWithOracleOnRandomPairs) {
  Rng rng(24);
  std::size_t omega_total = 0, omega_disagree = 0, confident = 0;
  for (int trial = 0; trial < 300; ++trial) {
    View rv = render_view(img, sample_view_record(ViewRole::kReference, rng, cfg), 8);
    View qv = render_view(img, sample_view_record(ViewRole::kQuery, rng, cfg), 8);
    auto o = correspondence_oracle(qv, rv), n = correspondence_nearest(qv, rv);
    omega_total += o.omega.size();
    for (std::size_t j = 0; j < o.h.size(); ++j) {
      if (o.h[j].has_value() != n.h[j].has_value()) {
        ++omega_disagree;
        continue;
      }
      if (!o.h[j]) continue;
      // Unique best overlap covering at least half the smaller patch.
      const Box qb = token_source_box(qv.record, qv.grid, 8, j);
      double best = 0, second = 0;
      for (std::size_t i = 0; i < 64; ++i) {
        const double a = intersection_area(qb, token_source_box(rv.record, rv.grid, 8, i));
        if (a > best) {
          second = best;
          best = a;
        } else if (a > second) {
          second = a;
        }
      }
      const double smaller =
          std::min(qb.area(), token_source_box(rv.record, rv.grid, 8, 0).area());
      // Ties that are exact in real arithmetic differ only by rounding.
      if (best > second * (1 + 1e-9) && best >= 0.5 * smaller) {
        ++confident;
        EXPECT_EQ(*n.h[j], *o.h[j]) << "trial " << trial << " token " << j;
      }
    }
  }
  EXPECT_GT(confident, 1000u);
  EXPECT_LT(double(omega_disagree) / double(omega_total), 0.05);
}

}  // namespace
}  // namespace loca
