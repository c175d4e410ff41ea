// Copyright (c) 2026 The misp authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>

#include <catch2/catch_amalgamated.hpp>

#include "misp/misp.hpp"
#include "oracle_data.hpp"
#include "test_support.hpp"

using namespace misp;
using testsupport::make_tensor;
using testsupport::max_abs_diff;

namespace {

RawFrame frame_from_unit(const std::vector<float>& values, int h, int w,
                         BayerPattern pattern) {
  RawFrame raw;
  raw.mosaic = Tensor<std::uint16_t>({1, 1, h, w});
  for (size_t i = 0; i < values.size(); ++i) {
    raw.mosaic.data[i] =
        std::uint16_t(std::lround(double(values[i]) * 65535.0));
  }
  raw.pattern = pattern;
  return raw;
}

}  // namespace

TEST_CASE("bayer pattern names round trip") {
  for (const char* name : {"RGGB", "BGGR", "GRBG", "GBRG"}) {
    REQUIRE(bayer_pattern_name(parse_bayer_pattern(name)) == name);
  }
  REQUIRE_THROWS_AS(parse_bayer_pattern("XYZW"), MetadataError);
}

TEST_CASE("pack_bayer separates sites in canonical order") {
  // 4x4 mosaic holding its own site index, so placement is fully visible.
  std::vector<float> v(16);
  for (int i = 0; i < 16; ++i) v[size_t(i)] = float(i) / 16.f;
  const struct {
    BayerPattern pattern;
    // site index of R, G-in-R-row, G-in-B-row, B inside the 2x2 tile
    int r, g1, g2, b;
  } cases[] = {
      {BayerPattern::kRGGB, 0, 1, 2, 3},
      {BayerPattern::kBGGR, 3, 2, 1, 0},
      {BayerPattern::kGRBG, 1, 0, 3, 2},
      {BayerPattern::kGBRG, 2, 3, 0, 1},
  };
  for (const auto& tc : cases) {
    RawFrame raw = frame_from_unit(v, 4, 4, tc.pattern);
    Tensor<float> packed = pack_bayer(raw);
    REQUIRE(packed.shape == Shape{1, 4, 2, 2});
    const int offs[4] = {tc.r, tc.g1, tc.g2, tc.b};
    for (int c = 0; c < 4; ++c) {
      const int oy = offs[c] / 2, ox = offs[c] % 2;
      for (int y = 0; y < 2; ++y) {
        for (int x = 0; x < 2; ++x) {
          const float expect = v[size_t(2 * y + oy) * 4 + size_t(2 * x + ox)];
          REQUIRE(packed.at(0, c, y, x) == Catch::Approx(expect).margin(1e-4));
        }
      }
    }
  }
}

TEST_CASE("pack_bayer applies black and white levels") {
  RawFrame raw;
  raw.mosaic = Tensor<std::uint16_t>({1, 1, 2, 2});
  raw.mosaic.data = {512, 1024, 256, 2048};
  raw.black_level = 512;
  raw.white_level = 2048;
  Tensor<float> packed = pack_bayer(raw);
  REQUIRE(packed.at(0, 0, 0, 0) == 0.f);                       // at black
  REQUIRE(packed.at(0, 1, 0, 0) == Catch::Approx(512.f / 1536.f));
  REQUIRE(packed.at(0, 2, 0, 0) == 0.f);                       // clamped
  REQUIRE(packed.at(0, 3, 0, 0) == 1.f);                       // at white

  RawFrame bad = raw;
  bad.white_level = 512;
  REQUIRE_THROWS_AS(pack_bayer(bad), MetadataError);
  RawFrame odd;
  odd.mosaic = Tensor<std::uint16_t>({1, 1, 3, 4});
  REQUIRE_THROWS_AS(pack_bayer(odd), DimensionError);
}

TEST_CASE("demosaic matches bilinear reference") {
  using namespace testdata;
  RawFrame raw = frame_from_unit(kDemoRaw, 6, 6, BayerPattern::kRGGB);
  Tensor<float> rgb = demosaic_simple(raw);
  REQUIRE(rgb.shape == Shape{1, 3, 6, 6});
  // 16-bit quantization of the input bounds the match.
  REQUIRE(max_abs_diff(rgb, make_tensor<float>({1, 3, 6, 6}, kDemoRgb)) <
          2e-5);
}

TEST_CASE("demosaic keeps constant mosaics constant") {
  std::vector<float> v(64, 0.25f);
  RawFrame raw = frame_from_unit(v, 8, 8, BayerPattern::kGBRG);
  Tensor<float> rgb = demosaic_simple(raw);
  for (const float x : rgb.data) REQUIRE(x == Catch::Approx(0.25f).margin(1e-4));
}

TEST_CASE("coordinate map spans the unit square") {
  Tensor<float> cm = coordinate_map(5, 9);
  REQUIRE(cm.shape == Shape{1, 2, 5, 9});
  REQUIRE(cm.at(0, 0, 0, 0) == -1.f);
  REQUIRE(cm.at(0, 1, 0, 0) == -1.f);
  REQUIRE(cm.at(0, 0, 4, 8) == 1.f);
  REQUIRE(cm.at(0, 1, 4, 8) == 1.f);
  REQUIRE(cm.at(0, 0, 2, 4) == 0.f);
  REQUIRE(cm.at(0, 1, 2, 4) == 0.f);
  // x varies along columns only, y along rows only.
  REQUIRE(cm.at(0, 0, 3, 4) == cm.at(0, 0, 0, 4));
  REQUIRE(cm.at(0, 1, 3, 4) == cm.at(0, 1, 3, 0));
}

TEST_CASE("vignette gain profile") {
  REQUIRE(vignette_gain(0.f, 0.f, 0.35f) == Catch::Approx(1.f));
  REQUIRE(vignette_gain(1.f, 1.f, 0.35f) == Catch::Approx(0.65f));
  REQUIRE(vignette_gain(-1.f, 1.f, 0.35f) == Catch::Approx(0.65f));
  REQUIRE(vignette_gain(1.f, 0.f, 0.4f) == Catch::Approx(0.8f));
}

TEST_CASE("synth_pair geometry: target is the shifted scene") {
  Rng rng(17);
  Tensor<float> scene = make_scene(16, 16, rng);
  GenParams gp;
  gp.shift_x = 2;
  gp.shift_y = -1;
  gp.gamma = 2.2;
  SyntheticPair pair = synth_pair(scene, gp);

  REQUIRE(max_abs_diff(pair.aligned_gt, scene) == 0.0);
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) {
      REQUIRE(pair.true_flow.at(0, 0, y, x) == 2.f);
      REQUIRE(pair.true_flow.at(0, 1, y, x) == -1.f);
    }
  }
  // target(p) samples scene at p + flow; rows/cols pushed out are zero.
  for (int y = 2; y < 16; ++y) {
    for (int x = 0; x < 14; ++x) {
      REQUIRE(pair.target.at(0, 1, y, x) ==
              Catch::Approx(scene.at(0, 1, y - 1, x + 2)).margin(1e-6));
    }
  }
  REQUIRE(pair.target.at(0, 0, 0, 0) == 0.f);   // y-1 out of range
  REQUIRE(pair.target.at(0, 0, 15, 15) == 0.f); // x+2 out of range

  // Stored relation: warping the aligned ground truth by the true flow
  // reproduces the target exactly.
  REQUIRE(max_abs_diff(warp_tensor(pair.aligned_gt, pair.true_flow),
                       pair.target) == 0.0);
}

TEST_CASE("synth_pair physics: vignette and gamma reach the mosaic") {
  // Identity color matrix, no noise, flat white scene: a raw site must hold
  // gain * value^gamma for its own color.
  Tensor<float> scene({1, 3, 8, 8}, 0.0f);
  for (int c = 0; c < 3; ++c) {
    float* p = scene.plane(0, c);
    for (size_t i = 0; i < 64; ++i) p[i] = 0.8f;
  }
  GenParams gp;
  gp.gamma = 2.2;
  gp.vignette = 0.3;
  SyntheticPair pair = synth_pair(scene, gp);

  const float linear = std::pow(0.8f, 2.2f);
  Tensor<float> cm = coordinate_map(8, 8);
  auto site = [&](int y, int x) {
    return detail::normalize_site(
        pair.raw.mosaic.at(0, 0, y, x), pair.raw.black_level,
        pair.raw.white_level);
  };
  // Corner red site (0,0) and a central green site (3,4).
  const float g00 = vignette_gain(cm.at(0, 0, 0, 0), cm.at(0, 1, 0, 0), 0.3f);
  REQUIRE(site(0, 0) == Catch::Approx(g00 * linear).margin(2e-4));
  const float g34 = vignette_gain(cm.at(0, 0, 3, 4), cm.at(0, 1, 3, 4), 0.3f);
  REQUIRE(site(3, 4) == Catch::Approx(g34 * linear).margin(2e-4));
}

TEST_CASE("synth_pair applies the color matrix inverse") {
  // Pure red scene through a known matrix: raw red sites hold the first
  // column response of M^-1 applied to (r,0,0)^gamma... i.e. row 0 of M^-1
  // scaled by the linear red value.
  Tensor<float> scene({1, 3, 4, 4}, 0.0f);
  float* rp = scene.plane(0, 0);
  for (size_t i = 0; i < 16; ++i) rp[i] = 0.5f;
  GenParams gp;
  gp.gamma = 2.0;
  gp.color_matrix = {0.9, 0.08, 0.02, 0.05, 0.9, 0.05, 0.03, 0.12, 0.85};
  SyntheticPair pair = synth_pair(scene, gp);

  // With scene (v,0,0) linear, raw = M^-1 scene; verify the red site value
  // against a directly inverted matrix.
  const double v = std::pow(0.5, 2.0);
  const auto& m = gp.color_matrix;
  const double det = m[0] * (m[4] * m[8] - m[5] * m[7]) -
                     m[1] * (m[3] * m[8] - m[5] * m[6]) +
                     m[2] * (m[3] * m[7] - m[4] * m[6]);
  const double inv00 = (m[4] * m[8] - m[5] * m[7]) / det;
  const float got = detail::normalize_site(pair.raw.mosaic.at(0, 0, 0, 0),
                                           pair.raw.black_level,
                                           pair.raw.white_level);
  REQUIRE(got == Catch::Approx(inv00 * v).margin(2e-4));
}

TEST_CASE("synth_pair noise is deterministic per seed") {
  Rng rng(5);
  Tensor<float> scene = make_scene(8, 8, rng);
  GenParams gp;
  gp.noise_sigma = 0.01;
  gp.noise_seed = 77;
  SyntheticPair a = synth_pair(scene, gp);
  SyntheticPair b = synth_pair(scene, gp);
  REQUIRE(a.raw.mosaic.data == b.raw.mosaic.data);
  gp.noise_seed = 78;
  SyntheticPair c = synth_pair(scene, gp);
  REQUIRE(a.raw.mosaic.data != c.raw.mosaic.data);
}

TEST_CASE("augment preserves the warp relation") {
  Rng rng(29);
  Tensor<float> scene = make_scene(12, 12, rng);
  GenParams gp;
  gp.shift_x = 3;
  gp.shift_y = -2;
  SyntheticPair pair = synth_pair(scene, gp);

  const AugmentOps cases[] = {
      {false, true, false}, {false, false, true}, {true, false, false},
      {true, true, false},  {false, true, true},  {true, true, true},
  };
  for (const AugmentOps& ops : cases) {
    SyntheticPair aug = augment(pair, ops);
    REQUIRE(max_abs_diff(warp_tensor(aug.aligned_gt, aug.true_flow),
                         aug.target) < 1e-6);
    // The raw mosaic stays decodable: its demosaic matches the transformed
    // ground truth up to rendering differences, so just check dims/pattern
    // consistency via pack.
    Tensor<float> packed = pack_bayer(aug.raw);
    REQUIRE(packed.shape.c == 4);
  }
}

TEST_CASE("augment flips move image content consistently") {
  Rng rng(31);
  Tensor<float> scene = make_scene(10, 10, rng);
  SyntheticPair pair = synth_pair(scene, GenParams{});
  AugmentOps ops;
  ops.hflip = true;
  SyntheticPair aug = augment(pair, ops);
  for (int y = 0; y < 10; ++y) {
    for (int x = 0; x < 10; ++x) {
      REQUIRE(aug.aligned_gt.at(0, 2, y, x) ==
              pair.aligned_gt.at(0, 2, y, 9 - x));
    }
  }
  // Horizontal flip negates the horizontal flow component.
  GenParams gp;
  gp.shift_x = 2;
  SyntheticPair shifted = augment(synth_pair(scene, gp), ops);
  REQUIRE(shifted.true_flow.at(0, 0, 5, 5) == -2.f);
  REQUIRE(shifted.true_flow.at(0, 1, 5, 5) == 0.f);
}

TEST_CASE("augment draw is deterministic") {
  Rng a(123), b(123);
  for (int i = 0; i < 8; ++i) {
    AugmentOps oa = draw_augment(a), ob = draw_augment(b);
    REQUIRE(oa.rot90 == ob.rot90);
    REQUIRE(oa.hflip == ob.hflip);
    REQUIRE(oa.vflip == ob.vflip);
  }
}

TEST_CASE("make_scene is deterministic and in range") {
  Rng a(9), b(9);
  Tensor<float> sa = make_scene(16, 16, a);
  Tensor<float> sb = make_scene(16, 16, b);
  REQUIRE(sa.data == sb.data);
  for (const float v : sa.data) {
    REQUIRE(v >= 0.f);
    REQUIRE(v <= 1.f);
  }
  Rng c(10);
  Tensor<float> sc = make_scene(16, 16, c);
  REQUIRE(sa.data != sc.data);
}

TEST_CASE("marker scene centroid localization") {
  Tensor<float> img = make_marker_scene(32, 32, 12.0, 20.0, 3);
  auto [cx, cy] = bright_centroid(img);
  REQUIRE(cx == Catch::Approx(20.0).margin(0.51));
  REQUIRE(cy == Catch::Approx(12.0).margin(0.51));

  // Centroid tracks a warp of the marker.
  Tensor<float> flow({1, 2, 32, 32});
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      flow.at(0, 0, y, x) = 4.f;
      flow.at(0, 1, y, x) = -4.f;
    }
  }
  Tensor<float> moved = warp_tensor(img, flow);
  auto [mx, my] = bright_centroid(moved);
  REQUIRE(mx == Catch::Approx(16.0).margin(0.51));
  REQUIRE(my == Catch::Approx(16.0).margin(0.51));

  Tensor<float> flat({1, 3, 8, 8}, 0.5f);
  REQUIRE_THROWS_AS(bright_centroid(flat), Error);
}
