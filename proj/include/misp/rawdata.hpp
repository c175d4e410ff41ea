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

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "misp/flowalign.hpp"
#include "misp/random.hpp"
#include "misp/tensor.hpp"

namespace misp {

enum class BayerPattern { kRGGB, kBGGR, kGRBG, kGBRG };

inline BayerPattern parse_bayer_pattern(const std::string& s) {
  if (s == "RGGB") return BayerPattern::kRGGB;
  if (s == "BGGR") return BayerPattern::kBGGR;
  if (s == "GRBG") return BayerPattern::kGRBG;
  if (s == "GBRG") return BayerPattern::kGBRG;
  throw MetadataError(strcat("unknown Bayer pattern '", s,
                             "'; expected RGGB, BGGR, GRBG or GBRG"));
}

inline std::string bayer_pattern_name(BayerPattern p) {
  switch (p) {
    case BayerPattern::kRGGB: return "RGGB";
    case BayerPattern::kBGGR: return "BGGR";
    case BayerPattern::kGRBG: return "GRBG";
    case BayerPattern::kGBRG: return "GBRG";
  }
  return "?";
}

// Color of each site in the 2x2 cell: 0=R, 1=G, 2=B, row-major.
inline std::array<int, 4> bayer_cfa(BayerPattern p) {
  switch (p) {
    case BayerPattern::kRGGB: return {0, 1, 1, 2};
    case BayerPattern::kBGGR: return {2, 1, 1, 0};
    case BayerPattern::kGRBG: return {1, 0, 2, 1};
    case BayerPattern::kGBRG: return {1, 2, 0, 1};
  }
  return {0, 1, 1, 2};
}

inline BayerPattern bayer_from_cfa(const std::array<int, 4>& cfa) {
  for (BayerPattern p : {BayerPattern::kRGGB, BayerPattern::kBGGR,
                         BayerPattern::kGRBG, BayerPattern::kGBRG}) {
    if (bayer_cfa(p) == cfa) return p;
  }
  throw MetadataError("cell layout is not a valid Bayer pattern");
}

// (dy, dx) of R, G-in-R-row, G-in-B-row, B inside the 2x2 cell.
inline std::array<std::pair<int, int>, 4> bayer_offsets(BayerPattern p) {
  const auto cfa = bayer_cfa(p);
  std::array<std::pair<int, int>, 4> out{};
  int r_row = -1;
  for (int i = 0; i < 4; ++i) {
    if (cfa[size_t(i)] == 0) {
      out[0] = {i / 2, i % 2};
      r_row = i / 2;
    } else if (cfa[size_t(i)] == 2) {
      out[3] = {i / 2, i % 2};
    }
  }
  for (int i = 0; i < 4; ++i) {
    if (cfa[size_t(i)] == 1) {
      if (i / 2 == r_row) {
        out[1] = {i / 2, i % 2};
      } else {
        out[2] = {i / 2, i % 2};
      }
    }
  }
  return out;
}

struct RawFrame {
  Tensor<std::uint16_t> mosaic;  // (1, 1, H, W), one color sample per site
  BayerPattern pattern = BayerPattern::kRGGB;
  int black_level = 0;
  int white_level = 65535;
};

namespace detail {

inline void check_raw(const RawFrame& raw) {
  check<DimensionError>(raw.mosaic.shape.n == 1 && raw.mosaic.shape.c == 1,
                        "raw mosaic must be (1,1,H,W), got ",
                        raw.mosaic.shape.str());
  check<DimensionError>(
      raw.mosaic.shape.h % 2 == 0 && raw.mosaic.shape.w % 2 == 0,
      "raw mosaic dims must be even, got ", raw.mosaic.shape.str());
  check<MetadataError>(raw.white_level > raw.black_level,
                       "white_level (", raw.white_level,
                       ") must exceed black_level (", raw.black_level, ")");
}

inline float normalize_site(std::uint16_t v, int black, int white) {
  float x = (float(v) - float(black)) / float(white - black);
  return x < 0.f ? 0.f : (x > 1.f ? 1.f : x);
}

// Mirror (reflect-101) index. Steps of 2 keep Bayer parity, and reflection
// at the border does too, so color planes never mix.
inline int mirror(int i, int n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}

}  // namespace detail

// Packs a mosaic into 4 half-resolution channels, canonically ordered
// (R, G-in-R-row, G-in-B-row, B) regardless of the pattern, normalizing
// levels to [0, 1].
inline Tensor<float> pack_bayer(const RawFrame& raw) {
  detail::check_raw(raw);
  const int H = raw.mosaic.shape.h, W = raw.mosaic.shape.w;
  const auto off = bayer_offsets(raw.pattern);
  Tensor<float> out({1, 4, H / 2, W / 2});
  for (int ch = 0; ch < 4; ++ch) {
    const int dy = off[size_t(ch)].first, dx = off[size_t(ch)].second;
    float* dst = out.plane(0, ch);
    const std::uint16_t* src = raw.mosaic.plane(0, 0);
    for (int y = 0; y < H / 2; ++y) {
      for (int x = 0; x < W / 2; ++x) {
        dst[size_t(y) * (W / 2) + x] = detail::normalize_site(
            src[size_t(2 * y + dy) * W + 2 * x + dx], raw.black_level,
            raw.white_level);
      }
    }
  }
  return out;
}

// Bilinear demosaic at full mosaic resolution, (1, 3, H, W), pixel-aligned
// with the mosaic (no spatial shift). Borders use parity-preserving mirror
// indexing so constant color planes stay exactly constant.
inline Tensor<float> demosaic_simple(const RawFrame& raw) {
  detail::check_raw(raw);
  const int H = raw.mosaic.shape.h, W = raw.mosaic.shape.w;
  const auto cfa = bayer_cfa(raw.pattern);
  Tensor<float> norm({1, 1, H, W});
  {
    const std::uint16_t* src = raw.mosaic.plane(0, 0);
    float* dst = norm.plane(0, 0);
    for (size_t i = 0; i < size_t(H) * W; ++i) {
      dst[i] = detail::normalize_site(src[i], raw.black_level,
                                      raw.white_level);
    }
  }
  const float* m = norm.plane(0, 0);
  auto at = [&](int y, int x) {
    return m[size_t(detail::mirror(y, H)) * W + detail::mirror(x, W)];
  };
  auto avg_h = [&](int y, int x) { return 0.5f * (at(y, x - 1) + at(y, x + 1)); };
  auto avg_v = [&](int y, int x) { return 0.5f * (at(y - 1, x) + at(y + 1, x)); };
  auto avg_plus = [&](int y, int x) {
    return 0.25f * (at(y, x - 1) + at(y, x + 1) + at(y - 1, x) + at(y + 1, x));
  };
  auto avg_x = [&](int y, int x) {
    return 0.25f * (at(y - 1, x - 1) + at(y - 1, x + 1) + at(y + 1, x - 1) +
                    at(y + 1, x + 1));
  };

  Tensor<float> out({1, 3, H, W});
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const int site = cfa[size_t((y % 2) * 2 + (x % 2))];
      const int row_color = cfa[size_t((y % 2) * 2)] == 1 &&
                                    cfa[size_t((y % 2) * 2 + 1)] == 1
                                ? 1
                                : (cfa[size_t((y % 2) * 2)] != 1
                                       ? cfa[size_t((y % 2) * 2)]
                                       : cfa[size_t((y % 2) * 2 + 1)]);
      float r, g, b;
      if (site == 0) {  // red site
        r = at(y, x);
        g = avg_plus(y, x);
        b = avg_x(y, x);
      } else if (site == 2) {  // blue site
        b = at(y, x);
        g = avg_plus(y, x);
        r = avg_x(y, x);
      } else {  // green site: the non-green color of this row sits beside it
        g = at(y, x);
        if (row_color == 0) {
          r = avg_h(y, x);
          b = avg_v(y, x);
        } else {
          b = avg_h(y, x);
          r = avg_v(y, x);
        }
      }
      const size_t p = size_t(y) * W + x;
      out.plane(0, 0)[p] = r;
      out.plane(0, 1)[p] = g;
      out.plane(0, 2)[p] = b;
    }
  }
  return out;
}

// Normalized pixel coordinates: channel 0 is x in [-1, 1] left to right,
// channel 1 is y in [-1, 1] top to bottom.
inline Tensor<float> coordinate_map(int h, int w) {
  check<DimensionError>(h >= 2 && w >= 2,
                        "coordinate_map: dims must be >= 2, got ", h, "x", w);
  Tensor<float> out({1, 2, h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      out.at(0, 0, y, x) = -1.f + 2.f * float(x) / float(w - 1);
      out.at(0, 1, y, x) = -1.f + 2.f * float(y) / float(h - 1);
    }
  }
  return out;
}

// Radial gain 1 - s * r^2 with r = 1 at the corners. s in [0, 1).
inline float vignette_gain(float xn, float yn, float strength) {
  const float r2 = 0.5f * (xn * xn + yn * yn);
  return 1.f - strength * r2;
}

struct GenParams {
  // Row-major 3x3 matrix mapping linear raw RGB to linear scene RGB.
  std::array<double, 9> color_matrix = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  double gamma = 2.2;        // scene = linear^(1/gamma)
  double vignette = 0.0;     // radial gain strength, [0, 1)
  double shift_x = 0.0;      // translation flow, pixels
  double shift_y = 0.0;
  double noise_sigma = 0.0;  // Gaussian read noise, normalized units
  BayerPattern pattern = BayerPattern::kRGGB;
  std::uint64_t noise_seed = 0;
};

struct SyntheticPair {
  RawFrame raw;
  Tensor<float> target;      // (1,3,H,W) color-rendered, misaligned
  Tensor<float> aligned_gt;  // (1,3,H,W) color-rendered, aligned with raw
  Tensor<float> true_flow;   // (1,2,H,W), warp(aligned_gt, true_flow)==target
  GenParams params;
};

namespace detail {

inline std::array<double, 9> invert3x3(const std::array<double, 9>& m) {
  const double det = m[0] * (m[4] * m[8] - m[5] * m[7]) -
                     m[1] * (m[3] * m[8] - m[5] * m[6]) +
                     m[2] * (m[3] * m[7] - m[4] * m[6]);
  check<ParameterError>(std::abs(det) > 1e-12,
                        "color matrix is singular (det ~ 0)");
  const double inv = 1.0 / det;
  return {(m[4] * m[8] - m[5] * m[7]) * inv, (m[2] * m[7] - m[1] * m[8]) * inv,
          (m[1] * m[5] - m[2] * m[4]) * inv, (m[5] * m[6] - m[3] * m[8]) * inv,
          (m[0] * m[8] - m[2] * m[6]) * inv, (m[2] * m[3] - m[0] * m[5]) * inv,
          (m[3] * m[7] - m[4] * m[6]) * inv, (m[1] * m[6] - m[0] * m[7]) * inv,
          (m[0] * m[4] - m[1] * m[3]) * inv};
}

}  // namespace detail

// Renders one training pair from an sRGB-like scene in [0, 1]:
//  - aligned_gt is the scene itself;
//  - target is the scene warped by the translation (shift_x, shift_y);
//  - the raw mosaic is the gamma-decoded, color-inverse-transformed,
//    vignetted scene sampled on the Bayer lattice and quantized to 16 bits.
inline SyntheticPair synth_pair(const Tensor<float>& scene,
                                const GenParams& gp) {
  check<DimensionError>(scene.shape.n == 1 && scene.shape.c == 3,
                        "synth_pair: scene must be (1,3,H,W), got ",
                        scene.shape.str());
  const int H = scene.shape.h, W = scene.shape.w;
  check<DimensionError>(H % 2 == 0 && W % 2 == 0,
                        "synth_pair: scene dims must be even for mosaicking");
  check<ParameterError>(gp.vignette >= 0.0 && gp.vignette < 1.0,
                        "synth_pair: vignette strength must be in [0, 1), got ",
                        gp.vignette);
  check<ParameterError>(gp.gamma > 0.0, "synth_pair: gamma must be positive");

  SyntheticPair pair;
  pair.params = gp;
  pair.aligned_gt = scene;

  pair.true_flow = Tensor<float>({1, 2, H, W});
  const bool moved = gp.shift_x != 0.0 || gp.shift_y != 0.0;
  if (moved) {
    float* u = pair.true_flow.plane(0, 0);
    float* v = pair.true_flow.plane(0, 1);
    for (size_t i = 0; i < size_t(H) * W; ++i) {
      u[i] = float(gp.shift_x);
      v[i] = float(gp.shift_y);
    }
    pair.target = warp_tensor(scene, pair.true_flow);
  } else {
    pair.target = scene;
  }

  // Linear scene, then into raw color space, then vignette.
  const auto inv = detail::invert3x3(gp.color_matrix);
  Tensor<float> raw_rgb({1, 3, H, W});
  for (int y = 0; y < H; ++y) {
    const float yn = -1.f + 2.f * float(y) / float(H - 1);
    for (int x = 0; x < W; ++x) {
      const float xn = -1.f + 2.f * float(x) / float(W - 1);
      const float gain = vignette_gain(xn, yn, float(gp.vignette));
      const size_t p = size_t(y) * W + x;
      double lin[3];
      for (int c = 0; c < 3; ++c) {
        const double v = std::max(0.0, double(scene.plane(0, c)[p]));
        lin[c] = std::pow(v, gp.gamma);
      }
      for (int c = 0; c < 3; ++c) {
        const double v = inv[size_t(3 * c)] * lin[0] +
                         inv[size_t(3 * c + 1)] * lin[1] +
                         inv[size_t(3 * c + 2)] * lin[2];
        raw_rgb.plane(0, c)[p] = float(v) * gain;
      }
    }
  }

  const auto cfa = bayer_cfa(gp.pattern);
  Rng noise(gp.noise_seed);
  RawFrame raw;
  raw.pattern = gp.pattern;
  raw.black_level = 0;
  raw.white_level = 65535;
  raw.mosaic = Tensor<std::uint16_t>({1, 1, H, W});
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const int color = cfa[size_t((y % 2) * 2 + (x % 2))];
      const size_t p = size_t(y) * W + x;
      double v = double(raw_rgb.plane(0, color)[p]);
      if (gp.noise_sigma > 0.0) v += noise.normal(0.0, gp.noise_sigma);
      v = std::min(std::max(v, 0.0), 1.0);
      raw.mosaic.plane(0, 0)[p] =
          std::uint16_t(std::lround(v * 65535.0));
    }
  }
  pair.raw = raw;
  return pair;
}

struct AugmentOps {
  bool rot90 = false;  // quarter turn, applied before any flips
  bool hflip = false;
  bool vflip = false;
};

inline AugmentOps draw_augment(Rng& rng) {
  AugmentOps ops;
  ops.rot90 = rng.bernoulli(0.5);
  ops.hflip = rng.bernoulli(0.5);
  ops.vflip = rng.bernoulli(0.5);
  return ops;
}

namespace detail {

template <typename T>
Tensor<T> flip_h(const Tensor<T>& x) {
  Tensor<T> out(x.shape);
  for (int n = 0; n < x.shape.n; ++n) {
    for (int c = 0; c < x.shape.c; ++c) {
      const T* src = x.plane(n, c);
      T* dst = out.plane(n, c);
      for (int y = 0; y < x.shape.h; ++y) {
        for (int xw = 0; xw < x.shape.w; ++xw) {
          dst[size_t(y) * x.shape.w + xw] =
              src[size_t(y) * x.shape.w + (x.shape.w - 1 - xw)];
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> flip_v(const Tensor<T>& x) {
  Tensor<T> out(x.shape);
  for (int n = 0; n < x.shape.n; ++n) {
    for (int c = 0; c < x.shape.c; ++c) {
      const T* src = x.plane(n, c);
      T* dst = out.plane(n, c);
      for (int y = 0; y < x.shape.h; ++y) {
        std::copy(src + size_t(x.shape.h - 1 - y) * x.shape.w,
                  src + size_t(x.shape.h - y) * x.shape.w,
                  dst + size_t(y) * x.shape.w);
      }
    }
  }
  return out;
}

// Quarter turn: out[y'][x'] = in[H-1-x'][y'], sized (W, H). Displacement
// vectors transform as (u, v) -> (-v, u).
template <typename T>
Tensor<T> rot90(const Tensor<T>& x) {
  Tensor<T> out({x.shape.n, x.shape.c, x.shape.w, x.shape.h});
  for (int n = 0; n < x.shape.n; ++n) {
    for (int c = 0; c < x.shape.c; ++c) {
      const T* src = x.plane(n, c);
      T* dst = out.plane(n, c);
      for (int y = 0; y < out.shape.h; ++y) {
        for (int xw = 0; xw < out.shape.w; ++xw) {
          dst[size_t(y) * out.shape.w + xw] =
              src[size_t(x.shape.h - 1 - xw) * x.shape.w + y];
        }
      }
    }
  }
  return out;
}

}  // namespace detail

// Applies the same geometric transform to every field of the pair. The
// mosaic is transformed at the lattice level and the effective pattern
// re-derived; flow positions move with the images and the vectors are
// permuted/negated to match.
inline SyntheticPair augment(const SyntheticPair& pair, const AugmentOps& ops) {
  SyntheticPair out = pair;
  auto cfa = bayer_cfa(pair.raw.pattern);

  auto apply_images = [&](auto&& fn) {
    out.raw.mosaic = fn(out.raw.mosaic);
    out.target = fn(out.target);
    out.aligned_gt = fn(out.aligned_gt);
  };

  if (ops.rot90) {
    apply_images([](const auto& t) { return detail::rot90(t); });
    Tensor<float> f = detail::rot90(out.true_flow);
    Tensor<float> rotated(f.shape);
    const size_t hw = size_t(f.shape.h) * f.shape.w;
    for (size_t i = 0; i < hw; ++i) {
      rotated.plane(0, 0)[i] = -f.plane(0, 1)[i];
      rotated.plane(0, 1)[i] = f.plane(0, 0)[i];
    }
    out.true_flow = rotated;
    // Site at (y', x') came from (H-1-x', y'): parity (a, b) <- (1-b, a).
    std::array<int, 4> nc;
    for (int a = 0; a < 2; ++a) {
      for (int b = 0; b < 2; ++b) {
        nc[size_t(a * 2 + b)] = cfa[size_t((1 - b) * 2 + a)];
      }
    }
    cfa = nc;
  }
  if (ops.hflip) {
    apply_images([](const auto& t) { return detail::flip_h(t); });
    Tensor<float> f = detail::flip_h(out.true_flow);
    float* u = f.plane(0, 0);
    const size_t hw = size_t(f.shape.h) * f.shape.w;
    for (size_t i = 0; i < hw; ++i) u[i] = -u[i];
    out.true_flow = f;
    std::array<int, 4> nc = {cfa[1], cfa[0], cfa[3], cfa[2]};
    cfa = nc;
  }
  if (ops.vflip) {
    apply_images([](const auto& t) { return detail::flip_v(t); });
    Tensor<float> f = detail::flip_v(out.true_flow);
    float* v = f.plane(0, 1);
    const size_t hw = size_t(f.shape.h) * f.shape.w;
    for (size_t i = 0; i < hw; ++i) v[i] = -v[i];
    out.true_flow = f;
    std::array<int, 4> nc = {cfa[2], cfa[3], cfa[0], cfa[1]};
    cfa = nc;
  }
  out.raw.pattern = bayer_from_cfa(cfa);
  return out;
}

inline SyntheticPair augment(const SyntheticPair& pair, Rng& rng) {
  return augment(pair, draw_augment(rng));
}

// Procedural test scene: smooth colored gradients plus a few soft blobs,
// values kept away from 0/1 so color transforms stay in gamut.
inline Tensor<float> make_scene(int h, int w, Rng& rng) {
  Tensor<float> out({1, 3, h, w});
  const double pi = 3.14159265358979323846;
  struct Blob {
    double cy, cx, r, amp[3];
  };
  std::vector<Blob> blobs;
  for (int i = 0; i < 4; ++i) {
    Blob b;
    b.cy = rng.uniform(0.1, 0.9) * h;
    b.cx = rng.uniform(0.1, 0.9) * w;
    b.r = rng.uniform(0.08, 0.25) * std::min(h, w);
    for (auto& a : b.amp) a = rng.uniform(-0.28, 0.28);
    blobs.push_back(b);
  }
  double fx[3], fy[3], ph[3], base[3], gain[3];
  for (int c = 0; c < 3; ++c) {
    fx[c] = rng.uniform(0.5, 2.5);
    fy[c] = rng.uniform(0.5, 2.5);
    ph[c] = rng.uniform(0.0, 2.0 * pi);
    base[c] = rng.uniform(0.35, 0.55);
    gain[c] = rng.uniform(0.10, 0.20);
  }
  for (int c = 0; c < 3; ++c) {
    float* dst = out.plane(0, c);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double v = base[c] +
                   gain[c] * std::sin(2.0 * pi * fx[c] * x / w +
                                      2.0 * pi * fy[c] * y / h + ph[c]);
        for (const Blob& b : blobs) {
          const double d2 = (y - b.cy) * (y - b.cy) + (x - b.cx) * (x - b.cx);
          v += b.amp[c] * std::exp(-d2 / (2.0 * b.r * b.r));
        }
        dst[size_t(y) * w + x] = float(std::min(std::max(v, 0.06), 0.94));
      }
    }
  }
  return out;
}

// Uniform background with a bright square marker, for displacement probes.
inline Tensor<float> make_marker_scene(int h, int w, double cy, double cx,
                                       int half) {
  Tensor<float> out({1, 3, h, w});
  const float bg[3] = {0.32f, 0.30f, 0.36f};
  const float fg[3] = {0.92f, 0.90f, 0.88f};
  for (int c = 0; c < 3; ++c) {
    float* dst = out.plane(0, c);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const bool inside = std::abs(y - cy) <= half && std::abs(x - cx) <= half;
        dst[size_t(y) * w + x] = inside ? fg[c] : bg[c];
      }
    }
  }
  return out;
}

// Intensity centroid of the bright region, for marker localization.
// Returns (x, y).
inline std::pair<double, double> bright_centroid(const Tensor<float>& img) {
  const Shape s = img.shape;
  double lo = 1e30, hi = -1e30;
  std::vector<double> luma(size_t(s.h) * s.w, 0.0);
  for (int c = 0; c < 3; ++c) {
    const float* p = img.plane(0, c);
    for (size_t i = 0; i < luma.size(); ++i) luma[i] += double(p[i]) / 3.0;
  }
  for (double v : luma) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double thr = lo + 0.6 * (hi - lo);
  double sx = 0, sy = 0, sw = 0;
  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) {
      const double v = luma[size_t(y) * s.w + x];
      if (v > thr) {
        const double wgt = v - thr;
        sx += wgt * x;
        sy += wgt * y;
        sw += wgt;
      }
    }
  }
  check<Error>(sw > 0, "bright_centroid: no pixels above threshold");
  return {sx / sw, sy / sw};
}

}  // namespace misp
