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

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "misp/autograd.hpp"
#include "misp/nn.hpp"
#include "misp/tensor.hpp"

namespace misp {

// Flow fields are (n, 2, h, w): channel 0 holds u (x displacement), channel 1
// holds v (y displacement), in pixels. Convention: the warped image samples
// the source at p + flow(p), i.e. warped(y, x) = src(y + v, x + u).

template <typename T>
void check_flow_shape(const Tensor<T>& img, const Tensor<T>& flow) {
  check<DimensionError>(flow.shape.c == 2, "flow must have 2 channels, got ",
                        flow.shape.str());
  check<DimensionError>(
      flow.shape.h == img.shape.h && flow.shape.w == img.shape.w &&
          flow.shape.n == img.shape.n,
      "flow shape ", flow.shape.str(), " does not match image ",
      img.shape.str());
}

// Bilinear warp with zero padding outside the source footprint.
template <typename T>
Tensor<T> warp_tensor(const Tensor<T>& src, const Tensor<T>& flow) {
  check_flow_shape(src, flow);
  const Shape s = src.shape;
  Tensor<T> out(s);
  for (int n = 0; n < s.n; ++n) {
    const T* u = flow.plane(n, 0);
    const T* v = flow.plane(n, 1);
    for (int y = 0; y < s.h; ++y) {
      for (int x = 0; x < s.w; ++x) {
        const size_t p = size_t(y) * s.w + x;
        const double sx = double(x) + double(u[p]);
        const double sy = double(y) + double(v[p]);
        const int x0 = int(std::floor(sx)), y0 = int(std::floor(sy));
        const T fx = T(sx - x0), fy = T(sy - y0);
        const T w00 = (T(1) - fy) * (T(1) - fx);
        const T w01 = (T(1) - fy) * fx;
        const T w10 = fy * (T(1) - fx);
        const T w11 = fy * fx;
        for (int c = 0; c < s.c; ++c) {
          const T* sp = src.plane(n, c);
          T acc = T(0);
          if (y0 >= 0 && y0 < s.h) {
            if (x0 >= 0 && x0 < s.w) acc += w00 * sp[size_t(y0) * s.w + x0];
            if (x0 + 1 >= 0 && x0 + 1 < s.w)
              acc += w01 * sp[size_t(y0) * s.w + x0 + 1];
          }
          if (y0 + 1 >= 0 && y0 + 1 < s.h) {
            if (x0 >= 0 && x0 < s.w)
              acc += w10 * sp[size_t(y0 + 1) * s.w + x0];
            if (x0 + 1 >= 0 && x0 + 1 < s.w)
              acc += w11 * sp[size_t(y0 + 1) * s.w + x0 + 1];
          }
          out.plane(n, c)[p] = acc;
        }
      }
    }
  }
  return out;
}

// Fraction of interpolation weight that lands inside the source footprint,
// i.e. the warp of an all-ones image.
template <typename T>
Tensor<T> warp_weight(const Tensor<T>& flow) {
  Tensor<T> ones_img({flow.shape.n, 1, flow.shape.h, flow.shape.w}, T(1));
  return warp_tensor(ones_img, flow);
}

// Binary validity: 1 where at least (1 - eps) of the interpolation weight is
// in bounds.
template <typename T>
Tensor<T> valid_mask(const Tensor<T>& flow, T eps = T(1e-3)) {
  Tensor<T> w = warp_weight(flow);
  for (auto& v : w.data) v = (v >= T(1) - eps) ? T(1) : T(0);
  return w;
}

// Warp as a graph op, differentiable with respect to the image. The flow is
// a plain tensor: no gradient ever flows back into the estimator that made
// it.
template <typename T>
nn::Var<T> warp(const nn::Var<T>& img, const Tensor<T>& flow) {
  Tensor<T> out = warp_tensor(img.val(), flow);
  return nn::make_op<T>(std::move(out), {img}, [flow](nn::Node<T>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    const Shape s = p.value.shape;
    Tensor<T>& gx = p.ensure_grad();
    for (int b = 0; b < s.n; ++b) {
      const T* u = flow.plane(b, 0);
      const T* v = flow.plane(b, 1);
      for (int y = 0; y < s.h; ++y) {
        for (int x = 0; x < s.w; ++x) {
          const size_t q = size_t(y) * s.w + x;
          const double sx = double(x) + double(u[q]);
          const double sy = double(y) + double(v[q]);
          const int x0 = int(std::floor(sx)), y0 = int(std::floor(sy));
          const T fx = T(sx - x0), fy = T(sy - y0);
          const T w00 = (T(1) - fy) * (T(1) - fx);
          const T w01 = (T(1) - fy) * fx;
          const T w10 = fy * (T(1) - fx);
          const T w11 = fy * fx;
          for (int c = 0; c < s.c; ++c) {
            const T g = n.grad.plane(b, c)[q];
            if (g == T(0)) continue;
            T* gp = gx.plane(b, c);
            if (y0 >= 0 && y0 < s.h) {
              if (x0 >= 0 && x0 < s.w) gp[size_t(y0) * s.w + x0] += g * w00;
              if (x0 + 1 >= 0 && x0 + 1 < s.w)
                gp[size_t(y0) * s.w + x0 + 1] += g * w01;
            }
            if (y0 + 1 >= 0 && y0 + 1 < s.h) {
              if (x0 >= 0 && x0 < s.w)
                gp[size_t(y0 + 1) * s.w + x0] += g * w10;
              if (x0 + 1 >= 0 && x0 + 1 < s.w)
                gp[size_t(y0 + 1) * s.w + x0 + 1] += g * w11;
            }
          }
        }
      }
    }
  });
}

// Bilinear upsampling of a flow field by an integer factor; displacement
// magnitudes scale with the resolution.
template <typename T>
Tensor<T> upsample_flow(const Tensor<T>& flow, int scale) {
  check<ParameterError>(scale >= 1, "upsample_flow: scale must be >= 1");
  check<DimensionError>(flow.shape.c == 2, "upsample_flow: expected 2 "
                        "channels, got ", flow.shape.str());
  if (scale == 1) return flow;
  const Shape s = flow.shape;
  Tensor<T> out({s.n, 2, s.h * scale, s.w * scale});
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < 2; ++c) {
      const T* src = flow.plane(n, c);
      T* dst = out.plane(n, c);
      for (int y = 0; y < s.h * scale; ++y) {
        double sy = (double(y) + 0.5) / scale - 0.5;
        sy = std::min(std::max(sy, 0.0), double(s.h - 1));
        const int y0 = int(std::floor(sy));
        const int y1 = std::min(y0 + 1, s.h - 1);
        const double fy = sy - y0;
        for (int x = 0; x < s.w * scale; ++x) {
          double sx = (double(x) + 0.5) / scale - 0.5;
          sx = std::min(std::max(sx, 0.0), double(s.w - 1));
          const int x0 = int(std::floor(sx));
          const int x1 = std::min(x0 + 1, s.w - 1);
          const double fx = sx - x0;
          const double val =
              (1 - fy) * ((1 - fx) * double(src[size_t(y0) * s.w + x0]) +
                          fx * double(src[size_t(y0) * s.w + x1])) +
              fy * ((1 - fx) * double(src[size_t(y1) * s.w + x0]) +
                    fx * double(src[size_t(y1) * s.w + x1]));
          dst[size_t(y) * s.w * scale + x] = T(val * scale);
        }
      }
    }
  }
  return out;
}

// 2x box downsampling (means of 2x2 cells), used by the pyramid estimator.
template <typename T>
Tensor<T> box_downsample2(const Tensor<T>& x) {
  const Shape s = x.shape;
  check<DimensionError>(s.h % 2 == 0 && s.w % 2 == 0,
                        "box_downsample2: dims must be even, got ", s.str());
  Tensor<T> out({s.n, s.c, s.h / 2, s.w / 2});
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const T* src = x.plane(n, c);
      T* dst = out.plane(n, c);
      for (int y = 0; y < s.h / 2; ++y) {
        for (int xw = 0; xw < s.w / 2; ++xw) {
          dst[size_t(y) * (s.w / 2) + xw] =
              (src[size_t(2 * y) * s.w + 2 * xw] +
               src[size_t(2 * y) * s.w + 2 * xw + 1] +
               src[size_t(2 * y + 1) * s.w + 2 * xw] +
               src[size_t(2 * y + 1) * s.w + 2 * xw + 1]) /
              T(4);
        }
      }
    }
  }
  return out;
}

// Estimators align `moving` onto `reference`: warp(moving, flow) ~ reference.
class FlowEstimator {
 public:
  virtual ~FlowEstimator() = default;
  virtual Tensor<float> estimate(const Tensor<float>& reference,
                                 const Tensor<float>& moving) = 0;
  virtual std::string name() const = 0;
  virtual bool deterministic() const { return true; }
};

namespace detail {

// Mean L1 between shift(moving, (u, v)) and reference over their overlap.
// Returns false when the overlap is empty.
inline bool shift_cost(const Tensor<float>& ref, const Tensor<float>& mov,
                       int u, int v, int y_lo, int y_hi, int x_lo, int x_hi,
                       double* cost) {
  const Shape s = ref.shape;
  const int ys = std::max(y_lo, -v), ye = std::min(y_hi, s.h - v);
  const int xs = std::max(x_lo, -u), xe = std::min(x_hi, s.w - u);
  if (ys >= ye || xs >= xe) return false;
  double acc = 0.0;
  for (int c = 0; c < s.c; ++c) {
    const float* rp = ref.plane(0, c);
    const float* mp = mov.plane(0, c);
    for (int y = ys; y < ye; ++y) {
      const float* rrow = rp + size_t(y) * s.w;
      const float* mrow = mp + size_t(y + v) * s.w;
      for (int x = xs; x < xe; ++x) {
        acc += std::abs(double(rrow[x]) - double(mrow[x + u]));
      }
    }
  }
  *cost = acc / (double(ye - ys) * (xe - xs) * s.c);
  return true;
}

struct ShiftPick {
  int u = 0, v = 0;
  bool found = false;
  double cost = 0.0;
};

// Exhaustive integer search over [-radius, radius]^2 in a window. Ties are
// broken toward the smallest |u|+|v|, then lexicographically by (u, v).
inline ShiftPick best_shift(const Tensor<float>& ref, const Tensor<float>& mov,
                            int radius, int y_lo, int y_hi, int x_lo,
                            int x_hi) {
  ShiftPick best;
  for (int v = -radius; v <= radius; ++v) {
    for (int u = -radius; u <= radius; ++u) {
      double cost;
      if (!shift_cost(ref, mov, u, v, y_lo, y_hi, x_lo, x_hi, &cost)) continue;
      bool better = false;
      if (!best.found) {
        better = true;
      } else if (cost < best.cost) {
        better = true;
      } else if (cost == best.cost) {
        const int n_new = std::abs(u) + std::abs(v);
        const int n_old = std::abs(best.u) + std::abs(best.v);
        if (n_new < n_old) {
          better = true;
        } else if (n_new == n_old &&
                   (u < best.u || (u == best.u && v < best.v))) {
          better = true;
        }
      }
      if (better) {
        best.u = u;
        best.v = v;
        best.cost = cost;
        best.found = true;
      }
    }
  }
  return best;
}

}  // namespace detail

// Single global integer translation by exhaustive search.
class BruteForceTranslation : public FlowEstimator {
 public:
  explicit BruteForceTranslation(int radius) : radius_(radius) {
    check<ParameterError>(radius >= 0, "brute_force_translation: radius must "
                          "be >= 0");
  }

  Tensor<float> estimate(const Tensor<float>& reference,
                         const Tensor<float>& moving) override {
    check_same_shape(reference, moving, "brute_force_translation");
    check<DimensionError>(reference.shape.n == 1,
                          "brute_force_translation: single sample expected");
    const Shape s = reference.shape;
    check<ParameterError>(radius_ < std::min(s.h, s.w),
                          "brute_force_translation: radius ", radius_,
                          " leaves no overlap for image ", s.str());
    detail::ShiftPick best =
        detail::best_shift(reference, moving, radius_, 0, s.h, 0, s.w);
    Tensor<float> flow({1, 2, s.h, s.w});
    float* u = flow.plane(0, 0);
    float* v = flow.plane(0, 1);
    for (size_t i = 0; i < size_t(s.h) * s.w; ++i) {
      u[i] = float(best.u);
      v[i] = float(best.v);
    }
    return flow;
  }

  std::string name() const override { return "brute_translation"; }

 private:
  int radius_;
};

// Per-block integer matching, bilinearly interpolated between block centers
// to a dense field.
class BlockMatchFlow : public FlowEstimator {
 public:
  BlockMatchFlow(int block, int radius) : block_(block), radius_(radius) {
    check<ParameterError>(block >= 4, "block_match_flow: block must be >= 4");
    check<ParameterError>(radius >= 1, "block_match_flow: radius must be >= 1");
  }

  Tensor<float> estimate(const Tensor<float>& reference,
                         const Tensor<float>& moving) override {
    check_same_shape(reference, moving, "block_match_flow");
    check<DimensionError>(reference.shape.n == 1,
                          "block_match_flow: single sample expected");
    const Shape s = reference.shape;
    check<ParameterError>(block_ <= s.h && block_ <= s.w,
                          "block_match_flow: block ", block_,
                          " exceeds image ", s.str());
    const int by = (s.h + block_ - 1) / block_;
    const int bx = (s.w + block_ - 1) / block_;
    std::vector<float> gu(size_t(by) * bx), gv(size_t(by) * bx);
    std::vector<float> cy(by), cx(bx);
    for (int i = 0; i < by; ++i) {
      const int y_lo = i * block_, y_hi = std::min(y_lo + block_, s.h);
      cy[i] = 0.5f * float(y_lo + y_hi - 1);
      for (int j = 0; j < bx; ++j) {
        const int x_lo = j * block_, x_hi = std::min(x_lo + block_, s.w);
        if (i == 0) cx[j] = 0.5f * float(x_lo + x_hi - 1);
        detail::ShiftPick best = detail::best_shift(reference, moving, radius_,
                                                    y_lo, y_hi, x_lo, x_hi);
        gu[size_t(i) * bx + j] = float(best.u);
        gv[size_t(i) * bx + j] = float(best.v);
      }
    }

    Tensor<float> flow({1, 2, s.h, s.w});
    for (int y = 0; y < s.h; ++y) {
      // Interpolation cell along the block-center grid.
      int i1 = 0;
      while (i1 < by - 1 && cy[i1 + 1] < float(y)) ++i1;
      int i2 = std::min(i1 + 1, by - 1);
      float fy = 0.f;
      if (i2 != i1 && float(y) >= cy[i1]) {
        fy = (float(y) - cy[i1]) / (cy[i2] - cy[i1]);
        fy = std::min(std::max(fy, 0.f), 1.f);
      } else if (float(y) < cy[i1]) {
        i2 = i1;
      }
      for (int x = 0; x < s.w; ++x) {
        int j1 = 0;
        while (j1 < bx - 1 && cx[j1 + 1] < float(x)) ++j1;
        int j2 = std::min(j1 + 1, bx - 1);
        float fx = 0.f;
        if (j2 != j1 && float(x) >= cx[j1]) {
          fx = (float(x) - cx[j1]) / (cx[j2] - cx[j1]);
          fx = std::min(std::max(fx, 0.f), 1.f);
        } else if (float(x) < cx[j1]) {
          j2 = j1;
        }
        auto lerp2 = [&](const std::vector<float>& g) {
          const float top = (1.f - fx) * g[size_t(i1) * bx + j1] +
                            fx * g[size_t(i1) * bx + j2];
          const float bot = (1.f - fx) * g[size_t(i2) * bx + j1] +
                            fx * g[size_t(i2) * bx + j2];
          return (1.f - fy) * top + fy * bot;
        };
        flow.plane(0, 0)[size_t(y) * s.w + x] = lerp2(gu);
        flow.plane(0, 1)[size_t(y) * s.w + x] = lerp2(gv);
      }
    }
    return flow;
  }

  std::string name() const override { return "block_match"; }

 private:
  int block_;
  int radius_;
};

namespace detail {

class CoarseToFineEstimator : public FlowEstimator {
 public:
  CoarseToFineEstimator(int levels, int block, int radius)
      : levels_(levels), block_(block), radius_(radius) {}

  Tensor<float> estimate(const Tensor<float>& reference,
                         const Tensor<float>& moving) override {
    check_same_shape(reference, moving, "external flow");
    std::vector<Tensor<float>> ref_pyr = {reference}, mov_pyr = {moving};
    for (int l = 1; l < levels_; ++l) {
      const Tensor<float>& r = ref_pyr.back();
      if (r.shape.h % 2 != 0 || r.shape.w % 2 != 0 ||
          r.shape.h / 2 < block_ || r.shape.w / 2 < block_) {
        break;
      }
      ref_pyr.push_back(box_downsample2(ref_pyr.back()));
      mov_pyr.push_back(box_downsample2(mov_pyr.back()));
    }
    BlockMatchFlow matcher(block_, radius_);
    Tensor<float> flow =
        matcher.estimate(ref_pyr.back(), mov_pyr.back());
    for (int l = int(ref_pyr.size()) - 2; l >= 0; --l) {
      flow = upsample_flow(flow, 2);
      Tensor<float> warped = warp_tensor(mov_pyr[size_t(l)], flow);
      BlockMatchFlow refine(block_, 2);
      Tensor<float> residual = refine.estimate(ref_pyr[size_t(l)], warped);
      for (size_t i = 0; i < flow.data.size(); ++i) {
        flow.data[i] += residual.data[i];
      }
    }
    return flow;
  }

  std::string name() const override { return "external:coarse_to_fine"; }

 private:
  int levels_;
  int block_;
  int radius_;
};

}  // namespace detail

// Resolves an artifact path, trying MISALIGNED_ISP_CACHE for relative paths
// that don't exist as given.
inline std::string resolve_asset_path(const std::string& path) {
  namespace fs = std::filesystem;
  if (fs::exists(path)) return path;
  if (!fs::path(path).is_absolute()) {
    if (const char* cache = std::getenv("MISALIGNED_ISP_CACHE")) {
      fs::path candidate = fs::path(cache) / path;
      if (fs::exists(candidate)) return candidate.string();
    }
  }
  return path;
}

// Wraps a frozen flow estimator described by an artifact file on disk. The
// artifact is a JSON document:
//   {"format": "misp-flow", "version": 1, "kind": "coarse_to_fine",
//    "levels": 3, "block": 8, "radius": 4}
inline std::unique_ptr<FlowEstimator> external_flow_adapter(
    const std::string& weights_path) {
  namespace fs = std::filesystem;
  const std::string path = resolve_asset_path(weights_path);
  if (!fs::exists(path)) {
    throw LoadError(strcat(
        "external flow artifact not found: '", weights_path,
        "' (also searched MISALIGNED_ISP_CACHE); provide a JSON artifact "
        "with format=\"misp-flow\" or configure a fallback estimator"));
  }
  nlohmann::json doc;
  try {
    std::ifstream in(path);
    in >> doc;
  } catch (const std::exception& e) {
    throw LoadError(strcat("external flow artifact '", path,
                           "' is not valid JSON: ", e.what()));
  }
  if (doc.value("format", "") != "misp-flow") {
    throw LoadError(strcat("external flow artifact '", path,
                           "' has format '", doc.value("format", "<missing>"),
                           "', expected 'misp-flow'"));
  }
  if (doc.value("version", 0) != 1) {
    throw LoadError(strcat("external flow artifact '", path,
                           "': unsupported version"));
  }
  const std::string kind = doc.value("kind", "");
  if (kind != "coarse_to_fine") {
    throw LoadError(strcat("external flow artifact '", path,
                           "': unknown kind '", kind, "'"));
  }
  const int levels = doc.value("levels", 3);
  const int block = doc.value("block", 8);
  const int radius = doc.value("radius", 4);
  check<LoadError>(levels >= 1 && block >= 4 && radius >= 1,
                   "external flow artifact '", path,
                   "': levels/block/radius out of range");
  return std::make_unique<detail::CoarseToFineEstimator>(levels, block,
                                                         radius);
}

enum class AlignStrategy { kNone, kWithOutput, kWithDemosaicked, kWithGcm };

inline AlignStrategy parse_align_strategy(const std::string& s) {
  if (s == "none") return AlignStrategy::kNone;
  if (s == "with_output") return AlignStrategy::kWithOutput;
  if (s == "with_demosaicked") return AlignStrategy::kWithDemosaicked;
  if (s == "with_gcm") return AlignStrategy::kWithGcm;
  throw ConfigError(strcat("unknown align strategy '", s,
                           "'; expected none, with_output, with_demosaicked "
                           "or with_gcm"));
}

inline std::string align_strategy_name(AlignStrategy s) {
  switch (s) {
    case AlignStrategy::kNone: return "none";
    case AlignStrategy::kWithOutput: return "with_output";
    case AlignStrategy::kWithDemosaicked: return "with_demosaicked";
    case AlignStrategy::kWithGcm: return "with_gcm";
  }
  return "?";
}

struct AlignResult {
  Tensor<float> warped;  // (1, 3, h, w) supervision target
  Tensor<float> mask;    // (1, 1, h, w) validity
  Tensor<float> flow;    // (1, 2, h, w)
};

// Produces the supervision target for one sample. With strategy none the
// target passes through with a full mask; otherwise the estimator aligns it
// onto `reference` (the model-side image chosen by the strategy).
inline AlignResult align_target(AlignStrategy strategy,
                                const Tensor<float>& target,
                                const Tensor<float>* reference,
                                FlowEstimator* estimator, float eps = 1e-3f) {
  const Shape s = target.shape;
  check<DimensionError>(s.n == 1, "align_target: single sample expected");
  AlignResult out;
  if (strategy == AlignStrategy::kNone) {
    out.warped = target;
    out.mask = Tensor<float>({1, 1, s.h, s.w}, 1.f);
    out.flow = Tensor<float>({1, 2, s.h, s.w});
    return out;
  }
  check<ConfigError>(reference != nullptr && estimator != nullptr,
                     "align_target: strategy '",
                     align_strategy_name(strategy),
                     "' needs a reference image and a flow estimator");
  out.flow = estimator->estimate(*reference, target);
  check<Error>(all_finite(out.flow), "align_target: estimator '",
               estimator->name(), "' produced non-finite flow");
  out.warped = warp_tensor(target, out.flow);
  out.mask = valid_mask(out.flow, eps);
  return out;
}

}  // namespace misp
