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

#include <atomic>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "misp/flowalign.hpp"
#include "misp/io.hpp"
#include "misp/tensor.hpp"

namespace misp {

// Peak signal-to-noise ratio for images in [0, 1], capped at 100 dB. With a
// mask (n,1,h,w), only nonzero cells contribute; an empty mask is an error.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b,
            const Tensor<T>* mask = nullptr) {
  check_same_shape(a, b, "psnr");
  const Shape s = a.shape;
  const size_t plane = size_t(s.h) * size_t(s.w);
  double acc = 0, weight = 0;
  for (int n = 0; n < s.n; ++n) {
    const T* m = mask ? mask->plane(n, 0) : nullptr;
    if (mask) {
      check<DimensionError>(mask->shape.n == s.n && mask->shape.c == 1 &&
                                mask->shape.h == s.h && mask->shape.w == s.w,
                            "psnr: mask ", mask->shape.str(),
                            " does not match ", s.str());
    }
    for (int c = 0; c < s.c; ++c) {
      const T* pa = a.plane(n, c);
      const T* pb = b.plane(n, c);
      for (size_t i = 0; i < plane; ++i) {
        const double w = m ? double(m[i]) : 1.0;
        const double d = double(pa[i]) - double(pb[i]);
        acc += w * d * d;
        weight += w;
      }
    }
  }
  check<ParameterError>(weight > 0, "psnr: mask selects no pixels");
  const double mse = acc / weight;
  if (mse <= 0) return 100.0;
  return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

namespace detail {

inline const std::vector<double>& ssim_window() {
  static const std::vector<double> w = [] {
    std::vector<double> out(121);
    const double sigma = 1.5;
    double sum = 0;
    for (int dy = -5; dy <= 5; ++dy) {
      for (int dx = -5; dx <= 5; ++dx) {
        const double v = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
        out[size_t((dy + 5) * 11 + (dx + 5))] = v;
        sum += v;
      }
    }
    for (auto& v : out) v /= sum;
    return out;
  }();
  return w;
}

}  // namespace detail

// Structural similarity with an 11x11 Gaussian window (sigma 1.5), averaged
// over windows fully inside the image. With a mask, a window contributes
// only if every covered cell is valid, so values at masked-out pixels can
// never influence the score. Images smaller than the window are an error.
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b,
            const Tensor<T>* mask = nullptr) {
  check_same_shape(a, b, "ssim");
  const Shape s = a.shape;
  check<DimensionError>(s.h >= 11 && s.w >= 11,
                        "ssim: image must be at least 11x11, got ", s.str());
  if (mask) {
    check<DimensionError>(mask->shape.n == s.n && mask->shape.c == 1 &&
                              mask->shape.h == s.h && mask->shape.w == s.w,
                          "ssim: mask ", mask->shape.str(),
                          " does not match ", s.str());
  }
  const auto& win = detail::ssim_window();
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double acc = 0;
  long count = 0;
  for (int n = 0; n < s.n; ++n) {
    const T* m = mask ? mask->plane(n, 0) : nullptr;
    for (int c = 0; c < s.c; ++c) {
      const T* pa = a.plane(n, c);
      const T* pb = b.plane(n, c);
      for (int y0 = 0; y0 + 11 <= s.h; ++y0) {
        for (int x0 = 0; x0 + 11 <= s.w; ++x0) {
          if (m) {
            bool ok = true;
            for (int dy = 0; dy < 11 && ok; ++dy) {
              for (int dx = 0; dx < 11; ++dx) {
                if (m[size_t(y0 + dy) * s.w + size_t(x0 + dx)] == T(0)) {
                  ok = false;
                  break;
                }
              }
            }
            if (!ok) continue;
          }
          double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
          for (int dy = 0; dy < 11; ++dy) {
            const T* ra = pa + size_t(y0 + dy) * s.w + size_t(x0);
            const T* rb = pb + size_t(y0 + dy) * s.w + size_t(x0);
            const double* rw = win.data() + size_t(dy) * 11;
            for (int dx = 0; dx < 11; ++dx) {
              const double va = double(ra[dx]), vb = double(rb[dx]);
              const double w = rw[dx];
              mx += w * va;
              my += w * vb;
              mxx += w * va * va;
              myy += w * vb * vb;
              mxy += w * va * vb;
            }
          }
          const double vx = mxx - mx * mx;
          const double vy = myy - my * my;
          const double vxy = mxy - mx * my;
          const double val = ((2 * mx * my + c1) * (2 * vxy + c2)) /
                             ((mx * mx + my * my + c1) * (vx + vy + c2));
          acc += val;
          ++count;
        }
      }
    }
  }
  check<ParameterError>(count > 0, "ssim: no fully valid window");
  return acc / double(count);
}

// ---------------------------------------------------------------------------
// Evaluation protocols

enum class EvalProtocol { kOriginal, kAlignGtWithRaw, kAlignGtWithResult };

inline EvalProtocol parse_eval_protocol(const std::string& s) {
  if (s == "original") return EvalProtocol::kOriginal;
  if (s == "align_gt_with_raw") return EvalProtocol::kAlignGtWithRaw;
  if (s == "align_gt_with_result") return EvalProtocol::kAlignGtWithResult;
  throw ConfigError(strcat("unknown eval protocol '", s,
                           "' (expected original, align_gt_with_raw, "
                           "align_gt_with_result)"));
}

inline std::string eval_protocol_name(EvalProtocol p) {
  switch (p) {
    case EvalProtocol::kOriginal: return "original";
    case EvalProtocol::kAlignGtWithRaw: return "align_gt_with_raw";
    case EvalProtocol::kAlignGtWithResult: return "align_gt_with_result";
  }
  throw ParameterError("invalid eval protocol");
}

// Full-reference metric on two images, e.g. an external LPIPS binary.
using MetricFn = std::function<double(const Tensor<float>&,
                                      const Tensor<float>&)>;

struct EvalRecord {
  int index = 0;
  std::string protocol;
  double psnr = 0;
  double ssim = 0;
  std::optional<double> lpips;
  double valid_fraction = 1.0;
};

struct EvalOptions {
  EvalProtocol protocol = EvalProtocol::kOriginal;
  float mask_eps = 1e-3f;
  MetricFn lpips;  // empty: metric omitted
};

// Scores one restored image against the (possibly misaligned) target.
//   original:             compare pred to target as stored.
//   align_gt_with_raw:    warp the target onto pred with flow estimated
//                         from the color-mapped input proxy; masked metrics.
//   align_gt_with_result: same, but the flow reference is pred itself.
// `proxy` is required for align_gt_with_raw, `estimator` for both aligned
// protocols; the original protocol never invokes the estimator.
inline EvalRecord evaluate_pair(int index, const Tensor<float>& pred,
                                const Tensor<float>& target,
                                const Tensor<float>* proxy,
                                FlowEstimator* estimator,
                                const EvalOptions& opts) {
  check_same_shape(pred, target, "evaluate_pair");
  EvalRecord rec;
  rec.index = index;
  rec.protocol = eval_protocol_name(opts.protocol);

  if (opts.protocol == EvalProtocol::kOriginal) {
    rec.psnr = psnr(pred, target);
    rec.ssim = ssim(pred, target);
    if (opts.lpips) rec.lpips = opts.lpips(pred, target);
    return rec;
  }

  check<ConfigError>(estimator != nullptr, "protocol '", rec.protocol,
                     "' requires a flow estimator");
  const Tensor<float>* reference = &pred;
  Tensor<float> proxy_clamped;
  if (opts.protocol == EvalProtocol::kAlignGtWithRaw) {
    check<ConfigError>(proxy != nullptr,
                       "protocol 'align_gt_with_raw' requires the "
                       "color-mapped input proxy");
    check_same_shape(*proxy, target, "evaluate_pair proxy");
    proxy_clamped = clamp01(*proxy);
    reference = &proxy_clamped;
  }
  Tensor<float> clamped = clamp01(*reference);
  Tensor<float> flow = estimator->estimate(clamped, target);
  Tensor<float> warped = warp_tensor(target, flow);
  Tensor<float> mask = valid_mask(flow, opts.mask_eps);
  double valid = 0;
  for (const float m : mask.data) valid += m;
  rec.valid_fraction = valid / double(mask.numel());
  rec.psnr = psnr(pred, warped, &mask);
  rec.ssim = ssim(pred, warped, &mask);
  if (opts.lpips) rec.lpips = opts.lpips(pred, warped);
  return rec;
}

inline nlohmann::json eval_record_to_json(const EvalRecord& rec) {
  nlohmann::json j;
  j["index"] = rec.index;
  j["protocol"] = rec.protocol;
  j["psnr"] = rec.psnr;
  j["ssim"] = rec.ssim;
  if (rec.lpips) j["lpips"] = *rec.lpips;
  j["valid_fraction"] = rec.valid_fraction;
  return j;
}

// JSON-lines report: one object per image, then a summary object with the
// arithmetic means.
inline void write_eval_report(const std::string& path,
                              const std::vector<EvalRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  check<LoadError>(bool(out), "cannot open report '", path, "' for writing");
  double sp = 0, ss = 0, sv = 0, sl = 0;
  int nl = 0;
  for (const auto& rec : records) {
    out << eval_record_to_json(rec).dump() << "\n";
    sp += rec.psnr;
    ss += rec.ssim;
    sv += rec.valid_fraction;
    if (rec.lpips) {
      sl += *rec.lpips;
      ++nl;
    }
  }
  nlohmann::json summary;
  summary["summary"] = true;
  summary["count"] = records.size();
  if (!records.empty()) {
    const double n = double(records.size());
    summary["psnr"] = sp / n;
    summary["ssim"] = ss / n;
    summary["valid_fraction"] = sv / n;
    if (nl > 0) summary["lpips"] = sl / nl;
  }
  out << summary.dump() << "\n";
}

// ---------------------------------------------------------------------------
// External metric plugin: an executable taking two PNG paths and printing
// one float. A missing binary degrades to "metric omitted" with a reason.

inline std::optional<MetricFn> load_metric_plugin(const std::string& exe,
                                                  std::string* why = nullptr) {
  if (exe.empty()) {
    if (why) *why = "no plugin configured";
    return std::nullopt;
  }
  const std::string path = resolve_asset_path(exe);
  std::error_code ec;
  if (!std::filesystem::exists(path, ec)) {
    if (why) *why = strcat("plugin '", exe, "' not found; metric omitted");
    return std::nullopt;
  }
  return MetricFn([path](const Tensor<float>& a, const Tensor<float>& b) {
    static std::atomic<int> counter{0};
    const int id = counter++;
    const auto tmp = std::filesystem::temp_directory_path();
    const std::string pa =
        (tmp / strcat("misp_metric_", id, "_a.png")).string();
    const std::string pb =
        (tmp / strcat("misp_metric_", id, "_b.png")).string();
    write_png(pa, a);
    write_png(pb, b);
    const std::string cmd = strcat("'", path, "' '", pa, "' '", pb, "'");
    FILE* pipe = popen(cmd.c_str(), "r");
    check<Error>(pipe != nullptr, "failed to run metric plugin '", path, "'");
    char buf[256] = {0};
    const size_t got = fread(buf, 1, sizeof buf - 1, pipe);
    const int status = pclose(pipe);
    std::filesystem::remove(pa);
    std::filesystem::remove(pb);
    check<Error>(status == 0, "metric plugin '", path, "' exited with ",
                 status);
    try {
      return std::stod(std::string(buf, got));
    } catch (const std::exception&) {
      throw Error(strcat("metric plugin '", path,
                         "' printed unparseable output"));
    }
  });
}

}  // namespace misp
