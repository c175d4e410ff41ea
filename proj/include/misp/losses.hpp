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
#include <utility>
#include <vector>

#include "misp/common.hpp"
#include "misp/nn.hpp"
#include "misp/params.hpp"
#include "misp/random.hpp"

namespace misp {

// L1 between prediction and a constant target, averaged over pixels where
// mask is nonzero (mask (n,1,h,w) broadcasts over channels). An all-zero
// mask yields 0 with no gradient; `mask_empty` reports that case.
template <typename T>
nn::Var<T> masked_l1(const nn::Var<T>& pred, const Tensor<T>& target,
                     const Tensor<T>& mask, bool* mask_empty = nullptr) {
  const Shape s = pred.shape();
  check_same_shape(pred.val(), target, "masked_l1");
  check<DimensionError>(mask.shape.n == s.n && mask.shape.c == 1 &&
                            mask.shape.h == s.h && mask.shape.w == s.w,
                        "masked_l1: mask ", mask.shape.str(),
                        " does not match ", s.str());

  double weight = 0;
  for (const T m : mask.data) weight += double(m);
  weight *= s.c;
  if (mask_empty) *mask_empty = weight == 0;
  if (weight == 0) {
    return nn::Var<T>::constant(Tensor<T>({1, 1, 1, 1}, T(0)));
  }

  const size_t plane = size_t(s.h) * size_t(s.w);
  double acc = 0;
  for (int n = 0; n < s.n; ++n) {
    const T* m = mask.plane(n, 0);
    for (int c = 0; c < s.c; ++c) {
      const T* p = pred.val().plane(n, c);
      const T* t = target.plane(n, c);
      for (size_t i = 0; i < plane; ++i) {
        acc += double(m[i]) * std::abs(double(p[i]) - double(t[i]));
      }
    }
  }
  Tensor<T> value({1, 1, 1, 1}, T(acc / weight));

  return nn::make_op<T>(
      std::move(value), {pred},
      [s, plane, weight, target_copy = target,
       mask_copy = mask](nn::Node<T>& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        const T gs = node.grad.data[0];
        Tensor<T>& gx_all = p.ensure_grad();
        for (int n = 0; n < s.n; ++n) {
          const T* m = mask_copy.plane(n, 0);
          for (int c = 0; c < s.c; ++c) {
            const T* pv = p.value.plane(n, c);
            const T* tv = target_copy.plane(n, c);
            T* gx = gx_all.plane(n, c);
            for (size_t i = 0; i < plane; ++i) {
              const double d = double(pv[i]) - double(tv[i]);
              const double sign = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
              gx[i] += T(double(gs) * double(m[i]) * sign / weight);
            }
          }
        }
      });
}

// Min-pool over scale x scale blocks: a coarse cell is valid only if every
// fine cell under it is. scale must divide both dimensions.
template <typename T>
Tensor<T> downsample_mask(const Tensor<T>& mask, int scale) {
  check<ParameterError>(scale >= 1, "downsample_mask: scale must be >= 1");
  if (scale == 1) return mask;
  const Shape s = mask.shape;
  check<DimensionError>(s.h % scale == 0 && s.w % scale == 0,
                        "downsample_mask: ", scale, " does not divide ",
                        s.str());
  Tensor<T> out({s.n, s.c, s.h / scale, s.w / scale});
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int y = 0; y < out.shape.h; ++y) {
        for (int x = 0; x < out.shape.w; ++x) {
          T m = std::numeric_limits<T>::max();
          for (int dy = 0; dy < scale; ++dy) {
            for (int dx = 0; dx < scale; ++dx) {
              m = std::min(m, mask.at(n, c, y * scale + dy, x * scale + dx));
            }
          }
          out.at(n, c, y, x) = m;
        }
      }
    }
  }
  return out;
}

// Frozen random conv pyramid used as the perceptual feature extractor:
// three 3x3 stride-2 convs of widths 16/32/64 with LeakyReLU(0.2), weights
// drawn once from a fixed seed and never trained.
template <typename T>
class PyramidExtractor {
 public:
  explicit PyramidExtractor(std::uint64_t seed = 0x70657263ull) {
    Rng rng(seed);
    const int widths[3] = {16, 32, 64};
    int in_c = 3;
    for (int i = 0; i < 3; ++i) {
      Tensor<T> w({widths[i], in_c, 3, 3});
      const double std = std::sqrt(2.0 / (in_c * 9));
      for (auto& v : w.data) v = T(rng.normal(0.0, std));
      weights_.push_back(nn::Var<T>::constant(std::move(w)));
      biases_.push_back(nn::Var<T>::constant(
          Tensor<T>({1, widths[i], 1, 1}, T(0))));
      in_c = widths[i];
    }
  }

  // Feature maps at strides 2, 4, 8.
  std::vector<nn::Var<T>> features(const nn::Var<T>& x) const {
    std::vector<nn::Var<T>> out;
    nn::Var<T> h = x;
    for (size_t i = 0; i < weights_.size(); ++i) {
      h = nn::conv2d(h, weights_[i], biases_[i], 2, 1);
      h = nn::leaky_relu(h, T(0.2));
      out.push_back(h);
    }
    return out;
  }

  static std::vector<int> strides() { return {2, 4, 8}; }

 private:
  std::vector<nn::Var<T>> weights_;
  std::vector<nn::Var<T>> biases_;
};

template <typename T>
struct LossValue {
  nn::Var<T> value;
  bool mask_empty = false;
};

// Color mapping loss: masked L1 between the mapped image and the warped
// target.
template <typename T>
LossValue<T> loss_gcm(const nn::Var<T>& mapped, const Tensor<T>& warped,
                      const Tensor<T>& mask) {
  LossValue<T> out{nn::Var<T>(), false};
  out.value = masked_l1(mapped, warped, mask, &out.mask_empty);
  return out;
}

// Reconstruction loss: masked L1 plus a masked perceptual term computed on
// the extractor's feature pyramid (the mask is min-pooled to each feature
// scale). The target is a constant; gradients flow into pred only.
template <typename T>
LossValue<T> loss_isp(const nn::Var<T>& pred, const Tensor<T>& warped,
                      const Tensor<T>& mask,
                      const PyramidExtractor<T>* perceptual, T lambda_l1,
                      T lambda_vgg) {
  LossValue<T> out{nn::Var<T>(), false};
  std::vector<std::pair<T, nn::Var<T>>> terms;
  auto pix = masked_l1(pred, warped, mask, &out.mask_empty);
  terms.emplace_back(lambda_l1, pix);
  if (perceptual != nullptr && lambda_vgg != T(0)) {
    auto pf = perceptual->features(pred);
    auto tf = perceptual->features(nn::Var<T>::constant(warped));
    const auto strides = PyramidExtractor<T>::strides();
    for (size_t i = 0; i < pf.size(); ++i) {
      Tensor<T> m = downsample_mask(mask, strides[i]);
      bool empty = false;
      auto term = masked_l1(pf[i], tf[i].val(), m, &empty);
      if (!empty) {
        terms.emplace_back(lambda_vgg / T(pf.size()), term);
      }
    }
  }
  out.value = nn::weighted_sum(terms);
  return out;
}

// Least-squares GAN terms. The generator drives D(fake) toward 1; the
// discriminator drives D(real) toward 1 and D(fake) toward 0.
template <typename T>
nn::Var<T> lsgan_generator_loss(const nn::Var<T>& d_fake) {
  return nn::weighted_sum<T>({{T(0.5), nn::mean_sq_dev(d_fake, T(1))}});
}

// Composite objective per training mode. A default-constructed Var marks a
// component as absent; "isp" ignores any GAN term, "ispgan" requires one.
template <typename T>
struct LossTerms {
  nn::Var<T> gcm;
  nn::Var<T> isp;
  nn::Var<T> gan_generator;
};

template <typename T>
nn::Var<T> loss_total(const LossTerms<T>& terms, const std::string& mode,
                      T lambda_gan) {
  check<ConfigError>(mode == "isp" || mode == "ispgan",
                     "loss_total: mode must be isp or ispgan; got '", mode,
                     "'");
  std::vector<std::pair<T, nn::Var<T>>> parts;
  if (terms.gcm.defined()) parts.emplace_back(T(1), terms.gcm);
  if (terms.isp.defined()) parts.emplace_back(T(1), terms.isp);
  if (mode == "ispgan") {
    check<ConfigError>(terms.gan_generator.defined(),
                       "loss_total: mode ispgan needs the generator GAN term");
    parts.emplace_back(lambda_gan, terms.gan_generator);
  }
  check<ConfigError>(!parts.empty(),
                     "loss_total: no loss components provided");
  return nn::weighted_sum(parts);
}

template <typename T>
nn::Var<T> lsgan_discriminator_loss(const nn::Var<T>& d_real,
                                    const nn::Var<T>& d_fake) {
  return nn::weighted_sum<T>({{T(0.5), nn::mean_sq_dev(d_real, T(1))},
                              {T(0.5), nn::mean_sq_dev(d_fake, T(0))}});
}

}  // namespace misp
