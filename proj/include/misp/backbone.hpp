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

#include <memory>
#include <string>
#include <vector>

#include "misp/nn.hpp"
#include "misp/params.hpp"

namespace misp {

// Orthonormal 2x2 Haar analysis. Input (n, c, h, w) with even h, w; output
// (n, 4c, h/2, w/2), bands ordered LL, HL, LH, HH per input channel (input
// channel k occupies output channels 4k .. 4k+3). The transform matrix is
// orthonormal, so the adjoint equals the inverse and energy is preserved.
template <typename T>
Tensor<T> dwt2_tensor(const Tensor<T>& x) {
  const Shape s = x.shape;
  check<DimensionError>(s.h % 2 == 0 && s.w % 2 == 0,
                        "dwt2: spatial dims must be even, got ", s.str());
  const int oh = s.h / 2, ow = s.w / 2;
  Tensor<T> out({s.n, s.c * 4, oh, ow});
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const T* src = x.plane(n, c);
      T* ll = out.plane(n, 4 * c + 0);
      T* hl = out.plane(n, 4 * c + 1);
      T* lh = out.plane(n, 4 * c + 2);
      T* hh = out.plane(n, 4 * c + 3);
      for (int y = 0; y < oh; ++y) {
        for (int xw = 0; xw < ow; ++xw) {
          const T a = src[size_t(2 * y) * s.w + 2 * xw];
          const T b = src[size_t(2 * y) * s.w + 2 * xw + 1];
          const T cc = src[size_t(2 * y + 1) * s.w + 2 * xw];
          const T d = src[size_t(2 * y + 1) * s.w + 2 * xw + 1];
          const size_t o = size_t(y) * ow + xw;
          ll[o] = (a + b + cc + d) / T(2);
          hl[o] = (a - b + cc - d) / T(2);
          lh[o] = (a + b - cc - d) / T(2);
          hh[o] = (a - b - cc + d) / T(2);
        }
      }
    }
  }
  return out;
}

// Exact inverse of dwt2_tensor. Input (n, 4c, h, w) -> (n, c, 2h, 2w).
template <typename T>
Tensor<T> iwt2_tensor(const Tensor<T>& x) {
  const Shape s = x.shape;
  check<DimensionError>(s.c % 4 == 0,
                        "iwt2: channel count must be divisible by 4, got ",
                        s.str());
  const int outC = s.c / 4;
  Tensor<T> out({s.n, outC, s.h * 2, s.w * 2});
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < outC; ++c) {
      const T* ll = x.plane(n, 4 * c + 0);
      const T* hl = x.plane(n, 4 * c + 1);
      const T* lh = x.plane(n, 4 * c + 2);
      const T* hh = x.plane(n, 4 * c + 3);
      T* dst = out.plane(n, c);
      const int W2 = s.w * 2;
      for (int y = 0; y < s.h; ++y) {
        for (int xw = 0; xw < s.w; ++xw) {
          const size_t o = size_t(y) * s.w + xw;
          const T sll = ll[o], shl = hl[o], slh = lh[o], shh = hh[o];
          dst[size_t(2 * y) * W2 + 2 * xw] = (sll + shl + slh + shh) / T(2);
          dst[size_t(2 * y) * W2 + 2 * xw + 1] =
              (sll - shl + slh - shh) / T(2);
          dst[size_t(2 * y + 1) * W2 + 2 * xw] =
              (sll + shl - slh - shh) / T(2);
          dst[size_t(2 * y + 1) * W2 + 2 * xw + 1] =
              (sll - shl - slh + shh) / T(2);
        }
      }
    }
  }
  return out;
}

namespace nn_ops {

// Orthonormality makes the adjoint of the analysis transform the synthesis
// transform, so each backward pass is just the opposite transform on grads.
template <typename T>
nn::Var<T> dwt2(const nn::Var<T>& x) {
  return nn::make_op<T>(dwt2_tensor(x.val()), {x}, [](nn::Node<T>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    Tensor<T> gin = iwt2_tensor(n.grad);
    Tensor<T>& gx = p.ensure_grad();
    for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += gin.data[i];
  });
}

template <typename T>
nn::Var<T> iwt2(const nn::Var<T>& x) {
  return nn::make_op<T>(iwt2_tensor(x.val()), {x}, [](nn::Node<T>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    Tensor<T> gin = dwt2_tensor(n.grad);
    Tensor<T>& gx = p.ensure_grad();
    for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += gin.data[i];
  });
}

}  // namespace nn_ops

// Residual channel-attention block: three 3x3 convs (ReLU between), a squeeze
// and excitation gate over channels, and a residual add.
template <typename T>
struct Rcab {
  ConvParam<T> conv0, conv1, conv2;
  ConvParam<T> ca_reduce, ca_expand;
  int channels = 0;

  static Rcab make(ParamStore<T>& store, const std::string& prefix, int c,
                   int ca_reduction, Rng& rng) {
    Rcab r;
    r.channels = c;
    r.conv0 = make_conv(store, prefix + ".conv0", c, c, 3, rng);
    r.conv1 = make_conv(store, prefix + ".conv1", c, c, 3, rng);
    r.conv2 = make_conv(store, prefix + ".conv2", c, c, 3, rng);
    int reduced = c / ca_reduction;
    if (reduced < 1) reduced = 1;
    r.ca_reduce = make_conv(store, prefix + ".ca.reduce", reduced, c, 1, rng);
    r.ca_expand = make_conv(store, prefix + ".ca.expand", c, reduced, 1, rng);
    return r;
  }

  nn::Var<T> forward(const nn::Var<T>& x) const {
    using namespace nn;
    Var<T> y = conv2d(x, conv0.w, conv0.b, 1, 1);
    y = relu(y);
    y = conv2d(y, conv1.w, conv1.b, 1, 1);
    y = relu(y);
    y = conv2d(y, conv2.w, conv2.b, 1, 1);
    Var<T> s = global_avg_pool(y);
    s = conv2d(s, ca_reduce.w, ca_reduce.b, 1, 0);
    s = relu(s);
    s = conv2d(s, ca_expand.w, ca_expand.b, 1, 0);
    s = sigmoid(s);
    y = scale_channels(y, s);
    return add(x, y);
  }
};

// n_rcab attention blocks plus a trailing 3x3 conv, wrapped in a group-level
// residual connection.
template <typename T>
struct ResidualGroup {
  std::vector<Rcab<T>> blocks;
  ConvParam<T> tail;

  static ResidualGroup make(ParamStore<T>& store, const std::string& prefix,
                            int c, int n_rcab, int ca_reduction, Rng& rng) {
    check<ParameterError>(n_rcab >= 1, "ResidualGroup: n_rcab must be >= 1");
    ResidualGroup g;
    for (int i = 0; i < n_rcab; ++i) {
      g.blocks.push_back(
          Rcab<T>::make(store, prefix + ".rcab" + std::to_string(i), c,
                        ca_reduction, rng));
    }
    g.tail = make_conv(store, prefix + ".tail", c, c, 3, rng);
    return g;
  }

  nn::Var<T> forward(const nn::Var<T>& x) const {
    nn::Var<T> y = x;
    for (const auto& b : blocks) y = b.forward(y);
    y = nn::conv2d(y, tail.w, tail.b, 1, 1);
    return nn::add(x, y);
  }
};

struct BackboneConfig {
  std::string kind = "liteisp";
  int width = 64;
  int n_rcab = 4;
  int ca_reduction = 16;
  std::string skips = "add";  // "add" or "none"
};

// Three-level wavelet encoder/decoder over packed raw (n, 4, h, w), producing
// sRGB at twice the packed resolution: (n, 3, 2h, 2w).
template <typename T>
class LiteIspNet {
 public:
  LiteIspNet(ParamStore<T>& store, const BackboneConfig& cfg, Rng& rng)
      : cfg_(cfg) {
    check<ConfigError>(cfg.skips == "add" || cfg.skips == "none",
                       "liteisp: skips must be 'add' or 'none', got '",
                       cfg.skips, "'");
    check<ParameterError>(cfg.width >= 4, "liteisp: width must be >= 4");
    const int w = cfg.width, nr = cfg.n_rcab, cr = cfg.ca_reduction;
    enc1_conv_ = make_conv(store, "liteisp.enc1.conv", w, 4, 3, rng);
    enc1_rg_ = ResidualGroup<T>::make(store, "liteisp.enc1.rg", w, nr, cr, rng);
    enc2_conv_ = make_conv(store, "liteisp.enc2.conv", w, 4 * w, 3, rng);
    enc2_rg_ = ResidualGroup<T>::make(store, "liteisp.enc2.rg", w, nr, cr, rng);
    enc3_conv_ = make_conv(store, "liteisp.enc3.conv", 2 * w, 4 * w, 3, rng);
    enc3_rg_ =
        ResidualGroup<T>::make(store, "liteisp.enc3.rg", 2 * w, nr, cr, rng);
    mid_conv_in_ = make_conv(store, "liteisp.mid.conv_in", 2 * w, 8 * w, 3, rng);
    mid_rg1_ =
        ResidualGroup<T>::make(store, "liteisp.mid.rg1", 2 * w, nr, cr, rng);
    mid_rg2_ =
        ResidualGroup<T>::make(store, "liteisp.mid.rg2", 2 * w, nr, cr, rng);
    mid_conv_out_ =
        make_conv(store, "liteisp.mid.conv_out", 8 * w, 2 * w, 3, rng);
    dec3_rg_ =
        ResidualGroup<T>::make(store, "liteisp.dec3.rg", 2 * w, nr, cr, rng);
    dec3_conv_ = make_conv(store, "liteisp.dec3.conv", 4 * w, 2 * w, 3, rng);
    dec2_rg_ = ResidualGroup<T>::make(store, "liteisp.dec2.rg", w, nr, cr, rng);
    dec2_conv_ = make_conv(store, "liteisp.dec2.conv", 4 * w, w, 3, rng);
    dec1_rg_ = ResidualGroup<T>::make(store, "liteisp.dec1.rg", w, nr, cr, rng);
    dec1_conv_ = make_conv(store, "liteisp.dec1.conv", w, w, 3, rng);
    tail_up_ = make_conv(store, "liteisp.tail.up", 4 * w, w, 3, rng);
    tail_out_ = make_conv(store, "liteisp.tail.out", 3, w, 3, rng);
  }

  nn::Var<T> forward(const nn::Var<T>& x) const {
    using namespace nn;
    using nn_ops::dwt2;
    using nn_ops::iwt2;
    const Shape s = x.shape();
    check<DimensionError>(s.c == 4, "liteisp: expected 4 input channels, got ",
                          s.c);
    check<DimensionError>(s.h % 8 == 0 && s.w % 8 == 0,
                          "liteisp: input spatial dims must be divisible by 8 "
                          "(three wavelet levels), got ",
                          s.str());
    const bool skip = cfg_.skips == "add";

    Var<T> e1 = enc1_rg_.forward(conv2d(x, enc1_conv_.w, enc1_conv_.b, 1, 1));
    Var<T> e2 = enc2_rg_.forward(
        conv2d(dwt2(e1), enc2_conv_.w, enc2_conv_.b, 1, 1));
    Var<T> e3 = enc3_rg_.forward(
        conv2d(dwt2(e2), enc3_conv_.w, enc3_conv_.b, 1, 1));

    Var<T> m = conv2d(dwt2(e3), mid_conv_in_.w, mid_conv_in_.b, 1, 1);
    m = mid_rg2_.forward(mid_rg1_.forward(m));
    m = conv2d(m, mid_conv_out_.w, mid_conv_out_.b, 1, 1);

    Var<T> u = iwt2(m);
    if (skip) u = add(u, e3);
    u = conv2d(dec3_rg_.forward(u), dec3_conv_.w, dec3_conv_.b, 1, 1);
    u = iwt2(u);
    if (skip) u = add(u, e2);
    u = conv2d(dec2_rg_.forward(u), dec2_conv_.w, dec2_conv_.b, 1, 1);
    u = iwt2(u);
    if (skip) u = add(u, e1);
    u = conv2d(dec1_rg_.forward(u), dec1_conv_.w, dec1_conv_.b, 1, 1);

    Var<T> t = conv2d(u, tail_up_.w, tail_up_.b, 1, 1);
    t = pixel_shuffle(t, 2);
    return conv2d(t, tail_out_.w, tail_out_.b, 1, 1);
  }

  const BackboneConfig& config() const { return cfg_; }

 private:
  BackboneConfig cfg_;
  ConvParam<T> enc1_conv_, enc2_conv_, enc3_conv_;
  ResidualGroup<T> enc1_rg_, enc2_rg_, enc3_rg_;
  ConvParam<T> mid_conv_in_, mid_conv_out_;
  ResidualGroup<T> mid_rg1_, mid_rg2_;
  ResidualGroup<T> dec3_rg_, dec2_rg_, dec1_rg_;
  ConvParam<T> dec3_conv_, dec2_conv_, dec1_conv_;
  ConvParam<T> tail_up_, tail_out_;
};

// 70x70-style patch discriminator: five 4x4 convs (strides 2,2,2,1,1),
// channels 3-64-128-256-512-1, LeakyReLU(0.2) everywhere except the output,
// batch norm on the three middle layers, plain final conv producing
// least-squares logits.
template <typename T>
class PatchDiscriminator {
 public:
  PatchDiscriminator(ParamStore<T>& store, Rng& rng) {
    static constexpr int kChannels[6] = {3, 64, 128, 256, 512, 1};
    static constexpr int kStrides[5] = {2, 2, 2, 1, 1};
    for (int i = 0; i < 5; ++i) {
      std::string base = "disc.layer" + std::to_string(i);
      convs_[i] = make_conv(store, base + ".conv", kChannels[i + 1],
                            kChannels[i], 4, rng);
      strides_[i] = kStrides[i];
      if (i >= 1 && i <= 3) {
        int c = kChannels[i + 1];
        bn_gamma_[i] =
            store.add_param(base + ".bn.gamma", Tensor<T>({1, c, 1, 1}, T(1)));
        bn_beta_[i] = store.add_param(base + ".bn.beta", Tensor<T>({1, c, 1, 1}));
        bn_mean_[i] = store.add_buffer(base + ".bn.running_mean",
                                       Tensor<T>({1, c, 1, 1}));
        bn_var_[i] = store.add_buffer(base + ".bn.running_var",
                                      Tensor<T>({1, c, 1, 1}, T(1)));
      }
    }
  }

  nn::Var<T> forward(const nn::Var<T>& x, bool training) const {
    using namespace nn;
    check<DimensionError>(x.shape().c == 3,
                          "discriminator: expected 3 input channels, got ",
                          x.shape().c);
    Var<T> h = x;
    for (int i = 0; i < 5; ++i) {
      h = conv2d(h, convs_[i].w, convs_[i].b, strides_[i], 1);
      if (i >= 1 && i <= 3) {
        h = batch_norm(h, bn_gamma_[i], bn_beta_[i],
                       bn_mean_[i].mutable_val(), bn_var_[i].mutable_val(),
                       training);
      }
      if (i < 4) h = leaky_relu(h, T(0.2));
    }
    return h;
  }

 private:
  ConvParam<T> convs_[5];
  int strides_[5] = {};
  nn::Var<T> bn_gamma_[5], bn_beta_[5], bn_mean_[5], bn_var_[5];
};

inline std::vector<std::string> backbone_kinds() {
  return {"liteisp", "srresnet"};
}

// Factory over registered backbone kinds. "srresnet" is a declared extension
// point without an implementation behind it yet.
template <typename T>
std::unique_ptr<LiteIspNet<T>> make_backbone(ParamStore<T>& store,
                                             const BackboneConfig& cfg,
                                             Rng& rng) {
  if (cfg.kind == "liteisp") {
    return std::make_unique<LiteIspNet<T>>(store, cfg, rng);
  }
  if (cfg.kind == "srresnet") {
    throw NotImplementedError(
        "backbone kind 'srresnet' is a registered extension point; only "
        "'liteisp' is implemented");
  }
  throw ConfigError(strcat("unknown backbone kind '", cfg.kind,
                           "'; registered kinds: liteisp, srresnet"));
}

}  // namespace misp
