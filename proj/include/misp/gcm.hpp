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

#include <string>

#include "misp/common.hpp"
#include "misp/nn.hpp"
#include "misp/params.hpp"
#include "misp/rawdata.hpp"

namespace misp {

struct GcmConfig {
  bool enabled = true;
  // Condition the per-pixel map on a global code computed from the target.
  bool use_target_guidance = true;
  // Append the normalized coordinate map to the network inputs.
  bool use_coords = true;
  // How the guidance code modulates the hidden features: "mul" scales them
  // channel-wise, "add" shifts them, "affine" does both (scale is 1 + code
  // so an all-zero code is the identity).
  std::string modulation = "mul";
  int hidden = 64;
  int guide_width = 32;
};

inline void validate_gcm_config(const GcmConfig& cfg) {
  check<ConfigError>(cfg.modulation == "mul" || cfg.modulation == "add" ||
                         cfg.modulation == "affine",
                     "gcm.modulation must be one of mul, add, affine; got '",
                     cfg.modulation, "'");
  check<ConfigError>(cfg.hidden >= 1, "gcm.hidden must be >= 1");
  check<ConfigError>(cfg.guide_width >= 1, "gcm.guide_width must be >= 1");
}

// Color mapping network. A stack of 1x1 convolutions maps each demosaicked
// pixel (optionally augmented with its normalized coordinates) through a
// shared pointwise function; an optional guidance branch summarizes the
// color-mapped input together with the target into a global code that
// modulates the hidden features right before the output projection. Because
// every spatial operator is 1x1 (guidance is globally pooled), the output at
// a pixel depends only on that pixel's input values and the global code.
template <typename T>
class Gcm {
 public:
  Gcm(ParamStore<T>& store, const GcmConfig& cfg, Rng& rng) : cfg_(cfg) {
    validate_gcm_config(cfg);
    const int spn_in = 3 + (cfg.use_coords ? 2 : 0);
    spn_.push_back(make_conv(store, "gcm.spn.0", cfg.hidden, spn_in, 1, rng));
    for (int i = 1; i <= 3; ++i) {
      spn_.push_back(make_conv(store, strcat("gcm.spn.", i), cfg.hidden,
                               cfg.hidden, 1, rng));
    }
    spn_.push_back(make_conv(store, "gcm.spn.4", 3, cfg.hidden, 1, rng));
    if (cfg.use_target_guidance) {
      const int guide_in = 6 + (cfg.use_coords ? 2 : 0);
      const int code_c = cfg.modulation == "affine" ? 2 * cfg.hidden
                                                    : cfg.hidden;
      guide_.push_back(make_conv(store, "gcm.guide.0", cfg.guide_width,
                                 guide_in, 7, rng));
      guide_.push_back(make_conv(store, "gcm.guide.1", cfg.guide_width,
                                 cfg.guide_width, 3, rng));
      guide_.push_back(make_conv(store, "gcm.guide.2", cfg.guide_width,
                                 cfg.guide_width, 3, rng));
      guide_.push_back(make_conv(store, "gcm.guide.3", code_c,
                                 cfg.guide_width, 1, rng));
    }
  }

  const GcmConfig& config() const { return cfg_; }

  static int guide_stage_out_size(int in) {
    return nn::conv_out_size(in, 7, 2, 1);
  }

  // x_dem: demosaicked input (n,3,h,w); target: (n,3,h,w), consulted only
  // when target guidance is enabled; coords: (n,2,h,w), consulted only when
  // coordinates are enabled (pass an undefined tensor view via nullptr
  // otherwise). Returns the color-mapped image, same shape as x_dem.
  nn::Var<T> forward(const Tensor<T>& x_dem, const Tensor<T>* target,
                     const Tensor<T>* coords) const {
    check<DimensionError>(x_dem.shape.c == 3,
                          "gcm: input must have 3 channels, got ",
                          x_dem.shape.str());
    auto x = nn::Var<T>::constant(x_dem);
    nn::Var<T> spn_in = x;
    if (cfg_.use_coords) {
      check<ConfigError>(coords != nullptr,
                         "gcm: coords required when use_coords is set");
      check_same_dims(x_dem, *coords, 2);
      spn_in = nn::Var<T>::constant(
          concat_channels<T>({&x_dem, coords}));
    }

    auto h = nn::conv2d(spn_in, spn_[0].w, spn_[0].b, 1, 0);
    h = nn::relu(h);
    for (int i = 1; i <= 3; ++i) {
      h = nn::conv2d(h, spn_[size_t(i)].w, spn_[size_t(i)].b, 1, 0);
      h = nn::relu(h);
    }

    if (cfg_.use_target_guidance) {
      check<ConfigError>(target != nullptr,
                         "gcm: target required when use_target_guidance is "
                         "set");
      check_same_dims(x_dem, *target, 3);
      std::vector<const Tensor<T>*> parts = {&x_dem, target};
      if (cfg_.use_coords) parts.push_back(coords);
      auto gin = nn::Var<T>::constant(concat_channels<T>(parts));
      auto code = guidance_code(gin);
      if (cfg_.modulation == "mul") {
        h = nn::scale_channels(h, code);
      } else if (cfg_.modulation == "add") {
        h = nn::add_channels(h, code);
      } else {
        auto s = nn::slice_channels(code, 0, cfg_.hidden);
        auto t = nn::slice_channels(code, cfg_.hidden, 2 * cfg_.hidden);
        h = nn::add(h, nn::scale_channels(h, s));
        h = nn::add_channels(h, t);
      }
    }

    return nn::conv2d(h, spn_[4].w, spn_[4].b, 1, 0);
  }

 private:
  // Guidance branch: 7x7 stride-2 conv, two 3x3 convs, global average pool,
  // 1x1 projection to the code. Replicate padding keeps the branch exact on
  // constant inputs.
  nn::Var<T> guidance_code(const nn::Var<T>& gin) const {
    auto g = nn::conv2d(gin, guide_[0].w, guide_[0].b, 2, 1,
                        nn::PadMode::kReplicate);
    g = nn::relu(g);
    g = nn::conv2d(g, guide_[1].w, guide_[1].b, 1, 1, nn::PadMode::kReplicate);
    g = nn::relu(g);
    g = nn::conv2d(g, guide_[2].w, guide_[2].b, 1, 1, nn::PadMode::kReplicate);
    g = nn::global_avg_pool(g);
    return nn::conv2d(g, guide_[3].w, guide_[3].b, 1, 0);
  }

  static void check_same_dims(const Tensor<T>& a, const Tensor<T>& b,
                              int want_c) {
    check<DimensionError>(b.shape.n == a.shape.n && b.shape.c == want_c &&
                              b.shape.h == a.shape.h &&
                              b.shape.w == a.shape.w,
                          "gcm: auxiliary input ", b.shape.str(),
                          " does not match ", a.shape.str(), " with ", want_c,
                          " channels");
  }

  GcmConfig cfg_;
  std::vector<ConvParam<T>> spn_;
  std::vector<ConvParam<T>> guide_;
};

}  // namespace misp
