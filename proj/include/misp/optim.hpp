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
#include <vector>

#include "misp/autograd.hpp"
#include "misp/tensor.hpp"

namespace misp {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over a fixed parameter list. Parameters without a gradient from the
// current backward pass are skipped (their moments and step count stay put).
template <typename T>
class Adam {
 public:
  Adam(std::vector<nn::Var<T>> params, AdamConfig cfg)
      : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
      m_.emplace_back(p.shape());
      v_.emplace_back(p.shape());
      t_.push_back(0);
    }
  }

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }

  void step() {
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (!p.has_grad()) continue;
      ++t_[i];
      const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_[i]));
      const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_[i]));
      const T b1 = T(cfg_.beta1), b2 = T(cfg_.beta2);
      Tensor<T>& g = p.grad();
      Tensor<T>& val = p.mutable_val();
      Tensor<T>& m = m_[i];
      Tensor<T>& v = v_[i];
      for (size_t j = 0; j < val.data.size(); ++j) {
        const T gj = g.data[j];
        m.data[j] = b1 * m.data[j] + (T(1) - b1) * gj;
        v.data[j] = b2 * v.data[j] + (T(1) - b2) * gj * gj;
        const double mh = double(m.data[j]) / bc1;
        const double vh = double(v.data[j]) / bc2;
        val.data[j] =
            T(double(val.data[j]) - cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps));
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.clear_grad();
  }

 private:
  std::vector<nn::Var<T>> params_;
  AdamConfig cfg_;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  std::vector<std::int64_t> t_;
};

// Halving schedule: the base rate is cut in half every `halve_epochs` epochs.
inline double lr_at_epoch(double base_lr, int epoch, int halve_epochs) {
  if (halve_epochs <= 0) return base_lr;
  int halvings = epoch / halve_epochs;
  return base_lr * std::pow(0.5, double(halvings));
}

}  // namespace misp
