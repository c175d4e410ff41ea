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

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "misp/autograd.hpp"
#include "misp/random.hpp"
#include "misp/tensor.hpp"

namespace misp {

struct ManifestEntry {
  std::string name;
  Shape shape;
  std::string dtype;
  std::int64_t offset = 0;  // bytes into the checkpoint blob
};

// Ordered collection of named parameters and buffers. Insertion order is the
// canonical order for the optimizer, the manifest, and the checkpoint blob.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    nn::Var<T> var;
    bool trainable = true;
  };

  nn::Var<T> add_param(const std::string& name, Tensor<T> init) {
    return add(name, std::move(init), true);
  }

  // Non-trainable state (e.g. normalization running statistics). Included in
  // checkpoints, excluded from param_count and the optimizer.
  nn::Var<T> add_buffer(const std::string& name, Tensor<T> init) {
    return add(name, std::move(init), false);
  }

  bool contains(const std::string& name) const {
    return index_.count(name) > 0;
  }

  nn::Var<T> get(const std::string& name) const {
    auto it = index_.find(name);
    check<ParameterError>(it != index_.end(), "ParamStore: no tensor named '",
                          name, "'");
    return entries_[it->second].var;
  }

  const std::vector<Entry>& entries() const { return entries_; }

  std::int64_t param_count() const {
    std::int64_t total = 0;
    for (const auto& e : entries_) {
      if (e.trainable) total += e.var.val().numel();
    }
    return total;
  }

  std::int64_t param_count(const std::string& prefix) const {
    std::int64_t total = 0;
    for (const auto& e : entries_) {
      if (e.trainable && e.name.rfind(prefix, 0) == 0) {
        total += e.var.val().numel();
      }
    }
    return total;
  }

  std::vector<nn::Var<T>> trainable() const {
    std::vector<nn::Var<T>> out;
    for (const auto& e : entries_) {
      if (e.trainable) out.push_back(e.var);
    }
    return out;
  }

  std::vector<nn::Var<T>> trainable(const std::string& prefix) const {
    std::vector<nn::Var<T>> out;
    for (const auto& e : entries_) {
      if (e.trainable && e.name.rfind(prefix, 0) == 0) out.push_back(e.var);
    }
    return out;
  }

  void zero_grads() {
    for (auto& e : entries_) e.var.clear_grad();
  }

  // Freezing every trainable tensor turns forward passes into pure
  // inference: ops see only constants and release intermediates early.
  void set_requires_grad(bool on) {
    for (auto& e : entries_) {
      if (e.trainable) e.var.node()->requires_grad = on;
    }
  }

  std::vector<ManifestEntry> manifest() const {
    std::vector<ManifestEntry> out;
    std::int64_t offset = 0;
    for (const auto& e : entries_) {
      ManifestEntry m;
      m.name = e.name;
      m.shape = e.var.shape();
      m.dtype = "f32";
      m.offset = offset;
      offset += e.var.val().numel() * 4;
      out.push_back(m);
    }
    return out;
  }

 private:
  nn::Var<T> add(const std::string& name, Tensor<T> init, bool trainable) {
    check<ParameterError>(!index_.count(name),
                          "ParamStore: duplicate tensor name '", name, "'");
    Entry e;
    e.name = name;
    e.var = nn::Var<T>::param(std::move(init));
    if (!trainable) e.var.node()->requires_grad = false;
    e.trainable = trainable;
    index_[name] = entries_.size();
    entries_.push_back(std::move(e));
    return entries_.back().var;
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> index_;
};

// He (fan-in) normal initialization, for stacks where every conv feeds a
// rectifier.
template <typename T>
Tensor<T> he_normal(Shape s, int fan_in, Rng& rng) {
  Tensor<T> t(s);
  double std = std::sqrt(2.0 / double(fan_in));
  for (auto& v : t.data) v = T(rng.normal(0.0, std));
  return t;
}

// Default conv weight init: uniform with variance 1/(3 fan_in). Unlike the
// He gain this never amplifies a linear conv, which keeps deep residual
// stacks near input scale at initialization.
template <typename T>
Tensor<T> conv_uniform(Shape s, int fan_in, Rng& rng) {
  Tensor<T> t(s);
  const double bound = 1.0 / std::sqrt(double(fan_in));
  for (auto& v : t.data) v = T(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
struct ConvParam {
  nn::Var<T> w;
  nn::Var<T> b;
};

// Conv parameter pair; weights uniform, biases zero.
template <typename T>
ConvParam<T> make_conv(ParamStore<T>& store, const std::string& name,
                       int out_c, int in_c, int k, Rng& rng) {
  ConvParam<T> p;
  p.w = store.add_param(
      name + ".weight", conv_uniform<T>({out_c, in_c, k, k}, in_c * k * k,
                                        rng));
  p.b = store.add_param(name + ".bias", Tensor<T>({1, out_c, 1, 1}));
  return p;
}

// Scoped inference mode over a store's parameters.
template <typename T>
class InferenceGuard {
 public:
  explicit InferenceGuard(ParamStore<T>& store) : store_(&store) {
    store_->set_requires_grad(false);
  }
  ~InferenceGuard() { store_->set_requires_grad(true); }
  InferenceGuard(const InferenceGuard&) = delete;
  InferenceGuard& operator=(const InferenceGuard&) = delete;

 private:
  ParamStore<T>* store_;
};

}  // namespace misp
