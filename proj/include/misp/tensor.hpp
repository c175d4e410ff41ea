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
#include <cstdint>
#include <vector>

#include "misp/common.hpp"

namespace misp {

// All tensors are dense NCHW. Vectors are (1, c, 1, 1), scalars (1, 1, 1, 1).
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::int64_t numel() const {
    return std::int64_t(n) * c * h * w;
  }
  bool operator==(const Shape& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }
  std::string str() const {
    return strcat("(", n, ",", c, ",", h, ",", w, ")");
  }
};

template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(s), data(size_t(s.numel()), T(0)) {
    check<DimensionError>(s.n > 0 && s.c > 0 && s.h > 0 && s.w > 0,
                          "tensor shape must be positive, got ", s.str());
  }
  Tensor(Shape s, T fill) : Tensor(s) {
    for (auto& v : data) v = fill;
  }

  std::int64_t numel() const { return shape.numel(); }

  T& at(int n, int c, int y, int x) {
    return data[((size_t(n) * shape.c + c) * shape.h + y) * shape.w + x];
  }
  const T& at(int n, int c, int y, int x) const {
    return data[((size_t(n) * shape.c + c) * shape.h + y) * shape.w + x];
  }

  // Pointer to the start of one (n, c) plane.
  T* plane(int n, int c) {
    return data.data() + (size_t(n) * shape.c + c) * shape.h * shape.w;
  }
  const T* plane(int n, int c) const {
    return data.data() + (size_t(n) * shape.c + c) * shape.h * shape.w;
  }

  template <typename U>
  Tensor<U> astype() const {
    Tensor<U> out(shape);
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = U(data[i]);
    return out;
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

template <typename T>
Tensor<T> zeros(Shape s) {
  return Tensor<T>(s);
}

template <typename T>
Tensor<T> full(Shape s, T v) {
  return Tensor<T>(s, v);
}

template <typename T>
Tensor<T> ones(Shape s) {
  return Tensor<T>(s, T(1));
}

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                      const char* what) {
  check<DimensionError>(a.shape == b.shape, what, ": shape mismatch ",
                        a.shape.str(), " vs ", b.shape.str());
}

template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& parts) {
  check<DimensionError>(!parts.empty(), "concat_channels: no inputs");
  Shape s = parts[0]->shape;
  int c_total = 0;
  for (const auto* p : parts) {
    check<DimensionError>(p->shape.n == s.n && p->shape.h == s.h &&
                              p->shape.w == s.w,
                          "concat_channels: spatial/batch mismatch ",
                          p->shape.str(), " vs ", s.str());
    c_total += p->shape.c;
  }
  Tensor<T> out({s.n, c_total, s.h, s.w});
  for (int n = 0; n < s.n; ++n) {
    int c_off = 0;
    for (const auto* p : parts) {
      for (int c = 0; c < p->shape.c; ++c) {
        const T* src = p->plane(n, c);
        T* dst = out.plane(n, c_off + c);
        std::copy(src, src + size_t(s.h) * s.w, dst);
      }
      c_off += p->shape.c;
    }
  }
  return out;
}

template <typename T>
Tensor<T> concat_batch(const std::vector<const Tensor<T>*>& parts) {
  check<DimensionError>(!parts.empty(), "concat_batch: no inputs");
  Shape s = parts[0]->shape;
  int n_total = 0;
  for (const auto* p : parts) {
    check<DimensionError>(p->shape.c == s.c && p->shape.h == s.h &&
                              p->shape.w == s.w,
                          "concat_batch: item shape ", p->shape.str(),
                          " does not match ", s.str());
    n_total += p->shape.n;
  }
  Tensor<T> out({n_total, s.c, s.h, s.w});
  size_t off = 0;
  for (const auto* p : parts) {
    std::copy(p->data.begin(), p->data.end(), out.data.begin() + off);
    off += p->data.size();
  }
  return out;
}

template <typename T>
Tensor<T> slice_batch(const Tensor<T>& x, int n) {
  check<DimensionError>(n >= 0 && n < x.shape.n, "slice_batch: index ", n,
                        " out of range for ", x.shape.str());
  Tensor<T> out({1, x.shape.c, x.shape.h, x.shape.w});
  const size_t per = size_t(x.shape.c) * x.shape.h * x.shape.w;
  std::copy(x.data.begin() + size_t(n) * per,
            x.data.begin() + size_t(n + 1) * per, out.data.begin());
  return out;
}

template <typename T>
Tensor<T> clamp01(const Tensor<T>& x) {
  Tensor<T> out = x;
  for (auto& v : out.data) v = v < T(0) ? T(0) : (v > T(1) ? T(1) : v);
  return out;
}

template <typename T>
bool all_finite(const Tensor<T>& x) {
  for (T v : x.data) {
    if (!std::isfinite(double(v))) return false;
  }
  return true;
}

}  // namespace misp
