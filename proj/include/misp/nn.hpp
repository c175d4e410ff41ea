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

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <vector>

#include "misp/autograd.hpp"
#include "misp/tensor.hpp"

namespace misp::nn {

enum class PadMode { kZero, kReplicate };

inline int conv_out_size(int in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

namespace detail {

template <typename T>
using MatRM =
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline int clampi(int v, int lo, int hi) {
  return v < lo ? lo : (v > hi ? hi : v);
}

// col is (inC*kh*kw) x (oh*ow), row-major.
template <typename T>
void im2col(const Tensor<T>& x, int n, int kh, int kw, int stride, int pad,
            PadMode mode, int oh, int ow, T* col) {
  const int C = x.shape.c, H = x.shape.h, W = x.shape.w;
  const size_t P = size_t(oh) * ow;
  for (int ic = 0; ic < C; ++ic) {
    const T* src = x.plane(n, ic);
    for (int dy = 0; dy < kh; ++dy) {
      for (int dx = 0; dx < kw; ++dx) {
        T* row = col + (size_t(ic) * kh * kw + size_t(dy) * kw + dx) * P;
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy * stride - pad + dy;
          for (int ox = 0; ox < ow; ++ox) {
            int ix = ox * stride - pad + dx;
            T v;
            if (mode == PadMode::kZero) {
              v = (iy >= 0 && iy < H && ix >= 0 && ix < W)
                      ? src[size_t(iy) * W + ix]
                      : T(0);
            } else {
              v = src[size_t(clampi(iy, 0, H - 1)) * W + clampi(ix, 0, W - 1)];
            }
            row[size_t(oy) * ow + ox] = v;
          }
        }
      }
    }
  }
}

// Scatter-add of a column matrix back into an image gradient.
template <typename T>
void col2im_add(const T* col, int C, int H, int W, int kh, int kw, int stride,
                int pad, PadMode mode, int oh, int ow, T* gx) {
  const size_t P = size_t(oh) * ow;
  for (int ic = 0; ic < C; ++ic) {
    T* dst = gx + size_t(ic) * H * W;
    for (int dy = 0; dy < kh; ++dy) {
      for (int dx = 0; dx < kw; ++dx) {
        const T* row = col + (size_t(ic) * kh * kw + size_t(dy) * kw + dx) * P;
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy * stride - pad + dy;
          for (int ox = 0; ox < ow; ++ox) {
            int ix = ox * stride - pad + dx;
            if (mode == PadMode::kZero) {
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              dst[size_t(iy) * W + ix] += row[size_t(oy) * ow + ox];
            } else {
              int cy = clampi(iy, 0, H - 1);
              int cx = clampi(ix, 0, W - 1);
              dst[size_t(cy) * W + cx] += row[size_t(oy) * ow + ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

// 2-D convolution, NCHW. Weight is (outC, inC, kh, kw); bias, if defined, is
// (1, outC, 1, 1). The 1x1/stride-1 case avoids im2col and keeps a fixed
// per-pixel accumulation order, so per-pixel results are invariant under
// pixel permutations of the input.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride,
              int pad, PadMode mode = PadMode::kZero) {
  const Shape xs = x.shape(), ws = w.shape();
  check<DimensionError>(ws.c == xs.c, "conv2d: input has ", xs.c,
                        " channels but weight expects ", ws.c);
  check<ParameterError>(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
  const int kh = ws.h, kw = ws.w, outC = ws.n;
  const int oh = conv_out_size(xs.h, kh, stride, pad);
  const int ow = conv_out_size(xs.w, kw, stride, pad);
  check<DimensionError>(oh >= 1 && ow >= 1, "conv2d: input ", xs.str(),
                        " too small for kernel ", kh, "x", kw, " stride ",
                        stride, " pad ", pad);
  if (b.defined()) {
    check<DimensionError>(b.shape().c == outC && b.shape().numel() == outC,
                          "conv2d: bias shape ", b.shape().str(),
                          " does not match ", outC, " output channels");
  }

  const bool one_by_one = (kh == 1 && kw == 1 && stride == 1 && pad == 0);
  const int N = xs.n;
  const size_t P = size_t(oh) * ow;
  const int K = xs.c * kh * kw;

  Tensor<T> out({N, outC, oh, ow});
  const Tensor<T>& xv = x.val();
  const Tensor<T>& wv = w.val();

  if (one_by_one) {
    // Pixel tiles keep the working set in cache. Each output pixel is
    // accumulated in ascending input-channel order, independent of its
    // position, which makes the result exactly equivariant under pixel
    // permutations.
    constexpr size_t kTile = 128;
    const int inC = xs.c;
    std::vector<T> tile(size_t(inC) * kTile);
    for (int n = 0; n < N; ++n) {
      for (size_t p0 = 0; p0 < P; p0 += kTile) {
        const size_t tp = std::min(kTile, P - p0);
        for (int ic = 0; ic < inC; ++ic) {
          const T* src = xv.plane(n, ic) + p0;
          T* row = tile.data() + size_t(ic) * kTile;
          for (size_t t = 0; t < tp; ++t) row[t] = src[t];
        }
        for (int oc = 0; oc < outC; ++oc) {
          T* dst = out.plane(n, oc) + p0;
          const T bias = b.defined() ? b.val().data[oc] : T(0);
          for (size_t t = 0; t < tp; ++t) dst[t] = bias;
          const T* wrow = wv.data.data() + size_t(oc) * inC;
          for (int ic = 0; ic < inC; ++ic) {
            const T coeff = wrow[ic];
            const T* row = tile.data() + size_t(ic) * kTile;
            for (size_t t = 0; t < tp; ++t) dst[t] += coeff * row[t];
          }
        }
      }
    }
  } else {
    std::vector<T> col(size_t(K) * P);
    Eigen::Map<const detail::MatRM<T>> W(wv.data.data(), outC, K);
    for (int n = 0; n < N; ++n) {
      detail::im2col(xv, n, kh, kw, stride, pad, mode, oh, ow, col.data());
      Eigen::Map<const detail::MatRM<T>> C(col.data(), K, Eigen::Index(P));
      Eigen::Map<detail::MatRM<T>> O(out.plane(n, 0), outC, Eigen::Index(P));
      O.noalias() = W * C;
    }
    if (b.defined()) {
      for (int n = 0; n < N; ++n) {
        for (int oc = 0; oc < outC; ++oc) {
          T* dst = out.plane(n, oc);
          const T bias = b.val().data[oc];
          for (size_t p = 0; p < P; ++p) dst[p] += bias;
        }
      }
    }
  }

  std::vector<Var<T>> inputs = {x, w};
  if (b.defined()) inputs.push_back(b);
  return make_op<T>(
      std::move(out), inputs,
      [stride, pad, mode, kh, kw, outC, oh, ow, K, one_by_one](Node<T>& n) {
        auto& xn = *n.parents[0];
        auto& wn = *n.parents[1];
        Node<T>* bn = n.parents.size() > 2 ? n.parents[2].get() : nullptr;
        const Shape xs = xn.value.shape;
        const size_t P = size_t(oh) * ow;
        const Tensor<T>& g = n.grad;

        if (bn && bn->requires_grad) {
          Tensor<T>& gb = bn->ensure_grad();
          for (int s = 0; s < xs.n; ++s) {
            for (int oc = 0; oc < outC; ++oc) {
              const T* gp = g.plane(s, oc);
              T acc = T(0);
              for (size_t p = 0; p < P; ++p) acc += gp[p];
              gb.data[oc] += acc;
            }
          }
        }

        if (one_by_one) {
          constexpr size_t kTile = 128;
          const int inC = xs.c;
          std::vector<T> gt(size_t(outC) * kTile);
          std::vector<T> xt(size_t(inC) * kTile);
          Tensor<T>* gw = wn.requires_grad ? &wn.ensure_grad() : nullptr;
          Tensor<T>* gx = xn.requires_grad ? &xn.ensure_grad() : nullptr;
          for (int s = 0; s < xs.n; ++s) {
            for (size_t p0 = 0; p0 < P; p0 += kTile) {
              const size_t tp = std::min(kTile, P - p0);
              for (int oc = 0; oc < outC; ++oc) {
                const T* gp = g.plane(s, oc) + p0;
                T* row = gt.data() + size_t(oc) * kTile;
                for (size_t t = 0; t < tp; ++t) row[t] = gp[t];
              }
              if (gw) {
                for (int ic = 0; ic < inC; ++ic) {
                  const T* src = xn.value.plane(s, ic) + p0;
                  T* row = xt.data() + size_t(ic) * kTile;
                  for (size_t t = 0; t < tp; ++t) row[t] = src[t];
                }
                for (int oc = 0; oc < outC; ++oc) {
                  const T* grow = gt.data() + size_t(oc) * kTile;
                  for (int ic = 0; ic < inC; ++ic) {
                    const T* xrow = xt.data() + size_t(ic) * kTile;
                    T acc = T(0);
                    for (size_t t = 0; t < tp; ++t) acc += grow[t] * xrow[t];
                    gw->data[size_t(oc) * inC + ic] += acc;
                  }
                }
              }
              if (gx) {
                for (int ic = 0; ic < inC; ++ic) {
                  T* dst = gx->plane(s, ic) + p0;
                  for (int oc = 0; oc < outC; ++oc) {
                    const T coeff = wn.value.data[size_t(oc) * inC + ic];
                    const T* grow = gt.data() + size_t(oc) * kTile;
                    for (size_t t = 0; t < tp; ++t) dst[t] += coeff * grow[t];
                  }
                }
              }
            }
          }
          return;
        }

        std::vector<T> col(size_t(K) * P);
        Eigen::Map<const detail::MatRM<T>> W(wn.value.data.data(), outC, K);
        for (int s = 0; s < xs.n; ++s) {
          Eigen::Map<const detail::MatRM<T>> G(g.plane(s, 0), outC,
                                               Eigen::Index(P));
          if (wn.requires_grad) {
            detail::im2col(xn.value, s, kh, kw, stride, pad, mode, oh, ow,
                           col.data());
            Eigen::Map<const detail::MatRM<T>> C(col.data(), K,
                                                 Eigen::Index(P));
            Eigen::Map<detail::MatRM<T>> GW(wn.ensure_grad().data.data(),
                                            outC, K);
            GW.noalias() += G * C.transpose();
          }
          if (xn.requires_grad) {
            Eigen::Map<detail::MatRM<T>> C(col.data(), K, Eigen::Index(P));
            C.noalias() = W.transpose() * G;
            detail::col2im_add(col.data(), xs.c, xs.h, xs.w, kh, kw, stride,
                               pad, mode, oh, ow,
                               xn.ensure_grad().plane(s, 0));
          }
        }
      });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out = x.val();
  for (auto& v : out.data) v = v > T(0) ? v : T(0);
  return make_op<T>(std::move(out), {x}, [](Node<T>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    Tensor<T>& gx = p.ensure_grad();
    for (size_t i = 0; i < gx.data.size(); ++i) {
      if (p.value.data[i] > T(0)) gx.data[i] += n.grad.data[i];
    }
  });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  Tensor<T> out = x.val();
  for (auto& v : out.data) v = v > T(0) ? v : slope * v;
  return make_op<T>(std::move(out), {x}, [slope](Node<T>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    Tensor<T>& gx = p.ensure_grad();
    for (size_t i = 0; i < gx.data.size(); ++i) {
      gx.data[i] +=
          (p.value.data[i] > T(0) ? T(1) : slope) * n.grad.data[i];
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out = x.val();
  for (auto& v : out.data) v = T(1) / (T(1) + std::exp(-v));
  return make_op<T>(std::move(out), {x}, [](Node<T>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    Tensor<T>& gx = p.ensure_grad();
    for (size_t i = 0; i < gx.data.size(); ++i) {
      T y = n.value.data[i];
      gx.data[i] += y * (T(1) - y) * n.grad.data[i];
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a.val(), b.val(), "add");
  Tensor<T> out = a.val();
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.val().data[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    for (int k = 0; k < 2; ++k) {
      auto& p = *n.parents[k];
      if (!p.requires_grad) continue;
      Tensor<T>& g = p.ensure_grad();
      for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i];
    }
  });
}

// out[n,c,:,:] = x[n,c,:,:] * s[n,c,0,0]
template <typename T>
Var<T> scale_channels(const Var<T>& x, const Var<T>& s) {
  const Shape xs = x.shape(), ss = s.shape();
  check<DimensionError>(ss.n == xs.n && ss.c == xs.c && ss.h == 1 &&
                            ss.w == 1,
                        "scale_channels: scale shape ", ss.str(),
                        " does not broadcast over ", xs.str());
  Tensor<T> out(xs);
  const size_t hw = size_t(xs.h) * xs.w;
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < xs.c; ++c) {
      const T k = s.val().at(n, c, 0, 0);
      const T* src = x.val().plane(n, c);
      T* dst = out.plane(n, c);
      for (size_t i = 0; i < hw; ++i) dst[i] = src[i] * k;
    }
  }
  return make_op<T>(std::move(out), {x, s}, [](Node<T>& n) {
    auto& xn = *n.parents[0];
    auto& sn = *n.parents[1];
    const Shape xs = xn.value.shape;
    const size_t hw = size_t(xs.h) * xs.w;
    for (int s = 0; s < xs.n; ++s) {
      for (int c = 0; c < xs.c; ++c) {
        const T* gp = n.grad.plane(s, c);
        if (xn.requires_grad) {
          const T k = sn.value.at(s, c, 0, 0);
          T* gx = xn.ensure_grad().plane(s, c);
          for (size_t i = 0; i < hw; ++i) gx[i] += gp[i] * k;
        }
        if (sn.requires_grad) {
          const T* xp = xn.value.plane(s, c);
          T acc = T(0);
          for (size_t i = 0; i < hw; ++i) acc += gp[i] * xp[i];
          sn.ensure_grad().at(s, c, 0, 0) += acc;
        }
      }
    }
  });
}

// out[n,c,:,:] = x[n,c,:,:] + t[n,c,0,0]
template <typename T>
Var<T> add_channels(const Var<T>& x, const Var<T>& t) {
  const Shape xs = x.shape(), ts = t.shape();
  check<DimensionError>(ts.n == xs.n && ts.c == xs.c && ts.h == 1 &&
                            ts.w == 1,
                        "add_channels: bias shape ", ts.str(),
                        " does not broadcast over ", xs.str());
  Tensor<T> out(xs);
  const size_t hw = size_t(xs.h) * xs.w;
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < xs.c; ++c) {
      const T k = t.val().at(n, c, 0, 0);
      const T* src = x.val().plane(n, c);
      T* dst = out.plane(n, c);
      for (size_t i = 0; i < hw; ++i) dst[i] = src[i] + k;
    }
  }
  return make_op<T>(std::move(out), {x, t}, [](Node<T>& n) {
    auto& xn = *n.parents[0];
    auto& tn = *n.parents[1];
    const Shape xs = xn.value.shape;
    const size_t hw = size_t(xs.h) * xs.w;
    for (int s = 0; s < xs.n; ++s) {
      for (int c = 0; c < xs.c; ++c) {
        const T* gp = n.grad.plane(s, c);
        if (xn.requires_grad) {
          T* gx = xn.ensure_grad().plane(s, c);
          for (size_t i = 0; i < hw; ++i) gx[i] += gp[i];
        }
        if (tn.requires_grad) {
          T acc = T(0);
          for (size_t i = 0; i < hw; ++i) acc += gp[i];
          tn.ensure_grad().at(s, c, 0, 0) += acc;
        }
      }
    }
  });
}

template <typename T>
Var<T> slice_channels(const Var<T>& x, int c0, int c1) {
  const Shape xs = x.shape();
  check<DimensionError>(0 <= c0 && c0 < c1 && c1 <= xs.c,
                        "slice_channels: range [", c0, ", ", c1,
                        ") out of bounds for ", xs.c, " channels");
  Tensor<T> out({xs.n, c1 - c0, xs.h, xs.w});
  const size_t hw = size_t(xs.h) * xs.w;
  for (int n = 0; n < xs.n; ++n) {
    for (int c = c0; c < c1; ++c) {
      const T* src = x.val().plane(n, c);
      std::copy(src, src + hw, out.plane(n, c - c0));
    }
  }
  return make_op<T>(std::move(out), {x}, [c0, c1](Node<T>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    Tensor<T>& gx = p.ensure_grad();
    const Shape xs = p.value.shape;
    const size_t hw = size_t(xs.h) * xs.w;
    for (int s = 0; s < xs.n; ++s) {
      for (int c = c0; c < c1; ++c) {
        const T* gp = n.grad.plane(s, c - c0);
        T* dst = gx.plane(s, c);
        for (size_t i = 0; i < hw; ++i) dst[i] += gp[i];
      }
    }
  });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const Shape xs = x.shape();
  Tensor<T> out({xs.n, xs.c, 1, 1});
  const size_t hw = size_t(xs.h) * xs.w;
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < xs.c; ++c) {
      const T* src = x.val().plane(n, c);
      T acc = T(0);
      for (size_t i = 0; i < hw; ++i) acc += src[i];
      out.at(n, c, 0, 0) = acc / T(hw);
    }
  }
  return make_op<T>(std::move(out), {x}, [](Node<T>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    const Shape xs = p.value.shape;
    const size_t hw = size_t(xs.h) * xs.w;
    Tensor<T>& gx = p.ensure_grad();
    for (int s = 0; s < xs.n; ++s) {
      for (int c = 0; c < xs.c; ++c) {
        const T g = n.grad.at(s, c, 0, 0) / T(hw);
        T* dst = gx.plane(s, c);
        for (size_t i = 0; i < hw; ++i) dst[i] += g;
      }
    }
  });
}

// (n, c*r*r, h, w) -> (n, c, h*r, w*r); input channel c*r*r + dy*r + dx maps
// to output offset (dy, dx) inside each r x r cell.
template <typename T>
Var<T> pixel_shuffle(const Var<T>& x, int r) {
  const Shape xs = x.shape();
  check<ParameterError>(r >= 1, "pixel_shuffle: upscale factor must be >= 1");
  check<DimensionError>(xs.c % (r * r) == 0, "pixel_shuffle: ", xs.c,
                        " channels not divisible by r^2=", r * r);
  const int outC = xs.c / (r * r);
  Tensor<T> out({xs.n, outC, xs.h * r, xs.w * r});
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < outC; ++c) {
      for (int dy = 0; dy < r; ++dy) {
        for (int dx = 0; dx < r; ++dx) {
          const T* src = x.val().plane(n, c * r * r + dy * r + dx);
          for (int y = 0; y < xs.h; ++y) {
            for (int xw = 0; xw < xs.w; ++xw) {
              out.at(n, c, y * r + dy, xw * r + dx) =
                  src[size_t(y) * xs.w + xw];
            }
          }
        }
      }
    }
  }
  return make_op<T>(std::move(out), {x}, [r](Node<T>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    const Shape xs = p.value.shape;
    const int outC = xs.c / (r * r);
    Tensor<T>& gx = p.ensure_grad();
    for (int s = 0; s < xs.n; ++s) {
      for (int c = 0; c < outC; ++c) {
        for (int dy = 0; dy < r; ++dy) {
          for (int dx = 0; dx < r; ++dx) {
            T* dst = gx.plane(s, c * r * r + dy * r + dx);
            for (int y = 0; y < xs.h; ++y) {
              for (int xw = 0; xw < xs.w; ++xw) {
                dst[size_t(y) * xs.w + xw] +=
                    n.grad.at(s, c, y * r + dy, xw * r + dx);
              }
            }
          }
        }
      }
    }
  });
}

// Batch normalization over (n, h, w) per channel. In training mode the batch
// statistics normalize and the running buffers are updated in place; in eval
// mode the running buffers normalize.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  Tensor<T>& running_mean, Tensor<T>& running_var,
                  bool training, T momentum = T(0.1), T eps = T(1e-5)) {
  const Shape xs = x.shape();
  const int C = xs.c;
  check<DimensionError>(gamma.shape().numel() == C &&
                            beta.shape().numel() == C &&
                            running_mean.numel() == C &&
                            running_var.numel() == C,
                        "batch_norm: per-channel tensors must have ", C,
                        " elements");
  const size_t per_c = size_t(xs.n) * xs.h * xs.w;
  check<DimensionError>(per_c >= 1, "batch_norm: empty input");

  Tensor<T> mean({1, C, 1, 1});
  Tensor<T> inv_std({1, C, 1, 1});
  if (training) {
    for (int c = 0; c < C; ++c) {
      T acc = T(0);
      for (int n = 0; n < xs.n; ++n) {
        const T* src = x.val().plane(n, c);
        for (size_t i = 0; i < size_t(xs.h) * xs.w; ++i) acc += src[i];
      }
      mean.data[c] = acc / T(per_c);
    }
    for (int c = 0; c < C; ++c) {
      T acc = T(0);
      for (int n = 0; n < xs.n; ++n) {
        const T* src = x.val().plane(n, c);
        for (size_t i = 0; i < size_t(xs.h) * xs.w; ++i) {
          T d = src[i] - mean.data[c];
          acc += d * d;
        }
      }
      T var = acc / T(per_c);
      inv_std.data[c] = T(1) / std::sqrt(var + eps);
      T unbiased = per_c > 1 ? acc / T(per_c - 1) : var;
      running_mean.data[c] =
          (T(1) - momentum) * running_mean.data[c] + momentum * mean.data[c];
      running_var.data[c] =
          (T(1) - momentum) * running_var.data[c] + momentum * unbiased;
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean.data[c] = running_mean.data[c];
      inv_std.data[c] = T(1) / std::sqrt(running_var.data[c] + eps);
    }
  }

  Tensor<T> out(xs);
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < C; ++c) {
      const T* src = x.val().plane(n, c);
      T* dst = out.plane(n, c);
      const T m = mean.data[c], is = inv_std.data[c];
      const T g = gamma.val().data[c], bt = beta.val().data[c];
      for (size_t i = 0; i < size_t(xs.h) * xs.w; ++i) {
        dst[i] = (src[i] - m) * is * g + bt;
      }
    }
  }

  return make_op<T>(
      std::move(out), {x, gamma, beta},
      [mean, inv_std, training, per_c](Node<T>& n) {
        auto& xn = *n.parents[0];
        auto& gn = *n.parents[1];
        auto& bn = *n.parents[2];
        const Shape xs = xn.value.shape;
        const int C = xs.c;
        const size_t hw = size_t(xs.h) * xs.w;

        for (int c = 0; c < C; ++c) {
          const T m = mean.data[c], is = inv_std.data[c];
          const T g = gn.value.data[c];
          T sum_g = T(0), sum_gx = T(0);
          for (int s = 0; s < xs.n; ++s) {
            const T* gp = n.grad.plane(s, c);
            const T* xp = xn.value.plane(s, c);
            for (size_t i = 0; i < hw; ++i) {
              sum_g += gp[i];
              sum_gx += gp[i] * (xp[i] - m) * is;
            }
          }
          if (bn.requires_grad) bn.ensure_grad().data[c] += sum_g;
          if (gn.requires_grad) gn.ensure_grad().data[c] += sum_gx;
          if (xn.requires_grad) {
            Tensor<T>& gx = xn.ensure_grad();
            const T inv_n = T(1) / T(per_c);
            for (int s = 0; s < xs.n; ++s) {
              const T* gp = n.grad.plane(s, c);
              const T* xp = xn.value.plane(s, c);
              T* dst = gx.plane(s, c);
              for (size_t i = 0; i < hw; ++i) {
                T xhat = (xp[i] - m) * is;
                T d = training
                          ? (gp[i] - sum_g * inv_n - xhat * sum_gx * inv_n)
                          : gp[i];
                dst[i] += g * is * d;
              }
            }
          }
        }
      });
}

// mean((x - k)^2) as a scalar.
template <typename T>
Var<T> mean_sq_dev(const Var<T>& x, T k) {
  const T inv_n = T(1) / T(x.val().numel());
  T acc = T(0);
  for (T v : x.val().data) acc += (v - k) * (v - k);
  Tensor<T> out({1, 1, 1, 1});
  out.data[0] = acc * inv_n;
  return make_op<T>(std::move(out), {x}, [k, inv_n](Node<T>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    const T g = n.grad.data[0];
    Tensor<T>& gx = p.ensure_grad();
    for (size_t i = 0; i < gx.data.size(); ++i) {
      gx.data[i] += g * T(2) * (p.value.data[i] - k) * inv_n;
    }
  });
}

// Weighted sum of scalar terms.
template <typename T>
Var<T> weighted_sum(const std::vector<std::pair<T, Var<T>>>& terms) {
  check<ParameterError>(!terms.empty(), "weighted_sum: no terms");
  T acc = T(0);
  std::vector<Var<T>> inputs;
  std::vector<T> coeffs;
  for (const auto& [w, v] : terms) {
    check<DimensionError>(v.val().numel() == 1,
                          "weighted_sum: terms must be scalars");
    acc += w * v.val().data[0];
    inputs.push_back(v);
    coeffs.push_back(w);
  }
  Tensor<T> out({1, 1, 1, 1});
  out.data[0] = acc;
  return make_op<T>(std::move(out), inputs, [coeffs](Node<T>& n) {
    for (size_t i = 0; i < n.parents.size(); ++i) {
      auto& p = *n.parents[i];
      if (!p.requires_grad) continue;
      p.ensure_grad().data[0] += coeffs[i] * n.grad.data[0];
    }
  });
}

}  // namespace misp::nn
