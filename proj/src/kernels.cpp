/*
 * Copyright 2026 The drupi Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "drupi/error.hpp"

namespace drupi::kernels {

namespace {

constexpr std::size_t kDoubleAccumThreshold = 4096;

void require(bool cond, const std::string& what) {
  if (!cond) throw ShapeError(what);
}

std::vector<float> transpose(const float* src, std::size_t rows, std::size_t cols) {
  std::vector<float> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
  return out;
}

struct ConvGeometry {
  std::size_t n, ci, h, w, co, k, pad;
};

ConvGeometry conv_geometry(const Shape& x, const Shape& w) {
  require(x.size() == 4 && w.size() == 4, "conv2d expects NCHW input and OIHW weight");
  require(x[1] == w[1], "conv2d channel mismatch: input " + to_string(x) + " weight " + to_string(w));
  require(w[2] == w[3] && w[2] % 2 == 1, "conv2d expects odd square kernels");
  return {x[0], x[1], x[2], x[3], w[0], w[2], w[2] / 2};
}

// cols[(c*k + a)*k + b][i*W + j] = x[c][i + a - pad][j + b - pad]
void im2col(const float* x, const ConvGeometry& g, float* cols) {
  const std::size_t hw = g.h * g.w;
  for (std::size_t c = 0; c < g.ci; ++c)
    for (std::size_t a = 0; a < g.k; ++a)
      for (std::size_t b = 0; b < g.k; ++b) {
        float* row = cols + ((c * g.k + a) * g.k + b) * hw;
        for (std::size_t i = 0; i < g.h; ++i) {
          const long si = static_cast<long>(i + a) - static_cast<long>(g.pad);
          for (std::size_t j = 0; j < g.w; ++j) {
            const long sj = static_cast<long>(j + b) - static_cast<long>(g.pad);
            row[i * g.w + j] = (si < 0 || sj < 0 || si >= static_cast<long>(g.h) ||
                                sj >= static_cast<long>(g.w))
                                   ? 0.0f
                                   : x[(c * g.h + si) * g.w + sj];
          }
        }
      }
}

void col2im(const float* cols, const ConvGeometry& g, float* x) {
  const std::size_t hw = g.h * g.w;
  std::fill(x, x + g.ci * hw, 0.0f);
  for (std::size_t c = 0; c < g.ci; ++c)
    for (std::size_t a = 0; a < g.k; ++a)
      for (std::size_t b = 0; b < g.k; ++b) {
        const float* row = cols + ((c * g.k + a) * g.k + b) * hw;
        for (std::size_t i = 0; i < g.h; ++i) {
          const long si = static_cast<long>(i + a) - static_cast<long>(g.pad);
          if (si < 0 || si >= static_cast<long>(g.h)) continue;
          for (std::size_t j = 0; j < g.w; ++j) {
            const long sj = static_cast<long>(j + b) - static_cast<long>(g.pad);
            if (sj < 0 || sj >= static_cast<long>(g.w)) continue;
            x[(c * g.h + si) * g.w + sj] += row[i * g.w + j];
          }
        }
      }
}

// Per-axis strides of `from` (right-aligned against `to`), zero where broadcast.
std::vector<std::size_t> broadcast_strides(const Shape& from, const Shape& to) {
  std::vector<std::size_t> strides(to.size(), 0);
  const std::size_t off = to.size() - from.size();
  std::size_t s = 1;
  for (std::size_t i = from.size(); i-- > 0;) {
    if (from[i] != 1) strides[off + i] = s;
    s *= from[i];
  }
  return strides;
}

void check_broadcastable(const Shape& from, const Shape& to) {
  bool ok = from.size() <= to.size();
  for (std::size_t i = 0; ok && i < from.size(); ++i) {
    const std::size_t d = from[from.size() - 1 - i];
    ok = d == 1 || d == to[to.size() - 1 - i];
  }
  require(ok, "cannot broadcast " + to_string(from) + " to " + to_string(to));
}

// Visit every element of `shape` in row-major order, passing the mapped offset.
template <typename F>
void for_each_mapped(const Shape& shape, const std::vector<std::size_t>& strides, F&& f) {
  const std::size_t n = numel(shape);
  if (shape.empty()) {
    f(std::size_t{0}, std::size_t{0});
    return;
  }
  std::vector<std::size_t> idx(shape.size(), 0);
  std::size_t src = 0;
  const std::size_t last = shape.size() - 1;
  for (std::size_t lin = 0; lin < n;) {
    // Innermost axis as a tight loop.
    const std::size_t s = strides[last];
    for (std::size_t j = 0; j < shape[last]; ++j, ++lin) f(lin, src + j * s);
    for (std::size_t ax = last; ax-- > 0;) {
      src += strides[ax];
      if (++idx[ax] < shape[ax]) break;
      src -= strides[ax] * shape[ax];
      idx[ax] = 0;
    }
  }
}

}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const float* a, const float* b, float* c) {
  std::vector<float> at, bt;
  if (trans_a) {
    at = transpose(a, k, m);
    a = at.data();
  }
  if (trans_b) {
    bt = transpose(b, n, k);
    b = bt.data();
  }
  if (k > kDoubleAccumThreshold) {
    std::vector<double> acc(n);
    for (std::size_t i = 0; i < m; ++i) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t p = 0; p < k; ++p) {
        const double av = a[i * k + p];
        const float* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) acc[j] += av * brow[j];
      }
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] = static_cast<float>(acc[j]);
    }
    return;
  }
  for (std::size_t i = 0; i < m; ++i) {
    float* crow = c + i * n;
    std::fill(crow, crow + n, 0.0f);
    for (std::size_t p = 0; p < k; ++p) {
      const float av = a[i * k + p];
      const float* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul expects rank-2 operands");
  const std::size_t m = trans_a ? a.dim(1) : a.dim(0);
  const std::size_t ka = trans_a ? a.dim(0) : a.dim(1);
  const std::size_t kb = trans_b ? b.dim(1) : b.dim(0);
  const std::size_t n = trans_b ? b.dim(0) : b.dim(1);
  require(ka == kb, "matmul inner dimension mismatch: " + to_string(a.shape()) + " x " +
                        to_string(b.shape()));
  Tensor c({m, n});
  gemm(trans_a, trans_b, m, n, ka, a.data().data(), b.data().data(), c.data().data());
  return c;
}

Tensor conv2d(const Tensor& x, const Tensor& w) {
  const auto g = conv_geometry(x.shape(), w.shape());
  const std::size_t hw = g.h * g.w, kk = g.ci * g.k * g.k;
  Tensor y({g.n, g.co, g.h, g.w});
  std::vector<float> cols(kk * hw);
  for (std::size_t n = 0; n < g.n; ++n) {
    im2col(x.data().data() + n * g.ci * hw, g, cols.data());
    gemm(false, false, g.co, hw, kk, w.data().data(), cols.data(), y.data().data() + n * g.co * hw);
  }
  return y;
}

Tensor conv2d_back_input(const Tensor& gy, const Tensor& w, const Shape& x_shape) {
  const auto g = conv_geometry(x_shape, w.shape());
  require(gy.shape() == Shape({g.n, g.co, g.h, g.w}), "conv2d_back_input gradient shape mismatch");
  const std::size_t hw = g.h * g.w, kk = g.ci * g.k * g.k;
  Tensor gx(x_shape);
  std::vector<float> cols(kk * hw);
  for (std::size_t n = 0; n < g.n; ++n) {
    gemm(true, false, kk, hw, g.co, w.data().data(), gy.data().data() + n * g.co * hw, cols.data());
    col2im(cols.data(), g, gx.data().data() + n * g.ci * hw);
  }
  return gx;
}

Tensor conv2d_back_weight(const Tensor& x, const Tensor& gy, const Shape& w_shape) {
  const auto g = conv_geometry(x.shape(), w_shape);
  require(gy.shape() == Shape({g.n, g.co, g.h, g.w}), "conv2d_back_weight gradient shape mismatch");
  const std::size_t hw = g.h * g.w, kk = g.ci * g.k * g.k;
  std::vector<float> cols(kk * hw), part(g.co * kk);
  std::vector<double> acc(g.co * kk, 0.0);
  for (std::size_t n = 0; n < g.n; ++n) {
    im2col(x.data().data() + n * g.ci * hw, g, cols.data());
    gemm(false, true, g.co, kk, hw, gy.data().data() + n * g.co * hw, cols.data(), part.data());
    for (std::size_t i = 0; i < part.size(); ++i) acc[i] += part[i];
  }
  Tensor gw(w_shape);
  for (std::size_t i = 0; i < acc.size(); ++i) gw[i] = static_cast<float>(acc[i]);
  return gw;
}

Tensor avg_pool(const Tensor& x, std::size_t k) {
  require(x.rank() == 4 && x.dim(2) % k == 0 && x.dim(3) % k == 0,
          "avg_pool needs NCHW input with H, W divisible by the kernel, got " + to_string(x.shape()));
  const std::size_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3), oh = h / k, ow = w / k;
  Tensor y({x.dim(0), x.dim(1), oh, ow});
  const float inv = 1.0f / static_cast<float>(k * k);
  for (std::size_t p = 0; p < nc; ++p)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        float s = 0.0f;
        for (std::size_t a = 0; a < k; ++a)
          for (std::size_t b = 0; b < k; ++b) s += x[(p * h + i * k + a) * w + j * k + b];
        y[(p * oh + i) * ow + j] = s * inv;
      }
  return y;
}

Tensor avg_pool_back(const Tensor& g, std::size_t k, const Shape& x_shape) {
  require(x_shape.size() == 4 &&
              g.shape() == Shape({x_shape[0], x_shape[1], x_shape[2] / k, x_shape[3] / k}),
          "avg_pool_back shape mismatch");
  const std::size_t nc = x_shape[0] * x_shape[1], h = x_shape[2], w = x_shape[3];
  const std::size_t oh = h / k, ow = w / k;
  Tensor gx(x_shape);
  const float inv = 1.0f / static_cast<float>(k * k);
  for (std::size_t p = 0; p < nc; ++p)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) gx[(p * h + i) * w + j] = g[(p * oh + i / k) * ow + j / k] * inv;
  return gx;
}

Tensor max_pool(const Tensor& x, std::size_t k, std::vector<std::uint32_t>& argmax) {
  require(x.rank() == 4 && x.dim(2) % k == 0 && x.dim(3) % k == 0,
          "max_pool needs NCHW input with H, W divisible by the kernel, got " + to_string(x.shape()));
  const std::size_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3), oh = h / k, ow = w / k;
  Tensor y({x.dim(0), x.dim(1), oh, ow});
  argmax.assign(y.numel(), 0);
  for (std::size_t p = 0; p < nc; ++p)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = (p * h + i * k) * w + j * k;
        for (std::size_t a = 0; a < k; ++a)
          for (std::size_t b = 0; b < k; ++b) {
            const std::size_t idx = (p * h + i * k + a) * w + j * k + b;
            if (x[idx] > x[best]) best = idx;
          }
        const std::size_t o = (p * oh + i) * ow + j;
        y[o] = x[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
  return y;
}

Tensor max_pool_scatter(const Tensor& g, const std::vector<std::uint32_t>& argmax,
                        const Shape& x_shape) {
  require(g.numel() == argmax.size(), "max_pool_scatter gradient size mismatch");
  Tensor gx(x_shape);
  for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += g[o];
  return gx;
}

Tensor max_pool_gather(const Tensor& x, const std::vector<std::uint32_t>& argmax,
                       const Shape& y_shape) {
  require(numel(y_shape) == argmax.size(), "max_pool_gather size mismatch");
  Tensor y(y_shape);
  for (std::size_t o = 0; o < argmax.size(); ++o) {
    require(argmax[o] < x.numel(), "max_pool_gather index out of range");
    y[o] = x[argmax[o]];
  }
  return y;
}

Tensor softmax_last(const Tensor& x) {
  require(x.rank() >= 1, "softmax needs rank >= 1");
  const std::size_t c = x.shape().back(), rows = x.numel() / c;
  Tensor y(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const float* in = x.data().data() + r * c;
    float* out = y.data().data() + r * c;
    const float mx = *std::max_element(in, in + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out[j] = std::exp(in[j] - mx);
      s += out[j];
    }
    const float inv = static_cast<float>(1.0 / s);
    for (std::size_t j = 0; j < c; ++j) out[j] *= inv;
  }
  return y;
}

Tensor log_softmax_last(const Tensor& x) {
  require(x.rank() >= 1, "log_softmax needs rank >= 1");
  const std::size_t c = x.shape().back(), rows = x.numel() / c;
  Tensor y(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const float* in = x.data().data() + r * c;
    float* out = y.data().data() + r * c;
    const float mx = *std::max_element(in, in + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(static_cast<double>(in[j] - mx));
    const float lse = mx + static_cast<float>(std::log(s));
    for (std::size_t j = 0; j < c; ++j) out[j] = in[j] - lse;
  }
  return y;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    require(da == db || da == 1 || db == 1,
            "incompatible shapes " + to_string(a) + " and " + to_string(b));
    out[r - 1 - i] = std::max(da, db);
  }
  return out;
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  check_broadcastable(x.shape(), shape);
  Tensor y(shape);
  const float* src = x.data().data();
  float* dst = y.data().data();
  for_each_mapped(shape, broadcast_strides(x.shape(), shape),
                  [&](std::size_t lin, std::size_t s) { dst[lin] = src[s]; });
  return y;
}

Tensor sum_to(const Tensor& x, const Shape& shape) {
  check_broadcastable(shape, x.shape());
  std::vector<double> acc(numel(shape), 0.0);
  const float* src = x.data().data();
  for_each_mapped(x.shape(), broadcast_strides(shape, x.shape()),
                  [&](std::size_t lin, std::size_t d) { acc[d] += src[lin]; });
  Tensor y(shape);
  for (std::size_t i = 0; i < acc.size(); ++i) y[i] = static_cast<float>(acc[i]);
  return y;
}

Tensor concat(const std::vector<const Tensor*>& xs, std::size_t axis) {
  require(!xs.empty(), "concat of zero tensors");
  Shape out = xs.front()->shape();
  require(axis < out.size(), "concat axis out of range");
  out[axis] = 0;
  for (const Tensor* t : xs) {
    Shape s = t->shape();
    require(s.size() == out.size(), "concat rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      require(i == axis || s[i] == out[i], "concat shape mismatch off the concat axis");
    out[axis] += s[axis];
  }
  const std::size_t outer = numel(Shape(out.begin(), out.begin() + axis));
  const std::size_t inner = numel(Shape(out.begin() + axis + 1, out.end()));
  Tensor y(out);
  float* dst = y.data().data();
  for (std::size_t o = 0; o < outer; ++o)
    for (const Tensor* t : xs) {
      const std::size_t block = t->dim(axis) * inner;
      std::copy_n(t->data().data() + o * block, block, dst);
      dst += block;
    }
  return y;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  require(axis < x.rank() && begin < end && end <= x.dim(axis), "slice out of range");
  Shape out = x.shape();
  out[axis] = end - begin;
  const std::size_t outer = numel(Shape(out.begin(), out.begin() + axis));
  const std::size_t inner = numel(Shape(out.begin() + axis + 1, out.end()));
  Tensor y(out);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x.data().data() + (o * x.dim(axis) + begin) * inner, (end - begin) * inner,
                y.data().data() + o * (end - begin) * inner);
  return y;
}

Tensor slice_pad(const Tensor& g, std::size_t axis, std::size_t begin, const Shape& full) {
  require(axis < full.size() && g.rank() == full.size() && begin + g.dim(axis) <= full[axis],
          "slice_pad out of range");
  const std::size_t len = g.dim(axis);
  const std::size_t outer = numel(Shape(full.begin(), full.begin() + axis));
  const std::size_t inner = numel(Shape(full.begin() + axis + 1, full.end()));
  Tensor y(full);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(g.data().data() + o * len * inner, len * inner,
                y.data().data() + (o * full[axis] + begin) * inner);
  return y;
}

}  // namespace drupi::kernels
