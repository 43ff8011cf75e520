#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "scan2num/rng.hpp"
#include "scan2num/tensor.hpp"

// Layer primitives for the slice column. Convolutions are valid (unpadded)
// with floor output sizing; max pooling keeps partial boundary windows (ceil
// sizing). All reductions run in a fixed sequential order so results are
// reproducible bit-for-bit regardless of thread count.

namespace scan2num {

inline int conv_out_size(int in, int kernel, int stride) {
  if (kernel < 1 || stride < 1) throw DataError("conv: kernel and stride must be >= 1");
  if (in < kernel)
    throw DataError("conv: input extent " + std::to_string(in) + " smaller than kernel " +
                    std::to_string(kernel));
  return (in - kernel) / stride + 1;
}

inline int pool_out_size(int in, int kernel, int stride) {
  if (kernel < 1 || stride < 1) throw DataError("pool: kernel and stride must be >= 1");
  if (in < 1) throw DataError("pool: empty input");
  if (kernel >= in + stride)
    throw DataError("pool: kernel " + std::to_string(kernel) + " exceeds input " +
                    std::to_string(in) + " plus stride");
  int span = in - kernel;
  int steps = span <= 0 ? 0 : (span + stride - 1) / stride;
  return steps + 1;
}

// ---- small matmul kernels ------------------------------------------------
// c[m,n] (+)= a[m,k] * b[k,n]
template <typename T>
void matmul_nn(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<int64_t>(i) * n;
    if (!accumulate) std::fill(crow, crow + n, T(0));
    const T* arow = a + static_cast<int64_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m,n] (+)= a[k,m]^T * b[k,n]
template <typename T>
void matmul_tn(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + static_cast<int64_t>(m) * n, T(0));
  for (int p = 0; p < k; ++p) {
    const T* arow = a + static_cast<int64_t>(p) * m;
    const T* brow = b + static_cast<int64_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const T av = arow[i];
      if (av == T(0)) continue;
      T* crow = c + static_cast<int64_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m,n] (+)= a[m,k] * b[n,k]^T, four-lane dots so the row reduction gets some
// ILP without reassociating the final sum nondeterministically
template <typename T>
void matmul_nt(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<int64_t>(i) * k;
    T* crow = c + static_cast<int64_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const T* brow = b + static_cast<int64_t>(j) * k;
      T s0 = T(0), s1 = T(0), s2 = T(0), s3 = T(0);
      int p = 0;
      for (; p + 4 <= k; p += 4) {
        s0 += arow[p] * brow[p];
        s1 += arow[p + 1] * brow[p + 1];
        s2 += arow[p + 2] * brow[p + 2];
        s3 += arow[p + 3] * brow[p + 3];
      }
      T s = (s0 + s1) + (s2 + s3);
      for (; p < k; ++p) s += arow[p] * brow[p];
      crow[j] = accumulate ? crow[j] + s : s;
    }
  }
}

// ---- im2col --------------------------------------------------------------
// src [c,h,w] -> col [c*k*k, h_out*w_out]
template <typename T>
void im2col(const T* src, int c_in, int h, int w, int k, int stride, int h_out, int w_out,
            T* col) {
  for (int c = 0; c < c_in; ++c) {
    const T* plane = src + static_cast<int64_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* dst = col + (static_cast<int64_t>(c * k + ky) * k + kx) *
                           (static_cast<int64_t>(h_out) * w_out);
        for (int oy = 0; oy < h_out; ++oy) {
          const T* row = plane + static_cast<int64_t>(oy * stride + ky) * w + kx;
          T* drow = dst + static_cast<int64_t>(oy) * w_out;
          for (int ox = 0; ox < w_out; ++ox) drow[ox] = row[static_cast<int64_t>(ox) * stride];
        }
      }
    }
  }
}

// col [c*k*k, h_out*w_out] scattered back onto dst [c,h,w], accumulating
template <typename T>
void col2im_add(const T* col, int c_in, int h, int w, int k, int stride, int h_out, int w_out,
                T* dst) {
  for (int c = 0; c < c_in; ++c) {
    T* plane = dst + static_cast<int64_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* src = col + (static_cast<int64_t>(c * k + ky) * k + kx) *
                                 (static_cast<int64_t>(h_out) * w_out);
        for (int oy = 0; oy < h_out; ++oy) {
          T* row = plane + static_cast<int64_t>(oy * stride + ky) * w + kx;
          const T* srow = src + static_cast<int64_t>(oy) * w_out;
          for (int ox = 0; ox < w_out; ++ox) row[static_cast<int64_t>(ox) * stride] += srow[ox];
        }
      }
    }
  }
}

// ---- conv2d ----------------------------------------------------------------
struct ConvDims {
  int n, c_in, h, w, c_out, kernel, stride, h_out, w_out;
  int64_t col_rows() const { return static_cast<int64_t>(c_in) * kernel * kernel; }
  int64_t col_cols() const { return static_cast<int64_t>(h_out) * w_out; }
};

template <typename T>
ConvDims conv_dims(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                   int stride) {
  if (x.rank() != 4) throw DataError("conv: input must be [n,c,h,w]");
  if (weight.rank() != 4) throw DataError("conv: weight must be [c_out,c_in,k,k]");
  if (weight.dim(2) != weight.dim(3)) throw DataError("conv: kernel must be square");
  if (x.dim(1) != weight.dim(1))
    throw DataError("conv: input has " + std::to_string(x.dim(1)) + " channels, weight expects " +
                    std::to_string(weight.dim(1)));
  if (bias.rank() != 1 || bias.dim(0) != weight.dim(0))
    throw DataError("conv: bias shape does not match output channels");
  ConvDims d;
  d.n = x.dim(0);
  d.c_in = x.dim(1);
  d.h = x.dim(2);
  d.w = x.dim(3);
  d.c_out = weight.dim(0);
  d.kernel = weight.dim(2);
  d.stride = stride;
  d.h_out = conv_out_size(d.h, d.kernel, stride);
  d.w_out = conv_out_size(d.w, d.kernel, stride);
  return d;
}

// col, sized [n, c_in*k*k, h_out*w_out] here, holds the unfolded input and is
// consumed again by the backward pass.
template <typename T>
void conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                    int stride, Tensor<T>& col, Tensor<T>& y) {
  ConvDims d = conv_dims(x, weight, bias, stride);
  ensure_shape(col, {d.n, static_cast<int>(d.col_rows()), static_cast<int>(d.col_cols())});
  ensure_shape(y, {d.n, d.c_out, d.h_out, d.w_out});
  const int64_t x_stride = static_cast<int64_t>(d.c_in) * d.h * d.w;
  const int64_t col_stride = d.col_rows() * d.col_cols();
  const int64_t y_stride = static_cast<int64_t>(d.c_out) * d.col_cols();
  for (int s = 0; s < d.n; ++s) {
    T* col_s = col.ptr() + s * col_stride;
    T* y_s = y.ptr() + s * y_stride;
    im2col(x.ptr() + s * x_stride, d.c_in, d.h, d.w, d.kernel, d.stride, d.h_out, d.w_out, col_s);
    matmul_nn(d.c_out, static_cast<int>(d.col_cols()), static_cast<int>(d.col_rows()),
              weight.ptr(), col_s, y_s, false);
    for (int co = 0; co < d.c_out; ++co) {
      T* row = y_s + static_cast<int64_t>(co) * d.col_cols();
      const T b = bias.ptr()[co];
      for (int64_t j = 0; j < d.col_cols(); ++j) row[j] += b;
    }
  }
}

// Accumulates into dweight/dbias (callers zero at batch start), overwrites dx.
// The col buffer from the forward pass is reused in place as scratch for the
// input-gradient columns, so it is garbage afterwards.
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                     int stride, Tensor<T>& col, const Tensor<T>& dy, Tensor<T>& dweight,
                     Tensor<T>& dbias, Tensor<T>& dx) {
  ConvDims d = conv_dims(x, weight, bias, stride);
  if (!dy.same_shape({d.n, d.c_out, d.h_out, d.w_out}))
    throw DataError("conv backward: dy shape mismatch");
  ensure_shape(dx, x.shape);
  dx.zero();
  const int64_t x_stride = static_cast<int64_t>(d.c_in) * d.h * d.w;
  const int64_t col_stride = d.col_rows() * d.col_cols();
  const int64_t y_stride = static_cast<int64_t>(d.c_out) * d.col_cols();
  const int hw = static_cast<int>(d.col_cols());
  const int ckk = static_cast<int>(d.col_rows());
  for (int s = 0; s < d.n; ++s) {
    T* col_s = col.ptr() + s * col_stride;
    const T* dy_s = dy.ptr() + s * y_stride;
    matmul_nt(d.c_out, ckk, hw, dy_s, col_s, dweight.ptr(), true);
    for (int co = 0; co < d.c_out; ++co) {
      const T* row = dy_s + static_cast<int64_t>(co) * hw;
      T acc = T(0);
      for (int j = 0; j < hw; ++j) acc += row[j];
      dbias.ptr()[co] += acc;
    }
    matmul_tn(ckk, hw, d.c_out, weight.ptr(), dy_s, col_s, false);
    col2im_add(col_s, d.c_in, d.h, d.w, d.kernel, d.stride, d.h_out, d.w_out,
               dx.ptr() + s * x_stride);
  }
}

// ---- max pooling -----------------------------------------------------------
// Boundary windows are truncated to the valid region. Ties keep the first
// (lowest-index) maximum in row-major scan order; argmax stores the plane
// offset iy*w+ix for the backward scatter.
template <typename T>
void maxpool_forward(const Tensor<T>& x, int kernel, int stride, Tensor<T>& y,
                     Tensor<int32_t>& argmax) {
  if (x.rank() != 4) throw DataError("pool: input must be [n,c,h,w]");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int h_out = pool_out_size(h, kernel, stride);
  const int w_out = pool_out_size(w, kernel, stride);
  ensure_shape(y, {n, c, h_out, w_out});
  ensure_shape(argmax, {n, c, h_out, w_out});
  const T* src = x.ptr();
  T* dst = y.ptr();
  int32_t* arg = argmax.ptr();
  for (int64_t plane = 0; plane < static_cast<int64_t>(n) * c; ++plane) {
    const T* p = src + plane * h * w;
    T* o = dst + plane * h_out * w_out;
    int32_t* a = arg + plane * h_out * w_out;
    for (int oy = 0; oy < h_out; ++oy) {
      const int y0 = oy * stride;
      const int y1 = std::min(y0 + kernel, h);
      for (int ox = 0; ox < w_out; ++ox) {
        const int x0 = ox * stride;
        const int x1 = std::min(x0 + kernel, w);
        T best = p[y0 * w + x0];
        int32_t bi = y0 * w + x0;
        for (int iy = y0; iy < y1; ++iy) {
          for (int ix = x0; ix < x1; ++ix) {
            const T v = p[iy * w + ix];
            if (v > best) {
              best = v;
              bi = iy * w + ix;
            }
          }
        }
        o[oy * w_out + ox] = best;
        a[oy * w_out + ox] = bi;
      }
    }
  }
}

template <typename T>
void maxpool_backward(const Tensor<T>& dy, const Tensor<int32_t>& argmax, int h, int w,
                      Tensor<T>& dx) {
  if (dy.shape != argmax.shape) throw DataError("pool backward: dy/argmax shape mismatch");
  const int n = dy.dim(0), c = dy.dim(1);
  const int64_t per_plane = static_cast<int64_t>(dy.dim(2)) * dy.dim(3);
  ensure_shape(dx, {n, c, h, w});
  dx.zero();
  const T* g = dy.ptr();
  const int32_t* a = argmax.ptr();
  T* out = dx.ptr();
  for (int64_t plane = 0; plane < static_cast<int64_t>(n) * c; ++plane) {
    T* dplane = out + plane * h * w;
    const T* gplane = g + plane * per_plane;
    const int32_t* aplane = a + plane * per_plane;
    for (int64_t i = 0; i < per_plane; ++i) dplane[aplane[i]] += gplane[i];
  }
}

// ---- relu ------------------------------------------------------------------
template <typename T>
void relu_forward(const Tensor<T>& x, Tensor<T>& y) {
  ensure_shape(y, x.shape);
  const T* s = x.ptr();
  T* d = y.ptr();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) d[i] = s[i] > T(0) ? s[i] : T(0);
}

// mask comes from the forward output: y > 0 iff the pre-activation was > 0,
// and the gradient at exactly zero is defined as zero
template <typename T>
void relu_backward(const Tensor<T>& y_fwd, const Tensor<T>& dy, Tensor<T>& dx) {
  if (y_fwd.shape != dy.shape) throw DataError("relu backward: shape mismatch");
  ensure_shape(dx, dy.shape);
  const T* y = y_fwd.ptr();
  const T* g = dy.ptr();
  T* d = dx.ptr();
  const int64_t n = dy.numel();
  for (int64_t i = 0; i < n; ++i) d[i] = y[i] > T(0) ? g[i] : T(0);
}

// ---- dropout ---------------------------------------------------------------
// Inverted dropout: kept elements are scaled by 1/(1-rate) at train time so
// inference is a plain identity. The mask stores the applied factor per
// element. Elements are visited in index order, one uniform draw each.
template <typename T>
void dropout_forward(const Tensor<T>& x, double rate, bool training, Rng& rng, Tensor<T>& mask,
                     Tensor<T>& y) {
  if (!(rate >= 0.0 && rate < 1.0)) throw DataError("dropout: rate must be in [0,1)");
  ensure_shape(mask, x.shape);
  ensure_shape(y, x.shape);
  const T* s = x.ptr();
  T* m = mask.ptr();
  T* d = y.ptr();
  const int64_t n = x.numel();
  if (!training || rate == 0.0) {
    for (int64_t i = 0; i < n; ++i) {
      m[i] = T(1);
      d[i] = s[i];
    }
    return;
  }
  const T scale = T(1) / (T(1) - static_cast<T>(rate));
  for (int64_t i = 0; i < n; ++i) {
    m[i] = rng.uniform() < rate ? T(0) : scale;
    d[i] = s[i] * m[i];
  }
}

template <typename T>
void dropout_backward(const Tensor<T>& mask, const Tensor<T>& dy, Tensor<T>& dx) {
  if (mask.shape != dy.shape) throw DataError("dropout backward: shape mismatch");
  ensure_shape(dx, dy.shape);
  const T* m = mask.ptr();
  const T* g = dy.ptr();
  T* d = dx.ptr();
  const int64_t n = dy.numel();
  for (int64_t i = 0; i < n; ++i) d[i] = g[i] * m[i];
}

// ---- affine ----------------------------------------------------------------
template <typename T>
void affine_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                    Tensor<T>& y) {
  if (x.rank() != 2 || weight.rank() != 2) throw DataError("affine: expects 2-d input and weight");
  if (x.dim(1) != weight.dim(0))
    throw DataError("affine: input features " + std::to_string(x.dim(1)) +
                    " do not match weight rows " + std::to_string(weight.dim(0)));
  if (bias.rank() != 1 || bias.dim(0) != weight.dim(1))
    throw DataError("affine: bias shape mismatch");
  const int n = x.dim(0), f = x.dim(1), g = weight.dim(1);
  ensure_shape(y, {n, g});
  matmul_nn(n, g, f, x.ptr(), weight.ptr(), y.ptr(), false);
  for (int i = 0; i < n; ++i) {
    T* row = y.ptr() + static_cast<int64_t>(i) * g;
    for (int j = 0; j < g; ++j) row[j] += bias.ptr()[j];
  }
}

template <typename T>
void affine_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy,
                     Tensor<T>& dweight, Tensor<T>& dbias, Tensor<T>& dx) {
  const int n = x.dim(0), f = x.dim(1), g = weight.dim(1);
  if (!dy.same_shape({n, g})) throw DataError("affine backward: dy shape mismatch");
  matmul_tn(f, g, n, x.ptr(), dy.ptr(), dweight.ptr(), true);
  for (int j = 0; j < g; ++j) {
    T acc = T(0);
    for (int i = 0; i < n; ++i) acc += dy.ptr()[static_cast<int64_t>(i) * g + j];
    dbias.ptr()[j] += acc;
  }
  ensure_shape(dx, x.shape);
  matmul_nt(n, f, g, dy.ptr(), weight.ptr(), dx.ptr(), false);
}

// ---- fusion and loss ---------------------------------------------------------
// Mean over the slice axis: [n,f] -> [1,f]. Slices are added in index order.
template <typename T>
void mean_fuse_forward(const Tensor<T>& x, Tensor<T>& y) {
  if (x.rank() != 2) throw DataError("mean_fuse: expects [n,f]");
  const int n = x.dim(0), f = x.dim(1);
  ensure_shape(y, {1, f});
  y.zero();
  T* out = y.ptr();
  for (int i = 0; i < n; ++i) {
    const T* row = x.ptr() + static_cast<int64_t>(i) * f;
    for (int j = 0; j < f; ++j) out[j] += row[j];
  }
  const T inv = T(1) / static_cast<T>(n);
  for (int j = 0; j < f; ++j) out[j] *= inv;
}

template <typename T>
void mean_fuse_backward(const Tensor<T>& dy, int n, Tensor<T>& dx) {
  if (dy.rank() != 2 || dy.dim(0) != 1) throw DataError("mean_fuse backward: expects [1,f]");
  const int f = dy.dim(1);
  ensure_shape(dx, {n, f});
  const T inv = T(1) / static_cast<T>(n);
  for (int i = 0; i < n; ++i) {
    T* row = dx.ptr() + static_cast<int64_t>(i) * f;
    for (int j = 0; j < f; ++j) row[j] = dy.ptr()[j] * inv;
  }
}

// L2 regression loss (1/2N) * sum((pred - target)^2)
template <typename T>
T l2_loss(const std::vector<T>& pred, const std::vector<T>& target) {
  if (pred.size() != target.size() || pred.empty())
    throw DataError("l2_loss: prediction/target size mismatch");
  T acc = T(0);
  for (size_t i = 0; i < pred.size(); ++i) {
    const T d = pred[i] - target[i];
    acc += d * d;
  }
  return acc / (T(2) * static_cast<T>(pred.size()));
}

template <typename T>
std::vector<T> l2_loss_grad(const std::vector<T>& pred, const std::vector<T>& target) {
  if (pred.size() != target.size() || pred.empty())
    throw DataError("l2_loss: prediction/target size mismatch");
  std::vector<T> g(pred.size());
  const T inv = T(1) / static_cast<T>(pred.size());
  for (size_t i = 0; i < pred.size(); ++i) g[i] = (pred[i] - target[i]) * inv;
  return g;
}

// ---- init ----------------------------------------------------------------
// Xavier uniform over [-sqrt(3/fan_in), +sqrt(3/fan_in)], drawn in index order
template <typename T>
void fill_xavier(Tensor<T>& t, int fan_in, Rng& rng) {
  if (fan_in < 1) throw DataError("xavier: fan_in must be >= 1");
  const double bound = std::sqrt(3.0 / fan_in);
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
}

}  // namespace scan2num
