#pragma once

// Raw numeric kernels behind the graph operations. All loops run in a fixed
// order so results are bit-reproducible for a given build.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "gfpc/tensor.hpp"

namespace gfpc::kernels {

/// Fixed-order dot product with eight interleaved partial sums.
template <class T>
T dot(const T* a, const T* b, std::size_t n) {
  T acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
  T tail = 0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

template <class T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

struct ConvGeometry {
  std::size_t c_in, h, w, c_out, kh, kw, stride, pad, out_h, out_w;

  std::size_t patch() const { return c_in * kh * kw; }
  std::size_t positions() const { return out_h * out_w; }
};

inline ConvGeometry conv_geometry(const Shape& input, const Shape& kernel, std::size_t stride, std::size_t pad) {
  if (input.size() != 3) throw DimensionError("conv2d input must be [c,h,w], got " + shape_str(input));
  if (kernel.size() != 4) throw DimensionError("conv2d kernel must be [c_out,c_in,kh,kw], got " + shape_str(kernel));
  if (kernel[1] != input[0])
    throw DimensionError("conv2d kernel expects " + std::to_string(kernel[1]) + " input channels, input has " +
                         std::to_string(input[0]));
  if (stride == 0) throw DimensionError("conv2d stride must be >= 1");
  const std::size_t ph = input[1] + 2 * pad, pw = input[2] + 2 * pad;
  if (kernel[2] > ph || kernel[3] > pw)
    throw DimensionError("conv2d kernel " + shape_str(kernel) + " larger than padded input " + shape_str(input));
  ConvGeometry g{input[0], input[1], input[2], kernel[0], kernel[2], kernel[3], stride, pad, 0, 0};
  g.out_h = (ph - g.kh) / stride + 1;
  g.out_w = (pw - g.kw) / stride + 1;
  return g;
}

/// Unfolds input patches into a [patch, positions] matrix; padded taps are zero.
template <class T>
void im2col(const ConvGeometry& g, const T* x, T* col) {
  const std::size_t P = g.positions();
  for (std::size_t c = 0; c < g.c_in; ++c)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = col + ((c * g.kh + ki) * g.kw + kj) * P;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? T(0) : src[ix];
          }
        }
      }
}

template <class T>
void col2im_add(const ConvGeometry& g, const T* col, T* dx) {
  const std::size_t P = g.positions();
  for (std::size_t c = 0; c < g.c_in; ++c)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = col + ((c * g.kh + ki) * g.kw + kj) * P;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          T* dst = dx + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += row[oy * g.out_w + ox];
          }
        }
      }
}

/// out[co][p] = sum_k w[co][k] * col[k][p], accumulated in k order.
template <class T>
void conv_forward(const ConvGeometry& g, const T* col, const T* w, T* out) {
  const std::size_t K = g.patch(), P = g.positions();
  std::fill(out, out + g.c_out * P, T(0));
  for (std::size_t co = 0; co < g.c_out; ++co) {
    T* o = out + co * P;
    for (std::size_t k = 0; k < K; ++k) axpy(w[co * K + k], col + k * P, o, P);
  }
}

template <class T>
void conv_backward_weight(const ConvGeometry& g, const T* col, const T* dy, T* dw) {
  const std::size_t K = g.patch(), P = g.positions();
  for (std::size_t co = 0; co < g.c_out; ++co)
    for (std::size_t k = 0; k < K; ++k) dw[co * K + k] += dot(dy + co * P, col + k * P, P);
}

template <class T>
void conv_backward_col(const ConvGeometry& g, const T* w, const T* dy, T* dcol) {
  const std::size_t K = g.patch(), P = g.positions();
  std::fill(dcol, dcol + K * P, T(0));
  for (std::size_t co = 0; co < g.c_out; ++co)
    for (std::size_t k = 0; k < K; ++k) axpy(w[co * K + k], dy + co * P, dcol + k * P, P);
}

/// Bilinear 2x upsampling taps along one axis (half-pixel centers, edge clamped).
struct UpsampleTaps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> w_hi;
};

inline UpsampleTaps upsample_taps(std::size_t n) {
  UpsampleTaps t;
  const std::size_t m = 2 * n;
  t.lo.resize(m);
  t.hi.resize(m);
  t.w_hi.resize(m);
  for (std::size_t o = 0; o < m; ++o) {
    double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    if (src < 0) src = 0;
    auto i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > n - 1) i0 = n - 1;
    t.lo[o] = i0;
    t.hi[o] = std::min(i0 + 1, n - 1);
    t.w_hi[o] = src - static_cast<double>(i0);
  }
  return t;
}

}  // namespace gfpc::kernels
