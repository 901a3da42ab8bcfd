#pragma once

// Gradient field of an image: the Sobel gradient magnitude kept only where
// the Canny detector fires, rescaled to [0,1].
//
// Axis convention: fields are indexed (row, col). `gu` is the response of the
// horizontal-derivative Sobel kernel (changes along columns), `gv` of the
// vertical one (changes along rows, rows growing downward). Both kernels are
// applied as cross-correlations, so for I(row, col) = col the interior gu is
// +8 and transposing an image swaps gu and gv without a sign change.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "gfpc/errors.hpp"
#include "gfpc/field.hpp"
#include "gfpc/tensor.hpp"

namespace gfpc {

/// Grayscale image with pixels in [0,1].
using GrayImage = Field;

struct GradientPair {
  Field gu;
  Field gv;
};

/// G in [0,1]; zero off the Canny mask.
using GradientField = Field;

struct CannyParams {
  double sigma = 1.4;
  int kernel_size = 5;
  double low = 0.1;   // fraction of the image's max gradient magnitude
  double high = 0.2;  // fraction of the image's max gradient magnitude

  void validate() const {
    if (!(sigma > 0)) throw ConfigError("canny sigma must be > 0");
    if (kernel_size < 3 || kernel_size % 2 == 0) throw ConfigError("canny kernel size must be odd and >= 3");
    if (!(low > 0) || !(low < high)) throw ConfigError("canny thresholds must satisfy 0 < low < high");
  }
};

/// Rec.601 luma of a [3,h,w] image.
template <class T>
GrayImage to_grayscale(const Tensor<T>& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3)
    throw DimensionError("to_grayscale expects a [3,h,w] image, got " + shape_str(rgb.shape()));
  const std::size_t h = rgb.dim(1), w = rgb.dim(2), hw = h * w;
  GrayImage g(h, w);
  for (std::size_t i = 0; i < hw; ++i)
    g.values[i] = 0.299 * static_cast<double>(rgb[i]) + 0.587 * static_cast<double>(rgb[hw + i]) +
                  0.114 * static_cast<double>(rgb[2 * hw + i]);
  return g;
}

/// Normalized 1-D Gaussian taps.
inline std::vector<double> gaussian_kernel(double sigma, int size) {
  std::vector<double> k(static_cast<std::size_t>(size));
  const int c = size / 2;
  double total = 0;
  for (int i = 0; i < size; ++i) {
    const double d = i - c;
    k[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * sigma * sigma));
    total += k[static_cast<std::size_t>(i)];
  }
  for (auto& v : k) v /= total;
  return k;
}

namespace detail {

inline std::size_t clamp_index(long i, std::size_t n) {
  if (i < 0) return 0;
  if (i >= static_cast<long>(n)) return n - 1;
  return static_cast<std::size_t>(i);
}

}  // namespace detail

/// Separable Gaussian blur with edge replication.
inline GrayImage gaussian_blur(const GrayImage& img, const CannyParams& params) {
  params.validate();
  const auto k = gaussian_kernel(params.sigma, params.kernel_size);
  const long c = params.kernel_size / 2;
  Field tmp(img.height, img.width), out(img.height, img.width);
  for (std::size_t r = 0; r < img.height; ++r)
    for (std::size_t col = 0; col < img.width; ++col) {
      double acc = 0;
      for (long i = -c; i <= c; ++i)
        acc += k[static_cast<std::size_t>(i + c)] * img.at(r, detail::clamp_index(static_cast<long>(col) + i, img.width));
      tmp.at(r, col) = acc;
    }
  for (std::size_t r = 0; r < img.height; ++r)
    for (std::size_t col = 0; col < img.width; ++col) {
      double acc = 0;
      for (long i = -c; i <= c; ++i)
        acc += k[static_cast<std::size_t>(i + c)] * tmp.at(detail::clamp_index(static_cast<long>(r) + i, img.height), col);
      out.at(r, col) = acc;
    }
  return out;
}

/// 3x3 Sobel responses with edge replication; output shape equals input shape.
inline GradientPair sobel(const GrayImage& img) {
  if (img.height < 3 || img.width < 3)
    throw DimensionError("sobel needs at least a 3x3 image, got " + std::to_string(img.height) + "x" +
                         std::to_string(img.width));
  static constexpr std::array<std::array<double, 3>, 3> kx{{{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}}};
  static constexpr std::array<std::array<double, 3>, 3> ky{{{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}}};
  GradientPair out{Field(img.height, img.width), Field(img.height, img.width)};
  for (std::size_t r = 0; r < img.height; ++r)
    for (std::size_t c = 0; c < img.width; ++c) {
      double sx = 0, sy = 0;
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          const double v = img.at(detail::clamp_index(static_cast<long>(r) + i - 1, img.height),
                                  detail::clamp_index(static_cast<long>(c) + j - 1, img.width));
          sx += kx[i][j] * v;
          sy += ky[i][j] * v;
        }
      out.gu.at(r, c) = sx;
      out.gv.at(r, c) = sy;
    }
  return out;
}

inline Field grad_magnitude(const GradientPair& pair) {
  if (pair.gu.height != pair.gv.height || pair.gu.width != pair.gv.width)
    throw DimensionError("gradient components have different shapes");
  Field m(pair.gu.height, pair.gu.width);
  for (std::size_t i = 0; i < m.size(); ++i) m.values[i] = std::hypot(pair.gu.values[i], pair.gv.values[i]);
  return m;
}

namespace detail {

// Relative slack for NMS comparisons on max-normalized magnitudes. Keeps the
// tie-breaking stable when the image is rescaled.
inline constexpr double kNmsTie = 1e-9;

// Peaks below this fraction of the image's intensity scale are round-off from
// summing equal taps, not edges; such images are treated as flat.
inline constexpr double kFlatRatio = 1e-10;

struct CannyTrace {
  Field magnitude;  // Sobel magnitude of the blurred image
  BinaryMask mask;
};

inline CannyTrace canny_trace(const GrayImage& img, const CannyParams& params) {
  params.validate();
  const auto blurred = gaussian_blur(img, params);
  const auto pair = sobel(blurred);
  CannyTrace out{grad_magnitude(pair), BinaryMask{img.height, img.width, std::vector<std::uint8_t>(img.size(), 0)}};
  const double peak = out.magnitude.max();
  double scale = 0;
  for (double v : blurred.values) scale = std::max(scale, std::abs(v));
  if (!(peak > kFlatRatio * scale)) return out;

  const std::size_t h = img.height, w = img.width;
  Field norm(h, w);
  for (std::size_t i = 0; i < norm.size(); ++i) norm.values[i] = out.magnitude.values[i] / peak;

  auto mag_at = [&](long r, long c) {
    if (r < 0 || c < 0 || r >= static_cast<long>(h) || c >= static_cast<long>(w)) return 0.0;
    return norm.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
  };

  // Non-maximum suppression over four direction bins. A pixel survives if it
  // beats the neighbor behind it and is not beaten by the one ahead of it.
  std::vector<std::uint8_t> weak(h * w, 0), strong(h * w, 0);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const double m = norm.at(r, c);
      if (m <= 0) continue;
      double angle = std::atan2(pair.gv.at(r, c), pair.gu.at(r, c)) * 180.0 / 3.14159265358979323846;
      if (angle < 0) angle += 180.0;
      long dr = 0, dc = 0;
      if (angle < 22.5 || angle >= 157.5) {
        dc = 1;
      } else if (angle < 67.5) {
        dr = 1;
        dc = 1;
      } else if (angle < 112.5) {
        dr = 1;
      } else {
        dr = 1;
        dc = -1;
      }
      const long ri = static_cast<long>(r), ci = static_cast<long>(c);
      const double behind = mag_at(ri - dr, ci - dc);
      const double ahead = mag_at(ri + dr, ci + dc);
      if (!(m > behind + kNmsTie && m >= ahead - kNmsTie)) continue;
      if (m >= params.low) weak[r * w + c] = 1;
      if (m >= params.high) strong[r * w + c] = 1;
    }

  // Hysteresis: flood from strong pixels through 8-connected weak pixels.
  std::vector<std::size_t> stack;
  for (std::size_t i = 0; i < h * w; ++i)
    if (strong[i]) {
      out.mask.values[i] = 1;
      stack.push_back(i);
    }
  while (!stack.empty()) {
    const std::size_t i = stack.back();
    stack.pop_back();
    const long r = static_cast<long>(i / w), c = static_cast<long>(i % w);
    for (long a = -1; a <= 1; ++a)
      for (long b = -1; b <= 1; ++b) {
        const long rr = r + a, cc = c + b;
        if (rr < 0 || cc < 0 || rr >= static_cast<long>(h) || cc >= static_cast<long>(w)) continue;
        const std::size_t j = static_cast<std::size_t>(rr) * w + static_cast<std::size_t>(cc);
        if (weak[j] && !out.mask.values[j]) {
          out.mask.values[j] = 1;
          stack.push_back(j);
        }
      }
  }
  return out;
}

inline GradientField field_from_trace(const CannyTrace& trace) {
  GradientField g(trace.magnitude.height, trace.magnitude.width);
  double peak = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    g.values[i] = trace.mask.values[i] ? trace.magnitude.values[i] : 0.0;
    peak = std::max(peak, g.values[i]);
  }
  if (peak > 0)
    for (auto& v : g.values) v /= peak;
  return g;
}

}  // namespace detail

/// Blur, Sobel, non-maximum suppression, double-threshold hysteresis.
inline BinaryMask canny_mask(const GrayImage& img, const CannyParams& params) {
  return detail::canny_trace(img, params).mask;
}

/// G = mask * |E|, divided by its maximum. An empty mask yields an all-zero field.
template <class T>
GradientField gradient_field(const Tensor<T>& rgb, const CannyParams& params) {
  return detail::field_from_trace(detail::canny_trace(to_grayscale(rgb), params));
}

/// Replicates a field into a [3,h,w] tensor so it can feed an RGB encoder.
template <class T>
Tensor<T> field_to_rgb(const Field& g) {
  Tensor<T> out({3, g.height, g.width});
  const std::size_t hw = g.size();
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < hw; ++i) out[c * hw + i] = static_cast<T>(g.values[i]);
  return out;
}

}  // namespace gfpc
