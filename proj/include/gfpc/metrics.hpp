#pragma once

// Depth evaluation: delta accuracies, rel, rms and log10 error.

#include <cmath>
#include <optional>
#include <vector>

#include "gfpc/errors.hpp"
#include "gfpc/field.hpp"

namespace gfpc {

struct MetricReport {
  double delta1 = 0, delta2 = 0, delta3 = 0;
  double rel = 0, rms = 0, log10 = 0;
  std::size_t pixels = 0;
};

/// Half-open row/column window [row_begin, row_end) x [col_begin, col_end).
struct CropRect {
  std::size_t row_begin = 0, row_end = 0, col_begin = 0, col_end = 0;

  bool operator==(const CropRect&) const = default;
};

/// Crop used by the Eigen et al. NYU evaluation, in 640x480 pixel units.
inline constexpr CropRect kEigenCrop640x480{45, 471, 41, 601};

/// Scales a rectangle given for a `ref_h x ref_w` map onto an `h x w` map.
/// Begins round down and ends round up so the scaled window never shrinks.
inline CropRect scale_crop(const CropRect& rect, std::size_t ref_h, std::size_t ref_w, std::size_t h, std::size_t w) {
  auto lo = [](std::size_t v, std::size_t from, std::size_t to) { return v * to / from; };
  auto hi = [](std::size_t v, std::size_t from, std::size_t to) { return (v * to + from - 1) / from; };
  return {lo(rect.row_begin, ref_h, h), hi(rect.row_end, ref_h, h), lo(rect.col_begin, ref_w, w),
          hi(rect.col_end, ref_w, w)};
}

enum class Aggregation { pixel, image };

struct EvalProtocol {
  enum class CropMode { none, explicit_rect, eigen };
  CropMode crop_mode = CropMode::none;
  CropRect crop{};
  std::optional<double> max_depth;
  double min_depth = 1e-3;
  Aggregation aggregation = Aggregation::pixel;

  void validate() const {
    if (!(min_depth > 0)) throw ConfigError("min depth must be > 0");
    if (max_depth && !(*max_depth > min_depth)) throw ConfigError("max depth cap must exceed min depth");
    if (crop_mode == CropMode::explicit_rect && (crop.row_begin >= crop.row_end || crop.col_begin >= crop.col_end))
      throw ConfigError("crop rectangle is empty");
  }

  /// The crop to apply to an h x w map, if any.
  std::optional<CropRect> crop_for(std::size_t h, std::size_t w) const {
    switch (crop_mode) {
      case CropMode::none:
        return std::nullopt;
      case CropMode::explicit_rect:
        return crop;
      case CropMode::eigen:
        return scale_crop(kEigenCrop640x480, 480, 640, h, w);
    }
    return std::nullopt;
  }
};

inline Field center_crop(const Field& map, const CropRect& rect) {
  if (rect.row_begin >= rect.row_end || rect.col_begin >= rect.col_end || rect.row_end > map.height ||
      rect.col_end > map.width)
    throw BoundsError("crop rows [" + std::to_string(rect.row_begin) + "," + std::to_string(rect.row_end) +
                      ") cols [" + std::to_string(rect.col_begin) + "," + std::to_string(rect.col_end) +
                      ") outside a " + std::to_string(map.height) + "x" + std::to_string(map.width) + " map");
  Field out(rect.row_end - rect.row_begin, rect.col_end - rect.col_begin);
  for (std::size_t r = 0; r < out.height; ++r)
    for (std::size_t c = 0; c < out.width; ++c) out.at(r, c) = map.at(rect.row_begin + r, rect.col_begin + c);
  return out;
}

/// Running sums over evaluated pixels. Pooling two accumulators is the same
/// as accumulating the concatenated pixels in order.
struct MetricAccumulator {
  std::size_t n = 0, d1 = 0, d2 = 0, d3 = 0;
  double rel = 0, sq = 0, log10 = 0;

  void add(double pred, double gt) {
    const double ratio = std::max(pred / gt, gt / pred);
    ++n;
    d1 += ratio < 1.25 ? 1 : 0;
    d2 += ratio < 1.25 * 1.25 ? 1 : 0;
    d3 += ratio < 1.25 * 1.25 * 1.25 ? 1 : 0;
    rel += std::abs(gt - pred) / gt;
    sq += (gt - pred) * (gt - pred);
    log10 += std::abs(std::log10(gt) - std::log10(pred));
  }

  void merge(const MetricAccumulator& o) {
    n += o.n;
    d1 += o.d1;
    d2 += o.d2;
    d3 += o.d3;
    rel += o.rel;
    sq += o.sq;
    log10 += o.log10;
  }

  MetricReport report() const {
    if (n == 0) throw DegenerateError("no pixels survived the evaluation protocol");
    const double dn = static_cast<double>(n);
    return {static_cast<double>(d1) / dn, static_cast<double>(d2) / dn, static_cast<double>(d3) / dn, rel / dn,
            std::sqrt(sq / dn), log10 / dn, n};
  }
};

/// Accumulates the pixels of one prediction/ground-truth pair that survive
/// the protocol: inside the crop, valid, gt within [min_depth, cap], pred > 0.
inline MetricAccumulator accumulate_pair(const Field& pred, const Field& gt, const Field* valid,
                                         const EvalProtocol& protocol) {
  protocol.validate();
  if (pred.height != gt.height || pred.width != gt.width || (valid && (valid->height != gt.height || valid->width != gt.width)))
    throw DimensionError("prediction, ground truth and mask must share a shape");
  CropRect rect{0, gt.height, 0, gt.width};
  if (auto c = protocol.crop_for(gt.height, gt.width)) {
    rect = *c;
    if (rect.row_end > gt.height || rect.col_end > gt.width || rect.row_begin >= rect.row_end ||
        rect.col_begin >= rect.col_end)
      throw BoundsError("crop does not fit a " + std::to_string(gt.height) + "x" + std::to_string(gt.width) + " map");
  }
  MetricAccumulator acc;
  for (std::size_t r = rect.row_begin; r < rect.row_end; ++r)
    for (std::size_t c = rect.col_begin; c < rect.col_end; ++c) {
      if (valid && !(valid->at(r, c) > 0)) continue;
      const double y = gt.at(r, c), p = pred.at(r, c);
      if (!(y >= protocol.min_depth)) continue;
      if (protocol.max_depth && y > *protocol.max_depth) continue;
      if (!(p > 0)) continue;
      acc.add(p, y);
    }
  return acc;
}

inline MetricReport evaluate_pair(const Field& pred, const Field& gt, const EvalProtocol& protocol,
                                  const Field* valid = nullptr) {
  return accumulate_pair(pred, gt, valid, protocol).report();
}

/// Set-level report. Pixel aggregation pools all evaluated pixels; image
/// aggregation averages per-image reports (pixels = total pixels).
inline MetricReport aggregate(const std::vector<MetricAccumulator>& samples, Aggregation mode = Aggregation::pixel) {
  if (samples.empty()) throw InputError("cannot aggregate an empty evaluation set");
  if (mode == Aggregation::pixel) {
    MetricAccumulator all;
    for (const auto& s : samples) all.merge(s);
    return all.report();
  }
  MetricReport mean;
  for (const auto& s : samples) {
    const auto r = s.report();
    mean.delta1 += r.delta1;
    mean.delta2 += r.delta2;
    mean.delta3 += r.delta3;
    mean.rel += r.rel;
    mean.rms += r.rms;
    mean.log10 += r.log10;
    mean.pixels += r.pixels;
  }
  const double k = static_cast<double>(samples.size());
  mean.delta1 /= k;
  mean.delta2 /= k;
  mean.delta3 /= k;
  mean.rel /= k;
  mean.rms /= k;
  mean.log10 /= k;
  return mean;
}

}  // namespace gfpc
