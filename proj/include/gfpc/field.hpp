#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace gfpc {

/// Single-channel h x w scalar field, row-major.
struct Field {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  Field() = default;
  Field(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), values(h * w, fill) {}

  double& at(std::size_t r, std::size_t c) { return values[r * width + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * width + c]; }
  std::size_t size() const { return values.size(); }
  double max() const { return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end()); }
  bool operator==(const Field&) const = default;
};

struct BinaryMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> values;

  std::uint8_t at(std::size_t r, std::size_t c) const { return values[r * width + c]; }
  std::size_t count() const { return static_cast<std::size_t>(std::count(values.begin(), values.end(), 1)); }
  bool operator==(const BinaryMask&) const = default;
};

}  // namespace gfpc
