#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gfpc/graph.hpp"
#include "gfpc/tensor.hpp"

namespace gfpc {

/// Shape of the ConvNet encoder and its projection head.
///
/// Every stage opens with a stride-2 3x3 conv, followed by
/// `blocks_per_stage - 1` stride-1 3x3 convs, each with bias and ReLU.
/// Global average pooling turns the last stage into z, so `zdim` must equal
/// the last stage width.
struct EncoderConfig {
  std::vector<std::size_t> widths{16, 32, 64, 128};
  std::size_t blocks_per_stage = 1;
  std::size_t in_channels = 3;
  std::size_t zdim = 128;
  std::size_t head_hidden = 128;
  std::size_t head_dim = 32;

  void validate() const {
    if (widths.empty()) throw ConfigError("encoder needs at least one stage");
    for (auto w : widths)
      if (w == 0) throw ConfigError("encoder stage widths must be positive");
    if (blocks_per_stage == 0 || in_channels == 0 || zdim == 0 || head_hidden == 0 || head_dim == 0)
      throw ConfigError("encoder dimensions must be positive");
    if (zdim != widths.back())
      throw ConfigError("encoder zdim (" + std::to_string(zdim) + ") must equal the last stage width (" +
                        std::to_string(widths.back()) + ")");
    if (head_dim >= zdim) throw ConfigError("head dim must be smaller than zdim");
  }

  std::size_t stages() const { return widths.size(); }
  std::size_t total_stride() const { return std::size_t{1} << widths.size(); }

  /// Canonical text form; the checkpoint digest is computed from it.
  std::string canonical() const {
    std::ostringstream os;
    os << "encoder:widths=";
    for (std::size_t i = 0; i < widths.size(); ++i) os << (i ? "," : "") << widths[i];
    os << ";blocks=" << blocks_per_stage << ";in=" << in_channels << ";z=" << zdim << ";head=" << head_hidden << ","
       << head_dim;
    return os.str();
  }
};

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t config_digest(const EncoderConfig& config) { return fnv1a(config.canonical()); }

template <class T>
struct Encoder {
  EncoderConfig config;
  ParameterSet<T> params;  // "encoder.s<stage>.b<block>.{weight,bias}"
};

/// Two linear layers with a ReLU between them, z -> h.
template <class T>
struct Head {
  std::size_t in_dim = 0, hidden = 0, out_dim = 0;
  ParameterSet<T> params;  // "head.fc{1,2}.{weight,bias}"
};

inline std::string conv_name(std::size_t stage, std::size_t block, const char* what) {
  return "encoder.s" + std::to_string(stage) + ".b" + std::to_string(block) + "." + what;
}

namespace detail {

template <class T>
Tensor<T> he_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

}  // namespace detail

/// He-normal weights, zero biases. The encoder and head draw from separate
/// streams derived from `seed`.
template <class T>
Encoder<T> build_encoder(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  Encoder<T> enc{config, {}};
  std::mt19937_64 rng(seed);
  std::size_t in = config.in_channels;
  for (std::size_t s = 0; s < config.stages(); ++s) {
    const std::size_t out = config.widths[s];
    for (std::size_t b = 0; b < config.blocks_per_stage; ++b) {
      enc.params.emplace(conv_name(s, b, "weight"), detail::he_normal<T>({out, in, 3, 3}, in * 9, rng));
      enc.params.emplace(conv_name(s, b, "bias"), Tensor<T>({out}));
      in = out;
    }
  }
  return enc;
}

template <class T>
Head<T> build_head(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  Head<T> head{config.zdim, config.head_hidden, config.head_dim, {}};
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  head.params.emplace("head.fc1.weight", detail::he_normal<T>({config.head_hidden, config.zdim}, config.zdim, rng));
  head.params.emplace("head.fc1.bias", Tensor<T>({config.head_hidden}));
  head.params.emplace("head.fc2.weight",
                      detail::he_normal<T>({config.head_dim, config.head_hidden}, config.head_hidden, rng));
  head.params.emplace("head.fc2.bias", Tensor<T>({config.head_dim}));
  return head;
}

/// Runs the conv stages and returns the last feature map [C, h/2^S, w/2^S].
template <class T>
Var encode_features(const Encoder<T>& enc, Var image, Graph<T>& graph) {
  const Shape& s = graph.shape(image);
  if (s.size() != 3 || s[0] != enc.config.in_channels)
    throw DimensionError("encoder expects [" + std::to_string(enc.config.in_channels) + ",h,w], got " + shape_str(s));
  const std::size_t min_size = enc.config.total_stride();
  if (s[1] < min_size || s[2] < min_size)
    throw DimensionError("image " + shape_str(s) + " too small for " + std::to_string(enc.config.stages()) +
                         " stride-2 stages (need >= " + std::to_string(min_size) + ")");
  Var x = image;
  for (std::size_t st = 0; st < enc.config.stages(); ++st)
    for (std::size_t b = 0; b < enc.config.blocks_per_stage; ++b) {
      Var w = graph.param(conv_name(st, b, "weight"), enc.params.at(conv_name(st, b, "weight")));
      Var bias = graph.param(conv_name(st, b, "bias"), enc.params.at(conv_name(st, b, "bias")));
      x = graph.relu(graph.add_bias(graph.conv2d(x, w, b == 0 ? 2 : 1, 1), bias));
    }
  return x;
}

/// image [3,h,w] -> z [zdim].
template <class T>
Var encode(const Encoder<T>& enc, Var image, Graph<T>& graph) {
  return graph.global_avg_pool(encode_features(enc, image, graph));
}

/// z -> unit-norm h. Throws DegenerateError when the pre-normalized output is zero.
template <class T>
Var project(const Head<T>& head, Var z, Graph<T>& graph) {
  if (graph.shape(z) != Shape{head.in_dim})
    throw DimensionError("head expects z of size " + std::to_string(head.in_dim) + ", got " +
                         shape_str(graph.shape(z)));
  auto p = [&](const char* name) { return graph.param(name, head.params.at(name)); };
  Var hidden = graph.relu(graph.linear(z, p("head.fc1.weight"), p("head.fc1.bias")));
  return graph.l2_normalize(graph.linear(hidden, p("head.fc2.weight"), p("head.fc2.bias")));
}

}  // namespace gfpc
