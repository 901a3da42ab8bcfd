#pragma once

// Depth network: the contrastive encoder followed by an upsampling decoder
// that predicts metric depth at half the input resolution.

#include <cmath>
#include <cstdint>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gfpc/checkpoint.hpp"
#include "gfpc/data.hpp"
#include "gfpc/encoder.hpp"
#include "gfpc/field.hpp"
#include "gfpc/graph.hpp"
#include "gfpc/metrics.hpp"
#include "gfpc/optim.hpp"
#include "gfpc/parallel.hpp"

namespace gfpc {

/// One (2x bilinear upsample -> 3x3 conv -> ReLU) stage per width, then a
/// 3x3 conv to one channel and a softplus. The encoder downsamples by 2^S,
/// so S-1 stages bring the output to half the input size.
struct DecoderConfig {
  std::vector<std::size_t> widths{64, 32, 16};
  double depth_prior = 3.0;  // initial output bias is softplus^-1(depth_prior)

  void validate(const EncoderConfig& enc) const {
    if (widths.size() + 1 != enc.stages())
      throw ConfigError("decoder needs " + std::to_string(enc.stages() - 1) + " stages for a " +
                        std::to_string(enc.stages()) + "-stage encoder, got " + std::to_string(widths.size()));
    for (auto w : widths)
      if (w == 0) throw ConfigError("decoder widths must be positive");
    if (!(depth_prior > 0)) throw ConfigError("decoder depth prior must be > 0");
  }

  std::string canonical() const {
    std::ostringstream os;
    os << "decoder:widths=";
    for (std::size_t i = 0; i < widths.size(); ++i) os << (i ? "," : "") << widths[i];
    return os.str();
  }
};

inline std::uint64_t depth_digest(const EncoderConfig& enc, const DecoderConfig& dec) {
  return fnv1a(enc.canonical() + "|" + dec.canonical());
}

template <class T>
struct DepthNet {
  Encoder<T> encoder;
  DecoderConfig decoder_config;
  ParameterSet<T> decoder;  // "decoder.u<i>.{weight,bias}", "decoder.out.{weight,bias}"
};

inline std::string decoder_name(std::size_t stage, const char* what) {
  return "decoder.u" + std::to_string(stage) + "." + what;
}

template <class T>
ParameterSet<T> build_decoder(const EncoderConfig& enc, const DecoderConfig& dec, std::uint64_t seed) {
  dec.validate(enc);
  std::mt19937_64 rng(seed ^ 0xd1b54a32d192ed03ULL);
  ParameterSet<T> params;
  std::size_t in = enc.widths.back();
  for (std::size_t i = 0; i < dec.widths.size(); ++i) {
    const std::size_t out = dec.widths[i];
    params.emplace(decoder_name(i, "weight"), detail::he_normal<T>({out, in, 3, 3}, in * 9, rng));
    params.emplace(decoder_name(i, "bias"), Tensor<T>({out}));
    in = out;
  }
  params.emplace("decoder.out.weight", detail::he_normal<T>({1, in, 3, 3}, in * 9, rng));
  params.emplace("decoder.out.bias",
                 Tensor<T>({1}, static_cast<T>(std::log(std::expm1(dec.depth_prior)))));
  return params;
}

/// Fresh network; the encoder is He-initialized from `seed`.
template <class T>
DepthNet<T> build_depthnet(const EncoderConfig& enc, const DecoderConfig& dec, std::uint64_t seed) {
  return {build_encoder<T>(enc, seed), dec, build_decoder<T>(enc, dec, seed)};
}

/// rgb [3,h,w] -> positive depth [1,h/2,w/2].
template <class T>
Var predict_depth(const DepthNet<T>& net, Var rgb, Graph<T>& graph) {
  const Shape& s = graph.shape(rgb);
  const std::size_t stride = net.encoder.config.total_stride();
  if (s.size() != 3 || s[1] % stride || s[2] % stride)
    throw DimensionError("depth input " + shape_str(s) + " must have h and w divisible by " + std::to_string(stride));
  Var x = encode_features(net.encoder, rgb, graph);
  for (std::size_t i = 0; i < net.decoder_config.widths.size(); ++i) {
    Var w = graph.param(decoder_name(i, "weight"), net.decoder.at(decoder_name(i, "weight")));
    Var b = graph.param(decoder_name(i, "bias"), net.decoder.at(decoder_name(i, "bias")));
    x = graph.relu(graph.add_bias(graph.conv2d(graph.upsample2x(x), w, 1, 1), b));
  }
  Var w = graph.param("decoder.out.weight", net.decoder.at("decoder.out.weight"));
  Var b = graph.param("decoder.out.bias", net.decoder.at("decoder.out.bias"));
  return graph.softplus(graph.add_bias(graph.conv2d(x, w, 1, 1), b));
}

/// Prediction without gradient recording, as an (h/2) x (w/2) field.
template <class T>
Field predict_depth(const DepthNet<T>& net, const Tensor<T>& rgb) {
  Graph<T> g(GradMode::disabled);
  const Tensor<T>& out = g.value(predict_depth(net, g.input(rgb), g));
  Field f(out.dim(1), out.dim(2));
  for (std::size_t i = 0; i < f.size(); ++i) f.values[i] = static_cast<double>(out[i]);
  return f;
}

/// Masked mean absolute error. Throws DegenerateError on an empty mask.
template <class T>
Var depth_loss(Graph<T>& graph, Var pred, const Tensor<T>& depth, const Tensor<T>& mask) {
  if (graph.value(pred).size() != depth.size())
    throw DimensionError("prediction " + shape_str(graph.shape(pred)) + " vs depth " + shape_str(depth.shape()));
  return graph.masked_l1(pred, depth, mask);
}

/// Encoder weights from a pretraining checkpoint; refuses other configs.
inline Encoder<float> load_pretrained_encoder(const std::string& path, const EncoderConfig& config) {
  const Checkpoint ck = load_checkpoint(path, config_digest(config));
  Encoder<float> enc = build_encoder<float>(config, 0);
  for (auto& [name, t] : enc.params) {
    auto it = ck.params.find(name);
    if (it == ck.params.end()) throw CheckpointError("checkpoint " + path + " lacks " + name);
    require_same_shape(it->second.shape(), t.shape(), name.c_str());
    t = it->second;
  }
  return enc;
}

inline void save_depth_checkpoint(const DepthNet<float>& net, const std::string& path) {
  ParameterSet<float> all = net.encoder.params;
  all.insert(net.decoder.begin(), net.decoder.end());
  save_checkpoint(all, depth_digest(net.encoder.config, net.decoder_config), path);
}

inline DepthNet<float> load_depth_checkpoint(const std::string& path, const EncoderConfig& enc,
                                             const DecoderConfig& dec) {
  const Checkpoint ck = load_checkpoint(path, depth_digest(enc, dec));
  DepthNet<float> net = build_depthnet<float>(enc, dec, 0);
  auto fill = [&](ParameterSet<float>& params) {
    for (auto& [name, t] : params) {
      auto it = ck.params.find(name);
      if (it == ck.params.end()) throw CheckpointError("checkpoint " + path + " lacks " + name);
      require_same_shape(it->second.shape(), t.shape(), name.c_str());
      t = it->second;
    }
  };
  fill(net.encoder.params);
  fill(net.decoder);
  return net;
}

struct FinetuneConfig {
  double lr = 1e-4;
  std::size_t batch_size = 4;
  std::size_t epochs = 10;
  double fraction = 1.0;
  std::uint64_t seed = 0;
  std::string init = "random";  // "random" or a pretraining checkpoint path
  double weight_decay = 0.0;
  unsigned threads = 1;

  void validate() const {
    if (!(fraction > 0 && fraction <= 1)) throw ConfigError("label fraction must lie in (0,1]");
    if (batch_size == 0) throw ConfigError("batch size must be >= 1");
    if (!(lr >= 0)) throw ConfigError("learning rate must be non-negative");
  }
};

struct FinetuneResult {
  DepthNet<float> net;
  std::vector<std::size_t> subset;   // indices into the training samples
  std::vector<double> epoch_losses;  // mean sample loss per epoch
};

/// Encoder for a fine-tuning run, per `config.init`.
inline Encoder<float> initial_encoder(const EncoderConfig& enc, const FinetuneConfig& config) {
  if (config.init == "random") return build_encoder<float>(enc, config.seed);
  return load_pretrained_encoder(config.init, enc);
}

/// Adam on the masked L1 loss over a seeded label subset; encoder and decoder
/// are both trained. When `loss_log` is given, "epoch,loss" rows are streamed.
inline FinetuneResult finetune(const std::vector<DepthSample>& samples, const EncoderConfig& enc,
                               const DecoderConfig& dec, const FinetuneConfig& config,
                               std::ostream* loss_log = nullptr) {
  config.validate();
  dec.validate(enc);
  if (samples.empty()) throw InputError("fine-tuning dataset is empty");
  const std::size_t k = subset_size(samples.size(), config.fraction);
  if (k < 1)
    throw InputError("label fraction " + std::to_string(config.fraction) + " of " + std::to_string(samples.size()) +
                     " samples selects nothing");
  FinetuneResult result{{initial_encoder(enc, config), dec, build_decoder<float>(enc, dec, config.seed)},
                        subset_indices(samples.size(), config.fraction, config.seed),
                        {}};
  for (auto i : result.subset)
    if (samples[i].depth.empty()) throw InputError("fine-tuning sample " + std::to_string(i) + " has no depth");

  auto opt = OptimizerState<float>::adam(config.lr);
  opt.weight_decay = config.weight_decay;
  std::mt19937_64 rng(config.seed + 0x2545f4914f6cdd1dULL);
  if (loss_log) *loss_log << "epoch,loss\n";
  std::vector<std::size_t> order = result.subset;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t b = std::min(config.batch_size, order.size() - start);
      std::vector<double> losses(b);
      std::vector<Gradients<float>> grads(b);
      parallel_for(b, config.threads, [&](std::size_t i) {
        const DepthSample& s = samples[order[start + i]];
        Graph<float> g;
        Var loss = depth_loss(g, predict_depth(result.net, g.input(s.rgb), g), s.depth, s.mask);
        losses[i] = static_cast<double>(g.value(loss)[0]);
        grads[i] = g.backward(loss);
      });
      Gradients<float> mean = std::move(grads[0]);
      for (std::size_t i = 1; i < b; ++i)
        for (auto& [name, t] : grads[i]) {
          auto& acc = mean.at(name);
          for (std::size_t j = 0; j < t.size(); ++j) acc[j] += t[j];
        }
      const float inv = 1.0f / static_cast<float>(b);
      for (auto& [name, t] : mean)
        for (auto& v : t.values()) v *= inv;
      optimizer_step({&result.net.encoder.params, &result.net.decoder}, mean, opt);
      for (double l : losses) epoch_loss += l;
    }
    epoch_loss /= static_cast<double>(order.size());
    result.epoch_losses.push_back(epoch_loss);
    if (loss_log) *loss_log << epoch + 1 << ',' << epoch_loss << '\n';
  }
  return result;
}

inline Field tensor_to_field(const Tensor<float>& t) {
  if (t.rank() != 2) throw DimensionError("expected a 2-D map, got " + shape_str(t.shape()));
  Field f(t.dim(0), t.dim(1));
  for (std::size_t i = 0; i < f.size(); ++i) f.values[i] = static_cast<double>(t[i]);
  return f;
}

/// Per-sample accumulators over a labeled set, in sample order.
inline std::vector<MetricAccumulator> evaluate_samples(const DepthNet<float>& net,
                                                       const std::vector<DepthSample>& samples,
                                                       const EvalProtocol& protocol, unsigned threads = 1) {
  std::vector<MetricAccumulator> acc(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t i) {
    const auto& s = samples[i];
    if (s.depth.empty()) throw InputError("evaluation sample " + std::to_string(i) + " has no depth");
    const Field pred = predict_depth(net, s.rgb);
    const Field gt = tensor_to_field(s.depth);
    const Field valid = tensor_to_field(s.mask);
    acc[i] = accumulate_pair(pred, gt, &valid, protocol);
  });
  return acc;
}

inline MetricReport evaluate_net(const DepthNet<float>& net, const std::vector<DepthSample>& samples,
                                 const EvalProtocol& protocol, unsigned threads = 1) {
  return aggregate(evaluate_samples(net, samples, protocol, threads), protocol.aggregation);
}

}  // namespace gfpc
