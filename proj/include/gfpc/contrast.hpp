#pragma once

// Momentum contrastive pretraining with RGB queries and gradient-field keys.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <vector>

#include "gfpc/checkpoint.hpp"
#include "gfpc/encoder.hpp"
#include "gfpc/gradfield.hpp"
#include "gfpc/graph.hpp"
#include "gfpc/optim.hpp"
#include "gfpc/parallel.hpp"

namespace gfpc {

/// Fixed-capacity FIFO of unit key vectors; the oldest entry is evicted first.
template <class T>
class KeyQueue {
 public:
  KeyQueue(std::size_t capacity, std::size_t dim) : capacity_(capacity), dim_(dim) {
    if (capacity == 0 || dim == 0) throw ConfigError("key queue capacity and dim must be positive");
  }

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return keys_.size(); }
  bool empty() const noexcept { return keys_.empty(); }
  const std::vector<T>& operator[](std::size_t i) const { return keys_[i]; }

  void push(std::vector<T> key) {
    if (key.size() != dim_)
      throw DimensionError("key of size " + std::to_string(key.size()) + " pushed to queue of dim " +
                           std::to_string(dim_));
    double norm2 = 0;
    for (T v : key) norm2 += static_cast<double>(v) * static_cast<double>(v);
    if (std::abs(std::sqrt(norm2) - 1.0) > 1e-5) throw ContractError("queue keys must have unit norm");
    keys_.push_back(std::move(key));
    if (keys_.size() > capacity_) keys_.pop_front();
  }

  /// Stored keys as a [size, dim] matrix, oldest first. Empty queue -> empty tensor.
  Tensor<T> matrix() const {
    if (keys_.empty()) return {};
    std::vector<T> data;
    data.reserve(keys_.size() * dim_);
    for (const auto& k : keys_) data.insert(data.end(), k.begin(), k.end());
    return Tensor<T>({keys_.size(), dim_}, std::move(data));
  }

 private:
  std::size_t capacity_;
  std::size_t dim_;
  std::deque<std::vector<T>> keys_;
};

struct ContrastConfig {
  double tau = 0.07;
  double momentum = 0.999;  // key encoder EMA coefficient
  std::size_t batch_size = 64;
  std::size_t queue_size = 16384;
  double lr = 0.015;
  double sgd_momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t epochs = 1;
  std::size_t steps = 0;  // when > 0, train exactly this many steps regardless of epochs
  std::uint64_t seed = 0;
  bool flip = false;  // random horizontal flip before the gradient field is computed
  unsigned threads = 1;

  void validate() const {
    if (!(tau > 0)) throw ConfigError("tau must be > 0");
    if (!(momentum >= 0 && momentum <= 1)) throw ConfigError("momentum must lie in [0,1]");
    if (batch_size == 0) throw ConfigError("batch size must be >= 1");
    if (queue_size < batch_size) throw ConfigError("queue size must be >= batch size");
    if (!(lr >= 0)) throw ConfigError("learning rate must be non-negative");
  }
};

template <class T>
struct EncoderSide {
  Encoder<T> encoder;
  Head<T> head;
};

/// Query side is trained by gradients, key side only by momentum_update.
template <class T>
struct EncoderPair {
  EncoderSide<T> query;
  EncoderSide<T> key;
};

template <class T>
EncoderPair<T> init_pair(const EncoderConfig& config, std::uint64_t seed) {
  EncoderSide<T> q{build_encoder<T>(config, seed), build_head<T>(config, seed)};
  EncoderSide<T> k = q;
  return {std::move(q), std::move(k)};
}

namespace detail {

template <class T>
void ema(ParameterSet<T>& key, const ParameterSet<T>& query, T m) {
  if (key.size() != query.size()) throw PairingError("query and key parameter sets differ in size");
  auto qi = query.begin();
  for (auto& [name, kt] : key) {
    if (qi->first != name) throw PairingError("parameter " + name + " has no query counterpart");
    require_same_shape(kt.shape(), qi->second.shape(), name.c_str());
    const Tensor<T>& qt = qi->second;
    for (std::size_t i = 0; i < kt.size(); ++i) kt[i] = m * kt[i] + (T(1) - m) * qt[i];
    ++qi;
  }
}

}  // namespace detail

/// theta_key <- m * theta_key + (1 - m) * theta_query for every parameter.
template <class T>
void momentum_update(EncoderPair<T>& pair, double m) {
  if (!(m >= 0 && m <= 1)) throw ConfigError("momentum must lie in [0,1]");
  detail::ema(pair.key.encoder.params, pair.query.encoder.params, static_cast<T>(m));
  detail::ema(pair.key.head.params, pair.query.head.params, static_cast<T>(m));
}

namespace detail {

template <class T>
Var info_nce_logits(Graph<T>& graph, Var h_q, Var h_k_pos, std::optional<Var> negatives, double tau) {
  if (!(tau > 0)) throw ConfigError("tau must be > 0");
  Var logits = graph.dot(h_q, h_k_pos);
  if (negatives) logits = graph.concat(logits, graph.linear(h_q, *negatives));
  return graph.softmax_cross_entropy(graph.scale(logits, static_cast<T>(1.0 / tau)), 0);
}

}  // namespace detail

/// -log softmax over [h_q . h_k+, h_q . queue_i] / tau at index 0.
/// Keys enter as constants, so gradient flows only into h_q. `negatives` is the
/// queue matrix ([n, dim], may be empty); it is referenced, not copied, and
/// must outlive the graph.
template <class T>
Var info_nce(Graph<T>& graph, Var h_q, const Tensor<T>& h_k_pos, const Tensor<T>& negatives, double tau) {
  std::optional<Var> neg;
  if (!negatives.empty()) neg = graph.constant_ref(negatives);
  return detail::info_nce_logits(graph, h_q, graph.input(h_k_pos), neg, tau);
}

template <class T>
Var info_nce(Graph<T>& graph, Var h_q, const Tensor<T>& h_k_pos, const KeyQueue<T>& queue, double tau) {
  std::optional<Var> neg;
  if (!queue.empty()) neg = graph.input(queue.matrix());
  return detail::info_nce_logits(graph, h_q, graph.input(h_k_pos), neg, tau);
}

/// Unit key vector for a gradient field, computed without recording gradients.
template <class T>
Tensor<T> encode_key(const EncoderSide<T>& key, const Tensor<T>& field_rgb) {
  Graph<T> g(GradMode::disabled);
  Var h = project(key.head, encode(key.encoder, g.input(field_rgb), g), g);
  return g.value(h);
}

/// Unit query vector for an RGB image, without gradients.
template <class T>
Tensor<T> encode_query(const EncoderSide<T>& query, const Tensor<T>& rgb) {
  Graph<T> g(GradMode::disabled);
  Var h = project(query.head, encode(query.encoder, g.input(rgb), g), g);
  return g.value(h);
}

template <class T>
struct StepResult {
  double loss = 0;
  Gradients<T> grads;      // mean query-side gradients applied in this step
  std::vector<Tensor<T>> keys;  // h_k for each batch element, in batch order
};

/// One pretraining step on images whose gradient fields are already known.
/// `fields` are [3,h,w] replicated gradient fields, index-paired with `images`.
template <class T>
StepResult<T> pretrain_step_fields(EncoderPair<T>& pair, KeyQueue<T>& queue, const std::vector<Tensor<T>>& images,
                                   const std::vector<Tensor<T>>& fields, const ContrastConfig& config,
                                   OptimizerState<T>& opt) {
  config.validate();
  if (images.empty()) throw InputError("pretrain_step needs a non-empty batch");
  if (images.size() != fields.size()) throw DimensionError("images and gradient fields differ in count");
  const std::size_t b = images.size();

  StepResult<T> out;
  out.keys.resize(b);
  parallel_for(b, config.threads, [&](std::size_t i) { out.keys[i] = encode_key(pair.key, fields[i]); });

  const Tensor<T> negatives = queue.matrix();
  std::vector<double> losses(b);
  std::vector<Gradients<T>> grads(b);
  parallel_for(b, config.threads, [&](std::size_t i) {
    Graph<T> g;
    Var h_q = project(pair.query.head, encode(pair.query.encoder, g.input(images[i]), g), g);
    Var loss = info_nce(g, h_q, out.keys[i], negatives, config.tau);
    losses[i] = static_cast<double>(g.value(loss)[0]);
    grads[i] = g.backward(loss);
  });

  out.grads = std::move(grads[0]);
  for (std::size_t i = 1; i < b; ++i)
    for (auto& [name, t] : grads[i]) {
      auto& acc = out.grads.at(name);
      for (std::size_t j = 0; j < t.size(); ++j) acc[j] += t[j];
    }
  const T inv = T(1) / static_cast<T>(b);
  for (auto& [name, t] : out.grads)
    for (auto& v : t.values()) v *= inv;
  for (double l : losses) out.loss += l;
  out.loss /= static_cast<double>(b);

  optimizer_step({&pair.query.encoder.params, &pair.query.head.params}, out.grads, opt);
  momentum_update(pair, config.momentum);
  for (const auto& k : out.keys) queue.push(k.storage());
  return out;
}

/// Computes each image's gradient field, then runs one pretraining step.
template <class T>
double pretrain_step(EncoderPair<T>& pair, KeyQueue<T>& queue, const std::vector<Tensor<T>>& images,
                     const CannyParams& canny, const ContrastConfig& config, OptimizerState<T>& opt) {
  std::vector<Tensor<T>> fields(images.size());
  parallel_for(images.size(), config.threads,
               [&](std::size_t i) { fields[i] = field_to_rgb<T>(gradient_field(images[i], canny)); });
  return pretrain_step_fields(pair, queue, images, fields, config, opt).loss;
}

template <class T>
Tensor<T> flip_horizontal(const Tensor<T>& img) {
  if (img.rank() != 3) throw DimensionError("flip expects [c,h,w], got " + shape_str(img.shape()));
  Tensor<T> out(img.shape());
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t x = 0; x < w; ++x) out.at(k, r, x) = img.at(k, r, w - 1 - x);
  return out;
}

struct PretrainResult {
  EncoderPair<float> pair;
  std::vector<double> losses;  // one per step
  std::size_t skipped_images = 0;
};

/// Query encoder and head as one archive; the digest is the encoder config's.
inline void save_pretrain_checkpoint(const EncoderSide<float>& side, const std::string& path) {
  ParameterSet<float> all = side.encoder.params;
  all.insert(side.head.params.begin(), side.head.params.end());
  save_checkpoint(all, config_digest(side.encoder.config), path);
}

/// Full pretraining loop over shuffled epochs. Images whose gradient field is
/// empty (no edges) cannot produce a key direction and are skipped.
/// When `loss_log` is given, "step,loss" rows are streamed to it.
inline PretrainResult pretrain(const std::vector<Tensor<float>>& images, const EncoderConfig& enc_config,
                               const ContrastConfig& config, const CannyParams& canny,
                               std::ostream* loss_log = nullptr) {
  config.validate();
  canny.validate();
  if (images.empty()) throw InputError("pretraining dataset is empty");

  struct Item {
    const Tensor<float>* rgb;
    Tensor<float> flipped;
    Tensor<float> field, field_flipped;
  };
  std::vector<Item> items(images.size());
  parallel_for(images.size(), config.threads, [&](std::size_t i) {
    items[i].rgb = &images[i];
    items[i].field = field_to_rgb<float>(gradient_field(images[i], canny));
    if (config.flip) {
      items[i].flipped = flip_horizontal(images[i]);
      items[i].field_flipped = field_to_rgb<float>(gradient_field(items[i].flipped, canny));
    }
  });
  PretrainResult result{init_pair<float>(enc_config, config.seed), {}, 0};
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& f = items[i].field;
    if (std::any_of(f.values().begin(), f.values().end(), [](float v) { return v > 0; }))
      usable.push_back(i);
    else
      ++result.skipped_images;
  }
  if (usable.empty()) throw InputError("no pretraining image has a non-empty gradient field");

  KeyQueue<float> queue(config.queue_size, enc_config.head_dim);
  auto opt = OptimizerState<float>::sgd(config.lr, config.sgd_momentum, config.weight_decay);
  std::mt19937_64 rng(config.seed + 0x51ed270b27ULL);
  if (loss_log) *loss_log << "step,loss\n";

  const std::size_t total_steps =
      config.steps > 0 ? config.steps
                       : config.epochs * ((usable.size() + config.batch_size - 1) / config.batch_size);
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  for (std::size_t step = 0; step < total_steps; ++step) {
    std::vector<Tensor<float>> batch_rgb, batch_fields;
    while (batch_rgb.size() < config.batch_size) {
      if (cursor == order.size()) {
        if (!batch_rgb.empty() && config.steps == 0) break;  // epoch boundary closes a partial batch
        order = usable;
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const Item& it = items[order[cursor++]];
      const bool flip = config.flip && std::uniform_int_distribution<int>(0, 1)(rng) == 1;
      batch_rgb.push_back(flip ? it.flipped : *it.rgb);
      batch_fields.push_back(flip ? it.field_flipped : it.field);
    }
    const auto r = pretrain_step_fields(result.pair, queue, batch_rgb, batch_fields, config, opt);
    result.losses.push_back(r.loss);
    if (loss_log) *loss_log << step + 1 << ',' << r.loss << '\n';
  }
  return result;
}

}  // namespace gfpc
