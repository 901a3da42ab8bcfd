#pragma once

#include <cmath>
#include <initializer_list>
#include <string>

#include "gfpc/tensor.hpp"

namespace gfpc {

enum class OptimizerKind { sgd, adam };

/// Hyperparameters plus per-parameter buffers. For SGD `first` holds the
/// velocity; for Adam `first`/`second` hold the moment estimates.
template <class T>
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::sgd;
  double lr = 0.015;
  double momentum = 0.9;  // SGD only
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  long step = 0;
  ParameterSet<T> first;
  ParameterSet<T> second;

  static OptimizerState sgd(double lr = 0.015, double momentum = 0.9, double weight_decay = 1e-4) {
    OptimizerState s;
    s.kind = OptimizerKind::sgd;
    s.lr = lr;
    s.momentum = momentum;
    s.weight_decay = weight_decay;
    return s;
  }

  static OptimizerState adam(double lr = 1e-4, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
                             double weight_decay = 0.0) {
    OptimizerState s;
    s.kind = OptimizerKind::adam;
    s.lr = lr;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.eps = eps;
    s.weight_decay = weight_decay;
    return s;
  }
};

namespace detail {

template <class T>
void check_optimizer(const OptimizerState<T>& state, OptimizerKind kind) {
  if (state.kind != kind) throw ConfigError("optimizer state kind does not match the requested step");
  if (!(state.lr >= 0.0)) throw ConfigError("learning rate must be non-negative");
}

template <class T>
Tensor<T>& buffer(ParameterSet<T>& buffers, const std::string& name, const Shape& shape) {
  auto it = buffers.find(name);
  if (it == buffers.end()) it = buffers.emplace(name, Tensor<T>(shape)).first;
  require_same_shape(it->second.shape(), shape, ("optimizer buffer " + name).c_str());
  return it->second;
}

template <class T>
void sgd_update(ParameterSet<T>& params, const Gradients<T>& grads, OptimizerState<T>& state) {
  const T lr = static_cast<T>(state.lr), mu = static_cast<T>(state.momentum), wd = static_cast<T>(state.weight_decay);
  for (auto& [name, theta] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    require_same_shape(git->second.shape(), theta.shape(), ("gradient for " + name).c_str());
    auto& v = buffer(state.first, name, theta.shape());
    const T* g = git->second.data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      v[i] = mu * v[i] + (g[i] + wd * theta[i]);
      theta[i] -= lr * v[i];
    }
  }
}

// Expects state.step to already count the current step.
template <class T>
void adam_update(ParameterSet<T>& params, const Gradients<T>& grads, OptimizerState<T>& state) {
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2), wd = static_cast<T>(state.weight_decay);
  for (auto& [name, theta] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    require_same_shape(git->second.shape(), theta.shape(), ("gradient for " + name).c_str());
    auto& m = buffer(state.first, name, theta.shape());
    auto& v = buffer(state.second, name, theta.shape());
    const T* g = git->second.data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const T gi = g[i] + wd * theta[i];
      m[i] = b1 * m[i] + (T(1) - b1) * gi;
      v[i] = b2 * v[i] + (T(1) - b2) * gi * gi;
      const double mhat = static_cast<double>(m[i]) / c1;
      const double vhat = static_cast<double>(v[i]) / c2;
      theta[i] -= static_cast<T>(state.lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

}  // namespace detail

/// v <- mu*v + (g + lambda*theta); theta <- theta - lr*v.
/// Parameters without an entry in `grads` are left untouched.
template <class T>
void sgd_step(ParameterSet<T>& params, const Gradients<T>& grads, OptimizerState<T>& state) {
  detail::check_optimizer(state, OptimizerKind::sgd);
  detail::sgd_update(params, grads, state);
  ++state.step;
}

/// Adam with bias-corrected moments; optional coupled L2 weight decay.
template <class T>
void adam_step(ParameterSet<T>& params, const Gradients<T>& grads, OptimizerState<T>& state) {
  detail::check_optimizer(state, OptimizerKind::adam);
  ++state.step;
  detail::adam_update(params, grads, state);
}

/// One optimizer step over several parameter sets sharing a state (names
/// must be unique across sets).
template <class T>
void optimizer_step(std::initializer_list<ParameterSet<T>*> sets, const Gradients<T>& grads,
                    OptimizerState<T>& state) {
  detail::check_optimizer(state, state.kind);
  ++state.step;
  for (auto* params : sets) {
    if (state.kind == OptimizerKind::sgd)
      detail::sgd_update(*params, grads, state);
    else
      detail::adam_update(*params, grads, state);
  }
}

}  // namespace gfpc
