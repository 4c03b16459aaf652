// Copyright 2026 The speechface authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0

#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "speechface/param_store.hpp"

namespace speechface {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Per-parameter first/second moment buffers plus the shared step counter.
// Built against a specific ParamStore; stepping a store with different
// parameter names or shapes is an error.
class AdamState {
 public:
  AdamState() = default;
  AdamState(const ParamStore& params, AdamConfig cfg) : cfg_(cfg) {
    for (const auto& [name, t] : params.entries()) {
      moments_[name] = Moments{std::vector<double>(t.numel(), 0.0),
                               std::vector<double>(t.numel(), 0.0)};
    }
  }

  const AdamConfig& config() const { return cfg_; }
  long step_count() const { return t_; }

  friend void adam_step(ParamStore& params, AdamState& state);

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamConfig cfg_;
  std::unordered_map<std::string, Moments> moments_;
  long t_ = 0;
};

// Standard Adam update with bias correction, applied in place. Gradients
// are left untouched; callers zero them between steps.
inline void adam_step(ParamStore& params, AdamState& state) {
  state.t_ += 1;
  const AdamConfig& c = state.cfg_;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t_));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t_));
  for (auto& [name, t] : params.entries()) {
    if (!t.grad)
      throw Error("adam_step: uninitialized gradient for parameter " + name);
    auto it = state.moments_.find(name);
    if (it == state.moments_.end())
      throw Error("adam_step: state has no moments for parameter " + name);
    auto& [m, v] = it->second;
    if (m.size() != t.numel())
      throw ShapeError("adam_step: moment size mismatch for " + name);
    double* theta = t.data->data();
    const double* g = t.grad->data();
    for (std::size_t i = 0; i < m.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      theta[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

// Scales all gradients so their global L2 norm is at most `max_norm`.
// Returns the pre-clip norm. max_norm <= 0 disables clipping.
inline double clip_grad_norm(ParamStore& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, t] : params.entries()) {
    if (!t.grad) throw Error("clip_grad_norm: uninitialized gradient for " + name);
    for (double g : *t.grad) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& [name, t] : params.entries())
      for (double& g : *t.grad) g *= s;
  }
  return norm;
}

}  // namespace speechface
