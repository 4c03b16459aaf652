// Copyright 2026 The speechface authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "speechface/errors.hpp"

namespace speechface {

// Dense N-d double tensor with an optional gradient buffer. Copies are
// shallow: they share the value and gradient storage, which is what lets a
// recorded tape op and the caller observe the same gradients.
//
// Values are validated (finite) when a tensor is built from user data;
// op results skip the check. The only intentionally non-finite values in
// the library are -inf attention biases, which live in AttnBias (ops.hpp),
// never in a user-constructed Tensor.
class Tensor {
 public:
  std::vector<std::size_t> shape;
  std::shared_ptr<std::vector<double>> data;
  // Lazily allocated; mutable so ops taking const Tensor& can attach a
  // grad buffer before capturing the tensor on the tape.
  mutable std::shared_ptr<std::vector<double>> grad;
  bool requires_grad = false;

  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
    return alloc(std::move(shape), requires_grad);
  }

  // Validating constructor: rejects NaN/Inf and size/shape disagreement.
  static Tensor from_values(std::vector<std::size_t> shape,
                            std::vector<double> values,
                            bool requires_grad = false) {
    if (shape.empty()) throw ShapeError("Tensor: empty shape");
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    if (n != values.size())
      throw ShapeError("Tensor: shape " + shape_str(shape) + " wants " +
                       std::to_string(n) + " values, got " +
                       std::to_string(values.size()));
    for (double v : values)
      if (!std::isfinite(v)) throw NumericError("Tensor: non-finite value rejected");
    Tensor t;
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<double>>(std::move(values));
    t.requires_grad = requires_grad;
    // Grad buffers for leaf tensors stay unallocated until a tape op or
    // zero_grads() touches them, so "never backpropagated" is observable.
    return t;
  }

  // 1 x D row, validating.
  static Tensor row(std::vector<double> values, bool requires_grad = false) {
    const std::size_t n = values.size();
    return from_values({1, n}, std::move(values), requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from_values({1}, {v}, requires_grad);
  }

  // Unchecked factory for op outputs; zero-filled.
  static Tensor alloc(std::vector<std::size_t> shape, bool requires_grad) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    Tensor t;
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<double>>(n, 0.0);
    t.requires_grad = requires_grad;
    if (requires_grad) t.ensure_grad();
    return t;
  }

  std::size_t numel() const { return data ? data->size() : 0; }
  std::size_t rank() const { return shape.size(); }

  std::size_t rows() const {
    if (rank() != 2) throw ShapeError("Tensor: rows() on shape " + shape_str(shape));
    return shape[0];
  }
  std::size_t cols() const {
    if (rank() != 2) throw ShapeError("Tensor: cols() on shape " + shape_str(shape));
    return shape[1];
  }

  double& at(std::size_t i, std::size_t j) { return (*data)[i * shape[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return (*data)[i * shape[1] + j]; }

  double value() const {
    if (numel() != 1) throw ShapeError("Tensor: value() on shape " + shape_str(shape));
    return (*data)[0];
  }

  void ensure_grad() const {
    if (!grad) grad = std::make_shared<std::vector<double>>(data->size(), 0.0);
  }

  void zero_grad() const {
    if (grad) std::fill(grad->begin(), grad->end(), 0.0);
  }

  bool all_finite() const {
    for (double v : *data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  // Deep copy of values (grad not copied, graph not carried over).
  Tensor clone_values() const {
    Tensor t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<double>>(*data);
    t.requires_grad = false;
    return t;
  }

  static std::string shape_str(const std::vector<std::size_t>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) out += ",";
      out += std::to_string(s[i]);
    }
    return out + "]";
  }
  std::string shape_str() const { return shape_str(shape); }
};

class GradTape;

namespace detail {
inline GradTape*& tape_slot() {
  static thread_local GradTape* t = nullptr;
  return t;
}
}  // namespace detail

// Reverse-mode tape. Ops append a backward closure while a tape is active;
// backward() replays the closures in reverse record order (record order is
// a valid topological order of the dynamic graph, including the in-place
// cache writes used by the autoregressive decoder) and then frees them.
//
// Activation is a thread-local stack: construct a GradTape to start
// recording on the current thread; backward() or destruction stops it.
class GradTape {
 public:
  GradTape() : prev_(detail::tape_slot()) { detail::tape_slot() = this; }
  ~GradTape() {
    if (detail::tape_slot() == this) detail::tape_slot() = prev_;
  }
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* active() { return detail::tape_slot(); }

  void record(std::function<void()> op) { ops_.push_back(std::move(op)); }

  std::size_t size() const { return ops_.size(); }

  // Seeds d(loss)/d(loss) = 1 and accumulates gradients into every
  // recorded tensor's grad buffer. The tape is consumed: closures (and the
  // intermediate tensors they hold alive) are released before returning.
  void backward(const Tensor& loss) {
    if (consumed_) throw Error("GradTape: backward called twice");
    if (loss.numel() != 1)
      throw ShapeError("GradTape: backward expects a scalar loss, got " +
                       loss.shape_str());
    if (!loss.requires_grad || !loss.grad)
      throw Error("GradTape: loss has no recorded graph");
    (*loss.grad)[0] += 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    ops_.clear();
    consumed_ = true;
    if (detail::tape_slot() == this) detail::tape_slot() = prev_;
  }

 private:
  std::vector<std::function<void()>> ops_;
  GradTape* prev_ = nullptr;
  bool consumed_ = false;
};

// Masks any active tape for the current scope (numeric probes, validation
// passes, cached inference).
class NoGradGuard {
 public:
  NoGradGuard() : saved_(detail::tape_slot()) { detail::tape_slot() = nullptr; }
  ~NoGradGuard() { detail::tape_slot() = saved_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  GradTape* saved_;
};

}  // namespace speechface
