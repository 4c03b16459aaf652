// Copyright 2026 The speechface authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0

#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "speechface/tensor.hpp"

namespace speechface {

// Ordered name -> parameter map. Iteration order is insertion order, which
// makes initialization, checkpoints, optimizer sweeps and hashes
// reproducible. Stored tensors share their buffers with every copy handed
// out, so an optimizer step through the store is visible everywhere.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw Error("ParamStore: duplicate parameter " + name);
    t.requires_grad = true;
    index_.emplace(name, entries_.size());
    entries_.emplace_back(name, std::move(t));
    return entries_.back().second;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Tensor& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("ParamStore: unknown parameter " + name);
    return entries_[it->second].second;
  }
  const Tensor& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("ParamStore: unknown parameter " + name);
    return entries_[it->second].second;
  }

  std::size_t size() const { return entries_.size(); }

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [n, t] : entries_) out.push_back(n);
    return out;
  }

  void zero_grads() {
    for (auto& [n, t] : entries_) {
      t.ensure_grad();
      t.zero_grad();
    }
  }

  void set_requires_grad(bool value) {
    for (auto& [n, t] : entries_) t.requires_grad = value;
  }
  void set_requires_grad(const std::string& name, bool value) {
    get(name).requires_grad = value;
  }

  // Deep copy of all parameter values (fresh buffers, no grads).
  ParamStore clone() const {
    ParamStore out;
    for (const auto& [n, t] : entries_) out.add(n, t.clone_values());
    return out;
  }

  // Copies values from another store into this one's existing buffers.
  void assign_values(const ParamStore& src) {
    for (auto& [n, t] : entries_) {
      const Tensor& s = src.get(n);
      if (s.shape != t.shape)
        throw CompatError("ParamStore: shape mismatch for " + n);
      *t.data = *s.data;
    }
  }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// FNV-1a over names, shapes and raw value bit patterns. Used to pin the
// frozen-decoder contract during style adaptation and to invalidate viseme
// caches. `prefix` restricts the hash to parameters whose name starts with
// it (empty = all).
inline std::uint64_t param_hash(const ParamStore& params, const std::string& prefix = "") {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, t] : params.entries()) {
    if (!prefix.empty() && name.rfind(prefix, 0) != 0) continue;
    mix(name.data(), name.size());
    for (std::size_t d : t.shape) {
      std::uint64_t v = d;
      mix(&v, sizeof(v));
    }
    for (double v : *t.data) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof(bits));
      mix(&bits, sizeof(bits));
    }
  }
  return h;
}

// Scoped requires_grad mask: freezes every parameter except the listed
// ones, restoring previous flags on destruction. Styles adaptation stages
// use this to make "only these parameters train" structural.
class FreezeGuard {
 public:
  FreezeGuard(ParamStore& params, const std::vector<std::string>& keep_trainable)
      : params_(params) {
    for (auto& [n, t] : params_.entries()) {
      saved_.emplace_back(n, t.requires_grad);
      t.requires_grad = false;
    }
    for (const std::string& n : keep_trainable) params_.get(n).requires_grad = true;
  }
  ~FreezeGuard() {
    for (const auto& [n, flag] : saved_) params_.get(n).requires_grad = flag;
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  ParamStore& params_;
  std::vector<std::pair<std::string, bool>> saved_;
};

}  // namespace speechface
