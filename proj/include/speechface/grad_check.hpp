// Copyright 2026 The speechface authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <unordered_set>
#include <vector>

#include "speechface/param_store.hpp"
#include "speechface/rng.hpp"
#include "speechface/tensor.hpp"

namespace speechface {

struct FiniteDiffOptions {
  double h = 1e-5;
  // Coordinates probed per parameter tensor; 0 = every coordinate. Large
  // models use a seeded subsample to keep the check fast.
  std::size_t coords_per_param = 0;
  std::uint64_t seed = 0x5eedULL;
};

// Central-difference verification of reverse-mode gradients.
//
// `f` evaluates the objective on the current parameter values and returns
// a scalar tensor; it is called under a tape once (for analytic grads) and
// without a tape for the +/-h probes. Returns the max over probed
// coordinates of |analytic - numeric| / max(1, |numeric|).
inline double finite_diff_check(const std::function<Tensor(ParamStore&)>& f,
                                ParamStore& params,
                                const FiniteDiffOptions& opt = {}) {
  if (!(opt.h >= 1e-7 && opt.h <= 1e-3))
    throw NumericError("finite_diff_check: h must lie in [1e-7, 1e-3]");

  auto eval = [&]() -> double {
    NoGradGuard ng;
    return f(params).value();
  };

  // f must be deterministic, otherwise the differences are meaningless.
  const double y1 = eval();
  const double y2 = eval();
  if (!(y1 == y2))
    throw NumericError("finite_diff_check: f is not deterministic (" +
                       std::to_string(y1) + " vs " + std::to_string(y2) + ")");

  params.zero_grads();
  {
    GradTape tape;
    Tensor loss = f(params);
    tape.backward(loss);
  }

  Rng rng(opt.seed);
  double worst = 0.0;
  for (auto& [name, t] : params.entries()) {
    const std::size_t n = t.numel();
    std::vector<std::size_t> coords;
    if (opt.coords_per_param == 0 || opt.coords_per_param >= n) {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      std::unordered_set<std::size_t> seen;
      while (seen.size() < opt.coords_per_param)
        seen.insert(static_cast<std::size_t>(rng.below(n)));
      coords.assign(seen.begin(), seen.end());
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      double& theta = (*t.data)[i];
      const double saved = theta;
      theta = saved + opt.h;
      const double fp = eval();
      theta = saved - opt.h;
      const double fm = eval();
      theta = saved;
      const double numeric = (fp - fm) / (2.0 * opt.h);
      const double analytic = (*t.grad)[i];
      const double rel = std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

inline double finite_diff_check(const std::function<Tensor(ParamStore&)>& f,
                                ParamStore& params, double h) {
  FiniteDiffOptions opt;
  opt.h = h;
  return finite_diff_check(f, params, opt);
}

}  // namespace speechface
