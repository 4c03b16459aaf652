// Copyright 2026 The speechface authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0

#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "speechface/grad_check.hpp"
#include "speechface/ops.hpp"
#include "speechface/param_store.hpp"
#include "speechface/rng.hpp"

using namespace speechface;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, bool rg = true) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::from_values(std::move(shape), std::move(v), rg);
}

}  // namespace

TEST_CASE("linear matches hand-computed products") {
  // Basis-vector selection.
  Tensor x = Tensor::from_values({1, 2}, {1, 0});
  Tensor w = Tensor::from_values({2, 2}, {2, 0, 0, 3});
  Tensor b = Tensor::from_values({2}, {0, 0});
  Tensor y = linear(x, w, b);
  CHECK(y.at(0, 0) == 2.0);
  CHECK(y.at(0, 1) == 0.0);

  // Zero input passes the bias through.
  Tensor x0 = Tensor::from_values({1, 2}, {0, 0});
  Tensor b2 = Tensor::from_values({2}, {5, 7});
  Tensor y2 = linear(x0, w, b2);
  CHECK(y2.at(0, 0) == 5.0);
  CHECK(y2.at(0, 1) == 7.0);

  // Hand matrix multiply: [1,1]*[[1,2],[3,4]] + [1,1] = [5,7].
  Tensor x3 = Tensor::from_values({1, 2}, {1, 1});
  Tensor w3 = Tensor::from_values({2, 2}, {1, 2, 3, 4});
  Tensor b3 = Tensor::from_values({2}, {1, 1});
  Tensor y3 = linear(x3, w3, b3);
  CHECK(y3.at(0, 0) == 5.0);
  CHECK(y3.at(0, 1) == 7.0);
}

TEST_CASE("linear reports both shapes on mismatch") {
  Tensor x = Tensor::from_values({1, 3}, {1, 2, 3});
  Tensor w = Tensor::from_values({2, 2}, {1, 0, 0, 1});
  Tensor b = Tensor::from_values({2}, {0, 0});
  try {
    linear(x, w, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[1,3]") != std::string::npos);
    CHECK(msg.find("[2,2]") != std::string::npos);
  }
}

TEST_CASE("leaky_relu definition and slope validation") {
  Tensor x = Tensor::from_values({3}, {2, -1, 0});
  Tensor y = leaky_relu(x, 0.01);
  CHECK((*y.data)[0] == 2.0);
  CHECK((*y.data)[1] == Catch::Approx(-0.01));
  CHECK((*y.data)[2] == 0.0);

  CHECK_THROWS_AS(leaky_relu(x, 0.0), NumericError);
  CHECK_THROWS_AS(leaky_relu(x, 1.0), NumericError);
}

TEST_CASE("softmax rows: symmetry, masking, hand values") {
  Tensor flat = Tensor::from_values({1, 2}, {0, 0});
  Tensor y = softmax_rows(flat);
  CHECK(y.at(0, 0) == 0.5);
  CHECK(y.at(0, 1) == 0.5);

  // Mask limit: -inf goes to exactly 0 and the rest renormalizes.
  Tensor scores = Tensor::from_values({1, 2}, {0, 0});
  AttnBias bias = AttnBias::zeros(1, 2);
  bias.at(0, 1) = kNegInf;
  Tensor masked = softmax_rows(add_bias(scores, bias));
  CHECK(masked.at(0, 0) == 1.0);
  CHECK(masked.at(0, 1) == 0.0);

  // Hand calculator: softmax([1,2,3]).
  Tensor t = Tensor::from_values({1, 3}, {1, 2, 3});
  Tensor s = softmax_rows(t);
  CHECK(s.at(0, 0) == Catch::Approx(0.0900).margin(1e-4));
  CHECK(s.at(0, 1) == Catch::Approx(0.2447).margin(1e-4));
  CHECK(s.at(0, 2) == Catch::Approx(0.6652).margin(1e-4));
}

TEST_CASE("softmax rows sum to one within 1e-12 and reject dead rows") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor({4, 7}, rng, false);
    Tensor y = softmax_rows(x);
    for (std::size_t i = 0; i < 4; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 7; ++j) s += y.at(i, j);
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }

  Tensor x = Tensor::from_values({1, 3}, {0, 0, 0});
  AttnBias dead = AttnBias::zeros(1, 3);
  dead.at(0, 0) = dead.at(0, 1) = dead.at(0, 2) = kNegInf;
  CHECK_THROWS_AS(softmax_rows(add_bias(x, dead)), NumericError);
}

TEST_CASE("elementwise and reduction gradients pass finite differences") {
  Rng rng(42);
  ParamStore params;
  params.add("a", random_tensor({3, 4}, rng));
  params.add("b", random_tensor({3, 4}, rng));

  auto f = [](ParamStore& p) {
    Tensor d = sub(p.get("a"), p.get("b"));
    Tensor r = leaky_relu(scale(d, 1.7), 0.01);
    return sum_sq(r);
  };
  CHECK(finite_diff_check(f, params, 1e-5) < 1e-8);
}

TEST_CASE("matmul and linear gradients pass finite differences") {
  Rng rng(7);
  ParamStore params;
  params.add("x", random_tensor({2, 3}, rng));
  params.add("w", random_tensor({3, 5}, rng));
  params.add("b", random_tensor({5}, rng));
  params.add("w2", random_tensor({5, 2}, rng));

  auto f = [](ParamStore& p) {
    Tensor h = linear(p.get("x"), p.get("w"), p.get("b"));
    Tensor y = matmul(leaky_relu(h, 0.01), p.get("w2"));
    return sum_sq(y);
  };
  CHECK(finite_diff_check(f, params, 1e-5) < 1e-7);
}

TEST_CASE("softmax, layer norm and slicing gradients pass finite differences") {
  Rng rng(13);
  ParamStore params;
  params.add("x", random_tensor({3, 6}, rng));
  params.add("g", random_tensor({6}, rng));
  params.add("c", random_tensor({6}, rng));

  auto f = [](ParamStore& p) {
    Tensor n = layer_norm_rows(p.get("x"), p.get("g"), p.get("c"));
    Tensor s = softmax_rows(slice_cols(n, 1, 5));
    Tensor r = slice_rows(s, 0, 2);
    return sum_sq(r);
  };
  CHECK(finite_diff_check(f, params, 1e-5) < 1e-6);
}

TEST_CASE("concat, gather and weighted reductions pass finite differences") {
  Rng rng(99);
  ParamStore params;
  params.add("a", random_tensor({2, 3}, rng));
  params.add("b", random_tensor({2, 2}, rng));

  auto f = [](ParamStore& p) {
    Tensor cat = concat_cols({p.get("a"), p.get("b")});
    Tensor g = gather_cols(cat, {0, 4, 4, 2});
    return row_weighted_sum_sq(g, {0.5, 2.0});
  };
  CHECK(finite_diff_check(f, params, 1e-5) < 1e-7);
}

TEST_CASE("matmul_nt matches matmul against explicit transpose") {
  Rng rng(3);
  Tensor a = random_tensor({3, 4}, rng, false);
  Tensor b = random_tensor({5, 4}, rng, false);
  Tensor c = matmul_nt(a, b);
  REQUIRE(c.rows() == 3);
  REQUIRE(c.cols() == 5);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < 4; ++p) s += a.at(i, p) * b.at(j, p);
      CHECK(c.at(i, j) == Catch::Approx(s));
    }
}

TEST_CASE("append_row routes gradients through buffer rows") {
  Rng rng(5);
  ParamStore params;
  params.add("r0", random_tensor({1, 3}, rng));
  params.add("r1", random_tensor({1, 3}, rng));

  auto f = [](ParamStore& p) {
    const bool rec = GradTape::active() != nullptr;
    Tensor buf = Tensor::alloc({2, 3}, rec);
    append_row(buf, p.get("r0"), 0);
    append_row(buf, p.get("r1"), 1);
    return row_weighted_sum_sq(buf, {1.0, 3.0});
  };
  CHECK(finite_diff_check(f, params, 1e-5) < 1e-8);
}

TEST_CASE("finite_diff_check rejects non-deterministic objectives") {
  ParamStore params;
  params.add("x", Tensor::scalar(1.0, true));
  int calls = 0;
  auto f = [&calls](ParamStore& p) {
    ++calls;
    return sum_sq(scale(p.get("x"), 1.0 + 0.1 * calls));
  };
  CHECK_THROWS_AS(finite_diff_check(f, params, 1e-5), NumericError);
}

TEST_CASE("finite_diff_check on a quadratic is near-exact") {
  ParamStore params;
  params.add("theta", Tensor::scalar(3.0, true));
  auto f = [](ParamStore& p) { return sum_sq(p.get("theta")); };
  CHECK(finite_diff_check(f, params, 1e-5) < 1e-8);
}
