// Copyright 2026 The speechface authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0

#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <limits>

#include "speechface/ops.hpp"
#include "speechface/tensor.hpp"

using namespace speechface;

TEST_CASE("tensor construction validates shape and finiteness") {
  Tensor t = Tensor::from_values({2, 2}, {1, 2, 3, 4});
  CHECK(t.numel() == 4);
  CHECK(t.at(1, 0) == 3.0);

  CHECK_THROWS_AS(Tensor::from_values({2, 2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor::from_values({1}, {std::nan("")}), NumericError);
  CHECK_THROWS_AS(
      Tensor::from_values({1}, {std::numeric_limits<double>::infinity()}),
      NumericError);
  CHECK_THROWS_AS(Tensor::from_values({}, {}), ShapeError);
}

TEST_CASE("copies share storage") {
  Tensor a = Tensor::from_values({2}, {1, 2});
  Tensor b = a;
  (*b.data)[0] = 7.0;
  CHECK((*a.data)[0] == 7.0);
}

TEST_CASE("tape records only when active and inputs require grad") {
  Tensor x = Tensor::from_values({1, 2}, {1, 2}, /*requires_grad=*/true);
  Tensor w = Tensor::from_values({2, 2}, {1, 0, 0, 1});

  // No tape: nothing recorded, output carries no grad.
  Tensor y0 = matmul(x, w);
  CHECK_FALSE(y0.requires_grad);

  {
    GradTape tape;
    Tensor y = matmul(x, w);
    CHECK(y.requires_grad);
    CHECK(tape.size() == 1);
    Tensor s = sum_all(y);
    tape.backward(s);
    CHECK((*x.grad)[0] == 1.0);
    CHECK((*x.grad)[1] == 1.0);
  }

  // No-grad inputs record nothing even under a tape.
  {
    GradTape tape;
    Tensor a = Tensor::from_values({1, 2}, {3, 4});
    Tensor y = matmul(a, w);
    CHECK(tape.size() == 0);
    CHECK_FALSE(y.requires_grad);
  }
}

TEST_CASE("backward consumes the tape") {
  Tensor x = Tensor::scalar(3.0, true);
  GradTape tape;
  Tensor y = sum_sq(x);
  tape.backward(y);
  CHECK((*x.grad)[0] == 6.0);
  CHECK_THROWS_AS(tape.backward(y), Error);
}

TEST_CASE("backward requires a scalar with a recorded graph") {
  Tensor x = Tensor::from_values({1, 2}, {1, 2}, true);
  GradTape tape;
  Tensor y = scale(x, 2.0);
  CHECK_THROWS_AS(tape.backward(y), ShapeError);

  Tensor plain = Tensor::scalar(1.0);
  GradTape tape2;
  CHECK_THROWS_AS(tape2.backward(plain), Error);
}

TEST_CASE("no-grad guard suspends recording") {
  Tensor x = Tensor::scalar(2.0, true);
  GradTape tape;
  {
    NoGradGuard ng;
    Tensor y = sum_sq(x);
    CHECK_FALSE(y.requires_grad);
  }
  CHECK(tape.size() == 0);
}

TEST_CASE("shared inputs accumulate gradients from every consumer") {
  // y = x*x via two consumers of the same tensor: d/dx (x^2 + 3x) = 2x + 3.
  Tensor x = Tensor::scalar(5.0, true);
  GradTape tape;
  Tensor a = sum_sq(x);           // x^2
  Tensor b = scale(x, 3.0);       // 3x
  Tensor y = add(a, sum_all(b));  // x^2 + 3x
  tape.backward(y);
  CHECK((*x.grad)[0] == Catch::Approx(13.0));
}
