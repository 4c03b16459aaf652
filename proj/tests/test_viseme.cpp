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
#include "speechface/model.hpp"
#include "speechface/viseme.hpp"

using namespace speechface;

namespace {

// Small decoder used throughout: d_model 8, 2 heads of 4, ff 16, 1 layer.
ModelConfig tiny_config(std::size_t layers = 1) {
  ModelConfig cfg;
  cfg.decoder.d_model = 8;
  cfg.decoder.n_heads = 2;
  cfg.decoder.d_head = 4;
  cfg.decoder.d_ff = 16;
  cfg.decoder.n_layers = layers;
  cfg.audio_in_dim = 5;
  cfg.n_train_ids = 3;
  cfg.mesh_vertices = 6;
  return cfg;
}

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0,
                     bool rg = false) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = rng.uniform(-scale, scale);
  return Tensor::from_values({r, c}, std::move(v), rg);
}

}  // namespace

TEST_CASE("positional encoding basics") {
  const auto pe0 = positional_encoding(0, 64);
  for (std::size_t k = 0; k < 32; ++k) {
    CHECK(pe0[2 * k] == 0.0);
    CHECK(pe0[2 * k + 1] == 1.0);
  }
  const auto pe1 = positional_encoding(1, 64);
  CHECK(pe1[0] == Catch::Approx(std::sin(1.0)).epsilon(1e-12));
  CHECK(pe1[1] == Catch::Approx(std::cos(1.0)).epsilon(1e-12));
  for (std::size_t t : {0u, 1u, 7u, 123u, 9999u}) {
    for (double v : positional_encoding(t, 64)) {
      CHECK(v >= -1.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("alignment bias structure") {
  AttnBias b1 = alignment_bias(1);
  CHECK(b1.at(0, 0) == 0.0);

  AttnBias b3 = alignment_bias(3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      if (i == j) CHECK(b3.at(i, j) == 0.0);
      else CHECK(b3.at(i, j) == kNegInf);
    }

  // Softmax of any biased row is exactly one-hot at the diagonal.
  Tensor scores = Tensor::from_values({3, 3}, {0.3, -2, 5, 1, 1, 1, -4, 0.9, 2.2});
  Tensor sm = softmax_rows(add_bias(scores, b3));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(sm.at(i, j) == (i == j ? 1.0 : 0.0));
}

TEST_CASE("causal mask structure") {
  AttnBias m = causal_mask(2);
  CHECK(m.at(0, 0) == 0.0);
  CHECK(m.at(0, 1) == kNegInf);
  CHECK(m.at(1, 0) == 0.0);
  CHECK(m.at(1, 1) == 0.0);

  AttnBias m4 = causal_mask(4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(m4.at(i, j) == (j > i ? kNegInf : 0.0));
}

TEST_CASE("scaled dot attention: alignment bias selects value rows exactly") {
  Rng rng(21);
  const std::size_t n = 5, dk = 6, dv = 3;
  Tensor q = random_matrix(n, dk, rng);
  Tensor k = random_matrix(n, dk, rng);
  Tensor v = random_matrix(n, dv, rng);
  Tensor out = scaled_dot_attention(q, k, v, alignment_bias(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dv; ++j)
      CHECK(out.at(i, j) == v.at(i, j));  // machine-exact one-hot selection
}

TEST_CASE("scaled dot attention: single key returns the value") {
  Tensor q = Tensor::from_values({1, 2}, {0.7, -0.2});
  Tensor k = Tensor::from_values({1, 2}, {1.0, 0.5});
  Tensor v = Tensor::from_values({1, 3}, {4, 5, 6});
  Tensor out = scaled_dot_attention(q, k, v, AttnBias::zeros(1, 1));
  CHECK(out.at(0, 0) == 4.0);
  CHECK(out.at(0, 1) == 5.0);
  CHECK(out.at(0, 2) == 6.0);
}

TEST_CASE("scaled dot attention: hand-evaluated 2x2 case") {
  Tensor q = Tensor::from_values({2, 2}, {1, 0, 0, 1});
  Tensor v = Tensor::from_values({2, 2}, {1, 0, 0, 2});
  Tensor out = scaled_dot_attention(q, q, v, AttnBias::zeros(2, 2));
  // Row 0: softmax([1/sqrt(2), 0]) = [0.66986, 0.33014] -> [0.670, 0.660].
  CHECK(out.at(0, 0) == Catch::Approx(0.670).margin(5e-4));
  CHECK(out.at(0, 1) == Catch::Approx(0.660).margin(5e-4));
}

TEST_CASE("multi-head attention with one identity head reduces to scaled dot attention") {
  Rng rng(4);
  const std::size_t d = 6;
  ParamStore p;
  std::vector<double> eye(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) eye[i * d + i] = 1.0;
  p.add("mha.Wq", Tensor::from_values({d, d}, eye));
  p.add("mha.Wk", Tensor::from_values({d, d}, eye));
  p.add("mha.Wv", Tensor::from_values({d, d}, eye));
  p.add("mha.Wo", Tensor::from_values({d, d}, eye));

  Tensor x = random_matrix(4, d, rng);
  Tensor kv = random_matrix(7, d, rng);
  AttnBias zero = AttnBias::zeros(4, 7);
  Tensor a = multi_head_attention(x, kv, zero, p, "mha", 1);
  Tensor b = scaled_dot_attention(x, kv, kv, zero);
  REQUIRE(a.shape == b.shape);
  for (std::size_t i = 0; i < a.numel(); ++i)
    CHECK((*a.data)[i] == Catch::Approx((*b.data)[i]).epsilon(1e-12));
}

TEST_CASE("multi-head attention output shape and gradients") {
  ModelConfig cfg = tiny_config();
  ParamStore params = init_params(cfg, 11);
  Rng rng(8);
  ParamStore probe;
  probe.add("xq", random_matrix(3, 8, rng, 1.0, true));
  probe.add("xkv", random_matrix(5, 8, rng, 1.0, true));

  Tensor out = multi_head_attention(probe.get("xq"), probe.get("xkv"),
                                    AttnBias::zeros(3, 5), params, "dec.l0.self",
                                    cfg.decoder.n_heads);
  CHECK(out.rows() == 3);
  CHECK(out.cols() == 8);

  // Gradcheck through MHA w.r.t. inputs and projections.
  ParamStore all;
  all.add("xq", probe.get("xq"));
  all.add("xkv", probe.get("xkv"));
  for (const char* n : {"dec.l0.self.Wq", "dec.l0.self.Wk", "dec.l0.self.Wv", "dec.l0.self.Wo"})
    all.add(n, params.get(n));
  auto f = [&](ParamStore& ps) {
    Tensor o = multi_head_attention(ps.get("xq"), ps.get("xkv"), AttnBias::zeros(3, 5),
                                    ps, "dec.l0.self", 2);
    return sum_sq(o);
  };
  CHECK(finite_diff_check(f, all, 1e-5) < 1e-6);
}

TEST_CASE("attend_row agrees with scaled_dot_attention and passes gradcheck") {
  Rng rng(17);
  const std::size_t heads = 2, dh = 3, width = heads * dh, len = 5;
  ParamStore p;
  p.add("q", random_matrix(1, width, rng, 1.0, true));
  p.add("k", random_matrix(len, width, rng, 1.0, true));
  p.add("v", random_matrix(len, width, rng, 1.0, true));
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor fused = attend_row(p.get("q"), p.get("k"), p.get("v"), len, {}, heads, inv);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(p.get("q"), h * dh, (h + 1) * dh);
    Tensor kh = slice_cols(p.get("k"), h * dh, (h + 1) * dh);
    Tensor vh = slice_cols(p.get("v"), h * dh, (h + 1) * dh);
    Tensor ref = scaled_dot_attention(qh, kh, vh, AttnBias::zeros(1, len));
    for (std::size_t j = 0; j < dh; ++j)
      CHECK(fused.at(0, h * dh + j) == Catch::Approx(ref.at(0, j)).epsilon(1e-13));
  }

  auto f = [&](ParamStore& ps) {
    std::vector<double> bias(len, 0.0);
    bias[2] = kNegInf;  // exercise a masked entry
    Tensor o = attend_row(ps.get("q"), ps.get("k"), ps.get("v"), len, bias, heads, inv);
    return sum_sq(o);
  };
  CHECK(finite_diff_check(f, p, 1e-5) < 1e-6);
}

TEST_CASE("decoder layer: shape, audio-masking property, gradients") {
  ModelConfig cfg = tiny_config();
  ParamStore params = init_params(cfg, 3);
  Rng rng(30);
  const std::size_t t = 3, T = 6;
  Tensor h = random_matrix(t, 8, rng);
  Tensor audio = random_matrix(T, 8, rng);

  Tensor out = decoder_layer(h, audio, params, 0, cfg.decoder);
  CHECK(out.rows() == t);
  CHECK(out.cols() == 8);

  // The diagonal bias blocks audio rows beyond the prefix: zeroing them
  // changes nothing.
  Tensor audio_zeroed = audio.clone_values();
  for (std::size_t r = t; r < T; ++r)
    for (std::size_t c = 0; c < 8; ++c) audio_zeroed.at(r, c) = 0.0;
  Tensor out2 = decoder_layer(h, audio_zeroed, params, 0, cfg.decoder);
  for (std::size_t i = 0; i < out.numel(); ++i)
    CHECK((*out.data)[i] == (*out2.data)[i]);

  CHECK_THROWS_AS(decoder_layer(audio, h, params, 0, cfg.decoder), ShapeError);

  // Gradcheck through a full layer (parameters and inputs).
  ParamStore probe;
  probe.add("h", random_matrix(2, 8, rng, 0.7, true));
  probe.add("audio", random_matrix(4, 8, rng, 0.7, true));
  for (const auto& [name, tns] : params.entries())
    if (name.rfind("dec.l0.", 0) == 0) probe.add(name, tns);
  auto f = [&](ParamStore& ps) {
    DecoderConfig dc = cfg.decoder;
    return sum_sq(decoder_layer(ps.get("h"), ps.get("audio"), ps, 0, dc));
  };
  CHECK(finite_diff_check(f, probe, 1e-5) < 1e-4);
}

TEST_CASE("autoregressive decode: base case and determinism") {
  ModelConfig cfg = tiny_config();
  ParamStore params = init_params(cfg, 5);
  Rng rng(41);

  Tensor a1 = random_matrix(1, 8, rng);
  Tensor v1 = autoregressive_decode(a1, params, cfg.decoder);
  CHECK(v1.rows() == 1);
  CHECK(v1.cols() == 8);

  Tensor a = random_matrix(7, 8, rng);
  Tensor d1 = autoregressive_decode(a, params, cfg.decoder);
  Tensor d2 = autoregressive_decode(a, params, cfg.decoder);
  CHECK(*d1.data == *d2.data);  // bit-identical

  CHECK_THROWS_AS(autoregressive_decode(Tensor::from_values({1, 4}, {1, 2, 3, 4}),
                                        params, cfg.decoder),
                  ShapeError);
}

TEST_CASE("autoregressive decode: prefix equals truncated decode bit-exactly") {
  ModelConfig cfg = tiny_config(2);
  ParamStore params = init_params(cfg, 7);
  Rng rng(52);
  const std::size_t T = 8;
  Tensor audio = random_matrix(T, 8, rng);

  Tensor full = autoregressive_decode(audio, params, cfg.decoder);
  for (std::size_t t : {1u, 3u, 5u}) {
    Tensor trunc_audio = Tensor::alloc({t, 8}, false);
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < 8; ++j) trunc_audio.at(i, j) = audio.at(i, j);
    Tensor part = autoregressive_decode(trunc_audio, params, cfg.decoder);
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < 8; ++j)
        CHECK(part.at(i, j) == full.at(i, j));
  }
}

TEST_CASE("autoregressive decode: future audio cannot influence the past") {
  ModelConfig cfg = tiny_config(2);
  ParamStore params = init_params(cfg, 9);
  Rng rng(63);
  const std::size_t T = 7;
  Tensor audio = random_matrix(T, 8, rng);
  Tensor base = autoregressive_decode(audio, params, cfg.decoder);

  for (std::size_t cut : {2u, 4u, 6u}) {
    Tensor perturbed = audio.clone_values();
    for (std::size_t i = cut; i < T; ++i)
      for (std::size_t j = 0; j < 8; ++j)
        perturbed.at(i, j) += rng.uniform(-2.0, 2.0);
    Tensor out = autoregressive_decode(perturbed, params, cfg.decoder);
    for (std::size_t i = 0; i < cut; ++i)
      for (std::size_t j = 0; j < 8; ++j)
        CHECK(out.at(i, j) == base.at(i, j));  // exactly zero diff
  }
}

TEST_CASE("incremental rollout matches the batched decoder stack") {
  ModelConfig cfg = tiny_config(2);
  ParamStore params = init_params(cfg, 13);
  Rng rng(74);
  const std::size_t T = 6, d = 8;
  Tensor audio = random_matrix(T, d, rng);
  Tensor vis = autoregressive_decode(audio, params, cfg.decoder);

  // Rebuild the same computation with the batched reference ops: input
  // row i is the previous output (or the start token) plus PE(i).
  Tensor x = Tensor::alloc({T, d}, false);
  for (std::size_t i = 0; i < T; ++i) {
    const auto pe = positional_encoding(i, d);
    for (std::size_t j = 0; j < d; ++j)
      x.at(i, j) = (i == 0 ? 0.0 : vis.at(i - 1, j)) + pe[j];
  }
  Tensor h = x;
  for (std::size_t l = 0; l < cfg.decoder.n_layers; ++l)
    h = decoder_layer(h, audio, params, l, cfg.decoder);
  Tensor ref = linear(h, params.get("viseme_out.W"), params.get("viseme_out.b"));

  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = 0; j < d; ++j)
      CHECK(vis.at(i, j) == Catch::Approx(ref.at(i, j)).margin(1e-12));
}

TEST_CASE("gradients flow through the rollout (finite differences)") {
  ModelConfig cfg = tiny_config(1);
  ParamStore params = init_params(cfg, 15);
  Rng rng(85);
  const std::size_t T = 3;
  Tensor audio_raw = random_matrix(T, 8, rng);

  // Objective: squared norm of the decoded visemes; checked against
  // central differences over every decoder parameter.
  auto f = [&](ParamStore& ps) {
    return sum_sq(autoregressive_decode(audio_raw, ps, cfg.decoder));
  };
  FiniteDiffOptions opt;
  opt.h = 1e-5;
  opt.coords_per_param = 6;  // subsample for speed; every tensor is probed
  opt.seed = 999;
  CHECK(finite_diff_check(f, params, opt) < 1e-4);
}
