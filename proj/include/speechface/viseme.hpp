// Copyright 2026 The speechface authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Autoregressive viseme decoder: a post-norm transformer decoder stack
// that maps the audio embedding to style-agnostic viseme features. Cross
// attention carries a diagonal alignment bias that pins motion frame t to
// audio frame t; self attention is causal. Decoding starts from a zero
// start token and always runs exactly T steps (no end token).
//
// Two attention code paths exist on purpose. The batched ops
// (scaled_dot_attention / multi_head_attention / decoder_layer) are plain
// compositions of the generic tensor ops and define the reference
// semantics. autoregressive_decode uses a fused single-row attention op
// with per-layer K/V caches so that training through the rollout costs
// O(T^2) instead of O(T^3); tests pin the two paths against each other.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "speechface/audio.hpp"
#include "speechface/ops.hpp"
#include "speechface/param_store.hpp"
#include "speechface/tensor.hpp"

namespace speechface {

struct DecoderConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_head = 64;
  std::size_t d_ff = 128;
  std::size_t n_layers = 2;
  double leaky_slope = 0.01;
  // Empty means the zero start token; a non-empty override must have
  // d_model entries.
  std::vector<double> start_token;

  std::size_t attn_width() const { return n_heads * d_head; }

  double start_value(std::size_t j) const {
    return start_token.empty() ? 0.0 : start_token[j];
  }

  void validate() const {
    if (!d_model || !n_heads || !d_head || !d_ff || !n_layers)
      throw ConfigError("DecoderConfig: all dimensions must be positive");
    if (!start_token.empty() && start_token.size() != d_model)
      throw ConfigError("DecoderConfig: start token must have d_model entries");
  }
};

struct VisemeSequence {
  Tensor frames;  // T x 64
};

// Sinusoidal positional encoding: dim 2k carries sin(t / 10000^(2k/d)),
// dim 2k+1 the matching cos.
inline std::vector<double> positional_encoding(std::size_t t, std::size_t d = 64) {
  std::vector<double> pe(d);
  for (std::size_t k = 0; 2 * k < d; ++k) {
    const double freq = std::pow(10000.0, -2.0 * static_cast<double>(k) / static_cast<double>(d));
    const double ang = static_cast<double>(t) * freq;
    pe[2 * k] = std::sin(ang);
    if (2 * k + 1 < d) pe[2 * k + 1] = std::cos(ang);
  }
  return pe;
}

// Square diagonal alignment bias: 0 on the diagonal, -inf elsewhere.
inline AttnBias alignment_bias(std::size_t t) {
  if (t < 1) throw ShapeError("alignment_bias: T must be >= 1");
  AttnBias b = AttnBias::zeros(t, t);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < t; ++j)
      if (i != j) b.at(i, j) = kNegInf;
  return b;
}

// Rectangular variant for a decoded prefix of t motion frames against T
// audio frames (t <= T).
inline AttnBias alignment_bias_rect(std::size_t t, std::size_t total) {
  if (t < 1 || total < t) throw ShapeError("alignment_bias_rect: need 1 <= t <= T");
  AttnBias b = AttnBias::zeros(t, total);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < total; ++j)
      if (i != j) b.at(i, j) = kNegInf;
  return b;
}

// Causal mask: 0 on and below the diagonal, -inf above.
inline AttnBias causal_mask(std::size_t t) {
  if (t < 1) throw ShapeError("causal_mask: T must be >= 1");
  AttnBias b = AttnBias::zeros(t, t);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = i + 1; j < t; ++j) b.at(i, j) = kNegInf;
  return b;
}

// softmax(Q K^T / sqrt(d_k) + bias) V
inline Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                   const AttnBias& bias) {
  if (q.cols() != k.cols())
    throw ShapeError("scaled_dot_attention: query/key dims " + q.shape_str() + " vs " + k.shape_str());
  if (k.rows() != v.rows())
    throw ShapeError("scaled_dot_attention: key/value counts " + k.shape_str() + " vs " + v.shape_str());
  if (bias.rows != q.rows() || bias.cols != k.rows())
    throw ShapeError("scaled_dot_attention: bias shape mismatch");
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Tensor scores = add_bias(scale(matmul_nt(q, k), inv), bias);
  return matmul(softmax_rows(scores), v);
}

// Multi-head attention using projections named `prefix + ".Wq/.Wk/.Wv/.Wo"`.
// Per-head projections are packed side by side in the weight matrices;
// the classic formulation carries no projection biases.
inline Tensor multi_head_attention(const Tensor& x_q, const Tensor& x_kv,
                                   const AttnBias& bias, const ParamStore& params,
                                   const std::string& prefix, std::size_t n_heads) {
  const Tensor& wq = params.get(prefix + ".Wq");
  const Tensor& wk = params.get(prefix + ".Wk");
  const Tensor& wv = params.get(prefix + ".Wv");
  const Tensor& wo = params.get(prefix + ".Wo");
  if (wq.cols() % n_heads != 0)
    throw ShapeError("multi_head_attention: width not divisible by head count");
  const std::size_t dh = wq.cols() / n_heads;

  Tensor q = matmul(x_q, wq);
  Tensor k = matmul(x_kv, wk);
  Tensor v = matmul(x_kv, wv);

  std::vector<Tensor> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
    Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
    Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
    heads.push_back(scaled_dot_attention(qh, kh, vh, bias));
  }
  return matmul(concat_cols(heads), wo);
}

// One post-norm decoder layer over a decoded prefix `h` (t x d_model):
// causal self-MHA, cross-MHA against the audio embedding with the
// diagonal alignment bias, then the feed-forward block; layer norm after
// each residual. Parameters live under "dec.l<idx>.".
inline Tensor decoder_layer(const Tensor& h, const Tensor& audio,
                            const ParamStore& params, std::size_t layer_idx,
                            const DecoderConfig& cfg) {
  const std::size_t t = h.rows(), total = audio.rows();
  if (t > total)
    throw ShapeError("decoder_layer: prefix of " + std::to_string(t) +
                     " frames cannot align with " + std::to_string(total) + " audio frames");
  const std::string p = "dec.l" + std::to_string(layer_idx);

  Tensor sa = multi_head_attention(h, h, causal_mask(t), params, p + ".self", cfg.n_heads);
  Tensor h1 = layer_norm_rows(add(h, sa), params.get(p + ".ln1.g"), params.get(p + ".ln1.b"));

  Tensor ca = multi_head_attention(h1, audio, alignment_bias_rect(t, total), params,
                                   p + ".cross", cfg.n_heads);
  Tensor h2 = layer_norm_rows(add(h1, ca), params.get(p + ".ln2.g"), params.get(p + ".ln2.b"));

  Tensor ff = linear(leaky_relu(linear(h2, params.get(p + ".ff.W1"), params.get(p + ".ff.b1")),
                                cfg.leaky_slope),
                     params.get(p + ".ff.W2"), params.get(p + ".ff.b2"));
  return layer_norm_rows(add(h2, ff), params.get(p + ".ln3.g"), params.get(p + ".ln3.b"));
}

// Fused single-row attention over the first `len` rows of K/V buffers,
// with an arbitrary additive bias per position (0 or -inf). Equivalent to
// scaled_dot_attention on one query row but O(len) and cache-friendly;
// this is what makes gradient flow through the rollout affordable.
inline Tensor attend_row(const Tensor& q, const Tensor& kbuf, const Tensor& vbuf,
                         std::size_t len, const std::vector<double>& bias,
                         std::size_t n_heads, double inv_sqrt_dk) {
  if (q.rows() != 1) throw ShapeError("attend_row: query must be a single row");
  const std::size_t width = q.cols();
  if (kbuf.cols() != width || vbuf.cols() != width)
    throw ShapeError("attend_row: buffer width mismatch");
  if (len == 0 || len > kbuf.rows() || len > vbuf.rows())
    throw ShapeError("attend_row: bad prefix length");
  if (!bias.empty() && bias.size() != len)
    throw ShapeError("attend_row: bias length mismatch");
  if (width % n_heads != 0) throw ShapeError("attend_row: width not divisible by heads");
  const std::size_t dh = width / n_heads;

  const bool rec = detail::rec(q, kbuf, vbuf);
  Tensor out = Tensor::alloc({1, width}, rec);
  // Softmax weights per head, kept for the backward pass.
  std::vector<double> alpha(n_heads * len);

  {
    const double* Q = q.data->data();
    const double* K = kbuf.data->data();
    const double* V = vbuf.data->data();
    double* O = out.data->data();
    for (std::size_t h = 0; h < n_heads; ++h) {
      const std::size_t base = h * dh;
      double* a = alpha.data() + h * len;
      double mx = kNegInf;
      for (std::size_t j = 0; j < len; ++j) {
        double s = 0.0;
        const double* kj = K + j * width + base;
        for (std::size_t d = 0; d < dh; ++d) s += Q[base + d] * kj[d];
        s = s * inv_sqrt_dk + (bias.empty() ? 0.0 : bias[j]);
        a[j] = s;
        mx = std::max(mx, s);
      }
      if (mx == kNegInf) throw NumericError("attend_row: fully masked row");
      double sum = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        a[j] = std::exp(a[j] - mx);
        sum += a[j];
      }
      for (std::size_t j = 0; j < len; ++j) a[j] /= sum;
      for (std::size_t j = 0; j < len; ++j) {
        const double w = a[j];
        const double* vj = V + j * width + base;
        for (std::size_t d = 0; d < dh; ++d) O[base + d] += w * vj[d];
      }
    }
  }

  if (rec) {
    detail::prep(q);
    detail::prep(kbuf);
    detail::prep(vbuf);
    GradTape::active()->record([q, kbuf, vbuf, out, len, n_heads, dh,
                                inv_sqrt_dk, alpha = std::move(alpha)] {
      const std::size_t width = n_heads * dh;
      const double* dO = out.grad->data();
      const double* Q = q.data->data();
      const double* K = kbuf.data->data();
      const double* V = vbuf.data->data();
      for (std::size_t h = 0; h < n_heads; ++h) {
        const std::size_t base = h * dh;
        const double* a = alpha.data() + h * len;
        // d(alpha_j) and the softmax Jacobian contraction.
        std::vector<double> dalpha(len, 0.0);
        for (std::size_t j = 0; j < len; ++j) {
          const double* vj = V + j * width + base;
          double s = 0.0;
          for (std::size_t d = 0; d < dh; ++d) s += dO[base + d] * vj[d];
          dalpha[j] = s;
        }
        double dot = 0.0;
        for (std::size_t j = 0; j < len; ++j) dot += a[j] * dalpha[j];
        for (std::size_t j = 0; j < len; ++j) {
          const double ds = a[j] * (dalpha[j] - dot);  // d(score_j)
          if (vbuf.requires_grad) {
            double* dV = vbuf.grad->data() + j * width + base;
            const double w = a[j];
            for (std::size_t d = 0; d < dh; ++d) dV[d] += w * dO[base + d];
          }
          if (kbuf.requires_grad && ds != 0.0) {
            double* dK = kbuf.grad->data() + j * width + base;
            for (std::size_t d = 0; d < dh; ++d)
              dK[d] += inv_sqrt_dk * ds * Q[base + d];
          }
          if (q.requires_grad && ds != 0.0) {
            double* dQ = q.grad->data() + base;
            const double* kj = K + j * width + base;
            for (std::size_t d = 0; d < dh; ++d)
              dQ[d] += inv_sqrt_dk * ds * kj[d];
          }
        }
      }
    });
  }
  return out;
}

namespace detail {

// True when decoding should record gradients: a tape is active and either
// the audio embedding or any decoder-side parameter is trainable.
inline bool decode_records(const Tensor& audio, const ParamStore& params) {
  if (!GradTape::active()) return false;
  if (audio.requires_grad) return true;
  for (const auto& [name, t] : params.entries()) {
    if ((name.rfind("dec.", 0) == 0 || name.rfind("viseme_out", 0) == 0) && t.requires_grad)
      return true;
  }
  return false;
}

}  // namespace detail

// Full autoregressive rollout: starting from the zero start token, emits
// exactly T viseme frames; step t consumes the previously emitted frames
// (through per-layer K/V caches) and the audio embedding. Gradients flow
// through the rollout when recording. Returns the T x 64 viseme matrix.
inline Tensor autoregressive_decode(const Tensor& audio, const ParamStore& params,
                                    const DecoderConfig& cfg) {
  cfg.validate();
  if (audio.rank() != 2 || audio.rows() < 1)
    throw ShapeError("autoregressive_decode: empty audio embedding");
  if (audio.cols() != cfg.d_model)
    throw ShapeError("autoregressive_decode: audio dim " + std::to_string(audio.cols()) +
                     " vs d_model " + std::to_string(cfg.d_model));
  const std::size_t T = audio.rows();
  const std::size_t width = cfg.attn_width();
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(cfg.d_head));
  const bool rec = detail::decode_records(audio, params);

  struct LayerCtx {
    Tensor ka, va;  // projected audio keys/values, T x width
    Tensor kc, vc;  // self-attention caches, T x width
  };
  std::vector<LayerCtx> layers(cfg.n_layers);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "dec.l" + std::to_string(l) + ".cross";
    layers[l].ka = matmul(audio, params.get(p + ".Wk"));
    layers[l].va = matmul(audio, params.get(p + ".Wv"));
    layers[l].kc = Tensor::alloc({T, width}, rec);
    layers[l].vc = Tensor::alloc({T, width}, rec);
  }

  std::vector<Tensor> visemes;
  visemes.reserve(T);
  Tensor prev;

  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> pe = positional_encoding(t, cfg.d_model);
    Tensor x;
    if (t == 0) {
      std::vector<double> x0(cfg.d_model);
      for (std::size_t j = 0; j < cfg.d_model; ++j) x0[j] = cfg.start_value(j) + pe[j];
      x = Tensor::row(std::move(x0));
    } else {
      x = add_row_const(prev, pe);
    }

    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      const std::string p = "dec.l" + std::to_string(l);
      LayerCtx& ctx = layers[l];

      // Causal self-attention against the cached prefix (no mask needed:
      // only already-written rows exist).
      Tensor qs = matmul(x, params.get(p + ".self.Wq"));
      Tensor ks = matmul(x, params.get(p + ".self.Wk"));
      Tensor vs = matmul(x, params.get(p + ".self.Wv"));
      append_row(ctx.kc, ks, t);
      append_row(ctx.vc, vs, t);
      Tensor sa = matmul(attend_row(qs, ctx.kc, ctx.vc, t + 1, {}, cfg.n_heads, inv_sqrt_dk),
                         params.get(p + ".self.Wo"));
      Tensor h1 = layer_norm_rows(add(x, sa), params.get(p + ".ln1.g"), params.get(p + ".ln1.b"));

      // Cross attention over all audio frames with the alignment bias row
      // for step t (0 at position t, -inf elsewhere).
      std::vector<double> bias(T, kNegInf);
      bias[t] = 0.0;
      Tensor qc = matmul(h1, params.get(p + ".cross.Wq"));
      Tensor ca = matmul(attend_row(qc, ctx.ka, ctx.va, T, bias, cfg.n_heads, inv_sqrt_dk),
                         params.get(p + ".cross.Wo"));
      Tensor h2 = layer_norm_rows(add(h1, ca), params.get(p + ".ln2.g"), params.get(p + ".ln2.b"));

      Tensor ff = linear(leaky_relu(linear(h2, params.get(p + ".ff.W1"), params.get(p + ".ff.b1")),
                                    cfg.leaky_slope),
                         params.get(p + ".ff.W2"), params.get(p + ".ff.b2"));
      x = layer_norm_rows(add(h2, ff), params.get(p + ".ln3.g"), params.get(p + ".ln3.b"));
    }

    Tensor v_t = linear(x, params.get("viseme_out.W"), params.get("viseme_out.b"));
    visemes.push_back(v_t);
    prev = v_t;
  }
  return stack_rows(visemes);
}

}  // namespace speechface
