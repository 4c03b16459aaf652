// Copyright 2026 The speechface authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Model assembly: parameter initialization, checkpoint I/O and the
// end-to-end forward pass (features -> audio embedding -> autoregressive
// viseme decode -> style-conditioned displacements).

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "speechface/audio.hpp"
#include "speechface/binio.hpp"
#include "speechface/motion.hpp"
#include "speechface/param_store.hpp"
#include "speechface/rng.hpp"
#include "speechface/viseme.hpp"

namespace speechface {

struct ModelConfig {
  DecoderConfig decoder;
  std::size_t audio_in_dim = 16;  // feature-file dimensionality D_a
  std::size_t n_train_ids = 8;
  std::size_t mesh_vertices = 42;

  void validate() const {
    decoder.validate();
    if (!audio_in_dim || !n_train_ids || !mesh_vertices)
      throw ConfigError("ModelConfig: all sizes must be positive");
  }
};

namespace detail {

inline Tensor xavier(std::vector<std::size_t> shape, std::size_t fan_in,
                     std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-limit, limit);
  return Tensor::from_values(std::move(shape), std::move(v));
}

inline Tensor zeros1(std::size_t n) { return Tensor::zeros({n}); }
inline Tensor ones1(std::size_t n) {
  return Tensor::from_values({n}, std::vector<double>(n, 1.0));
}

}  // namespace detail

// Xavier-uniform weights (zero biases, unit layer-norm gains) in a fixed
// parameter order, drawn from one splitmix64 stream: identical seeds give
// bit-identical stores.
inline ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t d = cfg.decoder.d_model;
  const std::size_t w = cfg.decoder.attn_width();
  const std::size_t ff = cfg.decoder.d_ff;
  const std::size_t out3v = cfg.mesh_vertices * 3;
  Rng rng(seed);
  ParamStore p;

  p.add("audio_proj.W", detail::xavier({cfg.audio_in_dim, d}, cfg.audio_in_dim, d, rng));
  p.add("audio_proj.b", detail::zeros1(d));

  for (std::size_t l = 0; l < cfg.decoder.n_layers; ++l) {
    const std::string pre = "dec.l" + std::to_string(l);
    for (const char* blk : {".self", ".cross"}) {
      p.add(pre + blk + ".Wq", detail::xavier({d, w}, d, w, rng));
      p.add(pre + blk + ".Wk", detail::xavier({d, w}, d, w, rng));
      p.add(pre + blk + ".Wv", detail::xavier({d, w}, d, w, rng));
      p.add(pre + blk + ".Wo", detail::xavier({w, d}, w, d, rng));
    }
    for (const char* ln : {".ln1", ".ln2", ".ln3"}) {
      p.add(pre + ln + ".g", detail::ones1(d));
      p.add(pre + ln + ".b", detail::zeros1(d));
    }
    p.add(pre + ".ff.W1", detail::xavier({d, ff}, d, ff, rng));
    p.add(pre + ".ff.b1", detail::zeros1(ff));
    p.add(pre + ".ff.W2", detail::xavier({ff, d}, ff, d, rng));
    p.add(pre + ".ff.b2", detail::zeros1(d));
  }

  p.add("viseme_out.W", detail::xavier({d, d}, d, d, rng));
  p.add("viseme_out.b", detail::zeros1(d));

  p.add("style.table", detail::xavier({cfg.n_train_ids, kStyleDim}, cfg.n_train_ids, kStyleDim, rng));

  p.add("motion.l1.W", detail::xavier({d + kStyleDim, d}, d + kStyleDim, d, rng));
  p.add("motion.l1.b", detail::zeros1(d));
  for (int l = 2; l <= 4; ++l) {
    p.add("motion.l" + std::to_string(l) + ".W", detail::xavier({d, d}, d, d, rng));
    p.add("motion.l" + std::to_string(l) + ".b", detail::zeros1(d));
  }
  p.add("motion.basis.W", detail::xavier({d, out3v}, d, out3v, rng));
  p.add("motion.basis.b", detail::zeros1(out3v));
  return p;
}

// --- checkpoints -------------------------------------------------------------

// Checkpoint file: "IMCK", u32 version=1, u32 tensor count; per tensor
// u16 name length, UTF-8 name, u8 rank, u32 dims, little-endian f32
// payload. Values are stored at 32-bit precision. The architecture rides
// along as one extra rank-1 tensor named "meta.arch".

namespace detail {

constexpr const char* kMetaArchName = "meta.arch";

inline std::vector<double> pack_arch(const ModelConfig& cfg) {
  return {static_cast<double>(cfg.decoder.d_model),
          static_cast<double>(cfg.decoder.n_heads),
          static_cast<double>(cfg.decoder.d_head),
          static_cast<double>(cfg.decoder.d_ff),
          static_cast<double>(cfg.decoder.n_layers),
          cfg.decoder.leaky_slope,
          static_cast<double>(cfg.audio_in_dim),
          static_cast<double>(cfg.n_train_ids),
          static_cast<double>(cfg.mesh_vertices)};
}

inline ModelConfig unpack_arch(const std::vector<double>& v) {
  if (v.size() != 9) throw FormatError("checkpoint: meta.arch has wrong length");
  ModelConfig cfg;
  cfg.decoder.d_model = static_cast<std::size_t>(v[0]);
  cfg.decoder.n_heads = static_cast<std::size_t>(v[1]);
  cfg.decoder.d_head = static_cast<std::size_t>(v[2]);
  cfg.decoder.d_ff = static_cast<std::size_t>(v[3]);
  cfg.decoder.n_layers = static_cast<std::size_t>(v[4]);
  cfg.decoder.leaky_slope = v[5];
  cfg.decoder.start_token.clear();
  cfg.audio_in_dim = static_cast<std::size_t>(v[6]);
  cfg.n_train_ids = static_cast<std::size_t>(v[7]);
  cfg.mesh_vertices = static_cast<std::size_t>(v[8]);
  cfg.validate();
  return cfg;
}

inline void write_ckpt_tensor(std::ostream& os, const std::string& name,
                              const std::vector<std::size_t>& shape,
                              const std::vector<double>& values) {
  if (name.size() > 0xffff) throw FormatError("checkpoint: name too long");
  binio::write_u16(os, static_cast<std::uint16_t>(name.size()));
  binio::write_bytes(os, name.data(), name.size());
  binio::write_u8(os, static_cast<std::uint8_t>(shape.size()));
  for (std::size_t d : shape) binio::write_u32(os, static_cast<std::uint32_t>(d));
  for (double v : values) binio::write_f32(os, static_cast<float>(v));
}

}  // namespace detail

inline void save_checkpoint(const ParamStore& params, const ModelConfig& cfg,
                            const std::string& path) {
  std::ofstream os = binio::open_out(path);
  binio::write_magic(os, "IMCK");
  binio::write_u32(os, 1);
  binio::write_u32(os, static_cast<std::uint32_t>(params.size() + 1));
  const std::vector<double> arch = detail::pack_arch(cfg);
  detail::write_ckpt_tensor(os, detail::kMetaArchName, {arch.size()}, arch);
  for (const auto& [name, t] : params.entries())
    detail::write_ckpt_tensor(os, name, t.shape, *t.data);
}

struct Checkpoint {
  ParamStore params;
  ModelConfig config;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is = binio::open_in(path);
  binio::expect_magic(is, "IMCK", "checkpoint");
  const std::uint32_t version = binio::read_u32(is);
  if (version != 1) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t count = binio::read_u32(is);

  Checkpoint out;
  bool have_arch = false;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = binio::read_u16(is);
    std::string name(name_len, '\0');
    binio::read_bytes(is, name.data(), name_len);
    const std::uint8_t rank = binio::read_u8(is);
    if (rank == 0) throw FormatError("checkpoint: rank-0 tensor " + name);
    std::vector<std::size_t> shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = binio::read_u32(is);
      n *= d;
    }
    std::vector<double> values(n);
    for (double& v : values) v = binio::read_f32(is);
    if (name == detail::kMetaArchName) {
      out.config = detail::unpack_arch(values);
      have_arch = true;
    } else {
      out.params.add(name, Tensor::from_values(std::move(shape), std::move(values)));
    }
  }
  if (!have_arch) throw FormatError("checkpoint: missing meta.arch");

  // Sanity-link architecture and payload.
  if (out.params.has("motion.basis.W") &&
      out.params.get("motion.basis.W").cols() != out.config.mesh_vertices * 3)
    throw CompatError("checkpoint: deformation basis disagrees with recorded vertex count");
  return out;
}

// --- end-to-end forward ------------------------------------------------------

// Motion frame count for a feature sequence synthesized at `fps`.
inline std::size_t synth_frame_count(const FeatureSequence& f, double fps) {
  const double duration = static_cast<double>(f.frames) / f.frame_rate;
  const long t = std::lround(duration * fps);
  return static_cast<std::size_t>(std::max(1L, t));
}

// Features -> T x 64 audio embedding (resample + learned projection).
inline AudioEmbedding encode_audio(const FeatureSequence& feats, std::size_t t_frames,
                                   const ParamStore& params, double fps) {
  if (feats.dim == 0) throw ShapeError("encode_audio: empty features");
  Tensor resampled = resample_linear(feats, t_frames);
  return project_audio(resampled, params, fps);
}

// Full pipeline to per-vertex displacements (T x 3V). Participates in the
// gradient graph when called under a tape with trainable parameters.
inline Tensor forward_displacements(const FeatureSequence& feats, std::size_t t_frames,
                                    const Tensor& style, const ParamStore& params,
                                    const ModelConfig& cfg, double fps = kCanonicalFps) {
  AudioEmbedding emb = encode_audio(feats, t_frames, params, fps);
  Tensor visemes = autoregressive_decode(emb.frames, params, cfg.decoder);
  return motion_synthesis(visemes, style, params, cfg.decoder.leaky_slope);
}

}  // namespace speechface
