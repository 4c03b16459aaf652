// Copyright 2026 The speechface authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Training and style adaptation. Training runs the full autoregressive
// rollout per sequence (gradients flow through the rollout; no teacher
// forcing), one sequence per optimizer step, and keeps the checkpoint
// with the best validation reconstruction loss.
//
// Adaptation to a new speaker is two-staged over frozen viseme features:
// stage 1 optimizes only a free 64-dim style vector; stage 2 jointly
// refines that vector and the deformation basis. Stage 2 takes the stage-1
// result object, so the stages cannot run out of order.

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "speechface/adam.hpp"
#include "speechface/grad_check.hpp"
#include "speechface/losses.hpp"
#include "speechface/metrics.hpp"
#include "speechface/model.hpp"
#include "speechface/synthetic.hpp"

namespace speechface {

struct TrainConfig {
  double lr = 1e-4;
  std::size_t epochs = 300;
  LossWeights lambda;
  std::uint64_t seed = 1;
  // Global-norm gradient clip guarding the long rollout graphs; 0 turns it
  // off (gradient-check mode).
  double clip_norm = 1.0;
};

// One training/validation sample, fully materialized in memory.
struct TrainSequence {
  FeatureSequence features;
  Tensor gt_displacements;  // T x 3V, constant
  ClosureWeights weights;   // length T
  std::size_t identity = 0;
  std::size_t t_frames = 0;
};

struct TrainData {
  std::vector<TrainSequence> train;
  std::vector<TrainSequence> val;
  TemplateMesh tmpl;
};

struct EpochLoss {
  double total = 0.0, mse = 0.0, vel = 0.0, lip = 0.0;
};

struct TrainResult {
  std::vector<EpochLoss> history;     // summed over train sequences, per epoch
  std::vector<double> val_history;    // validation L_MSE per epoch (empty if no val)
  std::size_t best_epoch = 0;         // 1-based; 0 = initial parameters kept
};

namespace detail {

inline TrainSequence make_train_sequence(const FeatureSequence& feats,
                                         const MeshSequence& gt_positions,
                                         const TemplateMesh& tmpl,
                                         const ClosureWeights& w, std::size_t identity) {
  MeshSequence disp = subtract_template(gt_positions, tmpl);
  TrainSequence s;
  s.features = feats;
  s.gt_displacements = tensor_from_mesh(disp);
  s.weights = w;
  s.identity = identity;
  s.t_frames = gt_positions.t_count;
  if (w.size() != s.t_frames)
    throw ConfigError("train: closure weights length " + std::to_string(w.size()) +
                      " vs " + std::to_string(s.t_frames) + " frames");
  return s;
}

}  // namespace detail

// Autoregressive training over the corpus. Updates `params` in place and
// leaves them at the best-validation checkpoint (last epoch when no
// validation split exists). Deterministic given the seed and data order.
inline TrainResult train(const TrainData& data, ParamStore& params,
                         const ModelConfig& model_cfg, const TrainConfig& cfg) {
  cfg.lambda.validate();
  if (data.train.empty()) throw ConfigError("train: no training sequences");
  for (const TrainSequence& s : data.train)
    if (s.identity >= model_cfg.n_train_ids)
      throw ConfigError("train: identity index beyond style table");

  const std::vector<std::size_t>& lip_region = data.tmpl.lip_region;
  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  AdamState adam(params, adam_cfg);

  TrainResult result;
  ParamStore best = params.clone();
  double best_val = std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochLoss sums;
    for (const TrainSequence& seq : data.train) {
      params.zero_grads();
      GradTape tape;
      Tensor style = style_from_onehot(
          IdentityOneHot::of(seq.identity, model_cfg.n_train_ids), params).vec;
      Tensor pred = forward_displacements(seq.features, seq.t_frames, style, params,
                                          model_cfg);
      Tensor l_mse = loss_mse_t(pred, seq.gt_displacements);
      Tensor l_vel = loss_vel_t(pred, seq.gt_displacements);
      Tensor l_lip = loss_lip_t(pred, seq.gt_displacements, seq.weights, lip_region);
      Tensor total = add(add(scale(l_mse, cfg.lambda.mse), scale(l_vel, cfg.lambda.vel)),
                         scale(l_lip, cfg.lambda.lip));
      const double total_v = total.value();
      if (!std::isfinite(total_v))
        throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch));
      sums.total += total_v;
      sums.mse += l_mse.value();
      sums.vel += l_vel.value();
      sums.lip += l_lip.value();
      tape.backward(total);
      if (cfg.clip_norm > 0) clip_grad_norm(params, cfg.clip_norm);
      adam_step(params, adam);
    }
    result.history.push_back(sums);

    if (!data.val.empty()) {
      NoGradGuard ng;
      double val = 0.0;
      for (const TrainSequence& seq : data.val) {
        Tensor style = style_from_onehot(
            IdentityOneHot::of(seq.identity, model_cfg.n_train_ids), params).vec;
        Tensor pred = forward_displacements(seq.features, seq.t_frames, style, params,
                                            model_cfg);
        val += loss_mse_t(pred, seq.gt_displacements).value();
      }
      result.val_history.push_back(val);
      if (val < best_val) {
        best_val = val;
        best = params.clone();
        result.best_epoch = epoch;
      }
    }
  }

  if (!data.val.empty()) {
    params.assign_values(best);
  } else {
    result.best_epoch = cfg.epochs;
  }
  return result;
}

// --- precomputed visemes -----------------------------------------------------

struct VisemeCache {
  std::uint64_t decoder_hash = 0;
  std::vector<Tensor> visemes;  // one T x 64 constant per sequence
};

// Hash of every parameter the viseme path depends on (audio projection,
// decoder stack, final viseme projection).
inline std::uint64_t viseme_param_hash(const ParamStore& params) {
  return hash_mix(param_hash(params, "audio_proj."), param_hash(params, "dec."),
                  param_hash(params, "viseme_out."));
}

// Decodes every sequence once, without gradients. The cache records the
// decoder hash so staleness is detectable.
inline VisemeCache precompute_visemes(const std::vector<FeatureSequence>& features,
                                      const std::vector<std::size_t>& frame_counts,
                                      const ParamStore& params, const ModelConfig& cfg) {
  if (features.size() != frame_counts.size())
    throw ShapeError("precompute_visemes: feature/frame-count mismatch");
  NoGradGuard ng;
  VisemeCache cache;
  cache.decoder_hash = viseme_param_hash(params);
  for (std::size_t i = 0; i < features.size(); ++i) {
    AudioEmbedding emb = encode_audio(features[i], frame_counts[i], params, kCanonicalFps);
    cache.visemes.push_back(autoregressive_decode(emb.frames, params, cfg.decoder));
  }
  return cache;
}

inline bool cache_fresh(const VisemeCache& cache, const ParamStore& params) {
  return cache.decoder_hash == viseme_param_hash(params);
}

// --- style adaptation --------------------------------------------------------

struct AdaptOptions {
  std::size_t epochs = 300;
  double lr = 1e-4;
  double lambda_mse = 1.0;
  double lambda_vel = 10.0;
  std::size_t init_identity = 0;
  double clip_norm = 1.0;
};

// Reference data for one adaptation sequence: frozen visemes plus the
// tracked ground-truth displacements.
struct AdaptSequence {
  Tensor visemes;           // T x 64 constant (from the cache)
  Tensor gt_displacements;  // T x 3V constant
};

struct Stage1Result {
  Tensor style;  // 1 x 64, optimized
  std::vector<double> curve;
  std::size_t init_identity = 0;
  std::uint64_t decoder_hash = 0;
};

struct Stage2Result {
  Tensor style;
  std::vector<double> curve;
};

namespace detail {

inline Tensor adapt_objective(const Tensor& pred, const Tensor& gt, double l_mse,
                              double l_vel) {
  return add(scale(loss_mse_t(pred, gt), l_mse), scale(loss_vel_t(pred, gt), l_vel));
}

inline std::vector<double> adapt_loop(const std::vector<AdaptSequence>& refs,
                                      ParamStore& trainable, ParamStore& params,
                                      const ModelConfig& model_cfg,
                                      const Tensor& style, const AdaptOptions& opt) {
  AdamConfig ac;
  ac.lr = opt.lr;
  AdamState adam(trainable, ac);
  std::vector<double> curve;
  curve.reserve(opt.epochs);
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    double sum = 0.0;
    for (const AdaptSequence& ref : refs) {
      trainable.zero_grads();
      GradTape tape;
      Tensor pred = motion_synthesis(ref.visemes, style, params,
                                     model_cfg.decoder.leaky_slope);
      Tensor obj = adapt_objective(pred, ref.gt_displacements, opt.lambda_mse,
                                   opt.lambda_vel);
      const double v = obj.value();
      if (!std::isfinite(v)) throw DivergenceError("adapt: non-finite objective");
      sum += v;
      tape.backward(obj);
      if (opt.clip_norm > 0) clip_grad_norm(trainable, opt.clip_norm);
      adam_step(trainable, adam);
    }
    curve.push_back(sum);
  }
  return curve;
}

}  // namespace detail

// Stage 1: optimize only the 64-dim style vector against the references,
// starting from a training identity's embedding. Everything else is
// frozen; the viseme cache must match the decoder parameters.
inline Stage1Result adapt_style_stage1(const std::vector<AdaptSequence>& refs,
                                       const VisemeCache& cache, ParamStore& params,
                                       const ModelConfig& model_cfg,
                                       const AdaptOptions& opt) {
  if (refs.empty()) throw ConfigError("adapt: no reference sequences");
  if (!cache_fresh(cache, params))
    throw CompatError("adapt: viseme cache is stale (decoder parameters changed)");
  if (opt.init_identity >= params.get("style.table").rows())
    throw ConfigError("adapt: init identity beyond style table");

  // Free style vector seeded from the chosen training identity.
  const Tensor& table = params.get("style.table");
  std::vector<double> init(kStyleDim);
  for (std::size_t j = 0; j < kStyleDim; ++j) init[j] = table.at(opt.init_identity, j);
  Tensor style = Tensor::row(std::move(init), /*requires_grad=*/true);

  ParamStore trainable;
  trainable.add("adapt.style", style);

  FreezeGuard freeze(params, {});  // nothing in the main store trains
  Stage1Result out;
  out.curve = detail::adapt_loop(refs, trainable, params, model_cfg, style, opt);
  out.style = style;
  out.init_identity = opt.init_identity;
  out.decoder_hash = cache.decoder_hash;
  if (!cache_fresh(cache, params))
    throw CompatError("adapt: decoder parameters drifted during stage 1");
  return out;
}

// Stage 2: jointly refine the stage-1 style vector and the deformation
// basis. Requires the stage-1 result; all other parameters stay frozen.
inline Stage2Result adapt_basis_stage2(const std::vector<AdaptSequence>& refs,
                                       const VisemeCache& cache, ParamStore& params,
                                       const ModelConfig& model_cfg,
                                       const Stage1Result& stage1,
                                       const AdaptOptions& opt) {
  if (refs.empty()) throw ConfigError("adapt: no reference sequences");
  if (!cache_fresh(cache, params))
    throw CompatError("adapt: viseme cache is stale (decoder parameters changed)");
  if (stage1.decoder_hash != cache.decoder_hash)
    throw CompatError("adapt: stage-1 result belongs to a different decoder");

  Tensor style = stage1.style;
  style.requires_grad = true;
  ParamStore trainable;
  trainable.add("adapt.style", style);
  trainable.add("motion.basis.W", params.get("motion.basis.W"));
  trainable.add("motion.basis.b", params.get("motion.basis.b"));

  FreezeGuard freeze(params, {"motion.basis.W", "motion.basis.b"});
  Stage2Result out;
  out.curve = detail::adapt_loop(refs, trainable, params, model_cfg, style, opt);
  out.style = style;
  if (!cache_fresh(cache, params))
    throw CompatError("adapt: decoder parameters drifted during stage 2");
  return out;
}

// L2_lip of style-conditioned predictions from frozen visemes against the
// references; used for the adaptation report's stage deltas.
inline double adapt_l2_lip(const std::vector<AdaptSequence>& refs, const Tensor& style,
                           const ParamStore& params, const ModelConfig& model_cfg,
                           const TemplateMesh& tmpl, double fps = kCanonicalFps) {
  NoGradGuard ng;
  double sum = 0.0;
  for (const AdaptSequence& ref : refs) {
    Tensor pred = motion_synthesis(ref.visemes, style, params,
                                   model_cfg.decoder.leaky_slope);
    MeshSequence pm = mesh_from_tensor(pred, fps, true);
    MeshSequence gm = mesh_from_tensor(ref.gt_displacements, fps, true);
    sum += metric_l2(pm, gm, tmpl.lip_region);
  }
  return sum / static_cast<double>(refs.size());
}

struct AdaptationReport {
  std::size_t init_identity = 0;
  std::vector<double> stage1_curve, stage2_curve;
  std::vector<double> final_style;  // 64 entries
  double l2_lip_init = 0.0, l2_lip_stage1 = 0.0, l2_lip_stage2 = 0.0;
};

// --- corpus loading ----------------------------------------------------------

// Materialized corpus: train/val sequences carry closure weights and
// identity indices; the test split is kept as raw pieces for adaptation
// and evaluation.
struct Corpus {
  TrainData train_data;
  ModelConfig model_cfg;  // audio_in_dim / mesh_vertices / n_train_ids filled in
  // Held-out split, untouched by training.
  std::vector<FeatureSequence> test_features;
  std::vector<MeshSequence> test_meshes;  // positions
  std::vector<std::vector<std::size_t>> test_closures;
  std::vector<std::size_t> test_speakers;
  double fps = kOracleFps;
};

inline std::string weights_path_for(const std::string& msq_path) {
  if (msq_path.size() > 4 && msq_path.substr(msq_path.size() - 4) == ".msq")
    return msq_path.substr(0, msq_path.size() - 4) + ".w";
  return msq_path + ".w";
}

// Loads a manifest into memory. Train/val entries need closure-weight
// files (written by the `label` command) next to their .msq files unless
// `auto_label` is set, in which case weights are computed on the fly with
// the default labeling parameters.
inline Corpus load_corpus(const Manifest& manifest, const DecoderConfig& decoder_cfg,
                          bool auto_label = false) {
  Corpus corpus;
  corpus.fps = manifest.fps;
  corpus.train_data.tmpl = load_template(manifest.resolve(manifest.template_path));

  // Identity indices: train-split speakers in ascending id order.
  std::vector<std::size_t> train_speakers;
  for (const ManifestSequence& s : manifest.sequences) {
    if (s.split == "test") continue;
    bool seen = false;
    for (std::size_t sp : train_speakers) seen = seen || sp == s.speaker;
    if (!seen) train_speakers.push_back(s.speaker);
  }

  corpus.model_cfg.decoder = decoder_cfg;
  corpus.model_cfg.audio_in_dim = manifest.audio_dim;
  corpus.model_cfg.mesh_vertices = corpus.train_data.tmpl.v_count;
  corpus.model_cfg.n_train_ids = train_speakers.empty() ? 1 : train_speakers.size();

  auto identity_of = [&](std::size_t speaker) {
    for (std::size_t i = 0; i < train_speakers.size(); ++i)
      if (train_speakers[i] == speaker) return i;
    throw ConfigError("corpus: speaker has no identity index");
  };

  for (const ManifestSequence& s : manifest.sequences) {
    FeatureSequence feats = load_features(manifest.resolve(s.ftr));
    MeshSequence mesh = load_mesh_sequence(manifest.resolve(s.msq));
    if (mesh.v_count != corpus.train_data.tmpl.v_count)
      throw CompatError("corpus: sequence vertex count differs from template");

    if (s.split == "test") {
      corpus.test_features.push_back(std::move(feats));
      corpus.test_meshes.push_back(std::move(mesh));
      corpus.test_closures.push_back(s.closures);
      corpus.test_speakers.push_back(s.speaker);
      continue;
    }

    ClosureWeights w;
    const std::string wpath = weights_path_for(manifest.resolve(s.msq));
    if (std::ifstream probe(wpath); probe.good()) {
      w = load_weights(wpath);
    } else if (auto_label) {
      PhonemeTiming timings = load_timings(manifest.resolve(s.phn));
      const auto curve = lip_distance_curve(mesh, corpus.train_data.tmpl);
      const auto closures = detect_closures(curve, timings, manifest.fps,
                                            default_search_window(manifest.fps));
      w = gaussian_weights(closures, mesh.t_count);
    } else {
      throw ConfigError("corpus: missing closure weights " + wpath +
                        " (run the label command first)");
    }

    TrainSequence ts = detail::make_train_sequence(feats, mesh, corpus.train_data.tmpl,
                                                   w, identity_of(s.speaker));
    if (s.split == "val")
      corpus.train_data.val.push_back(std::move(ts));
    else
      corpus.train_data.train.push_back(std::move(ts));
  }
  return corpus;
}

}  // namespace speechface
