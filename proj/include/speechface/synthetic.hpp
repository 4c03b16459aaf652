// Copyright 2026 The speechface authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Procedural articulatory corpus with known ground truth. A 42-vertex
// stylized face is driven by four articulatory channels (jaw-open,
// lip-round, lip-press, smile); each synthetic speaker owns per-channel
// gains, a left/right lip asymmetry and a co-articulation time constant.
// Phonemes map to canonical channel targets; trajectories are the targets
// passed through a one-pole smoother with the speaker's time constant.
//
// Articulation leads the acoustic timeline by a fixed anticipation
// interval, the way lips close before a bilabial is heard; the phoneme
// timing files carry acoustic times while the audio surrogate (a noisy
// per-frame phoneme indicator) is articulation-synchronous, standing in
// for a contextual speech encoder.
//
// All mesh and feature values are quantized to f32 at generation time so
// in-memory data is bit-identical to what the .msq/.ftr round trip yields.

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "speechface/audio.hpp"
#include "speechface/losses.hpp"
#include "speechface/mesh.hpp"
#include "speechface/rng.hpp"

namespace speechface {

constexpr std::size_t kOracleVertices = 42;
constexpr std::size_t kOracleAudioDim = 16;
constexpr double kOracleFps = 30.0;
// Articulation anticipates the acoustic timeline by this much.
constexpr double kAnticipationSec = 0.16;

constexpr std::size_t kChanJaw = 0, kChanRound = 1, kChanPress = 2, kChanSmile = 3;
constexpr std::size_t kNumChannels = 4;

struct SyntheticSpeaker {
  std::uint64_t seed = 0;
  double gains[kNumChannels] = {1.0, 1.0, 1.0, 1.0};  // each in [0.5, 2.0]
  double asymmetry = 0.0;                             // in [-0.5, 0.5]
  double time_constant = 0.06;                        // seconds, in [0.03, 0.12]

  void validate() const {
    for (double g : gains)
      if (!(g >= 0.5 && g <= 2.0)) throw ConfigError("SyntheticSpeaker: gain out of range");
    if (!(asymmetry >= -0.5 && asymmetry <= 0.5))
      throw ConfigError("SyntheticSpeaker: asymmetry out of range");
    if (!(time_constant >= 0.03 && time_constant <= 0.12))
      throw ConfigError("SyntheticSpeaker: time constant out of range");
  }
};

struct SyntheticSequence {
  std::string phonemes;
  PhonemeTiming timings;        // acoustic times
  MeshSequence mesh;            // ground-truth positions, mm
  FeatureSequence features;     // audio surrogate, articulation-synchronous
  TemplateMesh tmpl;
  std::vector<std::size_t> closure_frames;  // construction-time labels
};

inline const std::string& oracle_phoneme_inventory() {
  static const std::string inv = "aeioumbpst";
  return inv;
}

inline bool oracle_is_bilabial(char p) { return p == 'm' || p == 'b' || p == 'p'; }

namespace oracle_detail {

inline double q32(double x) { return static_cast<double>(static_cast<float>(x)); }

// Canonical channel targets per phoneme. Bilabials overshoot the press
// channel so lips reach contact (pair clamping floors the distance at 0),
// modelling tissue compression.
inline void phoneme_targets(char p, double out[kNumChannels]) {
  for (std::size_t c = 0; c < kNumChannels; ++c) out[c] = 0.0;
  switch (p) {
    case 'a': out[kChanJaw] = 1.00; break;
    case 'e': out[kChanJaw] = 0.45; out[kChanSmile] = 0.60; break;
    case 'i': out[kChanJaw] = 0.20; out[kChanSmile] = 1.00; break;
    case 'o': out[kChanJaw] = 0.55; out[kChanRound] = 0.90; break;
    case 'u': out[kChanJaw] = 0.25; out[kChanRound] = 1.00; break;
    case 'm': out[kChanPress] = 2.80; break;
    case 'b': out[kChanPress] = 2.90; out[kChanJaw] = 0.02; break;
    case 'p': out[kChanPress] = 3.00; out[kChanJaw] = 0.05; break;
    case 's': out[kChanJaw] = 0.12; out[kChanSmile] = 0.35; break;
    case 't': out[kChanJaw] = 0.10; out[kChanPress] = 0.10; break;
    default:
      throw ConfigError(std::string("oracle: unknown phoneme '") + p + "'");
  }
}

struct FaceRig {
  TemplateMesh tmpl;
  // Per-channel unit displacement fields, v * 3 each (mm per activation).
  std::vector<double> basis[kNumChannels];
  std::vector<bool> is_lip;  // vertices subject to the asymmetry skew
};

// Vertex layout: 0-7 upper face, 8/9 mouth corners (L/R), 10-14 upper lip
// arc, 15-19 lower lip arc (paired), 20/21 chin, 22-29 jaw line, 30-41
// outer face ring. Units are millimeters.
inline const FaceRig& face_rig() {
  static const FaceRig rig = [] {
    FaceRig r;
    TemplateMesh& t = r.tmpl;
    t.v_count = kOracleVertices;
    t.vertices.assign(kOracleVertices * 3, 0.0);
    auto set = [&t](std::size_t v, double x, double y, double z) {
      t.vertices[v * 3 + 0] = x;
      t.vertices[v * 3 + 1] = y;
      t.vertices[v * 3 + 2] = z;
    };
    // Upper face.
    set(0, -18, 28, 6);  set(1, 18, 28, 6);    // brows
    set(2, -14, 20, 7);  set(3, 14, 20, 7);    // eyes
    set(4, 0, 18, 10);   set(5, 0, -2, 14);    // nose bridge/tip
    set(6, -24, 0, 4);   set(7, 24, 0, 4);     // cheeks
    // Mouth corners.
    set(8, -20, -19, 6); set(9, 20, -19, 6);
    // Lips: five paired columns, resting gap 2 mm.
    const double lip_x[5] = {-14, -7, 0, 7, 14};
    for (int i = 0; i < 5; ++i) {
      set(10 + i, lip_x[i], -18, 8);  // upper
      set(15 + i, lip_x[i], -20, 8);  // lower
    }
    // Chin.
    set(20, -6, -30, 5); set(21, 6, -30, 5);
    // Jaw line.
    const double jaw_x[8] = {-30, -22, -13, -4, 4, 13, 22, 30};
    for (int i = 0; i < 8; ++i) set(22 + i, jaw_x[i], -26 - 6 * std::cos(0.4 * jaw_x[i] / 10.0), 2);
    // Outer ring.
    for (int i = 0; i < 12; ++i) {
      const double ang = M_PI * (0.15 + 0.7 * i / 11.0);
      set(30 + i, 38 * std::cos(ang), 34 * std::sin(ang) - 4, 0);
    }
    t.lip_upper = {10, 11, 12, 13, 14};
    t.lip_lower = {15, 16, 17, 18, 19};
    t.lip_region = {8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21};
    t.fps = kOracleFps;

    r.is_lip.assign(kOracleVertices, false);
    for (std::size_t v = 8; v <= 19; ++v) r.is_lip[v] = true;

    for (auto& b : r.basis) b.assign(kOracleVertices * 3, 0.0);
    auto move = [&r](std::size_t chan, std::size_t v, double dx, double dy, double dz) {
      r.basis[chan][v * 3 + 0] = dx;
      r.basis[chan][v * 3 + 1] = dy;
      r.basis[chan][v * 3 + 2] = dz;
    };
    // Jaw open: lower lip, chin and jaw drop; mouth corners and upper lip
    // follow slightly.
    for (int i = 0; i < 5; ++i) {
      move(kChanJaw, 10 + i, 0, -0.4, 0);
      move(kChanJaw, 15 + i, 0, -5.0, 0);
    }
    move(kChanJaw, 8, 0, -2.0, 0);
    move(kChanJaw, 9, 0, -2.0, 0);
    move(kChanJaw, 20, 0, -6.5, 0);
    move(kChanJaw, 21, 0, -6.5, 0);
    for (int i = 0; i < 8; ++i) move(kChanJaw, 22 + i, 0, -3.5, 0.3);
    // Lip round: corners pull in, lips pucker forward.
    move(kChanRound, 8, 3.5, 0, 0.5);
    move(kChanRound, 9, -3.5, 0, 0.5);
    for (int i = 0; i < 5; ++i) {
      const double x = r.tmpl.vertices[(10 + i) * 3];
      move(kChanRound, 10 + i, -0.25 * x, 0, 2.0);
      move(kChanRound, 15 + i, -0.25 * x, 0, 2.0);
    }
    // Lip press: upper lip down, lower lip up (6 mm of closing per unit),
    // chin rises a touch.
    for (int i = 0; i < 5; ++i) {
      move(kChanPress, 10 + i, 0, -3.0, 0);
      move(kChanPress, 15 + i, 0, 3.0, 0);
    }
    move(kChanPress, 20, 0, 0.5, 0);
    move(kChanPress, 21, 0, 0.5, 0);
    // Smile: corners out and up, lips stretch, cheeks lift.
    move(kChanSmile, 8, -3.0, 2.0, 0.5);
    move(kChanSmile, 9, 3.0, 2.0, 0.5);
    for (int i = 0; i < 5; ++i) {
      const double x = r.tmpl.vertices[(10 + i) * 3];
      move(kChanSmile, 10 + i, 0.12 * x, 0.3, 0);
      move(kChanSmile, 15 + i, 0.12 * x, 0.3, 0);
    }
    move(kChanSmile, 6, 0, 1.0, 0.5);
    move(kChanSmile, 7, 0, 1.0, 0.5);

    // The template itself is served f32-quantized so exports round-trip
    // bit-exactly.
    for (double& v : t.vertices) v = q32(v);
    return r;
  }();
  return rig;
}

}  // namespace oracle_detail

inline const TemplateMesh& oracle_template() { return oracle_detail::face_rig().tmpl; }

// Deterministic speaker from a seed, all parameters inside their
// documented ranges.
inline SyntheticSpeaker gen_speaker(std::uint64_t seed) {
  Rng rng(hash_mix(seed, 0x5EACE5));
  SyntheticSpeaker s;
  s.seed = seed;
  for (double& g : s.gains) g = rng.uniform(0.5, 2.0);
  s.asymmetry = rng.uniform(-0.5, 0.5);
  s.time_constant = rng.uniform(0.03, 0.12);
  return s;
}

// Generates the ground-truth mesh trajectory, acoustic phoneme timings,
// audio surrogate and construction-time closure labels for one phoneme
// string. `noise_seed` controls only the feature noise.
inline SyntheticSequence synth_sequence(const SyntheticSpeaker& spk,
                                        const std::string& phonemes,
                                        double duration_per_phoneme = 0.2,
                                        std::uint64_t noise_seed = 0) {
  spk.validate();
  if (phonemes.empty()) throw ConfigError("synth_sequence: empty phoneme string");
  if (!(duration_per_phoneme > 0)) throw ConfigError("synth_sequence: bad phoneme duration");
  const auto& rig = oracle_detail::face_rig();
  const double fps = kOracleFps;
  const std::size_t n_ph = phonemes.size();
  const double total_sec = duration_per_phoneme * static_cast<double>(n_ph);
  const std::size_t T = static_cast<std::size_t>(std::lround(total_sec * fps));
  if (T < 2) throw ConfigError("synth_sequence: sequence too short");
  if (noise_seed == 0) {
    noise_seed = spk.seed;
    for (char c : phonemes) noise_seed = hash_mix(noise_seed, static_cast<std::uint64_t>(c));
  }

  SyntheticSequence out;
  out.phonemes = phonemes;
  out.tmpl = rig.tmpl;

  // Acoustic timings tile the sequence without gaps.
  for (std::size_t i = 0; i < n_ph; ++i)
    out.timings.push_back({std::string(1, phonemes[i]),
                           duration_per_phoneme * static_cast<double>(i),
                           duration_per_phoneme * static_cast<double>(i + 1)});

  // Index of the phoneme being articulated at frame t (acoustic index
  // shifted early by the anticipation interval).
  auto articulated = [&](std::size_t t) -> std::size_t {
    const double u = static_cast<double>(t) / fps + kAnticipationSec;
    const long idx = static_cast<long>(std::floor(u / duration_per_phoneme));
    return static_cast<std::size_t>(std::clamp(idx, 0L, static_cast<long>(n_ph) - 1));
  };

  // Channel trajectories: one-pole smoothing toward per-phoneme targets,
  // initialized at the first target.
  const double alpha = 1.0 - std::exp(-(1.0 / fps) / spk.time_constant);
  double act[kNumChannels];
  oracle_detail::phoneme_targets(phonemes[articulated(0)], act);
  out.mesh = MeshSequence::zeros(T, kOracleVertices, fps, false);

  for (std::size_t t = 0; t < T; ++t) {
    double target[kNumChannels];
    oracle_detail::phoneme_targets(phonemes[articulated(t)], target);
    if (t > 0)
      for (std::size_t c = 0; c < kNumChannels; ++c)
        act[c] += alpha * (target[c] - act[c]);

    double* frame = out.mesh.frame(t);
    for (std::size_t v = 0; v < kOracleVertices; ++v) {
      // Left/right lip gain skew.
      double side = 1.0;
      if (rig.is_lip[v]) {
        const double x = rig.tmpl.vertices[v * 3];
        if (x < 0) side = 1.0 + spk.asymmetry;
        else if (x > 0) side = 1.0 - spk.asymmetry;
      }
      for (std::size_t a = 0; a < 3; ++a) {
        double d = 0.0;
        for (std::size_t c = 0; c < kNumChannels; ++c)
          d += spk.gains[c] * act[c] * rig.basis[c][v * 3 + a];
        frame[v * 3 + a] = rig.tmpl.vertices[v * 3 + a] + side * d;
      }
    }
    // Lip pair contact: once an upper lip vertex would pass below its
    // partner, both collapse to the midline (tissue contact).
    for (std::size_t i = 0; i < rig.tmpl.lip_upper.size(); ++i) {
      const std::size_t u = rig.tmpl.lip_upper[i], l = rig.tmpl.lip_lower[i];
      double& yu = frame[u * 3 + 1];
      double& yl = frame[l * 3 + 1];
      if (yu <= yl) {
        const double mid = 0.5 * (yu + yl);
        yu = mid;
        yl = mid;
      }
    }
    for (std::size_t i = 0; i < kOracleVertices * 3; ++i)
      frame[i] = oracle_detail::q32(frame[i]);
  }

  // Audio surrogate: articulation-synchronous phoneme indicator plus a
  // small deterministic dither, f32-quantized like the .ftr payload.
  out.features.frames = T;
  out.features.dim = kOracleAudioDim;
  out.features.frame_rate = fps;
  out.features.v.assign(T * kOracleAudioDim, 0.0);
  const std::string& inv = oracle_phoneme_inventory();
  for (std::size_t t = 0; t < T; ++t) {
    const char p = phonemes[articulated(t)];
    const std::size_t k = inv.find(p);
    for (std::size_t d = 0; d < kOracleAudioDim; ++d) {
      const double noise =
          (static_cast<double>(hash_mix(noise_seed, t, d) >> 11) * 0x1.0p-53 - 0.5) * 0.06;
      double val = noise;
      if (d == k) val += 1.0;
      out.features.at(t, d) = oracle_detail::q32(val);
    }
  }

  // Construction-time closure labels: the same windowed argmin the
  // labeling pipeline applies, run on the generator's own curve.
  const std::vector<double> curve = lip_distance_curve(out.mesh, out.tmpl);
  out.closure_frames =
      detect_closures(curve, out.timings, fps, default_search_window(fps));
  return out;
}

// --- corpus export -----------------------------------------------------------

struct CorpusOptions {
  std::size_t phonemes_per_sequence = 15;
  double phoneme_duration = 0.2;  // seconds; 15 x 0.2 s = 90 frames at 30 fps
};

struct ManifestSequence {
  std::size_t speaker = 0;
  std::string msq, ftr, phn;  // paths relative to the manifest
  std::string split;          // train / val / test
  std::vector<std::size_t> closures;
};

struct Manifest {
  std::uint64_t seed = 0;
  double fps = kOracleFps;
  std::size_t audio_dim = kOracleAudioDim;
  std::string template_path;
  std::vector<std::uint64_t> speaker_seeds;
  std::vector<ManifestSequence> sequences;
  std::string root;  // directory of the manifest file; not serialized

  std::string resolve(const std::string& rel) const {
    return root.empty() ? rel : root + "/" + rel;
  }
};

// Random phoneme string over the inventory with at least one bilabial.
inline std::string random_phoneme_string(Rng& rng, std::size_t length) {
  const std::string& inv = oracle_phoneme_inventory();
  std::string s(length, 'a');
  bool has_bilabial = false;
  for (auto& c : s) {
    c = inv[static_cast<std::size_t>(rng.below(inv.size()))];
    has_bilabial = has_bilabial || oracle_is_bilabial(c);
  }
  if (!has_bilabial) {
    const char b[3] = {'m', 'b', 'p'};
    s[static_cast<std::size_t>(rng.below(length))] = b[rng.below(3)];
  }
  return s;
}

inline void save_manifest(const Manifest& m, const std::string& path) {
  nlohmann::json j;
  j["version"] = 1;
  j["seed"] = m.seed;
  j["fps"] = m.fps;
  j["audio_dim"] = m.audio_dim;
  j["template"] = m.template_path;
  j["speaker_seeds"] = m.speaker_seeds;
  nlohmann::json seqs = nlohmann::json::array();
  for (const ManifestSequence& s : m.sequences) {
    nlohmann::json e;
    e["speaker"] = s.speaker;
    e["msq"] = s.msq;
    e["ftr"] = s.ftr;
    e["phn"] = s.phn;
    e["split"] = s.split;
    e["closures"] = s.closures;
    seqs.push_back(e);
  }
  j["sequences"] = seqs;
  std::ofstream os(path);
  if (!os) throw IoError("cannot write manifest: " + path);
  os << j.dump(2) << "\n";
}

inline Manifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read manifest: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  Manifest m;
  try {
    m.seed = j.at("seed").get<std::uint64_t>();
    m.fps = j.at("fps").get<double>();
    m.audio_dim = j.at("audio_dim").get<std::size_t>();
    m.template_path = j.at("template").get<std::string>();
    m.speaker_seeds = j.at("speaker_seeds").get<std::vector<std::uint64_t>>();
    for (const auto& e : j.at("sequences")) {
      ManifestSequence s;
      s.speaker = e.at("speaker").get<std::size_t>();
      s.msq = e.at("msq").get<std::string>();
      s.ftr = e.at("ftr").get<std::string>();
      s.phn = e.at("phn").get<std::string>();
      s.split = e.at("split").get<std::string>();
      s.closures = e.at("closures").get<std::vector<std::size_t>>();
      m.sequences.push_back(s);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  m.root = std::filesystem::path(path).parent_path().string();
  return m;
}

// Writes a full corpus: shared template, per-sequence .msq/.ftr/.phn and
// the manifest with train/val/test splits. The last speaker is held out
// entirely as the test/adaptation speaker; every other speaker donates
// its final sequence to validation. Deterministic: identical arguments
// produce byte-identical files.
inline Manifest export_corpus(std::size_t n_speakers, std::size_t sequences_per,
                              const std::string& out_dir, std::uint64_t seed,
                              const CorpusOptions& opt = {}) {
  if (n_speakers == 0 || sequences_per == 0)
    throw ConfigError("export_corpus: need at least one speaker and sequence");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("export_corpus: cannot create " + out_dir);

  Manifest m;
  m.seed = seed;
  m.template_path = "template.msq";
  save_template(oracle_template(), out_dir + "/template.msq");

  for (std::size_t sp = 0; sp < n_speakers; ++sp) {
    const std::uint64_t spk_seed = hash_mix(seed, 0xC0FFEE, sp);
    m.speaker_seeds.push_back(spk_seed);
    const SyntheticSpeaker spk = gen_speaker(spk_seed);
    const std::string spk_dir = out_dir + "/spk" + std::to_string(sp);
    fs::create_directories(spk_dir, ec);
    if (ec) throw IoError("export_corpus: cannot create " + spk_dir);

    for (std::size_t sq = 0; sq < sequences_per; ++sq) {
      Rng rng(hash_mix(seed, sp * 1000 + sq, 0x5E9));
      const std::string phonemes = random_phoneme_string(rng, opt.phonemes_per_sequence);
      const SyntheticSequence seq =
          synth_sequence(spk, phonemes, opt.phoneme_duration, hash_mix(spk_seed, sq, 0x9015E));

      ManifestSequence entry;
      entry.speaker = sp;
      const std::string base = "spk" + std::to_string(sp) + "/seq" + std::to_string(sq);
      entry.msq = base + ".msq";
      entry.ftr = base + ".ftr";
      entry.phn = base + ".phn";
      const bool test_speaker = (n_speakers > 1 && sp == n_speakers - 1);
      const bool val_seq = (!test_speaker && n_speakers > 1 && sq == sequences_per - 1);
      entry.split = test_speaker ? "test" : (val_seq ? "val" : "train");
      entry.closures = seq.closure_frames;

      save_mesh_sequence(seq.mesh, out_dir + "/" + entry.msq);
      save_features(seq.features, out_dir + "/" + entry.ftr);
      save_timings(seq.timings, out_dir + "/" + entry.phn);
      m.sequences.push_back(entry);
    }
  }
  save_manifest(m, out_dir + "/manifest.json");
  m.root = out_dir;
  return m;
}

}  // namespace speechface
