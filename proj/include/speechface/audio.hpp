// Copyright 2026 The speechface authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Audio feature frontend: WAV ingestion, log-mel filterbank features,
// linear resampling to the motion frame rate, and the learned projection
// to the 64-dim per-frame audio embedding. The filterbank is a
// deterministic stand-in for a large pretrained speech encoder; the .ftr
// file hook lets externally computed features enter the same pipeline.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "speechface/binio.hpp"
#include "speechface/ops.hpp"
#include "speechface/param_store.hpp"
#include "speechface/tensor.hpp"

namespace speechface {

constexpr std::size_t kAudioDim = 64;       // embedding width a-hat
constexpr double kCanonicalSampleRate = 16000.0;
constexpr double kCanonicalFps = 30.0;      // motion frame rate

struct Waveform {
  std::vector<double> samples;  // in [-1, 1]
  double sample_rate = 0.0;
};

struct FeatureSequence {
  std::size_t frames = 0, dim = 0;
  double frame_rate = 0.0;
  std::vector<double> v;  // row-major frames x dim

  double at(std::size_t t, std::size_t d) const { return v[t * dim + d]; }
  double& at(std::size_t t, std::size_t d) { return v[t * dim + d]; }

  void validate() const {
    if (frames < 1) throw FormatError("FeatureSequence: empty");
    if (dim < 1) throw FormatError("FeatureSequence: zero dim");
    if (!(frame_rate > 0)) throw FormatError("FeatureSequence: bad frame rate");
    if (v.size() != frames * dim) throw FormatError("FeatureSequence: payload size mismatch");
    for (double x : v)
      if (!std::isfinite(x)) throw NumericError("FeatureSequence: non-finite value");
  }
};

// Per-frame audio embedding at the motion frame rate; `frames` is part of
// the trainable graph when produced under a tape.
struct AudioEmbedding {
  Tensor frames;  // T x 64
  double fps = 0.0;
};

// --- WAV ---------------------------------------------------------------

// Reads a mono PCM16 RIFF/WAVE file. Samples are normalized by 32768, so
// full-scale input covers [-1, 32767/32768]. Stereo or non-PCM16 content
// is a FormatError; truncation is an IoError.
inline Waveform load_waveform(const std::string& path) {
  std::ifstream is = binio::open_in(path);
  binio::expect_magic(is, "RIFF", "wav");
  binio::read_u32(is);  // riff size, unused
  binio::expect_magic(is, "WAVE", "wav");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t sample_rate = 0;
  bool have_fmt = false;
  Waveform out;

  while (true) {
    char id[4];
    is.read(id, 4);
    if (is.gcount() == 0) break;  // clean end of chunks
    if (is.gcount() != 4) throw IoError("wav: truncated chunk header");
    std::uint32_t size = binio::read_u32(is);
    std::string tag(id, 4);
    if (tag == "fmt ") {
      if (size < 16) throw FormatError("wav: short fmt chunk");
      format = binio::read_u16(is);
      channels = binio::read_u16(is);
      sample_rate = binio::read_u32(is);
      binio::read_u32(is);  // byte rate
      binio::read_u16(is);  // block align
      bits = binio::read_u16(is);
      for (std::uint32_t i = 16; i < size; ++i) binio::read_u8(is);
      have_fmt = true;
    } else if (tag == "data") {
      if (!have_fmt) throw FormatError("wav: data before fmt");
      if (format != 1) throw FormatError("wav: only PCM supported, got format " + std::to_string(format));
      if (channels != 1) throw FormatError("wav: only mono supported, got " + std::to_string(channels) + " channels");
      if (bits != 16) throw FormatError("wav: only 16-bit supported, got " + std::to_string(bits));
      if (size % 2 != 0) throw FormatError("wav: odd data size");
      const std::size_t n = size / 2;
      out.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const std::uint16_t u = binio::read_u16(is);
        const std::int16_t s = static_cast<std::int16_t>(u);
        out.samples[i] = static_cast<double>(s) / 32768.0;
      }
      out.sample_rate = static_cast<double>(sample_rate);
      if (out.samples.empty()) throw FormatError("wav: empty data chunk");
      return out;
    } else {
      // skip unknown chunk (word-aligned)
      const std::uint32_t skip = size + (size & 1);
      for (std::uint32_t i = 0; i < skip; ++i) binio::read_u8(is);
    }
    if (size & 1) {
      // fmt chunks are even in practice; keep alignment anyway
    }
  }
  throw FormatError("wav: no data chunk");
}

inline void save_waveform(const Waveform& w, const std::string& path) {
  std::ofstream os = binio::open_out(path);
  const std::uint32_t data_size = static_cast<std::uint32_t>(w.samples.size() * 2);
  binio::write_magic(os, "RIFF");
  binio::write_u32(os, 36 + data_size);
  binio::write_magic(os, "WAVE");
  binio::write_magic(os, "fmt ");
  binio::write_u32(os, 16);
  binio::write_u16(os, 1);  // PCM
  binio::write_u16(os, 1);  // mono
  binio::write_u32(os, static_cast<std::uint32_t>(w.sample_rate));
  binio::write_u32(os, static_cast<std::uint32_t>(w.sample_rate) * 2);
  binio::write_u16(os, 2);
  binio::write_u16(os, 16);
  binio::write_magic(os, "data");
  binio::write_u32(os, data_size);
  for (double s : w.samples) {
    double c = std::clamp(s, -1.0, 32767.0 / 32768.0);
    const std::int16_t q = static_cast<std::int16_t>(std::lround(c * 32768.0));
    binio::write_u16(os, static_cast<std::uint16_t>(q));
  }
}

// --- filterbank ---------------------------------------------------------

namespace detail {

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular mel filter edge frequencies: n_mels + 2 points from 0 to
// nyquist, equally spaced on the mel scale.
inline std::vector<double> mel_edges(std::size_t n_mels, double sample_rate) {
  const double mel_hi = hz_to_mel(sample_rate / 2.0);
  std::vector<double> hz(n_mels + 2);
  for (std::size_t j = 0; j < hz.size(); ++j)
    hz[j] = mel_to_hz(mel_hi * static_cast<double>(j) / static_cast<double>(n_mels + 1));
  return hz;
}

}  // namespace detail

// Log triangular-filterbank energies. Windowing convention: Hann windows
// of `win_sec`, hopped by `hop_sec`, first window starting at sample 0;
// frame count = 1 + floor((N - win) / hop). One second of 16 kHz audio at
// the 25 ms / 20 ms defaults therefore gives 49 frames. Energies are
// floored at 1e-10 before the (natural) log, so silence maps to
// log(1e-10) in every band.
inline FeatureSequence filterbank_features(const Waveform& w,
                                           std::size_t n_mels = 40,
                                           double win_sec = 0.025,
                                           double hop_sec = 0.020) {
  if (w.samples.empty() || !(w.sample_rate > 0))
    throw FormatError("filterbank: empty waveform");
  const std::size_t win = static_cast<std::size_t>(std::lround(win_sec * w.sample_rate));
  const std::size_t hop = static_cast<std::size_t>(std::lround(hop_sec * w.sample_rate));
  if (win < 2 || hop < 1) throw NumericError("filterbank: window too small");
  if (w.samples.size() < win)
    throw NumericError("filterbank: waveform shorter than one window (" +
                       std::to_string(w.samples.size()) + " < " + std::to_string(win) + ")");
  const std::size_t n_frames = 1 + (w.samples.size() - win) / hop;

  std::size_t n_fft = 1;
  while (n_fft < win) n_fft <<= 1;
  const std::size_t n_bins = n_fft / 2 + 1;

  // Hann window.
  std::vector<double> hann(win);
  for (std::size_t i = 0; i < win; ++i)
    hann[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) / static_cast<double>(win - 1));

  // DFT twiddle tables (real input, positive-frequency bins only).
  std::vector<double> cos_t(n_bins * win), sin_t(n_bins * win);
  for (std::size_t k = 0; k < n_bins; ++k)
    for (std::size_t i = 0; i < win; ++i) {
      const double ang = 2.0 * M_PI * static_cast<double>(k) * static_cast<double>(i) /
                         static_cast<double>(n_fft);
      cos_t[k * win + i] = std::cos(ang);
      sin_t[k * win + i] = std::sin(ang);
    }

  // Triangular filters as per-bin weights.
  const std::vector<double> edges = detail::mel_edges(n_mels, w.sample_rate);
  std::vector<double> fb(n_mels * n_bins, 0.0);
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * w.sample_rate / static_cast<double>(n_fft);
      double weight = 0.0;
      if (f > lo && f < hi)
        weight = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
      fb[m * n_bins + k] = weight;
    }
  }

  FeatureSequence out;
  out.frames = n_frames;
  out.dim = n_mels;
  out.frame_rate = w.sample_rate / static_cast<double>(hop);
  out.v.assign(n_frames * n_mels, 0.0);

  std::vector<double> windowed(win), power(n_bins);
  for (std::size_t t = 0; t < n_frames; ++t) {
    const double* s = w.samples.data() + t * hop;
    for (std::size_t i = 0; i < win; ++i) windowed[i] = s[i] * hann[i];
    for (std::size_t k = 0; k < n_bins; ++k) {
      double re = 0.0, im = 0.0;
      const double* ct = cos_t.data() + k * win;
      const double* st = sin_t.data() + k * win;
      for (std::size_t i = 0; i < win; ++i) {
        re += windowed[i] * ct[i];
        im -= windowed[i] * st[i];
      }
      power[k] = re * re + im * im;
    }
    for (std::size_t m = 0; m < n_mels; ++m) {
      double e = 0.0;
      const double* f = fb.data() + m * n_bins;
      for (std::size_t k = 0; k < n_bins; ++k) e += f[k] * power[k];
      out.at(t, m) = std::log(std::max(e, 1e-10));
    }
  }
  return out;
}

// --- resampling ----------------------------------------------------------

// Linear interpolation of feature rows onto `target_len` frames. Endpoints
// map to endpoints: output row t samples input position
// t * (T_a - 1) / (T - 1); target_len == 1 returns the first frame.
inline Tensor resample_linear(const FeatureSequence& f, std::size_t target_len) {
  f.validate();
  if (target_len < 1) throw ShapeError("resample_linear: target length must be >= 1");
  Tensor out = Tensor::alloc({target_len, f.dim}, false);
  if (target_len == 1) {
    for (std::size_t d = 0; d < f.dim; ++d) out.at(0, d) = f.at(0, d);
    return out;
  }
  const double step = static_cast<double>(f.frames - 1) / static_cast<double>(target_len - 1);
  for (std::size_t t = 0; t < target_len; ++t) {
    const double pos = static_cast<double>(t) * step;
    const std::size_t i0 = std::min(static_cast<std::size_t>(pos), f.frames - 1);
    const std::size_t i1 = std::min(i0 + 1, f.frames - 1);
    const double a = pos - static_cast<double>(i0);
    for (std::size_t d = 0; d < f.dim; ++d)
      out.at(t, d) = (1.0 - a) * f.at(i0, d) + a * f.at(i1, d);
  }
  return out;
}

// --- learned projection ----------------------------------------------------

// Per-frame linear map from resampled features to the 64-dim embedding.
// This is the single trainable entry point of audio into the model.
inline AudioEmbedding project_audio(const Tensor& resampled, const ParamStore& params,
                                    double fps) {
  const Tensor& w = params.get("audio_proj.W");
  const Tensor& b = params.get("audio_proj.b");
  if (resampled.cols() != w.rows())
    throw ShapeError("project_audio: features dim " + std::to_string(resampled.cols()) +
                     " vs projection " + w.shape_str());
  AudioEmbedding out;
  out.frames = linear(resampled, w, b);
  out.fps = fps;
  return out;
}

// --- .ftr files ------------------------------------------------------------

// Feature file: "FTR1", u32 version=1, u32 T, u32 D, f32 frame_rate,
// little-endian f32 row-major payload.
inline void save_features(const FeatureSequence& f, const std::string& path) {
  f.validate();
  std::ofstream os = binio::open_out(path);
  binio::write_magic(os, "FTR1");
  binio::write_u32(os, 1);
  binio::write_u32(os, static_cast<std::uint32_t>(f.frames));
  binio::write_u32(os, static_cast<std::uint32_t>(f.dim));
  binio::write_f32(os, static_cast<float>(f.frame_rate));
  for (double x : f.v) binio::write_f32(os, static_cast<float>(x));
}

inline FeatureSequence load_features(const std::string& path) {
  std::ifstream is = binio::open_in(path);
  binio::expect_magic(is, "FTR1", "ftr");
  const std::uint32_t version = binio::read_u32(is);
  if (version != 1) throw FormatError("ftr: unsupported version " + std::to_string(version));
  FeatureSequence f;
  f.frames = binio::read_u32(is);
  f.dim = binio::read_u32(is);
  f.frame_rate = binio::read_f32(is);
  if (f.frames == 0 || f.dim == 0) throw FormatError("ftr: empty shape");
  f.v.resize(f.frames * f.dim);
  for (double& x : f.v) x = binio::read_f32(is);
  f.validate();
  return f;
}

}  // namespace speechface
