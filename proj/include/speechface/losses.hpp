// Copyright 2026 The speechface authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Training supervision: reconstruction, velocity and lip-contact losses,
// plus the automatic lip-closure labeling pipeline (lip-distance curves,
// local-minimum search before each bilabial consonant, Gaussian frame
// weights).
//
// The differentiable *_t variants operate on T x 3V tensors; the
// MeshSequence overloads wrap them without a tape, so there is a single
// definition of each loss.

#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "speechface/mesh.hpp"
#include "speechface/motion.hpp"
#include "speechface/ops.hpp"

namespace speechface {

struct LossWeights {
  double mse = 1.0;
  double vel = 10.0;
  double lip = 5.0;

  void validate() const {
    if (mse < 0 || vel < 0 || lip < 0)
      throw ConfigError("LossWeights: weights must be non-negative");
  }
};

struct PhonemeInterval {
  std::string label;
  double start = 0.0;  // seconds
  double end = 0.0;
};
using PhonemeTiming = std::vector<PhonemeInterval>;

inline void validate_timings(const PhonemeTiming& timings) {
  for (std::size_t i = 0; i < timings.size(); ++i) {
    if (!(timings[i].start < timings[i].end))
      throw FormatError("PhonemeTiming: interval " + std::to_string(i) + " has start >= end");
    if (i > 0 && timings[i].start < timings[i - 1].start)
      throw FormatError("PhonemeTiming: intervals not sorted by start");
  }
}

// Per-frame lip-loss weights in [0, 1].
using ClosureWeights = std::vector<double>;

// --- losses -------------------------------------------------------------

// Sum over frames and vertices of squared coordinate error.
inline Tensor loss_mse_t(const Tensor& pred, const Tensor& gt) {
  detail::require_same_shape(pred, gt, "loss_mse");
  return sum_sq(sub(pred, gt));
}

// Velocity consistency: squared error of frame-to-frame differences.
// A single-frame sequence is degenerate and contributes zero.
inline Tensor loss_vel_t(const Tensor& pred, const Tensor& gt, bool* degenerate = nullptr) {
  detail::require_same_shape(pred, gt, "loss_vel");
  const std::size_t t = pred.rows();
  if (degenerate) *degenerate = t < 2;
  if (t < 2) return Tensor::zeros({1});
  Tensor dp = sub(slice_rows(pred, 1, t), slice_rows(pred, 0, t - 1));
  Tensor dg = sub(slice_rows(gt, 1, t), slice_rows(gt, 0, t - 1));
  return sum_sq(sub(dp, dg));
}

// Lip-region reconstruction weighted per frame by the closure weights.
inline Tensor loss_lip_t(const Tensor& pred, const Tensor& gt, const ClosureWeights& w,
                         const std::vector<std::size_t>& lip_region) {
  detail::require_same_shape(pred, gt, "loss_lip");
  if (w.size() != pred.rows())
    throw ShapeError("loss_lip: " + std::to_string(w.size()) + " weights for " +
                     std::to_string(pred.rows()) + " frames");
  if (lip_region.empty()) throw MetadataError("loss_lip: empty lip region");
  Tensor diff = gather_cols(sub(pred, gt), vertex_cols(lip_region));
  return row_weighted_sum_sq(diff, w);
}

inline Tensor loss_total_t(const Tensor& pred, const Tensor& gt, const ClosureWeights& w,
                           const std::vector<std::size_t>& lip_region,
                           const LossWeights& lambda) {
  lambda.validate();
  Tensor total = scale(loss_mse_t(pred, gt), lambda.mse);
  total = add(total, scale(loss_vel_t(pred, gt), lambda.vel));
  total = add(total, scale(loss_lip_t(pred, gt, w, lip_region), lambda.lip));
  return total;
}

namespace detail {

inline void check_loss_pair(const MeshSequence& pred, const MeshSequence& gt) {
  pred.validate();
  gt.validate();
  if (pred.t_count != gt.t_count || pred.v_count != gt.v_count)
    throw ShapeError("loss: sequence shapes differ");
  if (pred.is_displacement != gt.is_displacement)
    throw ShapeError("loss: sequences use different bases (positions vs displacements)");
}

}  // namespace detail

inline double loss_mse(const MeshSequence& pred, const MeshSequence& gt) {
  detail::check_loss_pair(pred, gt);
  return loss_mse_t(tensor_from_mesh(pred), tensor_from_mesh(gt)).value();
}

inline double loss_vel(const MeshSequence& pred, const MeshSequence& gt,
                       bool* degenerate = nullptr) {
  detail::check_loss_pair(pred, gt);
  return loss_vel_t(tensor_from_mesh(pred), tensor_from_mesh(gt), degenerate).value();
}

inline double loss_lip(const MeshSequence& pred, const MeshSequence& gt,
                       const ClosureWeights& w, const TemplateMesh& tmpl) {
  detail::check_loss_pair(pred, gt);
  return loss_lip_t(tensor_from_mesh(pred), tensor_from_mesh(gt), w, tmpl.lip_region).value();
}

inline double loss_total(const MeshSequence& pred, const MeshSequence& gt,
                         const ClosureWeights& w, const TemplateMesh& tmpl,
                         const LossWeights& lambda) {
  detail::check_loss_pair(pred, gt);
  return loss_total_t(tensor_from_mesh(pred), tensor_from_mesh(gt), w, tmpl.lip_region, lambda)
      .value();
}

// --- lip distance and closure labeling -------------------------------------

// Mean Euclidean distance between paired upper/lower lip vertices for one
// frame. Displacement sequences are lifted onto the template first.
inline double lip_distance(const MeshSequence& seq, std::size_t t, const TemplateMesh& tmpl) {
  if (tmpl.lip_upper.empty()) throw MetadataError("lip_distance: no lip pairs");
  if (seq.v_count != tmpl.v_count) throw CompatError("lip_distance: V mismatch");
  if (t >= seq.t_count) throw ShapeError("lip_distance: frame out of range");
  double sum = 0.0;
  for (std::size_t i = 0; i < tmpl.lip_upper.size(); ++i) {
    const std::size_t u = tmpl.lip_upper[i], l = tmpl.lip_lower[i];
    double d2 = 0.0;
    for (std::size_t a = 0; a < 3; ++a) {
      double pu = seq.at(t, u, a), pl = seq.at(t, l, a);
      if (seq.is_displacement) {
        pu += tmpl.vertices[u * 3 + a];
        pl += tmpl.vertices[l * 3 + a];
      }
      const double d = pu - pl;
      d2 += d * d;
    }
    sum += std::sqrt(d2);
  }
  return sum / static_cast<double>(tmpl.lip_upper.size());
}

inline std::vector<double> lip_distance_curve(const MeshSequence& seq, const TemplateMesh& tmpl) {
  std::vector<double> curve(seq.t_count);
  for (std::size_t t = 0; t < seq.t_count; ++t) curve[t] = lip_distance(seq, t, tmpl);
  return curve;
}

inline bool is_bilabial(const std::string& label) {
  if (label.size() != 1) return false;
  const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(label[0])));
  return c == 'm' || c == 'b' || c == 'p';
}

inline std::size_t default_search_window(double fps) {
  return static_cast<std::size_t>(std::max(1L, std::lround(0.25 * fps)));
}

// For each bilabial interval, the lip closure is the minimum of the lip
// distance curve in the window [consonant_frame - search_window,
// consonant_frame] (ties resolve to the earliest frame; the closure forms
// before the consonant is heard). Duplicates collapse; timings that map
// beyond the sequence are skipped with a warning.
inline std::vector<std::size_t> detect_closures(const std::vector<double>& curve,
                                                const PhonemeTiming& timings, double fps,
                                                std::size_t search_window,
                                                std::vector<std::string>* warnings = nullptr) {
  if (search_window < 1) throw ConfigError("detect_closures: search window must be >= 1");
  validate_timings(timings);
  std::set<std::size_t> found;
  for (const PhonemeInterval& ph : timings) {
    if (!is_bilabial(ph.label)) continue;
    const long cf = std::lround(ph.start * fps);
    if (cf < 0 || static_cast<std::size_t>(cf) >= curve.size()) {
      if (warnings)
        warnings->push_back("bilabial '" + ph.label + "' at " + std::to_string(ph.start) +
                            "s maps beyond the sequence; skipped");
      continue;
    }
    const std::size_t c = static_cast<std::size_t>(cf);
    const std::size_t lo = c >= search_window ? c - search_window : 0;
    std::size_t best = lo;
    for (std::size_t f = lo; f <= c; ++f)
      if (curve[f] < curve[best]) best = f;
    found.insert(best);
  }
  return {found.begin(), found.end()};
}

// Gaussian frame weights around each closure: w[c + k] takes
// exp(-k^2 / (2 sigma^2)) for |k| <= radius, combined across closures by
// pointwise max and clipped to the sequence bounds.
inline ClosureWeights gaussian_weights(const std::vector<std::size_t>& closures,
                                       std::size_t t_count, int radius = 2,
                                       double sigma = 1.0) {
  if (!(sigma > 0.0)) throw ConfigError("gaussian_weights: sigma must be positive");
  if (radius < 0) throw ConfigError("gaussian_weights: radius must be >= 0");
  ClosureWeights w(t_count, 0.0);
  for (std::size_t c : closures) {
    if (c >= t_count) throw ShapeError("gaussian_weights: closure frame beyond sequence");
    for (int k = -radius; k <= radius; ++k) {
      const long f = static_cast<long>(c) + k;
      if (f < 0 || f >= static_cast<long>(t_count)) continue;
      const double g = std::exp(-static_cast<double>(k) * static_cast<double>(k) /
                                (2.0 * sigma * sigma));
      w[static_cast<std::size_t>(f)] = std::max(w[static_cast<std::size_t>(f)], g);
    }
  }
  return w;
}

// Binary variant: 1 within `radius` of a closure, 0 elsewhere.
inline ClosureWeights binary_weights(const std::vector<std::size_t>& closures,
                                     std::size_t t_count, int radius = 2) {
  if (radius < 0) throw ConfigError("binary_weights: radius must be >= 0");
  ClosureWeights w(t_count, 0.0);
  for (std::size_t c : closures) {
    if (c >= t_count) throw ShapeError("binary_weights: closure frame beyond sequence");
    for (int k = -radius; k <= radius; ++k) {
      const long f = static_cast<long>(c) + k;
      if (f >= 0 && f < static_cast<long>(t_count)) w[static_cast<std::size_t>(f)] = 1.0;
    }
  }
  return w;
}

// --- text file formats ----------------------------------------------------

// Phoneme timing file: one "label<TAB>start_sec<TAB>end_sec" per line.
inline void save_timings(const PhonemeTiming& timings, const std::string& path) {
  validate_timings(timings);
  std::ofstream os(path);
  if (!os) throw IoError("cannot write timings: " + path);
  os.precision(9);
  for (const PhonemeInterval& ph : timings)
    os << ph.label << "\t" << ph.start << "\t" << ph.end << "\n";
}

inline PhonemeTiming load_timings(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read timings: " + path);
  PhonemeTiming out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    PhonemeInterval ph;
    if (!std::getline(ss, ph.label, '\t'))
      throw FormatError("timings: bad line " + std::to_string(lineno));
    std::string s1, s2;
    if (!std::getline(ss, s1, '\t') || !std::getline(ss, s2))
      throw FormatError("timings: bad line " + std::to_string(lineno));
    try {
      ph.start = std::stod(s1);
      ph.end = std::stod(s2);
    } catch (const std::exception&) {
      throw FormatError("timings: unparsable numbers on line " + std::to_string(lineno));
    }
    out.push_back(ph);
  }
  validate_timings(out);
  return out;
}

// Closure-weight file: one float per line, length T.
inline void save_weights(const ClosureWeights& w, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write weights: " + path);
  os.precision(17);
  for (double x : w) os << x << "\n";
}

inline ClosureWeights load_weights(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read weights: " + path);
  ClosureWeights w;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    try {
      w.push_back(std::stod(line));
    } catch (const std::exception&) {
      throw FormatError("weights: unparsable line in " + path);
    }
  }
  for (double x : w)
    if (!(x >= 0.0 && x <= 1.0)) throw FormatError("weights: value outside [0,1]");
  return w;
}

}  // namespace speechface
