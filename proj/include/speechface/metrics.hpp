// Copyright 2026 The speechface authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Evaluation metrics: mean vertex L2 over face/lip subsets, dynamic time
// warping similarity (F-DTW over all vertices, Lip-DTW over the lip
// region) and the Lip-sync score (mean of per-frame maximal lip errors).
//
// DTW here uses unit steps {(1,0),(0,1),(1,1)}, frame cost = mean
// per-vertex Euclidean distance over the subset, and is normalized by the
// warping path length. Ties between equal-cost paths resolve to the
// shortest path, which makes the normalized value well defined and lets
// tests compare against brute-force path enumeration exactly.

#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "speechface/mesh.hpp"

namespace speechface {

struct MetricReport {
  double l2_face = 0.0;
  double l2_lip = 0.0;
  double f_dtw = 0.0;
  double lip_dtw = 0.0;
  double lip_sync = 0.0;
  std::size_t sequences = 0;
};

namespace detail {

inline void check_metric_pair(const MeshSequence& pred, const MeshSequence& gt) {
  pred.validate();
  gt.validate();
  if (pred.t_count != gt.t_count || pred.v_count != gt.v_count)
    throw ShapeError("metric: sequence shapes differ");
  if (pred.is_displacement != gt.is_displacement)
    throw ShapeError("metric: sequences use different bases");
}

inline double vertex_distance(const MeshSequence& a, std::size_t ta,
                              const MeshSequence& b, std::size_t tb, std::size_t v) {
  double d2 = 0.0;
  for (std::size_t ax = 0; ax < 3; ++ax) {
    const double d = a.at(ta, v, ax) - b.at(tb, v, ax);
    d2 += d * d;
  }
  return std::sqrt(d2);
}

// Mean per-vertex distance over a subset between frame ta of a and frame
// tb of b.
inline double frame_cost(const MeshSequence& a, std::size_t ta, const MeshSequence& b,
                         std::size_t tb, const std::vector<std::size_t>& subset) {
  double sum = 0.0;
  for (std::size_t v : subset) sum += vertex_distance(a, ta, b, tb, v);
  return sum / static_cast<double>(subset.size());
}

inline std::vector<std::size_t> all_vertices(std::size_t v_count) {
  std::vector<std::size_t> out(v_count);
  for (std::size_t i = 0; i < v_count; ++i) out[i] = i;
  return out;
}

}  // namespace detail

// Mean over frames and subset vertices of per-vertex Euclidean distance.
inline double metric_l2(const MeshSequence& pred, const MeshSequence& gt,
                        const std::vector<std::size_t>& subset) {
  detail::check_metric_pair(pred, gt);
  if (subset.empty()) throw MetadataError("metric_l2: empty vertex subset");
  for (std::size_t v : subset)
    if (v >= pred.v_count) throw ShapeError("metric_l2: subset index out of range");
  double sum = 0.0;
  for (std::size_t t = 0; t < pred.t_count; ++t)
    for (std::size_t v : subset) sum += detail::vertex_distance(pred, t, gt, t, v);
  return sum / static_cast<double>(pred.t_count * subset.size());
}

// Path-length-normalized DTW distance between two sequences over a vertex
// subset. Sequences may differ in length but must share vertex count and
// basis.
inline double dtw_distance(const MeshSequence& a, const MeshSequence& b,
                           const std::vector<std::size_t>& subset) {
  a.validate();
  b.validate();
  if (a.v_count != b.v_count) throw ShapeError("dtw_distance: vertex counts differ");
  if (a.is_displacement != b.is_displacement)
    throw ShapeError("dtw_distance: sequences use different bases");
  if (subset.empty()) throw MetadataError("dtw_distance: empty vertex subset");
  const std::size_t n = a.t_count, m = b.t_count;

  struct Cell {
    double total = std::numeric_limits<double>::infinity();
    std::size_t len = 0;
  };
  std::vector<Cell> dp(n * m);
  auto better = [](const Cell& x, const Cell& y) {
    if (x.total != y.total) return x.total < y.total;
    return x.len < y.len;
  };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double c = detail::frame_cost(a, i, b, j, subset);
      Cell best;
      if (i == 0 && j == 0) {
        best = Cell{0.0, 0};
      } else {
        if (i > 0 && better(dp[(i - 1) * m + j], best)) best = dp[(i - 1) * m + j];
        if (j > 0 && better(dp[i * m + j - 1], best)) best = dp[i * m + j - 1];
        if (i > 0 && j > 0 && better(dp[(i - 1) * m + j - 1], best))
          best = dp[(i - 1) * m + j - 1];
      }
      dp[i * m + j] = Cell{best.total + c, best.len + 1};
    }
  }
  const Cell& end = dp[n * m - 1];
  return end.total / static_cast<double>(end.len);
}

// Mean over frames of the maximal per-vertex error within the lip region.
inline double lip_sync(const MeshSequence& pred, const MeshSequence& gt,
                       const std::vector<std::size_t>& lip_region) {
  detail::check_metric_pair(pred, gt);
  if (lip_region.empty()) throw MetadataError("lip_sync: empty lip region");
  double sum = 0.0;
  for (std::size_t t = 0; t < pred.t_count; ++t) {
    double worst = 0.0;
    for (std::size_t v : lip_region)
      worst = std::max(worst, detail::vertex_distance(pred, t, gt, t, v));
    sum += worst;
  }
  return sum / static_cast<double>(pred.t_count);
}

// Per-sequence metrics averaged over the batch. F-DTW runs over all
// vertices, Lip-DTW and Lip-sync over the template's lip region.
inline MetricReport evaluate(const std::vector<MeshSequence>& preds,
                             const std::vector<MeshSequence>& gts,
                             const std::vector<TemplateMesh>& templates) {
  if (preds.size() != gts.size() || preds.size() != templates.size())
    throw ShapeError("evaluate: pred/gt/template counts differ");
  if (preds.empty()) throw ShapeError("evaluate: no sequences");
  MetricReport r;
  r.sequences = preds.size();
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto face = detail::all_vertices(preds[i].v_count);
    const auto& lips = templates[i].lip_region;
    r.l2_face += metric_l2(preds[i], gts[i], face);
    r.l2_lip += metric_l2(preds[i], gts[i], lips);
    r.f_dtw += dtw_distance(preds[i], gts[i], face);
    r.lip_dtw += dtw_distance(preds[i], gts[i], lips);
    r.lip_sync += lip_sync(preds[i], gts[i], lips);
  }
  const double k = static_cast<double>(preds.size());
  r.l2_face /= k;
  r.l2_lip /= k;
  r.f_dtw /= k;
  r.lip_dtw /= k;
  r.lip_sync /= k;
  return r;
}

inline std::string metric_csv_header() {
  return "sequences,l2_face,l2_lip,f_dtw,lip_dtw,lip_sync";
}

inline std::string metric_csv_row(const MetricReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g,%.9g,%.9g", r.sequences, r.l2_face,
                r.l2_lip, r.f_dtw, r.lip_dtw, r.lip_sync);
  return buf;
}

}  // namespace speechface
