// Copyright 2026 The speechface authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Style-adaptable motion decoder: a 64-dim style embedding is concatenated
// with each viseme frame, pushed through four leaky-ReLU layers, and
// mapped by a final linear deformation basis to per-vertex displacements.
// The basis (motion.basis.W/.b) is the part refined per speaker in
// adaptation stage 2.

#pragma once

#include <string>
#include <vector>

#include "speechface/mesh.hpp"
#include "speechface/ops.hpp"
#include "speechface/param_store.hpp"
#include "speechface/tensor.hpp"

namespace speechface {

constexpr std::size_t kStyleDim = 64;

struct StyleEmbedding {
  Tensor vec;  // 1 x 64

  void validate() const {
    if (vec.rank() != 2 || vec.rows() != 1 || vec.cols() != kStyleDim)
      throw ShapeError("StyleEmbedding: expected 1x64, got " + vec.shape_str());
    if (!vec.all_finite()) throw NumericError("StyleEmbedding: non-finite entry");
  }
};

struct IdentityOneHot {
  std::vector<double> v;

  static IdentityOneHot of(std::size_t index, std::size_t n) {
    if (index >= n) throw ConfigError("IdentityOneHot: index out of range");
    IdentityOneHot id;
    id.v.assign(n, 0.0);
    id.v[index] = 1.0;
    return id;
  }

  void validate() const {
    if (v.empty()) throw ConfigError("IdentityOneHot: empty");
    std::size_t ones = 0;
    for (double x : v) {
      if (x != 0.0 && x != 1.0) throw ConfigError("IdentityOneHot: entries must be 0 or 1");
      if (x == 1.0) ++ones;
    }
    if (ones != 1) throw ConfigError("IdentityOneHot: exactly one entry must be 1");
  }
};

// Broadcast a 1 x d row to m x d. Backward sums over the broadcast rows.
inline Tensor repeat_rows(const Tensor& x, std::size_t m) {
  detail::require_2d(x, "repeat_rows");
  if (x.rows() != 1) throw ShapeError("repeat_rows: expected a single row");
  const std::size_t d = x.cols();
  const bool rec = detail::rec(x);
  Tensor out = Tensor::alloc({m, d}, rec);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = x.at(0, j);
  if (rec) {
    detail::prep(x);
    GradTape::active()->record([x, out, m, d] {
      double* dx = x.grad->data();
      const double* dout = out.grad->data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < d; ++j) dx[j] += dout[i * d + j];
    });
  }
  return out;
}

// Row selection from the trained style table (a linear layer applied to a
// one-hot): gradient flows only into the selected row.
inline StyleEmbedding style_from_onehot(const IdentityOneHot& id, const ParamStore& params) {
  id.validate();
  const Tensor& table = params.get("style.table");
  if (table.rows() != id.v.size())
    throw ShapeError("style_from_onehot: one-hot of length " + std::to_string(id.v.size()) +
                     " vs table " + table.shape_str());
  Tensor onehot = Tensor::row(id.v);
  StyleEmbedding s;
  s.vec = matmul(onehot, table);
  return s;
}

// Per-frame displacement synthesis: concat(viseme_t, style) -> 4 x
// (linear 64 + leaky-ReLU) -> deformation basis. Returns T x 3V.
inline Tensor motion_synthesis(const Tensor& visemes, const Tensor& style,
                               const ParamStore& params, double leaky_slope = 0.01) {
  detail::require_2d(visemes, "motion_synthesis");
  if (style.rank() != 2 || style.rows() != 1 || style.cols() != kStyleDim)
    throw ShapeError("motion_synthesis: style must be 1x64, got " + style.shape_str());
  const std::size_t t = visemes.rows();
  Tensor x = concat_cols({visemes, repeat_rows(style, t)});
  Tensor h = x;
  for (int layer = 1; layer <= 4; ++layer) {
    const std::string p = "motion.l" + std::to_string(layer);
    h = leaky_relu(linear(h, params.get(p + ".W"), params.get(p + ".b")), leaky_slope);
  }
  return linear(h, params.get("motion.basis.W"), params.get("motion.basis.b"));
}

// Number of mesh vertices the deformation basis targets.
inline std::size_t basis_vertex_count(const ParamStore& params) {
  const Tensor& w = params.get("motion.basis.W");
  if (w.cols() % 3 != 0) throw ShapeError("deformation basis width is not a multiple of 3");
  return w.cols() / 3;
}

// Displacement tensor (T x 3V) -> mesh sequence.
inline MeshSequence mesh_from_tensor(const Tensor& m, double fps, bool is_displacement) {
  if (m.rank() != 2 || m.cols() % 3 != 0)
    throw ShapeError("mesh_from_tensor: expected T x 3V, got " + m.shape_str());
  MeshSequence out;
  out.t_count = m.rows();
  out.v_count = m.cols() / 3;
  out.fps = fps;
  out.is_displacement = is_displacement;
  out.v = *m.data;
  return out;
}

inline Tensor tensor_from_mesh(const MeshSequence& m) {
  m.validate();
  return Tensor::from_values({m.t_count, m.v_count * 3}, m.v);
}

// positions = template + displacements, frame by frame.
inline MeshSequence apply_template(const MeshSequence& disp, const TemplateMesh& tmpl) {
  disp.validate();
  tmpl.validate();
  if (!disp.is_displacement)
    throw ShapeError("apply_template: input already holds positions");
  if (disp.v_count != tmpl.v_count)
    throw CompatError("apply_template: displacement V=" + std::to_string(disp.v_count) +
                      " vs template V=" + std::to_string(tmpl.v_count));
  MeshSequence out = disp;
  out.is_displacement = false;
  for (std::size_t t = 0; t < disp.t_count; ++t) {
    double* f = out.frame(t);
    for (std::size_t i = 0; i < disp.v_count * 3; ++i) f[i] += tmpl.vertices[i];
  }
  return out;
}

// Inverse of apply_template.
inline MeshSequence subtract_template(const MeshSequence& pos, const TemplateMesh& tmpl) {
  pos.validate();
  if (pos.is_displacement)
    throw ShapeError("subtract_template: input already holds displacements");
  if (pos.v_count != tmpl.v_count)
    throw CompatError("subtract_template: V mismatch");
  MeshSequence out = pos;
  out.is_displacement = true;
  for (std::size_t t = 0; t < pos.t_count; ++t) {
    double* f = out.frame(t);
    for (std::size_t i = 0; i < pos.v_count * 3; ++i) f[i] -= tmpl.vertices[i];
  }
  return out;
}

// Columns of the T x 3V displacement/position matrix that belong to the
// given vertex subset (three consecutive columns per vertex).
inline std::vector<std::size_t> vertex_cols(const std::vector<std::size_t>& vertices) {
  std::vector<std::size_t> cols;
  cols.reserve(vertices.size() * 3);
  for (std::size_t v : vertices) {
    cols.push_back(3 * v);
    cols.push_back(3 * v + 1);
    cols.push_back(3 * v + 2);
  }
  return cols;
}

}  // namespace speechface
