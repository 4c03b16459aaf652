// Copyright 2026 The speechface authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Mesh sequence container and on-disk formats. A mesh sequence stores
// either absolute vertex positions or per-vertex displacements over a
// template; templates are one-frame sequences with a JSON sidecar naming
// the lip vertices.

#pragma once

#include <cmath>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "speechface/binio.hpp"
#include "speechface/errors.hpp"

namespace speechface {

struct MeshSequence {
  std::size_t v_count = 0;
  std::size_t t_count = 0;
  double fps = 0.0;
  bool is_displacement = false;
  std::vector<double> v;  // t * v * 3, row-major

  double at(std::size_t t, std::size_t vert, std::size_t axis) const {
    return v[(t * v_count + vert) * 3 + axis];
  }
  double& at(std::size_t t, std::size_t vert, std::size_t axis) {
    return v[(t * v_count + vert) * 3 + axis];
  }
  const double* frame(std::size_t t) const { return v.data() + t * v_count * 3; }
  double* frame(std::size_t t) { return v.data() + t * v_count * 3; }

  void validate() const {
    if (v_count == 0 || t_count == 0) throw FormatError("MeshSequence: empty");
    if (!(fps > 0)) throw FormatError("MeshSequence: bad fps");
    if (v.size() != t_count * v_count * 3) throw FormatError("MeshSequence: payload size mismatch");
    for (double x : v)
      if (!std::isfinite(x)) throw NumericError("MeshSequence: non-finite vertex");
  }

  static MeshSequence zeros(std::size_t t, std::size_t vcount, double fps,
                            bool is_displacement) {
    MeshSequence m;
    m.t_count = t;
    m.v_count = vcount;
    m.fps = fps;
    m.is_displacement = is_displacement;
    m.v.assign(t * vcount * 3, 0.0);
    return m;
  }
};

// Neutral-pose mesh plus lip metadata. lip_upper[i] pairs with
// lip_lower[i]; lip_region must cover both lists.
struct TemplateMesh {
  std::size_t v_count = 0;
  std::vector<double> vertices;  // v * 3
  std::vector<std::size_t> lip_upper, lip_lower;
  std::vector<std::size_t> lip_region;
  double fps = kDefaultFpsHint;

  static constexpr double kDefaultFpsHint = 30.0;

  void validate() const {
    if (v_count == 0 || vertices.size() != v_count * 3)
      throw FormatError("TemplateMesh: bad vertex payload");
    if (lip_upper.empty() || lip_upper.size() != lip_lower.size())
      throw MetadataError("TemplateMesh: lip pairs missing or unpaired");
    std::set<std::size_t> region(lip_region.begin(), lip_region.end());
    for (std::size_t i : lip_upper)
      if (i >= v_count || !region.count(i))
        throw MetadataError("TemplateMesh: lip_upper index " + std::to_string(i) +
                            " out of range or outside lip_region");
    for (std::size_t i : lip_lower)
      if (i >= v_count || !region.count(i))
        throw MetadataError("TemplateMesh: lip_lower index " + std::to_string(i) +
                            " out of range or outside lip_region");
    for (std::size_t i : lip_region)
      if (i >= v_count) throw MetadataError("TemplateMesh: lip_region index out of range");
  }
};

// --- .msq ------------------------------------------------------------------

// Mesh sequence file: "MSQ1", u32 version=1, u32 V, u32 T, f32 fps,
// u8 is_displacement, little-endian f32 T*V*3 payload.
inline void save_mesh_sequence(const MeshSequence& m, const std::string& path) {
  m.validate();
  std::ofstream os = binio::open_out(path);
  binio::write_magic(os, "MSQ1");
  binio::write_u32(os, 1);
  binio::write_u32(os, static_cast<std::uint32_t>(m.v_count));
  binio::write_u32(os, static_cast<std::uint32_t>(m.t_count));
  binio::write_f32(os, static_cast<float>(m.fps));
  binio::write_u8(os, m.is_displacement ? 1 : 0);
  for (double x : m.v) binio::write_f32(os, static_cast<float>(x));
}

inline MeshSequence load_mesh_sequence(const std::string& path) {
  std::ifstream is = binio::open_in(path);
  binio::expect_magic(is, "MSQ1", "msq");
  const std::uint32_t version = binio::read_u32(is);
  if (version != 1) throw FormatError("msq: unsupported version " + std::to_string(version));
  MeshSequence m;
  m.v_count = binio::read_u32(is);
  m.t_count = binio::read_u32(is);
  m.fps = binio::read_f32(is);
  m.is_displacement = binio::read_u8(is) != 0;
  if (m.v_count == 0 || m.t_count == 0) throw FormatError("msq: empty shape");
  m.v.resize(m.t_count * m.v_count * 3);
  for (double& x : m.v) x = binio::read_f32(is);
  m.validate();
  return m;
}

// --- templates ---------------------------------------------------------------

// A template is a one-frame .msq of positions plus "<path>.json" holding
// {"lip_upper": [...], "lip_lower": [...], "lip_region": [...]}.
inline void save_template(const TemplateMesh& tmpl, const std::string& path) {
  tmpl.validate();
  MeshSequence m;
  m.v_count = tmpl.v_count;
  m.t_count = 1;
  m.fps = tmpl.fps;
  m.is_displacement = false;
  m.v = tmpl.vertices;
  save_mesh_sequence(m, path);

  nlohmann::json j;
  j["lip_upper"] = tmpl.lip_upper;
  j["lip_lower"] = tmpl.lip_lower;
  j["lip_region"] = tmpl.lip_region;
  std::ofstream os(path + ".json");
  if (!os) throw IoError("cannot write template sidecar: " + path + ".json");
  os << j.dump(2) << "\n";
}

inline TemplateMesh load_template(const std::string& path) {
  MeshSequence m = load_mesh_sequence(path);
  if (m.t_count != 1) throw FormatError("template: expected a single frame, got " + std::to_string(m.t_count));
  if (m.is_displacement) throw FormatError("template: must store positions");

  TemplateMesh tmpl;
  tmpl.v_count = m.v_count;
  tmpl.vertices = m.v;
  tmpl.fps = m.fps;

  std::ifstream is(path + ".json");
  if (!is) throw MetadataError("template sidecar missing: " + path + ".json");
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw MetadataError(std::string("template sidecar unreadable: ") + e.what());
  }
  if (!j.contains("lip_upper") || !j.contains("lip_lower") || !j.contains("lip_region"))
    throw MetadataError("template sidecar lacks lip metadata");
  tmpl.lip_upper = j["lip_upper"].get<std::vector<std::size_t>>();
  tmpl.lip_lower = j["lip_lower"].get<std::vector<std::size_t>>();
  tmpl.lip_region = j["lip_region"].get<std::vector<std::size_t>>();
  tmpl.validate();
  return tmpl;
}

}  // namespace speechface
