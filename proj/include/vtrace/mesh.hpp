#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "vtrace/error.hpp"
#include "vtrace/vec3.hpp"

namespace vtrace {

using Triangle = std::array<std::int32_t, 3>;

struct TriMesh {
  std::vector<Vec3> vertices;  ///< mm
  std::vector<Triangle> triangles;
  std::vector<double> scalars;  ///< optional, one per vertex when non-empty

  bool empty() const { return triangles.empty(); }

  void validate() const {
    const auto n = static_cast<std::int32_t>(vertices.size());
    for (const auto& t : triangles) {
      for (auto v : t)
        if (v < 0 || v >= n) throw Error(ErrorCode::invalid_argument, "triangle index out of range");
      if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2])
        throw Error(ErrorCode::invalid_argument, "degenerate triangle");
    }
    if (!scalars.empty() && scalars.size() != vertices.size())
      throw Error(ErrorCode::invalid_argument, "scalar count differs from vertex count");
  }
};

inline double surface_area(const TriMesh& m) {
  double a = 0.0;
  for (const auto& t : m.triangles)
    a += 0.5 * norm(cross(m.vertices[t[1]] - m.vertices[t[0]], m.vertices[t[2]] - m.vertices[t[0]]));
  return a;
}

/// Enclosed volume by the divergence theorem; positive for outward-facing
/// closed meshes.
inline double signed_volume(const TriMesh& m) {
  double v = 0.0;
  for (const auto& t : m.triangles)
    v += dot(m.vertices[t[0]], cross(m.vertices[t[1]], m.vertices[t[2]]));
  return v / 6.0;
}

using EdgeKey = std::pair<std::int32_t, std::int32_t>;

/// Number of triangles incident to each undirected edge.
inline std::map<EdgeKey, int> edge_use_counts(const TriMesh& m) {
  std::map<EdgeKey, int> counts;
  for (const auto& t : m.triangles)
    for (int e = 0; e < 3; ++e) {
      const auto a = t[e];
      const auto b = t[(e + 1) % 3];
      ++counts[{std::min(a, b), std::max(a, b)}];
    }
  return counts;
}

/// Every edge is shared by exactly two triangles.
inline bool is_watertight(const TriMesh& m) {
  if (m.triangles.empty()) return false;
  for (const auto& [edge, count] : edge_use_counts(m))
    if (count != 2) return false;
  return true;
}

/// Every edge is shared by one or two triangles.
inline bool is_edge_manifold(const TriMesh& m) {
  for (const auto& [edge, count] : edge_use_counts(m))
    if (count > 2) return false;
  return true;
}

/// V - E + F over referenced vertices.
inline long euler_characteristic(const TriMesh& m) {
  std::vector<char> used(m.vertices.size(), 0);
  for (const auto& t : m.triangles)
    for (auto v : t) used[static_cast<std::size_t>(v)] = 1;
  const long v = std::count(used.begin(), used.end(), 1);
  const long e = static_cast<long>(edge_use_counts(m).size());
  return v - e + static_cast<long>(m.triangles.size());
}

/// Taubin lambda/mu low-pass smoothing with uniform umbrella weights. One
/// iteration is a shrink step (lambda) followed by an inflate step (mu), with
/// mu = lambda / (passband * lambda - 1). Boundary vertices stay fixed.
inline TriMesh smooth_windowed_sinc(const TriMesh& mesh, int iterations = 10, double passband = 0.01,
                                    double lambda = 0.33) {
  TriMesh out = mesh;
  if (iterations <= 0 || mesh.triangles.empty()) return out;
  const double mu = lambda / (passband * lambda - 1.0);

  const std::size_t nv = mesh.vertices.size();
  std::vector<std::vector<std::int32_t>> neighbors(nv);
  std::vector<char> fixed(nv, 0);
  for (const auto& [edge, count] : edge_use_counts(mesh)) {
    neighbors[static_cast<std::size_t>(edge.first)].push_back(edge.second);
    neighbors[static_cast<std::size_t>(edge.second)].push_back(edge.first);
    if (count != 2) fixed[static_cast<std::size_t>(edge.first)] = fixed[static_cast<std::size_t>(edge.second)] = 1;
  }

  std::vector<Vec3> next(nv);
  auto relax = [&](double factor) {
    for (std::size_t v = 0; v < nv; ++v) {
      const auto& nb = neighbors[v];
      if (fixed[v] || nb.empty()) {
        next[v] = out.vertices[v];
        continue;
      }
      Vec3 mean{};
      for (auto u : nb) mean += out.vertices[static_cast<std::size_t>(u)];
      mean = mean / static_cast<double>(nb.size());
      next[v] = out.vertices[v] + (mean - out.vertices[v]) * factor;
    }
    out.vertices.swap(next);
  };
  for (int it = 0; it < iterations; ++it) {
    relax(lambda);
    relax(mu);
  }
  return out;
}

/// ASCII PLY 1.0; coordinates written with round-trip precision.
inline void save_mesh(const TriMesh& mesh, const std::filesystem::path& path) {
  mesh.validate();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out << "ply\nformat ascii 1.0\n";
  out << "element vertex " << mesh.vertices.size() << '\n';
  out << "property double x\nproperty double y\nproperty double z\n";
  out << "element face " << mesh.triangles.size() << '\n';
  out << "property list uchar int vertex_indices\nend_header\n";
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& v : mesh.vertices) out << v.x << ' ' << v.y << ' ' << v.z << '\n';
  for (const auto& t : mesh.triangles) out << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
  if (!out) throw Error(ErrorCode::io, "failed writing " + path.string());
}

inline TriMesh load_mesh(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "missing file: " + path.string());
  auto bad = [&](const std::string& why) { return Error(ErrorCode::malformed_file, path.string() + ": " + why); };

  std::string line;
  if (!std::getline(in, line) || line != "ply") throw bad("missing ply magic");
  if (!std::getline(in, line) || line.rfind("format ascii 1.0", 0) != 0) throw bad("only ascii 1.0 is supported");
  std::size_t n_vertices = 0, n_faces = 0;
  int vertex_props = 0;
  std::string current;
  while (std::getline(in, line)) {
    if (line == "end_header") break;
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "element") {
      ls >> current;
      if (current == "vertex") {
        ls >> n_vertices;
      } else if (current == "face") {
        ls >> n_faces;
      } else {
        throw bad("unsupported element '" + current + "'");
      }
    } else if (word == "property" && current == "vertex") {
      ++vertex_props;
    }
  }
  if (line != "end_header") throw bad("missing end_header");
  if (n_vertices > 0 && vertex_props < 3) throw bad("vertex needs x y z");

  TriMesh mesh;
  mesh.vertices.resize(n_vertices);
  for (auto& v : mesh.vertices) {
    if (!std::getline(in, line)) throw bad("truncated vertex list");
    std::istringstream ls(line);
    if (!(ls >> v.x >> v.y >> v.z)) throw bad("bad vertex line");
  }
  mesh.triangles.resize(n_faces);
  for (auto& t : mesh.triangles) {
    if (!std::getline(in, line)) throw bad("truncated face list");
    std::istringstream ls(line);
    int count = 0;
    if (!(ls >> count)) throw bad("bad face line");
    if (count != 3) throw bad("non-triangle face");
    if (!(ls >> t[0] >> t[1] >> t[2])) throw bad("bad face line");
  }
  try {
    mesh.validate();
  } catch (const Error& e) {
    throw bad(e.what());
  }
  return mesh;
}

}  // namespace vtrace
