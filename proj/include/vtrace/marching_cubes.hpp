#pragma once

#include <cstdint>
#include <vector>

#include "vtrace/detail/mc_tables.hpp"
#include "vtrace/mesh.hpp"
#include "vtrace/volume.hpp"

namespace vtrace {

/// Table-driven marching cubes over the voxel-centre lattice. Values >= iso
/// are inside. Vertices are shared between cells through their lattice edge,
/// so interior iso-regions give closed meshes; triangles face outward.
/// Ambiguous faces follow the table convention (inside corners on a face
/// diagonal stay separated).
inline TriMesh marching_cubes(const Volume3D& vol, double iso = 0.5) {
  TriMesh mesh;
  const Grid& g = vol.grid();
  const Index3 d = g.dims;
  if (d[0] < 2 || d[1] < 2 || d[2] < 2) return mesh;

  // Lattice edge (lower node, axis) -> vertex index.
  std::vector<std::int32_t> edge_vertex(g.size() * 3, -1);
  auto edge_slot = [&](const Index3& a, const Index3& b) -> std::size_t {
    int axis = 0;
    while (a[axis] == b[axis]) ++axis;
    const Index3& lo = a[axis] < b[axis] ? a : b;
    return g.index(lo[0], lo[1], lo[2]) * 3 + static_cast<std::size_t>(axis);
  };
  auto vertex_on_edge = [&](const Index3& a, const Index3& b, double va, double vb) -> std::int32_t {
    const std::size_t slot = edge_slot(a, b);
    if (edge_vertex[slot] >= 0) return edge_vertex[slot];
    const double t = (iso - va) / (vb - va);
    const Vec3 pa = g.world(a[0], a[1], a[2]);
    const Vec3 pb = g.world(b[0], b[1], b[2]);
    const auto id = static_cast<std::int32_t>(mesh.vertices.size());
    mesh.vertices.push_back(pa + (pb - pa) * t);
    edge_vertex[slot] = id;
    return id;
  };

  for (int k = 0; k + 1 < d[2]; ++k) {
    for (int j = 0; j + 1 < d[1]; ++j) {
      for (int i = 0; i + 1 < d[0]; ++i) {
        Index3 corner[8];
        double value[8];
        int cube = 0;
        for (int c = 0; c < 8; ++c) {
          const auto& o = detail::kCornerOffsets[static_cast<std::size_t>(c)];
          corner[c] = {i + o[0], j + o[1], k + o[2]};
          value[c] = vol(corner[c][0], corner[c][1], corner[c][2]);
          if (value[c] < iso) cube |= 1 << c;
        }
        if (cube == 0 || cube == 255) continue;
        const auto& tris = detail::kTriTable[static_cast<std::size_t>(cube)];
        for (int t = 0; t < 16 && tris[static_cast<std::size_t>(t)] >= 0; t += 3) {
          Triangle tri{};
          for (int v = 0; v < 3; ++v) {
            const auto& ec = detail::kEdgeCorners[static_cast<std::size_t>(tris[static_cast<std::size_t>(t + v)])];
            tri[v] = vertex_on_edge(corner[ec[0]], corner[ec[1]], value[ec[0]], value[ec[1]]);
          }
          if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2]) continue;
          // Bits mark corners below iso, so table order already faces outward.
          mesh.triangles.push_back(tri);
        }
      }
    }
  }
  return mesh;
}

}  // namespace vtrace
