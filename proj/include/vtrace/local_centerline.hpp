#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "vtrace/centerline_path.hpp"
#include "vtrace/distance_transform.hpp"
#include "vtrace/eikonal.hpp"
#include "vtrace/error.hpp"
#include "vtrace/volume.hpp"

namespace vtrace {

/// Cross-section of the mask on one boundary face of its grid.
struct Cap {
  Face face = Face::neg_x;
  Vec3 center{};        ///< centroid of the member voxel centres, mm
  double mean_radius = 0.0;
  int voxel_count = 0;
  Index3 anchor{};      ///< member voxel closest to the centroid
  std::vector<Index3> voxels;
};

namespace detail {

struct FaceLayout {
  int axis;     // normal axis
  int layer;    // boundary index along the normal
  int u, v;     // in-plane axes
};

inline FaceLayout face_layout(Face f, const Index3& dims) {
  const int axis = static_cast<int>(f) / 2;
  const bool positive = static_cast<int>(f) % 2 == 1;
  const int u = axis == 0 ? 1 : 0;
  const int v = axis == 2 ? 1 : 2;
  return {axis, positive ? dims[axis] - 1 : 0, u, v};
}

}  // namespace detail

/// One cap per 8-connected component of the mask restricted to each boundary
/// face. Ordered by face, then by centroid.
inline std::vector<Cap> detect_caps(const Volume3D& mask) {
  const Grid& g = mask.grid();
  std::vector<Cap> caps;
  for (int fi = 0; fi < 6; ++fi) {
    const Face face = static_cast<Face>(fi);
    const auto lay = detail::face_layout(face, g.dims);
    const int nu = g.dims[lay.u], nv = g.dims[lay.v];
    auto voxel = [&](int a, int b) {
      Index3 p{};
      p[lay.axis] = lay.layer;
      p[lay.u] = a;
      p[lay.v] = b;
      return p;
    };
    const double face_area = g.spacing[lay.u] * g.spacing[lay.v];
    std::vector<int> seen(static_cast<std::size_t>(nu) * nv, 0);
    std::vector<std::array<int, 2>> stack, members;
    std::vector<Cap> face_caps;
    for (int b0 = 0; b0 < nv; ++b0) {
      for (int a0 = 0; a0 < nu; ++a0) {
        const auto p0 = voxel(a0, b0);
        if (seen[b0 * nu + a0] || mask(p0[0], p0[1], p0[2]) == 0.0f) continue;
        members.clear();
        stack.assign(1, {a0, b0});
        seen[b0 * nu + a0] = 1;
        while (!stack.empty()) {
          const auto [a, b] = stack.back();
          stack.pop_back();
          members.push_back({a, b});
          for (int db = -1; db <= 1; ++db)
            for (int da = -1; da <= 1; ++da) {
              const int na = a + da, nb = b + db;
              if (na < 0 || nb < 0 || na >= nu || nb >= nv || seen[nb * nu + na]) continue;
              const auto q = voxel(na, nb);
              if (mask(q[0], q[1], q[2]) == 0.0f) continue;
              seen[nb * nu + na] = 1;
              stack.push_back({na, nb});
            }
        }
        Cap cap;
        cap.face = face;
        cap.voxel_count = static_cast<int>(members.size());
        for (const auto& [a, b] : members) cap.voxels.push_back(voxel(a, b));
        Vec3 sum{};
        for (const auto& [a, b] : members) {
          const auto q = voxel(a, b);
          sum += g.world(q[0], q[1], q[2]);
        }
        cap.center = sum / static_cast<double>(members.size());
        cap.mean_radius = std::sqrt(cap.voxel_count * face_area / std::numbers::pi);
        double best = INFINITY;
        for (const auto& [a, b] : members) {
          const auto q = voxel(a, b);
          const double dd = distance(g.world(q[0], q[1], q[2]), cap.center);
          if (dd < best) {
            best = dd;
            cap.anchor = q;
          }
        }
        face_caps.push_back(cap);
      }
    }
    std::sort(face_caps.begin(), face_caps.end(), [](const Cap& a, const Cap& b) {
      return to_array(a.center) < to_array(b.center);
    });
    caps.insert(caps.end(), face_caps.begin(), face_caps.end());
  }
  return caps;
}

/// Groups caps on different faces whose voxels touch across a cube edge (a
/// vessel leaving through an edge shows up on two faces). Each group is
/// represented by its largest member, with the radius of the combined area.
inline std::vector<Cap> merge_edge_caps(const std::vector<Cap>& caps, const Grid& grid) {
  const std::size_t n = caps.size();
  std::vector<std::size_t> root(n);
  for (std::size_t a = 0; a < n; ++a) root[a] = a;
  auto find = [&](std::size_t a) {
    while (root[a] != a) a = root[a] = root[root[a]];
    return a;
  };
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b) {
      if (caps[a].face == caps[b].face) continue;
      bool touch = false;
      for (const auto& p : caps[a].voxels) {
        for (const auto& q : caps[b].voxels)
          if (std::abs(p[0] - q[0]) <= 1 && std::abs(p[1] - q[1]) <= 1 && std::abs(p[2] - q[2]) <= 1) {
            touch = true;
            break;
          }
        if (touch) break;
      }
      if (touch) root[find(a)] = find(b);
    }
  std::vector<Cap> out;
  for (std::size_t a = 0; a < n; ++a) {
    if (find(a) != a) continue;
    std::size_t rep = a;
    double area = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      if (find(b) != a) continue;
      const auto lay = detail::face_layout(caps[b].face, grid.dims);
      area += caps[b].voxel_count * grid.spacing[lay.u] * grid.spacing[lay.v];
      if (caps[b].voxel_count > caps[rep].voxel_count) rep = b;
    }
    Cap c = caps[rep];
    c.mean_radius = std::sqrt(area / std::numbers::pi);
    out.push_back(std::move(c));
  }
  std::stable_sort(out.begin(), out.end(), [](const Cap& a, const Cap& b) {
    return static_cast<int>(a.face) < static_cast<int>(b.face) ||
           (a.face == b.face && to_array(a.center) < to_array(b.center));
  });
  return out;
}

struct SourceSelection {
  Cap source;
  std::vector<Cap> targets;
};

/// Source is the cap nearest to `prev_point`; ties go to the lower face, then
/// the lexicographically smaller centroid.
inline SourceSelection select_source(const std::vector<Cap>& caps, const Vec3& prev_point) {
  if (caps.empty()) throw Error(ErrorCode::no_caps, "no caps");
  auto before = [&](const Cap& a, const Cap& b) {
    const double da = distance(a.center, prev_point);
    const double db = distance(b.center, prev_point);
    if (std::abs(da - db) > 1e-9 * std::max(1.0, db)) return da < db;
    return std::make_tuple(static_cast<int>(a.face), to_array(a.center)) <
           std::make_tuple(static_cast<int>(b.face), to_array(b.center));
  };
  std::size_t best = 0;
  for (std::size_t n = 1; n < caps.size(); ++n)
    if (before(caps[n], caps[best])) best = n;
  SourceSelection sel{caps[best], {}};
  for (std::size_t n = 0; n < caps.size(); ++n)
    if (n != best) sel.targets.push_back(caps[n]);
  return sel;
}

struct LocalCenterlineOptions {
  /// Caps with mean radius below this fraction of the largest cap radius are
  /// discarded before source selection.
  double min_cap_radius_ratio = 0.0;
  int min_cap_voxels = 1;
  double speed_exponent = 1.0;
  double step = 0.0;  ///< backtrace step, mm; 0 selects half the smallest spacing
  bool merge_edge_caps = true;
};

namespace detail {

/// Mask voxel with the largest distance value in the 3^3 neighbourhood of the
/// voxel nearest `p`; falls back to the cap anchor's neighbourhood.
inline std::optional<Index3> snap_inside(const Volume3D& mask, const Volume3D& dt, const Vec3& p,
                                         const Index3& anchor) {
  const Grid& g = mask.grid();
  for (const Index3 c : {g.nearest_index(p), anchor}) {
    std::optional<Index3> best;
    double best_d = -1.0;
    for (int dk = -1; dk <= 1; ++dk)
      for (int dj = -1; dj <= 1; ++dj)
        for (int di = -1; di <= 1; ++di) {
          const int i = c[0] + di, j = c[1] + dj, k = c[2] + dk;
          if (!g.in_bounds(i, j, k) || mask(i, j, k) == 0.0f) continue;
          const double d = dt(i, j, k);
          if (d > best_d) {
            best_d = d;
            best = Index3{i, j, k};
          }
        }
    if (best) return best;
  }
  return std::nullopt;
}

}  // namespace detail

/// Radius at `p`: interpolated distance to the nearest background centre.
/// Interpolating the distance ridge already reads low by 5-10%, so no
/// half-voxel boundary correction is applied on top.
inline double radius_at(const Volume3D& dt, const Vec3& p) {
  const double h = dt.grid().min_spacing();
  return std::max(sample_world_trilinear(dt, p, 0.0), 0.5 * h);
}

/// Caps -> source selection -> arrival time -> backtrace from every target.
/// Paths run source -> target. Throws `centerline_failure` when no path can
/// be produced.
inline std::vector<CenterlinePath> extract_local_centerlines(const Volume3D& mask, const Vec3& prev_point,
                                                             const LocalCenterlineOptions& options = {}) {
  auto fail = [](const std::string& why) {
    return Error(ErrorCode::centerline_failure, "centerline extraction failure: " + why);
  };
  if (mask.count_nonzero() == 0) throw fail("empty mask");

  std::vector<Cap> caps = detect_caps(mask);
  if (options.merge_edge_caps) caps = merge_edge_caps(caps, mask.grid());
  double largest = 0.0;
  for (const auto& c : caps) largest = std::max(largest, c.mean_radius);
  std::erase_if(caps, [&](const Cap& c) {
    return c.voxel_count < options.min_cap_voxels || c.mean_radius < options.min_cap_radius_ratio * largest;
  });
  if (caps.empty()) throw fail("no caps");
  const SourceSelection sel = select_source(caps, prev_point);
  if (sel.targets.empty()) throw fail("single cap");

  // Distances ignore the subvolume faces: a cut through a vessel is not wall.
  Volume3D dt = distance_transform(mask, BorderMode::ignore);
  if (!std::isfinite(dt.max_value())) dt = distance_transform(mask, BorderMode::background);

  const Grid& g = mask.grid();
  const auto src = detail::snap_inside(mask, dt, sel.source.center, sel.source.anchor);
  if (!src) throw fail("source cap has no inside voxel");
  const Vec3 source = g.world((*src)[0], (*src)[1], (*src)[2]);
  const Volume3D t = solve_eikonal_with_speed(mask, source, eikonal_speed(mask, dt, options.speed_exponent));

  std::vector<CenterlinePath> paths;
  for (const Cap& target_cap : sel.targets) {
    const auto tgt = detail::snap_inside(mask, dt, target_cap.center, target_cap.anchor);
    if (!tgt) continue;
    std::vector<Vec3> pts;
    try {
      pts = backtrace_path(t, g.world((*tgt)[0], (*tgt)[1], (*tgt)[2]), source, options.step);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::backtrace_failure) continue;
      throw;
    }
    std::reverse(pts.begin(), pts.end());
    CenterlinePath path;
    path.points = std::move(pts);
    path.radii.reserve(path.points.size());
    for (const auto& p : path.points) path.radii.push_back(radius_at(dt, p));
    path.source_face = sel.source.face;
    path.target_face = target_cap.face;
    paths.push_back(std::move(path));
  }
  if (paths.empty()) throw fail("all backtraces failed");
  return paths;
}

}  // namespace vtrace
