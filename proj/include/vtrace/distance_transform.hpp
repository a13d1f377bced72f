#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "vtrace/volume.hpp"

namespace vtrace {

/// How voxels beyond the grid are treated by `distance_transform`.
enum class BorderMode {
  background,  ///< a virtual background layer surrounds the grid
  ignore,      ///< only in-grid background voxels count
};

namespace detail {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Squared distance lower envelope along one line (parabola envelope of
// Felzenszwalb & Huttenlocher), with physical spacing `h`. When `border_sites`
// is set, zero-cost sites sit at positions -1 and n.
inline void edt_line(const double* f, double* out, int n, double h, bool border_sites,
                     std::vector<double>& pos, std::vector<double>& val,
                     std::vector<double>& z) {
  pos.clear();
  val.clear();
  auto push_site = [&](double x, double fx) {
    // Lower envelope insertion; `z` holds the left boundary of each parabola.
    while (!pos.empty()) {
      const double xq = pos.back();
      const double fq = val.back();
      const double s = ((fx + x * x) - (fq + xq * xq)) / (2.0 * (x - xq));
      if (s <= z[pos.size() - 1]) {
        pos.pop_back();
        val.pop_back();
      } else {
        z.resize(pos.size());
        z.push_back(s);
        pos.push_back(x);
        val.push_back(fx);
        return;
      }
    }
    z.assign(1, -kInf);
    pos.push_back(x);
    val.push_back(fx);
  };
  if (border_sites) push_site(-h, 0.0);
  for (int q = 0; q < n; ++q)
    if (std::isfinite(f[q])) push_site(q * h, f[q]);
  if (border_sites) push_site(n * h, 0.0);

  if (pos.empty()) {
    for (int q = 0; q < n; ++q) out[q] = kInf;
    return;
  }
  std::size_t k = 0;
  for (int q = 0; q < n; ++q) {
    const double x = q * h;
    while (k + 1 < pos.size() && z[k + 1] < x) ++k;
    const double dx = x - pos[k];
    out[q] = dx * dx + val[k];
  }
}

/// In-place separable squared EDT of `f` (0 at sites, +inf elsewhere).
inline void squared_edt(const Grid& grid, std::vector<double>& f, bool border_sites) {
  const Index3 d = grid.dims;
  std::vector<double> line_in, line_out, pos, val, z;
  for (int axis = 0; axis < 3; ++axis) {
    const int n = d[axis];
    const int a1 = (axis + 1) % 3;
    const int a2 = (axis + 2) % 3;
    line_in.resize(static_cast<std::size_t>(n));
    line_out.resize(static_cast<std::size_t>(n));
    for (int v = 0; v < d[a2]; ++v) {
      for (int u = 0; u < d[a1]; ++u) {
        Index3 idx{};
        idx[a1] = u;
        idx[a2] = v;
        for (int q = 0; q < n; ++q) {
          idx[axis] = q;
          line_in[q] = f[grid.index(idx[0], idx[1], idx[2])];
        }
        edt_line(line_in.data(), line_out.data(), n, grid.spacing[axis], border_sites, pos, val, z);
        for (int q = 0; q < n; ++q) {
          idx[axis] = q;
          f[grid.index(idx[0], idx[1], idx[2])] = line_out[q];
        }
      }
    }
  }
}

}  // namespace detail

/// Exact Euclidean distance (mm) from each foreground voxel centre to the
/// nearest background voxel centre; 0 on background. With
/// `BorderMode::ignore` a mask without background yields +inf inside.
inline Volume3D distance_transform(const Volume3D& mask, BorderMode border = BorderMode::background) {
  std::vector<double> f(mask.size());
  for (std::size_t n = 0; n < mask.size(); ++n) f[n] = mask[n] != 0.0f ? detail::kInf : 0.0;
  detail::squared_edt(mask.grid(), f, border == BorderMode::background);
  Volume3D out(mask.grid(), VolumeKind::intensity);
  for (std::size_t n = 0; n < mask.size(); ++n)
    out[n] = mask[n] != 0.0f ? static_cast<float>(std::sqrt(f[n])) : 0.0f;
  return out;
}

/// Distance (mm) from every voxel centre to the nearest voxel of `set`
/// (nonzero entries). +inf everywhere when `set` is empty.
inline std::vector<double> distance_to_set(const Volume3D& set) {
  std::vector<double> f(set.size());
  for (std::size_t n = 0; n < set.size(); ++n) f[n] = set[n] != 0.0f ? 0.0 : detail::kInf;
  detail::squared_edt(set.grid(), f, false);
  for (double& v : f) v = std::sqrt(v);
  return f;
}

}  // namespace vtrace
