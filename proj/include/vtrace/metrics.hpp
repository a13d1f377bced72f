#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "vtrace/centerline_path.hpp"
#include "vtrace/connected_components.hpp"
#include "vtrace/distance_transform.hpp"
#include "vtrace/error.hpp"
#include "vtrace/volume.hpp"

namespace vtrace {

/// 2|X n Y| / (|X| + |Y|); 1 when both are empty.
inline double dice(const Volume3D& x, const Volume3D& y) {
  require_same_grid(x, y);
  std::size_t nx = 0, ny = 0, both = 0;
  for (std::size_t n = 0; n < x.size(); ++n) {
    const bool a = x[n] != 0.0f, b = y[n] != 0.0f;
    nx += a;
    ny += b;
    both += a && b;
  }
  if (nx + ny == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(nx + ny);
}

/// Foreground voxels with a 6-neighbour that is background or off the grid.
inline Volume3D boundary_voxels(const Volume3D& mask) {
  const Grid& g = mask.grid();
  Volume3D out(g, VolumeKind::binary);
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) {
        if (mask(i, j, k) == 0.0f) continue;
        const bool edge = mask.value_or(i - 1, j, k, 0) == 0 || mask.value_or(i + 1, j, k, 0) == 0 ||
                          mask.value_or(i, j - 1, k, 0) == 0 || mask.value_or(i, j + 1, k, 0) == 0 ||
                          mask.value_or(i, j, k - 1, 0) == 0 || mask.value_or(i, j, k + 1, 0) == 0;
        if (edge) out(i, j, k) = 1.0f;
      }
  return out;
}

/// Symmetric Hausdorff distance between the boundary voxel sets, in mm
/// divided by the smallest spacing (voxel units).
inline double hausdorff(const Volume3D& x, const Volume3D& y) {
  require_same_grid(x, y);
  if (x.count_nonzero() == 0 || y.count_nonzero() == 0)
    throw Error(ErrorCode::empty_mask, "hausdorff needs nonempty masks");
  const Volume3D bx = boundary_voxels(x);
  const Volume3D by = boundary_voxels(y);
  const std::vector<double> to_x = distance_to_set(bx);
  const std::vector<double> to_y = distance_to_set(by);
  double h = 0.0;
  for (std::size_t n = 0; n < bx.size(); ++n) {
    if (bx[n] != 0.0f) h = std::max(h, to_y[n]);
    if (by[n] != 0.0f) h = std::max(h, to_x[n]);
  }
  return h / x.grid().min_spacing();
}

/// Arclength-weighted fraction of centreline samples whose voxel is set in
/// `y`. Each sample weighs half of its adjacent segment lengths.
inline double centerline_overlap(const Volume3D& y, const std::vector<CenterlinePath>& centerlines) {
  const Grid& g = y.grid();
  double covered = 0.0, total = 0.0;
  for (const auto& path : centerlines) {
    const auto& pts = path.points;
    for (std::size_t n = 0; n < pts.size(); ++n) {
      double w = 0.0;
      if (n > 0) w += 0.5 * distance(pts[n - 1], pts[n]);
      if (n + 1 < pts.size()) w += 0.5 * distance(pts[n], pts[n + 1]);
      total += w;
      const Index3 q = g.nearest_index(pts[n]);
      if (g.in_bounds(q[0], q[1], q[2]) && y(q[0], q[1], q[2]) != 0.0f) covered += w;
    }
  }
  if (!(total > 0.0)) throw Error(ErrorCode::invalid_argument, "zero-length centerline");
  return covered / total;
}

/// Resamples a path so that consecutive points are at most `step` apart.
inline CenterlinePath densify(const CenterlinePath& path, double step) {
  if (!(step > 0.0)) throw Error(ErrorCode::invalid_argument, "densify step must be positive");
  CenterlinePath out = path;
  if (path.points.size() < 2) return out;
  out.points.clear();
  out.radii.clear();
  const bool has_radii = path.radii.size() == path.points.size();
  for (std::size_t n = 0; n + 1 < path.points.size(); ++n) {
    const Vec3 a = path.points[n], b = path.points[n + 1];
    const int pieces = std::max(1, static_cast<int>(std::ceil(distance(a, b) / step)));
    for (int s = 0; s < pieces; ++s) {
      const double t = static_cast<double>(s) / pieces;
      out.points.push_back(a + (b - a) * t);
      if (has_radii) out.radii.push_back(path.radii[n] + (path.radii[n + 1] - path.radii[n]) * t);
    }
  }
  out.points.push_back(path.points.back());
  if (has_radii) out.radii.push_back(path.radii.back());
  if (out.parent) out.parent.reset();  // point indices no longer match
  return out;
}

/// Voxels within 6 radii of any centreline sample.
inline Volume3D eval_mask(const std::vector<CenterlinePath>& centerlines, const Grid& grid,
                          double radius_factor = 6.0) {
  Volume3D out(grid, VolumeKind::binary);
  for (const auto& path : centerlines) {
    if (path.radii.size() != path.points.size())
      throw Error(ErrorCode::invalid_argument, "centerline without radii");
    for (std::size_t n = 0; n < path.points.size(); ++n) {
      const Vec3 p = path.points[n];
      const double reach = radius_factor * path.radii[n];
      const Vec3 r{reach, reach, reach};
      const Vec3 lo = grid.continuous_index(p - r);
      const Vec3 hi = grid.continuous_index(p + r);
      int a0[3], a1[3];
      for (int a = 0; a < 3; ++a) {
        a0[a] = std::max(0, static_cast<int>(std::floor(lo[a])));
        a1[a] = std::min(grid.dims[a] - 1, static_cast<int>(std::ceil(hi[a])));
      }
      for (int k = a0[2]; k <= a1[2]; ++k)
        for (int j = a0[1]; j <= a1[1]; ++j)
          for (int i = a0[0]; i <= a1[0]; ++i)
            if (distance(grid.world(i, j, k), p) <= reach) out(i, j, k) = 1.0f;
    }
  }
  return out;
}

/// Voxelwise AND.
inline Volume3D mask_and(const Volume3D& a, const Volume3D& b) {
  require_same_grid(a, b);
  Volume3D out(a.grid(), VolumeKind::binary);
  for (std::size_t n = 0; n < a.size(); ++n) out[n] = (a[n] != 0.0f && b[n] != 0.0f) ? 1.0f : 0.0f;
  return out;
}

struct MetricsReport {
  std::string case_id;
  double dice = 0.0;
  double hausdorff_px = 0.0;
  double centerline_overlap = 0.0;
  bool masked = false;
};

inline nlohmann::json to_json(const MetricsReport& r) {
  return {{"case_id", r.case_id},
          {"dice", r.dice},
          {"hausdorff_px", r.hausdorff_px},
          {"centerline_overlap", r.centerline_overlap},
          {"masked", r.masked}};
}

struct MetricsOptions {
  bool mask_from_centerline = false;
  bool largest_component = false;
};

/// Dice and Hausdorff against `truth`, centreline overlap against the truth
/// centrelines. Optionally keeps only the largest component of `pred` and
/// restricts both masks to the evaluation region around the centrelines.
inline MetricsReport evaluate(const Volume3D& pred, const Volume3D& truth,
                              const std::vector<CenterlinePath>& truth_centerlines,
                              const MetricsOptions& options = {}, std::string case_id = {}) {
  require_same_grid(pred, truth);
  Volume3D x = binarize(pred);
  Volume3D y = binarize(truth);
  if (options.largest_component) x = largest_connected_component(x, Connectivity::twenty_six);
  if (options.mask_from_centerline) {
    const Volume3D region = eval_mask(truth_centerlines, truth.grid());
    x = mask_and(x, region);
    y = mask_and(y, region);
  }
  MetricsReport r;
  r.case_id = std::move(case_id);
  r.masked = options.mask_from_centerline;
  r.dice = dice(x, y);
  r.hausdorff_px = hausdorff(x, y);
  r.centerline_overlap = centerline_overlap(x, truth_centerlines);
  return r;
}

inline std::string metrics_csv_header() { return "case_id,dice,hausdorff_px,centerline_overlap,masked"; }

inline std::string metrics_csv_row(const MetricsReport& r) {
  nlohmann::json j = to_json(r);
  return r.case_id + "," + j["dice"].dump() + "," + j["hausdorff_px"].dump() + "," +
         j["centerline_overlap"].dump() + "," + (r.masked ? "true" : "false");
}

struct WilcoxonResult {
  double statistic = 0.0;  ///< min(W+, W-)
  double p_two_sided = 1.0;
  int n = 0;               ///< nonzero differences
  bool exact = true;
};

/// Midranks (1-based) of |d|.
inline std::vector<double> midranks(const std::vector<double>& values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t s = 0; s < order.size();) {
    std::size_t e = s;
    while (e + 1 < order.size() && values[order[e + 1]] == values[order[s]]) ++e;
    const double r = 0.5 * static_cast<double>(s + e) + 1.0;
    for (std::size_t q = s; q <= e; ++q) ranks[order[q]] = r;
    s = e + 1;
  }
  return ranks;
}

/// Paired two-sided signed-rank test on a - b. Zero differences are dropped.
/// Exact null distribution for n <= 20 (ties handled through midranks),
/// normal approximation with tie and continuity corrections above.
inline WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::size_mismatch, "length mismatch");
  std::vector<double> d;
  for (std::size_t n = 0; n < a.size(); ++n)
    if (a[n] - b[n] != 0.0) d.push_back(a[n] - b[n]);
  if (d.empty()) throw Error(ErrorCode::all_differences_zero, "all differences zero");
  if (d.size() < 5) throw Error(ErrorCode::invalid_argument, "need at least 5 nonzero differences");

  std::vector<double> mag(d.size());
  for (std::size_t n = 0; n < d.size(); ++n) mag[n] = std::abs(d[n]);
  const std::vector<double> ranks = midranks(mag);
  double w_plus = 0.0, w_minus = 0.0;
  for (std::size_t n = 0; n < d.size(); ++n) (d[n] > 0 ? w_plus : w_minus) += ranks[n];

  WilcoxonResult r;
  r.n = static_cast<int>(d.size());
  r.statistic = std::min(w_plus, w_minus);
  const double nn = r.n;

  if (r.n <= 20) {
    // Midranks are multiples of 1/2, so doubled ranks are integers.
    std::vector<int> twice(ranks.size());
    int total = 0;
    for (std::size_t n = 0; n < ranks.size(); ++n) {
      twice[n] = static_cast<int>(std::lround(2.0 * ranks[n]));
      total += twice[n];
    }
    std::vector<double> ways(static_cast<std::size_t>(total) + 1, 0.0);
    ways[0] = 1.0;
    for (int t : twice)
      for (int s = total; s >= t; --s) ways[static_cast<std::size_t>(s)] += ways[static_cast<std::size_t>(s - t)];
    const int observed = static_cast<int>(std::lround(2.0 * r.statistic));
    double tail = 0.0;
    for (int s = 0; s <= observed; ++s) tail += ways[static_cast<std::size_t>(s)];
    r.p_two_sided = std::min(1.0, 2.0 * tail / std::ldexp(1.0, r.n));
    r.exact = true;
    return r;
  }

  double tie_term = 0.0;
  {
    std::vector<double> sorted = mag;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t s = 0; s < sorted.size();) {
      std::size_t e = s;
      while (e + 1 < sorted.size() && sorted[e + 1] == sorted[s]) ++e;
      const double t = static_cast<double>(e - s + 1);
      tie_term += t * t * t - t;
      s = e + 1;
    }
  }
  const double mean = nn * (nn + 1.0) / 4.0;
  const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
  const double z = std::max(0.0, std::abs(r.statistic - mean) - 0.5) / std::sqrt(var);
  r.p_two_sided = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  r.exact = false;
  return r;
}

}  // namespace vtrace
