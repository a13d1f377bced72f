#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <queue>
#include <vector>

#include "vtrace/distance_transform.hpp"
#include "vtrace/error.hpp"
#include "vtrace/volume.hpp"

namespace vtrace {

struct EikonalOptions {
  bool unit_speed = false;   ///< F = 1 everywhere (testing hook)
  double exponent = 1.0;     ///< F proportional to distance^exponent
  BorderMode border = BorderMode::ignore;
  std::vector<double>* accept_order = nullptr;  ///< receives T in acceptance order
};

/// Speed map F = max(DT, eps)^p scaled so that max F = 1, eps = half the
/// smallest spacing. Zero outside the mask.
inline std::vector<double> eikonal_speed(const Volume3D& mask, const Volume3D& dt, double exponent) {
  const double eps = 0.5 * mask.grid().min_spacing();
  std::vector<double> f(mask.size(), 0.0);
  double fmax = 0.0;
  for (std::size_t n = 0; n < mask.size(); ++n) {
    if (mask[n] == 0.0f) continue;
    double d = dt[n];
    if (!std::isfinite(d)) d = 1.0;
    f[n] = std::pow(std::max(d, eps), exponent);
    fmax = std::max(fmax, f[n]);
  }
  if (fmax > 0.0)
    for (double& v : f) v /= fmax;
  return f;
}

/// First-order upwind fast marching for |grad T| F = 1 restricted to the
/// mask. T is 0 at the source voxel and +inf on unreached voxels.
inline Volume3D solve_eikonal_with_speed(const Volume3D& mask, const Vec3& source,
                                         const std::vector<double>& speed,
                                         std::vector<double>* accept_order = nullptr) {
  const Grid& g = mask.grid();
  const Index3 s = g.nearest_index(source);
  if (!g.in_bounds(s[0], s[1], s[2]) || mask(s[0], s[1], s[2]) == 0.0f)
    throw Error(ErrorCode::source_outside, "source outside segmentation");

  constexpr double inf = std::numeric_limits<double>::infinity();
  const std::size_t n = g.size();
  std::vector<double> t(n, inf);
  std::vector<char> state(n, 0);  // 0 far, 1 trial, 2 accepted
  const double h[3] = {g.spacing.x, g.spacing.y, g.spacing.z};
  const Index3 d = g.dims;

  using Entry = std::pair<double, std::size_t>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
  const std::size_t src = g.index(s[0], s[1], s[2]);
  t[src] = 0.0;
  state[src] = 1;
  heap.push({0.0, src});

  auto update = [&](int i, int j, int k) -> double {
    const Index3 p{i, j, k};
    double a[3];
    double w[3];
    int m = 0;
    for (int axis = 0; axis < 3; ++axis) {
      double best = inf;
      for (int dir : {-1, 1}) {
        Index3 q = p;
        q[axis] += dir;
        if (q[axis] < 0 || q[axis] >= d[axis]) continue;
        const std::size_t qn = g.index(q[0], q[1], q[2]);
        if (state[qn] == 2) best = std::min(best, t[qn]);
      }
      if (best < inf) {
        a[m] = best;
        w[m] = 1.0 / (h[axis] * h[axis]);
        ++m;
      }
    }
    // sort known neighbour values ascending, carrying weights
    for (int x = 0; x < m; ++x)
      for (int y = x + 1; y < m; ++y)
        if (a[y] < a[x]) {
          std::swap(a[x], a[y]);
          std::swap(w[x], w[y]);
        }
    const double rhs = 1.0 / (speed[g.index(i, j, k)] * speed[g.index(i, j, k)]);
    double result = inf;
    for (int used = 1; used <= m; ++used) {
      // sum w (T - a)^2 = rhs over the first `used` neighbours
      double qa = 0.0, qb = 0.0, qc = -rhs;
      for (int x = 0; x < used; ++x) {
        qa += w[x];
        qb += -2.0 * w[x] * a[x];
        qc += w[x] * a[x] * a[x];
      }
      const double disc = qb * qb - 4.0 * qa * qc;
      if (disc < 0.0) break;
      const double cand = (-qb + std::sqrt(disc)) / (2.0 * qa);
      if (used < m && cand > a[used]) {
        result = cand;
        continue;
      }
      result = cand;
      break;
    }
    return result;
  };

  while (!heap.empty()) {
    const auto [value, idx] = heap.top();
    heap.pop();
    if (state[idx] == 2 || value > t[idx]) continue;
    state[idx] = 2;
    if (accept_order) accept_order->push_back(value);
    const Index3 p = g.unravel(idx);
    for (int axis = 0; axis < 3; ++axis) {
      for (int dir : {-1, 1}) {
        Index3 q = p;
        q[axis] += dir;
        if (q[axis] < 0 || q[axis] >= d[axis]) continue;
        const std::size_t qn = g.index(q[0], q[1], q[2]);
        if (state[qn] == 2 || mask[qn] == 0.0f || !(speed[qn] > 0.0)) continue;
        const double cand = update(q[0], q[1], q[2]);
        if (cand < t[qn]) {
          t[qn] = cand;
          state[qn] = 1;
          heap.push({cand, qn});
        }
      }
    }
  }

  Volume3D out(g, VolumeKind::intensity);
  for (std::size_t k = 0; k < n; ++k) out[k] = static_cast<float>(t[k]);
  return out;
}

/// Arrival time from `source` with F derived from the mask's distance map.
inline Volume3D solve_eikonal(const Volume3D& mask, const Vec3& source, const EikonalOptions& options = {}) {
  std::vector<double> speed;
  if (options.unit_speed) {
    speed.assign(mask.size(), 1.0);
  } else {
    speed = eikonal_speed(mask, distance_transform(mask, options.border), options.exponent);
  }
  return solve_eikonal_with_speed(mask, source, speed, options.accept_order);
}

namespace detail {

/// Finite-difference gradient of T at a voxel, one-sided where a neighbour
/// is unreached.
inline Vec3 voxel_gradient(const Volume3D& t, int i, int j, int k) {
  const Grid& g = t.grid();
  const Index3 p{i, j, k};
  const double c = t(i, j, k);
  double out[3] = {0.0, 0.0, 0.0};
  for (int axis = 0; axis < 3; ++axis) {
    Index3 lo = p, hi = p;
    --lo[axis];
    ++hi[axis];
    const double tl = g.in_bounds(lo[0], lo[1], lo[2]) ? t(lo[0], lo[1], lo[2]) : INFINITY;
    const double th = g.in_bounds(hi[0], hi[1], hi[2]) ? t(hi[0], hi[1], hi[2]) : INFINITY;
    const double h = g.spacing[axis];
    const bool fl = std::isfinite(tl), fh = std::isfinite(th);
    if (fl && fh) {
      out[axis] = (th - tl) / (2.0 * h);
    } else if (fh) {
      out[axis] = (th - c) / h;
    } else if (fl) {
      out[axis] = (c - tl) / h;
    }
  }
  return {out[0], out[1], out[2]};
}

/// Trilinear blend of voxel gradients over the reached corners only.
inline std::optional<Vec3> interpolated_gradient(const Volume3D& t, const Vec3& p) {
  const Grid& g = t.grid();
  const Vec3 c = g.continuous_index(p);
  int base[3];
  double frac[3];
  for (int a = 0; a < 3; ++a) {
    const double v = std::clamp(c[a], 0.0, static_cast<double>(g.dims[a] - 1));
    base[a] = std::min(static_cast<int>(std::floor(v)), std::max(g.dims[a] - 2, 0));
    frac[a] = v - base[a];
  }
  Vec3 acc{};
  double wsum = 0.0;
  for (int corner = 0; corner < 8; ++corner) {
    const int di = corner & 1, dj = (corner >> 1) & 1, dk = (corner >> 2) & 1;
    const int i = std::min(base[0] + di, g.dims[0] - 1);
    const int j = std::min(base[1] + dj, g.dims[1] - 1);
    const int k = std::min(base[2] + dk, g.dims[2] - 1);
    const double w = (di ? frac[0] : 1.0 - frac[0]) * (dj ? frac[1] : 1.0 - frac[1]) *
                     (dk ? frac[2] : 1.0 - frac[2]);
    if (w <= 0.0 || !std::isfinite(t(i, j, k))) continue;
    acc += voxel_gradient(t, i, j, k) * w;
    wsum += w;
  }
  if (wsum <= 0.0) return std::nullopt;
  return acc / wsum;
}

}  // namespace detail

/// Gradient descent on T from `target` towards `source` with fixed step `h`
/// (mm, default half the smallest spacing). The returned list runs
/// target -> source and ends with `source`.
inline std::vector<Vec3> backtrace_path(const Volume3D& t, const Vec3& target, const Vec3& source,
                                        double h = 0.0, int max_steps = 10000) {
  const Grid& g = t.grid();
  if (h <= 0.0) h = 0.5 * g.min_spacing();
  const double reach = 1.5 * g.min_spacing();
  const Index3 ti = g.nearest_index(target);
  if (!g.in_bounds(ti[0], ti[1], ti[2]) || !std::isfinite(t(ti[0], ti[1], ti[2])))
    throw Error(ErrorCode::backtrace_failure, "backtrace failure: target not reached by the front");

  std::vector<Vec3> path{target};
  Vec3 x = target;
  for (int step = 0; step < max_steps; ++step) {
    if (distance(x, source) <= reach) {
      if (distance(x, source) > 0.0) path.push_back(source);
      return path;
    }
    const auto grad = detail::interpolated_gradient(t, x);
    if (!grad || norm(*grad) == 0.0)
      throw Error(ErrorCode::backtrace_failure, "backtrace failure: vanishing gradient");
    x -= normalized(*grad) * h;
    path.push_back(x);
  }
  throw Error(ErrorCode::backtrace_failure, "backtrace failure: no convergence");
}

}  // namespace vtrace
