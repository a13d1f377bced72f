#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "vtrace/error.hpp"
#include "vtrace/vec3.hpp"

namespace vtrace {

enum class VolumeKind { intensity, probability, binary };

inline const char* to_string(VolumeKind kind) {
  switch (kind) {
    case VolumeKind::intensity: return "intensity";
    case VolumeKind::probability: return "probability";
    case VolumeKind::binary: return "binary";
  }
  return "intensity";
}

using Index3 = std::array<int, 3>;

/// Axis-aligned sampling lattice: voxel (i,j,k) sits at origin + (i*sx, j*sy, k*sz).
struct Grid {
  Index3 dims{1, 1, 1};
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{};

  std::size_t size() const {
    return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
           static_cast<std::size_t>(dims[2]);
  }

  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * static_cast<std::size_t>(dims[1]) +
            static_cast<std::size_t>(j)) *
               static_cast<std::size_t>(dims[0]) +
           static_cast<std::size_t>(i);
  }

  Index3 unravel(std::size_t linear) const {
    const auto nx = static_cast<std::size_t>(dims[0]);
    const auto ny = static_cast<std::size_t>(dims[1]);
    return {static_cast<int>(linear % nx), static_cast<int>((linear / nx) % ny),
            static_cast<int>(linear / (nx * ny))};
  }

  bool in_bounds(int i, int j, int k) const {
    return i >= 0 && j >= 0 && k >= 0 && i < dims[0] && j < dims[1] && k < dims[2];
  }

  Vec3 world(int i, int j, int k) const {
    return {origin.x + i * spacing.x, origin.y + j * spacing.y, origin.z + k * spacing.z};
  }

  Vec3 world(const Vec3& continuous) const { return origin + hadamard(continuous, spacing); }

  /// Fractional voxel coordinates of a world point.
  Vec3 continuous_index(const Vec3& p) const {
    return {(p.x - origin.x) / spacing.x, (p.y - origin.y) / spacing.y,
            (p.z - origin.z) / spacing.z};
  }

  Index3 nearest_index(const Vec3& p) const {
    const Vec3 c = continuous_index(p);
    return {static_cast<int>(std::lround(c.x)), static_cast<int>(std::lround(c.y)),
            static_cast<int>(std::lround(c.z))};
  }

  /// Box covered by the voxels (voxel centres +- half a voxel).
  Vec3 lower_corner() const { return origin - spacing * 0.5; }
  Vec3 upper_corner() const {
    return origin + Vec3{(dims[0] - 0.5) * spacing.x, (dims[1] - 0.5) * spacing.y,
                         (dims[2] - 0.5) * spacing.z};
  }

  bool contains(const Vec3& p) const {
    const Vec3 lo = lower_corner();
    const Vec3 hi = upper_corner();
    return p.x >= lo.x && p.y >= lo.y && p.z >= lo.z && p.x <= hi.x && p.y <= hi.y &&
           p.z <= hi.z;
  }

  double min_spacing() const { return std::min({spacing.x, spacing.y, spacing.z}); }
  double voxel_volume() const { return spacing.x * spacing.y * spacing.z; }

  void validate() const {
    for (int a = 0; a < 3; ++a) {
      if (dims[a] <= 0) throw Error(ErrorCode::invalid_argument, "dims must be positive");
      if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
        throw Error(ErrorCode::invalid_argument, "nonpositive spacing");
    }
  }

  friend bool operator==(const Grid&, const Grid&) = default;
};

/// Scalar grid with x-fastest layout. Intensities, probability maps and
/// binary masks share this type; `kind` records which invariant applies.
class Volume3D {
 public:
  Volume3D() = default;

  Volume3D(const Grid& grid, VolumeKind kind, float fill = 0.0f)
      : grid_(grid), kind_(kind), data_(grid.size(), fill) {
    grid_.validate();
  }

  Volume3D(const Grid& grid, VolumeKind kind, std::vector<float> data)
      : grid_(grid), kind_(kind), data_(std::move(data)) {
    grid_.validate();
    if (data_.size() != grid_.size())
      throw Error(ErrorCode::size_mismatch, "size mismatch: expected " +
                                                std::to_string(grid_.size()) + " values, got " +
                                                std::to_string(data_.size()));
  }

  const Grid& grid() const { return grid_; }
  VolumeKind kind() const { return kind_; }
  const Index3& dims() const { return grid_.dims; }
  const Vec3& spacing() const { return grid_.spacing; }
  const Vec3& origin() const { return grid_.origin; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }

  float operator()(int i, int j, int k) const { return data_[grid_.index(i, j, k)]; }
  float& operator()(int i, int j, int k) { return data_[grid_.index(i, j, k)]; }
  float operator[](std::size_t n) const { return data_[n]; }
  float& operator[](std::size_t n) { return data_[n]; }

  /// Value at (i,j,k) or `fallback` when out of range.
  float value_or(int i, int j, int k, float fallback) const {
    return grid_.in_bounds(i, j, k) ? (*this)(i, j, k) : fallback;
  }

  void set_kind(VolumeKind kind) { kind_ = kind; }

  float min_value() const {
    return data_.empty() ? 0.0f : *std::min_element(data_.begin(), data_.end());
  }
  float max_value() const {
    return data_.empty() ? 0.0f : *std::max_element(data_.begin(), data_.end());
  }

  std::size_t count_nonzero() const {
    return static_cast<std::size_t>(
        std::count_if(data_.begin(), data_.end(), [](float v) { return v != 0.0f; }));
  }

  /// Throws when the data violates the invariant of `kind`.
  void validate() const {
    grid_.validate();
    if (data_.size() != grid_.size()) throw Error(ErrorCode::size_mismatch, "size mismatch");
    for (float v : data_) {
      if (!std::isfinite(v)) throw Error(ErrorCode::invalid_argument, "non-finite voxel value");
      if (kind_ == VolumeKind::probability && (v < 0.0f || v > 1.0f))
        throw Error(ErrorCode::invalid_argument, "probability value outside [0,1]");
      if (kind_ == VolumeKind::binary && v != 0.0f && v != 1.0f)
        throw Error(ErrorCode::invalid_argument, "binary value not in {0,1}");
    }
  }

  friend bool operator==(const Volume3D&, const Volume3D&) = default;

 private:
  Grid grid_{};
  VolumeKind kind_ = VolumeKind::intensity;
  std::vector<float> data_;
};

inline void require_same_grid(const Volume3D& a, const Volume3D& b) {
  if (!(a.grid() == b.grid())) throw Error(ErrorCode::grid_mismatch, "grid mismatch");
}

/// Binarize at `threshold` (>= threshold maps to 1).
inline Volume3D binarize(const Volume3D& v, float threshold = 0.5f) {
  Volume3D out(v.grid(), VolumeKind::binary);
  for (std::size_t n = 0; n < v.size(); ++n) out[n] = v[n] >= threshold ? 1.0f : 0.0f;
  return out;
}

/// World-space cube [center - side/2, center + side/2]^3 sampled on n^3 voxels.
struct SubvolumeSpec {
  Vec3 center{};
  double side = 1.0;
  int voxels_per_side = 64;

  void validate() const {
    if (!(side > 0.0) || !std::isfinite(side))
      throw Error(ErrorCode::invalid_argument, "subvolume side must be positive");
    if (voxels_per_side < 8)
      throw Error(ErrorCode::invalid_argument, "subvolume needs at least 8 voxels per side");
  }

  Grid grid() const {
    const double h = side / voxels_per_side;
    const Vec3 origin = center - Vec3{side, side, side} * 0.5 + Vec3{h, h, h} * 0.5;
    return Grid{{voxels_per_side, voxels_per_side, voxels_per_side}, {h, h, h}, origin};
  }
};

enum class Interpolation { tricubic, trilinear, labels };

namespace detail {

// Fractions within this distance of a lattice node snap onto it, so sampling
// on the source lattice reproduces the source values bit for bit.
inline double snap_fraction(double t) {
  const double r = std::round(t);
  return std::abs(t - r) < 1e-6 ? r : t;
}

inline void catmull_rom_weights(double t, double w[4]) {
  const double t2 = t * t;
  const double t3 = t2 * t;
  w[0] = 0.5 * (-t3 + 2.0 * t2 - t);
  w[1] = 0.5 * (3.0 * t3 - 5.0 * t2 + 2.0);
  w[2] = 0.5 * (-3.0 * t3 + 4.0 * t2 + t);
  w[3] = 0.5 * (t3 - t2);
}

inline int clamp_index(int i, int n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); }

}  // namespace detail

/// Trilinear interpolation at fractional index `c`, clamped to the lattice.
inline double sample_trilinear(const Volume3D& v, Vec3 c) {
  const Index3& d = v.dims();
  int base[3];
  double frac[3];
  for (int a = 0; a < 3; ++a) {
    const double t = std::clamp(detail::snap_fraction(c[a]), 0.0, static_cast<double>(d[a] - 1));
    base[a] = std::min(static_cast<int>(std::floor(t)), std::max(d[a] - 2, 0));
    frac[a] = t - base[a];
  }
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz) {
    const double wz = dz ? frac[2] : 1.0 - frac[2];
    if (wz == 0.0) continue;
    const int k = detail::clamp_index(base[2] + dz, d[2]);
    for (int dy = 0; dy < 2; ++dy) {
      const double wy = dy ? frac[1] : 1.0 - frac[1];
      if (wy == 0.0) continue;
      const int j = detail::clamp_index(base[1] + dy, d[1]);
      for (int dx = 0; dx < 2; ++dx) {
        const double wx = dx ? frac[0] : 1.0 - frac[0];
        if (wx == 0.0) continue;
        const int i = detail::clamp_index(base[0] + dx, d[0]);
        acc += wx * wy * wz * v(i, j, k);
      }
    }
  }
  return acc;
}

/// Local Catmull-Rom tricubic interpolation at fractional index `c`.
inline double sample_tricubic(const Volume3D& v, Vec3 c) {
  const Index3& d = v.dims();
  int base[3];
  double w[3][4];
  for (int a = 0; a < 3; ++a) {
    const double t = std::clamp(detail::snap_fraction(c[a]), 0.0, static_cast<double>(d[a] - 1));
    base[a] = static_cast<int>(std::floor(t));
    detail::catmull_rom_weights(t - base[a], w[a]);
  }
  double acc = 0.0;
  for (int dz = 0; dz < 4; ++dz) {
    if (w[2][dz] == 0.0) continue;
    const int k = detail::clamp_index(base[2] + dz - 1, d[2]);
    for (int dy = 0; dy < 4; ++dy) {
      if (w[1][dy] == 0.0) continue;
      const int j = detail::clamp_index(base[1] + dy - 1, d[1]);
      const double wyz = w[2][dz] * w[1][dy];
      for (int dx = 0; dx < 4; ++dx) {
        if (w[0][dx] == 0.0) continue;
        const int i = detail::clamp_index(base[0] + dx - 1, d[0]);
        acc += wyz * w[0][dx] * v(i, j, k);
      }
    }
  }
  return acc;
}

/// Trilinear sample at a world point; `outside` is returned beyond the voxel box.
inline double sample_world_trilinear(const Volume3D& v, const Vec3& p, double outside) {
  if (!v.grid().contains(p)) return outside;
  return sample_trilinear(v, v.grid().continuous_index(p));
}

/// Resamples `v` onto `target`. Points outside the source voxel box take
/// `pad`. Labels mode interpolates linearly and thresholds at 0.5.
inline Volume3D resample(const Volume3D& v, const Grid& target, Interpolation interpolation, float pad) {
  const Grid& src = v.grid();
  VolumeKind out_kind = v.kind();
  if (interpolation == Interpolation::labels) {
    out_kind = VolumeKind::binary;
  } else if (v.kind() == VolumeKind::binary) {
    out_kind = VolumeKind::probability;
  }
  const bool clamp_unit = out_kind != VolumeKind::intensity;

  Volume3D out(target, out_kind);
  for (int k = 0; k < target.dims[2]; ++k) {
    for (int j = 0; j < target.dims[1]; ++j) {
      for (int i = 0; i < target.dims[0]; ++i) {
        const Vec3 p = target.world(i, j, k);
        double value = pad;
        if (src.contains(p)) {
          const Vec3 c = src.continuous_index(p);
          value = interpolation == Interpolation::tricubic ? sample_tricubic(v, c)
                                                           : sample_trilinear(v, c);
        }
        if (interpolation == Interpolation::labels) {
          value = value >= 0.5 ? 1.0 : 0.0;
        } else if (clamp_unit) {
          value = std::clamp(value, 0.0, 1.0);
        }
        out(i, j, k) = static_cast<float>(value);
      }
    }
  }
  return out;
}

/// Resamples the cube described by `spec` out of `v`. Samples outside the
/// source voxel box take the source minimum. Throws `empty_crop` when the cube
/// does not overlap the source at all.
inline Volume3D extract_subvolume(const Volume3D& v, const SubvolumeSpec& spec,
                                  Interpolation interpolation) {
  spec.validate();
  const Vec3 lo = v.grid().lower_corner();
  const Vec3 hi = v.grid().upper_corner();
  for (int a = 0; a < 3; ++a) {
    const double cube_lo = spec.center[a] - 0.5 * spec.side;
    const double cube_hi = spec.center[a] + 0.5 * spec.side;
    if (cube_hi <= lo[a] || cube_lo >= hi[a])
      throw Error(ErrorCode::empty_crop, "empty crop: subvolume lies outside the image");
  }
  return resample(v, spec.grid(), interpolation, v.min_value());
}

/// Copy of the voxels in [lo, hi) per axis, keeping world positions.
inline Volume3D crop(const Volume3D& v, const Index3& lo, const Index3& hi) {
  const Grid& g = v.grid();
  for (int a = 0; a < 3; ++a)
    if (lo[a] < 0 || hi[a] > g.dims[a] || lo[a] >= hi[a])
      throw Error(ErrorCode::invalid_argument, "crop range outside the grid");
  Grid out_grid{{hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]}, g.spacing, g.world(lo[0], lo[1], lo[2])};
  Volume3D out(out_grid, v.kind());
  for (int k = lo[2]; k < hi[2]; ++k)
    for (int j = lo[1]; j < hi[1]; ++j)
      for (int i = lo[0]; i < hi[0]; ++i) out(i - lo[0], j - lo[1], k - lo[2]) = v(i, j, k);
  return out;
}

struct ZScoreResult {
  Volume3D volume;
  double mu = 0.0;
  double sigma = 1.0;
};

/// Whole-image z-scoring (population standard deviation).
inline ZScoreResult normalize_zscore(const Volume3D& v) {
  if (v.empty()) throw Error(ErrorCode::invalid_argument, "empty volume");
  double sum = 0.0;
  for (float x : v.data()) sum += x;
  const double mu = sum / static_cast<double>(v.size());
  double ss = 0.0;
  for (float x : v.data()) ss += (x - mu) * (x - mu);
  const double sigma = std::sqrt(ss / static_cast<double>(v.size()));
  if (!(sigma > 0.0)) throw Error(ErrorCode::constant_image, "constant image: sigma is zero");
  Volume3D out(v.grid(), VolumeKind::intensity);
  for (std::size_t n = 0; n < v.size(); ++n) out[n] = static_cast<float>((v[n] - mu) / sigma);
  return {std::move(out), mu, sigma};
}

/// Clip range and moments of foreground (vessel) intensities, frozen at training time.
struct ForegroundStats {
  double p0_5 = 0.0;
  double p99_5 = 0.0;
  double mu = 0.0;
  double sigma = 1.0;
};

/// Percentile `q` in [0,100] of sorted values, linear interpolation between
/// order statistics.
inline double percentile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw Error(ErrorCode::invalid_argument, "percentile of empty set");
  const double pos = q / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline ForegroundStats compute_foreground_stats(std::span<const Volume3D> images,
                                                std::span<const Volume3D> masks) {
  if (images.size() != masks.size())
    throw Error(ErrorCode::invalid_argument, "images and masks must be paired");
  std::vector<double> values;
  for (std::size_t c = 0; c < images.size(); ++c) {
    if (images[c].dims() != masks[c].dims())
      throw Error(ErrorCode::grid_mismatch, "image/mask dims differ");
    for (std::size_t n = 0; n < images[c].size(); ++n)
      if (masks[c][n] != 0.0f) values.push_back(images[c][n]);
  }
  if (values.empty()) throw Error(ErrorCode::empty_foreground, "empty foreground");
  std::sort(values.begin(), values.end());
  ForegroundStats s;
  s.p0_5 = percentile_sorted(values, 0.5);
  s.p99_5 = percentile_sorted(values, 99.5);
  double sum = 0.0;
  for (double x : values) sum += x;
  s.mu = sum / static_cast<double>(values.size());
  double ss = 0.0;
  for (double x : values) ss += (x - s.mu) * (x - s.mu);
  s.sigma = std::sqrt(ss / static_cast<double>(values.size()));
  return s;
}

/// CT normalization: clip to the foreground percentile range then z-score
/// with the foreground moments.
inline Volume3D normalize_ct_foreground(const Volume3D& v, const ForegroundStats& stats) {
  if (!(stats.sigma > 0.0)) throw Error(ErrorCode::invalid_argument, "sigma must be positive");
  Volume3D out(v.grid(), VolumeKind::intensity);
  for (std::size_t n = 0; n < v.size(); ++n) {
    const double clipped = std::clamp(static_cast<double>(v[n]), stats.p0_5, stats.p99_5);
    out[n] = static_cast<float>((clipped - stats.mu) / stats.sigma);
  }
  return out;
}

}  // namespace vtrace
