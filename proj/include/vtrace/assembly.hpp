#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "vtrace/connected_components.hpp"
#include "vtrace/error.hpp"
#include "vtrace/marching_cubes.hpp"
#include "vtrace/mesh.hpp"
#include "vtrace/volume.hpp"

namespace vtrace {

enum class WeightExponent { squared, linear };

/// exp(-|p-c|^2 / (2 sigma^2)) with sigma = L/4 at the voxel centres of the
/// subvolume. `linear` uses |p-c| in the exponent instead.
inline Volume3D gaussian_weight_map(const SubvolumeSpec& spec, WeightExponent form = WeightExponent::squared) {
  spec.validate();
  const Grid g = spec.grid();
  const double sigma = spec.side / 4.0;
  Volume3D w(g, VolumeKind::intensity);
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) {
        const double d = distance(g.world(i, j, k), spec.center);
        const double e = form == WeightExponent::squared ? d * d : d;
        w(i, j, k) = static_cast<float>(std::exp(-e / (2.0 * sigma * sigma)));
      }
  return w;
}

/// Isotropic grid at the finest spacing of `image` covering its voxel box.
inline Grid accumulator_grid(const Grid& image) {
  const double h = image.min_spacing();
  const Vec3 lo = image.lower_corner();
  const Vec3 hi = image.upper_corner();
  Index3 dims{};
  for (int a = 0; a < 3; ++a)
    dims[a] = std::max(1, static_cast<int>(std::ceil((hi[a] - lo[a]) / h - 1e-9)));
  return Grid{dims, {h, h, h}, lo + Vec3{h, h, h} * 0.5};
}

/// Weighted mean of overlapping local predictions on a fixed global grid.
class GlobalAccumulator {
 public:
  GlobalAccumulator() = default;
  explicit GlobalAccumulator(const Grid& image_grid, WeightExponent form = WeightExponent::squared)
      : image_grid_(image_grid),
        grid_(accumulator_grid(image_grid)),
        form_(form),
        weighted_(grid_.size(), 0.0),
        weights_(grid_.size(), 0.0),
        touch_(grid_.size(), 0) {}

  const Grid& grid() const { return grid_; }
  const Grid& image_grid() const { return image_grid_; }
  std::size_t contributions() const { return contributions_; }

  /// Splats prob * w and w onto the target grid, distributing every sample
  /// trilinearly to its eight enclosing target voxels.
  void accumulate(const Volume3D& prob, const SubvolumeSpec& spec, int branch_id) {
    if (!(prob.grid() == spec.grid())) throw Error(ErrorCode::grid_mismatch, "grid mismatch");
    const Volume3D w = gaussian_weight_map(spec, form_);
    const Grid& g = prob.grid();
    const std::uint64_t bit = std::uint64_t{1} << std::min(branch_id, 63);
    for (int k = 0; k < g.dims[2]; ++k)
      for (int j = 0; j < g.dims[1]; ++j)
        for (int i = 0; i < g.dims[0]; ++i)
          splat(g.world(i, j, k), w(i, j, k), prob(i, j, k), bit);
    ++contributions_;
  }

  /// Adds another accumulator on the same grid.
  void merge(const GlobalAccumulator& other) {
    if (!(other.grid_ == grid_)) throw Error(ErrorCode::grid_mismatch, "grid mismatch");
    for (std::size_t n = 0; n < weighted_.size(); ++n) {
      weighted_[n] += other.weighted_[n];
      weights_[n] += other.weights_[n];
      touch_[n] |= other.touch_[n];
    }
    contributions_ += other.contributions_;
  }

  double weight_at(std::size_t n) const { return weights_[n]; }
  double weighted_at(std::size_t n) const { return weighted_[n]; }
  std::uint64_t touch_at(std::size_t n) const { return touch_[n]; }

  double mean_at(std::size_t n) const { return weights_[n] > 0.0 ? weighted_[n] / weights_[n] : 0.0; }

  /// Mean at the target voxel nearest `p`; 0 outside the grid.
  double mean_at_point(const Vec3& p) const {
    const Index3 q = grid_.nearest_index(p);
    if (!grid_.in_bounds(q[0], q[1], q[2])) return 0.0;
    return mean_at(grid_.index(q[0], q[1], q[2]));
  }

  /// Whether any branch other than `branch_id` contributed near `p`.
  bool touched_by_other(const Vec3& p, int branch_id) const {
    const Index3 q = grid_.nearest_index(p);
    if (!grid_.in_bounds(q[0], q[1], q[2])) return false;
    const std::uint64_t own = branch_id >= 63 ? 0 : std::uint64_t{1} << branch_id;
    return (touch_[grid_.index(q[0], q[1], q[2])] & ~own) != 0;
  }

  /// Sum(w s) / Sum(w), zero where nothing contributed.
  Volume3D mean() const {
    Volume3D out(grid_, VolumeKind::probability);
    for (std::size_t n = 0; n < weights_.size(); ++n)
      out[n] = static_cast<float>(std::clamp(mean_at(n), 0.0, 1.0));
    return out;
  }

 private:
  void splat(const Vec3& p, double w, double s, std::uint64_t bit) {
    if (w <= 0.0) return;
    const Vec3 c = grid_.continuous_index(p);
    int base[3];
    double frac[3];
    for (int a = 0; a < 3; ++a) {
      const double t = detail::snap_fraction(c[a]);
      base[a] = static_cast<int>(std::floor(t));
      frac[a] = t - base[a];
    }
    for (int corner = 0; corner < 8; ++corner) {
      const int di = corner & 1, dj = (corner >> 1) & 1, dk = (corner >> 2) & 1;
      const double tw = (di ? frac[0] : 1.0 - frac[0]) * (dj ? frac[1] : 1.0 - frac[1]) *
                        (dk ? frac[2] : 1.0 - frac[2]);
      if (tw <= 0.0) continue;
      const int i = base[0] + di, j = base[1] + dj, k = base[2] + dk;
      if (!grid_.in_bounds(i, j, k)) continue;
      const std::size_t n = grid_.index(i, j, k);
      weighted_[n] += tw * w * s;
      weights_[n] += tw * w;
      touch_[n] |= bit;
    }
  }

  Grid image_grid_{};
  Grid grid_{};
  WeightExponent form_ = WeightExponent::squared;
  std::vector<double> weighted_;
  std::vector<double> weights_;
  std::vector<std::uint64_t> touch_;
  std::size_t contributions_ = 0;
};

struct FinalizedModel {
  Volume3D probability;  ///< mean on the image grid
  Volume3D mask;         ///< thresholded, largest 26-connected component
  TriMesh surface;
};

struct FinalizeOptions {
  double threshold = 0.5;
  int smoothing_iterations = 10;
  double passband = 0.01;
};

/// Mean map -> image grid -> threshold -> largest component -> surface.
inline FinalizedModel finalize(const GlobalAccumulator& acc, const FinalizeOptions& options = {}) {
  if (acc.contributions() == 0) throw Error(ErrorCode::invalid_argument, "empty accumulator");
  FinalizedModel out;
  const Volume3D mean = acc.mean();
  out.probability = mean.grid() == acc.image_grid()
                        ? mean
                        : resample(mean, acc.image_grid(), Interpolation::trilinear, 0.0f);
  out.probability.set_kind(VolumeKind::probability);
  out.mask = largest_connected_component(binarize(out.probability, static_cast<float>(options.threshold)),
                                         Connectivity::twenty_six);
  out.surface = smooth_windowed_sinc(marching_cubes(out.mask, 0.5), options.smoothing_iterations,
                                     options.passband);
  return out;
}

}  // namespace vtrace
