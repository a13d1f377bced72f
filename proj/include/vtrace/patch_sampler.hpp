#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>

#include "json.hpp"
#include "vtrace/centerline_path.hpp"
#include "vtrace/volume.hpp"

namespace vtrace {

/// Patch size and offset distributions. Side = alpha * R with
/// alpha ~ N(mu_r, var_r); centre offset = beta * R along a random
/// perpendicular, beta ~ N(mu_s, var_s). Variances, not standard deviations.
struct PatchSampleParams {
  double mu_r = 5.0;
  double var_r = 1.0;
  double mu_s = 0.0;
  double var_s = 0.8;
  int samples_per_centerline_point = 1;
  int voxels_per_side = 64;
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (!(mu_r > 0.0)) throw Error(ErrorCode::invalid_argument, "mu_r must be positive");
    if (var_r < 0.0 || var_s < 0.0) throw Error(ErrorCode::invalid_argument, "variances must be >= 0");
    if (samples_per_centerline_point < 1)
      throw Error(ErrorCode::invalid_argument, "samples_per_centerline_point must be >= 1");
  }
};

struct PatchMeta {
  int path_index = 0;
  int centerline_point_index = 0;
  double alpha = 0.0;
  double beta = 0.0;
  double side_mm = 0.0;
  Vec3 center_mm{};
  Vec3 tangent{};
  Vec3 offset_dir{};  ///< unit perpendicular w
};

struct TrainingPatch {
  Volume3D image;
  Volume3D label;
  PatchMeta meta;
};

namespace detail {

inline Vec3 path_tangent(const CenterlinePath& path, std::size_t i) {
  const std::size_t lo = i > 0 ? i - 1 : 0;
  const std::size_t hi = std::min(i + 1, path.points.size() - 1);
  return normalized(path.points[hi] - path.points[lo]);
}

}  // namespace detail

/// Draws patch geometry along every centreline point and hands each resampled
/// (image, label) pair to `emit`. Points with a degenerate tangent are
/// skipped. Returns the number of emitted pairs.
inline std::size_t sample_training_patches(const Volume3D& image, const Volume3D& gt_mask,
                                           const std::vector<CenterlinePath>& centerlines,
                                           const PatchSampleParams& params,
                                           const std::function<void(TrainingPatch&&)>& emit) {
  params.validate();
  std::mt19937_64 rng(params.rng_seed);
  std::normal_distribution<double> alpha_dist(params.mu_r, std::sqrt(params.var_r));
  std::normal_distribution<double> beta_dist(params.mu_s, std::sqrt(params.var_s));
  std::uniform_real_distribution<double> unit(-1.0, 1.0);

  std::size_t emitted = 0;
  for (std::size_t p = 0; p < centerlines.size(); ++p) {
    const CenterlinePath& path = centerlines[p];
    if (path.points.size() < 2) continue;
    for (std::size_t i = 0; i < path.points.size(); ++i) {
      const Vec3 t = detail::path_tangent(path, i);
      if (norm(t) < 0.5) continue;
      const auto [u, v] = perpendicular_frame(t);
      const double radius = path.radii[i];
      for (int s = 0; s < params.samples_per_centerline_point; ++s) {
        double alpha = params.var_r > 0.0 ? alpha_dist(rng) : params.mu_r;
        while (alpha <= 0.0) alpha = alpha_dist(rng);
        const double beta = params.var_s > 0.0 ? beta_dist(rng) : params.mu_s;
        Vec3 w;
        do {
          const double a = unit(rng);
          const double b = unit(rng);
          w = u * a + v * b;
        } while (norm(w) < 1e-9);
        w = normalized(w);

        TrainingPatch patch;
        patch.meta.path_index = static_cast<int>(p);
        patch.meta.centerline_point_index = static_cast<int>(i);
        patch.meta.alpha = alpha;
        patch.meta.beta = beta;
        patch.meta.side_mm = radius * alpha;
        patch.meta.center_mm = path.points[i] + w * (beta * radius);
        patch.meta.tangent = t;
        patch.meta.offset_dir = w;
        const SubvolumeSpec spec{patch.meta.center_mm, patch.meta.side_mm, params.voxels_per_side};
        try {
          patch.image = extract_subvolume(image, spec, Interpolation::tricubic);
          patch.label = extract_subvolume(gt_mask, spec, Interpolation::labels);
        } catch (const Error& e) {
          if (e.code() == ErrorCode::empty_crop) continue;
          throw;
        }
        emit(std::move(patch));
        ++emitted;
      }
    }
  }
  return emitted;
}

inline nlohmann::json manifest_row(const PatchMeta& meta, const std::string& image_file,
                                   const std::string& label_file, const std::string& source_case) {
  return {{"image", image_file},
          {"label", label_file},
          {"source_case", source_case},
          {"path_index", meta.path_index},
          {"centerline_point_index", meta.centerline_point_index},
          {"L_mm", meta.side_mm},
          {"center_mm", to_array(meta.center_mm)}};
}

}  // namespace vtrace
