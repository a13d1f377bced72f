#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "vtrace/centerline_path.hpp"
#include "vtrace/error.hpp"
#include "vtrace/volume.hpp"

namespace vtrace {

struct PhantomConfig {
  int depth = 2;
  double root_radius = 4.0;
  double radius_decay = 0.7;
  std::array<double, 2> branch_angle_deg{25.0, 40.0};
  double tortuosity_amp = 1.0;
  double tortuosity_period = 25.0;
  double vessel_intensity = 300.0;
  double background_intensity = 0.0;
  double noise_sd = 10.0;
  std::uint64_t rng_seed = 1;

  // Geometry of the root segment and sampling density.
  double root_length = 50.0;
  double length_decay = 0.75;
  std::optional<Vec3> root_start;  ///< default: centre of the bounds' low-z face
  Vec3 root_direction{0.0, 0.0, 1.0};
  double sample_step = 0.5;

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::invalid_argument, m); };
    if (depth < 0) fail("depth must be >= 0");
    if (!(root_radius > 0.0)) fail("root_radius must be positive");
    if (!(radius_decay > 0.0 && radius_decay < 1.0)) fail("radius_decay must be in (0,1)");
    if (branch_angle_deg[0] > branch_angle_deg[1]) fail("branch_angle_deg must be [min,max]");
    if (tortuosity_amp < 0.0) fail("tortuosity_amp must be >= 0");
    if (!(tortuosity_period > 0.0)) fail("tortuosity_period must be positive");
    if (noise_sd < 0.0) fail("noise_sd must be >= 0");
    if (!(vessel_intensity > background_intensity + 3.0 * noise_sd))
      fail("vessel_intensity must exceed background_intensity + 3*noise_sd");
    if (!(root_length > 0.0)) fail("root_length must be positive");
    if (!(length_decay > 0.0)) fail("length_decay must be positive");
    if (!(sample_step > 0.0)) fail("sample_step must be positive");
    if (norm(root_direction) < 1e-9) fail("root_direction must be nonzero");
  }
};

/// Reads a phantom config; keys not listed in PhantomConfig are rejected.
inline PhantomConfig phantom_config_from_json(const nlohmann::json& j,
                                              const std::vector<std::string>& extra_keys = {}) {
  static const std::vector<std::string> known = {
      "depth", "root_radius", "radius_decay", "branch_angle_deg", "tortuosity_amp",
      "tortuosity_period", "vessel_intensity", "background_intensity", "noise_sd", "rng_seed",
      "root_length", "length_decay", "root_start", "root_direction", "sample_step"};
  if (!j.is_object()) throw Error(ErrorCode::invalid_argument, "phantom config must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const bool ok = std::find(known.begin(), known.end(), it.key()) != known.end() ||
                    std::find(extra_keys.begin(), extra_keys.end(), it.key()) != extra_keys.end();
    if (!ok) throw Error(ErrorCode::invalid_argument, "unknown phantom config key '" + it.key() + "'");
  }
  PhantomConfig c;
  try {
    c.depth = j.value("depth", c.depth);
    c.root_radius = j.value("root_radius", c.root_radius);
    c.radius_decay = j.value("radius_decay", c.radius_decay);
    if (j.contains("branch_angle_deg")) {
      const auto& a = j["branch_angle_deg"];
      if (a.is_number()) {
        c.branch_angle_deg = {a.get<double>(), a.get<double>()};
      } else {
        c.branch_angle_deg = a.get<std::array<double, 2>>();
      }
    }
    c.tortuosity_amp = j.value("tortuosity_amp", c.tortuosity_amp);
    c.tortuosity_period = j.value("tortuosity_period", c.tortuosity_period);
    c.vessel_intensity = j.value("vessel_intensity", c.vessel_intensity);
    c.background_intensity = j.value("background_intensity", c.background_intensity);
    c.noise_sd = j.value("noise_sd", c.noise_sd);
    c.rng_seed = j.value("rng_seed", c.rng_seed);
    c.root_length = j.value("root_length", c.root_length);
    c.length_decay = j.value("length_decay", c.length_decay);
    if (j.contains("root_start")) c.root_start = from_array(j["root_start"].get<std::array<double, 3>>());
    if (j.contains("root_direction"))
      c.root_direction = from_array(j["root_direction"].get<std::array<double, 3>>());
    c.sample_step = j.value("sample_step", c.sample_step);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::invalid_argument, std::string("phantom config: ") + e.what());
  }
  c.validate();
  return c;
}

struct Box {
  Vec3 lo{};
  Vec3 hi{};

  bool contains(const Vec3& p) const {
    return p.x >= lo.x && p.y >= lo.y && p.z >= lo.z && p.x <= hi.x && p.y <= hi.y && p.z <= hi.z;
  }
};

/// Box spanned by the voxel centres of `grid`.
inline Box voxel_center_box(const Grid& grid) {
  return {grid.origin, grid.world(grid.dims[0] - 1, grid.dims[1] - 1, grid.dims[2] - 1)};
}

struct PhantomBranch {
  std::vector<Vec3> points;
  std::vector<double> radii;
  std::optional<ParentLink> parent;  ///< (branch index, point index)
};

struct PhantomTree {
  std::vector<PhantomBranch> branches;
};

namespace detail {

inline Vec3 rotate_towards(const Vec3& dir, const Vec3& perp, double angle_rad) {
  return normalized(dir * std::cos(angle_rad) + perp * std::sin(angle_rad));
}

inline int grow_branch(PhantomTree& tree, const PhantomConfig& cfg, const Box& bounds,
                       std::mt19937_64& rng, const Vec3& start, const Vec3& dir, double radius,
                       double length, int level, std::optional<ParentLink> parent) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto frame = perpendicular_frame(dir);
  const double wobble_angle = 2.0 * std::numbers::pi * unit(rng);
  const Vec3 wobble = frame[0] * std::cos(wobble_angle) + frame[1] * std::sin(wobble_angle);

  PhantomBranch b;
  b.parent = parent;
  const int samples = std::max(1, static_cast<int>(std::ceil(length / cfg.sample_step)));
  for (int s = 0; s <= samples; ++s) {
    const double arc = length * s / samples;
    const Vec3 p = start + dir * arc +
                   wobble * (cfg.tortuosity_amp *
                             std::sin(2.0 * std::numbers::pi * arc / cfg.tortuosity_period));
    if (!bounds.contains(p)) break;
    b.points.push_back(p);
    b.radii.push_back(radius);
  }
  if (b.points.size() < 2) return -1;

  const int index = static_cast<int>(tree.branches.size());
  const Vec3 end = b.points.back();
  const int end_index = static_cast<int>(b.points.size()) - 1;
  tree.branches.push_back(std::move(b));
  if (level >= cfg.depth) return index;

  const double deg = std::numbers::pi / 180.0;
  const double theta1 = (cfg.branch_angle_deg[0] +
                         (cfg.branch_angle_deg[1] - cfg.branch_angle_deg[0]) * unit(rng)) * deg;
  const double theta2 = (cfg.branch_angle_deg[0] +
                         (cfg.branch_angle_deg[1] - cfg.branch_angle_deg[0]) * unit(rng)) * deg;
  const double azimuth = 2.0 * std::numbers::pi * unit(rng);
  const Vec3 side = frame[0] * std::cos(azimuth) + frame[1] * std::sin(azimuth);
  const Vec3 d1 = rotate_towards(dir, side, theta1);
  const Vec3 d2 = rotate_towards(dir, -side, theta2);
  const ParentLink link{index, end_index};
  grow_branch(tree, cfg, bounds, rng, end, d1, radius * cfg.radius_decay, length * cfg.length_decay,
              level + 1, link);
  grow_branch(tree, cfg, bounds, rng, end, d2, radius * cfg.radius_decay, length * cfg.length_decay,
              level + 1, link);
  return index;
}

}  // namespace detail

/// Deterministic binary tree of tortuous tubes. Children start at the end of
/// their parent, with radius scaled by `radius_decay`; samples leaving
/// `bounds` truncate the branch.
inline PhantomTree generate_tree(const PhantomConfig& cfg, const Box& bounds) {
  cfg.validate();
  for (int a = 0; a < 3; ++a)
    if (bounds.hi[a] - bounds.lo[a] < 2.0 * cfg.root_radius)
      throw Error(ErrorCode::invalid_argument, "bounds too small for root_radius");
  const Vec3 start = cfg.root_start.value_or(
      Vec3{0.5 * (bounds.lo.x + bounds.hi.x), 0.5 * (bounds.lo.y + bounds.hi.y), bounds.lo.z});
  if (!bounds.contains(start)) throw Error(ErrorCode::invalid_argument, "root start outside bounds");

  PhantomTree tree;
  std::mt19937_64 rng(cfg.rng_seed);
  const int root = detail::grow_branch(tree, cfg, bounds, rng, start, normalized(cfg.root_direction),
                                       cfg.root_radius, cfg.root_length, 0, std::nullopt);
  if (root < 0) throw Error(ErrorCode::invalid_argument, "bounds too small for root segment");
  return tree;
}

struct PhantomImages {
  Volume3D image;
  Volume3D mask;
};

/// Signed distance (mm) from each voxel centre to the union of tapered
/// tube segments; negative inside.
inline std::vector<double> phantom_signed_distance(const PhantomTree& tree, const Grid& grid) {
  std::vector<double> sd(grid.size(), std::numeric_limits<double>::infinity());
  const double band = grid.min_spacing();
  for (const auto& b : tree.branches) {
    for (std::size_t s = 0; s + 1 < b.points.size(); ++s) {
      const Vec3 a = b.points[s];
      const Vec3 c = b.points[s + 1];
      const double ra = b.radii[s];
      const double rc = b.radii[s + 1];
      const double reach = std::max(ra, rc) + 2.0 * band;
      Vec3 lo, hi;
      for (int ax = 0; ax < 3; ++ax) {
        lo[ax] = std::min(a[ax], c[ax]) - reach;
        hi[ax] = std::max(a[ax], c[ax]) + reach;
      }
      const Vec3 clo = grid.continuous_index(lo);
      const Vec3 chi = grid.continuous_index(hi);
      Index3 i0, i1;
      for (int ax = 0; ax < 3; ++ax) {
        i0[ax] = std::max(0, static_cast<int>(std::floor(clo[ax])));
        i1[ax] = std::min(grid.dims[ax] - 1, static_cast<int>(std::ceil(chi[ax])));
      }
      const Vec3 ac = c - a;
      const double len2 = dot(ac, ac);
      for (int k = i0[2]; k <= i1[2]; ++k)
        for (int j = i0[1]; j <= i1[1]; ++j)
          for (int i = i0[0]; i <= i1[0]; ++i) {
            const Vec3 p = grid.world(i, j, k);
            const double t = len2 > 0.0 ? std::clamp(dot(p - a, ac) / len2, 0.0, 1.0) : 0.0;
            const double d = distance(p, a + ac * t) - (ra + (rc - ra) * t);
            double& cur = sd[grid.index(i, j, k)];
            if (d < cur) cur = d;
          }
    }
  }
  return sd;
}

/// Voxelizes the tree on `grid`: mask is 1 where the voxel centre lies within
/// the local radius; the image blends background and vessel intensity over a
/// one-voxel partial-volume band and adds seeded Gaussian noise.
inline PhantomImages rasterize_phantom(const PhantomTree& tree, const Grid& grid, const PhantomConfig& cfg) {
  grid.validate();
  const std::vector<double> sd = phantom_signed_distance(tree, grid);
  const double band = grid.min_spacing();
  std::mt19937_64 rng(cfg.rng_seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> noise(0.0, cfg.noise_sd > 0.0 ? cfg.noise_sd : 1.0);

  PhantomImages out{Volume3D(grid, VolumeKind::intensity), Volume3D(grid, VolumeKind::binary)};
  for (std::size_t n = 0; n < grid.size(); ++n) {
    out.mask[n] = sd[n] <= 0.0 ? 1.0f : 0.0f;
    double s = std::clamp((0.5 * band - sd[n]) / band, 0.0, 1.0);
    s = s * s * (3.0 - 2.0 * s);
    double value = cfg.background_intensity + (cfg.vessel_intensity - cfg.background_intensity) * s;
    if (cfg.noise_sd > 0.0) value += noise(rng);
    out.image[n] = static_cast<float>(value);
  }
  return out;
}

/// Ground-truth centrelines (one path per branch, parent links preserved).
inline std::vector<CenterlinePath> phantom_ground_truth(const PhantomTree& tree) {
  std::vector<CenterlinePath> out;
  out.reserve(tree.branches.size());
  for (const auto& b : tree.branches) {
    CenterlinePath p;
    p.points = b.points;
    p.radii = b.radii;
    p.parent = b.parent;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace vtrace
