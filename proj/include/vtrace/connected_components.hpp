#pragma once

#include <cstdint>
#include <cstdlib>
#include <vector>

#include "vtrace/volume.hpp"

namespace vtrace {

enum class Connectivity { six = 6, twenty_six = 26 };

namespace detail {

inline std::vector<Index3> neighbor_offsets(Connectivity c) {
  std::vector<Index3> offs;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
        if (manhattan == 0) continue;
        if (c == Connectivity::six && manhattan != 1) continue;
        offs.push_back({dx, dy, dz});
      }
  return offs;
}

}  // namespace detail

/// Component labelling of nonzero voxels. Labels are 1-based and numbered in
/// order of each component's smallest linear index; background is 0.
struct ComponentLabels {
  std::vector<std::int32_t> labels;
  std::vector<std::size_t> sizes;  ///< sizes[label - 1]
};

inline ComponentLabels label_components(const Volume3D& mask, Connectivity connectivity) {
  const Grid& g = mask.grid();
  ComponentLabels out;
  out.labels.assign(mask.size(), 0);
  const auto offs = detail::neighbor_offsets(connectivity);
  std::vector<std::size_t> stack;
  for (std::size_t seed = 0; seed < mask.size(); ++seed) {
    if (mask[seed] == 0.0f || out.labels[seed] != 0) continue;
    const auto label = static_cast<std::int32_t>(out.sizes.size() + 1);
    std::size_t count = 0;
    stack.push_back(seed);
    out.labels[seed] = label;
    while (!stack.empty()) {
      const std::size_t cur = stack.back();
      stack.pop_back();
      ++count;
      const Index3 p = g.unravel(cur);
      for (const Index3& o : offs) {
        const int i = p[0] + o[0], j = p[1] + o[1], k = p[2] + o[2];
        if (!g.in_bounds(i, j, k)) continue;
        const std::size_t nb = g.index(i, j, k);
        if (mask[nb] != 0.0f && out.labels[nb] == 0) {
          out.labels[nb] = label;
          stack.push_back(nb);
        }
      }
    }
    out.sizes.push_back(count);
  }
  return out;
}

inline Volume3D keep_label(const Volume3D& mask, const ComponentLabels& cc, std::int32_t label) {
  Volume3D out(mask.grid(), VolumeKind::binary);
  for (std::size_t n = 0; n < mask.size(); ++n) out[n] = cc.labels[n] == label ? 1.0f : 0.0f;
  return out;
}

/// Keeps only the largest component; ties go to the component whose first
/// voxel has the smallest linear index. Empty in, empty out.
inline Volume3D largest_connected_component(const Volume3D& mask,
                                            Connectivity connectivity = Connectivity::twenty_six) {
  const ComponentLabels cc = label_components(mask, connectivity);
  if (cc.sizes.empty()) return Volume3D(mask.grid(), VolumeKind::binary);
  std::int32_t best = 1;
  for (std::size_t l = 1; l < cc.sizes.size(); ++l)
    if (cc.sizes[l] > cc.sizes[static_cast<std::size_t>(best - 1)]) best = static_cast<std::int32_t>(l + 1);
  return keep_label(mask, cc, best);
}

/// Component containing voxel `at` when it is foreground, otherwise the
/// largest component.
inline Volume3D component_at_or_largest(const Volume3D& mask, const Index3& at,
                                        Connectivity connectivity = Connectivity::twenty_six) {
  if (!mask.grid().in_bounds(at[0], at[1], at[2]) || mask(at[0], at[1], at[2]) == 0.0f)
    return largest_connected_component(mask, connectivity);
  const ComponentLabels cc = label_components(mask, connectivity);
  return keep_label(mask, cc, cc.labels[mask.grid().index(at[0], at[1], at[2])]);
}

/// Sets background cavities that do not reach the grid boundary (6-connected
/// background) to foreground.
inline Volume3D fill_enclosed_cavities(const Volume3D& mask) {
  const Grid& g = mask.grid();
  std::vector<std::uint8_t> outside(mask.size(), 0);
  std::vector<std::size_t> stack;
  const Index3 d = g.dims;
  for (std::size_t n = 0; n < mask.size(); ++n) {
    if (mask[n] != 0.0f) continue;
    const Index3 p = g.unravel(n);
    const bool on_face = p[0] == 0 || p[1] == 0 || p[2] == 0 || p[0] == d[0] - 1 ||
                         p[1] == d[1] - 1 || p[2] == d[2] - 1;
    if (on_face) {
      outside[n] = 1;
      stack.push_back(n);
    }
  }
  const auto offs = detail::neighbor_offsets(Connectivity::six);
  while (!stack.empty()) {
    const std::size_t cur = stack.back();
    stack.pop_back();
    const Index3 p = g.unravel(cur);
    for (const Index3& o : offs) {
      const int i = p[0] + o[0], j = p[1] + o[1], k = p[2] + o[2];
      if (!g.in_bounds(i, j, k)) continue;
      const std::size_t nb = g.index(i, j, k);
      if (mask[nb] == 0.0f && !outside[nb]) {
        outside[nb] = 1;
        stack.push_back(nb);
      }
    }
  }
  Volume3D out(g, VolumeKind::binary);
  for (std::size_t n = 0; n < mask.size(); ++n) out[n] = (mask[n] != 0.0f || !outside[n]) ? 1.0f : 0.0f;
  return out;
}

}  // namespace vtrace
