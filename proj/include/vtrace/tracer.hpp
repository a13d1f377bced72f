#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "vtrace/assembly.hpp"
#include "vtrace/centerline_path.hpp"
#include "vtrace/connected_components.hpp"
#include "vtrace/error.hpp"
#include "vtrace/local_centerline.hpp"
#include "vtrace/segmenter.hpp"
#include "vtrace/volume.hpp"

namespace vtrace {

/// Stepping state: location, local vessel direction and radius.
struct StepPoint {
  Vec3 point{};
  Vec3 tangent{0, 0, 1};
  double radius = 1.0;
  double prev_radius = 1.0;
  int branch_id = -1;
};

enum class StopReason { boundary, centerline_failure, chances_exhausted, r_min, n_max, nb_max, retrace };

inline const char* to_string(StopReason r) {
  static constexpr const char* names[] = {"boundary", "centerline_failure", "chances_exhausted", "R_min",
                                          "N_max",    "NB_max",             "retrace"};
  return names[static_cast<int>(r)];
}

enum class Normalization { none, zscore, ct };

inline const char* to_string(Normalization n) {
  static constexpr const char* names[] = {"none", "zscore", "ct"};
  return names[static_cast<int>(n)];
}

struct TraceConfig {
  double gamma_star = 0.30;
  int max_chances = 3;
  int n_max = 500;
  double r_min = 0.5;
  std::optional<int> nb_max;  ///< off unless set
  double step_fraction = 0.8;
  int retrace_check_period = 5;
  int queue_sort_period = 10;
  int voxels_per_side = 64;
  double size_factor = 5.0;       ///< L = size_factor * mean of current and previous radius
  double enlarge_factor = 1.1;
  double max_enlargement = 1.3;
  double min_cap_radius_ratio = 0.25;
  double radius_tie = 0.1;  ///< continuation radii within this fraction count as equal
  Normalization normalization = Normalization::none;
  std::optional<ForegroundStats> ct_stats;
  WeightExponent weight_exponent = WeightExponent::squared;

  void validate() const {
    auto bad = [](const std::string& why) { return Error(ErrorCode::invalid_argument, why); };
    if (!(gamma_star > 0.0 && gamma_star < 1.0)) throw bad("gamma_star must be in (0,1)");
    if (!(step_fraction > 0.0 && step_fraction < 1.0)) throw bad("step_fraction must be in (0,1)");
    if (max_chances < 0) throw bad("max_chances must be >= 0");
    if (n_max < 1) throw bad("N_max must be >= 1");
    if (!(r_min >= 0.0)) throw bad("R_min must be >= 0");
    if (nb_max && *nb_max < 1) throw bad("NB_max must be >= 1");
    if (retrace_check_period < 1 || queue_sort_period < 1) throw bad("periods must be >= 1");
    if (voxels_per_side < 8) throw bad("voxels_per_side must be >= 8");
    if (!(size_factor > 0.0)) throw bad("size_factor must be positive");
    if (!(enlarge_factor > 1.0) || !(max_enlargement >= 1.0)) throw bad("invalid enlargement settings");
    if (!(radius_tie >= 0.0 && radius_tie < 1.0)) throw bad("radius_tie must be in [0,1)");
    if (!(min_cap_radius_ratio >= 0.0 && min_cap_radius_ratio < 1.0))
      throw bad("min_cap_radius_ratio must be in [0,1)");
    if (normalization == Normalization::ct && !ct_stats) throw bad("ct normalization needs foreground stats");
  }
};

inline nlohmann::json to_json(const TraceConfig& c) {
  nlohmann::json j = {{"gamma_star", c.gamma_star},
                      {"max_chances", c.max_chances},
                      {"N_max", c.n_max},
                      {"R_min", c.r_min},
                      {"NB_max", c.nb_max ? nlohmann::json(*c.nb_max) : nlohmann::json(nullptr)},
                      {"step_fraction", c.step_fraction},
                      {"retrace_check_period", c.retrace_check_period},
                      {"queue_sort_period", c.queue_sort_period},
                      {"voxels_per_side", c.voxels_per_side},
                      {"size_factor", c.size_factor},
                      {"enlarge_factor", c.enlarge_factor},
                      {"max_enlargement", c.max_enlargement},
                      {"min_cap_radius_ratio", c.min_cap_radius_ratio},
                      {"radius_tie", c.radius_tie},
                      {"normalization", to_string(c.normalization)},
                      {"weight_exponent", c.weight_exponent == WeightExponent::squared ? "squared" : "linear"}};
  if (c.ct_stats)
    j["ct_stats"] = {{"p0_5", c.ct_stats->p0_5},
                     {"p99_5", c.ct_stats->p99_5},
                     {"mu", c.ct_stats->mu},
                     {"sigma", c.ct_stats->sigma}};
  return j;
}

/// Overrides `base` with the keys present in `j`; unknown keys are rejected.
inline TraceConfig trace_config_from_json(const nlohmann::json& j, TraceConfig base = {}) {
  if (!j.is_object()) throw Error(ErrorCode::invalid_argument, "trace config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "gamma_star") {
        base.gamma_star = value.get<double>();
      } else if (key == "max_chances") {
        base.max_chances = value.get<int>();
      } else if (key == "N_max") {
        base.n_max = value.get<int>();
      } else if (key == "R_min") {
        base.r_min = value.get<double>();
      } else if (key == "NB_max") {
        base.nb_max = value.is_null() ? std::nullopt : std::optional<int>(value.get<int>());
      } else if (key == "step_fraction") {
        base.step_fraction = value.get<double>();
      } else if (key == "retrace_check_period") {
        base.retrace_check_period = value.get<int>();
      } else if (key == "queue_sort_period") {
        base.queue_sort_period = value.get<int>();
      } else if (key == "voxels_per_side") {
        base.voxels_per_side = value.get<int>();
      } else if (key == "size_factor") {
        base.size_factor = value.get<double>();
      } else if (key == "enlarge_factor") {
        base.enlarge_factor = value.get<double>();
      } else if (key == "max_enlargement") {
        base.max_enlargement = value.get<double>();
      } else if (key == "min_cap_radius_ratio") {
        base.min_cap_radius_ratio = value.get<double>();
      } else if (key == "radius_tie") {
        base.radius_tie = value.get<double>();
      } else if (key == "normalization") {
        const auto s = value.get<std::string>();
        if (s == "none") {
          base.normalization = Normalization::none;
        } else if (s == "zscore") {
          base.normalization = Normalization::zscore;
        } else if (s == "ct") {
          base.normalization = Normalization::ct;
        } else {
          throw Error(ErrorCode::invalid_argument, "unknown normalization '" + s + "'");
        }
      } else if (key == "weight_exponent") {
        const auto s = value.get<std::string>();
        if (s == "squared") {
          base.weight_exponent = WeightExponent::squared;
        } else if (s == "linear") {
          base.weight_exponent = WeightExponent::linear;
        } else {
          throw Error(ErrorCode::invalid_argument, "unknown weight_exponent '" + s + "'");
        }
      } else if (key == "ct_stats") {
        base.ct_stats = ForegroundStats{value.at("p0_5").get<double>(), value.at("p99_5").get<double>(),
                                        value.at("mu").get<double>(), value.at("sigma").get<double>()};
      } else {
        throw Error(ErrorCode::invalid_argument, "unknown trace config key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::invalid_argument, std::string("bad trace config value: ") + e.what());
  }
  base.validate();
  return base;
}

/// L = 5 (r_i + r_prev) / 2.
inline double subvolume_size(double r_i, double r_prev, double factor = 5.0) {
  if (!(r_i > 0.0) || !(r_prev > 0.0)) throw Error(ErrorCode::invalid_argument, "radii must be positive");
  return factor * 0.5 * (r_i + r_prev);
}

/// Crops and normalizes the network input around `center`.
inline Volume3D prepare_input(const Volume3D& image, const SubvolumeSpec& spec, const TraceConfig& cfg) {
  Volume3D sub = extract_subvolume(image, spec, Interpolation::tricubic);
  switch (cfg.normalization) {
    case Normalization::none:
      return sub;
    case Normalization::zscore:
      return normalize_zscore(sub).volume;
    case Normalization::ct:
      return normalize_ct_foreground(sub, *cfg.ct_stats);
  }
  return sub;
}

/// Fraction of voxels predicted as vessel (probability >= 0.5).
inline double vessel_fraction(const Volume3D& prob) {
  if (prob.size() == 0) return 0.0;
  std::size_t n = 0;
  for (float v : prob.data()) n += v >= 0.5f;
  return static_cast<double>(n) / static_cast<double>(prob.size());
}

struct EnlargedSegmentation {
  Volume3D prob;
  SubvolumeSpec spec;
  double gamma = 0.0;
  int calls = 0;
};

/// Segments at L0 and keeps growing the cube by `enlarge_factor` while the
/// vessel fraction stays at or above gamma*, stopping once the size exceeds
/// `max_enlargement` times L0. Returns the last result.
inline EnlargedSegmentation segment_with_enlargement(const SegmenterBackend& backend, const Volume3D& image,
                                                     const Vec3& center, double l0, const TraceConfig& cfg) {
  if (!(l0 > 0.0)) throw Error(ErrorCode::invalid_argument, "subvolume size must be positive");
  EnlargedSegmentation out;
  out.spec = SubvolumeSpec{center, l0, cfg.voxels_per_side};
  auto run = [&] {
    out.prob = segment(backend, prepare_input(image, out.spec, cfg));
    out.gamma = vessel_fraction(out.prob);
    ++out.calls;
  };
  run();
  while (out.gamma >= cfg.gamma_star && out.spec.side / l0 <= cfg.max_enlargement) {
    out.spec.side *= cfg.enlarge_factor;
    run();
  }
  return out;
}

/// Candidate continuation read off one local path.
struct PathCandidate {
  StepPoint step;
  std::size_t index = 0;  ///< last path point at or before the candidate
  std::size_t path = 0;
};

namespace detail {

inline std::vector<double> cumulative_length(const std::vector<Vec3>& pts) {
  std::vector<double> s(pts.size(), 0.0);
  for (std::size_t n = 1; n < pts.size(); ++n) s[n] = s[n - 1] + distance(pts[n - 1], pts[n]);
  return s;
}

inline Vec3 point_at_length(const std::vector<Vec3>& pts, const std::vector<double>& s, double at,
                            std::size_t* index = nullptr) {
  if (pts.size() == 1 || at <= 0.0) {
    if (index) *index = 0;
    return pts.front();
  }
  auto it = std::lower_bound(s.begin(), s.end(), at);
  if (it == s.end()) {
    if (index) *index = pts.size() - 1;
    return pts.back();
  }
  const auto hi = static_cast<std::size_t>(it - s.begin());
  if (hi == 0) {
    if (index) *index = 0;
    return pts.front();
  }
  const double seg = s[hi] - s[hi - 1];
  const double t = seg > 0.0 ? (at - s[hi - 1]) / seg : 0.0;
  if (index) *index = hi - 1;
  return pts[hi - 1] + (pts[hi] - pts[hi - 1]) * t;
}

}  // namespace detail

/// Point at `fraction` of the arclength. The tangent spans +-10% of the
/// length around it and the radius averages the samples in that window.
inline PathCandidate candidate_on_path(const CenterlinePath& path, double fraction) {
  if (path.points.empty()) throw Error(ErrorCode::invalid_argument, "empty path");
  const auto s = detail::cumulative_length(path.points);
  const double total = s.back();
  PathCandidate c;
  c.step.point = detail::point_at_length(path.points, s, fraction * total, &c.index);
  const double lo = std::max(0.0, (fraction - 0.1) * total);
  const double hi = std::min(total, (fraction + 0.1) * total);
  c.step.tangent = normalized(detail::point_at_length(path.points, s, hi) - detail::point_at_length(path.points, s, lo));
  double sum = 0.0;
  int count = 0;
  for (std::size_t n = 0; n < path.points.size() && n < path.radii.size(); ++n)
    if (s[n] >= lo && s[n] <= hi) {
      sum += path.radii[n];
      ++count;
    }
  c.step.radius = count > 0 ? sum / count : path.radii.at(c.index);
  c.step.prev_radius = c.step.radius;
  return c;
}

struct StepChoice {
  PathCandidate next;
  std::vector<PathCandidate> bifurcations;
};

struct StepHints {
  std::optional<Vec3> align_with;  ///< continue along the candidate best aligned with this
  std::optional<Vec3> forward;     ///< current direction; backward candidates cannot continue
  double radius_tie = 0.0;         ///< relative radius band treated as a tie
};

/// Largest-radius candidate continues the branch; the others are bifurcations.
/// With `forward`, only candidates heading forward may continue and radii
/// within `radius_tie` of the largest are broken by alignment. With
/// `align_with`, the best aligned forward candidate continues. Empty when no
/// candidate heads forward.
inline std::optional<StepChoice> choose_step_points(const std::vector<CenterlinePath>& paths,
                                                    const TraceConfig& cfg, const StepHints& hints = {}) {
  if (paths.empty()) throw Error(ErrorCode::invalid_argument, "no paths to step along");
  std::vector<PathCandidate> cands;
  for (std::size_t p = 0; p < paths.size(); ++p) {
    auto c = candidate_on_path(paths[p], cfg.step_fraction);
    c.path = p;
    cands.push_back(c);
  }
  std::vector<std::size_t> eligible;
  const auto heading = hints.align_with ? hints.align_with : hints.forward;
  for (std::size_t n = 0; n < cands.size(); ++n)
    if (!heading || dot(cands[n].step.tangent, *heading) > 0.0) eligible.push_back(n);
  if (eligible.empty()) return std::nullopt;
  std::size_t best = eligible.front();
  if (hints.align_with) {
    for (auto n : eligible)
      if (dot(cands[n].step.tangent, *hints.align_with) > dot(cands[best].step.tangent, *hints.align_with)) best = n;
  } else {
    double rmax = 0.0;
    for (auto n : eligible) rmax = std::max(rmax, cands[n].step.radius);
    double best_score = -INFINITY;
    for (auto n : eligible) {
      const auto& c = cands[n].step;
      double score = c.radius;
      if (hints.forward && c.radius >= (1.0 - hints.radius_tie) * rmax) score = rmax + 1.0 + dot(c.tangent, *hints.forward);
      if (score > best_score) {
        best_score = score;
        best = n;
      }
    }
  }
  StepChoice out;
  out.next = cands[best];
  for (std::size_t n = 0; n < cands.size(); ++n)
    if (n != best) out.bifurcations.push_back(cands[n]);
  return out;
}

/// p + R t; throws once `chances_used` has reached `max_chances`.
inline StepPoint chance_advance(const StepPoint& sp, int& chances_used, int max_chances) {
  if (chances_used >= max_chances)
    throw Error(ErrorCode::chances_exhausted, "branch terminated: chances exhausted");
  ++chances_used;
  StepPoint out = sp;
  out.point = sp.point + sp.tangent * sp.radius;
  return out;
}

/// Retrace test against contributions of branches that are already finished.
inline bool check_retrace(const StepPoint& candidate, const GlobalAccumulator& finished) {
  return finished.mean_at_point(candidate.point) >= 0.5;
}

struct StepRecord {
  int step = 0;
  int branch_id = 0;
  Vec3 point{};
  double radius = 0.0;
  double L = 0.0;
  double gamma = 0.0;
  int n_caps = 0;
  int calls = 0;
  std::string outcome;  ///< ok | chance | stop
  int bifurcations_queued = 0;
  std::optional<StopReason> stop_reason;
};

inline nlohmann::json to_json(const StepRecord& r) {
  return {{"step", r.step},
          {"branch_id", r.branch_id},
          {"point", to_array(r.point)},
          {"radius", r.radius},
          {"L", r.L},
          {"gamma", r.gamma},
          {"n_caps", r.n_caps},
          {"segmentation_calls", r.calls},
          {"outcome", r.outcome},
          {"bifurcations_queued", r.bifurcations_queued},
          {"stop_reason", r.stop_reason ? nlohmann::json(to_string(*r.stop_reason)) : nlohmann::json(nullptr)}};
}

struct StopRecord {
  int branch_id = -1;  ///< -1 for queued entries that were never traced
  StopReason reason = StopReason::boundary;
  Vec3 point{};
};

struct TraceResult {
  GlobalAccumulator accumulator;
  std::vector<CenterlinePath> centerlines;  ///< traced tree split at bifurcations
  std::vector<StepRecord> steps;
  std::vector<StopRecord> stops;
  int bifurcation_events = 0;
  int branches_started = 0;
  int segmentation_calls = 0;
  /// Radius of every popped queue entry, in pop order.
  std::vector<double> pop_radii;
};

inline void write_step_log(const std::vector<StepRecord>& steps, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  for (const auto& r : steps) out << to_json(r).dump() << '\n';
  if (!out) throw Error(ErrorCode::io, "failed writing " + path.string());
}

inline nlohmann::json stops_to_json(const std::vector<StopRecord>& stops) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : stops)
    arr.push_back({{"branch_id", s.branch_id}, {"reason", to_string(s.reason)}, {"point", to_array(s.point)}});
  return arr;
}

namespace detail {

struct QueueEntry {
  StepPoint sp;
  int parent_branch = -1;
  int parent_point = 0;
  std::size_t record = 0;  ///< step record that queued it
};

struct BranchTrace {
  int id = 0;
  int parent_branch = -1;
  int parent_point = 0;
  std::vector<Vec3> points;
  std::vector<double> radii;
  std::set<int> splits;
};

/// Index ranges of the subvolume voxels whose centres lie inside the image,
/// plus the faces that were clipped (these lie on the image boundary).
struct ImageClip {
  Index3 lo{};
  Index3 hi{};
  std::array<bool, 6> boundary_face{};
  bool empty = false;
};

inline ImageClip clip_to_image(const Grid& sub, const Grid& image) {
  ImageClip c;
  const Vec3 lo = image.lower_corner();
  const Vec3 hi = image.upper_corner();
  for (int a = 0; a < 3; ++a) {
    int first = 0, last = sub.dims[a];
    while (first < sub.dims[a] && sub.origin[a] + first * sub.spacing[a] < lo[a]) ++first;
    while (last > first && sub.origin[a] + (last - 1) * sub.spacing[a] > hi[a]) --last;
    c.lo[a] = first;
    c.hi[a] = last;
    c.boundary_face[static_cast<std::size_t>(2 * a)] = first > 0;
    c.boundary_face[static_cast<std::size_t>(2 * a + 1)] = last < sub.dims[a];
    if (last - first < 2) c.empty = true;
  }
  return c;
}

inline bool duplicates_pending(const StepPoint& cand, const std::deque<QueueEntry>& queue, double size_factor) {
  for (const auto& e : queue) {
    const Vec3 v = cand.point - e.sp.point;
    const double along = dot(v, e.sp.tangent);
    const double lateral = norm(v - e.sp.tangent * along);
    if (std::abs(along) <= 1.5 * size_factor * e.sp.radius && lateral <= 1.5 * std::max(cand.radius, e.sp.radius))
      return true;
  }
  return false;
}

/// Whether `p` lies within `fraction` of the local radius of the polyline.
inline bool inside_polyline(const Vec3& p, const std::vector<Vec3>& pts, const std::vector<double>& radii,
                            double fraction) {
  for (std::size_t n = 0; n < pts.size(); ++n)
    if (distance(p, pts[n]) < fraction * radii[n]) return true;
  return false;
}

}  // namespace detail

/// Sequential vessel tracing from a single seed. Each step crops a cube of
/// side ~5 radii around the current point, segments it, extracts local
/// centrelines between the cube-face crossings and steps 80% along the
/// widest one; the remaining crossings are queued as bifurcations and traced
/// largest-first once the current branch stops.
inline TraceResult trace(const Volume3D& image, const StepPoint& seed, const SegmenterBackend& backend,
                         const TraceConfig& cfg) {
  cfg.validate();
  const Grid& ig = image.grid();
  if (!ig.contains(seed.point)) throw Error(ErrorCode::seed_outside, "seed outside image");
  if (!(seed.radius > 0.0)) throw Error(ErrorCode::invalid_argument, "seed radius must be positive");
  if (norm(seed.tangent) == 0.0) throw Error(ErrorCode::invalid_argument, "seed direction must be nonzero");

  TraceResult res;
  GlobalAccumulator finished(ig, cfg.weight_exponent);
  std::deque<detail::QueueEntry> queue;
  {
    StepPoint s = seed;
    s.tangent = normalized(seed.tangent);
    if (!(s.prev_radius > 0.0)) s.prev_radius = s.radius;
    queue.push_back({s, -1, 0});
  }
  std::vector<detail::BranchTrace> branches;
  int steps_done = 0;
  bool global_stop = false;
  std::optional<StopReason> global_reason;

  auto sort_queue = [&] {
    std::stable_sort(queue.begin(), queue.end(),
                     [](const auto& a, const auto& b) { return a.sp.radius > b.sp.radius; });
  };

  LocalCenterlineOptions local_opts;
  local_opts.min_cap_radius_ratio = cfg.min_cap_radius_ratio;

  while (!queue.empty() && !global_stop) {
    sort_queue();
    if (cfg.nb_max && res.branches_started >= *cfg.nb_max) {
      global_stop = true;
      global_reason = StopReason::nb_max;
      break;
    }
    const detail::QueueEntry entry = queue.front();
    queue.pop_front();
    res.pop_radii.push_back(entry.sp.radius);

    detail::BranchTrace branch;
    branch.id = res.branches_started++;
    branch.parent_branch = entry.parent_branch;
    branch.parent_point = entry.parent_point;
    GlobalAccumulator current(ig, cfg.weight_exponent);
    const std::size_t first_record = res.steps.size();

    StepPoint cur = entry.sp;
    cur.branch_id = branch.id;
    const Vec3 initial_tangent = cur.tangent;
    Vec3 prev_point = cur.point - cur.tangent * cur.radius;
    double prev_radius = cur.prev_radius;
    int chances = 0;
    int branch_steps = 0;

    auto stop_branch = [&](StopReason reason, const Vec3& where) {
      if (res.steps.size() > first_record) res.steps.back().stop_reason = reason;
      res.stops.push_back({branch.id, reason, where});
    };

    while (true) {
      if (steps_done >= cfg.n_max) {
        stop_branch(StopReason::n_max, cur.point);
        global_stop = true;
        global_reason = StopReason::n_max;
        break;
      }
      if (!ig.contains(cur.point)) {
        stop_branch(StopReason::boundary, cur.point);
        break;
      }
      if (cur.radius < cfg.r_min) {
        stop_branch(StopReason::r_min, cur.point);
        break;
      }

      StepRecord rec;
      rec.step = steps_done++;
      rec.branch_id = branch.id;
      rec.point = cur.point;
      rec.radius = cur.radius;
      rec.L = subvolume_size(cur.radius, prev_radius, cfg.size_factor);

      bool failed = false;
      EnlargedSegmentation seg;
      try {
        seg = segment_with_enlargement(backend, image, cur.point, rec.L, cfg);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::empty_crop) {
          rec.outcome = "stop";
          res.steps.push_back(rec);
          stop_branch(StopReason::boundary, cur.point);
          break;
        }
        if (e.code() != ErrorCode::segmentation_failure && e.code() != ErrorCode::constant_image) throw;
        failed = true;
      }
      res.segmentation_calls += seg.calls;
      rec.calls = seg.calls;
      rec.L = seg.calls > 0 ? seg.spec.side : rec.L;
      rec.gamma = seg.gamma;

      std::vector<CenterlinePath> paths;
      detail::ImageClip clip;
      if (!failed) {
        clip = detail::clip_to_image(seg.prob.grid(), ig);
        if (clip.empty) {
          failed = true;
        } else {
          Volume3D local = crop(binarize(seg.prob), clip.lo, clip.hi);
          local = fill_enclosed_cavities(local);
          local = component_at_or_largest(local, local.grid().nearest_index(cur.point), Connectivity::twenty_six);
          rec.n_caps = static_cast<int>(detect_caps(local).size());
          try {
            paths = extract_local_centerlines(local, prev_point, local_opts);
          } catch (const Error& e) {
            if (e.code() != ErrorCode::centerline_failure) throw;
            failed = true;
          }
        }
      }

      std::optional<StepChoice> chosen;
      if (!failed) {
        // A valid local model is kept even when it offers no way forward.
        current.accumulate(seg.prob, seg.spec, branch.id);
        StepHints hints;
        if (branch_steps == 0) {
          hints.align_with = initial_tangent;
        } else {
          hints.forward = cur.tangent;
          hints.radius_tie = cfg.radius_tie;
        }
        chosen = choose_step_points(paths, cfg, hints);
        failed = !chosen;
      }

      if (failed) {
        if (chances >= cfg.max_chances) {
          rec.outcome = "stop";
          res.steps.push_back(rec);
          stop_branch(cfg.max_chances > 0 ? StopReason::chances_exhausted : StopReason::centerline_failure,
                      cur.point);
          break;
        }
        cur = chance_advance(cur, chances, cfg.max_chances);
        rec.outcome = "chance";
        res.steps.push_back(rec);
        continue;
      }

      chances = 0;
      const StepChoice& choice = *chosen;

      // Extend the branch polyline along the chosen path up to the next point.
      {
        const auto& path = paths[choice.next.path];
        std::size_t from = 0;
        double best = INFINITY;
        for (std::size_t n = 0; n <= choice.next.index; ++n) {
          const double d = distance(path.points[n], cur.point);
          if (d < best) {
            best = d;
            from = n;
          }
        }
        for (std::size_t n = from; n <= choice.next.index; ++n) {
          if (!branch.points.empty() && distance(branch.points.back(), path.points[n]) == 0.0) continue;
          branch.points.push_back(path.points[n]);
          branch.radii.push_back(path.radii[n]);
        }
        if (branch.points.empty() || distance(branch.points.back(), choice.next.step.point) > 0.0) {
          branch.points.push_back(choice.next.step.point);
          branch.radii.push_back(choice.next.step.radius);
        }
      }

      // A pending sibling the branch has just walked into is not a bifurcation
      // any more: the branch itself follows that vessel.
      for (auto it = queue.begin(); it != queue.end();) {
        if (it->parent_branch != branch.id ||
            !detail::inside_polyline(it->sp.point, branch.points, branch.radii, 0.5)) {
          ++it;
          continue;
        }
        const int attach = it->parent_point;
        --res.steps[it->record].bifurcations_queued;
        --res.bifurcation_events;
        it = queue.erase(it);
        if (std::none_of(queue.begin(), queue.end(), [&](const detail::QueueEntry& e) {
              return e.parent_branch == branch.id && e.parent_point == attach;
            }))
          branch.splits.erase(attach);
      }

      for (const auto& b : choice.bifurcations) {
        StepPoint sp = b.step;
        if (finished.mean_at_point(sp.point) >= 0.5) continue;
        if (detail::duplicates_pending(sp, queue, cfg.size_factor)) continue;
        if (detail::inside_polyline(sp.point, branch.points, branch.radii, 0.5)) continue;
        // attach to the polyline point closest to the junction side
        int attach = 0;
        double best = INFINITY;
        for (std::size_t n = 0; n < branch.points.size(); ++n) {
          const double d = distance(branch.points[n], paths[b.path].points.front());
          if (d < best) {
            best = d;
            attach = static_cast<int>(n);
          }
        }
        branch.splits.insert(attach);
        queue.push_back({sp, branch.id, attach, res.steps.size()});
        ++rec.bifurcations_queued;
        ++res.bifurcation_events;
      }

      StepPoint next = choice.next.step;
      next.branch_id = branch.id;
      next.prev_radius = cur.radius;
      ++branch_steps;
      rec.outcome = "ok";
      res.steps.push_back(rec);
      if (steps_done % cfg.queue_sort_period == 0) sort_queue();

      const auto target_face = paths[choice.next.path].target_face;
      if (target_face && clip.boundary_face[static_cast<std::size_t>(*target_face)]) {
        stop_branch(StopReason::boundary, next.point);
        break;
      }
      if (branch_steps % cfg.retrace_check_period == 0 && check_retrace(next, finished)) {
        stop_branch(StopReason::retrace, next.point);
        break;
      }
      prev_point = cur.point;
      prev_radius = cur.radius;
      cur = next;
    }

    finished.merge(current);
    branches.push_back(std::move(branch));
  }

  if (global_reason)
    for (const auto& e : queue) res.stops.push_back({-1, *global_reason, e.sp.point});

  // Split every branch polyline at its bifurcation points.
  std::map<int, std::vector<std::pair<int, int>>> segment_ranges;  // branch -> [(first, last)]
  std::map<std::pair<int, int>, int> segment_index;                // (branch, segment) -> output path
  for (const auto& b : branches) {
    if (b.points.size() < 2) continue;
    std::vector<int> cuts{0};
    for (int s : b.splits)
      if (s > 0 && s < static_cast<int>(b.points.size()) - 1) cuts.push_back(s);
    cuts.push_back(static_cast<int>(b.points.size()) - 1);
    auto& ranges = segment_ranges[b.id];
    for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
      ranges.push_back({cuts[c], cuts[c + 1]});
      CenterlinePath path;
      for (int n = cuts[c]; n <= cuts[c + 1]; ++n) {
        path.points.push_back(b.points[static_cast<std::size_t>(n)]);
        path.radii.push_back(b.radii[static_cast<std::size_t>(n)]);
      }
      if (c > 0) path.parent = ParentLink{static_cast<int>(res.centerlines.size()) - 1, cuts[c] - cuts[c - 1]};
      segment_index[{b.id, static_cast<int>(c)}] = static_cast<int>(res.centerlines.size());
      res.centerlines.push_back(std::move(path));
    }
  }
  for (const auto& b : branches) {
    if (b.parent_branch < 0 || !segment_index.count({b.id, 0})) continue;
    const auto it = segment_ranges.find(b.parent_branch);
    if (it == segment_ranges.end()) continue;
    for (std::size_t s = 0; s < it->second.size(); ++s) {
      const auto [first, last] = it->second[s];
      if (b.parent_point >= first && b.parent_point <= last) {
        res.centerlines[static_cast<std::size_t>(segment_index[{b.id, 0}])].parent =
            ParentLink{segment_index[{b.parent_branch, static_cast<int>(s)}], b.parent_point - first};
        break;
      }
    }
  }

  res.accumulator = std::move(finished);
  return res;
}

}  // namespace vtrace
