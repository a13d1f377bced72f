// Acceptance runner: one PASS/FAIL line per primary criterion, exit status
// is the number of failures.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>

#include "support/oracles.hpp"

using namespace vtrace;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

StepPoint make_seed(Vec3 p, Vec3 t, double r) {
  StepPoint s;
  s.point = p;
  s.tangent = normalized(t);
  s.radius = r;
  s.prev_radius = r;
  return s;
}

int logged_bifurcations(const TraceResult& r) {
  int n = 0;
  for (const auto& rec : r.steps) n += rec.bifurcations_queued;
  return n;
}

std::size_t components26(const Volume3D& m) { return label_components(m, Connectivity::twenty_six).sizes.size(); }

// Depth-2 binary tree on a 128^3 grid, 1 mm spacing, root radius 4 mm.
struct TreeScene {
  PhantomTree tree;
  PhantomImages images;
  std::vector<CenterlinePath> truth;
  StepPoint seed;
};

const TreeScene& tree_scene() {
  static const TreeScene s = [] {
    TreeScene t;
    const PhantomConfig c;
    const Grid g{{128, 128, 128}, {1, 1, 1}, {}};
    t.tree = generate_tree(c, voxel_center_box(g));
    t.images = rasterize_phantom(t.tree, g, c);
    t.truth = phantom_ground_truth(t.tree);
    t.seed = make_seed(t.truth[0].points[20], {0, 0, 1}, c.root_radius);
    return t;
  }();
  return s;
}

Outcome phantom_end_to_end() {
  const TreeScene& s = tree_scene();
  const auto be = oracle_gtcrop(s.images.mask);
  const auto t0 = std::chrono::steady_clock::now();
  const TraceResult r = trace(s.images.image, s.seed, *be, TraceConfig{});
  const auto fin = finalize(r.accumulator);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double co = oracle::centerline_overlap(fin.mask, s.truth);
  const double d = oracle::dice(fin.mask, s.images.mask);
  const std::size_t comps = components26(fin.mask);
  const bool pass = r.centerlines.size() >= 7 && co >= 0.95 && d >= 0.90 && comps == 1 && secs <= 120.0;
  return {pass, fmt("phantom branches %zu, traced branches %zu (>=7), CO %.4f (>=0.95), Dice %.4f (>=0.90), "
                    "components %zu (=1), %.1f s (<=120)",
                    s.truth.size(), r.centerlines.size(), co, d, comps, secs)};
}

Outcome bifurcation_exactness() {
  PhantomConfig c;
  c.depth = 1;
  c.root_length = 40;
  c.root_start = Vec3{48, 48, 4};
  const Grid g{{96, 96, 96}, {1, 1, 1}, {}};
  const auto ytree = generate_tree(c, voxel_center_box(g));
  const auto y = rasterize_phantom(ytree, g, c);
  const auto ybe = oracle_gtcrop(y.mask);
  const TraceResult ry = trace(y.image, make_seed(ytree.branches[0].points[20], {0, 0, 1}, 4.0), *ybe, TraceConfig{});

  const Grid tg{{48, 48, 80}, {1, 1, 1}, {}};
  const auto pts = oracle::segment_points({24, 24, -5}, {24, 24, 85});
  const auto tube = rasterize_phantom(oracle::polyline_tree({pts}, {std::vector<double>(pts.size(), 3.0)}), tg,
                                      PhantomConfig{});
  const auto tbe = oracle_gtcrop(tube.mask);
  const TraceResult rt = trace(tube.image, make_seed({24, 24, 8}, {0, 0, 1}, 3.0), *tbe, TraceConfig{});
  const int ny = logged_bifurcations(ry), nt = logged_bifurcations(rt);
  return {ny == 1 && nt == 0, fmt("Y phantom %d event(s) (=1), straight tube %d (=0)", ny, nt)};
}

Outcome robustness() {
  const TreeScene& s = tree_scene();
  const PhantomConfig c;
  // Halfway between background and vessel intensity.
  const double cut = 0.5 * (c.vessel_intensity + c.background_intensity);
  const auto be = oracle_threshold(cut, 0.02, 7);
  const TraceResult r = trace(s.images.image, s.seed, *be, TraceConfig{});
  const auto fin = finalize(r.accumulator);
  const double co = oracle::centerline_overlap(fin.mask, s.truth);
  const auto chances =
      std::count_if(r.steps.begin(), r.steps.end(), [](const StepRecord& x) { return x.outcome == "chance"; });
  int enlarged = 0;
  for (const auto& rec : r.steps) enlarged += rec.calls > 1;
  return {co >= 0.85, fmt("threshold cut %.0f, flip 0.02: CO %.4f (>=0.85), steps %zu, chance events %ld, "
                          "steps with enlargement %d",
                          cut, co, r.steps.size(), static_cast<long>(chances), enlarged)};
}

Outcome eikonal() {
  const Grid g{{32, 32, 32}, {1, 1, 1}, {}};
  constexpr double mid = 15.5;
  const auto pts = oracle::segment_points({-5, mid, mid}, {37, mid, mid});
  const Volume3D m =
      rasterize_phantom(oracle::polyline_tree({pts}, {std::vector<double>(pts.size(), 4.0)}), g, PhantomConfig{}).mask;
  EikonalOptions unit;
  unit.unit_speed = true;
  const Volume3D t = solve_eikonal(m, {2, 15, 15}, unit);
  double worst = 0;
  for (int i = 0; i < 32; ++i) worst = std::max(worst, std::abs(t(i, 15, 15) - std::abs(i - 2.0)));
  const Vec3 src{1, 15, 16}, target{30, 16, 15};
  const auto path = backtrace_path(solve_eikonal(m, src), target, src);
  double lateral = 0;
  for (const auto& p : path) lateral = std::max(lateral, std::hypot(p.y - mid, p.z - mid));
  return {worst <= 1.5 && lateral < 1.0,
          fmt("unit speed max |T - d| %.4f vox (<=1.5), backtrace lateral deviation %.4f vox (<1)", worst, lateral)};
}

CenterlinePath straight(Vec3 a, Vec3 b, double step) {
  CenterlinePath p;
  const int n = std::max(1, static_cast<int>(std::ceil(distance(a, b) / step)));
  for (int s = 0; s <= n; ++s) p.points.push_back(a + (b - a) * (static_cast<double>(s) / n));
  p.radii.assign(p.points.size(), 1.0);
  return p;
}

Outcome metric_oracles() {
  const Grid g{{12, 12, 12}, {1, 1, 1}, {}};
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> fill(0.05, 0.6), u(0.0, 11.0);
  int bad = 0, hd = 0, co = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const Volume3D x = oracle::random_mask(g, rng, fill(rng));
    const Volume3D y = oracle::random_mask(g, rng, fill(rng));
    bad += dice(x, y) != oracle::dice(x, y);
    if (x.count_nonzero() > 0 && y.count_nonzero() > 0) {
      ++hd;
      bad += hausdorff(x, y) != oracle::hausdorff(x, y);
    }
    const auto cl = straight({u(rng), u(rng), u(rng)}, {u(rng), u(rng), u(rng)}, 0.3);
    if (cl.length() > 0) {
      ++co;
      bad += centerline_overlap(x, {cl}) != oracle::centerline_overlap(x, {cl});
    }
  }
  return {bad == 0, fmt("200 pairs (%d Hausdorff, %d CO comparisons): %d mismatches (=0, exact equality)", hd, co, bad)};
}

Outcome distance_transform_exact() {
  std::mt19937_64 rng(11);
  const std::vector<Vec3> spacings{{1, 1, 1}, {1, 1, 2}, {0.5, 1.3, 0.8}, {2, 0.7, 1}};
  double worst = 0;
  int inf_bad = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Grid g{{8, 8, 8}, spacings[static_cast<std::size_t>(trial) % spacings.size()], {}};
    const Volume3D m = oracle::random_mask(g, rng, 0.7);
    for (bool border : {true, false}) {
      const Volume3D dt = distance_transform(m, border ? BorderMode::background : BorderMode::ignore);
      const auto ref = oracle::edt(m, border);
      for (std::size_t n = 0; n < m.size(); ++n) {
        if (std::isinf(ref[n]) || std::isinf(dt[n])) {
          inf_bad += std::isinf(ref[n]) != std::isinf(dt[n]);
        } else {
          worst = std::max(worst, std::abs(dt[n] - ref[n]) / std::max(1.0, ref[n]));
        }
      }
    }
  }
  return {worst <= 1e-5 && inf_bad == 0,
          fmt("100 masks x 2 border modes, 4 spacings: max rel error %.2e (<=1e-5), infinity mismatches %d", worst,
              inf_bad)};
}

Outcome marching_cubes_sphere() {
  const Grid g{{28, 28, 28}, {1, 1, 1}, {}};
  const Volume3D ball = oracle::sphere_mask(g, {13.5, 13.5, 13.5}, 10.0);
  const TriMesh raw = marching_cubes(ball, 0.5);
  const TriMesh smooth = smooth_windowed_sinc(raw, 10, 0.01);
  int non2 = 0;
  for (const auto& [edge, uses] : edge_use_counts(raw)) non2 += uses != 2;
  const double area = 4.0 * std::numbers::pi * 100.0, vol = 4.0 / 3.0 * std::numbers::pi * 1000.0;
  const double a_raw = surface_area(raw) / area - 1.0, a_smooth = surface_area(smooth) / area - 1.0;
  const double v_err = signed_volume(raw) / vol - 1.0;
  const double shrink = 1.0 - signed_volume(smooth) / signed_volume(raw);
  const bool pass = non2 == 0 && is_watertight(smooth) && std::abs(a_smooth) <= 0.05 && std::abs(v_err) <= 0.03 &&
                    shrink < 0.05;
  return {pass, fmt("edges not used twice %d (=0), area error smoothed %+.2f%% (|.|<=5%%; raw facets %+.2f%%), "
                    "volume error %+.2f%% (|.|<=3%%), smoothing shrink %.2f%% (<5%%)",
                    non2, 100 * a_smooth, 100 * a_raw, 100 * v_err, 100 * shrink)};
}

Outcome assembly_identity() {
  const Grid image{{40, 40, 40}, {1, 1, 1}, {}};
  const auto blob = [](const SubvolumeSpec& spec, const Vec3& c, double r) {
    Volume3D p(spec.grid(), VolumeKind::probability);
    const Grid& sg = p.grid();
    for (int k = 0; k < sg.dims[2]; ++k)
      for (int j = 0; j < sg.dims[1]; ++j)
        for (int i = 0; i < sg.dims[0]; ++i)
          p(i, j, k) = static_cast<float>(std::max(0.0, 1.0 - distance(sg.world(i, j, k), c) / r));
    return p;
  };
  // Sub-voxel centres coincide with image voxel centres.
  const SubvolumeSpec spec{{20.5, 20.5, 20.5}, 16.0, 16};
  const Volume3D prob = blob(spec, {20.2, 21, 19.7}, 9.0);
  GlobalAccumulator acc(image);
  acc.accumulate(prob, spec, 0);
  const auto fin = finalize(acc);
  const Grid sg = spec.grid();
  int mismatched = 0;
  for (int k = 0; k < 40; ++k)
    for (int j = 0; j < 40; ++j)
      for (int i = 0; i < 40; ++i) {
        const Vec3 c = sg.continuous_index(image.world(i, j, k));
        const int a = static_cast<int>(std::lround(c.x)), b = static_cast<int>(std::lround(c.y)),
                  e = static_cast<int>(std::lround(c.z));
        const float want = sg.in_bounds(a, b, e) && prob(a, b, e) >= 0.5f ? 1.0f : 0.0f;
        mismatched += fin.mask(i, j, k) != want;
      }

  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> pos(8.0, 32.0), side(6.0, 14.0);
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  std::vector<std::pair<SubvolumeSpec, Volume3D>> parts;
  for (int n = 0; n < 20; ++n) {
    const SubvolumeSpec s{{pos(rng), pos(rng), pos(rng)}, side(rng), 12};
    Volume3D p(s.grid(), VolumeKind::probability);
    for (std::size_t v = 0; v < p.size(); ++v) p[v] = unit(rng);
    parts.emplace_back(s, std::move(p));
  }
  GlobalAccumulator fixed(image), shuffled(image);
  for (std::size_t n = 0; n < parts.size(); ++n) fixed.accumulate(parts[n].second, parts[n].first, static_cast<int>(n));
  std::vector<std::size_t> order(parts.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (auto n : order) shuffled.accumulate(parts[n].second, parts[n].first, static_cast<int>(n));
  const Volume3D ma = fixed.mean(), mb = shuffled.mean();
  double worst = 0;
  for (std::size_t n = 0; n < ma.size(); ++n) worst = std::max(worst, static_cast<double>(std::abs(ma[n] - mb[n])));
  return {mismatched == 0 && worst <= 1e-6,
          fmt("single contribution: %d voxels differ from the binarized input (=0); shuffled order max diff %.2e "
              "(<=1e-6)",
              mismatched, worst)};
}

Outcome wilcoxon() {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> small(-4, 4);
  std::normal_distribution<double> noise(0.2, 1.0);
  double worst = 0;
  int cases = 0;
  for (int n = 5; n <= 12; ++n)
    for (int trial = 0; trial < 15; ++trial) {
      std::vector<double> a(static_cast<std::size_t>(n)), b(static_cast<std::size_t>(n), 0.0);
      for (auto& v : a) {
        do v = trial % 2 ? small(rng) : noise(rng);
        while (v == 0.0);
      }
      worst = std::max(worst, std::abs(wilcoxon_signed_rank(a, b).p_two_sided - oracle::wilcoxon_enumerated_p(a, b)));
      ++cases;
    }
  const double p5 = wilcoxon_signed_rank({2, 3, 4, 5, 6}, {1, 1, 1, 1, 1}).p_two_sided;
  return {worst <= 1e-12 && p5 == 0.0625,
          fmt("%d samples n=5..12: max |p - enumerated| %.1e (<=1e-12); n=5 all positive p=%.6g (=0.0625)", cases,
              worst, p5)};
}

Outcome loss() {
  const Grid g{{2, 1, 1}, {1, 1, 1}, {}};
  Volume3D pred(g, VolumeKind::probability, 0.5f);
  Volume3D truth(g, VolumeKind::binary);
  truth[0] = 1.0f;
  const LossTerms l = evaluate_loss(pred, truth);
  const bool pass = std::abs(l.dice - 0.5) <= 1e-6 && std::abs(l.bce - std::log(2.0)) <= 1e-6;
  return {pass, fmt("dice %.8f (0.5), bce %.8f (ln 2 = %.8f), tolerance 1e-6", l.dice, l.bce, std::log(2.0))};
}

int shell(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  const auto dir = oracle::temp_dir("acceptance_det");
  const std::string cli = std::string("'") + VTRACE_CLI + "'";
  std::ofstream(dir / "phantom.json") << R"({"depth": 1, "root_length": 30, "root_start": [32, 32, 4],
    "dims": [64, 64, 72], "rng_seed": 5})";
  if (shell(cli + " phantom --config '" + (dir / "phantom.json").string() + "' --out '" + (dir / "ph").string() +
            "' > /dev/null") != 0)
    return {false, "phantom generation failed"};
  std::ifstream cl(dir / "ph" / "centerlines.json");
  const auto seed = nlohmann::json::parse(cl)["seed"];
  const auto csv = [](const nlohmann::json& a) {
    std::ostringstream s;
    s.precision(17);
    s << a[0].get<double>() << ',' << a[1].get<double>() << ',' << a[2].get<double>();
    return s.str();
  };
  std::ostringstream args;
  args.precision(17);
  args << " trace --image '" << (dir / "ph" / "image.rvol.json").string() << "' --gt-mask '"
       << (dir / "ph" / "mask.rvol.json").string() << "' --seed " << csv(seed["point"]) << " --direction "
       << csv(seed["direction"]) << " --radius " << seed["radius"].get<double>() << " --out ";
  for (const char* run : {"a", "b"})
    if (shell(cli + args.str() + "'" + (dir / run).string() + "' > /dev/null") != 0)
      return {false, std::string("trace run ") + run + " failed"};
  int files = 0, differ = 0;
  for (const auto& entry : fs::directory_iterator(dir / "a")) {
    if (!entry.is_regular_file()) continue;
    ++files;
    const fs::path other = dir / "b" / entry.path().filename();
    differ += !fs::exists(other) || slurp(entry.path()) != slurp(other);
  }
  const bool have_all = fs::exists(dir / "a" / "steps.jsonl") && fs::exists(dir / "a" / "prob.rvol.json") &&
                        fs::exists(dir / "a" / "mask.rvol.json");
  return {have_all && differ == 0 && files > 0,
          fmt("two CLI trace runs: %d output files compared byte for byte, %d differ (=0)", files, differ)};
}

Outcome stop_criteria() {
  // N_max on the Y phantom.
  PhantomConfig c;
  c.depth = 1;
  c.root_length = 40;
  c.root_start = Vec3{48, 48, 4};
  const Grid g{{96, 96, 96}, {1, 1, 1}, {}};
  const auto ytree = generate_tree(c, voxel_center_box(g));
  const auto y = rasterize_phantom(ytree, g, c);
  const auto ybe = oracle_gtcrop(y.mask);
  TraceConfig nmax;
  nmax.n_max = 3;
  const TraceResult rn = trace(y.image, make_seed(ytree.branches[0].points[20], {0, 0, 1}, 4.0), *ybe, nmax);
  const bool n_ok = rn.steps.size() == 3 && rn.steps.back().stop_reason == StopReason::n_max;

  // R_min on a tube narrowing from 3.5 to 0.3 mm.
  const Grid tg{{64, 64, 100}, {1, 1, 1}, {}};
  const auto pts = oracle::segment_points({32, 32, -5}, {32, 32, 105});
  std::vector<double> radii;
  for (const auto& p : pts) radii.push_back(std::max(0.3, 3.5 - 3.2 * (p.z + 5) / 100.0));
  const auto taper = rasterize_phantom(oracle::polyline_tree({pts}, {radii}), tg, PhantomConfig{});
  const auto tbe = oracle_gtcrop(taper.mask);
  TraceConfig rmin;
  rmin.r_min = 1.5;
  const TraceResult rr = trace(taper.image, make_seed({32, 32, 8}, {0, 0, 1}, 3.1), *tbe, rmin);
  const bool r_ok = rr.stops.size() == 1 && rr.stops[0].reason == StopReason::r_min &&
                    rr.steps.back().stop_reason == StopReason::r_min;

  // Boundary on a straight tube leaving the image.
  const Grid sg{{48, 48, 80}, {1, 1, 1}, {}};
  const auto spts = oracle::segment_points({24, 24, -5}, {24, 24, 85});
  const auto tube = rasterize_phantom(oracle::polyline_tree({spts}, {std::vector<double>(spts.size(), 3.0)}), sg,
                                      PhantomConfig{});
  const auto sbe = oracle_gtcrop(tube.mask);
  const TraceResult rb = trace(tube.image, make_seed({24, 24, 8}, {0, 0, 1}, 3.0), *sbe, TraceConfig{});
  const bool b_ok = rb.stops.size() == 1 && rb.stops[0].reason == StopReason::boundary &&
                    rb.steps.back().stop_reason == StopReason::boundary;

  const auto last = [](const TraceResult& r) {
    return r.steps.empty() || !r.steps.back().stop_reason ? std::string("none")
                                                          : std::string(to_string(*r.steps.back().stop_reason));
  };
  return {n_ok && r_ok && b_ok,
          fmt("N_max=3: %zu steps, reason %s; tapering tube (R_min 1.5): reason %s at z=%.1f; straight tube: "
              "reason %s at z=%.1f",
              rn.steps.size(), last(rn).c_str(), last(rr).c_str(), rr.stops.empty() ? 0.0 : rr.stops[0].point.z,
              last(rb).c_str(), rb.stops.empty() ? 0.0 : rb.stops[0].point.z)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"phantom end-to-end", phantom_end_to_end},
      {"bifurcation exactness", bifurcation_exactness},
      {"robustness under label noise", robustness},
      {"eikonal correctness", eikonal},
      {"metric oracles", metric_oracles},
      {"distance transform exactness", distance_transform_exact},
      {"marching cubes sphere", marching_cubes_sphere},
      {"assembly identity", assembly_identity},
      {"wilcoxon exact p", wilcoxon},
      {"loss two-voxel case", loss},
      {"determinism", determinism},
      {"stop criteria", stop_criteria},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  std::cout << (failed ? "FAILED " : "ALL PASSED ") << criteria.size() - failed << "/" << criteria.size() << std::endl;
  return failed;
}
