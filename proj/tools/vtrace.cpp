// vtrace command-line front end: trace, phantom, metrics, sample-patches, wilcoxon.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "vtrace/vtrace.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "vtrace 0.1.0";

enum Exit { ok = 0, usage = 1, runtime = 2 };

// Raised while validating inputs; maps to exit code 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError(path + ": " + e.what());
  }
}

vtrace::Vec3 to_vec(const std::vector<double>& v) { return {v.at(0), v.at(1), v.at(2)}; }

// ---------------------------------------------------------------- trace

struct TraceArgs {
  std::string image, gt_mask, backend = "oracle-gt", backend_cmd, workdir, config, out;
  std::vector<double> seed, direction;
  double radius = 0.0;
  std::optional<double> cut;
  double flip_prob = 0.0;
  std::uint64_t rng = 0;
  double threshold = 0.5;
  int smoothing = 10;
};

int run_trace(const TraceArgs& a) {
  vtrace::TraceConfig cfg;
  vtrace::Volume3D image;
  std::unique_ptr<vtrace::SegmenterBackend> backend;
  vtrace::StepPoint seed;
  try {
    if (!a.config.empty()) cfg = vtrace::trace_config_from_json(read_json_file(a.config), cfg);
    cfg.validate();
    image = vtrace::load_volume(a.image);
    if (cfg.normalization == vtrace::Normalization::ct && !cfg.ct_stats)
      throw UsageError("ct normalization needs ct_stats in the config");
    if (a.backend == "oracle-gt") {
      if (a.gt_mask.empty()) throw UsageError("--backend oracle-gt needs --gt-mask");
      backend = vtrace::oracle_gtcrop(vtrace::load_volume(a.gt_mask));
    } else if (a.backend == "oracle-threshold") {
      if (!a.cut) throw UsageError("--backend oracle-threshold needs --cut");
      backend = vtrace::oracle_threshold(*a.cut, a.flip_prob, a.rng);
    } else {
      if (a.backend_cmd.empty()) throw UsageError("--backend external needs --backend-cmd");
      const fs::path work = a.workdir.empty() ? fs::path(a.out) / "backend_io" : fs::path(a.workdir);
      backend = vtrace::external_backend(a.backend_cmd, work);
    }
    seed.point = to_vec(a.seed);
    seed.tangent = to_vec(a.direction);
    if (vtrace::norm(seed.tangent) == 0.0) throw UsageError("--direction must be nonzero");
    seed.radius = a.radius;
    seed.prev_radius = a.radius;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return usage;
  } catch (const vtrace::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code() == vtrace::ErrorCode::invalid_argument ? usage : runtime;
  }

  try {
    const vtrace::TraceResult res = vtrace::trace(image, seed, *backend, cfg);
    fs::create_directories(a.out);
    const fs::path out(a.out);
    vtrace::write_step_log(res.steps, out / "steps.jsonl");
    json extra = {{"stops", vtrace::stops_to_json(res.stops)},
                  {"bifurcation_events", res.bifurcation_events},
                  {"branches_started", res.branches_started},
                  {"segmentation_calls", res.segmentation_calls},
                  {"config", vtrace::to_json(cfg)}};
    vtrace::save_centerlines(res.centerlines, out / "centerlines.json", extra);
    vtrace::FinalizeOptions fo;
    fo.threshold = a.threshold;
    fo.smoothing_iterations = a.smoothing;
    const vtrace::FinalizedModel model = vtrace::finalize(res.accumulator, fo);
    vtrace::save_volume(model.probability, out / "prob.rvol.json");
    vtrace::save_volume(model.mask, out / "mask.rvol.json");
    vtrace::save_mesh(model.surface, out / "surface.ply");
    std::cout << "steps " << res.steps.size() << ", branches " << res.branches_started << ", bifurcations "
              << res.bifurcation_events << ", segmentation calls " << res.segmentation_calls << '\n';
  } catch (const vtrace::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return runtime;
  }
  return ok;
}

// -------------------------------------------------------------- phantom

struct PhantomArgs {
  std::string config, out;
  std::vector<int> dims;
  std::vector<double> spacing, origin;
  std::optional<std::uint64_t> rng;
};

int run_phantom(const PhantomArgs& a) {
  vtrace::PhantomConfig cfg;
  vtrace::Grid grid{{128, 128, 128}, {1.0, 1.0, 1.0}, {0.0, 0.0, 0.0}};
  try {
    if (!a.config.empty()) {
      const json j = read_json_file(a.config);
      cfg = vtrace::phantom_config_from_json(j, {"dims", "spacing", "origin"});
      try {
        if (j.contains("dims")) grid.dims = j["dims"].get<vtrace::Index3>();
        if (j.contains("spacing")) grid.spacing = vtrace::from_array(j["spacing"].get<std::array<double, 3>>());
        if (j.contains("origin")) grid.origin = vtrace::from_array(j["origin"].get<std::array<double, 3>>());
      } catch (const json::exception& e) {
        throw UsageError(std::string("phantom grid: ") + e.what());
      }
    }
    if (!a.dims.empty()) grid.dims = {a.dims.at(0), a.dims.at(1), a.dims.at(2)};
    if (!a.spacing.empty()) grid.spacing = to_vec(a.spacing);
    if (!a.origin.empty()) grid.origin = to_vec(a.origin);
    if (a.rng) cfg.rng_seed = *a.rng;
    cfg.validate();
    grid.validate();
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return usage;
  } catch (const vtrace::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return usage;
  }

  try {
    const vtrace::PhantomTree tree = vtrace::generate_tree(cfg, vtrace::voxel_center_box(grid));
    const vtrace::PhantomImages images = vtrace::rasterize_phantom(tree, grid, cfg);
    const auto truth = vtrace::phantom_ground_truth(tree);
    fs::create_directories(a.out);
    const fs::path out(a.out);
    vtrace::save_volume(images.image, out / "image.rvol.json");
    vtrace::save_volume(images.mask, out / "mask.rvol.json");
    // Suggested seed: a few radii into the root, heading along it.
    const auto& root = truth.front();
    const std::size_t at = std::min<std::size_t>(root.points.size() - 1,
                                                 static_cast<std::size_t>(2.5 * cfg.root_radius / cfg.sample_step));
    const std::size_t ahead = std::min(at + 1, root.points.size() - 1);
    const vtrace::Vec3 dir = ahead > at ? vtrace::normalized(root.points[ahead] - root.points[at])
                                        : vtrace::normalized(cfg.root_direction);
    json extra = {{"seed", {{"point", vtrace::to_array(root.points[at])},
                            {"direction", vtrace::to_array(dir)},
                            {"radius", root.radii[at]}}},
                  {"rng_seed", cfg.rng_seed}};
    vtrace::save_centerlines(truth, out / "centerlines.json", extra);
    std::cout << "branches " << truth.size() << ", mask voxels " << images.mask.count_nonzero() << '\n';
  } catch (const vtrace::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code() == vtrace::ErrorCode::invalid_argument ? usage : runtime;
  }
  return ok;
}

// -------------------------------------------------------------- metrics

struct MetricsArgs {
  std::string pred, truth, centerlines, case_id, csv;
  bool mask_from_centerline = false;
  bool largest_component = false;
};

int run_metrics(const MetricsArgs& a) {
  try {
    const vtrace::Volume3D pred = vtrace::load_volume(a.pred);
    const vtrace::Volume3D truth = vtrace::load_volume(a.truth);
    const auto cl = vtrace::load_centerlines(a.centerlines);
    vtrace::MetricsOptions opts;
    opts.mask_from_centerline = a.mask_from_centerline;
    opts.largest_component = a.largest_component;
    const vtrace::MetricsReport r = vtrace::evaluate(pred, truth, cl, opts, a.case_id);
    std::cout << vtrace::to_json(r).dump() << '\n';
    if (!a.csv.empty()) {
      const bool fresh = !fs::exists(a.csv) || fs::file_size(a.csv) == 0;
      std::ofstream out(a.csv, std::ios::app);
      if (!out) throw vtrace::Error(vtrace::ErrorCode::io, "cannot write " + a.csv);
      if (fresh) out << vtrace::metrics_csv_header() << '\n';
      out << vtrace::metrics_csv_row(r) << '\n';
    }
  } catch (const vtrace::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return runtime;
  }
  return ok;
}

// ------------------------------------------------------- sample-patches

struct PatchArgs {
  std::string image, mask, centerlines, out, case_id = "case";
  vtrace::PatchSampleParams params;
};

int run_sample_patches(const PatchArgs& a) {
  try {
    a.params.validate();
  } catch (const vtrace::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return usage;
  }
  try {
    const vtrace::Volume3D image = vtrace::load_volume(a.image);
    const vtrace::Volume3D mask = vtrace::load_volume(a.mask);
    const auto cl = vtrace::load_centerlines(a.centerlines);
    fs::create_directories(a.out);
    const fs::path out(a.out);
    json manifest = json::array();
    std::size_t id = 0;
    const std::size_t n = vtrace::sample_training_patches(image, mask, cl, a.params, [&](vtrace::TrainingPatch&& p) {
      char stem[32];
      std::snprintf(stem, sizeof stem, "patch_%06zu", id++);
      const std::string img = std::string(stem) + "_image.rvol.json";
      const std::string lab = std::string(stem) + "_label.rvol.json";
      vtrace::save_volume(p.image, out / img);
      vtrace::save_volume(p.label, out / lab);
      manifest.push_back(vtrace::manifest_row(p.meta, img, lab, a.case_id));
    });
    std::ofstream mf(out / "manifest.json", std::ios::trunc);
    if (!mf) throw vtrace::Error(vtrace::ErrorCode::io, "cannot write manifest");
    mf << manifest.dump(1) << '\n';
    std::cout << "patches " << n << '\n';
  } catch (const vtrace::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return runtime;
  }
  return ok;
}

// ------------------------------------------------------------- wilcoxon

int run_wilcoxon(const std::vector<double>& a, const std::vector<double>& b) {
  try {
    const auto r = vtrace::wilcoxon_signed_rank(a, b);
    std::cout << json{{"statistic", r.statistic}, {"p_two_sided", r.p_two_sided}, {"n", r.n}, {"exact", r.exact}}.dump()
              << '\n';
  } catch (const vtrace::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return usage;
  }
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential vessel tracing and segmentation"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "Worker threads (tracing itself is sequential)")
      ->check(CLI::PositiveNumber);

  TraceArgs ta;
  auto* trace = app.add_subcommand("trace", "Trace a vessel tree from one seed");
  trace->add_option("--image", ta.image, "Input image (RVOL header)")->required()->check(CLI::ExistingFile);
  trace->add_option("--seed", ta.seed, "Seed point x,y,z in mm")->required()->expected(3)->delimiter(',');
  trace->add_option("--direction", ta.direction, "Initial direction dx,dy,dz")
      ->required()
      ->expected(3)
      ->delimiter(',');
  trace->add_option("--radius", ta.radius, "Seed radius estimate, mm")->required()->check(CLI::PositiveNumber);
  trace->add_option("--backend", ta.backend, "Segmentation backend")
      ->check(CLI::IsMember({"oracle-gt", "oracle-threshold", "external"}));
  trace->add_option("--gt-mask", ta.gt_mask, "Ground-truth mask for oracle-gt")->check(CLI::ExistingFile);
  trace->add_option("--cut", ta.cut, "Intensity cut for oracle-threshold");
  trace->add_option("--flip-prob", ta.flip_prob, "Label flip probability for oracle-threshold")
      ->check(CLI::Range(0.0, 1.0));
  trace->add_option("--backend-cmd", ta.backend_cmd, "External command with {input} and {output}");
  trace->add_option("--workdir", ta.workdir, "Scratch directory for the external backend");
  trace->add_option("--config", ta.config, "JSON overrides for the trace configuration")->check(CLI::ExistingFile);
  trace->add_option("--threshold", ta.threshold, "Binarization threshold of the fused map")
      ->check(CLI::Range(0.0, 1.0));
  trace->add_option("--smoothing-iterations", ta.smoothing, "Surface smoothing iterations")
      ->check(CLI::NonNegativeNumber);
  trace->add_option("--seed-rng", ta.rng, "RNG seed for stochastic backends");
  trace->add_option("--out", ta.out, "Output directory")->required();

  PhantomArgs pa;
  auto* phantom = app.add_subcommand("phantom", "Generate a synthetic vessel tree");
  phantom->add_option("--config", pa.config, "Phantom configuration (JSON)")->check(CLI::ExistingFile);
  phantom->add_option("--dims", pa.dims, "Grid size nx,ny,nz")->expected(3)->delimiter(',');
  phantom->add_option("--spacing", pa.spacing, "Voxel spacing in mm")->expected(3)->delimiter(',');
  phantom->add_option("--origin", pa.origin, "Centre of the first voxel in mm")->expected(3)->delimiter(',');
  phantom->add_option("--seed-rng", pa.rng, "Overrides rng_seed");
  phantom->add_option("--out", pa.out, "Output directory")->required();

  MetricsArgs ma;
  auto* metrics = app.add_subcommand("metrics", "Compare a segmentation with ground truth");
  metrics->add_option("--pred", ma.pred, "Predicted mask or probability (RVOL)")->required();
  metrics->add_option("--truth", ma.truth, "Ground-truth mask (RVOL)")->required();
  metrics->add_option("--centerlines", ma.centerlines, "Ground-truth centerlines (JSON)")->required();
  metrics->add_flag("--mask-from-centerline", ma.mask_from_centerline, "Evaluate inside the centerline region only");
  metrics->add_flag("--largest-component", ma.largest_component, "Keep the largest predicted component");
  metrics->add_option("--case-id", ma.case_id, "Case label for the report");
  metrics->add_option("--csv", ma.csv, "Append the report to this CSV file");
  std::uint64_t metrics_rng = 0;
  metrics->add_option("--seed-rng", metrics_rng, "Accepted for uniformity; metrics are deterministic");

  PatchArgs sa;
  auto* patches = app.add_subcommand("sample-patches", "Sample training patches along centerlines");
  patches->add_option("--image", sa.image, "Image (RVOL)")->required();
  patches->add_option("--mask", sa.mask, "Label mask (RVOL)")->required();
  patches->add_option("--centerlines", sa.centerlines, "Centerlines (JSON)")->required();
  patches->add_option("--out", sa.out, "Output directory")->required();
  patches->add_option("--case-id", sa.case_id, "Source case label");
  patches->add_option("--mu-r", sa.params.mu_r, "Mean of the size factor");
  patches->add_option("--var-r", sa.params.var_r, "Variance of the size factor");
  patches->add_option("--mu-s", sa.params.mu_s, "Mean of the offset factor");
  patches->add_option("--var-s", sa.params.var_s, "Variance of the offset factor");
  patches->add_option("--samples-per-point", sa.params.samples_per_centerline_point, "Patches per centerline point");
  patches->add_option("--voxels", sa.params.voxels_per_side, "Patch resolution")->check(CLI::PositiveNumber);
  patches->add_option("--seed-rng", sa.params.rng_seed, "RNG seed");

  std::vector<double> wa, wb;
  auto* wilcoxon = app.add_subcommand("wilcoxon", "Paired signed-rank test");
  wilcoxon->add_option("--a", wa, "First sample, comma separated")->required()->delimiter(',');
  wilcoxon->add_option("--b", wb, "Second sample, comma separated")->required()->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return usage;
  }

  try {
    if (*trace) return run_trace(ta);
    if (*phantom) return run_phantom(pa);
    if (*metrics) return run_metrics(ma);
    if (*patches) return run_sample_patches(sa);
    if (*wilcoxon) return run_wilcoxon(wa, wb);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return runtime;
  }
  return usage;
}
