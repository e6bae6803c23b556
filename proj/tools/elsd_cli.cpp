// elsd: command-line front end.
//
//   elsd synth     --scenario s.json --out run/
//   elsd decompose --in run/ --out run/dec [--lambda1 r] [--lambda2 r] [--mode elsd|lsd] [--tau r] [--batch k]
//   elsd detect    --in run/dec --theta mad|<r> --min-area 2 --out dets.csv
//   elsd evaluate  --dets dets.csv --gt run/gt.csv --iou 0.3 [--sweep 0.1:0.9:0.1]
//   elsd sweep     --in run/ --param lambda2 --grid geom:0.001:1:5 --out sweep/
//   elsd rerun     --manifest run/dec/manifest.json --out again/
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 non-convergence (--strict).

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "elsd/elsd.hpp"

namespace {

using namespace elsd;
namespace pl = elsd::pipeline;
namespace fs = std::filesystem;

constexpr int kUsage = 1;
constexpr int kData = 2;
constexpr int kNotConverged = 3;

struct SolverFlags {
  std::optional<double> lambda1, lambda2, mu0, mu_bar;
  double rho = 1.5;
  double tau = 1e-7;
  int max_iters = 500;
  std::string mode = "elsd";
  double prox_tol = 1e-9;
  double intensity_scale = 255.0;
  int batch = 0;
  int window = 3;
  std::string pattern = "*.pgm";
  std::optional<int> height, width;

  void attach(CLI::App* app) {
    app->add_option("--lambda1", lambda1, "foreground weight (default 1/sqrt(p))");
    app->add_option("--lambda2", lambda2, "residual weight (default lambda1/5)");
    app->add_option("--mu0", mu0, "initial penalty (default 1.25/||D||_2)");
    app->add_option("--mu-bar", mu_bar, "penalty cap (default 1e5 mu0)");
    app->add_option("--rho", rho, "penalty growth factor")->capture_default_str();
    app->add_option("--tau", tau, "relative residual stop tolerance")->capture_default_str();
    app->add_option("--max-iters", max_iters, "iteration cap")->capture_default_str();
    app->add_option("--mode", mode, "elsd or lsd")->capture_default_str();
    app->add_option("--prox-tol", prox_tol, "inner prox tolerance")->capture_default_str();
    app->add_option("--intensity-scale", intensity_scale, "gray levels per unit intensity")
        ->capture_default_str();
    app->add_option("--batch", batch, "frames per batch, 0 = all")->capture_default_str();
    app->add_option("--window", window, "group window side")->capture_default_str();
    app->add_option("--pattern", pattern, "frame filename pattern")->capture_default_str();
    app->add_option("--height", height, "frame height for raw matrix input");
    app->add_option("--width", width, "frame width for raw matrix input");
  }

  pl::DecomposeOptions build(const fs::path& in) const {
    pl::DecomposeOptions o;
    o.input = in;
    o.pattern = pattern;
    if (height || width) {
      if (!height || !width) throw InvalidParameter("--height and --width go together");
      o.geometry = Geometry{*height, *width};
    }
    SolverConfig& c = o.config;
    c.lambda1 = lambda1;
    c.lambda2 = lambda2;
    c.mu0 = mu0;
    c.mu_bar = mu_bar;
    c.rho = rho;
    c.tau = tau;
    c.max_iters = max_iters;
    c.mode = parse_mode(mode);
    c.prox_tol = prox_tol;
    c.intensity_scale = intensity_scale;
    c.validate();
    if (batch < 0) throw InvalidParameter("--batch must be >= 0");
    if (window < 1) throw InvalidParameter("--window must be >= 1");
    o.batch = batch;
    o.window = window;
    return o;
  }
};

ThresholdPolicy parse_theta(const std::string& s) {
  if (s == "mad") return MadThreshold{};
  if (s.rfind("mad:", 0) == 0) {
    const double k = std::stod(s.substr(4));
    if (!(k > 0.0)) throw InvalidParameter("MAD factor must be > 0");
    return MadThreshold{k};
  }
  std::size_t used = 0;
  double theta = 0.0;
  try {
    theta = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || !(theta >= 0.0)) throw InvalidParameter("--theta must be 'mad', 'mad:<k>' or a number >= 0");
  return FixedThreshold{theta};
}

void print_report(const MetricsReport& m) {
  std::printf("iou=%.3f tp=%ld fp=%ld fn=%ld recall=%.4f precision=%.4f f1=%.4f\n", m.iou_threshold, m.tp, m.fp,
              m.fn, m.recall, m.precision, m.f1);
}

void print_decompose(const pl::DecomposeOutcome& r) {
  for (std::size_t b = 0; b < r.batches.size(); ++b) {
    const auto& s = r.batches[b];
    std::printf("batch %zu frames %ld-%ld: iterations=%d converged=%s rank_B=%ld stop=%.3e\n", b,
                static_cast<long>(s.first_frame), static_cast<long>(s.first_frame + s.frames - 1), s.iterations,
                s.converged ? "yes" : "no", static_cast<long>(s.rank_B), s.final_stop);
  }
  std::printf("rank_B=%ld\n", static_cast<long>(r.rank_B));
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Low-rank + structured-sparse + residual decomposition of frame sequences"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  std::vector<std::string> args(argv, argv + argc);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic sequence with ground truth");
  std::string scenario_path;
  std::string synth_out;
  synth->add_option("--scenario", scenario_path, "scenario JSON (missing keys take defaults)")->required();
  synth->add_option("--out", synth_out, "output directory")->required();

  // decompose
  auto* dec = app.add_subcommand("decompose", "solve the decomposition per batch");
  std::string dec_in, dec_out;
  bool strict = false;
  SolverFlags dec_flags;
  dec->add_option("--in", dec_in, "frame directory, run directory or raw matrix")->required();
  dec->add_option("--out", dec_out, "output directory")->required();
  dec->add_flag("--strict", strict, "exit 3 if any batch misses the tolerance");
  dec_flags.attach(dec);

  // detect
  auto* det = app.add_subcommand("detect", "threshold S and extract boxes");
  std::string det_in, det_out, theta = "mad";
  int min_area = 2;
  det->add_option("--in", det_in, "decomposition directory")->required();
  det->add_option("--theta", theta, "'mad', 'mad:<k>' or a fixed threshold")->capture_default_str();
  det->add_option("--min-area", min_area, "smallest component kept")->capture_default_str();
  det->add_option("--out", det_out, "detections CSV")->required();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score detections against ground truth");
  pl::EvaluateOptions ev_opt;
  std::string ev_sweep, ev_out;
  ev->add_option("--dets", ev_opt.dets, "detections CSV")->required();
  ev->add_option("--gt", ev_opt.gt, "ground-truth CSV")->required();
  ev->add_option("--iou", ev_opt.iou, "IoU threshold")->capture_default_str();
  ev->add_option("--sweep", ev_sweep, "IoU range a:b:step");
  ev->add_option("--out", ev_out, "metrics CSV");

  // sweep
  auto* sw = app.add_subcommand("sweep", "repeat decompose+detect+evaluate over a parameter grid");
  std::string sw_in, sw_out, sw_grid, sw_gt, sw_theta = "mad";
  pl::SweepOptions sw_opt;
  SolverFlags sw_flags;
  sw->add_option("--in", sw_in, "frame directory, run directory or raw matrix")->required();
  sw->add_option("--param", sw_opt.param, "lambda1, lambda2 or batch")->capture_default_str();
  sw->add_option("--grid", sw_grid, "'v1,v2,...' or 'geom:a:b:n'")->required();
  sw->add_flag("--relative", sw_opt.relative, "lambda grid values are multiples of lambda1");
  sw->add_option("--gt", sw_gt, "ground-truth CSV (default <in>/gt.csv)");
  sw->add_option("--theta", sw_theta, "detection threshold")->capture_default_str();
  sw->add_option("--min-area", sw_opt.min_area, "smallest component kept")->capture_default_str();
  sw->add_option("--iou", sw_opt.iou, "IoU threshold")->capture_default_str();
  sw->add_option("--out", sw_out, "output directory")->required();
  sw_flags.attach(sw);

  // rerun
  auto* rr = app.add_subcommand("rerun", "repeat a synth or decompose run from its manifest");
  std::string rr_manifest, rr_out;
  rr->add_option("--manifest", rr_manifest, "manifest.json of an earlier run")->required();
  rr->add_option("--out", rr_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (synth->parsed()) {
      const SynthScenario scn = pl::scenario_from_json(io::read_json(scenario_path));
      const auto m = pl::run_synth(scn, synth_out);
      std::printf("wrote %d frames to %s (clipped entries: %ld)\n", scn.n_frames, synth_out.c_str(),
                  m["clipped_entries"].get<long>());
    } else if (dec->parsed()) {
      pl::DecomposeOptions o = dec_flags.build(dec_in);
      o.out = dec_out;
      o.strict = strict;
      print_decompose(pl::run_decompose(o, args));
    } else if (det->parsed()) {
      if (min_area < 1) throw InvalidParameter("--min-area must be >= 1");
      const auto dets = pl::run_detect({det_in, parse_theta(theta), min_area, det_out});
      std::size_t total = 0;
      for (const auto& f : dets) total += f.size();
      std::printf("%zu detections in %zu frames\n", total, dets.size());
    } else if (ev->parsed()) {
      if (!ev_sweep.empty()) ev_opt.sweep = ev_sweep;
      ev_opt.out = ev_out;
      for (const auto& r : pl::run_evaluate(ev_opt)) print_report(r);
    } else if (sw->parsed()) {
      sw_opt.base = sw_flags.build(sw_in);
      sw_opt.grid = pl::parse_grid(sw_grid);
      sw_opt.gt = sw_gt;
      sw_opt.threshold = parse_theta(sw_theta);
      sw_opt.out = sw_out;
      for (const auto& r : pl::run_sweep(sw_opt))
        std::printf("%s=%g iterations=%d rank_B=%ld mean|E|=%.4g f1=%.4f\n", sw_opt.param.c_str(), r.value,
                    r.iterations, static_cast<long>(r.rank_B), r.mean_abs_E, r.metrics.f1);
    } else if (rr->parsed()) {
      const auto m = io::read_json(rr_manifest);
      const std::string cmd = m.value("command", std::string());
      if (cmd == "synth") {
        pl::run_synth(pl::scenario_from_json(m.at("scenario")), rr_out);
      } else if (cmd == "decompose") {
        print_decompose(pl::run_decompose(pl::options_from_manifest(m, rr_out),
                                          m.value("argv", std::vector<std::string>{})));
      } else {
        throw DataError("manifest command '" + cmd + "' cannot be rerun");
      }
    }
  } catch (const pl::NotConverged& e) {
    std::cerr << "elsd: " << e.what() << '\n';
    return kNotConverged;
  } catch (const InvalidParameter& e) {
    std::cerr << "elsd: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "elsd: " << e.what() << '\n';
    return kData;
  }
  return 0;
}
