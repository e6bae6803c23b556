#ifndef ELSD_PIPELINE_HPP
#define ELSD_PIPELINE_HPP

// File-level phases behind the command-line tool: synth, decompose, detect,
// evaluate, sweep. Each phase reads and writes a run directory and records a
// manifest.json describing how to reproduce it.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "elsd/detection.hpp"
#include "elsd/errors.hpp"
#include "elsd/io.hpp"
#include "elsd/linalg.hpp"
#include "elsd/solver.hpp"
#include "elsd/structured_sparsity.hpp"
#include "elsd/synth.hpp"
#include "elsd/version.hpp"

namespace elsd::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// Raised when a decomposition did not reach tau and strict mode is on.
class NotConverged : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// JSON mappings

inline json to_json(const SynthScenario& s) {
  return {{"height", s.height},         {"width", s.width},
          {"n_frames", s.n_frames},     {"rank", s.rank},
          {"n_targets", s.n_targets},   {"target_h", s.target_h},
          {"target_w", s.target_w},     {"target_contrast", s.target_contrast},
          {"target_speed", s.target_speed}, {"noise_sigma", s.noise_sigma},
          {"seed", s.seed}};
}

inline SynthScenario scenario_from_json(const json& j) {
  SynthScenario s;
  try {
    s.height = j.value("height", s.height);
    s.width = j.value("width", s.width);
    s.n_frames = j.value("n_frames", s.n_frames);
    s.rank = j.value("rank", s.rank);
    s.n_targets = j.value("n_targets", s.n_targets);
    if (j.contains("target_size")) {
      s.target_h = j["target_size"].at(0).get<int>();
      s.target_w = j["target_size"].at(1).get<int>();
    }
    s.target_h = j.value("target_h", s.target_h);
    s.target_w = j.value("target_w", s.target_w);
    s.target_contrast = j.value("target_contrast", s.target_contrast);
    s.target_speed = j.value("target_speed", s.target_speed);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.seed = j.value("seed", s.seed);
  } catch (const json::exception& e) {
    throw DataError(std::string("bad scenario field: ") + e.what());
  }
  s.validate();
  return s;
}

inline json to_json(const SolverConfig& c) {
  json j;
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  j["lambda1"] = opt(c.lambda1);
  j["lambda2"] = opt(c.lambda2);
  j["mu0"] = opt(c.mu0);
  j["rho"] = c.rho;
  j["mu_bar"] = opt(c.mu_bar);
  j["tau"] = c.tau;
  j["max_iters"] = c.max_iters;
  j["mode"] = std::string(to_string(c.mode));
  j["prox_tol"] = c.prox_tol;
  j["intensity_scale"] = c.intensity_scale;
  return j;
}

inline SolverConfig config_from_json(const json& j) {
  SolverConfig c;
  auto opt = [&](const char* k) -> std::optional<double> {
    if (!j.contains(k) || j[k].is_null()) return std::nullopt;
    return j[k].get<double>();
  };
  try {
    c.lambda1 = opt("lambda1");
    c.lambda2 = opt("lambda2");
    c.mu0 = opt("mu0");
    c.mu_bar = opt("mu_bar");
    c.rho = j.value("rho", c.rho);
    c.tau = j.value("tau", c.tau);
    c.max_iters = j.value("max_iters", c.max_iters);
    c.mode = parse_mode(j.value("mode", std::string("elsd")));
    c.prox_tol = j.value("prox_tol", c.prox_tol);
    c.intensity_scale = j.value("intensity_scale", c.intensity_scale);
  } catch (const json::exception& e) {
    throw DataError(std::string("bad config field: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Output bookkeeping

/// Tracks files written by a phase; unless commit() is called, the files are
/// removed on destruction and a FAILED marker is left in the directory.
class OutputGuard {
public:
  explicit OutputGuard(fs::path dir) : dir_(std::move(dir)) {
    fs::create_directories(dir_);
    fs::remove(dir_ / "FAILED");
  }
  OutputGuard(const OutputGuard&) = delete;
  OutputGuard& operator=(const OutputGuard&) = delete;
  ~OutputGuard() {
    if (committed_) return;
    std::error_code ec;
    for (const auto& f : files_) fs::remove(f, ec);
    std::ofstream(dir_ / "FAILED") << "phase failed; partial outputs removed\n";
  }

  fs::path add(const std::string& name) {
    files_.push_back(dir_ / name);
    return files_.back();
  }
  void commit() { committed_ = true; }
  const fs::path& dir() const { return dir_; }
  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& f : files_) out.push_back(fs::relative(f, dir_).generic_string());
    return out;
  }

private:
  fs::path dir_;
  std::vector<fs::path> files_;
  bool committed_ = false;
};

class Stopwatch {
public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// ---------------------------------------------------------------------------
// synth

inline json run_synth(const SynthScenario& scn, const fs::path& out_dir) {
  Stopwatch total;
  OutputGuard guard(out_dir);
  const SynthOutput gen = generate(scn);

  fs::create_directories(out_dir / "frames");
  const int digits = std::max(5, static_cast<int>(std::to_string(scn.n_frames).size()));
  for (Index i = 0; i < gen.D.frames(); ++i) {
    std::string idx = std::to_string(i);
    idx.insert(0, static_cast<std::size_t>(digits) - idx.size(), '0');
    io::write_pgm(guard.add("frames/frame_" + idx + ".pgm"),
                  io::frame_to_pgm16(gen.D.data.col(i), scn.height, scn.width));
  }
  io::save_matrix(guard.add("D.mat"), gen.D.data);
  io::save_matrix(guard.add("B_true.mat"), gen.B_true);
  io::save_matrix(guard.add("S_true.mat"), gen.S_true);
  io::save_matrix(guard.add("E_true.mat"), gen.E_true);
  io::write_boxes_csv(guard.add("gt.csv"), gen.gt, "target_id", false);

  json m;
  m["command"] = "synth";
  m["version"] = kVersion;
  m["scenario"] = to_json(scn);
  m["height"] = scn.height;
  m["width"] = scn.width;
  m["frames"] = scn.n_frames;
  m["clipped_entries"] = gen.clipped_entries;
  m["max_clip_delta"] = gen.max_clip_delta;
  m["outputs"] = guard.names();
  m["timing_s"] = {{"total", total.seconds()}};
  io::write_json(out_dir / "manifest.json", m);
  guard.commit();
  return m;
}

// ---------------------------------------------------------------------------
// decompose

struct DecomposeOptions {
  fs::path input;
  std::string pattern = "*.pgm";
  std::optional<Geometry> geometry; // for raw matrix inputs without a manifest
  SolverConfig config;
  int batch = 0; // frames per batch; 0 = all frames
  int window = 3;
  bool strict = false;
  fs::path out;
};

/// Resolves an input path: a raw matrix file, a run directory holding D.mat,
/// a directory with a frames/ subdirectory, or a directory of frames.
inline FrameMatrix load_input(const fs::path& in, const std::string& pattern,
                              std::optional<Geometry> geometry, std::string* descriptor = nullptr) {
  fs::path src = in;
  std::string kind;
  if (fs::is_directory(in)) {
    if (fs::exists(in / "D.mat")) {
      src = in / "D.mat";
      kind = "raw";
    } else if (fs::is_directory(in / "frames")) {
      src = in / "frames";
      kind = "pgm";
    } else {
      kind = "pgm";
    }
  } else {
    kind = "raw";
  }
  if (descriptor) *descriptor = kind;
  return io::load_frames(src, pattern, geometry);
}

struct BatchSummary {
  Index first_frame = 0;
  Index frames = 0;
  int iterations = 0;
  bool converged = false;
  Index rank_B = 0;
  double final_stop = 0.0;
};

struct DecomposeOutcome {
  Matrix B, S, E;
  std::vector<BatchSummary> batches;
  Index rank_B = 0; // numerical rank of the full background
  json manifest;

  bool converged() const {
    for (const auto& b : batches)
      if (!b.converged) return false;
    return true;
  }
  int max_iterations() const {
    int m = 0;
    for (const auto& b : batches) m = std::max(m, b.iterations);
    return m;
  }
};

/// Consecutive non-overlapping batches of `batch` frames (the last may be
/// shorter), each solved independently and concatenated.
inline DecomposeOutcome decompose_frames(const FrameMatrix& D, const SolverConfig& cfg, int batch,
                                         int window, std::vector<json>* history = nullptr) {
  const GroupSet gs = build_grid_groups(D.height, D.width, window);
  const Index n = D.frames();
  const Index step = batch > 0 ? std::min<Index>(batch, n) : n;
  DecomposeOutcome out;
  out.B = Matrix::Zero(D.pixels(), n);
  out.S = out.B;
  out.E = out.B;
  for (Index first = 0; first < n; first += step) {
    const Index len = std::min(step, n - first);
    const FrameMatrix part(D.data.middleCols(first, len), D.height, D.width);
    const auto batch_index = static_cast<int>(out.batches.size());
    IterationCallback cb;
    if (history)
      cb = [&](const IterationInfo& it) {
        history->push_back({{"batch", batch_index}, {"iteration", it.iteration}, {"stop", it.stop},
                            {"objective", it.objective}, {"mu", it.mu}, {"rank", it.rank}});
      };
    DecompositionResult r = solve(part, gs, cfg, cb);
    out.B.middleCols(first, len) = r.B;
    out.S.middleCols(first, len) = r.S;
    out.E.middleCols(first, len) = r.E;
    out.batches.push_back({first, len, r.iterations, r.converged, r.rank_B,
                           r.stop_history.empty() ? 0.0 : r.stop_history.back()});
  }
  if (out.batches.size() == 1) {
    out.rank_B = out.batches.front().rank_B;
  } else {
    const SvdFactors f = thin_svd(out.B);
    out.rank_B = numerical_rank(f.sigma, out.B.rows(), out.B.cols());
  }
  return out;
}

inline DecomposeOutcome run_decompose(const DecomposeOptions& opt,
                                      const std::vector<std::string>& argv = {}) {
  opt.config.validate();
  if (opt.batch < 0) throw InvalidParameter("batch must be >= 0");
  Stopwatch total;
  Stopwatch load_clock;
  std::string kind;
  const FrameMatrix D = load_input(opt.input, opt.pattern, opt.geometry, &kind);
  const double load_s = load_clock.seconds();

  OutputGuard guard(opt.out);
  Stopwatch solve_clock;
  std::vector<json> history;
  DecomposeOutcome res = decompose_frames(D, opt.config, opt.batch, opt.window, &history);
  const double solve_s = solve_clock.seconds();

  io::save_matrix(guard.add("B.mat"), res.B);
  io::save_matrix(guard.add("S.mat"), res.S);
  io::save_matrix(guard.add("E.mat"), res.E);
  {
    std::ofstream os(guard.add("history.csv"));
    os << "batch,iteration,stop,objective,mu,rank\n";
    for (const auto& h : history)
      os << h["batch"].get<int>() << ',' << h["iteration"].get<int>() << ','
         << io::fmt_double(h["stop"].get<double>()) << ',' << io::fmt_double(h["objective"].get<double>())
         << ',' << io::fmt_double(h["mu"].get<double>()) << ',' << h["rank"].get<long>() << '\n';
  }
  {
    std::ofstream os(guard.add("summary.csv"));
    os << "batch,first_frame,frames,iterations,converged,rank_B,final_stop\n";
    for (std::size_t b = 0; b < res.batches.size(); ++b) {
      const auto& s = res.batches[b];
      os << b << ',' << s.first_frame << ',' << s.frames << ',' << s.iterations << ','
         << (s.converged ? 1 : 0) << ',' << s.rank_B << ',' << io::fmt_double(s.final_stop) << '\n';
    }
  }
  std::ofstream(guard.add("rank_B.txt")) << res.rank_B << '\n';

  json m;
  m["command"] = "decompose";
  m["version"] = kVersion;
  m["argv"] = argv;
  m["config"] = to_json(opt.config);
  m["input"] = {{"path", fs::absolute(opt.input).lexically_normal().generic_string()},
                {"pattern", opt.pattern},
                {"kind", kind},
                {"frames", D.frames()},
                {"height", D.height},
                {"width", D.width},
                {"normalization", kind == "raw" ? "as stored" : "8-bit/255, 16-bit/65535"}};
  m["height"] = D.height;
  m["width"] = D.width;
  m["frames"] = D.frames();
  m["batch"] = opt.batch;
  m["window"] = opt.window;
  m["strict"] = opt.strict;
  m["rank_B"] = res.rank_B;
  m["converged"] = res.converged();
  m["outputs"] = guard.names();
  m["timing_s"] = {{"load", load_s}, {"solve", solve_s}, {"total", total.seconds()}};
  io::write_json(opt.out / "manifest.json", m);
  res.manifest = m;

  if (opt.strict && !res.converged()) {
    // Outputs stay on disk but the run is flagged.
    std::ofstream(opt.out / "NOT_CONVERGED") << "stop criterion not reached within max_iters\n";
    guard.commit();
    throw NotConverged("decomposition did not converge within max_iters");
  }
  guard.commit();
  return res;
}

/// Rebuilds DecomposeOptions from a decompose manifest.
inline DecomposeOptions options_from_manifest(const json& m, const fs::path& out) {
  if (m.value("command", std::string()) != "decompose")
    throw DataError("manifest does not describe a decompose run");
  DecomposeOptions o;
  try {
    o.input = m.at("input").at("path").get<std::string>();
    o.pattern = m.at("input").value("pattern", o.pattern);
    o.geometry = Geometry{m.at("height").get<int>(), m.at("width").get<int>()};
    o.config = config_from_json(m.at("config"));
    o.batch = m.value("batch", 0);
    o.window = m.value("window", 3);
    o.strict = m.value("strict", false);
  } catch (const json::exception& e) {
    throw DataError(std::string("incomplete manifest: ") + e.what());
  }
  o.out = out;
  return o;
}

// ---------------------------------------------------------------------------
// detect / evaluate

struct DetectRunOptions {
  fs::path decomposition; // directory with S.mat and manifest.json
  ThresholdPolicy threshold = MadThreshold{};
  int min_area = 2;
  fs::path out; // CSV
};

inline DetectionSet run_detect(const DetectRunOptions& opt) {
  const json m = io::read_json(opt.decomposition / "manifest.json");
  const Geometry geo{m.at("height").get<int>(), m.at("width").get<int>()};
  const Matrix S = io::load_matrix(opt.decomposition / "S.mat");
  if (S.rows() != static_cast<Index>(geo.height) * geo.width)
    throw DataError("S.mat does not match the manifest geometry");
  const DetectionSet dets = detect(S, geo, {opt.threshold, opt.min_area});
  if (!opt.out.empty()) {
    if (opt.out.has_parent_path()) fs::create_directories(opt.out.parent_path());
    io::write_boxes_csv(opt.out, dets, "det_id", true);
  }
  return dets;
}

/// Parses "a:b:step" into an inclusive ascending threshold list.
inline std::vector<double> parse_range(const std::string& spec) {
  double a = 0, b = 0, step = 0;
  char c1 = 0, c2 = 0;
  std::istringstream ss(spec);
  if (!(ss >> a >> c1 >> b >> c2 >> step) || c1 != ':' || c2 != ':' || !(step > 0.0) || b < a)
    throw InvalidParameter("range must look like a:b:step with step > 0, got '" + spec + "'");
  std::vector<double> out;
  const long count = static_cast<long>(std::floor((b - a) / step + 1e-9)) + 1;
  for (long i = 0; i < count; ++i) out.push_back(a + static_cast<double>(i) * step);
  return out;
}

struct EvaluateOptions {
  fs::path dets;
  fs::path gt;
  double iou = 0.3;
  std::optional<std::string> sweep; // a:b:step
  fs::path out;                     // optional CSV
  long rank_B = -1;
};

inline std::vector<MetricsReport> run_evaluate(const EvaluateOptions& opt) {
  FrameBoxes gt = io::read_boxes_csv(opt.gt);
  FrameBoxes dets = io::read_boxes_csv(opt.dets);
  const std::size_t frames = std::max(gt.size(), dets.size());
  gt.resize(frames);
  dets.resize(frames);
  std::vector<MetricsReport> reports;
  if (opt.sweep)
    reports = sweep_iou(dets, gt, parse_range(*opt.sweep));
  else
    reports.push_back(match_and_score(dets, gt, opt.iou));
  for (auto& r : reports) r.rank_B = opt.rank_B;
  if (!opt.out.empty()) io::write_metrics_csv(opt.out, reports);
  return reports;
}

// ---------------------------------------------------------------------------
// sweep

/// Parses a grid: "v1,v2,..." or "geom:a:b:n" (n log-spaced points from a to b).
inline std::vector<double> parse_grid(const std::string& spec) {
  std::vector<double> out;
  if (spec.rfind("geom:", 0) == 0) {
    double a = 0, b = 0;
    int n = 0;
    char c1 = 0, c2 = 0;
    std::istringstream ss(spec.substr(5));
    if (!(ss >> a >> c1 >> b >> c2 >> n) || c1 != ':' || c2 != ':' || n < 1 || !(a > 0.0) || !(b > 0.0))
      throw InvalidParameter("geometric grid must look like geom:a:b:n with a, b > 0");
    for (int i = 0; i < n; ++i)
      out.push_back(n == 1 ? a : a * std::pow(b / a, static_cast<double>(i) / (n - 1)));
    return out;
  }
  std::istringstream ss(spec);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      out.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw InvalidParameter("bad grid value '" + cell + "'");
    }
  }
  if (out.empty()) throw InvalidParameter("empty grid");
  return out;
}

struct SweepOptions {
  DecomposeOptions base; // out is ignored
  std::string param = "lambda2"; // lambda1 | lambda2 | batch
  std::vector<double> grid;
  bool relative = false; // lambda values given as multiples of the default lambda1
  fs::path gt;
  ThresholdPolicy threshold = MadThreshold{};
  int min_area = 2;
  double iou = 0.3;
  fs::path out; // directory
};

struct SweepRow {
  double value = 0.0;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  int batch = 0;
  int iterations = 0;
  bool converged = false;
  Index rank_B = 0;
  double mean_abs_E = 0.0;
  MetricsReport metrics;
};

inline std::vector<SweepRow> run_sweep(const SweepOptions& opt) {
  if (opt.param != "lambda1" && opt.param != "lambda2" && opt.param != "batch")
    throw InvalidParameter("sweep parameter must be lambda1, lambda2 or batch");
  if (opt.grid.empty()) throw InvalidParameter("sweep grid is empty");
  const FrameMatrix D = load_input(opt.base.input, opt.base.pattern, opt.base.geometry);
  fs::path gt_path = opt.gt;
  if (gt_path.empty() && fs::is_directory(opt.base.input)) gt_path = opt.base.input / "gt.csv";
  GroundTruthBoxes gt;
  const bool score = !gt_path.empty() && fs::exists(gt_path);
  if (score) {
    gt = io::read_boxes_csv(gt_path, static_cast<std::size_t>(D.frames()));
    if (gt.size() != static_cast<std::size_t>(D.frames()))
      throw DataError("ground truth has more frames than the input");
  }

  const double default_l1 = 1.0 / std::sqrt(static_cast<double>(D.pixels()));
  std::vector<SweepRow> rows;
  for (double v : opt.grid) {
    SolverConfig cfg = opt.base.config;
    int batch = opt.base.batch;
    if (opt.param == "batch") {
      if (v < 0.0 || v != std::floor(v)) throw InvalidParameter("batch grid values must be integers >= 0");
      batch = static_cast<int>(v);
    } else {
      const double value = opt.relative ? v * cfg.lambda1.value_or(default_l1) : v;
      (opt.param == "lambda1" ? cfg.lambda1 : cfg.lambda2) = value;
    }
    cfg.validate();
    const DecomposeOutcome res = decompose_frames(D, cfg, batch, opt.base.window);
    SweepRow row;
    row.value = v;
    row.lambda1 = cfg.lambda1.value_or(default_l1);
    row.lambda2 = cfg.lambda2.value_or(row.lambda1 / 5.0);
    row.batch = batch;
    row.iterations = res.max_iterations();
    row.converged = res.converged();
    row.rank_B = res.rank_B;
    row.mean_abs_E = res.E.cwiseAbs().mean();
    if (score) {
      const DetectionSet dets = detect(res.S, {static_cast<int>(D.height), static_cast<int>(D.width)},
                                       {opt.threshold, opt.min_area});
      row.metrics = match_and_score(dets, gt, opt.iou);
      row.metrics.rank_B = static_cast<long>(res.rank_B);
    }
    rows.push_back(row);
  }

  if (!opt.out.empty()) {
    OutputGuard guard(opt.out);
    std::ofstream os(guard.add("sweep.csv"));
    os << "param,value,lambda1,lambda2,batch,iterations,converged,rank_B,mean_abs_E,tp,fp,fn,recall,precision,f1\n";
    for (const auto& r : rows)
      os << opt.param << ',' << io::fmt_double(r.value) << ',' << io::fmt_double(r.lambda1) << ','
         << io::fmt_double(r.lambda2) << ',' << r.batch << ',' << r.iterations << ',' << (r.converged ? 1 : 0)
         << ',' << r.rank_B << ',' << io::fmt_double(r.mean_abs_E) << ',' << r.metrics.tp << ','
         << r.metrics.fp << ',' << r.metrics.fn << ',' << io::fmt_double(r.metrics.recall) << ','
         << io::fmt_double(r.metrics.precision) << ',' << io::fmt_double(r.metrics.f1) << '\n';
    os.close();
    guard.commit();
  }
  return rows;
}

} // namespace elsd::pipeline

#endif // ELSD_PIPELINE_HPP
