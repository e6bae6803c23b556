#ifndef ELSD_SYNTH_HPP
#define ELSD_SYNTH_HPP

// Seeded synthetic video with exact ground truth: low-rank background,
// small moving rectangles and iid Gaussian residual.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "elsd/detection.hpp"
#include "elsd/errors.hpp"
#include "elsd/linalg.hpp"

namespace elsd {

struct SynthScenario {
  int height = 40;
  int width = 40;
  int n_frames = 60;
  int rank = 2;
  int n_targets = 2;
  int target_h = 3;
  int target_w = 3;
  double target_contrast = 0.3;
  double target_speed = 1.0; // pixels per frame
  double noise_sigma = 0.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (height < 1 || width < 1 || n_frames < 1) throw InvalidScenario("scenario: sizes must be positive");
    if (rank < 1) throw InvalidScenario("scenario: rank must be >= 1");
    if (rank > std::min<long>(static_cast<long>(height) * width, n_frames))
      throw InvalidScenario("scenario: rank exceeds min(p, n)");
    if (n_targets < 0) throw InvalidScenario("scenario: n_targets must be >= 0");
    if (target_h < 1 || target_w < 1) throw InvalidScenario("scenario: target size must be positive");
    if (!(target_contrast > 0.0 && target_contrast <= 1.0))
      throw InvalidScenario("scenario: target_contrast must lie in (0, 1]");
    if (!(target_speed >= 0.0)) throw InvalidScenario("scenario: target_speed must be >= 0");
    if (!(noise_sigma >= 0.0)) throw InvalidScenario("scenario: noise_sigma must be >= 0");
  }
};

struct SynthOutput {
  FrameMatrix D;
  Matrix B_true;
  Matrix S_true;
  Matrix E_true;
  GroundTruthBoxes gt;
  long clipped_entries = 0; // entries of B*+S*+E* outside [0, 1]
  double max_clip_delta = 0.0;
};

namespace detail {

struct TargetPath {
  double r0, c0; // top-left at frame 0
  double dr, dc; // per-frame displacement
};

/// Integer position of a point moving on [0, range] with reflection at the ends.
inline int reflect(double x, double range) {
  if (range <= 0.0) return 0;
  double m = std::fmod(x, 2.0 * range);
  if (m < 0.0) m += 2.0 * range;
  if (m > range) m = 2.0 * range - m;
  return static_cast<int>(std::lround(m));
}

} // namespace detail

/// D = clip(B* + S* + E*, 0, 1). The background is a sum of `rank` smooth
/// spatial modes times slowly drifting temporal coefficients, kept inside
/// [0.2, 0.6] so targets and moderate noise do not clip.
inline SynthOutput generate(const SynthScenario& scn) {
  scn.validate();
  const int H = scn.height;
  const int W = scn.width;
  const int n = scn.n_frames;
  const Index p = static_cast<Index>(H) * W;
  std::mt19937_64 rng(scn.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  constexpr double pi = std::numbers::pi;

  // Spatial modes: mode 0 is a bright gradient texture, later modes are
  // zero-mean sinusoids with random frequency and phase.
  Matrix spatial(p, scn.rank);
  for (int k = 0; k < scn.rank; ++k) {
    const double fx = 1.0 + std::floor(3.0 * unif(rng)) + k;
    const double fy = 1.0 + std::floor(3.0 * unif(rng));
    const double phx = 2.0 * pi * unif(rng);
    const double phy = 2.0 * pi * unif(rng);
    const double gx = unif(rng) - 0.5;
    const double gy = unif(rng) - 0.5;
    for (int r = 0; r < H; ++r) {
      for (int c = 0; c < W; ++c) {
        const double u = (c + 0.5) / W;
        const double v = (r + 0.5) / H;
        double val;
        if (k == 0)
          val = 0.4 + 0.06 * (gx * (u - 0.5) + gy * (v - 0.5)) +
                0.05 * std::sin(2.0 * pi * fx * u + phx) * std::cos(2.0 * pi * fy * v + phy);
        else
          val = 0.04 * std::sin(2.0 * pi * fx * u + phx) * std::sin(2.0 * pi * fy * v + phy);
        spatial(static_cast<Index>(r) * W + c, k) = val;
      }
    }
  }
  // Temporal coefficients: near-constant with slow drift.
  Matrix temporal(n, scn.rank);
  for (int k = 0; k < scn.rank; ++k) {
    const double amp = k == 0 ? 0.05 : 0.5;
    const double cycles = 0.5 + unif(rng);
    const double ph = 2.0 * pi * unif(rng);
    for (int t = 0; t < n; ++t) {
      const double s = static_cast<double>(t) / std::max(1, n - 1);
      temporal(t, k) = 1.0 + amp * std::sin(2.0 * pi * cycles * s + ph);
    }
  }

  SynthOutput out;
  out.B_true = spatial * temporal.transpose();
  out.S_true = Matrix::Zero(p, n);
  out.E_true = Matrix::Zero(p, n);
  out.gt.assign(static_cast<std::size_t>(n), {});

  // Target paths: axis-aligned motion reflecting off the frame borders, at
  // least two pixels apart from one another in every frame.
  if (scn.n_targets > 0 && (scn.target_h > H || scn.target_w > W))
    throw InvalidScenario("scenario: target larger than frame");
  const double range_r = H - scn.target_h;
  const double range_c = W - scn.target_w;
  auto position = [&](const detail::TargetPath& tp, int f) {
    return std::pair{detail::reflect(tp.r0 + f * tp.dr, range_r),
                     detail::reflect(tp.c0 + f * tp.dc, range_c)};
  };
  std::vector<detail::TargetPath> paths;
  static constexpr int dirs[4][2] = {{0, 1}, {0, -1}, {1, 0}, {-1, 0}};
  for (int t = 0; t < scn.n_targets; ++t) {
    bool placed = false;
    for (int attempt = 0; attempt < 2000 && !placed; ++attempt) {
      const auto* d = dirs[static_cast<std::size_t>(unif(rng) * 4.0) % 4];
      detail::TargetPath tp;
      tp.r0 = std::floor(unif(rng) * (range_r + 1.0));
      tp.c0 = std::floor(unif(rng) * (range_c + 1.0));
      tp.dr = d[0] * scn.target_speed;
      tp.dc = d[1] * scn.target_speed;
      bool clear = true;
      for (const auto& o : paths) {
        for (int f = 0; f < n && clear; ++f) {
          const auto [ar, ac] = position(tp, f);
          const auto [br, bc] = position(o, f);
          const bool sep_r = ar + scn.target_h + 2 <= br || br + scn.target_h + 2 <= ar;
          const bool sep_c = ac + scn.target_w + 2 <= bc || bc + scn.target_w + 2 <= ac;
          if (!sep_r && !sep_c) clear = false;
        }
        if (!clear) break;
      }
      if (clear) {
        paths.push_back(tp);
        placed = true;
      }
    }
    if (!placed) throw InvalidScenario("scenario: cannot fit target " + std::to_string(t));
  }

  for (std::size_t t = 0; t < paths.size(); ++t) {
    for (int f = 0; f < n; ++f) {
      const auto [r, c] = position(paths[t], f);
      for (int rr = r; rr < r + scn.target_h; ++rr)
        for (int cc = c; cc < c + scn.target_w; ++cc)
          out.S_true(static_cast<Index>(rr) * W + cc, f) = scn.target_contrast;
      out.gt[static_cast<std::size_t>(f)].push_back(Box{c, r, scn.target_w, scn.target_h, static_cast<int>(t)});
    }
  }

  if (scn.noise_sigma > 0.0) {
    std::normal_distribution<double> gauss(0.0, scn.noise_sigma);
    for (Index i = 0; i < out.E_true.size(); ++i) out.E_true.data()[i] = gauss(rng);
  }

  Matrix sum = out.B_true + out.S_true + out.E_true;
  for (Index i = 0; i < sum.size(); ++i) {
    double& v = sum.data()[i];
    const double c = std::clamp(v, 0.0, 1.0);
    if (c != v) {
      ++out.clipped_entries;
      out.max_clip_delta = std::max(out.max_clip_delta, std::abs(c - v));
      v = c;
    }
  }
  out.D = FrameMatrix(std::move(sum), H, W);
  return out;
}

} // namespace elsd

#endif // ELSD_SYNTH_HPP
