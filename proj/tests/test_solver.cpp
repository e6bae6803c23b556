#include <cmath>

#include <gtest/gtest.h>

#include "elsd/detection.hpp"
#include "elsd/solver.hpp"
#include "elsd/synth.hpp"
#include "test_util.hpp"

using namespace elsd;

namespace {

SynthScenario small_scene(int targets, double noise, std::uint64_t seed = 5, int side = 16) {
  SynthScenario s;
  s.height = side;
  s.width = side;
  s.n_frames = 20;
  s.rank = 2;
  s.n_targets = targets;
  s.noise_sigma = noise;
  s.seed = seed;
  return s;
}

} // namespace

TEST(Config, DefaultsResolve) {
  const SolverConfig c = SolverConfig{}.resolve(400, 8.0);
  EXPECT_DOUBLE_EQ(*c.lambda1, 1.0 / 20.0);
  EXPECT_DOUBLE_EQ(*c.lambda2, 1.0 / 100.0);
  EXPECT_DOUBLE_EQ(*c.mu0, 1.25 / 8.0);
  EXPECT_DOUBLE_EQ(*c.mu_bar, 1.25 / 8.0 * 1e5);
  EXPECT_EQ(c.tau, 1e-7);
  EXPECT_EQ(c.max_iters, 500);
  EXPECT_EQ(c.mode, Mode::ELSD);
}

TEST(Config, Validation) {
  auto bad = [](auto mutate) {
    SolverConfig c;
    mutate(c);
    EXPECT_THROW(c.validate(), InvalidParameter);
  };
  bad([](SolverConfig& c) { c.lambda1 = 0.0; });
  bad([](SolverConfig& c) { c.lambda2 = -1.0; });
  bad([](SolverConfig& c) { c.rho = 1.0; });
  bad([](SolverConfig& c) { c.tau = 0.0; });
  bad([](SolverConfig& c) { c.max_iters = 0; });
  bad([](SolverConfig& c) { c.prox_tol = 0.0; });
  bad([](SolverConfig& c) { c.intensity_scale = 0.0; });
  bad([](SolverConfig& c) {
    c.mu0 = 2.0;
    c.mu_bar = 1.0;
  });
  EXPECT_THROW(parse_mode("rpca"), InvalidParameter);
  EXPECT_EQ(parse_mode("lsd"), Mode::LSD);
  EXPECT_EQ(parse_mode("elsd"), Mode::ELSD);
}

TEST(Initialize, DirectFormula) {
  // All-ones 10x10: spectral norm 10, max-abs 1.
  const FrameMatrix D(Matrix::Ones(10, 10), 2, 5);
  SolverConfig c;
  c.lambda1 = 0.5;
  const SolverState st = initialize(D, c);
  EXPECT_LE((st.Y - D.data / 12.0).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(st.B.norm(), 0.0);
  EXPECT_EQ(st.S.norm(), 0.0);
  EXPECT_EQ(st.E.norm(), 0.0);
  EXPECT_DOUBLE_EQ(st.mu, 1.25 / 10.0);
}

TEST(Initialize, ScalingInput) {
  const Matrix base = testutil::gaussian(12, 5, 3).cwiseAbs();
  SolverConfig c;
  c.lambda1 = 0.3;
  const double k = 3.5;
  const SolverState a = initialize(FrameMatrix(base, 3, 4), c);
  const SolverState b = initialize(FrameMatrix(k * base, 3, 4), c);
  const Norms n1 = norms(base), n2 = norms(k * base);
  const double ratio = (n1.spectral + n1.max_abs / 0.3) / (n2.spectral + n2.max_abs / 0.3);
  EXPECT_LE((b.Y - k * ratio * a.Y).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_NEAR(k * ratio, 1.0, 1e-12);
}

TEST(Initialize, ModeDoesNotMatterAndZeroRejected) {
  const FrameMatrix D(testutil::gaussian(9, 4, 1), 3, 3);
  SolverConfig e, l;
  l.mode = Mode::LSD;
  EXPECT_EQ(initialize(D, e).Y, initialize(D, l).Y);
  EXPECT_THROW(initialize(FrameMatrix(Matrix::Zero(9, 2), 3, 3), e), DegenerateInput);
}

TEST(UpdateB, RankOneShrink) {
  Vector u = Vector::Zero(6), v = Vector::Zero(4);
  u(1) = 1.0;
  v(2) = 5.0;
  const Matrix D = u * v.transpose();
  const Matrix Z = Matrix::Zero(6, 4);
  const SvtResult r = update_B(D, Z, Z, Z, 1.0);
  EXPECT_EQ(r.rank, 1);
  EXPECT_NEAR(r.shrunk_sigma(0), 4.0, 1e-13);
  EXPECT_NEAR(r.value(1, 2), 4.0, 1e-13);
}

TEST(UpdateB, LargeMuApproachesG) {
  const Matrix D = testutil::gaussian(8, 5, 2);
  const Matrix S = testutil::gaussian(8, 5, 3, 0.1);
  const Matrix E = testutil::gaussian(8, 5, 4, 0.1);
  const Matrix Y = testutil::gaussian(8, 5, 6);
  const double mu = 1e12;
  const Matrix G = D - S - E + Y / mu;
  EXPECT_LE((update_B(D, S, E, Y, mu).value - G).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(UpdateB, ZeroAndErrors) {
  const Matrix Z = Matrix::Zero(4, 3);
  const SvtResult r = update_B(Z, Z, Z, Z, 2.0);
  EXPECT_EQ(r.rank, 0);
  EXPECT_EQ(r.value.norm(), 0.0);
  EXPECT_THROW(update_B(Z, Z, Z, Z, 0.0), InvalidParameter);
}

TEST(UpdateS, Cases) {
  const GroupSet gs = build_grid_groups(4, 4);
  const Matrix Z = Matrix::Zero(16, 3);
  EXPECT_EQ(update_S(Z, Z, Z, Z, 1.0, 0.5, gs, 1e-9), Z);

  // Full shrinkage once lambda1/mu exceeds ||h||_1 of every column.
  const Matrix D = testutil::gaussian(16, 3, 9);
  const double big = 10.0 * D.cwiseAbs().colwise().sum().maxCoeff();
  EXPECT_LE(update_S(D, Z, Z, Z, 1.0, big, gs, 1e-9).cwiseAbs().maxCoeff(), 1e-9);

  const GroupSet single = build_grid_groups(4, 4, 1);
  const Matrix Y = testutil::gaussian(16, 3, 10);
  const double mu = 2.0, lam = 0.6;
  const Matrix H = D + Y / mu;
  const Matrix expect = (H.cwiseAbs().array() - lam / mu).max(0.0).matrix().cwiseProduct(H.cwiseSign());
  EXPECT_LE((update_S(D, Z, Z, Y, mu, lam, single, 1e-12) - expect).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(UpdateE, Cases) {
  const Matrix D = testutil::gaussian(6, 4, 1);
  const Matrix B = testutil::gaussian(6, 4, 2);
  const Matrix S = testutil::gaussian(6, 4, 3);
  const Matrix Y = testutil::gaussian(6, 4, 4);
  const Matrix half = update_E(D, B, S, Y, 1.0, 0.5, Mode::ELSD);
  EXPECT_LE((half - 0.5 * (D - B - S + Y)).cwiseAbs().maxCoeff(), 1e-15);

  EXPECT_LE(update_E(D, B, S, Y, 1.0, 1e12, Mode::ELSD).cwiseAbs().maxCoeff(), 1e-11);
  EXPECT_EQ(update_E(D, B, S, Y, 1.0, 0.5, Mode::LSD), Matrix::Zero(6, 4));
  EXPECT_THROW(update_E(D, B, S, Y, 0.0, 0.5, Mode::ELSD), InvalidParameter);
}

TEST(UpdateY, Cases) {
  const Matrix B = testutil::gaussian(5, 3, 1);
  const Matrix S = testutil::gaussian(5, 3, 2);
  const Matrix E = testutil::gaussian(5, 3, 3);
  const Matrix Y = testutil::gaussian(5, 3, 4);
  const Matrix D = B + S + E;
  EXPECT_LE((update_Y_and_mu(Y, D, B, S, E, 1.0, 1.5, 100.0).Y - Y).cwiseAbs().maxCoeff(), 1e-14);

  const Matrix R = testutil::gaussian(5, 3, 5);
  const Matrix Z = Matrix::Zero(5, 3);
  const MultiplierStep st = update_Y_and_mu(Z, R, Z, Z, Z, 2.0, 1.5, 100.0);
  EXPECT_LE((st.Y - 2.0 * R).cwiseAbs().maxCoeff(), 1e-15);

  double mu = 1.0;
  mu = update_Y_and_mu(Z, Z, Z, Z, Z, mu, 1.5, 100.0).mu;
  EXPECT_DOUBLE_EQ(mu, 1.5);
  for (int k = 2; k <= 12; ++k) mu = update_Y_and_mu(Z, Z, Z, Z, Z, mu, 1.5, 100.0).mu;
  EXPECT_DOUBLE_EQ(mu, 100.0);
  EXPECT_LT(std::pow(1.5, 11), 100.0);
}

TEST(Solve, ExactlyLowRankInput) {
  const SynthOutput g = generate(small_scene(0, 0.0, 5, 32));
  const GroupSet gs = build_grid_groups(32, 32);
  const DecompositionResult r = solve(g.D, gs, {});
  EXPECT_TRUE(r.converged);
  EXPECT_LE(r.S.norm(), 1e-4 * g.D.data.norm());
  EXPECT_LE(r.rank_B, 2);
}

TEST(Solve, BlobRecovery) {
  // Frames below ~24x24 leave too little background for lambda1 = 1/sqrt(p)
  // to separate the targets; 32x32 is the smallest comfortable size.
  const SynthScenario scn = small_scene(2, 0.0, 5, 32);
  const SynthOutput g = generate(scn);
  const GroupSet gs = build_grid_groups(32, 32);
  const DecompositionResult r = solve(g.D, gs, {});
  ASSERT_TRUE(r.converged);
  EXPECT_LE(r.stop_history.back(), 1e-7);
  EXPECT_LE(r.rank_B, scn.rank + 1);
  const double theta = resolve_threshold(r.S, MadThreshold{});
  long covered = 0, total = 0;
  for (Index i = 0; i < g.S_true.size(); ++i) {
    if (g.S_true.data()[i] == 0.0) continue;
    ++total;
    const double v = std::abs(r.S.data()[i]);
    if (v > 0.0 && v >= theta) ++covered;
  }
  EXPECT_GE(static_cast<double>(covered), 0.9 * total);
}

TEST(Solve, InvariantsOnNoisyInput) {
  const SynthOutput g = generate(small_scene(2, 0.02));
  const GroupSet gs = build_grid_groups(16, 16);
  for (Mode m : {Mode::ELSD, Mode::LSD}) {
    SolverConfig c;
    c.mode = m;
    std::vector<double> stops;
    bool finite = true;
    const DecompositionResult r = solve(g.D, gs, c, [&](const IterationInfo& it) {
      stops.push_back(it.stop);
      finite = finite && std::isfinite(it.objective);
    });
    EXPECT_TRUE(finite);
    EXPECT_EQ(stops, r.stop_history);
    EXPECT_EQ(static_cast<int>(r.stop_history.size()), r.iterations);
    EXPECT_EQ(r.objective_history.size(), r.stop_history.size());
    EXPECT_EQ(r.mu_history.size(), r.stop_history.size());
    if (r.converged) {
      EXPECT_LE(r.stop_history.back(), c.tau);
    } else {
      EXPECT_EQ(r.iterations, c.max_iters);
    }
    EXPECT_TRUE(r.B.allFinite() && r.S.allFinite() && r.E.allFinite() && r.Y.allFinite());
    // Windowed minimum of the stop criterion is nonincreasing.
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k + 10 <= r.stop_history.size(); ++k) {
      const double w = *std::min_element(r.stop_history.begin() + static_cast<long>(k),
                                         r.stop_history.begin() + static_cast<long>(k + 10));
      EXPECT_LE(w, prev);
      prev = w;
    }
    for (std::size_t k = 1; k < r.mu_history.size(); ++k) EXPECT_GE(r.mu_history[k], r.mu_history[k - 1]);
    if (m == Mode::LSD) {
      EXPECT_EQ(r.E, Matrix::Zero(r.E.rows(), r.E.cols()));
    }
  }
}

TEST(Solve, LsdMatchesThreeBlockLoopWithoutEStep) {
  const SynthOutput g = generate(small_scene(1, 0.01, 9));
  const GroupSet gs = build_grid_groups(16, 16);
  SolverConfig c;
  c.mode = Mode::LSD;
  c.intensity_scale = 1.0;
  c.max_iters = 40;
  const DecompositionResult r = solve(g.D, gs, c);

  // Reference: the per-step functions with cold-start prox and no E-step.
  SolverState st = initialize(g.D, c);
  const SolverConfig rc = c.resolve(g.D.pixels(), norms(g.D.data).spectral);
  std::vector<double> stops;
  for (int k = 0; k < r.iterations; ++k) {
    st.B = update_B(g.D.data, st.S, st.E, st.Y, st.mu).value;
    st.S = update_S(g.D.data, st.B, st.E, st.Y, st.mu, *rc.lambda1, gs, rc.prox_tol);
    const MultiplierStep y = update_Y_and_mu(st.Y, g.D.data, st.B, st.S, st.E, st.mu, rc.rho, *rc.mu_bar);
    stops.push_back((g.D.data - st.B - st.S).norm() / g.D.data.norm());
    st.Y = y.Y;
    st.mu = y.mu;
  }
  ASSERT_EQ(stops.size(), r.stop_history.size());
  for (std::size_t k = 0; k < stops.size(); ++k)
    EXPECT_NEAR(stops[k], r.stop_history[k], 1e-6 * std::max(1.0, stops[k]));
  EXPECT_LE((st.B - r.B).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LE((st.S - r.S).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_EQ(st.E, r.E);
}

TEST(Solve, ResidualShrinksAsLambda2Grows) {
  const SynthOutput g = generate(small_scene(2, 0.02, 4));
  const GroupSet gs = build_grid_groups(16, 16);
  const double l1 = 1.0 / 16.0;
  double prev = std::numeric_limits<double>::infinity();
  for (double f : {1.0 / 50, 1.0 / 10, 1.0 / 5, 1.0, 5.0}) {
    SolverConfig c;
    c.lambda2 = f * l1;
    const DecompositionResult r = solve(g.D, gs, c);
    const double m = r.E.cwiseAbs().mean();
    EXPECT_LE(m, prev * (1.0 + 1e-9)) << "lambda2 = " << f << " lambda1";
    prev = m;
  }
}

TEST(Solve, ScaleConsistencyInLsdMode) {
  const SynthOutput g = generate(small_scene(2, 0.0, 8));
  const GroupSet gs = build_grid_groups(16, 16);
  SolverConfig c;
  c.mode = Mode::LSD;
  c.lambda1 = 1.0 / 16.0;
  const double k = 2.0;
  const DecompositionResult a = solve(g.D, gs, c);
  const DecompositionResult b = solve(FrameMatrix(k * g.D.data, 16, 16), gs, c);
  ASSERT_EQ(a.iterations, b.iterations);
  for (std::size_t i = 0; i < a.stop_history.size(); ++i)
    EXPECT_NEAR(a.stop_history[i], b.stop_history[i], 1e-8);
  const double tol = 1e-6 * k * g.D.data.cwiseAbs().maxCoeff();
  EXPECT_LE((b.B - k * a.B).cwiseAbs().maxCoeff(), tol);
  EXPECT_LE((b.S - k * a.S).cwiseAbs().maxCoeff(), tol);
  // Y0 is invariant to the input scale and mu0 shrinks by k, so the
  // multiplier itself stays put while Y/mu scales by k.
  EXPECT_LE((b.Y - a.Y).cwiseAbs().maxCoeff(), 1e-6 * a.Y.cwiseAbs().maxCoeff());
  const double theta = 1e-6;
  for (Index i = 0; i < a.S.size(); ++i)
    EXPECT_EQ(std::abs(a.S.data()[i]) > theta, std::abs(b.S.data()[i]) > k * theta);
}

TEST(Solve, IntensityScaleEquivalence) {
  // Working scale s on D is the same problem as scale 1 on s * D.
  const SynthOutput g = generate(small_scene(1, 0.01, 2));
  const GroupSet gs = build_grid_groups(16, 16);
  SolverConfig a;
  a.intensity_scale = 10.0;
  a.max_iters = 30;
  SolverConfig b = a;
  b.intensity_scale = 1.0;
  const DecompositionResult ra = solve(g.D, gs, a);
  const DecompositionResult rb = solve(FrameMatrix(10.0 * g.D.data, 16, 16), gs, b);
  EXPECT_EQ(ra.iterations, rb.iterations);
  EXPECT_LE((10.0 * ra.B - rb.B).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LE((10.0 * ra.E - rb.E).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Solve, NonConvergenceIsFlagged) {
  const SynthOutput g = generate(small_scene(2, 0.02));
  SolverConfig c;
  c.max_iters = 2;
  const DecompositionResult r = solve(g.D, build_grid_groups(16, 16), c);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.iterations, 2);
  EXPECT_GT(r.stop_history.back(), c.tau);
}

TEST(Solve, Errors) {
  const GroupSet gs = build_grid_groups(4, 4);
  EXPECT_THROW(solve(FrameMatrix(Matrix::Zero(16, 3), 4, 4), gs, {}), DegenerateInput);
  EXPECT_THROW(solve(FrameMatrix(Matrix::Ones(20, 3), 4, 5), gs, {}), InvalidGeometry);
  SolverConfig bad;
  bad.rho = 0.5;
  EXPECT_THROW(solve(FrameMatrix(Matrix::Ones(16, 3), 4, 4), gs, bad), InvalidParameter);
}
