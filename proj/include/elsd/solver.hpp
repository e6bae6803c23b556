#ifndef ELSD_SOLVER_HPP
#define ELSD_SOLVER_HPP

// Direct-extension ADMM for
//   min ||B||_* + lambda1 ||S||_{l1/linf} + lambda2 ||E||_F^2  s.t.  D = B + S + E
// (E-LSD), and the two-block variant without E (LSD).

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "elsd/errors.hpp"
#include "elsd/linalg.hpp"
#include "elsd/structured_sparsity.hpp"

namespace elsd {

enum class Mode { ELSD, LSD };

inline std::string_view to_string(Mode m) { return m == Mode::ELSD ? "elsd" : "lsd"; }

inline Mode parse_mode(std::string_view s) {
  if (s == "elsd" || s == "ELSD" || s == "e-lsd") return Mode::ELSD;
  if (s == "lsd" || s == "LSD") return Mode::LSD;
  throw InvalidParameter("unknown mode '" + std::string(s) + "' (expected elsd or lsd)");
}

/// Solver parameters. Unset optionals take data-dependent defaults in
/// resolve(): lambda1 = 1/sqrt(p), lambda2 = lambda1/5, mu0 = 1.25/||D||_2,
/// mu_bar = mu0 * 1e5.
///
/// The multiplier starts at Y0 = D / (||D||_2 + ||D||_inf / lambda1), where
/// ||D||_2 is the spectral norm and ||D||_inf the largest absolute entry.
///
/// `intensity_scale` maps ingested [0, 1] data onto the gray-level range the
/// lambda defaults are calibrated for: solve() works on intensity_scale * D
/// and divides B, S and E by it on return. The squared residual penalty makes
/// E-LSD scale-dependent, so this factor is part of the model, not cosmetic.
struct SolverConfig {
  std::optional<double> lambda1;
  std::optional<double> lambda2;
  std::optional<double> mu0;
  double rho = 1.5;
  std::optional<double> mu_bar;
  double tau = 1e-7;
  int max_iters = 500;
  Mode mode = Mode::ELSD;
  double prox_tol = 1e-9;
  double intensity_scale = 255.0;

  /// Fill in defaults for a p-pixel input with spectral norm `spectral`.
  SolverConfig resolve(Index pixels, double spectral) const {
    SolverConfig c = *this;
    if (!c.lambda1) c.lambda1 = 1.0 / std::sqrt(static_cast<double>(pixels));
    if (!c.lambda2) c.lambda2 = *c.lambda1 / 5.0;
    if (!c.mu0) {
      if (!(spectral > 0.0)) throw DegenerateInput("cannot derive mu0 from an all-zero input");
      c.mu0 = 1.25 / spectral;
    }
    if (!c.mu_bar) c.mu_bar = *c.mu0 * 1e5;
    c.validate();
    return c;
  }

  /// Checks every set field; unset optionals are skipped.
  void validate() const {
    auto positive = [](const std::optional<double>& v, const char* name) {
      if (v && !(*v > 0.0 && std::isfinite(*v)))
        throw InvalidParameter(std::string(name) + " must be a finite positive number");
    };
    positive(lambda1, "lambda1");
    positive(lambda2, "lambda2");
    positive(mu0, "mu0");
    positive(mu_bar, "mu_bar");
    if (!(rho > 1.0 && std::isfinite(rho))) throw InvalidParameter("rho must be > 1");
    if (!(tau > 0.0)) throw InvalidParameter("tau must be > 0");
    if (max_iters < 1) throw InvalidParameter("max_iters must be >= 1");
    if (!(prox_tol > 0.0)) throw InvalidParameter("prox_tol must be > 0");
    if (!(intensity_scale > 0.0 && std::isfinite(intensity_scale)))
      throw InvalidParameter("intensity_scale must be a finite positive number");
    if (mu0 && mu_bar && *mu_bar < *mu0) throw InvalidParameter("mu_bar must be >= mu0");
  }
};

struct SolverState {
  Matrix B, S, E, Y;
  double mu = 0.0;
};

struct DecompositionResult {
  Matrix B, S, E, Y;
  int iterations = 0;
  Index rank_B = 0;
  bool converged = false;
  Vector background_sigma; // singular values of B from the last SVT
  std::vector<double> stop_history;
  std::vector<double> objective_history;
  std::vector<double> mu_history; // penalty used in each iteration
  SolverConfig config;            // resolved
};
// B, S and E are in the units of the input frames. Y, the objective history
// and background_sigma are in solver units (input * intensity_scale).

/// B = S = E = 0, Y = Y0, mu = mu0, on D as given (no intensity scaling).
/// Unset config fields are resolved against D.
inline SolverState initialize(const FrameMatrix& D, const SolverConfig& cfg) {
  D.validate();
  const Norms n = norms(D.data);
  if (n.max_abs == 0.0) throw DegenerateInput("initialize: D is identically zero");
  const SolverConfig c = cfg.resolve(D.pixels(), n.spectral);
  SolverState st;
  const Index p = D.data.rows();
  const Index f = D.data.cols();
  st.B = Matrix::Zero(p, f);
  st.S = Matrix::Zero(p, f);
  st.E = Matrix::Zero(p, f);
  st.Y = D.data / (n.spectral + n.max_abs / *c.lambda1);
  st.mu = *c.mu0;
  return st;
}

/// B = svt(D - S - E + Y/mu, 1/mu).
inline SvtResult update_B(const Matrix& D, const Matrix& S, const Matrix& E, const Matrix& Y,
                          double mu) {
  if (!(mu > 0.0)) throw InvalidParameter("update_B: mu must be > 0");
  const Matrix G = D - S - E + Y / mu;
  return svt(G, 1.0 / mu);
}

/// S = prox_batch(D - B - E + Y/mu, lambda1/mu).
inline Matrix update_S(const Matrix& D, const Matrix& B, const Matrix& E, const Matrix& Y, double mu,
                       double lambda1, const GroupSet& gs, double prox_tol) {
  if (!(mu > 0.0)) throw InvalidParameter("update_S: mu must be > 0");
  const Matrix H = D - B - E + Y / mu;
  return prox_batch(H, lambda1 / mu, gs, ProxOptions{prox_tol});
}

/// E = mu / (2 lambda2 + mu) * (D - B - S + Y/mu); zero in LSD mode.
inline Matrix update_E(const Matrix& D, const Matrix& B, const Matrix& S, const Matrix& Y, double mu,
                       double lambda2, Mode mode) {
  if (mode == Mode::LSD) return Matrix::Zero(D.rows(), D.cols());
  if (!(mu > 0.0)) throw InvalidParameter("update_E: mu must be > 0");
  if (!(lambda2 > 0.0)) throw InvalidParameter("update_E: lambda2 must be > 0");
  return (mu / (2.0 * lambda2 + mu)) * (D - B - S + Y / mu);
}

struct MultiplierStep {
  Matrix Y;
  double mu = 0.0;
};

/// Y += mu (D - B - S - E); mu = min(rho mu, mu_bar).
inline MultiplierStep update_Y_and_mu(const Matrix& Y, const Matrix& D, const Matrix& B,
                                      const Matrix& S, const Matrix& E, double mu, double rho,
                                      double mu_bar) {
  if (!(mu > 0.0)) throw InvalidParameter("update_Y_and_mu: mu must be > 0");
  return {Y + mu * (D - B - S - E), std::min(rho * mu, mu_bar)};
}

namespace detail {

// prox_batch with per-frame dual warm starts carried between outer
// iterations. Each dual is rescaled by the ratio of ball radii so the seed
// stays feasible; the certificate is the same as the cold-start path.
class WarmProxBatch {
public:
  WarmProxBatch(const GroupSet& gs, Index frames) : gs_(gs), xi_(static_cast<std::size_t>(frames)) {}

  Matrix operator()(const Matrix& H, double lambda_prime, double tol) {
    Matrix S(H.rows(), H.cols());
    const double scale = last_lambda_ > 0.0 ? lambda_prime / last_lambda_ : 0.0;
    std::string failed;
    double worst_gap = 0.0;
    for (Index i = 0; i < H.cols(); ++i) {
      Vector& xi = xi_[static_cast<std::size_t>(i)];
      if (xi.size() > 0) xi *= scale;
      try {
        ProxResult r = prox_structured(H.col(i), lambda_prime, gs_, ProxOptions{tol},
                                       xi.size() > 0 ? &xi : nullptr);
        S.col(i) = r.s;
        xi = std::move(r.state.xi);
      } catch (const SolverStalled& e) {
        failed += (failed.empty() ? "" : ",") + std::to_string(i);
        worst_gap = std::max(worst_gap, e.last_gap());
        xi.resize(0);
      }
    }
    if (!failed.empty()) throw SolverStalled("update_S: stalled on frame(s) " + failed, worst_gap);
    last_lambda_ = lambda_prime;
    return S;
  }

private:
  const GroupSet& gs_;
  std::vector<Vector> xi_;
  double last_lambda_ = 0.0;
};

} // namespace detail

struct IterationInfo {
  int iteration;
  double stop;
  double objective;
  Index rank;
  double mu;
};

using IterationCallback = std::function<void(const IterationInfo&)>;

/// Runs B -> S -> E -> Y until ||D - B - S - E||_F / ||D||_F <= tau or
/// max_iters. Non-convergence is reported through `converged`, not thrown.
inline DecompositionResult solve(const FrameMatrix& D, const GroupSet& gs, const SolverConfig& cfg,
                                 const IterationCallback& on_iteration = {}) {
  D.validate();
  if (gs.height() != D.height || gs.width() != D.width)
    throw InvalidGeometry("solve: group set geometry does not match frames");
  cfg.validate();

  const double scale = cfg.intensity_scale;
  const FrameMatrix scaled(scale * D.data, D.height, D.width);
  const Matrix& Dm = scaled.data;
  const Norms dn = norms(Dm);
  if (dn.max_abs == 0.0) throw DegenerateInput("solve: D is identically zero");
  const SolverConfig c = cfg.resolve(D.pixels(), dn.spectral);
  const double lambda1 = *c.lambda1;
  const double lambda2 = *c.lambda2;
  const double d_fro = dn.frobenius;

  SolverState st = initialize(scaled, c);

  DecompositionResult res;
  res.config = c;
  detail::WarmProxBatch prox(gs, Dm.cols());

  for (int k = 1; k <= c.max_iters; ++k) {
    SvtResult b = update_B(Dm, st.S, st.E, st.Y, st.mu);
    st.B = std::move(b.value);
    st.S = prox(Dm - st.B - st.E + st.Y / st.mu, lambda1 / st.mu, c.prox_tol);
    st.E = update_E(Dm, st.B, st.S, st.Y, st.mu, lambda2, c.mode);

    const Matrix R = Dm - st.B - st.S - st.E;
    st.Y += st.mu * R;
    res.mu_history.push_back(st.mu);
    st.mu = std::min(c.rho * st.mu, *c.mu_bar);

    const double stop = R.norm() / d_fro;
    double objective = b.shrunk_sigma.sum() + lambda1 * batch_structured_norm(st.S, gs);
    if (c.mode == Mode::ELSD) objective += lambda2 * st.E.squaredNorm();

    res.stop_history.push_back(stop);
    res.objective_history.push_back(objective);
    res.iterations = k;
    res.rank_B = b.rank;
    res.background_sigma = std::move(b.shrunk_sigma);
    if (on_iteration) on_iteration({k, stop, objective, res.rank_B, res.mu_history.back()});
    if (stop <= c.tau) {
      res.converged = true;
      break;
    }
  }

  res.B = st.B / scale;
  res.S = st.S / scale;
  res.E = st.E / scale;
  res.Y = std::move(st.Y);
  return res;
}

} // namespace elsd

#endif // ELSD_SOLVER_HPP
