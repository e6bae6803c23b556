#ifndef ELSD_STRUCTURED_SPARSITY_HPP
#define ELSD_STRUCTURED_SPARSITY_HPP

// Overlapping-group l1/linf norm over spatial windows and its exact proximal
// operator, computed on the dual: minimize 0.5 * ||h - sum_g xi^g||^2 subject
// to ||xi^g||_1 <= lambda' and supp(xi^g) in g, then s = h - sum_g xi^g.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "elsd/errors.hpp"
#include "elsd/linalg.hpp"

namespace elsd {

/// Pixel-index groups over a vectorized frame, stored CSR-style.
class GroupSet {
public:
  GroupSet() = default;

  GroupSet(Index height, Index width, std::vector<std::vector<Index>> groups,
           std::vector<double> weights = {})
      : height_(height), width_(width) {
    if (height <= 0 || width <= 0) throw InvalidGeometry("GroupSet: geometry must be positive");
    if (weights.empty()) weights.assign(groups.size(), 1.0);
    if (weights.size() != groups.size()) throw InvalidInput("GroupSet: one weight per group required");
    const Index p = height * width;
    offsets_.assign(1, 0);
    offsets_.reserve(groups.size() + 1);
    for (std::size_t g = 0; g < groups.size(); ++g) {
      auto& grp = groups[g];
      if (grp.empty()) throw InvalidInput("GroupSet: empty group " + std::to_string(g));
      std::vector<Index> sorted = grp;
      std::sort(sorted.begin(), sorted.end());
      if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
        throw InvalidInput("GroupSet: duplicate index in group " + std::to_string(g));
      if (sorted.front() < 0 || sorted.back() >= p)
        throw InvalidInput("GroupSet: index out of range in group " + std::to_string(g));
      if (!(weights[g] > 0.0)) throw InvalidInput("GroupSet: weights must be positive");
      indices_.insert(indices_.end(), grp.begin(), grp.end());
      offsets_.push_back(static_cast<Index>(indices_.size()));
    }
    weights_ = std::move(weights);
  }

  Index height() const noexcept { return height_; }
  Index width() const noexcept { return width_; }
  Index pixels() const noexcept { return height_ * width_; }
  std::size_t size() const noexcept { return weights_.size(); }
  /// Total number of (group, pixel) memberships.
  Index total_members() const noexcept { return static_cast<Index>(indices_.size()); }

  std::span<const Index> group(std::size_t g) const noexcept {
    return {indices_.data() + offsets_[g], static_cast<std::size_t>(offsets_[g + 1] - offsets_[g])};
  }
  Index offset(std::size_t g) const noexcept { return offsets_[g]; }
  double weight(std::size_t g) const noexcept { return weights_[g]; }

  /// Number of groups containing each pixel.
  std::vector<int> multiplicity() const {
    std::vector<int> m(static_cast<std::size_t>(pixels()), 0);
    for (Index j : indices_) ++m[static_cast<std::size_t>(j)];
    return m;
  }

private:
  Index height_ = 0;
  Index width_ = 0;
  std::vector<Index> indices_;
  std::vector<Index> offsets_{0};
  std::vector<double> weights_;
};

/// One group per fully contained window x window position, stride 1,
/// row-major over window origins. window = 1 yields singletons (plain l1).
inline GroupSet build_grid_groups(Index height, Index width, Index window = 3) {
  if (window < 1) throw InvalidGeometry("build_grid_groups: window must be >= 1");
  if (height < window || width < window)
    throw InvalidGeometry("build_grid_groups: frame " + std::to_string(height) + "x" +
                          std::to_string(width) + " smaller than window " + std::to_string(window));
  std::vector<std::vector<Index>> groups;
  groups.reserve(static_cast<std::size_t>((height - window + 1) * (width - window + 1)));
  for (Index r0 = 0; r0 + window <= height; ++r0) {
    for (Index c0 = 0; c0 + window <= width; ++c0) {
      std::vector<Index> g;
      g.reserve(static_cast<std::size_t>(window * window));
      for (Index r = r0; r < r0 + window; ++r)
        for (Index c = c0; c < c0 + window; ++c) g.push_back(r * width + c);
      groups.push_back(std::move(g));
    }
  }
  return GroupSet(height, width, std::move(groups));
}

/// sum_g eta_g * max_{j in g} |s_j|
inline double structured_norm(const Eigen::Ref<const Vector>& s, const GroupSet& gs) {
  if (s.size() != gs.pixels())
    throw InvalidInput("structured_norm: vector length " + std::to_string(s.size()) + " != " +
                       std::to_string(gs.pixels()));
  if (!s.allFinite()) throw InvalidInput("structured_norm: non-finite input");
  double total = 0.0;
  for (std::size_t g = 0; g < gs.size(); ++g) {
    double m = 0.0;
    for (Index j : gs.group(g)) m = std::max(m, std::abs(s(j)));
    total += gs.weight(g) * m;
  }
  return total;
}

/// Column-wise sum of structured_norm.
inline double batch_structured_norm(const Matrix& s, const GroupSet& gs) {
  double total = 0.0;
  for (Index i = 0; i < s.cols(); ++i) total += structured_norm(s.col(i), gs);
  return total;
}

/// Euclidean projection of v onto {x : ||x||_1 <= radius}, written into out.
/// Sort-based exact algorithm; `scratch` is reused storage.
inline void project_l1_ball(std::span<const double> v, double radius, std::span<double> out,
                            std::vector<double>& scratch) {
  double l1 = 0.0;
  for (double x : v) l1 += std::abs(x);
  if (l1 <= radius) {
    std::copy(v.begin(), v.end(), out.begin());
    return;
  }
  if (radius <= 0.0) {
    std::fill(out.begin(), out.end(), 0.0);
    return;
  }
  scratch.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) scratch[i] = std::abs(v[i]);
  std::sort(scratch.begin(), scratch.end(), std::greater<>());
  double cumsum = 0.0;
  double theta = 0.0;
  for (std::size_t k = 0; k < scratch.size(); ++k) {
    cumsum += scratch[k];
    const double t = (cumsum - radius) / static_cast<double>(k + 1);
    if (scratch[k] - t > 0.0) theta = t;
  }
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double a = std::abs(v[i]) - theta;
    out[i] = a > 0.0 ? std::copysign(a, v[i]) : 0.0;
  }
}

inline Vector project_l1_ball(const Vector& v, double radius) {
  Vector out(v.size());
  std::vector<double> scratch;
  project_l1_ball({v.data(), static_cast<std::size_t>(v.size())}, radius,
                  {out.data(), static_cast<std::size_t>(out.size())}, scratch);
  return out;
}

/// Dual iterate of the prox problem. xi is laid out like the GroupSet's
/// membership list: xi[gs.offset(g) + k] is the dual weight of pixel
/// gs.group(g)[k] in group g (entries outside g are implicitly zero).
struct DualFlowState {
  Vector xi;
  Vector residual; // h - sum_g xi^g, i.e. the primal solution s
  double gap = 0.0;
  double primal = 0.0;
  double dual = 0.0;
  int sweeps = 0;
};

struct ProxOptions {
  double tol = 1e-9;
  int max_sweeps = 20000;
};

struct ProxResult {
  Vector s;
  DualFlowState state;
};

/// Objectives of the prox problem for a dual-feasible xi.
/// primal = 0.5 ||h - s||^2 + lambda' * N(s) with s = h - sum xi,
/// dual   = 0.5 ||h||^2 - 0.5 ||s||^2.
struct ProxObjectives {
  double primal = 0.0;
  double dual = 0.0;
  double gap = 0.0;
};

inline Vector scatter_dual(const Vector& xi, const GroupSet& gs) {
  Vector sum = Vector::Zero(gs.pixels());
  for (std::size_t g = 0; g < gs.size(); ++g) {
    auto grp = gs.group(g);
    const Index off = gs.offset(g);
    for (std::size_t k = 0; k < grp.size(); ++k) sum(grp[k]) += xi(off + static_cast<Index>(k));
  }
  return sum;
}

inline ProxObjectives prox_objectives(const Vector& h, const Vector& xi, double lambda_prime,
                                      const GroupSet& gs) {
  const Vector u = scatter_dual(xi, gs);
  const Vector s = h - u;
  ProxObjectives o;
  // Per-group Hoelder slack: lambda' w_g ||s_g||_inf - <s_g, xi^g> >= 0.
  double gap = 0.0;
  double norm = 0.0;
  for (std::size_t g = 0; g < gs.size(); ++g) {
    auto grp = gs.group(g);
    const Index off = gs.offset(g);
    double m = 0.0;
    double dot = 0.0;
    for (std::size_t k = 0; k < grp.size(); ++k) {
      m = std::max(m, std::abs(s(grp[k])));
      dot += s(grp[k]) * xi(off + static_cast<Index>(k));
    }
    norm += gs.weight(g) * m;
    gap += lambda_prime * gs.weight(g) * m - dot;
  }
  o.primal = 0.5 * u.squaredNorm() + lambda_prime * norm;
  o.dual = 0.5 * h.squaredNorm() - 0.5 * s.squaredNorm();
  o.gap = std::max(gap, 0.0);
  return o;
}

/// Exact prox of lambda' * sum_g eta_g ||s_g||_inf by cyclic block-coordinate
/// ascent on the dual. Each block step replaces xi^g by the projection of
/// (s_g + xi^g) onto the l1 ball of radius lambda' * eta_g. Stops once the
/// largest per-sweep change is <= tol and gap <= tol * (1 + |primal|).
///
/// `warm_xi`, if given, seeds the dual (it is projected to feasibility first).
/// lambda' == 0 returns h unchanged.
inline ProxResult prox_structured(const Eigen::Ref<const Vector>& h_in, double lambda_prime,
                                  const GroupSet& gs, const ProxOptions& opt = {},
                                  const Vector* warm_xi = nullptr) {
  if (h_in.size() != gs.pixels())
    throw InvalidInput("prox_structured: vector length " + std::to_string(h_in.size()) + " != " +
                       std::to_string(gs.pixels()));
  if (!h_in.allFinite()) throw InvalidInput("prox_structured: non-finite input");
  if (!(lambda_prime >= 0.0)) throw InvalidParameter("prox_structured: lambda' must be >= 0");
  if (!(opt.tol > 0.0)) throw InvalidParameter("prox_structured: tol must be > 0");

  const Vector h = h_in;
  ProxResult out;
  DualFlowState& st = out.state;
  st.xi = Vector::Zero(gs.total_members());

  if (lambda_prime == 0.0 || h.isZero(0.0)) {
    st.residual = h;
    st.primal = 0.0;
    st.dual = 0.0;
    out.s = h;
    return out;
  }

  std::vector<double> scratch;
  std::vector<double> local;
  std::vector<double> proj;

  if (warm_xi && warm_xi->size() == st.xi.size()) {
    for (std::size_t g = 0; g < gs.size(); ++g) {
      const auto len = static_cast<std::size_t>(gs.group(g).size());
      const Index off = gs.offset(g);
      local.assign(warm_xi->data() + off, warm_xi->data() + off + static_cast<Index>(len));
      proj.resize(len);
      project_l1_ball(local, lambda_prime * gs.weight(g), proj, scratch);
      std::copy(proj.begin(), proj.end(), st.xi.data() + off);
    }
  }

  Vector r = h - scatter_dual(st.xi, gs);
  ProxObjectives obj;
  for (int sweep = 1; sweep <= opt.max_sweeps; ++sweep) {
    double max_change = 0.0;
    for (std::size_t g = 0; g < gs.size(); ++g) {
      auto grp = gs.group(g);
      const Index off = gs.offset(g);
      const double radius = lambda_prime * gs.weight(g);
      local.resize(grp.size());
      proj.resize(grp.size());
      for (std::size_t k = 0; k < grp.size(); ++k)
        local[k] = r(grp[k]) + st.xi(off + static_cast<Index>(k));
      project_l1_ball(local, radius, proj, scratch);
      for (std::size_t k = 0; k < grp.size(); ++k) {
        double& x = st.xi(off + static_cast<Index>(k));
        max_change = std::max(max_change, std::abs(proj[k] - x));
        x = proj[k];
        r(grp[k]) = local[k] - proj[k];
      }
    }
    st.sweeps = sweep;
    if (max_change <= opt.tol) {
      obj = prox_objectives(h, st.xi, lambda_prime, gs);
      if (obj.gap <= opt.tol * (1.0 + std::abs(obj.primal))) {
        // r keeps exact zeros where a group absorbed its whole input.
        st.residual = r;
        st.gap = obj.gap;
        st.primal = obj.primal;
        st.dual = obj.dual;
        out.s = st.residual;
        return out;
      }
      r = h - scatter_dual(st.xi, gs); // shed accumulated rounding
    }
  }
  obj = prox_objectives(h, st.xi, lambda_prime, gs);
  throw SolverStalled("prox_structured: no certificate after " + std::to_string(opt.max_sweeps) +
                          " sweeps (gap " + std::to_string(obj.gap) + ")",
                      obj.gap);
}

/// Frame-wise prox: column i of the result is prox_structured(H.col(i)).
inline Matrix prox_batch(const Matrix& H, double lambda_prime, const GroupSet& gs,
                         const ProxOptions& opt = {}) {
  if (H.rows() != gs.pixels())
    throw InvalidInput("prox_batch: matrix has " + std::to_string(H.rows()) + " rows, expected " +
                       std::to_string(gs.pixels()));
  Matrix S(H.rows(), H.cols());
  std::string failed;
  double worst_gap = 0.0;
  for (Index i = 0; i < H.cols(); ++i) {
    try {
      S.col(i) = prox_structured(H.col(i), lambda_prime, gs, opt).s;
    } catch (const SolverStalled& e) {
      failed += (failed.empty() ? "" : ",") + std::to_string(i);
      worst_gap = std::max(worst_gap, e.last_gap());
    }
  }
  if (!failed.empty())
    throw SolverStalled("prox_batch: stalled on frame(s) " + failed, worst_gap);
  return S;
}

} // namespace elsd

#endif // ELSD_STRUCTURED_SPARSITY_HPP
