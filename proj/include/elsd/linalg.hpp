#ifndef ELSD_LINALG_HPP
#define ELSD_LINALG_HPP

// Dense matrix container and the numerical primitives used by the solver:
// thin SVD, singular value shrinkage / thresholding, and the three norms.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "elsd/errors.hpp"

namespace elsd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Frame sequence stored column-wise: column i is frame i vectorized
/// row-major (pixel (r, c) -> r * width + c).
struct FrameMatrix {
  Matrix data;
  Index height = 0;
  Index width = 0;

  FrameMatrix() = default;
  FrameMatrix(Matrix d, Index h, Index w) : data(std::move(d)), height(h), width(w) { validate(); }

  Index pixels() const noexcept { return height * width; }
  Index frames() const noexcept { return data.cols(); }

  void validate() const {
    if (height <= 0 || width <= 0)
      throw InvalidGeometry("frame geometry must be positive, got " + std::to_string(height) + "x" +
                            std::to_string(width));
    if (data.rows() != height * width)
      throw InvalidGeometry("frame matrix has " + std::to_string(data.rows()) + " rows, expected " +
                            std::to_string(height * width));
    if (data.cols() < 1) throw InvalidInput("frame matrix needs at least one frame");
    if (!data.allFinite()) throw InvalidInput("frame matrix contains non-finite entries");
  }
};

struct SvdFactors {
  Matrix U;     // p x k
  Vector sigma; // k, nonincreasing
  Matrix V;     // n x k
};

struct Norms {
  double frobenius = 0.0;
  double spectral = 0.0;
  double max_abs = 0.0;
};

namespace detail {

inline void require_finite(const Matrix& m, const char* who) {
  if (!m.allFinite()) throw InvalidInput(std::string(who) + ": non-finite input");
}

} // namespace detail

/// Thin SVD, k = min(p, n).
inline SvdFactors thin_svd(const Matrix& m) {
  if (m.size() == 0) throw InvalidInput("thin_svd: empty matrix");
  detail::require_finite(m, "thin_svd");
  Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success) throw InvalidInput("thin_svd: decomposition failed");
  return {svd.matrixU(), svd.singularValues(), svd.matrixV()};
}

/// max(sigma_i - threshold, 0) element-wise.
inline Vector shrink_singular_values(const Vector& sigma, double threshold) {
  if (!(threshold > 0.0)) throw InvalidParameter("shrink_singular_values: threshold must be > 0");
  if ((sigma.array() < 0.0).any()) throw InvalidInput("shrink_singular_values: negative singular value");
  return (sigma.array() - threshold).cwiseMax(0.0).matrix();
}

/// Numerical rank of a nonincreasing singular value vector for a rows x cols
/// matrix: count of sigma_i > max(rows, cols) * sigma_max * 1e-12.
inline Index numerical_rank(const Vector& sigma, Index rows, Index cols) {
  if (sigma.size() == 0) return 0;
  const double smax = sigma.maxCoeff();
  if (smax <= 0.0) return 0;
  const double tol = static_cast<double>(std::max(rows, cols)) * smax * 1e-12;
  return static_cast<Index>((sigma.array() > tol).count());
}

struct SvtResult {
  Matrix value;
  Index rank = 0;
  Vector shrunk_sigma; // singular values of `value`
};

/// Proximal operator of threshold * nuclear norm.
inline SvtResult svt(const Matrix& g, double threshold) {
  if (!(threshold > 0.0)) throw InvalidParameter("svt: threshold must be > 0");
  SvdFactors f = thin_svd(g);
  Vector shrunk = shrink_singular_values(f.sigma, threshold);
  const Index r = numerical_rank(shrunk, g.rows(), g.cols());

  SvtResult out;
  // Columns past r carry zero (or negligible) weight.
  out.value = f.U.leftCols(r) * shrunk.head(r).asDiagonal() * f.V.leftCols(r).transpose();
  out.rank = r;
  out.shrunk_sigma = std::move(shrunk);
  return out;
}

inline Norms norms(const Matrix& m) {
  detail::require_finite(m, "norms");
  Norms n;
  if (m.size() == 0) return n;
  n.frobenius = m.norm();
  n.max_abs = m.cwiseAbs().maxCoeff();
  if (n.max_abs > 0.0) n.spectral = thin_svd(m).sigma(0);
  return n;
}

inline double nuclear_norm(const Matrix& m) { return thin_svd(m).sigma.sum(); }

} // namespace elsd

#endif // ELSD_LINALG_HPP
