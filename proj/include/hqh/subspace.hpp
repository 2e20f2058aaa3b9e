#pragma once

// Principal subspace estimation: batch PCA through subspace iteration with
// Rayleigh-Ritz extraction, and the OPAST recursion for tracking the subspace
// over a stream with exact per-step orthonormality.

#include <hqh/core.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace hqh {

namespace detail {

// Thin-Q factor of a tall matrix, columns orthonormal.
inline Matrix thin_q(const Matrix& A) {
  Eigen::HouseholderQR<Matrix> qr(A);
  return qr.householderQ() * Matrix::Identity(A.rows(), A.cols());
}

// Fix the sign of each basis row so the entry of largest magnitude is
// positive (first such entry on ties), making eigenvector output
// deterministic across runs and backends.
inline void canonicalize_row_signs(Matrix& rows) {
  for (Index r = 0; r < rows.rows(); ++r) {
    Index best = 0;
    double mag = 0.0;
    for (Index j = 0; j < rows.cols(); ++j) {
      double a = std::abs(rows(r, j));
      if (a > mag) {
        mag = a;
        best = j;
      }
    }
    if (rows(r, best) < 0.0) rows.row(r) *= -1.0;
  }
}

}  // namespace detail

// Top-c principal directions of X (points as columns). X is expected to be
// centered already; a clearly nonzero mean is rejected. Returns the c x d
// basis with rows ordered by decreasing eigenvalue and deterministic signs.
//
// Iteration: orthonormal start from an internally fixed seed, repeated
// multiply by the sample covariance with QR re-orthonormalization, and a
// Rayleigh-Ritz rotation each sweep. Stops when the relative eigenpair
// residual falls below 1e-10 or after 1000 sweeps; near-degenerate trailing
// eigenvalues that never separate simply stop improving the residual, which
// is why running out of sweeps is not an error.
inline ProjectionBasis batch_pca(const DataMatrix& X, Index c) {
  const Index d = X.d();
  const Index n = X.n();
  if (c < 1 || c > d || c > n)
    throw std::invalid_argument("batch_pca: need 1 <= c <= min(d, n)");
  if (n < 2) throw std::invalid_argument("batch_pca: need at least two points");

  const double col_scale = X.values.norm() / std::sqrt(static_cast<double>(n));
  const double mean_norm = X.values.rowwise().mean().norm();
  if (mean_norm > 1e-6 * col_scale + 1e-12)
    throw std::invalid_argument(
        "batch_pca: input not centered (mean norm " + std::to_string(mean_norm) + ")");

  Matrix sigma = Matrix::Zero(d, d);
  sigma.selfadjointView<Eigen::Lower>().rankUpdate(X.values,
                                                   1.0 / static_cast<double>(n));
  sigma.triangularView<Eigen::StrictlyUpper>() = sigma.transpose();

  // Fixed internal seed: the estimate is a deterministic function of X.
  std::mt19937_64 rng(derive_seed(0x5ca1ab1eULL, "batch_pca_start"));
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix W(d, c);
  for (Index j = 0; j < c; ++j)
    for (Index i = 0; i < d; ++i) W(i, j) = gauss(rng);
  W = detail::thin_q(W);

  const int max_sweeps = 1000;
  const double tol = 1e-10;
  Vector lambda = Vector::Zero(c);
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    Matrix SW = sigma.selfadjointView<Eigen::Lower>() * W;
    Matrix H = W.transpose() * SW;
    H = ((H + H.transpose()) / 2.0).eval();
    Eigen::SelfAdjointEigenSolver<Matrix> es(H);
    // Reorder ascending -> descending.
    Matrix U(c, c);
    for (Index j = 0; j < c; ++j) {
      U.col(j) = es.eigenvectors().col(c - 1 - j);
      lambda[j] = es.eigenvalues()[c - 1 - j];
    }
    W = (W * U).eval();
    SW = (SW * U).eval();

    double top = std::max(std::abs(lambda[0]), 1e-300);
    if (lambda[c - 1] <= 1e-12 * top) {
      std::string which;
      for (Index j = 0; j < c; ++j)
        if (lambda[j] <= 1e-12 * top) which += (which.empty() ? "" : ", ") + std::to_string(j);
      throw std::runtime_error(
          "batch_pca: degenerate spectrum, rank below " + std::to_string(c) +
          "; deficient directions [" + which + "]");
    }

    double resid = (SW - W * lambda.asDiagonal()).norm() / top;
    if (resid <= tol) break;
    if (sweep + 1 < max_sweeps) W = detail::thin_q(SW);
  }

  Matrix rows = W.transpose();
  detail::canonicalize_row_signs(rows);
  return ProjectionBasis(std::move(rows));
}

// ---------------------------------------------------------------------------
// OPAST
// ---------------------------------------------------------------------------

// Orthonormal projection approximation subspace tracker. Maintains W (d x c,
// orthonormal columns) and the gain matrix Z, approximating the inverse of
// the exponentially weighted correlation of the projected stream.
//
// Per sample x:
//   y = W^T x,  h = Z y,  g = h / (beta + y^T h),  Z <- (Z - g h^T) / beta
//   e = x - W y                               (residual, orthogonal to W)
//   tau = (1/||g||^2) (1/sqrt(1 + ||g||^2 ||e||^2) - 1)
//   p = tau W g + (1 + tau ||g||^2) e
//   W <- W + p g^T
// The tau correction makes the update exactly orthonormality-preserving:
// with s = ||g||^2 and E = ||e||^2, (W + p g^T)^T (W + p g^T) - I expands to
// (2 tau + tau^2 s + (1 + tau s)^2 E) g g^T, and tau is the root of that
// quadratic. New minus old basis is the rank-one p g^T, so the coordinate
// change W_new^T W_old is I + tau g g^T, returned for cheap covariance
// re-projection.
class OpastTracker {
 public:
  struct StepInfo {
    Vector g;
    double tau = 0.0;
    bool moved = false;
  };

  OpastTracker(Index d, Index c, double beta = 0.99)
      : beta_(beta),
        W_(Matrix::Identity(d, c)),
        Z_(Matrix::Identity(c, c)) {
    if (c < 1 || c > d) throw std::invalid_argument("OpastTracker: need 1 <= c <= d");
    if (!(beta > 0.0 && beta <= 1.0))
      throw std::invalid_argument("OpastTracker: beta must be in (0, 1]");
  }

  StepInfo update(const Eigen::Ref<const Vector>& x) {
    if (x.size() != W_.rows())
      throw std::invalid_argument("OpastTracker::update: dimension mismatch");
    if (!x.allFinite())
      throw std::invalid_argument("OpastTracker::update: non-finite sample");
    ++steps_;

    Vector y = W_.transpose() * x;
    Vector h = Z_.selfadjointView<Eigen::Lower>() * y;
    double den = beta_ + y.dot(h);
    Vector g = h / den;
    Z_ -= g * h.transpose();
    Z_ /= beta_;
    Z_ = ((Z_ + Z_.transpose()) / 2.0).eval();

    Vector e = x - W_ * y;
    double s = g.squaredNorm();
    double E = e.squaredNorm();
    StepInfo info;
    info.g = g;
    if (s * std::max(E, 1.0) < 1e-300) {
      // Zero (or numerically zero) projected sample: basis unchanged.
      return info;
    }
    double tau = (1.0 / std::sqrt(1.0 + s * E) - 1.0) / s;
    Vector p = tau * (W_ * g) + (1.0 + tau * s) * e;
    W_ += p * g.transpose();
    info.tau = tau;
    info.moved = true;
    return info;
  }

  const Matrix& basis_columns() const { return W_; }
  ProjectionBasis basis() const { return ProjectionBasis(W_.transpose(), 1e-6); }
  const Matrix& gain() const { return Z_; }
  double beta() const { return beta_; }
  std::int64_t steps() const { return steps_; }
  Index d() const { return W_.rows(); }
  Index c() const { return W_.cols(); }

 private:
  double beta_;
  Matrix W_;
  Matrix Z_;
  std::int64_t steps_ = 0;
};

// Functional wrapper over OpastTracker::update.
inline OpastTracker opast_update(OpastTracker tracker,
                                 const Eigen::Ref<const Vector>& x) {
  tracker.update(x);
  return tracker;
}

// Principal angles between the row spaces of two bases of equal shape,
// ascending, in radians: arccos of the singular values of A B^T.
inline Vector principal_angles(const ProjectionBasis& a, const ProjectionBasis& b) {
  if (a.c() != b.c() || a.d() != b.d())
    throw std::invalid_argument("principal_angles: shape mismatch");
  if (a.orthonormality_error() > 1e-6 || b.orthonormality_error() > 1e-6)
    throw std::invalid_argument("principal_angles: input not orthonormal");
  Matrix M = a.rows() * b.rows().transpose();
  Eigen::JacobiSVD<Matrix> svd(M);
  Vector angles(a.c());
  for (Index i = 0; i < a.c(); ++i) {
    double s = std::clamp(svd.singularValues()[i], 0.0, 1.0);
    angles[i] = std::acos(s);
  }
  return angles;
}

}  // namespace hqh
