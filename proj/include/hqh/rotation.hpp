#pragma once

// Rotation learners that act on the projected covariance: seeded Haar random
// rotations, ITQ alternating minimization, IsoHash Riemannian descent and the
// closed-form Givens uniformization of the covariance diagonal.

#include <hqh/core.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace hqh {

// ---------------------------------------------------------------------------
// Givens rotations
// ---------------------------------------------------------------------------

// Plane rotation acting on coordinates (j, i) with j < i. The embedding puts
// cos(theta) at (j,j) and (i,i), -sin(theta) at (j,i) and +sin(theta) at
// (i,j), i.e. on the ordered pair (j, i) the 2x2 block is [[c,-s],[s,c]].
struct GivensStep {
  Index i = 1;
  Index j = 0;
  double theta = 0.0;
};

namespace detail {

inline void check_givens(Index c, const GivensStep& g) {
  if (c < 2) throw std::invalid_argument("givens: need dimension >= 2");
  if (g.j < 0 || g.i <= g.j || g.i >= c)
    throw std::invalid_argument("givens: need 0 <= j < i < c");
  if (!std::isfinite(g.theta))
    throw std::invalid_argument("givens: non-finite angle");
}

}  // namespace detail

inline Matrix givens_matrix(Index c, const GivensStep& g) {
  detail::check_givens(c, g);
  Matrix G = Matrix::Identity(c, c);
  double cs = std::cos(g.theta);
  double sn = std::sin(g.theta);
  G(g.j, g.j) = cs;
  G(g.i, g.i) = cs;
  G(g.j, g.i) = -sn;
  G(g.i, g.j) = sn;
  return G;
}

// In-place similarity sigma <- G sigma G^T, touching only rows/columns j and
// i. Keeps exact symmetry of the stored matrix.
inline void apply_givens_similarity(Matrix& sigma, const GivensStep& g) {
  if (sigma.rows() != sigma.cols())
    throw std::invalid_argument("apply_givens_similarity: matrix must be square");
  detail::check_givens(sigma.rows(), g);
  const Index n = sigma.rows();
  const Index i = g.i, j = g.j;
  const double cs = std::cos(g.theta);
  const double sn = std::sin(g.theta);

  for (Index k = 0; k < n; ++k) {
    if (k == i || k == j) continue;
    double sjk = sigma(j, k);
    double sik = sigma(i, k);
    double nj = cs * sjk - sn * sik;
    double ni = sn * sjk + cs * sik;
    sigma(j, k) = nj;
    sigma(k, j) = nj;
    sigma(i, k) = ni;
    sigma(k, i) = ni;
  }
  double a = sigma(j, j);
  double b = sigma(i, i);
  double off = sigma(j, i);
  double njj = cs * cs * a - 2.0 * cs * sn * off + sn * sn * b;
  double nii = sn * sn * a + 2.0 * cs * sn * off + cs * cs * b;
  double nji = cs * sn * (a - b) + (cs * cs - sn * sn) * off;
  sigma(j, j) = njj;
  sigma(i, i) = nii;
  sigma(j, i) = nji;
  sigma(i, j) = nji;
}

// M <- G M (rotate rows j and i), used to accumulate the Givens product.
inline void apply_givens_left(Matrix& M, const GivensStep& g) {
  detail::check_givens(M.rows(), g);
  const double cs = std::cos(g.theta);
  const double sn = std::sin(g.theta);
  Eigen::RowVectorXd rj = M.row(g.j);
  Eigen::RowVectorXd ri = M.row(g.i);
  M.row(g.j) = cs * rj - sn * ri;
  M.row(g.i) = sn * rj + cs * ri;
}

// ---------------------------------------------------------------------------
// Random rotations
// ---------------------------------------------------------------------------

// Haar-distributed rotation: QR of an iid Gaussian matrix with the R-factor
// diagonal signs folded into Q, which makes the distribution exactly
// rotation-invariant instead of QR-convention dependent.
inline OrthogonalTransform random_rotation(Index c, std::uint64_t seed) {
  if (c < 1) throw std::invalid_argument("random_rotation: need c >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix A(c, c);
  for (Index j = 0; j < c; ++j)
    for (Index i = 0; i < c; ++i) A(i, j) = gauss(rng);
  Eigen::HouseholderQR<Matrix> qr(A);
  Matrix Q = qr.householderQ() * Matrix::Identity(c, c);
  for (Index k = 0; k < c; ++k)
    if (qr.matrixQR()(k, k) < 0.0) Q.col(k) *= -1.0;
  return OrthogonalTransform(std::move(Q), RotationMethod::random);
}

// ---------------------------------------------------------------------------
// ITQ
// ---------------------------------------------------------------------------

inline double quantization_loss(const Matrix& B, const Matrix& R, const Matrix& V) {
  if (B.rows() != V.rows() || B.cols() != V.cols() || R.rows() != V.rows() ||
      R.rows() != R.cols())
    throw std::invalid_argument("quantization_loss: shape mismatch");
  return (B - R * V).squaredNorm();
}

// Orthogonal R minimizing ||B - R V||_F^2: with U S W^T the SVD of B V^T,
// the optimum is R = U W^T.
inline OrthogonalTransform procrustes_rotation(const Matrix& B, const Matrix& V) {
  if (B.rows() != V.rows() || B.cols() != V.cols())
    throw std::invalid_argument("procrustes_rotation: shape mismatch");
  if (B.rows() < 1 || B.cols() < 1)
    throw std::invalid_argument("procrustes_rotation: empty input");
  Matrix M = B * V.transpose();
  Eigen::JacobiSVD<Matrix> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Matrix R = svd.matrixU() * svd.matrixV().transpose();
  return OrthogonalTransform(std::move(R), RotationMethod::itq);
}

struct ItqState {
  OrthogonalTransform R;
  Matrix B;                          // +-1 matrix, c x n; sign(R V) at exit
  std::vector<double> loss_history;  // loss after each alternation
};

// Alternating minimization of ||B - R V||_F^2 over sign matrices B and
// rotations R: B_k = sign(R_{k-1} V), then R_k from the Procrustes step.
// Each half-step is the exact minimizer of its block, so the recorded loss
// Q(B_k, R_k) cannot increase; a rise beyond slack means a broken invariant
// and throws.
inline ItqState itq_fit_from(const Matrix& V, int iters,
                             const OrthogonalTransform& init) {
  const Index c = V.rows();
  const Index n = V.cols();
  if (c < 1 || n < c) throw std::invalid_argument("itq_fit: need n >= c >= 1");
  if (iters < 1) throw std::invalid_argument("itq_fit: need iters >= 1");
  if (init.c() != c) throw std::invalid_argument("itq_fit: init size mismatch");
  if (!V.allFinite()) throw std::invalid_argument("itq_fit: non-finite input");

  auto sign_of = [](const Matrix& Y) {
    return Y.unaryExpr([](double v) { return v >= 0.0 ? 1.0 : -1.0; }).eval();
  };

  Matrix R = init.R;
  ItqState state;
  state.loss_history.reserve(iters);
  double prev = std::numeric_limits<double>::infinity();
  for (int k = 0; k < iters; ++k) {
    state.B = sign_of(R * V);
    Matrix M = state.B * V.transpose();
    Eigen::JacobiSVD<Matrix> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
    R = svd.matrixU() * svd.matrixV().transpose();
    double loss = (state.B - R * V).squaredNorm();
    if (loss > prev + 1e-9)
      throw std::logic_error("itq_fit: loss increased from " +
                             std::to_string(prev) + " to " + std::to_string(loss));
    state.loss_history.push_back(loss);
    prev = loss;
  }
  // Refresh the codes against the final rotation (one more exact sign step,
  // which cannot increase the loss).
  state.B = sign_of(R * V);
  state.R = OrthogonalTransform(std::move(R), RotationMethod::itq);
  return state;
}

inline ItqState itq_fit(const Matrix& V, int iters, std::uint64_t seed) {
  return itq_fit_from(V, iters,
                      random_rotation(V.rows(), derive_seed(seed, "itq_init")));
}

// ---------------------------------------------------------------------------
// IsoHash
// ---------------------------------------------------------------------------

struct IsoHashConfig {
  double step_size = 1e-3;  // initial Cayley step on the trace-normalized problem
  int max_iters = 2000;     // total descent iterations, shared across restarts
  double tol = 1e-6;        // relative target: converged when residual <= tol * tau * sqrt(c)
};

struct IsoHashResult {
  OrthogonalTransform transform;
  double residual = 0.0;   // ||diag(Q Sigma Q^T) - tau I||_F at the returned Q
  int iterations = 0;
  bool converged = false;
  std::vector<double> objective_history;  // accepted steps of the returned run
};

namespace detail {

// One Cayley retraction step: Q(alpha) = (I + a/2 Omega)^{-1}(I - a/2 Omega) Q,
// orthogonal for any skew Omega.
inline Matrix cayley_step(const Matrix& Q, const Matrix& omega, double alpha) {
  const Index c = Q.rows();
  Matrix M = (alpha / 2.0) * omega;
  Matrix lhs = Matrix::Identity(c, c) + M;
  Matrix rhs = (Matrix::Identity(c, c) - M) * Q;
  return Eigen::PartialPivLU<Matrix>(lhs).solve(rhs);
}

inline Matrix polar_orthogonalize(const Matrix& Q) {
  Eigen::JacobiSVD<Matrix> svd(Q, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

}  // namespace detail

// Gradient descent on the orthogonal group for the isotropic-variance
// objective F(Q) = 1/2 ||diag(Q Sigma Q^T) - tau I||_F^2, using the Cayley
// retraction with Armijo backtracking so accepted steps never increase F.
//
// For diagonal Sigma the identity is a critical point (the Euclidean
// gradient 2 (diag(Q Sigma Q^T) - tau I) Q Sigma is symmetric there, so the
// skew projection vanishes) but a saddle unless the diagonal is already
// uniform. The solver therefore returns the identity only when it already
// meets the tolerance, and otherwise starts from internally seeded Haar
// rotations, restarting on stalls.
inline IsoHashResult isohash_fit(const CovarianceState& cov,
                                 const IsoHashConfig& cfg = {}) {
  const Index c = cov.c();
  if (cfg.max_iters < 1)
    throw std::invalid_argument("isohash_fit: need max_iters >= 1");
  if (cfg.step_size <= 0.0)
    throw std::invalid_argument("isohash_fit: need step_size > 0");
  if (cfg.tol <= 0.0)
    throw std::invalid_argument("isohash_fit: need tol > 0");

  IsoHashResult result;
  result.transform = OrthogonalTransform::identity(c);
  const double tau = cov.tau;
  if (c == 1 || tau <= 1e-300) {
    // One coordinate, or a (numerically) zero covariance: nothing to rotate.
    result.residual = (cov.sigma.diagonal().array() - tau).matrix().norm();
    result.converged = true;
    return result;
  }

  const Matrix S = cov.sigma / tau;  // normalized: target diagonal is all ones
  const double tol_n = cfg.tol * std::sqrt(double(c));
  const Vector ones = Vector::Ones(c);

  auto resid_of = [&](const Matrix& Q) {
    return ((Q * S * Q.transpose()).diagonal() - ones).norm();
  };

  double resid_id = resid_of(Matrix::Identity(c, c));
  if (resid_id <= tol_n) {
    result.residual = resid_id * tau;
    result.converged = true;
    return result;
  }

  Matrix best_q = Matrix::Identity(c, c);
  double best_resid = resid_id;
  std::vector<double> best_history;

  const int max_restarts = 8;
  int total_iters = 0;
  for (int restart = 0; restart < max_restarts && total_iters < cfg.max_iters;
       ++restart) {
    Matrix Q = random_rotation(
                   c, derive_seed(0x150c0de5ULL, "isohash_init",
                                  static_cast<std::uint64_t>(restart))).R;
    Matrix QS = Q * S;
    Vector diag = (QS * Q.transpose()).diagonal();
    double F = 0.5 * (diag - ones).squaredNorm();
    double alpha = cfg.step_size;
    std::vector<double> history;
    history.push_back(F);

    bool done = false;
    while (total_iters < cfg.max_iters) {
      double resid = std::sqrt(2.0 * F);
      if (resid <= tol_n) {
        done = true;
        break;
      }
      Vector dev = diag - ones;
      Matrix G = 2.0 * dev.asDiagonal() * QS;  // Euclidean gradient
      Matrix omega = (G * Q.transpose() - Q * G.transpose()) / 2.0;
      double omn2 = omega.squaredNorm();
      if (omn2 <= 1e-28) break;  // critical point away from the optimum

      bool accepted = false;
      for (int bt = 0; bt < 60 && alpha > 1e-18; ++bt) {
        Matrix Qn = detail::cayley_step(Q, omega, alpha);
        Matrix QnS = Qn * S;
        Vector dn = (QnS * Qn.transpose()).diagonal();
        double Fn = 0.5 * (dn - ones).squaredNorm();
        if (Fn <= F - 1e-4 * alpha * omn2) {
          Q = std::move(Qn);
          QS = std::move(QnS);
          diag = std::move(dn);
          F = Fn;
          alpha = std::min(alpha * 1.3, 1.0);
          accepted = true;
          break;
        }
        alpha *= 0.5;
      }
      ++total_iters;
      if (!accepted) break;  // stalled; try a fresh start
      history.push_back(F);
      if (total_iters % 128 == 0) {
        Q = detail::polar_orthogonalize(Q);
        QS = Q * S;
        diag = (QS * Q.transpose()).diagonal();
        F = 0.5 * (diag - ones).squaredNorm();
      }
    }

    double resid = std::sqrt(2.0 * F);
    if (resid < best_resid) {
      best_resid = resid;
      best_q = Q;
      best_history = std::move(history);
    }
    if (done) break;
  }

  best_q = detail::polar_orthogonalize(best_q);
  best_resid = resid_of(best_q);
  result.transform = OrthogonalTransform(std::move(best_q), RotationMethod::isohash);
  result.residual = best_resid * tau;
  result.iterations = total_iters;
  result.converged = best_resid <= tol_n;
  result.objective_history = std::move(best_history);
  return result;
}

// ---------------------------------------------------------------------------
// Diagonal uniformization
// ---------------------------------------------------------------------------

struct UnifDiagResult {
  OrthogonalTransform transform;
  std::vector<GivensStep> steps;
  std::vector<double> diag_residuals;  // max |diag - tau| after each step
  Matrix sigma_rotated;
};

namespace detail {

inline double wrap_angle(double phi) {
  if (phi > M_PI) phi -= 2.0 * M_PI;
  if (phi <= -M_PI) phi += 2.0 * M_PI;
  return phi;
}

}  // namespace detail

// Exact diagonal uniformization by c-1 Givens rotations. Each step picks the
// current extreme diagonal entries (indices of the minimum and maximum,
// lowest index on ties) and rotates in their plane by the closed-form angle
// that lands the minimum-side entry exactly on tau = trace/c. The rotated
// entry in coordinates (j, i) with driven diagonal value a, partner value b
// and off-diagonal value v satisfies
//   new_a(theta) = (a+b)/2 + A cos(2 theta) + B sin(2 theta),
// with A = (a-b)/2 and B = -v when the driven index is j, +v when it is i.
// Solving new_a = tau gives 2 theta = atan2(B, A) +- arccos(C / hypot(A, B))
// with C = tau - (a+b)/2; the smaller |theta| is taken. Feasibility
// |C| <= |A| <= hypot(A, B) holds because tau always lies between the
// current extremes, and is asserted each step. After step r the trace is
// unchanged and at least r diagonal entries already equal tau, so c-1 steps
// complete the uniformization.
inline UnifDiagResult unifdiag_fit(const CovarianceState& cov) {
  const Index c = cov.c();
  UnifDiagResult result;
  result.transform = OrthogonalTransform::identity(c);
  result.sigma_rotated = cov.sigma;
  if (c == 1) return result;

  const double tau = cov.tau;
  Matrix S = cov.sigma;
  Matrix R = Matrix::Identity(c, c);
  result.steps.reserve(c - 1);
  result.diag_residuals.reserve(c - 1);

  for (Index r = 0; r + 1 < c; ++r) {
    Index mn = 0, mx = 0;
    S.diagonal().minCoeff(&mn);
    S.diagonal().maxCoeff(&mx);

    GivensStep step;
    if (mn == mx) {
      // Diagonal already constant; emit a zero-angle step to keep the
      // fixed-length schedule.
      step = GivensStep{1, 0, 0.0};
    } else {
      const Index j = std::min(mn, mx);
      const Index i = std::max(mn, mx);
      const double a = S(mn, mn);  // driven entry: current minimum
      const double b = S(mx, mx);
      const double v = S(j, i);
      const double A = 0.5 * (a - b);
      const double B = (mn == j) ? -v : v;
      const double C = tau - 0.5 * (a + b);
      const double hyp = std::hypot(A, B);
      const double scale =
          std::abs(a) + std::abs(b) + std::abs(v) + std::abs(tau) + 1e-300;
      if (std::abs(C) > std::abs(A) + 1e-9 * scale)
        throw std::logic_error("unifdiag_fit: infeasible step, |C| > |a-b|/2");
      if (std::abs(A) > hyp + 1e-9 * scale)
        throw std::logic_error(
            "unifdiag_fit: infeasible step, |a-b|/2 > hypot(A,B)");
      double theta = 0.0;
      if (hyp > 1e-15 * scale) {
        double ratio = std::clamp(C / hyp, -1.0, 1.0);
        double psi = std::atan2(B, A);
        double al = std::acos(ratio);
        double t1 = detail::wrap_angle(psi + al) / 2.0;
        double t2 = detail::wrap_angle(psi - al) / 2.0;
        theta = (std::abs(t2) < std::abs(t1)) ? t2 : t1;
      }
      step = GivensStep{i, j, theta};
    }

    apply_givens_similarity(S, step);
    apply_givens_left(R, step);
    result.steps.push_back(step);
    result.diag_residuals.push_back(
        (S.diagonal().array() - tau).abs().maxCoeff());
  }

  result.transform = OrthogonalTransform(std::move(R), RotationMethod::unifdiag);
  result.sigma_rotated = std::move(S);
  return result;
}

}  // namespace hqh
