#pragma once

// Monte-Carlo verification of the analytic guarantees: the per-coordinate
// near-zero (orthant boundary) bound and its optimality under diagonal
// uniformization, the collision bound for epsilon-close pairs, and the
// concentration statement for sign agreement under a random Gaussian map
// after lossy projection.

#include <hqh/core.hpp>
#include <hqh/rotation.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace hqh {

// ---------------------------------------------------------------------------
// Gaussian sampling
// ---------------------------------------------------------------------------

// Centered Gaussian population in projected coordinates, with the covariance
// given analytically so bounds have exact inputs.
struct GaussianDataSpec {
  Matrix sigma_th;
  std::uint64_t seed = 0;

  Index c() const { return sigma_th.rows(); }
};

namespace detail {

// Symmetric PSD square root; rejects matrices with clearly negative
// eigenvalues, clamps roundoff-negative ones to zero.
inline Matrix symmetric_sqrt(const Matrix& sigma) {
  if (sigma.rows() != sigma.cols() || sigma.rows() < 1)
    throw std::invalid_argument("symmetric_sqrt: matrix must be square");
  if ((sigma - sigma.transpose()).norm() > 1e-10 * sigma.norm() + 1e-12)
    throw std::invalid_argument("symmetric_sqrt: matrix not symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> es(sigma);
  double top = std::max(std::abs(es.eigenvalues().maxCoeff()), 1e-300);
  Vector lam = es.eigenvalues();
  for (Index i = 0; i < lam.size(); ++i) {
    if (lam[i] < -1e-9 * top)
      throw std::invalid_argument("symmetric_sqrt: matrix not PSD, eigenvalue " +
                                  std::to_string(lam[i]));
    lam[i] = std::sqrt(std::max(lam[i], 0.0));
  }
  return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

inline Vector gaussian_vector(std::mt19937_64& rng, Index n) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = gauss(rng);
  return v;
}

inline Vector unit_vector(std::mt19937_64& rng, Index n) {
  while (true) {
    Vector v = gaussian_vector(rng, n);
    double nrm = v.norm();
    if (nrm > 1e-12) return v / nrm;
  }
}

}  // namespace detail

// n samples of h1 = L g with L the symmetric square root of sigma, one
// sample per column, drawn sequentially from the spec seed.
inline Matrix sample_h1(const GaussianDataSpec& spec, Index n) {
  if (n < 1) throw std::invalid_argument("sample_h1: need n >= 1");
  Matrix L = detail::symmetric_sqrt(spec.sigma_th);
  std::mt19937_64 rng(derive_seed(spec.seed, "sample_h1"));
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix G(spec.c(), n);
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < spec.c(); ++i) G(i, j) = gauss(rng);
  return L * G;
}

// ---------------------------------------------------------------------------
// Near-zero mass
// ---------------------------------------------------------------------------

struct NearZeroCdf {
  std::vector<double> epsilon;
  std::vector<double> fraction;  // share of all entries with |value| < eps
  std::int64_t entries = 0;
};

// Empirical CDF of |entry| over every entry of Y at the given ascending
// positive thresholds. This is the across-coordinates pooled version used to
// compare methods: more mass near zero means more sign flips under noise.
inline NearZeroCdf near_zero_cdf(const Matrix& Y,
                                 const std::vector<double>& eps_grid) {
  if (Y.size() == 0) throw std::invalid_argument("near_zero_cdf: empty matrix");
  if (eps_grid.empty())
    throw std::invalid_argument("near_zero_cdf: empty threshold grid");
  for (std::size_t i = 0; i < eps_grid.size(); ++i) {
    if (!(eps_grid[i] >= 0.0))
      throw std::invalid_argument(
          "near_zero_cdf: thresholds must be non-negative");
    if (i > 0 && eps_grid[i] <= eps_grid[i - 1])
      throw std::invalid_argument("near_zero_cdf: thresholds must be ascending");
  }
  NearZeroCdf out;
  out.epsilon = eps_grid;
  out.fraction.assign(eps_grid.size(), 0.0);
  out.entries = static_cast<std::int64_t>(Y.size());
  std::vector<std::int64_t> counts(eps_grid.size(), 0);
  const double* data = Y.data();
  for (Eigen::Index idx = 0; idx < Y.size(); ++idx) {
    double a = std::abs(data[idx]);
    // Grid is short (tens of entries); linear scan from the smallest.
    for (std::size_t g = 0; g < eps_grid.size(); ++g)
      if (a < eps_grid[g]) ++counts[g];
  }
  for (std::size_t g = 0; g < eps_grid.size(); ++g)
    out.fraction[g] =
        static_cast<double>(counts[g]) / static_cast<double>(out.entries);
  return out;
}

// ---------------------------------------------------------------------------
// Per-coordinate near-zero bound
// ---------------------------------------------------------------------------

struct OrthantBoundReport {
  double epsilon = 0.0;
  std::int64_t n_mc = 0;
  Vector gamma;           // per-coordinate standard deviations after rotation
  Vector empirical_p;     // empirical P[|y_i| < eps]
  Vector analytic_bound;  // 2 eps / (sqrt(2 pi) gamma_i)
  Vector std_err;
  double sum_inverse_gamma = 0.0;
  bool regime_ok = true;  // eps small against the coordinate scales
  bool pass = false;
};

// Checks P[|(R h1)_i| < eps] <= 2 eps / (sqrt(2 pi) gamma_i) per coordinate
// by Monte Carlo, with gamma_i^2 = (R sigma R^T)_ii taken analytically.
inline OrthantBoundReport verify_orthant_bound(const GaussianDataSpec& spec,
                                               const OrthogonalTransform& R,
                                               double epsilon,
                                               std::int64_t n_mc) {
  const Index c = spec.c();
  if (R.c() != c)
    throw std::invalid_argument("verify_orthant_bound: rotation size mismatch");
  if (!(epsilon > 0.0))
    throw std::invalid_argument("verify_orthant_bound: need epsilon > 0");
  if (n_mc < 1) throw std::invalid_argument("verify_orthant_bound: need n_mc >= 1");

  Matrix rotated_sigma = R.R * spec.sigma_th * R.R.transpose();
  OrthantBoundReport report;
  report.epsilon = epsilon;
  report.n_mc = n_mc;
  report.gamma.resize(c);
  report.analytic_bound.resize(c);
  for (Index i = 0; i < c; ++i) {
    double var = rotated_sigma(i, i);
    if (var <= 0.0)
      throw std::invalid_argument(
          "verify_orthant_bound: zero-variance coordinate " + std::to_string(i));
    report.gamma[i] = std::sqrt(var);
    report.analytic_bound[i] =
        2.0 * epsilon / (std::sqrt(2.0 * M_PI) * report.gamma[i]);
  }
  report.sum_inverse_gamma = report.gamma.cwiseInverse().sum();
  report.regime_ok = epsilon <= 0.5 * report.gamma.minCoeff();

  Matrix L = detail::symmetric_sqrt(spec.sigma_th);
  Matrix RL = R.R * L;
  std::mt19937_64 rng(derive_seed(spec.seed, "orthant_mc"));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::int64_t> counts(static_cast<std::size_t>(c), 0);
  Vector g(c), y(c);
  for (std::int64_t t = 0; t < n_mc; ++t) {
    for (Index i = 0; i < c; ++i) g[i] = gauss(rng);
    y.noalias() = RL * g;
    for (Index i = 0; i < c; ++i)
      if (std::abs(y[i]) < epsilon) ++counts[static_cast<std::size_t>(i)];
  }

  report.empirical_p.resize(c);
  report.std_err.resize(c);
  bool ok = true;
  for (Index i = 0; i < c; ++i) {
    double p = static_cast<double>(counts[static_cast<std::size_t>(i)]) /
               static_cast<double>(n_mc);
    report.empirical_p[i] = p;
    report.std_err[i] = std::sqrt(p * (1.0 - p) / static_cast<double>(n_mc));
    if (p > report.analytic_bound[i] + 3.0 * report.std_err[i]) ok = false;
  }
  report.pass = ok;
  return report;
}

struct UniformizationOptimalityReport {
  double uniform_sum = 0.0;      // sum 1/gamma_i after diagonal uniformization
  double closed_form = 0.0;      // c^{3/2} / sqrt(trace)
  double best_random_sum = 0.0;  // minimum over sampled rotations
  double worst_margin = 0.0;     // min over rotations of (sum_R - uniform_sum)
  int n_rotations = 0;
  bool pass = false;
};

// The sum of inverse coordinate deviations is minimized exactly when the
// rotated covariance has a uniform diagonal, where it equals
// c^{3/2} / sqrt(trace). Checks the closed form against the uniformizing
// rotation and that no sampled random rotation does better.
inline UniformizationOptimalityReport check_uniformization_optimality(
    const GaussianDataSpec& spec, int n_rotations, std::uint64_t seed) {
  if (n_rotations < 1)
    throw std::invalid_argument("check_uniformization_optimality: need n >= 1");
  const Index c = spec.c();

  auto sum_inverse_gamma = [&](const Matrix& R) {
    Vector diag = (R * spec.sigma_th * R.transpose()).diagonal();
    double sum = 0.0;
    for (Index i = 0; i < c; ++i) {
      if (diag[i] <= 0.0)
        throw std::invalid_argument(
            "check_uniformization_optimality: singular direction");
      sum += 1.0 / std::sqrt(diag[i]);
    }
    return sum;
  };

  UniformizationOptimalityReport report;
  report.n_rotations = n_rotations;
  UnifDiagResult ud = unifdiag_fit(CovarianceState(spec.sigma_th, true));
  report.uniform_sum = sum_inverse_gamma(ud.transform.R);
  report.closed_form = std::pow(static_cast<double>(c), 1.5) /
                       std::sqrt(spec.sigma_th.trace());

  double best = std::numeric_limits<double>::infinity();
  for (int r = 0; r < n_rotations; ++r) {
    OrthogonalTransform R = random_rotation(
        c, derive_seed(seed, "haar", static_cast<std::uint64_t>(r)));
    best = std::min(best, sum_inverse_gamma(R.R));
  }
  report.best_random_sum = best;
  report.worst_margin = best - report.uniform_sum;
  report.pass = std::abs(report.uniform_sum - report.closed_form) <=
                    1e-8 * report.closed_form &&
                report.worst_margin >= -1e-9;
  return report;
}

// ---------------------------------------------------------------------------
// Collision bound for epsilon-close pairs
// ---------------------------------------------------------------------------

// P[codes differ] <= 2 eps sqrt(2/pi) c^{3/2} / sqrt(trace) for pairs at
// input distance at most eps, after a diagonal-uniformizing rotation.
inline double th2_bound(Index c, double trace, double epsilon) {
  if (c < 1 || !(trace > 0.0) || !(epsilon >= 0.0))
    throw std::invalid_argument("th2_bound: bad arguments");
  return 2.0 * epsilon * std::sqrt(2.0 / M_PI) *
         std::pow(static_cast<double>(c), 1.5) / std::sqrt(trace);
}

struct Th2Report {
  double epsilon = 0.0;
  std::int64_t n_pairs = 0;
  double empirical = 0.0;
  double bound = 0.0;
  double std_err = 0.0;
  bool vacuous = false;  // bound >= 1: trivially true, flagged for the caller
  bool pass = false;
};

// Source of close pairs in projected coordinates; must return (v1, v2) with
// ||v1 - v2|| <= epsilon and v1 distributed per the population spec.
using Th2PairSampler =
    std::function<std::pair<Vector, Vector>(std::mt19937_64&)>;

// Encodes pairs of epsilon-close points through R and compares the rate of
// differing codes with the analytic bound. The default sampler draws
// v1 = L g from the population and perturbs it by a uniform-direction,
// uniform-radius step of length at most epsilon; any sampler respecting the
// distance cap gives a valid check.
inline Th2Report verify_th2(const GaussianDataSpec& spec,
                            const OrthogonalTransform& R, double epsilon,
                            std::int64_t n_pairs,
                            const Th2PairSampler& pair_sampler = {}) {
  const Index c = spec.c();
  if (R.c() != c)
    throw std::invalid_argument("verify_th2: rotation size mismatch");
  if (!(epsilon >= 0.0))
    throw std::invalid_argument("verify_th2: need epsilon >= 0");
  if (n_pairs < 1) throw std::invalid_argument("verify_th2: need n_pairs >= 1");

  Matrix L = detail::symmetric_sqrt(spec.sigma_th);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto default_sampler = [&](std::mt19937_64& rng) {
    Vector g(c);
    for (Index i = 0; i < c; ++i) g[i] = gauss(rng);
    Vector v1 = L * g;
    Vector u = detail::unit_vector(rng, c);
    double radius = epsilon * unif(rng);
    return std::make_pair(v1, Vector(v1 + radius * u));
  };

  std::mt19937_64 rng(derive_seed(spec.seed, "th2_pairs"));
  std::int64_t flips = 0;
  Vector y1(c), y2(c);
  for (std::int64_t t = 0; t < n_pairs; ++t) {
    auto [v1, v2] = pair_sampler ? pair_sampler(rng) : default_sampler(rng);
    if (v1.size() != c || v2.size() != c)
      throw std::invalid_argument("verify_th2: sampler dimension mismatch");
    if ((v1 - v2).norm() > epsilon * (1.0 + 1e-12) + 1e-300)
      throw std::invalid_argument(
          "verify_th2: sampler violated the distance cap");
    y1.noalias() = R.R * v1;
    y2.noalias() = R.R * v2;
    bool differ = false;
    for (Index i = 0; i < c; ++i)
      if ((y1[i] >= 0.0) != (y2[i] >= 0.0)) {
        differ = true;
        break;
      }
    if (differ) ++flips;
  }

  Th2Report report;
  report.epsilon = epsilon;
  report.n_pairs = n_pairs;
  report.empirical = static_cast<double>(flips) / static_cast<double>(n_pairs);
  report.bound = th2_bound(c, spec.sigma_th.trace(), epsilon);
  report.std_err = std::sqrt(report.empirical * (1.0 - report.empirical) /
                             static_cast<double>(n_pairs));
  report.vacuous = report.bound >= 1.0;
  report.pass = report.empirical <= report.bound + 3.0 * report.std_err;
  return report;
}

// ---------------------------------------------------------------------------
// Sign agreement under a Gaussian map after lossy projection
// ---------------------------------------------------------------------------

struct Th3Params {
  double l = 1.0;         // nominal input norm
  double delta = 0.01;    // relative norm tolerance for the second point
  double eps_pca = 0.02;  // fraction of each norm the projection may discard
  double rho = 0.1;       // input-space distance between the pair
  double eta = 0.1;       // slack in the agreement count
  Index c = 64;           // number of sign bits
};

struct Th3Report {
  Th3Params params;
  double A = 0.0;            // cosine lower bound, clamped into [-1, 1]
  double A_raw = 0.0;        // unclamped value; < -1 marks a vacuous bound
  double theta_max = 0.0;    // arccos(A)
  double p = 0.0;            // per-bit agreement lower bound 1 - theta_max/pi
  double q = 0.0;            // agreement-count threshold c (p - eta)
  double azuma_bound = 0.0;  // exp(-eta^2 c / 2)
  bool vacuous = false;

  std::int64_t n_trials = 0;
  double empirical_tail = 0.0;  // P[agreements < q]
  double tail_std_err = 0.0;
  double agreement_gap = 0.0;   // mean of X/c - (1 - theta/pi) over trials
  double agreement_se = 0.0;
  double max_angle_seen = 0.0;
  bool angles_ok = true;        // every generated pair satisfied theta <= theta_max
  bool pass = false;
};

// Closed-form quantities of the agreement guarantee for points with norm
// about l, pairwise distance rho, and a projection keeping all but an
// eps_pca fraction of each point's energy.
inline Th3Report th3_quantities(const Th3Params& params) {
  if (!(params.l > 0.0) || !(params.delta >= 0.0) || !(params.eps_pca >= 0.0) ||
      !(params.rho >= 0.0) || !(params.eta > 0.0) || params.c < 1)
    throw std::invalid_argument("th3_quantities: bad parameters");
  Th3Report r;
  r.params = params;
  double one_plus = 1.0 + params.delta;
  r.A_raw = (1.0 - params.eps_pca) * (1.0 - params.eps_pca) *
                (1.0 - params.delta) * (1.0 - params.delta) /
                (one_plus * one_plus) -
            params.rho * params.rho /
                (2.0 * params.l * params.l * one_plus * one_plus) -
            params.rho * params.eps_pca / (params.l * one_plus) -
            2.0 * params.eps_pca * params.eps_pca;
  r.A = std::clamp(r.A_raw, -1.0, 1.0);
  r.theta_max = std::acos(r.A);
  r.p = 1.0 - r.theta_max / M_PI;
  r.q = static_cast<double>(params.c) * (r.p - params.eta);
  r.azuma_bound =
      std::exp(-params.eta * params.eta * static_cast<double>(params.c) / 2.0);
  r.vacuous = r.A_raw < -1.0 || r.q <= 0.0 || r.azuma_bound >= 1.0;
  return r;
}

// Monte-Carlo check of the agreement guarantee. Pairs are built adversarially
// close to the parameter boundary: x1 sits at norm l with exactly an eps_pca
// fraction of its norm outside the kept subspace, x2 = x1 + rho u is
// rejection-sampled until it satisfies the norm and discarded-energy
// constraints. Each trial draws a fresh iid Gaussian map of c rows over the
// kept coordinates and counts sign agreements X; the guarantee bounds
// P[X < q] and, per bit, E[X]/c = 1 - theta/pi exactly.
inline Th3Report verify_th3(const Th3Params& params, std::int64_t n_trials,
                            std::uint64_t seed, Index kept_dims = 8) {
  if (n_trials < 1) throw std::invalid_argument("verify_th3: need n_trials >= 1");
  if (kept_dims < 2) throw std::invalid_argument("verify_th3: need kept_dims >= 2");
  Th3Report report = th3_quantities(params);
  report.n_trials = n_trials;

  const Index m = kept_dims;
  const double l = params.l;
  const double eps = params.eps_pca;
  std::mt19937_64 rng(derive_seed(seed, "th3_trials"));
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::int64_t tail = 0;
  double gap_sum = 0.0, gap_sq = 0.0;
  for (std::int64_t t = 0; t < n_trials; ++t) {
    Vector v1(m), v2(m);
    bool found = false;
    for (int attempt = 0; attempt < 10000 && !found; ++attempt) {
      Vector d1 = detail::unit_vector(rng, m);
      v1 = std::sqrt(1.0 - eps * eps) * l * d1;
      double x1_disc = eps * l;
      Vector u = detail::unit_vector(rng, m + 1);
      v2 = v1 + params.rho * u.head(m);
      double x2_disc = x1_disc + params.rho * u[m];
      double nrm = std::sqrt(v2.squaredNorm() + x2_disc * x2_disc);
      if (nrm < l * (1.0 - params.delta) || nrm > l * (1.0 + params.delta))
        continue;
      if (std::abs(x2_disc) > eps * nrm) continue;
      found = true;
    }
    if (!found)
      throw std::runtime_error(
          "verify_th3: could not generate an admissible pair; parameters too "
          "tight");

    double cosang = std::clamp(
        v1.dot(v2) / (v1.norm() * v2.norm()), -1.0, 1.0);
    double ang = std::acos(cosang);
    report.max_angle_seen = std::max(report.max_angle_seen, ang);
    if (ang > report.theta_max + 1e-9) report.angles_ok = false;

    Index agree = 0;
    for (Index b = 0; b < params.c; ++b) {
      double s1 = 0.0, s2 = 0.0;
      for (Index i = 0; i < m; ++i) {
        double r = gauss(rng);
        s1 += r * v1[i];
        s2 += r * v2[i];
      }
      if ((s1 >= 0.0) == (s2 >= 0.0)) ++agree;
    }
    if (static_cast<double>(agree) < report.q) ++tail;
    double diff = static_cast<double>(agree) / static_cast<double>(params.c) -
                  (1.0 - ang / M_PI);
    gap_sum += diff;
    gap_sq += diff * diff;
  }

  const double n = static_cast<double>(n_trials);
  report.empirical_tail = static_cast<double>(tail) / n;
  report.tail_std_err =
      std::sqrt(report.empirical_tail * (1.0 - report.empirical_tail) / n);
  report.agreement_gap = gap_sum / n;
  double var = std::max(0.0, gap_sq / n - report.agreement_gap * report.agreement_gap);
  report.agreement_se = std::sqrt(var / n);
  report.pass =
      report.angles_ok &&
      report.empirical_tail <= report.azuma_bound + 3.0 * report.tail_std_err &&
      std::abs(report.agreement_gap) <= 3.0 * report.agreement_se + 1e-6;
  return report;
}

// Empirical per-bit agreement rate between two fixed directions under fresh
// iid Gaussian rows; converges to 1 - angle/pi.
inline double bit_agreement_rate(const Vector& v1, const Vector& v2, Index c,
                                 std::int64_t n_trials, std::uint64_t seed) {
  if (v1.size() != v2.size() || v1.size() < 1)
    throw std::invalid_argument("bit_agreement_rate: bad vectors");
  if (c < 1 || n_trials < 1)
    throw std::invalid_argument("bit_agreement_rate: bad counts");
  std::mt19937_64 rng(derive_seed(seed, "bit_agreement"));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::int64_t agree = 0;
  const Index m = v1.size();
  for (std::int64_t t = 0; t < n_trials; ++t) {
    for (Index b = 0; b < c; ++b) {
      double s1 = 0.0, s2 = 0.0;
      for (Index i = 0; i < m; ++i) {
        double r = gauss(rng);
        s1 += r * v1[i];
        s2 += r * v2[i];
      }
      if ((s1 >= 0.0) == (s2 >= 0.0)) ++agree;
    }
  }
  return static_cast<double>(agree) /
         (static_cast<double>(n_trials) * static_cast<double>(c));
}

}  // namespace hqh
