#include <hqh/core.hpp>
#include <hqh/subspace.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <vector>

using namespace hqh;

namespace {

// Zero-mean dataset whose sample covariance is exactly diag(scales^2) / 1:
// for every axis i the columns +-scales[i] e_i appear once each.
DataMatrix axis_dataset(const std::vector<double>& scales, Index d) {
  const Index k = static_cast<Index>(scales.size());
  Matrix X = Matrix::Zero(d, 2 * k);
  for (Index i = 0; i < k; ++i) {
    X(i, 2 * i) = scales[static_cast<std::size_t>(i)];
    X(i, 2 * i + 1) = -scales[static_cast<std::size_t>(i)];
  }
  return DataMatrix(std::move(X));
}

Matrix haar_q(Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  Matrix G(n, n);
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < n; ++i) G(i, j) = gauss(rng);
  Eigen::HouseholderQR<Matrix> qr(G);
  Matrix Q = qr.householderQ();
  Matrix R = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Index j = 0; j < n; ++j)
    if (R(j, j) < 0) Q.col(j) *= -1.0;
  return Q;
}

}  // namespace

TEST_CASE("batch_pca recovers axis-aligned principal directions") {
  DataMatrix X = axis_dataset({3.0, 2.0, 1.0}, 5);
  ProjectionBasis basis = batch_pca(X, 2);

  CHECK(basis.c() == 2);
  CHECK(basis.d() == 5);
  CHECK(basis.orthonormality_error() < 1e-10);

  // Rows should be e_0 and e_1 with positive leading entries, in that order.
  Matrix expected = Matrix::Zero(2, 5);
  expected(0, 0) = 1.0;
  expected(1, 1) = 1.0;
  CHECK((basis.rows() - expected).norm() < 1e-8);
}

TEST_CASE("batch_pca is invariant to rotating the data") {
  DataMatrix X = axis_dataset({5.0, 3.0, 1.0, 0.5}, 8);
  Matrix Q = haar_q(8, 21);
  DataMatrix rotated(Matrix(Q * X.values));

  ProjectionBasis plain = batch_pca(X, 2);
  ProjectionBasis turned = batch_pca(rotated, 2);

  // The projected subspace should rotate along with the data.
  ProjectionBasis expected(Matrix(plain.rows() * Q.transpose()), 1e-8);
  Vector angles = principal_angles(turned, expected);
  CHECK(angles.maxCoeff() < 1e-7);
}

TEST_CASE("batch_pca captures the dominant variance") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> gauss;
  const Index d = 12, n = 4000, c = 3;
  Vector stddev(d);
  for (Index i = 0; i < d; ++i) stddev[i] = std::pow(0.7, double(i)) * 4.0;
  Matrix X(d, n);
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < d; ++i) X(i, j) = stddev[i] * gauss(rng);
  X.colwise() -= Vector(X.rowwise().mean());

  ProjectionBasis basis = batch_pca(DataMatrix(X), c);

  // Cross-check against a dense eigensolver on the sample covariance.
  Matrix sigma = X * X.transpose() / double(n);
  Eigen::SelfAdjointEigenSolver<Matrix> es(sigma);
  double top_sum = 0.0;
  for (Index j = 0; j < c; ++j) top_sum += es.eigenvalues()[d - 1 - j];
  double captured = (basis.rows() * sigma * basis.rows().transpose()).trace();
  CHECK(captured == Catch::Approx(top_sum).epsilon(1e-9));

  Matrix top_vectors(c, d);
  for (Index j = 0; j < c; ++j)
    top_vectors.row(j) = es.eigenvectors().col(d - 1 - j).transpose();
  Vector angles =
      principal_angles(basis, ProjectionBasis(std::move(top_vectors), 1e-8));
  CHECK(angles.maxCoeff() < 1e-6);
}

TEST_CASE("batch_pca determinism and duplicated data") {
  DataMatrix X = axis_dataset({4.0, 2.0, 1.0}, 6);
  ProjectionBasis a = batch_pca(X, 3);
  ProjectionBasis b = batch_pca(X, 3);
  CHECK(a.rows() == b.rows());  // bitwise: fixed internal start, same sweeps

  Matrix doubled(6, 2 * X.n());
  doubled << X.values, X.values;
  ProjectionBasis dup = batch_pca(DataMatrix(std::move(doubled)), 3);
  CHECK((a.rows() - dup.rows()).norm() < 1e-9);
}

TEST_CASE("batch_pca input validation") {
  DataMatrix X = axis_dataset({3.0, 1.0}, 4);

  CHECK_THROWS_AS(batch_pca(X, 0), std::invalid_argument);
  CHECK_THROWS_AS(batch_pca(X, 5), std::invalid_argument);   // c > d
  CHECK_THROWS_AS(batch_pca(axis_dataset({1.0}, 8), 3),
                  std::invalid_argument);                     // c > n

  SECTION("uncentered data is rejected") {
    Matrix shifted = X.values;
    shifted.array() += 5.0;
    CHECK_THROWS_WITH(batch_pca(DataMatrix(std::move(shifted)), 2),
                      Catch::Matchers::ContainsSubstring("center"));
  }

  SECTION("rank-deficient covariance names the dead directions") {
    // Data spans only two directions but three are requested.
    CHECK_THROWS_WITH(batch_pca(X, 3),
                      Catch::Matchers::ContainsSubstring("deficient"));
  }
}

TEST_CASE("OpastTracker keeps orthonormal columns through noisy updates") {
  const Index d = 20, c = 3;
  std::mt19937_64 rng(derive_seed(3, "opast_ortho"));
  std::normal_distribution<double> gauss;

  OpastTracker tracker(d, c, 0.98);
  CHECK(tracker.basis_columns() == Matrix::Identity(d, c));

  Vector x(d);
  for (int t = 0; t < 500; ++t) {
    for (Index i = 0; i < d; ++i) x[i] = gauss(rng);
    tracker.update(x);
    ProjectionBasis basis = tracker.basis();  // ctor enforces 1e-6
    CHECK(basis.orthonormality_error() < 1e-9);
  }
  CHECK(tracker.steps() == 500);
}

TEST_CASE("OpastTracker basis change matches I + tau g g^T") {
  const Index d = 15, c = 4;
  std::mt19937_64 rng(derive_seed(9, "opast_step"));
  std::normal_distribution<double> gauss;
  OpastTracker tracker(d, c, 0.95);

  Vector x(d);
  for (int t = 0; t < 50; ++t) {
    for (Index i = 0; i < d; ++i) x[i] = gauss(rng);
    Matrix before = tracker.basis_columns();
    OpastTracker::StepInfo info = tracker.update(x);
    REQUIRE(info.moved);
    Matrix T = Matrix::Identity(c, c) +
               info.tau * info.g * info.g.transpose();
    CHECK((before.transpose() * tracker.basis_columns() - T).norm() < 1e-12);
  }
}

TEST_CASE("OpastTracker ignores zero samples") {
  OpastTracker tracker(6, 2, 1.0);
  Matrix before = tracker.basis_columns();
  OpastTracker::StepInfo info = tracker.update(Vector::Zero(6));
  CHECK_FALSE(info.moved);
  CHECK(tracker.basis_columns() == before);
  CHECK(tracker.steps() == 1);  // the sample still counts
}

TEST_CASE("OpastTracker converges to a repeated direction") {
  const Index d = 8;
  Vector x(d);
  x << 2, -1, 3, 0.5, -2, 1, 0, 4;
  Vector unit = x / x.norm();

  OpastTracker tracker(d, 1, 1.0);
  for (int t = 0; t < 100; ++t) tracker.update(x);

  double cosine = std::abs(unit.dot(tracker.basis_columns().col(0)));
  CHECK(std::acos(std::clamp(cosine, 0.0, 1.0)) < 0.05);
}

TEST_CASE("OpastTracker tracks a planted subspace") {
  const Index d = 10, c = 2;
  std::mt19937_64 rng(derive_seed(4, "opast_track"));
  std::normal_distribution<double> gauss;
  Vector stddev = Vector::Ones(d) * 0.3;
  stddev[0] = 5.0;
  stddev[1] = 3.0;

  OpastTracker tracker(d, c, 0.99);
  Vector x(d);
  for (int t = 0; t < 3000; ++t) {
    for (Index i = 0; i < d; ++i) x[i] = stddev[i] * gauss(rng);
    tracker.update(x);
  }

  Matrix truth = Matrix::Zero(c, d);
  truth(0, 0) = 1.0;
  truth(1, 1) = 1.0;
  Vector angles =
      principal_angles(tracker.basis(), ProjectionBasis(std::move(truth)));
  CHECK(angles.maxCoeff() < 0.1);
}

TEST_CASE("OpastTracker validates its inputs") {
  CHECK_THROWS_AS(OpastTracker(3, 0), std::invalid_argument);
  CHECK_THROWS_AS(OpastTracker(3, 4), std::invalid_argument);
  CHECK_THROWS_AS(OpastTracker(3, 2, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(OpastTracker(3, 2, 1.5), std::invalid_argument);
  CHECK_NOTHROW(OpastTracker(3, 2, 1.0));

  OpastTracker tracker(3, 2);
  CHECK_THROWS_AS(tracker.update(Vector::Zero(4)), std::invalid_argument);
  Vector bad(3);
  bad << 1.0, std::numeric_limits<double>::quiet_NaN(), 0.0;
  CHECK_THROWS_AS(tracker.update(bad), std::invalid_argument);
}

TEST_CASE("opast_update wrapper equals the member update") {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> gauss;
  Vector x(5);
  for (Index i = 0; i < 5; ++i) x[i] = gauss(rng);

  OpastTracker member(5, 2, 0.9);
  member.update(x);
  OpastTracker wrapped = opast_update(OpastTracker(5, 2, 0.9), x);
  CHECK(member.basis_columns() == wrapped.basis_columns());
  CHECK(member.gain() == wrapped.gain());
}

TEST_CASE("principal_angles on hand-built subspaces") {
  Matrix e1 = Matrix::Zero(1, 3);
  e1(0, 0) = 1.0;
  Matrix e2 = Matrix::Zero(1, 3);
  e2(0, 1) = 1.0;
  Matrix diag = Matrix::Zero(1, 3);
  diag(0, 0) = diag(0, 1) = 1.0 / std::sqrt(2.0);

  ProjectionBasis b1{Matrix(e1)}, b2{Matrix(e2)}, bd{Matrix(diag)};
  CHECK(principal_angles(b1, b1)[0] == Catch::Approx(0.0).margin(1e-12));
  CHECK(principal_angles(b1, b2)[0] == Catch::Approx(M_PI / 2));
  CHECK(principal_angles(b1, bd)[0] == Catch::Approx(M_PI / 4));

  SECTION("shared direction plus an orthogonal pair") {
    Matrix a = Matrix::Zero(2, 4);
    a(0, 0) = 1.0;
    a(1, 1) = 1.0;
    Matrix b = Matrix::Zero(2, 4);
    b(0, 0) = 1.0;
    b(1, 2) = 1.0;
    Vector angles = principal_angles(ProjectionBasis(std::move(a)),
                                     ProjectionBasis(std::move(b)));
    CHECK(angles[0] == Catch::Approx(0.0).margin(1e-12));
    CHECK(angles[1] == Catch::Approx(M_PI / 2));
  }

  SECTION("shape and orthonormality are checked") {
    CHECK_THROWS_AS(principal_angles(b1, ProjectionBasis(Matrix::Identity(2, 3))),
                    std::invalid_argument);
    ProjectionBasis sloppy = ProjectionBasis::trusted(2.0 * e1);
    CHECK_THROWS_AS(principal_angles(sloppy, b1), std::invalid_argument);
  }
}
