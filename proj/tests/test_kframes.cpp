#include <gtest/gtest.h>

#include "kfusion/errors.hpp"
#include "kfusion/harness.hpp"
#include "kfusion/kframes.hpp"
#include "oracles.hpp"

using namespace kfusion;

namespace {

const Tolerances tol;

Matrix diag(std::initializer_list<double> d) {
  Matrix m = Matrix::Zero(d.size(), d.size());
  Index i = 0;
  for (double x : d) m(i, i) = x, ++i;
  return m;
}

}  // namespace

TEST(KFrame, StandardBasisIsParseval) {
  const auto a = kframe_analyze(VectorFamily::single(Matrix::Identity(2, 2)), RangedOperator(diag({1, 1}), tol), tol);
  EXPECT_NEAR(a.lower_bound, 1.0, 1e-14);
  EXPECT_NEAR(a.upper_bound, 1.0, 1e-14);
  EXPECT_TRUE(a.is_kframe);
}

TEST(KFrame, RankOneAlignment) {
  const auto a = kframe_analyze(VectorFamily::single(Matrix(Matrix::Identity(2, 2).col(0))),
                                RangedOperator(diag({1, 0}), tol), tol);
  EXPECT_NEAR(a.lower_bound, 1.0, 1e-14);
  EXPECT_NEAR(a.upper_bound, 1.0, 1e-14);
  EXPECT_TRUE(a.is_kframe);
}

TEST(KFrame, MisalignedRankOneFails) {
  const auto a = kframe_analyze(VectorFamily::single(Matrix(Matrix::Identity(2, 2).col(1))),
                                RangedOperator(diag({1, 0}), tol), tol);
  EXPECT_FALSE(a.is_kframe);
  EXPECT_THROW(restricted_inverse_vec(VectorFamily::single(Matrix(Matrix::Identity(2, 2).col(1))),
                                      RangedOperator(diag({1, 0}), tol), tol),
               NotKFrameError);
}

TEST(KFrame, SeededBoundsMatchOracles) {
  const Matrix f = oracle::gauss(4, 6, 61);
  const Matrix k = oracle::gauss(4, 2, 62) * oracle::gauss(2, 4, 63);
  const RangedOperator kr(k, tol);
  const auto a = kframe_analyze(VectorFamily::single(f), kr, tol);
  const Matrix s = f * f.adjoint();
  const double closed = oracle::lower_bound_sqrt(s, k);
  EXPECT_NEAR(a.lower_bound, closed, 1e-9 * closed);
  // Sampled Rayleigh minimum over the reduced pencil never drops below A.
  const double sampled = oracle_rayleigh_min(s, k * k.adjoint(), kr.range_basis(), 100000, 99);
  EXPECT_GE(sampled, a.lower_bound * (1 - 1e-9));
  EXPECT_LE(sampled - a.lower_bound, 1e-6 * a.lower_bound);
  EXPECT_NEAR(a.upper_bound, oracle::spectral(s), 1e-12 * a.upper_bound);
}

TEST(KFrame, ZeroKIsVacuous) {
  const auto a = kframe_analyze(VectorFamily::single(oracle::gauss(3, 1, 64)), RangedOperator(Matrix::Zero(3, 3), tol),
                                tol);
  EXPECT_TRUE(a.vacuous);
  EXPECT_TRUE(a.is_kframe);
}

TEST(RestrictedInverse, ParsevalIdentity) {
  const Matrix q = oracle::gauss(3, 3, 65).householderQr().householderQ();
  const Matrix d = restricted_inverse_vec(VectorFamily::single(q), RangedOperator(Matrix::Identity(3, 3), tol), tol);
  EXPECT_LE((d - Matrix::Identity(3, 3)).norm(), 1e-12);
}

TEST(RestrictedInverse, OneDimensionalRange) {
  const Matrix d = restricted_inverse_vec(VectorFamily::single(Matrix(Matrix::Identity(2, 2).col(0))),
                                          RangedOperator(diag({1, 0}), tol), tol);
  EXPECT_LE((d - diag({1, 0})).norm(), 1e-14);
}

TEST(RestrictedInverse, SeededIdentityAndSandwich) {
  const Matrix f = oracle::gauss(5, 6, 66);
  const Matrix k = oracle::gauss(5, 3, 67) * oracle::gauss(3, 5, 68);
  const RangedOperator kr(k, tol);
  const Matrix s = frame_operator_of(f);
  const Matrix d = restricted_inverse_vec(VectorFamily::single(f), kr, tol);
  EXPECT_LE((d - oracle::restricted_inverse(s, k)).norm() / d.norm(), 1e-9);
  const Matrix u = kr.range_basis() * oracle::gauss(3, 100, 69);
  double worst = 0;
  for (Index j = 0; j < u.cols(); ++j) worst = std::max(worst, (d * s * u.col(j) - u.col(j)).norm() / u.col(j).norm());
  EXPECT_LE(worst, 1e-9);
  // ||f||^2 / B <= <D f, f> <= ||K^dagger||^2 ||f||^2 / A  on f = S u.
  const auto a = kframe_analyze(VectorFamily::single(f), kr, tol);
  for (Index j = 0; j < u.cols(); ++j) {
    const Vector g = s * u.col(j);
    const double q = (g.adjoint() * d * g)(0).real();
    EXPECT_GE(q - g.squaredNorm() / a.upper_bound, -1e-9 * g.squaredNorm());
    EXPECT_LE(q - kr.pinv_norm() * kr.pinv_norm() * g.squaredNorm() / a.lower_bound, 1e-9 * g.squaredNorm());
  }
}

TEST(CanonicalDual, SelfDualOnb) {
  const Matrix q = oracle::gauss(3, 3, 70).householderQr().householderQ();
  const VectorFamily g = canonical_kdual_vec(VectorFamily::single(q), RangedOperator(Matrix::Identity(3, 3), tol), tol);
  EXPECT_LE((g.flat() - q).norm(), 1e-12);
}

TEST(CanonicalDual, HandEvaluated) {
  const VectorFamily g =
      canonical_kdual_vec(VectorFamily::single(Matrix::Identity(2, 2)), RangedOperator(diag({1, 0}), tol), tol);
  EXPECT_LE((g.flat() - diag({1, 0})).norm(), 1e-14);
}

TEST(CanonicalDual, SeededResidual) {
  const Matrix f = oracle::gauss(4, 7, 71);
  const Matrix k = oracle::gauss(4, 2, 72) * oracle::gauss(2, 4, 73);
  const RangedOperator kr(k, tol);
  const VectorFamily ff(4, {f.leftCols(3), f.rightCols(4)});
  const VectorFamily g = canonical_kdual_vec(ff, kr, tol);
  EXPECT_LE(verify_kdual_vec(ff, g, kr), 1e-9);
  // Independent: K = P_{R(K)} F G* straight from the normal-equation D.
  const Matrix d = oracle::restricted_inverse(f * f.adjoint(), k);
  const Matrix gd = k.adjoint() * d * f;
  EXPECT_LE((oracle::svd_projector(k) * f * gd.adjoint() - k).norm() / k.norm(), 1e-9);
  EXPECT_LE((g.flat() - gd).norm() / gd.norm(), 1e-9);
}

TEST(VerifyDual, OnbAndZero) {
  const VectorFamily e = VectorFamily::single(Matrix::Identity(3, 3));
  const RangedOperator i(Matrix::Identity(3, 3), tol);
  EXPECT_LE(verify_kdual_vec(e, e, i), 1e-15);
  EXPECT_NEAR(verify_kdual_vec(e, VectorFamily::single(Matrix::Zero(3, 3)), i), 1.0, 1e-15);
  EXPECT_THROW(verify_kdual_vec(e, e, RangedOperator(Matrix::Zero(3, 3), tol)), PreconditionError);
  EXPECT_THROW(verify_kdual_vec(e, VectorFamily::single(Matrix::Zero(3, 2)), i), PreconditionError);
}

TEST(CanonicalDual, ClassicalInSpan) {
  const Matrix f = oracle::gauss(4, 2, 74) * oracle::gauss(2, 5, 75);
  const Matrix g = canonical_dual_in_span(f, tol);
  // F G* is the projector onto span(F).
  EXPECT_LE((f * g.adjoint() - oracle::svd_projector(f)).norm(), 1e-10);
}
