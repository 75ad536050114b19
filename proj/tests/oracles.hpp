#pragma once

// Reference computations for the tests. Each one takes a different route
// from the library: full Jacobi SVDs instead of the library's
// decompositions, normal equations instead of pseudo-inverses, LU ranks,
// and explicit sums over members.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;
using Index = Eigen::Index;

/// Seeded complex Gaussian matrix, independent of the library generator.
inline Matrix gauss(Index rows, Index cols, unsigned seed, bool real = false) {
  std::mt19937 gen(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = {nd(gen), real ? 0.0 : nd(gen)};
  return m;
}

inline Eigen::JacobiSVD<Matrix> jsvd(const Matrix& m) {
  return Eigen::JacobiSVD<Matrix>(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
}

inline Index svd_rank(const Matrix& m, double rel = 1e-10) {
  if (m.size() == 0) return 0;
  const auto s = jsvd(m).singularValues();
  if (s.size() == 0 || s(0) == 0.0) return 0;
  Index r = 0;
  for (Index i = 0; i < s.size(); ++i) r += s(i) > rel * s(0);
  return r;
}

/// Orthogonal projector onto the column space, from a full SVD.
inline Matrix svd_projector(const Matrix& m, double rel = 1e-10) {
  const Index r = svd_rank(m, rel);
  const Matrix u = jsvd(m).matrixU().leftCols(r);
  return u * u.adjoint();
}

/// A (A* A)^-1 A* for full column rank A.
inline Matrix normal_projector(const Matrix& a) {
  if (a.cols() == 0) return Matrix::Zero(a.rows(), a.rows());
  const Matrix g = a.adjoint() * a;
  return a * g.ldlt().solve(a.adjoint());
}

/// Rank through a fully pivoted LU with a relative threshold.
inline Index lu_rank(const Matrix& m, double rel = 1e-9) {
  Eigen::FullPivLU<Matrix> lu(m);
  lu.setThreshold(rel);
  return lu.rank();
}

/// R(l1) in R(l2) iff appending l1 does not raise the rank.
inline bool range_contains(const Matrix& l1, const Matrix& l2) {
  Matrix both(l2.rows(), l2.cols() + l1.cols());
  both << l2, l1;
  return lu_rank(both) == lu_rank(l2);
}

/// Largest mu with a x = mu b x, x in R(l2): the pencil (l1 l1*, l2 l2*)
/// reduced to R(l2) and solved through the Cholesky factor of the reduced b.
inline double pencil_max(const Matrix& l1, const Matrix& l2) {
  const Index r = svd_rank(l2);
  const Matrix q = jsvd(l2).matrixU().leftCols(r);
  const Matrix a = q.adjoint() * l1 * l1.adjoint() * q;
  const Matrix b = q.adjoint() * l2 * l2.adjoint() * q;
  const Eigen::LLT<Matrix> llt(b);
  const Matrix linv = llt.matrixL().solve(Matrix::Identity(r, r));
  const Matrix c = linv * a * linv.adjoint();
  return Eigen::SelfAdjointEigenSolver<Matrix>(0.5 * (c + c.adjoint())).eigenvalues().maxCoeff();
}

/// Largest A with A K K* <= S, as 1 / ||S^{dagger/2} K||^2; requires R(K) in R(S).
inline double lower_bound_sqrt(const Matrix& s, const Matrix& k) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (s + s.adjoint()));
  const auto& ev = es.eigenvalues();
  const double cut = 1e-10 * std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
  Eigen::VectorXd inv_sqrt(ev.size());
  for (Index i = 0; i < ev.size(); ++i) inv_sqrt(i) = ev(i) > cut ? 1.0 / std::sqrt(ev(i)) : 0.0;
  const Matrix root = es.eigenvectors() * inv_sqrt.cast<std::complex<double>>().asDiagonal() *
                      es.eigenvectors().adjoint();
  const double nrm = jsvd(root * k).singularValues()(0);
  return 1.0 / (nrm * nrm);
}

/// S^-1 pi_{S(R(K))} via normal equations on the image basis Y = S U.
inline Matrix restricted_inverse(const Matrix& s, const Matrix& k) {
  const Index r = svd_rank(k);
  const Matrix u = jsvd(k).matrixU().leftCols(r);
  const Matrix y = s * u;
  return u * (y.adjoint() * y).ldlt().solve(y.adjoint());
}

/// sum_i w_i^2 P_i over spanning sets.
inline Matrix fusion_frame_operator(const std::vector<Matrix>& spans, const std::vector<double>& weights) {
  const Index n = spans.front().rows();
  Matrix s = Matrix::Zero(n, n);
  for (std::size_t i = 0; i < spans.size(); ++i) s += weights[i] * weights[i] * svd_projector(spans[i]);
  return s;
}

inline double spectral(const Matrix& m) { return m.size() == 0 ? 0.0 : jsvd(m).singularValues()(0); }

inline double smallest_sv(const Matrix& m) { return jsvd(m).singularValues().minCoeff(); }

}  // namespace oracle
