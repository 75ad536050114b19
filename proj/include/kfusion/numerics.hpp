#pragma once

// Dense linear-algebra substrate: adjoints, rank decisions, range bases,
// pseudo-inverses, projectors, the Douglas range-inclusion test and the
// Schur-complement pencil bound shared by the frame modules.

#include <complex>
#include <optional>

#include <Eigen/Dense>

namespace kfusion {

using Scalar = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;
using Index = Eigen::Index;

enum class Field { real, complex };

struct Tolerances {
  /// Singular values below rank_rel * sigma_max count as zero.
  double rank_rel = 1e-10;
  /// Relative Frobenius threshold for equality checks.
  double residual_rel = 1e-8;

  /// Throws ValidationError unless both are positive and rank_rel < 1.
  void validate() const;
};

bool all_finite(const Matrix& m);

/// Largest singular value; 0 for empty matrices.
double spectral_norm(const Matrix& m);

/// Smallest singular value (min(rows, cols) of them); 0 for empty matrices.
double smallest_singular_value(const Matrix& m);

/// ||a - b||_F / ||b||_F. Throws PreconditionError when b vanishes.
double relative_residual(const Matrix& a, const Matrix& b);

/// (M + M*) / 2
Matrix hermitian_part(const Matrix& m);

/// Number of singular values above tol.rank_rel * sigma_max.
Index numerical_rank(const Matrix& m, const Tolerances& tol);

/// Orthonormal basis (n x r) of the column space of m at the rank decision
/// tol.rank_rel. A zero matrix yields an n x 0 basis.
Matrix orthonormal_range_basis(const Matrix& m, const Tolerances& tol);

/// Orthonormal basis of the orthogonal complement of span(basis) in C^n;
/// basis must have orthonormal columns.
Matrix orthogonal_complement(const Matrix& basis);

/// U U* for an orthonormal basis U.
Matrix projector(const Matrix& basis);

/// ||(I - U U*) vectors||_F for an orthonormal basis U.
double membership_residual(const Matrix& vectors, const Matrix& basis);

/// Moore-Penrose inverse at the rank decision tol.rank_rel.
Matrix pseudo_inverse(const Matrix& m, const Tolerances& tol);

/// Pseudo-inverse of a Hermitian PSD matrix via its eigendecomposition,
/// eigenvalues at or below `cutoff` treated as zero.
Matrix hermitian_pseudo_inverse(const Matrix& h, double cutoff);

/// An operator K together with its numerically determined range R(K),
/// coimage R(K*), pseudo-inverse K^dagger and ||K^dagger||.
class RangedOperator {
 public:
  RangedOperator(Matrix op, const Tolerances& tol);

  const Matrix& op() const { return op_; }
  /// n x r, orthonormal columns spanning R(K).
  const Matrix& range_basis() const { return range_basis_; }
  /// Orthonormal columns spanning R(K*) = R(K^dagger).
  const Matrix& corange_basis() const { return corange_basis_; }
  const Matrix& pinv() const { return pinv_; }
  /// 1 / smallest nonzero singular value; 0 when K = 0.
  double pinv_norm() const { return pinv_norm_; }
  double norm() const { return norm_; }
  Index rank() const { return range_basis_.cols(); }
  Index dim() const { return op_.rows(); }
  bool is_zero() const { return rank() == 0; }
  Matrix range_projector() const { return projector(range_basis_); }
  const Tolerances& tolerances() const { return tol_; }

  RangedOperator adjoint() const { return RangedOperator(op_.adjoint(), tol_); }

 private:
  Matrix op_;
  Matrix range_basis_;
  Matrix corange_basis_;
  Matrix pinv_;
  double pinv_norm_ = 0.0;
  double norm_ = 0.0;
  Tolerances tol_;
};

struct DouglasResult {
  bool holds = false;
  /// X = L2^dagger L1 when holds.
  std::optional<Matrix> factor;
  /// Smallest lambda with L1 L1* <= lambda^2 L2 L2*, when holds.
  std::optional<double> lambda;
  /// (i) ||(I - P_{R(L2)}) L1||_F / ||L1||_F
  double inclusion_residual = 0.0;
  /// (ii) sqrt(lambda_max(Q* L1 L1* Q)) / ||L1||, Q spanning R(L2)^perp
  double offrange_residual = 0.0;
  /// (iii) ||L2 X - L1||_F / ||L1||_F
  double factor_residual = 0.0;
};

/// Evaluates the three equivalent range-inclusion criteria for R(L1) in R(L2).
/// Throws DiagnosticError when they disagree.
DouglasResult douglas_check(const Matrix& l1, const Matrix& l2, const Tolerances& tol);

struct LowerBound {
  /// inf <S f, f> / ||K* f||^2 over f outside ker K*; +inf when K = 0.
  double value = 0.0;
  /// K = 0: the lower inequality is vacuous.
  bool vacuous = false;
  /// Unit vector attaining the infimum (empty when vacuous).
  Vector witness;
};

/// Optimal lower bound of the pencil (S, K K*) reduced to R(K) by the PSD
/// Schur complement over the split f = u + v, u in R(K), v in R(K)^perp.
LowerBound pencil_lower_bound(const Matrix& s, const RangedOperator& k, const Tolerances& tol);

/// Eigenvalues of a Hermitian matrix, ascending.
Eigen::VectorXd hermitian_eigenvalues(const Matrix& h);

}  // namespace kfusion
