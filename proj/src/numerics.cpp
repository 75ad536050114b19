#include "kfusion/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "kfusion/errors.hpp"

namespace kfusion {

namespace {

using Svd = Eigen::JacobiSVD<Matrix>;

Svd thin_svd(const Matrix& m) { return Svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV); }

Index rank_from_singular_values(const Eigen::VectorXd& sv, double rank_rel) {
  if (sv.size() == 0 || sv(0) == 0.0) return 0;
  const double cutoff = rank_rel * sv(0);
  Index r = 0;
  while (r < sv.size() && sv(r) > cutoff) ++r;
  return r;
}

}  // namespace

void Tolerances::validate() const {
  if (!(rank_rel > 0.0) || !(rank_rel < 1.0) || !std::isfinite(rank_rel)) {
    throw ValidationError("tolerance rank_rel must lie in (0, 1)");
  }
  if (!(residual_rel > 0.0) || !std::isfinite(residual_rel)) {
    throw ValidationError("tolerance residual_rel must be positive");
  }
}

bool all_finite(const Matrix& m) {
  for (Index j = 0; j < m.cols(); ++j) {
    for (Index i = 0; i < m.rows(); ++i) {
      if (!std::isfinite(m(i, j).real()) || !std::isfinite(m(i, j).imag())) return false;
    }
  }
  return true;
}

double spectral_norm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Svd svd(m);
  return svd.singularValues()(0);
}

double smallest_singular_value(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Svd svd(m);
  return svd.singularValues()(svd.singularValues().size() - 1);
}

double relative_residual(const Matrix& a, const Matrix& b) {
  const double denom = b.norm();
  if (denom == 0.0) throw PreconditionError("relative residual undefined: reference operator is zero");
  return (a - b).norm() / denom;
}

Matrix hermitian_part(const Matrix& m) { return 0.5 * (m + m.adjoint()); }

Index numerical_rank(const Matrix& m, const Tolerances& tol) {
  if (m.size() == 0) return 0;
  Svd svd(m);
  return rank_from_singular_values(svd.singularValues(), tol.rank_rel);
}

Matrix orthonormal_range_basis(const Matrix& m, const Tolerances& tol) {
  if (m.size() == 0 || m.norm() == 0.0) return Matrix(m.rows(), 0);
  const Svd svd = thin_svd(m);
  const Index r = rank_from_singular_values(svd.singularValues(), tol.rank_rel);
  return svd.matrixU().leftCols(r);
}

Matrix orthogonal_complement(const Matrix& basis) {
  const Index n = basis.rows();
  const Index r = basis.cols();
  if (r == 0) return Matrix::Identity(n, n);
  if (r >= n) return Matrix(n, 0);
  Eigen::HouseholderQR<Matrix> qr(basis);
  Matrix q = qr.householderQ() * Matrix::Identity(n, n);
  return q.rightCols(n - r);
}

Matrix projector(const Matrix& basis) { return basis * basis.adjoint(); }

double membership_residual(const Matrix& vectors, const Matrix& basis) {
  return (vectors - basis * (basis.adjoint() * vectors)).norm();
}

Matrix pseudo_inverse(const Matrix& m, const Tolerances& tol) {
  if (m.size() == 0 || m.norm() == 0.0) return Matrix::Zero(m.cols(), m.rows());
  const Svd svd = thin_svd(m);
  const auto& sv = svd.singularValues();
  const Index r = rank_from_singular_values(sv, tol.rank_rel);
  const Eigen::VectorXd inv = sv.head(r).cwiseInverse();
  return svd.matrixV().leftCols(r) * inv.asDiagonal() * svd.matrixU().leftCols(r).adjoint();
}

Matrix hermitian_pseudo_inverse(const Matrix& h, double cutoff) {
  if (h.size() == 0) return h;
  Eigen::SelfAdjointEigenSolver<Matrix> es(hermitian_part(h));
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(h.rows());
  for (Index i = 0; i < h.rows(); ++i) {
    if (es.eigenvalues()(i) > cutoff) inv(i) = 1.0 / es.eigenvalues()(i);
  }
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().adjoint();
}

Eigen::VectorXd hermitian_eigenvalues(const Matrix& h) {
  if (h.size() == 0) return Eigen::VectorXd(0);
  Eigen::SelfAdjointEigenSolver<Matrix> es(hermitian_part(h), Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

RangedOperator::RangedOperator(Matrix op, const Tolerances& tol) : op_(std::move(op)), tol_(tol) {
  if (op_.rows() != op_.cols()) throw ValidationError("operator K must be square");
  if (!all_finite(op_)) throw ValidationError("operator K has non-finite entries");
  const Index n = op_.rows();
  if (n == 0 || op_.norm() == 0.0) {
    range_basis_ = Matrix(n, 0);
    corange_basis_ = Matrix(n, 0);
    pinv_ = Matrix::Zero(n, n);
    return;
  }
  const Svd svd = thin_svd(op_);
  const auto& sv = svd.singularValues();
  const Index r = rank_from_singular_values(sv, tol.rank_rel);
  range_basis_ = svd.matrixU().leftCols(r);
  corange_basis_ = svd.matrixV().leftCols(r);
  const Eigen::VectorXd inv = sv.head(r).cwiseInverse();
  pinv_ = corange_basis_ * inv.asDiagonal() * range_basis_.adjoint();
  norm_ = sv(0);
  pinv_norm_ = r > 0 ? 1.0 / sv(r - 1) : 0.0;
}

DouglasResult douglas_check(const Matrix& l1, const Matrix& l2, const Tolerances& tol) {
  if (l1.rows() != l2.rows()) throw PreconditionError("douglas_check: L1 and L2 need the same row count");
  DouglasResult out;
  const double l1_fro = l1.norm();
  if (l1_fro == 0.0) {
    out.holds = true;
    out.factor = Matrix::Zero(l2.cols(), l1.cols());
    out.lambda = 0.0;
    return out;
  }
  const double l1_spec = spectral_norm(l1);

  // (i) column-space membership
  const Matrix u2 = orthonormal_range_basis(l2, tol);
  out.inclusion_residual = membership_residual(l1, u2) / l1_fro;
  const bool inclusion = out.inclusion_residual <= tol.residual_rel;

  // (ii) L1 L1* <= lambda^2 L2 L2*: lambda from the pencil on R(L2); off R(L2)
  // the inequality reads Q* L1 L1* Q <= 0.
  const Matrix q2 = orthogonal_complement(u2);
  if (q2.cols() > 0) {
    const Matrix e = hermitian_part(q2.adjoint() * l1 * l1.adjoint() * q2);
    const double top = std::max(0.0, hermitian_eigenvalues(e).maxCoeff());
    out.offrange_residual = std::sqrt(top) / l1_spec;
  }
  const bool operator_inequality = u2.cols() > 0 && out.offrange_residual <= tol.residual_rel;
  std::optional<double> lambda;
  if (u2.cols() > 0) {
    const Matrix g = hermitian_part(u2.adjoint() * l2 * l2.adjoint() * u2);
    const Matrix a = hermitian_part(u2.adjoint() * l1 * l1.adjoint() * u2);
    Eigen::SelfAdjointEigenSolver<Matrix> gs(g);
    const Eigen::VectorXd g_inv_sqrt = gs.eigenvalues().cwiseMax(0.0).cwiseSqrt().cwiseInverse();
    const Matrix g_half_inv = gs.eigenvectors() * g_inv_sqrt.asDiagonal() * gs.eigenvectors().adjoint();
    const double top = hermitian_eigenvalues(g_half_inv * a * g_half_inv).maxCoeff();
    lambda = std::sqrt(std::max(0.0, top));
  }

  // (iii) factorization L1 = L2 X
  Matrix x = pseudo_inverse(l2, tol) * l1;
  out.factor_residual = (l2 * x - l1).norm() / l1_fro;
  const bool factorization = out.factor_residual <= tol.residual_rel;

  if (inclusion != factorization || operator_inequality != factorization) {
    std::ostringstream msg;
    msg << "douglas_check: criteria disagree (inclusion residual " << out.inclusion_residual
        << ", off-range residual " << out.offrange_residual << ", factor residual " << out.factor_residual
        << ", threshold " << tol.residual_rel << ")";
    throw DiagnosticError(msg.str());
  }
  out.holds = factorization;
  if (out.holds) {
    out.factor = std::move(x);
    out.lambda = lambda;
  }
  return out;
}

LowerBound pencil_lower_bound(const Matrix& s, const RangedOperator& k, const Tolerances& tol) {
  LowerBound out;
  if (k.is_zero()) {
    out.value = std::numeric_limits<double>::infinity();
    out.vacuous = true;
    return out;
  }
  const Index n = s.rows();
  const Matrix sh = hermitian_part(s);
  const double s_norm = std::max(0.0, hermitian_eigenvalues(sh).maxCoeff());
  const Matrix& u = k.range_basis();
  const Matrix q = orthogonal_complement(u);

  Matrix schur = hermitian_part(u.adjoint() * sh * u);
  Matrix v_correction;  // maps u-coordinates to the minimizing v-coordinates
  bool proviso = true;
  if (q.cols() > 0) {
    const Matrix s_uv = u.adjoint() * sh * q;
    const Matrix s_vv = hermitian_part(q.adjoint() * sh * q);
    const Matrix s_vv_pinv = hermitian_pseudo_inverse(s_vv, tol.rank_rel * s_norm);
    // R(S_vu) must lie in R(S_vv); automatic for PSD S up to rounding.
    const Matrix s_vu = s_uv.adjoint();
    const double leak = (s_vu - s_vv * (s_vv_pinv * s_vu)).norm();
    proviso = leak <= std::sqrt(tol.rank_rel) * std::max(s_norm, 1.0);
    v_correction = -s_vv_pinv * s_vu;
    schur = hermitian_part(schur + s_uv * v_correction);
  }

  const Matrix ku = k.op().adjoint() * u;
  Eigen::SelfAdjointEigenSolver<Matrix> gs(hermitian_part(ku.adjoint() * ku));
  const Eigen::VectorXd g_eval = gs.eigenvalues();
  const Matrix g_half_inv = gs.eigenvectors() * g_eval.cwiseSqrt().cwiseInverse().asDiagonal() *
                            gs.eigenvectors().adjoint();
  Eigen::SelfAdjointEigenSolver<Matrix> ps(hermitian_part(g_half_inv * schur * g_half_inv));
  double value = ps.eigenvalues()(0);
  // Zero decision on the Schur complement itself: conditioning by K*K would
  // amplify its rounding by 1/sigma_min(K)^2.
  const double schur_min = hermitian_eigenvalues(schur).minCoeff();
  if (!proviso || schur_min <= tol.rank_rel * s_norm || s_norm == 0.0) value = 0.0;
  out.value = value;

  const Vector y = g_half_inv * ps.eigenvectors().col(0);
  Vector f = u * y;
  if (q.cols() > 0) f += q * (v_correction * y);
  const double fn = f.norm();
  out.witness = fn > 0.0 ? Vector(f / fn) : Vector(Vector::Zero(n));
  return out;
}

}  // namespace kfusion
