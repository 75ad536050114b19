#include "kfusion/kframes.hpp"

#include <sstream>

#include "kfusion/errors.hpp"

namespace kfusion {

namespace {

VectorFamily regroup_like(const VectorFamily& shape, const Matrix& flat) {
  std::vector<Matrix> groups;
  Index at = 0;
  for (const auto& g : shape.groups()) {
    groups.push_back(flat.middleCols(at, g.cols()));
    at += g.cols();
  }
  return VectorFamily(flat.rows(), std::move(groups));
}

}  // namespace

Matrix frame_operator_of(const Matrix& vectors) { return hermitian_part(vectors * vectors.adjoint()); }

KFrameAnalysis kframe_analyze(const VectorFamily& family, const RangedOperator& k, const Tolerances& tol) {
  if (family.ambient_dim() != k.dim()) throw PreconditionError("kframe_analyze: family and K dimensions differ");
  if (family.size() == 0) throw PreconditionError("kframe_analyze: empty family");
  KFrameAnalysis out;
  out.frame_operator = frame_operator_of(family.flat());
  out.upper_bound = std::max(0.0, hermitian_eigenvalues(out.frame_operator).maxCoeff());
  const LowerBound lb = pencil_lower_bound(out.frame_operator, k, tol);
  out.lower_bound = lb.value;
  out.vacuous = lb.vacuous;
  out.witness = lb.witness;
  out.is_kframe = lb.vacuous || lb.value > 0.0;
  return out;
}

Matrix restricted_inverse(const Matrix& frame_operator, const RangedOperator& k, const Tolerances& tol) {
  const Index n = frame_operator.rows();
  if (k.is_zero()) return Matrix::Zero(n, n);
  const Matrix& u = k.range_basis();
  const Matrix su = frame_operator * u;
  const Index r = numerical_rank(su, tol);
  if (r < u.cols()) {
    std::ostringstream msg;
    msg << "frame operator is not injective on R(K): rank " << r << " < " << u.cols();
    throw NotKFrameError(msg.str());
  }
  return u * pseudo_inverse(su, tol);
}

Matrix restricted_inverse_vec(const VectorFamily& family, const RangedOperator& k, const Tolerances& tol) {
  const KFrameAnalysis a = kframe_analyze(family, k, tol);
  if (!a.is_kframe) throw NotKFrameError("family is not a K-frame (optimal lower bound is 0)");
  return restricted_inverse(a.frame_operator, k, tol);
}

VectorFamily canonical_kdual_vec(const VectorFamily& family, const RangedOperator& k, const Tolerances& tol) {
  const Matrix d = restricted_inverse_vec(family, k, tol);
  return regroup_like(family, k.op().adjoint() * d * family.flat());
}

double verify_kdual_vec(const VectorFamily& f, const VectorFamily& g, const RangedOperator& k) {
  if (f.size() != g.size() || f.ambient_dim() != g.ambient_dim() || f.ambient_dim() != k.dim()) {
    throw PreconditionError("verify_kdual_vec: families must have equal cardinality and dimension");
  }
  if (k.is_zero()) throw PreconditionError("verify_kdual_vec: relative residual undefined for K = 0");
  const Matrix reproduced = k.range_projector() * f.flat() * g.flat().adjoint();
  return relative_residual(reproduced, k.op());
}

Matrix canonical_dual_in_span(const Matrix& vectors, const Tolerances& tol) {
  return pseudo_inverse(frame_operator_of(vectors), tol) * vectors;
}

}  // namespace kfusion
