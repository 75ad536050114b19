#pragma once

// Vector-level K-frames: optimal bounds, the frame operator inverted from
// R(K) onto S_F(R(K)), K-duals and the canonical K-dual.

#include "kfusion/numerics.hpp"
#include "kfusion/spaces.hpp"

namespace kfusion {

struct KFrameAnalysis {
  /// S_F = sum_i f_i f_i*, symmetrized.
  Matrix frame_operator;
  /// Largest A with A ||K* f||^2 <= <S_F f, f>; +inf when K = 0.
  double lower_bound = 0.0;
  /// lambda_max(S_F)
  double upper_bound = 0.0;
  bool is_kframe = false;
  /// K = 0: the lower inequality holds for every family.
  bool vacuous = false;
  /// Vector attaining the lower bound (empty when vacuous).
  Vector witness;
};

/// sum_i f_i f_i* over the columns, symmetrized.
Matrix frame_operator_of(const Matrix& vectors);

KFrameAnalysis kframe_analyze(const VectorFamily& family, const RangedOperator& k, const Tolerances& tol);

/// D = U (S U)^dagger with U a basis of R(K): the finite-dimensional
/// S^-1 pi_{S(R(K))}. Throws NotKFrameError when S loses rank on R(K).
Matrix restricted_inverse(const Matrix& frame_operator, const RangedOperator& k, const Tolerances& tol);

/// Restricted inverse of a vector family's frame operator. Throws
/// NotKFrameError unless the family is a K-frame.
Matrix restricted_inverse_vec(const VectorFamily& family, const RangedOperator& k, const Tolerances& tol);

/// {K* D_F f_i}, grouped like the input.
VectorFamily canonical_kdual_vec(const VectorFamily& family, const RangedOperator& k, const Tolerances& tol);

/// ||K - P_{R(K)} F G*||_F / ||K||_F. Throws PreconditionError when K = 0 or
/// the families do not match in shape.
double verify_kdual_vec(const VectorFamily& f, const VectorFamily& g, const RangedOperator& k);

/// Classical canonical dual {S^dagger f_i} of a frame for the span of its
/// vectors.
Matrix canonical_dual_in_span(const Matrix& vectors, const Tolerances& tol);

}  // namespace kfusion
