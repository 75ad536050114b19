#pragma once

// K-fusion frames: analysis, reconstruction of R(K), the operator psi_wv,
// K-duality and the canonical K-dual, the local-frame theorems, image
// families KW and TW, and the projection lemma pi_V T* = pi_V T* pi_{TV}.

#include <optional>
#include <vector>

#include "kfusion/kframes.hpp"
#include "kfusion/numerics.hpp"
#include "kfusion/spaces.hpp"

namespace kfusion {

struct FusionAnalysis {
  /// n x sum(d_i), block columns w_i B_i.
  Matrix synthesis;
  /// S_W = sum_i w_i^2 P_{W_i}
  Matrix frame_operator;
  double lower_bound = 0.0;  ///< optimal A; +inf when K = 0
  double upper_bound = 0.0;  ///< optimal B = lambda_max(S_W)
  bool is_bessel = true;
  bool is_kfusion = false;
  bool vacuous = false;
  Vector witness;
  /// Restricted inverse S_W^-1 pi_{S_W(R(K))}, present when is_kfusion.
  std::optional<Matrix> restricted_inverse;
  DouglasResult douglas;

  /// Throws PreconditionError when the family is not a K-fusion frame.
  const Matrix& inverse() const;
};

/// Cross-checks is_kfusion against R(K) in R(T_W) and throws DiagnosticError
/// on disagreement.
FusionAnalysis fusion_analyze(const WeightedFamily& w, const RangedOperator& k, const Tolerances& tol);

struct Reconstruction {
  Vector kf_hat;
  double residual = 0.0;
};

/// Kf = sum_i w_i^2 P_{R(K)} P_{W_i} D* K f.
Reconstruction reconstruct(const WeightedFamily& w, const RangedOperator& k, const FusionAnalysis& analysis,
                           const Vector& f);

/// Denominator floor for relative reconstruction residuals,
/// max(||Kf||, kResidualFloor * ||K|| * ||f||).
inline constexpr double kResidualFloor = 1e-12;

struct PsiOperator {
  /// Block i: B_{W_i}* D* K B_{V_i}, a d_{W_i} x d_{V_i} matrix.
  std::vector<Matrix> blocks;
  /// Block diagonal, sum d_W x sum d_V; maps V-coordinates to W-coordinates.
  Matrix assembled;
};

PsiOperator psi_operator(const WeightedFamily& w, const WeightedFamily& v, const RangedOperator& k,
                         const FusionAnalysis& analysis_w);

struct DualityResiduals {
  double sum = 0.0;       ///< literal sum over i
  double factored = 0.0;  ///< P_{R(K)} T_W psi T_V*
};

DualityResiduals verify_kdual_fusion(const WeightedFamily& w, const WeightedFamily& v, const RangedOperator& k,
                                     const FusionAnalysis& analysis_w);

/// Residual of the hypothesis W_i in S_W(R(K)) for each member.
std::vector<double> canonical_dual_hypothesis(const WeightedFamily& w, const RangedOperator& k,
                                              const FusionAnalysis& analysis_w);

/// {(K* D W_i, w_i)}. Throws PreconditionError naming the first member that
/// violates W_i in S_W(R(K)).
WeightedFamily canonical_kdual_fusion(const WeightedFamily& w, const RangedOperator& k,
                                      const FusionAnalysis& analysis_w, const Tolerances& tol);

struct LowerBoundCheck {
  double predicted = 0.0;
  /// Smallest value of sum_i v_i^2 ||P_{V_i} f||^2 - predicted ||Kf||^2 over the battery.
  double min_slack = 0.0;
  bool holds = false;
};

/// Slack allowed in sampled inequalities.
inline constexpr double kInequalitySlack = 1e-9;

/// A K-dual V of W obeys sum v_i^2 ||P_{V_i} f||^2 >= ||Kf||^2 / (||D* K||^2 B_W).
/// The battery is `battery_size` seeded unit vectors plus eigenvector witnesses.
LowerBoundCheck kstar_lower_bound_check(const WeightedFamily& v, const WeightedFamily& w, const RangedOperator& k,
                                        const FusionAnalysis& analysis_w, const Tolerances& tol,
                                        Index battery_size = 200, std::uint64_t battery_seed = 0x5eedULL);

/// Smallest value of lhs(f) - predicted ||Kf||^2 where lhs(f) = sum v_i^2 ||P_{V_i} f||^2,
/// over the columns of `battery`.
double lower_inequality_slack(const WeightedFamily& v, const Matrix& k, double predicted, const Matrix& battery);

/// Battery for inequalities on the family V with respect to K: seeded unit
/// vectors, eigenvectors of S_V and of K K*, and the pencil witness.
Matrix inequality_battery(const WeightedFamily& v, const RangedOperator& k, const Tolerances& tol, Index count,
                          std::uint64_t seed);

struct LocalToGlobal {
  VectorFamily joined;
  std::vector<double> local_lower;
  std::vector<double> local_upper;
  KFrameAnalysis joined_analysis;
  FusionAnalysis fusion_analysis;
  bool equiv = false;
};

/// Joins local frames {f_ij} of each W_i into {w_i f_ij} and compares the
/// K-frame verdict with the K-fusion verdict of W.
LocalToGlobal local_to_global(const WeightedFamily& w, const VectorFamily& locals, const RangedOperator& k,
                              const Tolerances& tol);

/// Canonical duals {S_i^dagger f_ij} of each local frame inside W_i.
VectorFamily canonical_local_duals(const VectorFamily& locals, const Tolerances& tol);

struct LocalDualResult {
  double res1 = 0.0;
  double res2 = 0.0;
  /// Present when every local frame is Parseval: max_j ||K* D g_j - K* D_F f_j||
  /// relative to max_j ||K* D g_j||.
  std::optional<double> coincide;
};

/// Both K-duality identities built from local frames and their canonical
/// duals, measured on a battery of seeded vectors.
LocalDualResult local_dual_identities(const WeightedFamily& w, const RangedOperator& k, const VectorFamily& locals,
                                      const VectorFamily& local_duals, const Tolerances& tol,
                                      Index battery_size = 200, std::uint64_t battery_seed = 0x10ca1ULL);

enum class MapMode { KW, TK };

struct MappedFamily {
  WeightedFamily mapped;
  /// Operator the mapped family is tested against (K, or T K).
  Matrix target;
  FusionAnalysis check;
};

/// KW mode: W must be a fusion frame for R(K^dagger) with W_i in R(K^dagger);
/// returns {(K W_i, w_i)} analysed against K. TK mode: W must be a K-fusion
/// frame with W_i in R((TK)^dagger); returns {(T W_i, w_i)} analysed against TK.
MappedFamily map_family(const Matrix& t, const WeightedFamily& w, const RangedOperator& k, MapMode mode,
                        const Tolerances& tol);

/// ||P_V T* - P_V T* P_{TV}||_F
double lemma_v_residual(const Subspace& v, const Matrix& t, const Tolerances& tol);

}  // namespace kfusion
