#pragma once

// K-fusion frame multipliers M_{m,W,V} = sum_i m_i w_i v_i P_{W_i} D* K P_{V_i},
// ordinary multipliers, K-sided inverses and the theorems built on them.

#include <optional>
#include <vector>

#include "kfusion/fusion.hpp"

namespace kfusion {

struct MultiplierSpec {
  std::vector<Scalar> symbol;
  WeightedFamily w;
  WeightedFamily v;
  RangedOperator k;

  /// Throws PreconditionError on length mismatch or non-finite symbol entries.
  void validate() const;
  double symbol_sup() const;
};

struct MultiplierMatrix {
  Matrix m;
  double norm = 0.0;
  /// Theoretical upper bound on the norm.
  double bound = 0.0;
  bool bound_holds = false;
};

/// Requires W to be a K-fusion frame (analysis_w carries D).
MultiplierMatrix build_multiplier(const MultiplierSpec& spec, const FusionAnalysis& analysis_w);

/// ||M_{1,W,V} - T_W psi_wv T_V*||_F / max(||M||_F, eps). The symbol must be
/// identically 1.
double factorization_check(const MultiplierSpec& spec, const FusionAnalysis& analysis_w);

/// sum_i m_i phi_i psi_i*, with bound sqrt(B_Phi B_Psi) ||m||_inf.
MultiplierMatrix ordinary_multiplier(const std::vector<Scalar>& symbol, const Matrix& phi, const Matrix& psi);

enum class Side { left, right };

struct SideInverse {
  bool exists = false;
  std::optional<Matrix> x;
  double residual = 0.0;
  DouglasResult douglas;
};

/// right: M X = K with X = M^dagger K, exists iff R(K) in R(M).
/// left:  X M = K with X = K M^dagger, exists iff R(K*) in R(M*).
SideInverse k_side_inverse(const Matrix& m, const RangedOperator& k, Side side, const Tolerances& tol);

enum class LowerBoundCase { m_equals_k, left_inverse };

/// Predicted lower K*-fusion bound of V from M = K or from a K-left inverse
/// L of M, checked on a battery.
LowerBoundCheck dual_lower_bound_from_multiplier(const MultiplierSpec& spec, const FusionAnalysis& analysis_w,
                                                 LowerBoundCase which, const std::optional<Matrix>& l,
                                                 const Tolerances& tol, Index battery_size = 200,
                                                 std::uint64_t battery_seed = 0x5eedULL);

struct InvertibilityResult {
  double lhs = 0.0;
  /// Same sum without the projection onto R(K).
  double lhs_unprojected = 0.0;
  double rhs = 0.0;
  bool criterion_holds = false;
  /// sigma_min of the restriction of M_{1,V,W} from R(K) to S_V(R(K)).
  double sigma_min_restricted = 0.0;
  double sigma_max_restricted = 0.0;
  bool invertible = false;
  /// ||I - P M D_V|| on S_V(R(K)).
  double neumann = 0.0;
  /// ||(I - P_{S_V(R(K))}) M U||
  double leakage = 0.0;
};

/// Invertibility of M_{1,V,W} on R(K) under the perturbation criterion.
/// Both families need unit weights and must be K-fusion frames.
InvertibilityResult invertibility_check(const WeightedFamily& v, const WeightedFamily& w, const RangedOperator& k,
                                        const Tolerances& tol);

/// M_{1,W,V} M_{1,Z,X} against the ordinary multiplier with
/// Phi = {P_{W_i} D_W* K P_{V_i} P_{Z_i} e_j}, Psi = {P_{X_i} L* D_Z e_j}.
/// Requires unit weights and vanishing cross products P_{V_i} P_{Z_j},
/// P_{X_i} P_{Z_j} (i != j).
double composition_check(const WeightedFamily& w, const WeightedFamily& v, const WeightedFamily& z,
                         const WeightedFamily& x, const RangedOperator& k, const RangedOperator& l,
                         const Tolerances& tol);

struct OnbCompositionResult {
  /// ||M_{1,W,V} M_{1,V,H} - M_{1,W,H}||_F / max(||M_{1,W,H}||_F, eps)
  double residual = 0.0;
  /// Same comparison with the middle multiplier formed against K instead of I.
  double residual_k_middle = 0.0;
};

/// V must be an orthonormal fusion basis with H_i inside V_i; all weights 1.
OnbCompositionResult onb_composition_check(const WeightedFamily& w, const WeightedFamily& v, const WeightedFamily& h,
                                           const RangedOperator& k, const Tolerances& tol);

/// Worst cross-projector product max_{i != j} ||P_{A_i} P_{B_j}||_F.
double cross_projector_residual(const WeightedFamily& a, const WeightedFamily& b);

}  // namespace kfusion
