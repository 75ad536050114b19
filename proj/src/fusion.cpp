#include "kfusion/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "kfusion/errors.hpp"

namespace kfusion {

namespace {

void require_same_shape(const WeightedFamily& a, const WeightedFamily& b, const char* what) {
  if (a.size() != b.size()) {
    std::ostringstream msg;
    msg << what << ": families have different lengths (" << a.size() << " vs " << b.size() << ")";
    throw PreconditionError(msg.str());
  }
  if (a.ambient_dim() != b.ambient_dim()) {
    throw PreconditionError(std::string(what) + ": families live in different spaces");
  }
}

void require_dim(const WeightedFamily& w, const RangedOperator& k, const char* what) {
  if (w.ambient_dim() != k.dim()) throw PreconditionError(std::string(what) + ": family and K dimensions differ");
}

double relative_vector_residual(const Vector& approx, const Vector& exact, double k_norm, double f_norm) {
  const double denom = std::max(exact.norm(), kResidualFloor * k_norm * f_norm);
  const double diff = (approx - exact).norm();
  return denom > 0.0 ? diff / denom : diff;
}

// Worst relative residual of R f against K f over the battery columns.
double battery_residual(const Matrix& reproduced, const Matrix& k, const Matrix& battery) {
  const double k_norm = spectral_norm(k);
  double worst = 0.0;
  for (Index j = 0; j < battery.cols(); ++j) {
    const Vector f = battery.col(j);
    worst = std::max(worst, relative_vector_residual(reproduced * f, k * f, k_norm, f.norm()));
  }
  return worst;
}

Matrix weighted_groups(const WeightedFamily& w, const VectorFamily& locals) {
  Matrix out(locals.ambient_dim(), locals.size());
  Index at = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const Matrix& g = locals.groups()[i];
    out.middleCols(at, g.cols()) = w[i].weight * g;
    at += g.cols();
  }
  return out;
}

}  // namespace

const Matrix& FusionAnalysis::inverse() const {
  if (!restricted_inverse) throw PreconditionError("family is not a K-fusion frame; S_W has no inverse on R(K)");
  return *restricted_inverse;
}

FusionAnalysis fusion_analyze(const WeightedFamily& w, const RangedOperator& k, const Tolerances& tol) {
  if (w.size() == 0) throw PreconditionError("fusion_analyze: empty family");
  require_dim(w, k, "fusion_analyze");
  FusionAnalysis out;
  out.synthesis = w.synthesis();
  out.frame_operator = w.frame_operator();
  out.upper_bound = std::max(0.0, hermitian_eigenvalues(out.frame_operator).maxCoeff());
  out.is_bessel = std::isfinite(out.upper_bound);

  const LowerBound lb = pencil_lower_bound(out.frame_operator, k, tol);
  out.lower_bound = lb.value;
  out.vacuous = lb.vacuous;
  out.witness = lb.witness;
  out.is_kfusion = lb.vacuous || lb.value > 0.0;

  out.douglas = douglas_check(k.op(), out.synthesis, tol);
  if (out.douglas.holds != out.is_kfusion) {
    std::ostringstream msg;
    msg << "fusion_analyze: optimal lower bound " << out.lower_bound << " disagrees with range inclusion R(K) in R(T_W)"
        << " (factor residual " << out.douglas.factor_residual << ")";
    throw DiagnosticError(msg.str());
  }
  if (out.is_kfusion) out.restricted_inverse = restricted_inverse(out.frame_operator, k, tol);
  return out;
}

Reconstruction reconstruct(const WeightedFamily& w, const RangedOperator& k, const FusionAnalysis& analysis,
                           const Vector& f) {
  require_dim(w, k, "reconstruct");
  const Matrix& d = analysis.inverse();
  const Vector kf = k.op() * f;
  const Vector pulled = d.adjoint() * kf;
  Vector acc = Vector::Zero(w.ambient_dim());
  for (const auto& m : w.members()) {
    const Matrix& b = m.subspace.basis();
    acc += (m.weight * m.weight) * (b * (b.adjoint() * pulled));
  }
  Reconstruction out;
  const Matrix& u = k.range_basis();
  out.kf_hat = u * (u.adjoint() * acc);
  out.residual = relative_vector_residual(out.kf_hat, kf, k.norm(), f.norm());
  return out;
}

PsiOperator psi_operator(const WeightedFamily& w, const WeightedFamily& v, const RangedOperator& k,
                         const FusionAnalysis& analysis_w) {
  require_same_shape(w, v, "psi_operator");
  require_dim(w, k, "psi_operator");
  const Matrix dk = analysis_w.inverse().adjoint() * k.op();
  PsiOperator out;
  out.assembled = Matrix::Zero(w.total_coord_dim(), v.total_coord_dim());
  Index row = 0, col = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const Matrix& bw = w[i].subspace.basis();
    const Matrix& bv = v[i].subspace.basis();
    Matrix block = bw.adjoint() * dk * bv;
    out.assembled.block(row, col, block.rows(), block.cols()) = block;
    row += block.rows();
    col += block.cols();
    out.blocks.push_back(std::move(block));
  }
  return out;
}

DualityResiduals verify_kdual_fusion(const WeightedFamily& w, const WeightedFamily& v, const RangedOperator& k,
                                     const FusionAnalysis& analysis_w) {
  require_same_shape(w, v, "verify_kdual_fusion");
  require_dim(w, k, "verify_kdual_fusion");
  if (k.is_zero()) throw PreconditionError("verify_kdual_fusion: relative residual undefined for K = 0");
  const Matrix p = k.range_projector();
  const Matrix dk = analysis_w.inverse().adjoint() * k.op();
  Matrix sum = Matrix::Zero(w.ambient_dim(), w.ambient_dim());
  for (std::size_t i = 0; i < w.size(); ++i) {
    sum += (w[i].weight * v[i].weight) * (w[i].subspace.projector() * dk * v[i].subspace.projector());
  }
  const PsiOperator psi = psi_operator(w, v, k, analysis_w);
  const Matrix factored = p * analysis_w.synthesis * psi.assembled * v.synthesis().adjoint();
  DualityResiduals out;
  out.sum = relative_residual(p * sum, k.op());
  out.factored = relative_residual(factored, k.op());
  return out;
}

std::vector<double> canonical_dual_hypothesis(const WeightedFamily& w, const RangedOperator& k,
                                              const FusionAnalysis& analysis_w) {
  require_dim(w, k, "canonical_dual_hypothesis");
  const Matrix image = orthonormal_range_basis(analysis_w.frame_operator * k.range_basis(), k.tolerances());
  std::vector<double> out;
  for (const auto& m : w.members()) out.push_back(membership_residual(m.subspace.basis(), image));
  return out;
}

WeightedFamily canonical_kdual_fusion(const WeightedFamily& w, const RangedOperator& k,
                                      const FusionAnalysis& analysis_w, const Tolerances& tol) {
  const Matrix& d = analysis_w.inverse();
  const std::vector<double> residuals = canonical_dual_hypothesis(w, k, analysis_w);
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    if (residuals[i] > tol.residual_rel) {
      std::ostringstream msg;
      msg << "canonical K-dual: member " << i << " is not contained in S_W(R(K)) (residual " << residuals[i] << ")";
      throw PreconditionError(msg.str());
    }
  }
  const Matrix map = k.op().adjoint() * d;
  std::vector<FusionMember> members;
  for (const auto& m : w.members()) members.push_back({make_subspace(map * m.subspace.basis(), tol), m.weight});
  return WeightedFamily(w.ambient_dim(), std::move(members));
}

Matrix inequality_battery(const WeightedFamily& v, const RangedOperator& k, const Tolerances& tol, Index count,
                          std::uint64_t seed) {
  const Index n = v.ambient_dim();
  const Matrix s = v.frame_operator();
  Eigen::SelfAdjointEigenSolver<Matrix> s_eig(s);
  Eigen::SelfAdjointEigenSolver<Matrix> k_eig(hermitian_part(k.op() * k.op().adjoint()));
  const LowerBound lb = pencil_lower_bound(s, k, tol);
  const Index extra = lb.witness.size() > 0 ? 1 : 0;
  Matrix out(n, count + 2 * n + extra);
  out.leftCols(count) = unit_battery(n, count, seed);
  out.middleCols(count, n) = s_eig.eigenvectors();
  out.middleCols(count + n, n) = k_eig.eigenvectors();
  if (extra) out.col(count + 2 * n) = lb.witness;
  return out;
}

double lower_inequality_slack(const WeightedFamily& v, const Matrix& k, double predicted, const Matrix& battery) {
  const Matrix s = v.frame_operator();
  double worst = std::numeric_limits<double>::infinity();
  for (Index j = 0; j < battery.cols(); ++j) {
    const Vector f = battery.col(j);
    const double lhs = f.dot(s * f).real();
    const double rhs = predicted * (k * f).squaredNorm();
    worst = std::min(worst, lhs - rhs);
  }
  return worst;
}

LowerBoundCheck kstar_lower_bound_check(const WeightedFamily& v, const WeightedFamily& w, const RangedOperator& k,
                                        const FusionAnalysis& analysis_w, const Tolerances& tol,
                                        Index battery_size, std::uint64_t battery_seed) {
  const DualityResiduals dual = verify_kdual_fusion(w, v, k, analysis_w);
  if (dual.sum > tol.residual_rel) {
    std::ostringstream msg;
    msg << "K*-lower bound: V is not a K-dual of W (residual " << dual.sum << ")";
    throw PreconditionError(msg.str());
  }
  const double dk = spectral_norm(analysis_w.inverse().adjoint() * k.op());
  LowerBoundCheck out;
  out.predicted = 1.0 / (dk * dk * analysis_w.upper_bound);
  const Matrix battery = inequality_battery(v, k.adjoint(), tol, battery_size, battery_seed);
  out.min_slack = lower_inequality_slack(v, k.op(), out.predicted, battery);
  out.holds = out.min_slack >= -kInequalitySlack;
  return out;
}

LocalToGlobal local_to_global(const WeightedFamily& w, const VectorFamily& locals, const RangedOperator& k,
                              const Tolerances& tol) {
  if (locals.groups().size() != w.size()) {
    throw PreconditionError("local_to_global: need exactly one local frame per subspace");
  }
  std::vector<double> lower, upper;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const Matrix& f = locals.groups()[i];
    const Matrix& b = w[i].subspace.basis();
    const double outside = membership_residual(f, b);
    if (outside > tol.residual_rel * std::max(1.0, f.norm())) {
      std::ostringstream msg;
      msg << "local frame " << i << " has vectors outside W_" << i << " (residual " << outside << ")";
      throw PreconditionError(msg.str());
    }
    if (b.cols() == 0) continue;
    const Matrix local = b.adjoint() * f;
    if (numerical_rank(local, tol) < b.cols()) {
      std::ostringstream msg;
      msg << "local frame " << i << " does not span W_" << i;
      throw PreconditionError(msg.str());
    }
    const double lo = smallest_singular_value(local);
    const double hi = spectral_norm(local);
    lower.push_back(lo * lo);
    upper.push_back(hi * hi);
  }
  if (!lower.empty()) {
    const double inf_a = *std::min_element(lower.begin(), lower.end());
    const double sup_b = *std::max_element(upper.begin(), upper.end());
    if (!(inf_a > 0.0) || !std::isfinite(sup_b)) {
      throw PreconditionError("local frame bounds violate 0 < inf A_i <= sup B_i < inf");
    }
  }
  std::vector<Matrix> groups;
  for (std::size_t i = 0; i < w.size(); ++i) groups.push_back(w[i].weight * locals.groups()[i]);
  VectorFamily joined(w.ambient_dim(), std::move(groups));
  KFrameAnalysis joined_analysis = kframe_analyze(joined, k, tol);
  FusionAnalysis fusion = fusion_analyze(w, k, tol);
  const bool equiv = joined_analysis.is_kframe == fusion.is_kfusion;
  return LocalToGlobal{std::move(joined), std::move(lower), std::move(upper), std::move(joined_analysis),
                       std::move(fusion), equiv};
}

VectorFamily canonical_local_duals(const VectorFamily& locals, const Tolerances& tol) {
  std::vector<Matrix> groups;
  for (const auto& g : locals.groups()) groups.push_back(canonical_dual_in_span(g, tol));
  return VectorFamily(locals.ambient_dim(), std::move(groups));
}

LocalDualResult local_dual_identities(const WeightedFamily& w, const RangedOperator& k, const VectorFamily& locals,
                                      const VectorFamily& local_duals, const Tolerances& tol, Index battery_size,
                                      std::uint64_t battery_seed) {
  if (locals.groups().size() != w.size() || local_duals.groups().size() != w.size()) {
    throw PreconditionError("local_dual_identities: need one local frame and one dual per subspace");
  }
  bool parseval = true;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const Matrix& f = locals.groups()[i];
    const Matrix& g = local_duals.groups()[i];
    if (f.cols() != g.cols()) throw PreconditionError("local_dual_identities: local frame and dual differ in size");
    const Matrix p = w[i].subspace.projector();
    const double dual_res = (g * f.adjoint() - p).norm();
    if (dual_res > tol.residual_rel * std::max(1.0, p.norm())) {
      std::ostringstream msg;
      msg << "local dual " << i << " does not reproduce P_{W_" << i << "} (residual " << dual_res << ")";
      throw PreconditionError(msg.str());
    }
    if ((f * f.adjoint() - p).norm() > tol.residual_rel * std::max(1.0, p.norm())) parseval = false;
  }
  const FusionAnalysis analysis = fusion_analyze(w, k, tol);
  const Matrix& d = analysis.inverse();
  const Matrix p = k.range_projector();
  const Matrix fw = weighted_groups(w, locals);
  const Matrix gw = weighted_groups(w, local_duals);
  const Matrix& kop = k.op();

  // Part 1: Kf = sum <f, K* w f_ij> P D w g_ij.   Part 2: Kf = sum <f, K* D w g_ij> P w f_ij.
  const Matrix rec1 = p * d * gw * fw.adjoint() * kop;
  const Matrix rec2 = p * fw * gw.adjoint() * d.adjoint() * kop;
  const Matrix battery = unit_battery(w.ambient_dim(), battery_size, battery_seed);

  LocalDualResult out;
  out.res1 = battery_residual(rec1, kop, battery);
  out.res2 = battery_residual(rec2, kop, battery);
  if (parseval) {
    const Matrix d_f = restricted_inverse(frame_operator_of(fw), k, tol);
    const Matrix ours = kop.adjoint() * d * gw;
    const Matrix diff = ours - kop.adjoint() * d_f * fw;
    double worst = 0.0, scale = 0.0;
    for (Index j = 0; j < diff.cols(); ++j) {
      worst = std::max(worst, diff.col(j).norm());
      scale = std::max(scale, ours.col(j).norm());
    }
    out.coincide = worst > 0.0 ? worst / std::max(scale, std::numeric_limits<double>::min()) : 0.0;
  }
  return out;
}

MappedFamily map_family(const Matrix& t, const WeightedFamily& w, const RangedOperator& k, MapMode mode,
                        const Tolerances& tol) {
  require_dim(w, k, "map_family");
  Matrix target;
  Matrix image_map;
  Matrix corange;
  if (mode == MapMode::KW) {
    // Fusion frame for R(K^dagger): the lower fusion inequality against the
    // projector onto R(K^dagger) (the identity when K is invertible).
    const RangedOperator coimage(projector(k.corange_basis()), tol);
    const FusionAnalysis base = fusion_analyze(w, coimage, tol);
    if (!base.is_kfusion) {
      throw PreconditionError("KW construction: W is not a fusion frame for R(K^dagger)");
    }
    target = k.op();
    image_map = k.op();
    corange = k.corange_basis();
  } else {
    if (t.rows() != k.dim() || t.cols() != k.dim()) throw PreconditionError("TK construction: T has wrong shape");
    const FusionAnalysis base = fusion_analyze(w, k, tol);
    if (!base.is_kfusion) throw PreconditionError("TK construction: W is not a K-fusion frame");
    target = t * k.op();
    image_map = t;
    corange = RangedOperator(target, tol).corange_basis();
  }
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double res = membership_residual(w[i].subspace.basis(), corange);
    if (res > tol.residual_rel) {
      std::ostringstream msg;
      msg << (mode == MapMode::KW ? "KW" : "TK") << " construction: member " << i
          << " is not inside the range of the pseudo-inverse (residual " << res << ")";
      throw PreconditionError(msg.str());
    }
  }
  std::vector<FusionMember> members;
  for (const auto& m : w.members()) members.push_back({make_subspace(image_map * m.subspace.basis(), tol), m.weight});
  WeightedFamily mapped(w.ambient_dim(), std::move(members));
  FusionAnalysis check = fusion_analyze(mapped, RangedOperator(target, tol), tol);
  return MappedFamily{std::move(mapped), std::move(target), std::move(check)};
}

double lemma_v_residual(const Subspace& v, const Matrix& t, const Tolerances& tol) {
  if (t.rows() != v.ambient_dim() || t.cols() != v.ambient_dim()) {
    throw PreconditionError("lemma_v_residual: operator and subspace dimensions differ");
  }
  const Subspace tv = make_subspace(t * v.basis(), tol);
  const Matrix pv_tstar = v.projector() * t.adjoint();
  return (pv_tstar - pv_tstar * tv.projector()).norm();
}

}  // namespace kfusion
