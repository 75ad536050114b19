#include "kfusion/multipliers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "kfusion/errors.hpp"

namespace kfusion {

namespace {

constexpr double kTiny = std::numeric_limits<double>::min();

double scaled_residual(const Matrix& a, const Matrix& b) { return (a - b).norm() / std::max(a.norm(), kTiny); }

void require_unit_weights(const WeightedFamily& f, const char* name, const char* what) {
  if (!f.unit_weights()) {
    throw PreconditionError(std::string(what) + ": family " + name + " must have all weights equal to 1");
  }
}

void require_same_length(const WeightedFamily& a, const WeightedFamily& b, const char* what) {
  if (a.size() != b.size() || a.ambient_dim() != b.ambient_dim()) {
    throw PreconditionError(std::string(what) + ": families differ in length or dimension");
  }
}

MultiplierSpec unit_spec(const WeightedFamily& w, const WeightedFamily& v, const RangedOperator& k) {
  return MultiplierSpec{std::vector<Scalar>(w.size(), Scalar(1.0, 0.0)), w, v, k};
}

const FusionAnalysis& require_kfusion(const FusionAnalysis& a, const char* name, const char* what) {
  if (!a.is_kfusion) throw PreconditionError(std::string(what) + ": family " + name + " is not a K-fusion frame");
  return a;
}

}  // namespace

void MultiplierSpec::validate() const {
  if (symbol.size() != w.size() || w.size() != v.size()) {
    std::ostringstream msg;
    msg << "multiplier: symbol (" << symbol.size() << "), W (" << w.size() << ") and V (" << v.size()
        << ") must have equal lengths";
    throw PreconditionError(msg.str());
  }
  if (w.ambient_dim() != k.dim() || v.ambient_dim() != k.dim()) {
    throw PreconditionError("multiplier: families and K live in different spaces");
  }
  for (const auto& m : symbol) {
    if (!std::isfinite(m.real()) || !std::isfinite(m.imag())) throw PreconditionError("multiplier: non-finite symbol");
  }
}

double MultiplierSpec::symbol_sup() const {
  double sup = 0.0;
  for (const auto& m : symbol) sup = std::max(sup, std::abs(m));
  return sup;
}

MultiplierMatrix build_multiplier(const MultiplierSpec& spec, const FusionAnalysis& analysis_w) {
  spec.validate();
  const Matrix& d = analysis_w.inverse();
  const Matrix dk = d.adjoint() * spec.k.op();
  const Index n = spec.k.dim();
  MultiplierMatrix out;
  out.m = Matrix::Zero(n, n);
  for (std::size_t i = 0; i < spec.w.size(); ++i) {
    const Matrix& bw = spec.w[i].subspace.basis();
    const Matrix& bv = spec.v[i].subspace.basis();
    const Scalar coeff = spec.symbol[i] * (spec.w[i].weight * spec.v[i].weight);
    out.m += coeff * (bw * (bw.adjoint() * dk * bv) * bv.adjoint());
  }
  out.norm = spectral_norm(out.m);
  const double b_v = std::max(0.0, hermitian_eigenvalues(spec.v.frame_operator()).maxCoeff());
  out.bound = spec.symbol_sup() * spectral_norm(d) * spec.k.norm() * std::sqrt(analysis_w.upper_bound * b_v);
  out.bound_holds = out.norm <= out.bound * (1.0 + 1e-12) + kInequalitySlack;
  return out;
}

double factorization_check(const MultiplierSpec& spec, const FusionAnalysis& analysis_w) {
  for (std::size_t i = 0; i < spec.symbol.size(); ++i) {
    if (spec.symbol[i] != Scalar(1.0, 0.0)) {
      std::ostringstream msg;
      msg << "factorization check needs the constant symbol 1; entry " << i << " differs";
      throw PreconditionError(msg.str());
    }
  }
  const MultiplierMatrix mm = build_multiplier(spec, analysis_w);
  const PsiOperator psi = psi_operator(spec.w, spec.v, spec.k, analysis_w);
  const Matrix factored = analysis_w.synthesis * psi.assembled * spec.v.synthesis().adjoint();
  return scaled_residual(mm.m, factored);
}

MultiplierMatrix ordinary_multiplier(const std::vector<Scalar>& symbol, const Matrix& phi, const Matrix& psi) {
  if (phi.cols() != psi.cols() || static_cast<Index>(symbol.size()) != phi.cols() || phi.rows() != psi.rows()) {
    throw PreconditionError("ordinary multiplier: symbol and sequences must have equal lengths");
  }
  Vector m(static_cast<Index>(symbol.size()));
  double sup = 0.0;
  for (std::size_t i = 0; i < symbol.size(); ++i) {
    m(static_cast<Index>(i)) = symbol[i];
    sup = std::max(sup, std::abs(symbol[i]));
  }
  MultiplierMatrix out;
  out.m = phi * m.asDiagonal() * psi.adjoint();
  out.norm = spectral_norm(out.m);
  const double b_phi = spectral_norm(phi);
  const double b_psi = spectral_norm(psi);
  // sqrt(B_Phi B_Psi) with B = lambda_max of the frame operator = ||synthesis||^2.
  out.bound = b_phi * b_psi * sup;
  out.bound_holds = out.norm <= out.bound * (1.0 + 1e-12) + kInequalitySlack;
  return out;
}

SideInverse k_side_inverse(const Matrix& m, const RangedOperator& k, Side side, const Tolerances& tol) {
  if (m.rows() != k.dim() || m.cols() != k.dim()) throw PreconditionError("K-inverse: M and K differ in shape");
  if (k.is_zero()) throw PreconditionError("K-inverse: relative residual undefined for K = 0");
  SideInverse out;
  Matrix x;
  if (side == Side::right) {
    out.douglas = douglas_check(k.op(), m, tol);
    x = pseudo_inverse(m, tol) * k.op();
    out.residual = relative_residual(m * x, k.op());
  } else {
    out.douglas = douglas_check(k.op().adjoint(), m.adjoint(), tol);
    x = k.op() * pseudo_inverse(m, tol);
    out.residual = relative_residual(x * m, k.op());
  }
  out.exists = out.douglas.holds && out.residual <= tol.residual_rel;
  if (out.exists != out.douglas.holds) {
    throw DiagnosticError("K-inverse: range inclusion and least-squares residual disagree");
  }
  if (out.exists) out.x = std::move(x);
  return out;
}

LowerBoundCheck dual_lower_bound_from_multiplier(const MultiplierSpec& spec, const FusionAnalysis& analysis_w,
                                                 LowerBoundCase which, const std::optional<Matrix>& l,
                                                 const Tolerances& tol, Index battery_size,
                                                 std::uint64_t battery_seed) {
  const MultiplierMatrix mm = build_multiplier(spec, analysis_w);
  const Matrix& k = spec.k.op();
  const Matrix& d = analysis_w.inverse();
  const double sup = spec.symbol_sup();
  const double b_w = analysis_w.upper_bound;
  LowerBoundCheck out;
  if (which == LowerBoundCase::m_equals_k) {
    const double res = relative_residual(mm.m, k);
    if (res > tol.residual_rel) {
      std::ostringstream msg;
      msg << "lower bound from multiplier: M differs from K (residual " << res << ")";
      throw PreconditionError(msg.str());
    }
    const double c = sup * spectral_norm(d.adjoint() * k) * std::sqrt(b_w);
    out.predicted = 1.0 / (c * c);
  } else {
    if (!l) throw PreconditionError("lower bound from multiplier: a K-left inverse L is required");
    const double res = relative_residual(*l * mm.m, k);
    if (res > tol.residual_rel) {
      std::ostringstream msg;
      msg << "lower bound from multiplier: L is not a K-left inverse of M (residual " << res << ")";
      throw PreconditionError(msg.str());
    }
    const double c = sup * spectral_norm(*l) * spectral_norm(d) * spec.k.norm() * std::sqrt(b_w);
    out.predicted = 1.0 / (c * c);
  }
  const Matrix battery = inequality_battery(spec.v, spec.k.adjoint(), tol, battery_size, battery_seed);
  out.min_slack = lower_inequality_slack(spec.v, k, out.predicted, battery);
  out.holds = out.min_slack >= -kInequalitySlack;
  return out;
}

InvertibilityResult invertibility_check(const WeightedFamily& v, const WeightedFamily& w, const RangedOperator& k,
                                        const Tolerances& tol) {
  constexpr const char* what = "invertibility";
  require_unit_weights(v, "V", what);
  require_unit_weights(w, "W", what);
  require_same_length(v, w, what);
  if (k.is_zero()) throw PreconditionError("invertibility: K = 0 has trivial range");
  const FusionAnalysis av = fusion_analyze(v, k, tol);
  const FusionAnalysis aw = fusion_analyze(w, k, tol);
  require_kfusion(av, "V", what);
  require_kfusion(aw, "W", what);

  const Matrix& d_v = av.inverse();
  const Matrix dk = d_v.adjoint() * k.op();
  const Matrix p = k.range_projector();
  const Index n = k.dim();
  InvertibilityResult out;
  Matrix m = Matrix::Zero(n, n);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Matrix pv = v[i].subspace.projector();
    const Matrix pw = w[i].subspace.projector();
    const double projected = spectral_norm(p * dk * pw - pv);
    const double plain = spectral_norm(dk * pw - pv);
    out.lhs += projected * projected;
    out.lhs_unprojected += plain * plain;
    m += pv * dk * pw;
  }
  const double kp2 = k.pinv_norm() * k.pinv_norm();
  out.rhs = av.lower_bound * av.lower_bound / (av.upper_bound * kp2 * kp2);
  out.criterion_holds = out.lhs < out.rhs;

  const Matrix& u = k.range_basis();
  const Matrix c = orthonormal_range_basis(av.frame_operator * u, tol);
  const Matrix restricted = c.adjoint() * m * u;
  Eigen::JacobiSVD<Matrix> svd(restricted);
  const auto& sv = svd.singularValues();
  out.sigma_max_restricted = sv.size() > 0 ? sv(0) : 0.0;
  out.sigma_min_restricted = sv.size() > 0 ? sv(sv.size() - 1) : 0.0;
  out.invertible = c.cols() == u.cols() && out.sigma_max_restricted > 0.0 &&
                   out.sigma_min_restricted >
                       static_cast<double>(n) * std::numeric_limits<double>::epsilon() * out.sigma_max_restricted;
  out.neumann = spectral_norm(Matrix::Identity(c.cols(), c.cols()) - c.adjoint() * m * d_v * c);
  out.leakage = spectral_norm(m * u - c * (c.adjoint() * m * u));
  return out;
}

double cross_projector_residual(const WeightedFamily& a, const WeightedFamily& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      if (i == j) continue;
      worst = std::max(worst, (a[i].subspace.basis().adjoint() * b[j].subspace.basis()).norm());
    }
  }
  return worst;
}

double composition_check(const WeightedFamily& w, const WeightedFamily& v, const WeightedFamily& z,
                         const WeightedFamily& x, const RangedOperator& k, const RangedOperator& l,
                         const Tolerances& tol) {
  constexpr const char* what = "composition";
  require_unit_weights(w, "W", what);
  require_unit_weights(v, "V", what);
  require_unit_weights(z, "Z", what);
  require_unit_weights(x, "X", what);
  require_same_length(w, v, what);
  require_same_length(w, z, what);
  require_same_length(w, x, what);
  const double vz = cross_projector_residual(v, z);
  const double xz = cross_projector_residual(x, z);
  if (vz > tol.residual_rel || xz > tol.residual_rel) {
    std::ostringstream msg;
    msg << "composition: families are not biorthogonal (max ||P_{V_i} P_{Z_j}|| = " << vz
        << ", max ||P_{X_i} P_{Z_j}|| = " << xz << ")";
    throw PreconditionError(msg.str());
  }
  const FusionAnalysis aw = fusion_analyze(w, k, tol);
  const FusionAnalysis az = fusion_analyze(z, l, tol);
  require_kfusion(aw, "W", what);
  require_kfusion(az, "Z", what);

  const Matrix lhs = build_multiplier(unit_spec(w, v, k), aw).m * build_multiplier(unit_spec(z, x, l), az).m;

  const Index n = k.dim();
  const Index count = static_cast<Index>(w.size());
  Matrix phi(n, n * count), psi(n, n * count);
  const Matrix dk_w = aw.inverse().adjoint() * k.op();
  const Matrix ld_z = l.op().adjoint() * az.inverse();
  for (Index i = 0; i < count; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    phi.middleCols(i * n, n) =
        w[idx].subspace.projector() * dk_w * v[idx].subspace.projector() * z[idx].subspace.projector();
    psi.middleCols(i * n, n) = x[idx].subspace.projector() * ld_z;
  }
  const std::vector<Scalar> ones(static_cast<std::size_t>(n * count), Scalar(1.0, 0.0));
  const Matrix rhs = ordinary_multiplier(ones, phi, psi).m;
  return scaled_residual(lhs, rhs);
}

OnbCompositionResult onb_composition_check(const WeightedFamily& w, const WeightedFamily& v, const WeightedFamily& h,
                                           const RangedOperator& k, const Tolerances& tol) {
  constexpr const char* what = "onb-composition";
  require_unit_weights(w, "W", what);
  require_unit_weights(v, "V", what);
  require_unit_weights(h, "H", what);
  require_same_length(w, v, what);
  require_same_length(w, h, what);
  const Index n = k.dim();
  const double spanning = (v.frame_operator() - Matrix::Identity(n, n)).norm();
  const double overlap = cross_projector_residual(v, v);
  if (spanning > tol.residual_rel || overlap > tol.residual_rel) {
    std::ostringstream msg;
    msg << "onb-composition: V is not an orthonormal fusion basis (||S_V - I|| = " << spanning
        << ", max ||P_{V_i} P_{V_j}|| = " << overlap << ")";
    throw PreconditionError(msg.str());
  }
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double res = v[i].subspace.residual_of(h[i].subspace.basis());
    if (res > tol.residual_rel) {
      std::ostringstream msg;
      msg << "onb-composition: H_" << i << " is not contained in V_" << i << " (residual " << res << ")";
      throw PreconditionError(msg.str());
    }
  }
  const FusionAnalysis aw = fusion_analyze(w, k, tol);
  require_kfusion(aw, "W", what);

  const RangedOperator identity(Matrix::Identity(n, n), tol);
  const FusionAnalysis av_plain = fusion_analyze(v, identity, tol);
  const FusionAnalysis av_k = fusion_analyze(v, k, tol);

  const Matrix m_wv = build_multiplier(unit_spec(w, v, k), aw).m;
  const Matrix m_wh = build_multiplier(unit_spec(w, h, k), aw).m;
  const Matrix m_vh = build_multiplier(unit_spec(v, h, identity), av_plain).m;
  OnbCompositionResult out;
  out.residual = (m_wv * m_vh - m_wh).norm() / std::max(m_wh.norm(), kTiny);
  if (av_k.is_kfusion) {
    const Matrix m_vh_k = build_multiplier(unit_spec(v, h, k), av_k).m;
    out.residual_k_middle = (m_wv * m_vh_k - m_wh).norm() / std::max(m_wh.norm(), kTiny);
  }
  return out;
}

}  // namespace kfusion
