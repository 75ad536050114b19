#include "kfusion/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>

#include "kfusion/errors.hpp"
#include "kfusion/fusion.hpp"
#include "kfusion/kframes.hpp"
#include "kfusion/multipliers.hpp"

namespace kfusion {

// ---------------------------------------------------------------------------
// Rayleigh oracle

namespace {

struct Pencil {
  const Matrix& s;
  const Matrix& g;
  /// <G f, f> at or below g_floor * ||f||^2 is treated as zero.
  double g_floor;

  double quotient(const Vector& f) const {
    const double b = f.dot(g * f).real();
    if (!(b > g_floor * f.squaredNorm())) return std::numeric_limits<double>::infinity();
    return f.dot(s * f).real() / b;
  }
};

// Minimizes q(f + t p) over real t (and the limit t -> inf, i.e. f = p).
// Stationary points come from the quadratic c2 t^2 + c1 t + c0 = 0; each
// candidate is re-evaluated directly. Returns the best point if it improves
// on q0.
std::optional<std::pair<Vector, double>> exact_line_search(const Pencil& pencil, const Vector& f, const Vector& p,
                                                           double q0) {
  const Vector sp = pencil.s * p, gp = pencil.g * p;
  const Vector sf = pencil.s * f, gf = pencil.g * f;
  const double a0 = f.dot(sf).real(), a1 = f.dot(sp).real(), a2 = p.dot(sp).real();
  const double b0 = f.dot(gf).real(), b1 = f.dot(gp).real(), b2 = p.dot(gp).real();
  const double c2 = a2 * b1 - a1 * b2;
  const double c1 = a2 * b0 - a0 * b2;
  const double c0 = a1 * b0 - a0 * b1;
  std::vector<Vector> candidates{p};
  const double scale = std::abs(c2) + std::abs(c1) + std::abs(c0);
  if (scale > 0.0) {
    if (std::abs(c2) <= 1e-14 * scale) {
      if (c1 != 0.0) candidates.push_back(f - (c0 / c1) * p);
    } else {
      const double disc = c1 * c1 - 4.0 * c2 * c0;
      if (disc >= 0.0) {
        const double qq = -0.5 * (c1 + std::copysign(std::sqrt(disc), c1));
        if (qq != 0.0) {
          candidates.push_back(f + (qq / c2) * p);
          candidates.push_back(f + (c0 / qq) * p);
        }
      }
    }
  }
  std::optional<std::pair<Vector, double>> best;
  double q_best = q0;
  for (Vector& v : candidates) {
    const double nv = v.norm();
    if (!(nv > 0.0) || !std::isfinite(nv)) continue;
    v /= nv;
    const double q = pencil.quotient(v);
    if (q < q_best) {
      q_best = q;
      best = std::make_pair(v, q);
    }
  }
  return best;
}

// Polak-Ribiere nonlinear conjugate gradients on the Rayleigh quotient with
// exact line searches and periodic restarts.
double refine(const Pencil& pencil, Vector f, Index n) {
  f.normalize();
  double q = pencil.quotient(f);
  if (!std::isfinite(q)) return q;
  const Index restart = 2 * n;
  const Index max_iter = 60 * n + 60;
  Vector grad_prev, p;
  Index since_restart = 0;
  for (Index it = 0; it < max_iter; ++it) {
    const double b = f.dot(pencil.g * f).real();
    const Vector grad = (pencil.s * f - q * (pencil.g * f)) * (2.0 / b);
    if (grad.norm() <= 1e-15 * std::max(1.0, std::abs(q))) break;
    if (since_restart == 0) {
      p = -grad;
    } else {
      const double beta = std::max(0.0, grad.dot(grad - grad_prev).real() / grad_prev.squaredNorm());
      p = -grad + beta * p;
      if (p.dot(grad).real() >= 0.0) p = -grad;
    }
    grad_prev = grad;
    const bool steepest = since_restart == 0;
    since_restart = (since_restart + 1) % restart;

    const auto next = exact_line_search(pencil, f, p, q);
    if (!next) {
      if (steepest) break;  // steepest descent could not improve either
      since_restart = 0;
      continue;
    }
    const double rel_gain = (q - next->second) / std::max(std::abs(q), std::numeric_limits<double>::min());
    f = next->first;
    q = next->second;
    if (rel_gain < 1e-16) break;
  }
  return q;
}

}  // namespace

double oracle_rayleigh_min(const Matrix& s, const Matrix& g, const Matrix& u, Index samples, std::uint64_t seed) {
  const Index n = s.rows();
  if (n == 0 || u.cols() == 0) return std::numeric_limits<double>::infinity();
  // Both quotient terms vanish on ker S ∩ ker G = ker(S + G); work on its
  // complement so that roundoff there cannot masquerade as small quotients.
  Eigen::SelfAdjointEigenSolver<Matrix> eig(hermitian_part(s + g));
  const Eigen::VectorXd& ev = eig.eigenvalues();
  const double ev_max = std::max(ev.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  Index keep = 0;
  for (Index i = 0; i < ev.size(); ++i) keep += ev(i) > 1e-12 * ev_max ? 1 : 0;
  if (keep == 0) return std::numeric_limits<double>::infinity();
  const Matrix q_basis = eig.eigenvectors().rightCols(keep);
  const Matrix s_red = hermitian_part(q_basis.adjoint() * s * q_basis);
  const Matrix g_red = hermitian_part(q_basis.adjoint() * g * q_basis);
  const Matrix u_red = q_basis.adjoint() * u;
  const double g_floor = 1e-12 * std::max(spectral_norm(g_red), std::numeric_limits<double>::min());
  const Pencil pencil{s_red, g_red, g_floor};
  constexpr std::size_t kStarts = 8;
  constexpr Index kChunk = 2048;

  Rng rng(seed);
  std::vector<std::pair<double, Vector>> best;
  for (Index done = 0; done < samples; done += kChunk) {
    const Index m = std::min(kChunk, samples - done);
    const Matrix f = rng.unit_vectors(keep, m, Field::complex);
    const Matrix sf = s_red * f;
    const Matrix gf = g_red * f;
    const Matrix uc = u_red.adjoint() * f;
    for (Index j = 0; j < m; ++j) {
      const double den = f.col(j).dot(gf.col(j)).real();
      if (den <= g_floor || uc.col(j).norm() == 0.0) continue;
      const double q = f.col(j).dot(sf.col(j)).real() / den;
      if (best.size() < kStarts || q < best.back().first) {
        if (best.size() == kStarts) best.pop_back();
        auto at = std::upper_bound(best.begin(), best.end(), q,
                                   [](double v, const std::pair<double, Vector>& e) { return v < e.first; });
        best.insert(at, {q, f.col(j)});
      }
    }
  }
  if (best.empty()) return std::numeric_limits<double>::infinity();
  double result = best.front().first;
  for (const auto& [q, f] : best) result = std::min(result, refine(pencil, f, keep));
  return result;
}

// ---------------------------------------------------------------------------
// Report

std::string_view to_string(CheckKind k) {
  switch (k) {
    case CheckKind::residual: return "residual";
    case CheckKind::slack: return "slack";
    case CheckKind::exceeds: return "exceeds";
    case CheckKind::flag: return "flag";
  }
  return "residual";
}

bool VerificationReport::all_pass() const { return failed() == 0; }

std::size_t VerificationReport::failed() const {
  return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [](const auto& r) { return !r.pass; }));
}

std::map<std::string, CheckSummary> VerificationReport::summary() const {
  std::map<std::string, CheckSummary> out;
  for (const auto& r : records) {
    auto [it, fresh] = out.try_emplace(r.check);
    CheckSummary& s = it->second;
    const bool low_is_bad = r.kind == CheckKind::slack || r.kind == CheckKind::exceeds || r.kind == CheckKind::flag;
    if (fresh) {
      s.worst = r.value;
    } else {
      s.worst = low_is_bad ? std::min(s.worst, r.value) : std::max(s.worst, r.value);
    }
    ++s.count;
    if (!r.pass) ++s.failed;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Suite

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr double kFactorTol = 1e-8;        // Douglas factor residual
constexpr double kOracleRel = 1e-4;        // pencil vs Rayleigh oracle
constexpr double kIdentityTol = 1e-12;     // same-operator identities
constexpr double kLemmaTol = 1e-10;
constexpr double kHypothesisTol = 1e-10;
constexpr double kCompositionTol = 1e-9;
constexpr double kResolvableRhs = 1e-16;
constexpr double kCoincideTol = 1e-9;
constexpr Index kSamples = 100;            // sampled f per identity check
constexpr Index kInequalitySamples = 1000;

class Recorder {
 public:
  Recorder(std::vector<CheckRecord>& out, std::uint64_t seed, Index dim, Structure s)
      : out_(out), seed_(seed), dim_(dim), structure_(to_string(s)) {}

  void residual(const std::string& name, double value, double threshold) {
    push(name, CheckKind::residual, value, threshold, value <= threshold);
  }
  void slack(const std::string& name, double value, double threshold) {
    push(name, CheckKind::slack, value, threshold, value >= -threshold);
  }
  void exceeds(const std::string& name, double value, double threshold) {
    push(name, CheckKind::exceeds, value, threshold, value > threshold);
  }
  void flag(const std::string& name, bool ok) { push(name, CheckKind::flag, ok ? 1.0 : 0.0, 1.0, ok); }

  /// Engineered negative: `fn` must raise a PreconditionError.
  void rejects(const std::string& name, const std::function<void()>& fn) {
    bool raised = false;
    try {
      fn();
    } catch (const PreconditionError&) {
      raised = true;
    }
    flag(name, raised);
  }

  /// Runs a positive check; an unexpected precondition failure is a failed record.
  void guard(const std::string& name, const std::function<void()>& fn) {
    try {
      fn();
    } catch (const PreconditionError&) {
      flag(name + ".precondition", false);
    } catch (const DiagnosticError& e) {
      throw DiagnosticError(std::string(e.what()) + " [check " + name + "]");
    }
  }

 private:
  void push(const std::string& name, CheckKind kind, double value, double threshold, bool pass) {
    if (!std::isfinite(value)) pass = false;
    out_.push_back(CheckRecord{name, seed_, dim_, structure_, kind, value, threshold, pass});
  }

  std::vector<CheckRecord>& out_;
  std::uint64_t seed_;
  Index dim_;
  std::string structure_;
};

WeightedFamily zero_family(Index n, std::size_t count) {
  return WeightedFamily(n, std::vector<FusionMember>(count, FusionMember{Subspace::zero(n), 1.0}));
}

// Family of subspaces inside R(K)^perp (or one hyperplane when K is onto):
// never a K-fusion frame for K != 0.
WeightedFamily off_range_family(Rng& rng, const RangedOperator& k, Field field, const Tolerances& tol) {
  const Index n = k.dim();
  Matrix container = orthogonal_complement(k.range_basis());
  if (container.cols() == 0) container = orthogonal_complement(rng.unit_vectors(n, 1, field));
  std::vector<FusionMember> members;
  for (int i = 0; i < 2; ++i) {
    const Index d = rng.uniform_index(1, container.cols());
    members.push_back({random_subspace_in(rng, container, d, field, tol), 1.0});
  }
  return WeightedFamily(n, std::move(members));
}

// Subspaces of ker K = R(K*)^perp, so that K P_{V_i} = 0.
WeightedFamily kernel_family(Rng& rng, const RangedOperator& k, std::size_t count, Field field, const Tolerances& tol) {
  const Matrix kernel = orthogonal_complement(k.corange_basis());
  if (kernel.cols() == 0) return zero_family(k.dim(), count);
  std::vector<FusionMember> members;
  for (std::size_t i = 0; i < count; ++i) {
    members.push_back({random_subspace_in(rng, kernel, rng.uniform_index(1, kernel.cols()), field, tol), 1.0});
  }
  return WeightedFamily(k.dim(), std::move(members));
}

double min_inequality(const Matrix& battery, const std::function<double(const Vector&)>& fn) {
  double worst = std::numeric_limits<double>::infinity();
  for (Index j = 0; j < battery.cols(); ++j) worst = std::min(worst, fn(battery.col(j)));
  return worst;
}

double fusion_sum(const WeightedFamily& w, const Vector& f) {
  double acc = 0.0;
  for (const auto& m : w.members()) acc += m.weight * m.weight * (m.subspace.basis().adjoint() * f).squaredNorm();
  return acc;
}

struct Context {
  Recorder& rec;
  Rng& rng;
  const Instance& inst;
  const Tolerances& tol;
  const SuiteOptions& opts;
  std::uint64_t seed;
  Index n;
  Field field;
};

// -- Douglas ----------------------------------------------------------------

void check_douglas(Context& c) {
  for (int p = 0; p < 3; ++p) {
    const bool negative = p == 2;
    const Index r = c.rng.uniform_index(1, c.n - 1);
    const Matrix l2 = random_rank_k(c.rng, c.n, r, c.field);
    Matrix l1 = l2 * c.rng.gaussian(c.n, c.n, c.field);
    if (negative) {
      const Matrix q = orthogonal_complement(orthonormal_range_basis(l2, c.tol));
      l1 += q * c.rng.gaussian(q.cols(), c.n, c.field);
    }
    const DouglasResult d = douglas_check(l1, l2, c.tol);
    if (negative) {
      c.rec.flag("douglas.negative", !d.holds);
    } else {
      c.rec.flag("douglas.agree", d.holds && d.factor && d.lambda);
      c.rec.residual("douglas.factor", d.factor_residual, kFactorTol);
    }
  }
}

// -- Optimal bounds ----------------------------------------------------------

void check_bounds(Context& c, const std::string& prefix, const Matrix& s, double lower, double upper, bool is_frame,
                  const RangedOperator& k, const std::function<double(const Vector&)>& sum) {
  if (!is_frame || k.is_zero()) return;
  const Matrix g = k.op() * k.op().adjoint();
  const double oracle = oracle_rayleigh_min(s, g, k.range_basis(), c.opts.oracle_samples, splitmix(c.seed ^ 0x0a));
  c.rec.slack(prefix + ".oracle_lower", oracle - lower, kInequalitySlack);
  c.rec.residual(prefix + ".oracle_upper", std::max(0.0, oracle - lower) / lower, kOracleRel);

  const Matrix battery = unit_battery(c.n, kInequalitySamples, splitmix(c.seed ^ 0x0b), c.field);
  const Matrix& kop = k.op();
  c.rec.slack(prefix + ".lower_inequality",
              min_inequality(battery, [&](const Vector& f) { return sum(f) - lower * (kop.adjoint() * f).squaredNorm(); }),
              kInequalitySlack);
  c.rec.slack(prefix + ".upper_inequality",
              min_inequality(battery, [&](const Vector& f) { return upper * f.squaredNorm() - sum(f); }),
              kInequalitySlack);
}

void check_fusion(Context& c, const WeightedFamily& w, const RangedOperator& k, const FusionAnalysis& a) {
  const Matrix& s = a.frame_operator;
  c.rec.residual("fusion.frame_identity", (s - a.synthesis * a.synthesis.adjoint()).norm() / std::max(1.0, s.norm()),
                 kIdentityTol);
  c.rec.flag("fusion.douglas_agree", a.is_kfusion == a.douglas.holds);
  check_bounds(c, "fusion", s, a.lower_bound, a.upper_bound, a.is_kfusion, k,
               [&](const Vector& f) { return fusion_sum(w, f); });

  const WeightedFamily neg = off_range_family(c.rng, k, c.field, c.tol);
  const FusionAnalysis na = fusion_analyze(neg, k, c.tol);
  c.rec.flag("fusion.negative", !na.is_kfusion && !na.douglas.holds);
}

void check_kframe(Context& c, const VectorFamily& f, const RangedOperator& k) {
  const KFrameAnalysis a = kframe_analyze(f, k, c.tol);
  const Matrix flat = f.flat();
  check_bounds(c, "kframe", a.frame_operator, a.lower_bound, a.upper_bound, a.is_kframe, k,
               [&](const Vector& v) { return (flat.adjoint() * v).squaredNorm(); });
  if (a.is_kframe && !k.is_zero()) {
    const VectorFamily g = canonical_kdual_vec(f, k, c.tol);
    c.rec.residual("kframe.kdual", verify_kdual_vec(f, g, k), c.tol.residual_rel);
    const VectorFamily zero(f.ambient_dim(), [&] {
      std::vector<Matrix> groups;
      for (const auto& grp : f.groups()) groups.push_back(Matrix::Zero(grp.rows(), grp.cols()));
      return groups;
    }());
    c.rec.exceeds("kframe.kdual.negative", verify_kdual_vec(f, zero, k), c.tol.residual_rel);
  }
  // Vectors inside R(K)^perp never form a K-frame.
  const Matrix perp = orthogonal_complement(k.range_basis());
  if (!k.is_zero() && perp.cols() > 0) {
    const VectorFamily bad = VectorFamily::single(perp * c.rng.gaussian(perp.cols(), 3, c.field));
    c.rec.rejects("kframe.negative", [&] { (void)restricted_inverse_vec(bad, k, c.tol); });
  }
}

// -- Reconstruction and the restricted-inverse sandwich ----------------------

void check_reconstruction(Context& c, const WeightedFamily& w, const RangedOperator& k, const FusionAnalysis& a) {
  const Matrix fs = c.rng.gaussian(c.n, kSamples, c.field);
  double worst = 0.0;
  for (Index j = 0; j < fs.cols(); ++j) worst = std::max(worst, reconstruct(w, k, a, fs.col(j)).residual);
  c.rec.residual("reconstruction", worst, c.tol.residual_rel);

  const WeightedFamily neg = off_range_family(c.rng, k, c.field, c.tol);
  const FusionAnalysis na = fusion_analyze(neg, k, c.tol);
  c.rec.rejects("reconstruction.negative", [&] { (void)reconstruct(neg, k, na, fs.col(0)); });
}

void check_sandwich(Context& c, const RangedOperator& k, const FusionAnalysis& a) {
  const Matrix& d = a.inverse();
  const Matrix su = a.frame_operator * k.range_basis();
  double lo = std::numeric_limits<double>::infinity(), hi = lo;
  const double kp2 = k.pinv_norm() * k.pinv_norm();
  for (Index j = 0; j < kSamples; ++j) {
    Vector f = su * c.rng.gaussian(su.cols(), 1, c.field);
    f.normalize();
    const double df = (d * f).norm();
    lo = std::min(lo, df - 1.0 / a.upper_bound);
    hi = std::min(hi, kp2 / a.lower_bound - df);
  }
  c.rec.slack("sandwich.lower", lo, kInequalitySlack);
  c.rec.slack("sandwich.upper", hi, kInequalitySlack);
}

// -- psi, duality, canonical dual, K*-lower bound ----------------------------

void check_psi(Context& c, const WeightedFamily& w, const WeightedFamily& v, const RangedOperator& k,
               const FusionAnalysis& a) {
  const PsiOperator psi = psi_operator(w, v, k, a);
  const Matrix dk = a.inverse().adjoint() * k.op();
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const Vector g = c.rng.gaussian(v.total_coord_dim(), 1, c.field);
    const Vector fast = psi.assembled * g;
    Vector slow(w.total_coord_dim());
    for (std::size_t i = 0; i < w.size(); ++i) {
      const Matrix& bw = w[i].subspace.basis();
      const Matrix& bv = v[i].subspace.basis();
      slow.segment(w.coord_offset(i), bw.cols()) = bw.adjoint() * (dk * (bv * g.segment(v.coord_offset(i), bv.cols())));
    }
    worst = std::max(worst, (fast - slow).norm() / std::max(1.0, slow.norm()));
  }
  c.rec.residual("psi", worst, kIdentityTol);
}

void check_kstar(Context& c, const WeightedFamily& w, const WeightedFamily& dual, const RangedOperator& k,
                 const FusionAnalysis& a) {
  const LowerBoundCheck lb = kstar_lower_bound_check(dual, w, k, a, c.tol);
  c.rec.slack("kstar.lower_bound", lb.min_slack, kInequalitySlack);
  // Doubling every weight only enlarges the left-hand side.
  std::vector<FusionMember> members = dual.members();
  for (auto& m : members) m.weight *= 2.0;
  const WeightedFamily doubled(dual.ambient_dim(), std::move(members));
  const Matrix battery = inequality_battery(doubled, k.adjoint(), c.tol, 200, splitmix(c.seed ^ 0x2));
  c.rec.slack("kstar.lower_bound", lower_inequality_slack(doubled, k.op(), lb.predicted, battery), kInequalitySlack);
  const WeightedFamily none = zero_family(c.n, w.size());
  c.rec.rejects("kstar.negative", [&] { (void)kstar_lower_bound_check(none, w, k, a, c.tol); });
}

void check_duality(Context& c, const WeightedFamily& w, const RangedOperator& k, const FusionAnalysis& a,
                   bool expect_hypothesis) {
  const auto hyp = canonical_dual_hypothesis(w, k, a);
  const double worst_hyp = hyp.empty() ? 0.0 : *std::max_element(hyp.begin(), hyp.end());
  if (expect_hypothesis) c.rec.residual("canonical_dual.hypothesis", worst_hyp, kHypothesisTol);
  if (worst_hyp <= c.tol.residual_rel) {
    const WeightedFamily dual = canonical_kdual_fusion(w, k, a, c.tol);
    const DualityResiduals r = verify_kdual_fusion(w, dual, k, a);
    c.rec.residual("kdual.sum", r.sum, c.tol.residual_rel);
    c.rec.residual("kdual.factored", r.factored, c.tol.residual_rel);
    c.rec.residual("kdual.forms_agree", std::abs(r.sum - r.factored), kIdentityTol);
    const double bessel = hermitian_eigenvalues(dual.frame_operator()).maxCoeff();
    c.rec.flag("canonical_dual.bessel", std::isfinite(bessel));
    check_kstar(c, w, dual, k, a);
  }
  // V inside ker K: every term K P_{V_i} vanishes, residual 1.
  const WeightedFamily killed = kernel_family(c.rng, k, w.size(), c.field, c.tol);
  c.rec.exceeds("kdual.negative", verify_kdual_fusion(w, killed, k, a).sum, c.tol.residual_rel);
}

void check_canonical_dual_negative(Context& c, const WeightedFamily& w) {
  // A rank-one K squeezes S_W(R(K)) to a line that the members do not fit in.
  const Vector u = c.rng.unit_vectors(c.n, 1, c.field).col(0);
  const RangedOperator k1(u * u.adjoint(), c.tol);
  const FusionAnalysis a1 = fusion_analyze(w, k1, c.tol);
  bool fits = true;
  for (const auto& m : w.members()) fits = fits && m.subspace.dim() <= 1;
  if (!a1.is_kfusion || fits) return;
  c.rec.rejects("canonical_dual.negative", [&] { (void)canonical_kdual_fusion(w, k1, a1, c.tol); });
}

// -- Local frames ------------------------------------------------------------

VectorFamily scaled_locals(Context& c, const WeightedFamily& w) {
  std::vector<Matrix> groups;
  for (const auto& m : w.members()) {
    const Matrix& b = m.subspace.basis();
    Matrix mix = c.rng.gaussian(b.cols(), b.cols() + 1, c.field);
    mix.leftCols(b.cols()) += 2.0 * Matrix::Identity(b.cols(), b.cols());
    groups.push_back(b * mix);
  }
  return VectorFamily(c.n, std::move(groups));
}

VectorFamily parseval_locals(const WeightedFamily& w) {
  std::vector<Matrix> groups;
  for (const auto& m : w.members()) groups.push_back(m.subspace.basis());
  return VectorFamily(w.ambient_dim(), std::move(groups));
}

void check_local(Context& c, const WeightedFamily& w, const RangedOperator& k, const FusionAnalysis& a) {
  const VectorFamily parseval = parseval_locals(w);
  const LocalToGlobal p = local_to_global(w, parseval, k, c.tol);
  c.rec.flag("local.equiv", p.equiv);
  c.rec.residual("local.parseval_frame_operator", (p.joined_analysis.frame_operator - a.frame_operator).norm(),
                 kIdentityTol);
  const VectorFamily scaled = scaled_locals(c, w);
  c.rec.flag("local.equiv", local_to_global(w, scaled, k, c.tol).equiv);
  const RangedOperator zero(Matrix::Zero(c.n, c.n), c.tol);
  c.rec.flag("local.equiv", local_to_global(w, parseval, zero, c.tol).equiv);

  std::vector<Matrix> short_groups = parseval.groups();
  bool dropped = false;
  for (auto& g : short_groups) {
    if (g.cols() > 0 && !dropped) {
      g = g.leftCols(g.cols() - 1).eval();
      dropped = true;
    }
  }
  if (dropped) {
    const VectorFamily bad(c.n, std::move(short_groups));
    c.rec.rejects("local.negative", [&] { (void)local_to_global(w, bad, k, c.tol); });
  }

  if (!a.is_kfusion) return;
  const LocalDualResult rp = local_dual_identities(w, k, parseval, canonical_local_duals(parseval, c.tol), c.tol);
  c.rec.residual("local_duals.res1", rp.res1, c.tol.residual_rel);
  c.rec.residual("local_duals.res2", rp.res2, c.tol.residual_rel);
  c.rec.flag("local_duals.parseval_detected", rp.coincide.has_value());
  if (rp.coincide) c.rec.residual("local_duals.coincide", *rp.coincide, kCoincideTol);
  const LocalDualResult rs = local_dual_identities(w, k, scaled, canonical_local_duals(scaled, c.tol), c.tol);
  c.rec.residual("local_duals.res1", rs.res1, c.tol.residual_rel);
  c.rec.residual("local_duals.res2", rs.res2, c.tol.residual_rel);

  std::vector<Matrix> doubled;
  for (const auto& g : scaled.groups()) doubled.push_back(2.0 * g);
  const VectorFamily wrong(c.n, std::move(doubled));
  c.rec.rejects("local_duals.negative", [&] { (void)local_dual_identities(w, k, scaled, wrong, c.tol); });
}

// -- Image families ----------------------------------------------------------

void check_mapped(Context& c, const WeightedFamily& w, const WeightedFamily& outside, const RangedOperator& k) {
  c.rec.flag("kw", map_family(Matrix(), w, k, MapMode::KW, c.tol).check.is_kfusion);
  c.rec.rejects("kw.negative", [&] { (void)map_family(Matrix(), outside, k, MapMode::KW, c.tol); });
  Matrix t;
  do {
    t = c.rng.gaussian(c.n, c.n, c.field);
  } while (smallest_singular_value(t) < 1e-3 * spectral_norm(t));
  c.rec.flag("tk", map_family(t, w, k, MapMode::TK, c.tol).check.is_kfusion);
  c.rec.rejects("tk.negative", [&] { (void)map_family(t, outside, k, MapMode::TK, c.tol); });
}

void check_lemma_v(Context& c) {
  for (int p = 0; p < 3; ++p) {
    const Subspace v =
        random_subspace_in(c.rng, Matrix::Identity(c.n, c.n), c.rng.uniform_index(0, c.n), c.field, c.tol);
    const Matrix t = random_rank_k(c.rng, c.n, c.rng.uniform_index(0, c.n), c.field);
    c.rec.residual("lemma_v", lemma_v_residual(v, t, c.tol), kLemmaTol);
  }
  // Projecting onto (TV)^perp instead of TV must break the identity.
  const Subspace v = random_subspace_in(c.rng, Matrix::Identity(c.n, c.n), c.rng.uniform_index(1, c.n - 1),
                                        c.field, c.tol);
  const Matrix t = c.rng.gaussian(c.n, c.n, c.field);
  const Matrix tv_perp = orthogonal_complement(make_subspace(t * v.basis(), c.tol).basis());
  const Matrix pvt = v.projector() * t.adjoint();
  c.rec.exceeds("lemma_v.negative", (pvt - pvt * projector(tv_perp)).norm(), kLemmaTol);
}

// -- Multipliers ---------------------------------------------------------------

void check_multiplier(Context& c, const WeightedFamily& w, const WeightedFamily& v, const RangedOperator& k,
                      const FusionAnalysis& a) {
  const std::vector<Scalar>& symbol = *c.inst.symbol;
  const MultiplierSpec spec{symbol, w, v, k};
  const MultiplierMatrix mm = build_multiplier(spec, a);
  // Term-by-term evaluation on the standard basis.
  const Matrix dstar = a.inverse().adjoint();
  Matrix slow(c.n, c.n);
  for (Index j = 0; j < c.n; ++j) {
    Vector acc = Vector::Zero(c.n);
    const Vector e = Vector::Unit(c.n, j);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const Vector inner = dstar * (k.op() * (v[i].subspace.projector() * e));
      acc += symbol[i] * w[i].weight * v[i].weight * (w[i].subspace.projector() * inner);
    }
    slow.col(j) = acc;
  }
  c.rec.residual("multiplier.definition", (mm.m - slow).norm() / std::max(1.0, slow.norm()), kIdentityTol);
  c.rec.slack("multiplier.bound", mm.bound - mm.norm, kInequalitySlack);

  const Matrix phi = c.rng.gaussian(c.n, c.n + 2, c.field);
  const Matrix psi = c.rng.gaussian(c.n, c.n + 2, c.field);
  std::vector<Scalar> m2;
  for (Index i = 0; i < c.n + 2; ++i) m2.emplace_back(c.rng.uniform(-2.0, 2.0), 0.0);
  const MultiplierMatrix om = ordinary_multiplier(m2, phi, psi);
  c.rec.slack("ordinary_multiplier.bound", om.bound - om.norm, kInequalitySlack);

  const MultiplierSpec ones{std::vector<Scalar>(w.size(), Scalar(1.0)), w, v, k};
  c.rec.residual("factorization", factorization_check(ones, a), kIdentityTol);
  c.rec.rejects("factorization.negative", [&] {
    std::vector<Scalar> off = ones.symbol;
    off[0] = Scalar(2.0);
    (void)factorization_check(MultiplierSpec{off, w, v, k}, a);
  });

  const WeightedFamily neg = off_range_family(c.rng, k, c.field, c.tol);
  const FusionAnalysis na = fusion_analyze(neg, k, c.tol);
  c.rec.rejects("multiplier.negative", [&] {
    (void)build_multiplier(MultiplierSpec{std::vector<Scalar>(neg.size(), Scalar(1.0)), neg, neg, k}, na);
  });

  // K-sided inverses: existence against a rank test of [M K] (right) and [M* K*] (left).
  for (Side side : {Side::right, Side::left}) {
    const SideInverse si = k_side_inverse(mm.m, k, side, c.tol);
    const Matrix a_op = side == Side::right ? mm.m : Matrix(mm.m.adjoint());
    const Matrix b_op = side == Side::right ? k.op() : Matrix(k.op().adjoint());
    Matrix joined(c.n, 2 * c.n);
    joined << a_op, b_op;
    const bool rank_says = numerical_rank(joined, c.tol) == numerical_rank(a_op, c.tol);
    c.rec.flag("inverse.agree", si.exists == rank_says);
    if (si.exists) c.rec.residual("inverse.residual", si.residual, c.tol.residual_rel);
    const SideInverse self = k_side_inverse(k.op(), k, side, c.tol);
    c.rec.flag("inverse.self", self.exists);
    c.rec.flag("inverse.negative", !k_side_inverse(Matrix::Zero(c.n, c.n), k, side, c.tol).exists);
  }

  // Lower K*-fusion bound from a K-left inverse of M.
  const SideInverse left = k_side_inverse(mm.m, k, Side::left, c.tol);
  if (left.exists) {
    const LowerBoundCheck lb = dual_lower_bound_from_multiplier(spec, a, LowerBoundCase::left_inverse, left.x, c.tol);
    c.rec.slack("lower_bound.left_inverse", lb.min_slack, kInequalitySlack);
  }
  // L = 0 is never a K-left inverse.
  c.rec.rejects("lower_bound.negative", [&] {
    (void)dual_lower_bound_from_multiplier(spec, a, LowerBoundCase::left_inverse, Matrix(Matrix::Zero(c.n, c.n)),
                                           c.tol);
  });
}

void check_m_equals_k(Context& c, const WeightedFamily& w, const RangedOperator& k, const FusionAnalysis& a) {
  // With K onto, the canonical K-dual V gives M_{1,W,V} = K.
  const WeightedFamily dual = canonical_kdual_fusion(w, k, a, c.tol);
  const MultiplierSpec spec{std::vector<Scalar>(w.size(), Scalar(1.0)), w, dual, k};
  c.rec.slack("lower_bound.m_equals_k",
              dual_lower_bound_from_multiplier(spec, a, LowerBoundCase::m_equals_k, std::nullopt, c.tol).min_slack,
              kInequalitySlack);
  const WeightedFamily other = build_family(c.inst.family("V"), c.n, c.tol);
  c.rec.rejects("lower_bound.m_equals_k.negative", [&] {
    (void)dual_lower_bound_from_multiplier(MultiplierSpec{spec.symbol, w, other, k}, a, LowerBoundCase::m_equals_k,
                                           std::nullopt, c.tol);
  });
}

// -- Invertibility -------------------------------------------------------------

void check_invertibility(Context& c, const WeightedFamily& v) {
  if (numerical_rank(v.synthesis(), c.tol) < c.n) return;
  const RangedOperator k(v.frame_operator(), c.tol);
  const InvertibilityResult same = invertibility_check(v, v, k, c.tol);
  c.rec.residual("invertibility.zero_perturbation", same.lhs, kIdentityTol);
  c.rec.flag("invertibility.zero_perturbation.invertible", same.invertible && same.neumann < 1.0);
  // Below this the admissible perturbation is smaller than the roundoff in lhs.
  if (same.rhs < kResolvableRhs) return;

  double theta = 0.5;
  for (int attempt = 0; attempt < 40; ++attempt, theta *= 0.5) {
    std::vector<FusionMember> rotated;
    for (const auto& m : v.members()) {
      const Matrix q = near_identity_unitary(c.rng, c.n, theta, c.field);
      rotated.push_back({Subspace::from_orthonormal(q * m.subspace.basis()), 1.0});
    }
    const WeightedFamily w(c.n, std::move(rotated));
    if (numerical_rank(w.synthesis(), c.tol) < c.n) continue;
    const InvertibilityResult r = invertibility_check(v, w, k, c.tol);
    if (!(r.lhs < 0.5 * r.rhs)) continue;
    c.rec.flag("invertibility.criterion", r.criterion_holds);
    c.rec.flag("invertibility.sigma_min", r.invertible && r.sigma_min_restricted > 0.0);
    c.rec.flag("invertibility.neumann", r.neumann < 1.0);
    c.rec.rejects("invertibility.negative", [&] { (void)invertibility_check(v.with_weights(2.0), w, k, c.tol); });
    return;
  }
  c.rec.flag("invertibility.criterion", false);
}

// -- Composition -------------------------------------------------------------

void check_composition(Context& c, const RangedOperator& k) {
  const auto fam = [&](const char* name) { return build_family(c.inst.family(name), c.n, c.tol); };
  const WeightedFamily w = fam("W"), v = fam("V"), z = fam("Z"), x = fam("X"), h = fam("H");
  const RangedOperator l(*c.inst.l, c.tol);
  c.rec.residual("composition", composition_check(w, v, z, x, k, l, c.tol), kCompositionTol);
  c.rec.residual("composition", composition_check(w, v, v, v, k, k, c.tol), kCompositionTol);
  if (w.size() >= 2) {
    c.rec.rejects("composition.negative", [&] { (void)composition_check(w, w, z, x, k, l, c.tol); });
  }

  const OnbCompositionResult onb = onb_composition_check(w, v, h, k, c.tol);
  c.rec.residual("onb_composition", onb.residual, kCompositionTol);
  c.rec.residual("onb_composition", onb_composition_check(w, v, v, k, c.tol).residual, kCompositionTol);
  if (w.size() >= 2) {
    c.rec.rejects("onb_composition.negative", [&] { (void)onb_composition_check(w, w, h, k, c.tol); });
  }
}

// -- Driver ------------------------------------------------------------------

void run_instance(std::vector<CheckRecord>& out, const SuiteOptions& opts, std::uint64_t seed, Index dim,
                  Structure structure) {
  const Tolerances& tol = opts.tol;
  const Instance inst = random_instance(suite_params(seed, dim, structure, tol));
  Recorder rec(out, seed, dim, structure);
  Rng rng(splitmix(seed ^ 0xc0ffee));
  Context c{rec, rng, inst, tol, opts, seed, dim, inst.field};

  const RangedOperator k(inst.k, tol);
  const WeightedFamily w = build_family(inst.family("W"), dim, tol);
  const WeightedFamily v = build_family(inst.family("V"), dim, tol);
  const FusionAnalysis a = fusion_analyze(w, k, tol);

  rec.guard("douglas", [&] { check_douglas(c); });
  rec.guard("lemma_v", [&] { check_lemma_v(c); });
  rec.guard("fusion", [&] { check_fusion(c, w, k, a); });
  rec.guard("kframe", [&] {
    std::vector<Matrix> joined;
    for (const auto& spec : inst.family("W")) joined.push_back(spec.weight * spec.vectors);
    check_kframe(c, VectorFamily(dim, std::move(joined)), k);
  });
  rec.flag("fusion.is_kfusion", a.is_kfusion);
  if (!a.is_kfusion) return;

  rec.guard("reconstruction", [&] { check_reconstruction(c, w, k, a); });
  rec.guard("sandwich", [&] { check_sandwich(c, k, a); });
  rec.guard("psi", [&] { check_psi(c, w, v, k, a); });
  rec.guard("kdual", [&] { check_duality(c, w, k, a, structure == Structure::k_invertible); });
  rec.guard("local", [&] { check_local(c, w, k, a); });
  rec.guard("multiplier", [&] { check_multiplier(c, w, v, k, a); });

  switch (structure) {
    case Structure::generic:
      rec.guard("invertibility", [&] { check_invertibility(c, w); });
      break;
    case Structure::k_invertible:
      rec.guard("canonical_dual", [&] { check_canonical_dual_negative(c, w); });
      rec.guard("lower_bound", [&] { check_m_equals_k(c, w, k, a); });
      rec.guard("invertibility", [&] { check_invertibility(c, w); });
      break;
    case Structure::inside_pinv_range:
      rec.guard("kw", [&] { check_mapped(c, w, v, k); });
      break;
    case Structure::block_orthogonal:
      rec.guard("composition", [&] { check_composition(c, k); });
      break;
  }
}

constexpr Structure kStructures[] = {Structure::generic, Structure::k_invertible, Structure::inside_pinv_range,
                                     Structure::block_orthogonal};

}  // namespace

std::uint64_t instance_seed(std::uint64_t suite_seed, Index trial, Index dim, Structure structure) {
  std::uint64_t h = splitmix(suite_seed);
  h = splitmix(h ^ static_cast<std::uint64_t>(trial));
  h = splitmix(h ^ static_cast<std::uint64_t>(dim));
  return splitmix(h ^ static_cast<std::uint64_t>(structure)) >> 11;  // stays exact as a JSON number
}

InstanceParams suite_params(std::uint64_t seed, Index n, Structure structure, const Tolerances& tol) {
  Rng rng(splitmix(seed ^ 0x5ca1ab1e));
  InstanceParams p;
  p.seed = seed;
  p.dim = n;
  p.structure = structure;
  p.tol = tol;
  p.field = rng.uniform(0.0, 1.0) < 0.5 ? Field::real : Field::complex;
  auto grow_to = [&](Index target, Index cap) {
    Index total = 0;
    for (Index d : p.subspace_dims) total += d;
    while (total < target) {
      const auto i = static_cast<std::size_t>(rng.uniform_index(0, p.n_subspaces - 1));
      if (p.subspace_dims[i] < cap) {
        ++p.subspace_dims[i];
        ++total;
      }
    }
  };
  switch (structure) {
    case Structure::generic:
    case Structure::k_invertible: {
      p.n_subspaces = rng.uniform_index(2, 4);
      for (Index i = 0; i < p.n_subspaces; ++i) p.subspace_dims.push_back(rng.uniform_index(1, n - 1));
      grow_to(n, n - 1);
      p.k_rank = structure == Structure::generic ? rng.uniform_index(1, n - 1) : n;
      break;
    }
    case Structure::inside_pinv_range: {
      p.k_rank = rng.uniform_index(1, n - 1);
      p.n_subspaces = rng.uniform_index(2, 4);
      for (Index i = 0; i < p.n_subspaces; ++i) p.subspace_dims.push_back(rng.uniform_index(1, p.k_rank));
      grow_to(p.k_rank, p.k_rank);
      break;
    }
    case Structure::block_orthogonal: {
      p.n_subspaces = rng.uniform_index(1, std::min<Index>(n, 4));
      p.subspace_dims.assign(static_cast<std::size_t>(p.n_subspaces), 1);
      grow_to(n, n);
      p.k_rank = rng.uniform_index(1, n);
      break;
    }
  }
  return p;
}

Matrix near_identity_unitary(Rng& rng, Index n, double theta, Field field) {
  const Matrix g = rng.gaussian(n, n, field);
  const Matrix a = 0.5 * theta * (g - g.adjoint());
  const Matrix id = Matrix::Identity(n, n);
  return (id - 0.5 * a).partialPivLu().solve(id + 0.5 * a);
}

VerificationReport run_suite(const SuiteOptions& opts) {
  opts.tol.validate();
  if (opts.trials < 1) throw ValidationError("suite: trials must be at least 1");
  if (opts.dim_lo < 2 || opts.dim_hi > 10 || opts.dim_lo > opts.dim_hi) {
    throw ValidationError("suite: dims must form a range inside [2, 10]");
  }
  if (opts.oracle_samples < 1) throw ValidationError("suite: oracle samples must be positive");
  const auto start = std::chrono::steady_clock::now();
  VerificationReport report;
  report.seed = opts.seed;
  report.trials = opts.trials;
  report.dim_lo = opts.dim_lo;
  report.dim_hi = opts.dim_hi;
  report.tol = opts.tol;
  for (Index trial = 0; trial < opts.trials; ++trial) {
    for (Index dim = opts.dim_lo; dim <= opts.dim_hi; ++dim) {
      for (Structure s : kStructures) {
        const std::uint64_t seed = instance_seed(opts.seed, trial, dim, s);
        try {
          run_instance(report.records, opts, seed, dim, s);
        } catch (const DiagnosticError& e) {
          std::ostringstream msg;
          msg << e.what() << " [instance seed " << seed << ", dim " << dim << ", structure " << to_string(s) << "]";
          throw DiagnosticError(msg.str());
        }
        ++report.instances;
      }
    }
  }
  std::stable_sort(report.records.begin(), report.records.end(), [](const CheckRecord& a, const CheckRecord& b) {
    return a.check != b.check ? a.check < b.check : a.seed < b.seed;
  });
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace kfusion
