#include "kfusion/cli.hpp"

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "CLI11.hpp"

#include "kfusion/errors.hpp"
#include "kfusion/fusion.hpp"
#include "kfusion/harness.hpp"
#include "kfusion/instance_io.hpp"
#include "kfusion/kframes.hpp"
#include "kfusion/multipliers.hpp"

namespace kfusion {

using nlohmann::json;

namespace {

constexpr double kIdentityTol = 1e-12;
constexpr double kLemmaTol = 1e-10;
constexpr double kCoincideTol = 1e-9;
constexpr Index kBatterySize = 100;
constexpr std::uint64_t kBatterySeed = 0x5eedULL;

// ---------------------------------------------------------------------------
// Check outcomes

enum class Status { pass, fail, precondition, skipped };

std::string_view to_string(Status s) {
  switch (s) {
    case Status::pass: return "pass";
    case Status::fail: return "fail";
    case Status::precondition: return "precondition";
    case Status::skipped: return "skipped";
  }
  return "fail";
}

struct Outcome {
  explicit Outcome(std::string name, Status s = Status::pass, std::string why = {})
      : check(std::move(name)), status(s), note(std::move(why)) {}

  std::string check;
  Status status;
  std::vector<std::pair<std::string, double>> values;
  std::vector<std::pair<std::string, bool>> flags;
  std::string note;

  void value(const std::string& name, double v) { values.emplace_back(name, v); }
  void flag(const std::string& name, bool v) { flags.emplace_back(name, v); }
  /// Records a residual against its threshold; a miss fails the check.
  void residual(const std::string& name, double v, double threshold) {
    value(name, v);
    value(name + "_threshold", threshold);
    if (!(v <= threshold)) status = Status::fail;
  }
  void require(const std::string& name, bool v) {
    flag(name, v);
    if (!v) status = Status::fail;
  }
};

struct Context {
  const Instance& inst;
  const Tolerances& tol;
  RangedOperator k;

  WeightedFamily family(const std::string& name) const { return build_family(inst.family(name), inst.dim, tol); }
  std::vector<Scalar> symbol(std::size_t size) const {
    return inst.symbol ? *inst.symbol : std::vector<Scalar>(size, Scalar(1.0));
  }
  Matrix battery() const {
    Matrix b(inst.dim, inst.dim + kBatterySize);
    b << Matrix::Identity(inst.dim, inst.dim), unit_battery(inst.dim, kBatterySize, kBatterySeed, inst.field);
    return b;
  }
};

FusionAnalysis require_kfusion(const WeightedFamily& w, const RangedOperator& k, const Tolerances& tol,
                               const std::string& name) {
  FusionAnalysis a = fusion_analyze(w, k, tol);
  if (!a.is_kfusion) throw PreconditionError("family " + name + " is not a K-fusion frame");
  return a;
}

VectorFamily weighted_locals(const FamilySpecs& specs, Index n) {
  std::vector<Matrix> groups;
  for (const auto& s : specs) groups.push_back(s.weight * s.vectors);
  return VectorFamily(n, std::move(groups));
}

// ---------------------------------------------------------------------------
// Checks

Outcome check_reconstruction(const Context& c) {
  Outcome o{"reconstruction"};
  const WeightedFamily w = c.family("W");
  const FusionAnalysis a = require_kfusion(w, c.k, c.tol, "W");
  const Matrix b = c.battery();
  double worst = 0.0;
  for (Index j = 0; j < b.cols(); ++j) worst = std::max(worst, reconstruct(w, c.k, a, b.col(j)).residual);
  o.residual("residual", worst, c.tol.residual_rel);
  return o;
}

Outcome check_kdual(const Context& c) {
  Outcome o{"kdual"};
  const WeightedFamily w = c.family("W");
  const WeightedFamily v = c.family("V");
  const FusionAnalysis a = require_kfusion(w, c.k, c.tol, "W");
  const DualityResiduals r = verify_kdual_fusion(w, v, c.k, a);
  o.residual("residual_sum", r.sum, c.tol.residual_rel);
  o.residual("residual_factored", r.factored, c.tol.residual_rel);
  o.residual("forms_difference", std::abs(r.sum - r.factored), kIdentityTol);
  if (o.status == Status::pass) {
    const LowerBoundCheck lb = kstar_lower_bound_check(v, w, c.k, a, c.tol);
    o.value("kstar_predicted_A", lb.predicted);
    o.value("kstar_min_slack", lb.min_slack);
    o.require("kstar_lower_bound_holds", lb.holds);
  }
  return o;
}

Outcome check_canonical_dual(const Context& c) {
  Outcome o{"canonical-dual"};
  const WeightedFamily w = c.family("W");
  const FusionAnalysis a = require_kfusion(w, c.k, c.tol, "W");
  const auto hyp = canonical_dual_hypothesis(w, c.k, a);
  o.value("hypothesis_residual", hyp.empty() ? 0.0 : *std::max_element(hyp.begin(), hyp.end()));
  const WeightedFamily dual = canonical_kdual_fusion(w, c.k, a, c.tol);
  const DualityResiduals r = verify_kdual_fusion(w, dual, c.k, a);
  o.residual("residual_sum", r.sum, c.tol.residual_rel);
  o.residual("residual_factored", r.factored, c.tol.residual_rel);
  const double bessel = hermitian_eigenvalues(dual.frame_operator()).maxCoeff();
  o.value("dual_bessel_bound", bessel);
  o.require("dual_bessel_finite", std::isfinite(bessel));
  return o;
}

Outcome check_kframe(const Context& c) {
  Outcome o{"kframe"};
  const VectorFamily f = weighted_locals(c.inst.family("W"), c.inst.dim);
  const KFrameAnalysis a = kframe_analyze(f, c.k, c.tol);
  o.value("A_opt", a.lower_bound);
  o.value("B_opt", a.upper_bound);
  o.flag("vacuous", a.vacuous);
  o.require("is_kframe", a.is_kframe);
  if (!a.is_kframe) return o;
  const Matrix flat = f.flat();
  const Matrix b = c.battery();
  double lo = std::numeric_limits<double>::infinity(), hi = lo;
  for (Index j = 0; j < b.cols(); ++j) {
    const double sum = (flat.adjoint() * b.col(j)).squaredNorm();
    if (!a.vacuous) lo = std::min(lo, sum - a.lower_bound * (c.k.op().adjoint() * b.col(j)).squaredNorm());
    hi = std::min(hi, a.upper_bound * b.col(j).squaredNorm() - sum);
  }
  if (!a.vacuous) {
    o.value("lower_slack", lo);
    o.require("lower_inequality", lo >= -kInequalitySlack);
    const VectorFamily g = canonical_kdual_vec(f, c.k, c.tol);
    o.residual("canonical_kdual_residual", verify_kdual_vec(f, g, c.k), c.tol.residual_rel);
  }
  o.value("upper_slack", hi);
  o.require("upper_inequality", hi >= -kInequalitySlack);
  return o;
}

Outcome check_local(const Context& c) {
  Outcome o{"local"};
  const WeightedFamily w = c.family("W");
  const VectorFamily locals = local_vectors(c.inst.family("W"), c.inst.dim);
  const LocalToGlobal r = local_to_global(w, locals, c.k, c.tol);
  o.value("joined_A_opt", r.joined_analysis.lower_bound);
  o.value("fusion_A_opt", r.fusion_analysis.lower_bound);
  o.flag("joined_is_kframe", r.joined_analysis.is_kframe);
  o.flag("is_kfusion", r.fusion_analysis.is_kfusion);
  o.require("equiv", r.equiv);
  return o;
}

Outcome check_local_duals(const Context& c) {
  Outcome o{"local-duals"};
  const WeightedFamily w = c.family("W");
  require_kfusion(w, c.k, c.tol, "W");
  const VectorFamily locals = local_vectors(c.inst.family("W"), c.inst.dim);
  const LocalDualResult r = local_dual_identities(w, c.k, locals, canonical_local_duals(locals, c.tol), c.tol);
  o.residual("res1", r.res1, c.tol.residual_rel);
  o.residual("res2", r.res2, c.tol.residual_rel);
  o.flag("parseval_locals", r.coincide.has_value());
  if (r.coincide) o.residual("coincide", *r.coincide, kCoincideTol);
  return o;
}

Outcome check_kw(const Context& c) {
  Outcome o{"kw"};
  const WeightedFamily w = c.family("W");
  const MappedFamily kw = map_family(Matrix(), w, c.k, MapMode::KW, c.tol);
  o.value("KW_A_opt", kw.check.lower_bound);
  o.require("KW_is_kfusion", kw.check.is_kfusion);
  // T: a seeded well-conditioned operator, or L when the instance has one.
  Matrix t;
  if (c.inst.l && smallest_singular_value(*c.inst.l) > 0.0) {
    t = *c.inst.l;
  } else {
    Rng rng(kBatterySeed);
    do {
      t = rng.gaussian(c.inst.dim, c.inst.dim, c.inst.field);
    } while (smallest_singular_value(t) < 1e-3 * spectral_norm(t));
  }
  const MappedFamily tk = map_family(t, w, c.k, MapMode::TK, c.tol);
  o.value("TK_A_opt", tk.check.lower_bound);
  o.require("TK_is_kfusion", tk.check.is_kfusion);
  return o;
}

Outcome check_lemma_v(const Context& c) {
  Outcome o{"lemma-v"};
  double worst = 0.0;
  std::vector<Matrix> ts{c.k.op()};
  if (c.inst.l) ts.push_back(*c.inst.l);
  for (const auto& [name, specs] : c.inst.families) {
    const WeightedFamily f = build_family(specs, c.inst.dim, c.tol);
    for (const auto& m : f.members()) {
      for (const auto& t : ts) worst = std::max(worst, lemma_v_residual(m.subspace, t, c.tol));
    }
  }
  o.residual("max_residual", worst, kLemmaTol);
  return o;
}

Outcome check_multiplier(const Context& c) {
  Outcome o{"multiplier"};
  const WeightedFamily w = c.family("W");
  const WeightedFamily v = c.family("V");
  const FusionAnalysis a = require_kfusion(w, c.k, c.tol, "W");
  const MultiplierMatrix m = build_multiplier(MultiplierSpec{c.symbol(w.size()), w, v, c.k}, a);
  o.value("norm", m.norm);
  o.value("bound", m.bound);
  o.value("slack", m.bound - m.norm);
  o.require("bound_holds", m.bound_holds);
  return o;
}

Outcome check_factorization(const Context& c) {
  Outcome o{"factorization"};
  const WeightedFamily w = c.family("W");
  const WeightedFamily v = c.family("V");
  const FusionAnalysis a = require_kfusion(w, c.k, c.tol, "W");
  o.residual("residual", factorization_check(MultiplierSpec{std::vector<Scalar>(w.size(), 1.0), w, v, c.k}, a),
             kIdentityTol);
  return o;
}

Outcome check_inverse(const Context& c) {
  Outcome o{"inverse"};
  const WeightedFamily w = c.family("W");
  const WeightedFamily v = c.family("V");
  const FusionAnalysis a = require_kfusion(w, c.k, c.tol, "W");
  const MultiplierMatrix m = build_multiplier(MultiplierSpec{c.symbol(w.size()), w, v, c.k}, a);
  for (Side side : {Side::right, Side::left}) {
    const std::string tag = side == Side::right ? "right" : "left";
    const SideInverse si = k_side_inverse(m.m, c.k, side, c.tol);
    o.flag(tag + "_exists", si.exists);
    if (si.exists) o.residual(tag + "_residual", si.residual, c.tol.residual_rel);
  }
  return o;
}

Outcome check_lower_bound(const Context& c) {
  Outcome o{"lower-bound"};
  const WeightedFamily w = c.family("W");
  const WeightedFamily v = c.family("V");
  const FusionAnalysis a = require_kfusion(w, c.k, c.tol, "W");
  const MultiplierSpec spec{c.symbol(w.size()), w, v, c.k};
  const MultiplierMatrix m = build_multiplier(spec, a);
  if (c.k.is_zero()) throw PreconditionError("lower bound: K = 0");
  LowerBoundCheck lb;
  if (relative_residual(m.m, c.k.op()) <= c.tol.residual_rel) {
    o.note = "case M = K";
    lb = dual_lower_bound_from_multiplier(spec, a, LowerBoundCase::m_equals_k, std::nullopt, c.tol);
  } else {
    const SideInverse left = k_side_inverse(m.m, c.k, Side::left, c.tol);
    if (!left.exists) throw PreconditionError("lower bound: M differs from K and has no K-left inverse");
    o.note = "case K-left inverse";
    lb = dual_lower_bound_from_multiplier(spec, a, LowerBoundCase::left_inverse, left.x, c.tol);
  }
  o.value("predicted_A", lb.predicted);
  o.value("min_slack", lb.min_slack);
  o.require("holds", lb.holds);
  return o;
}

Outcome check_invertibility(const Context& c) {
  Outcome o{"invertibility"};
  const WeightedFamily v = c.family("V");
  const WeightedFamily w = c.family("W");
  const InvertibilityResult r = invertibility_check(v, w, c.k, c.tol);
  o.value("lhs", r.lhs);
  o.value("lhs_unprojected", r.lhs_unprojected);
  o.value("rhs", r.rhs);
  o.value("sigma_min_restricted", r.sigma_min_restricted);
  o.value("neumann", r.neumann);
  o.value("leakage", r.leakage);
  o.flag("criterion_holds", r.criterion_holds);
  o.flag("invertible", r.invertible);
  if (r.criterion_holds) o.require("conclusion", r.invertible && r.neumann < 1.0);
  return o;
}

Outcome check_composition(const Context& c) {
  Outcome o{"composition"};
  if (!c.inst.l) throw UsageError("check 'composition' requires the operator L");
  const RangedOperator l(*c.inst.l, c.tol);
  o.residual("residual",
             composition_check(c.family("W"), c.family("V"), c.family("Z"), c.family("X"), c.k, l, c.tol),
             c.tol.residual_rel);
  return o;
}

Outcome check_onb_composition(const Context& c) {
  Outcome o{"onb-composition"};
  const OnbCompositionResult r = onb_composition_check(c.family("W"), c.family("V"), c.family("H"), c.k, c.tol);
  o.residual("residual", r.residual, c.tol.residual_rel);
  o.value("residual_k_middle", r.residual_k_middle);
  return o;
}

struct CheckDef {
  std::string name;
  std::vector<std::string> families;
  bool needs_l;
  std::function<Outcome(const Context&)> run;
};

const std::vector<CheckDef>& registry() {
  static const std::vector<CheckDef> defs = {
      {"reconstruction", {"W"}, false, check_reconstruction},
      {"kdual", {"W", "V"}, false, check_kdual},
      {"canonical-dual", {"W"}, false, check_canonical_dual},
      {"kframe", {"W"}, false, check_kframe},
      {"local", {"W"}, false, check_local},
      {"local-duals", {"W"}, false, check_local_duals},
      {"kw", {"W"}, false, check_kw},
      {"lemma-v", {}, false, check_lemma_v},
      {"multiplier", {"W", "V"}, false, check_multiplier},
      {"factorization", {"W", "V"}, false, check_factorization},
      {"inverse", {"W", "V"}, false, check_inverse},
      {"lower-bound", {"W", "V"}, false, check_lower_bound},
      {"invertibility", {"W", "V"}, false, check_invertibility},
      {"composition", {"W", "V", "Z", "X"}, true, check_composition},
      {"onb-composition", {"W", "V", "H"}, false, check_onb_composition},
  };
  return defs;
}

std::string missing_requirement(const CheckDef& def, const Instance& inst) {
  std::vector<std::string> missing;
  for (const auto& f : def.families) {
    if (!inst.has_family(f)) missing.push_back("family " + f);
  }
  if (def.needs_l && !inst.l) missing.push_back("operator L");
  if (missing.empty()) return {};
  std::string out = "check '" + def.name + "' requires ";
  for (std::size_t i = 0; i < missing.size(); ++i) out += (i ? ", " : "") + missing[i];
  return out;
}

// ---------------------------------------------------------------------------
// Output helpers

std::string fmt(double x) {
  std::ostringstream s;
  s << std::setprecision(6) << x;
  return s.str();
}

json outcome_json(const Outcome& o) {
  json values = json::object();
  for (const auto& [k, v] : o.values) values[k] = json_number(v);
  for (const auto& [k, v] : o.flags) values[k] = v;
  json out{{"check", o.check}, {"status", std::string(to_string(o.status))}, {"values", std::move(values)}};
  if (!o.note.empty()) out["note"] = o.note;
  return out;
}

void print_outcome(std::ostream& out, const Outcome& o) {
  std::string status(to_string(o.status));
  for (auto& ch : status) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  out << o.check << ": " << status;
  if (!o.note.empty()) out << " (" << o.note << ")";
  out << "\n";
  for (const auto& [k, v] : o.values) {
    if (k.size() > 10 && k.compare(k.size() - 10, 10, "_threshold") == 0) continue;
    out << "  " << k << " = " << fmt(v);
    for (const auto& [kt, vt] : o.values) {
      if (kt == k + "_threshold") out << " (threshold " << fmt(vt) << ")";
    }
    out << "\n";
  }
  for (const auto& [k, v] : o.flags) out << "  " << k << " = " << (v ? "true" : "false") << "\n";
}

struct LoadedInstance {
  Instance inst;
  Tolerances tol;
};

LoadedInstance load(const std::string& path, const std::optional<double>& tol_flag) {
  LoadedInstance out{load_instance(path), {}};
  const double* flag = tol_flag ? &*tol_flag : nullptr;
  out.tol = resolve_tolerances(out.inst.tol_explicit ? &out.inst.tol : nullptr, flag);
  return out;
}

void emit(std::ostream& out, const std::optional<std::string>& path, const std::string& text) {
  if (path) {
    write_file_atomic(*path, text);
  } else {
    out << text;
  }
}

// ---------------------------------------------------------------------------
// Commands

int cmd_analyze(const std::string& path, const std::optional<double>& tol_flag, bool as_json, std::ostream& out) {
  const LoadedInstance li = load(path, tol_flag);
  const RangedOperator k(li.inst.k, li.tol);
  json families = json::object();
  std::ostringstream text;
  text << "dim " << li.inst.dim << ", field " << to_string(li.inst.field) << ", rank K " << k.rank()
       << ", ||K|| " << fmt(k.norm()) << ", ||K^dagger|| " << fmt(k.pinv_norm()) << "\n";
  for (const auto& [name, specs] : li.inst.families) {
    const WeightedFamily w = build_family(specs, li.inst.dim, li.tol);
    const FusionAnalysis a = fusion_analyze(w, k, li.tol);
    families[name] = json{{"members", w.size()},
                          {"is_bessel", a.is_bessel},
                          {"is_kfusion", a.is_kfusion},
                          {"vacuous", a.vacuous},
                          {"A_opt", json_number(a.lower_bound)},
                          {"B_opt", json_number(a.upper_bound)},
                          {"K_pinv_norm", k.pinv_norm()},
                          {"douglas_range_inclusion", a.douglas.holds}};
    text << "family " << name << " (" << w.size() << " members)\n"
         << "  is_bessel = " << (a.is_bessel ? "true" : "false") << "\n"
         << "  is_kfusion = " << (a.is_kfusion ? "true" : "false") << (a.vacuous ? " (vacuous: K = 0)" : "") << "\n"
         << "  A_opt = " << fmt(a.lower_bound) << "\n"
         << "  B_opt = " << fmt(a.upper_bound) << "\n"
         << "  ||K^dagger|| = " << fmt(k.pinv_norm()) << "\n"
         << "  Douglas R(K) in R(T_W) = " << (a.douglas.holds ? "true" : "false") << "\n";
  }
  if (as_json) {
    const json report{{"schema_version", kSchemaVersion},
                      {"kind", "analyze"},
                      {"dim", li.inst.dim},
                      {"field", std::string(to_string(li.inst.field))},
                      {"tol", json_tolerances(li.tol)},
                      {"K", {{"rank", k.rank()}, {"norm", k.norm()}, {"pinv_norm", k.pinv_norm()}}},
                      {"families", std::move(families)}};
    out << report.dump(2) << "\n";
  } else {
    out << text.str();
  }
  return kExitPass;
}

int cmd_verify(const std::string& path, const std::string& check, const std::optional<double>& tol_flag, bool as_json,
               std::ostream& out) {
  const LoadedInstance li = load(path, tol_flag);
  const Context ctx{li.inst, li.tol, RangedOperator(li.inst.k, li.tol)};
  std::vector<Outcome> outcomes;
  int code = kExitPass;
  if (check == "all") {
    for (const auto& def : registry()) {
      const std::string missing = missing_requirement(def, li.inst);
      if (!missing.empty()) {
        outcomes.push_back(Outcome(def.name, Status::skipped, missing));
        continue;
      }
      try {
        outcomes.push_back(def.run(ctx));
      } catch (const PreconditionError& e) {
        outcomes.push_back(Outcome(def.name, Status::precondition, e.what()));
      }
      if (outcomes.back().status == Status::fail) code = kExitFail;
    }
  } else {
    const auto it = std::find_if(registry().begin(), registry().end(), [&](const auto& d) { return d.name == check; });
    if (it == registry().end()) throw UsageError("unknown check '" + check + "'");
    const std::string missing = missing_requirement(*it, li.inst);
    if (!missing.empty()) throw UsageError(missing);
    outcomes.push_back(it->run(ctx));
    if (outcomes.back().status == Status::fail) code = kExitFail;
  }
  if (as_json) {
    json results = json::array();
    for (const auto& o : outcomes) results.push_back(outcome_json(o));
    const json report{{"schema_version", kSchemaVersion}, {"kind", "verify"},         {"check", check},
                      {"tol", json_tolerances(li.tol)},   {"pass", code == kExitPass}, {"results", std::move(results)}};
    out << report.dump(2) << "\n";
  } else {
    for (const auto& o : outcomes) print_outcome(out, o);
  }
  return code;
}

std::vector<Index> default_subspace_dims(Structure s, Index n, Index m, Index k) {
  auto ceil_div = [](Index a, Index b) { return (a + b - 1) / b; };
  switch (s) {
    case Structure::block_orthogonal: {
      if (m > n) throw ValidationError("block_orthogonal: more blocks than dimensions");
      std::vector<Index> dims(static_cast<std::size_t>(m), n / m);
      for (Index i = 0; i < n % m; ++i) ++dims[static_cast<std::size_t>(i)];
      return dims;
    }
    case Structure::inside_pinv_range:
      return std::vector<Index>(static_cast<std::size_t>(m), std::max<Index>(1, std::min(k, ceil_div(k, m))));
    case Structure::generic:
    case Structure::k_invertible:
      return std::vector<Index>(static_cast<std::size_t>(m), std::max<Index>(1, ceil_div(n, m)));
  }
  return {};
}

struct RandomArgs {
  Index dim = 4;
  Index subspaces = 3;
  std::uint64_t seed = 1;
  std::optional<Index> rank_k;
  std::string structure = "generic";
  std::string field = "complex";
  std::vector<Index> subspace_dims;
  std::optional<std::string> out;
};

int cmd_random(const RandomArgs& a, const std::optional<double>& tol_flag, std::ostream& out) {
  if (a.dim < 1) throw UsageError("--dim must be at least 1");
  if (a.subspaces < 1) throw UsageError("--subspaces must be at least 1");
  InstanceParams p;
  p.seed = a.seed;
  p.dim = a.dim;
  p.n_subspaces = a.subspaces;
  p.structure = parse_structure(a.structure);
  p.field = parse_field(a.field);
  p.k_rank = a.rank_k ? *a.rank_k : (p.structure == Structure::inside_pinv_range ? std::max<Index>(1, a.dim - 1) : a.dim);
  p.subspace_dims = a.subspace_dims.empty() ? default_subspace_dims(p.structure, a.dim, a.subspaces, p.k_rank)
                                            : a.subspace_dims;
  p.tol = resolve_tolerances(nullptr, tol_flag ? &*tol_flag : nullptr);
  Instance inst = random_instance(p);
  inst.tol_explicit = tol_flag.has_value();
  emit(out, a.out, serialize_instance(inst));
  return kExitPass;
}

int cmd_dual(const std::string& path, const std::string& source, const std::string& target,
             const std::optional<double>& tol_flag, const std::optional<std::string>& out_path, std::ostream& out) {
  LoadedInstance li = load(path, tol_flag);
  const RangedOperator k(li.inst.k, li.tol);
  const WeightedFamily w = build_family(li.inst.family(source), li.inst.dim, li.tol);
  const FusionAnalysis a = require_kfusion(w, k, li.tol, source);
  const WeightedFamily dual = canonical_kdual_fusion(w, k, a, li.tol);
  FamilySpecs specs;
  for (const auto& m : dual.members()) specs.push_back({m.subspace.basis(), m.weight});
  li.inst.families[target] = std::move(specs);
  emit(out, out_path, serialize_instance(li.inst));
  return kExitPass;
}

std::pair<Index, Index> parse_dims(const std::string& text) {
  const auto sep = text.find_first_of(":-");
  try {
    std::size_t used = 0;
    if (sep == std::string::npos) {
      const Index d = std::stol(text, &used);
      if (used != text.size()) throw std::invalid_argument("trailing");
      return {d, d};
    }
    const Index lo = std::stol(text.substr(0, sep), &used);
    if (used != sep) throw std::invalid_argument("trailing");
    const std::string rest = text.substr(sep + 1);
    const Index hi = std::stol(rest, &used);
    if (used != rest.size()) throw std::invalid_argument("trailing");
    return {lo, hi};
  } catch (const std::logic_error&) {
    throw UsageError("--dims expects N or LO:HI, got '" + text + "'");
  }
}

int cmd_suite(const SuiteOptions& opts, bool as_json, const std::optional<std::string>& out_path, std::ostream& out) {
  const VerificationReport report = run_suite(opts);
  if (as_json) {
    emit(out, out_path, report_to_json(report).dump(2) + "\n");
  } else {
    std::ostringstream text;
    text << "suite seed " << report.seed << ", trials " << report.trials << ", dims " << report.dim_lo << ".."
         << report.dim_hi << ": " << report.instances << " instances, " << report.records.size() << " records, "
         << report.failed() << " failed, " << fmt(report.wall_seconds) << " s\n";
    for (const auto& [name, s] : report.summary()) {
      text << "  " << (s.failed == 0 ? "PASS " : "FAIL ") << std::left << std::setw(40) << name << " n=" << s.count
           << " worst=" << fmt(s.worst) << "\n";
    }
    for (const auto& r : report.records) {
      if (!r.pass) {
        text << "  failed: " << r.check << " seed " << r.seed << " dim " << r.dim << " (" << r.structure
             << ") value " << fmt(r.value) << " threshold " << fmt(r.threshold) << "\n";
      }
    }
    emit(out, out_path, text.str());
  }
  return report.all_pass() ? kExitPass : kExitFail;
}

}  // namespace

const std::vector<std::string>& check_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& d : registry()) out.push_back(d.name);
    out.push_back("all");
    return out;
  }();
  return names;
}

Tolerances resolve_tolerances(const Tolerances* from_file, const double* from_flag) {
  Tolerances tol;
  if (const char* env = std::getenv(kTolEnv); env != nullptr && *env != '\0') {
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(env, &end);
    if (errno != 0 || end == env || *end != '\0' || !std::isfinite(v) || !(v > 0.0)) {
      throw ValidationError(std::string(kTolEnv) + ": expected a positive number, got '" + env + "'");
    }
    tol.residual_rel = v;
  }
  if (from_file) tol = *from_file;
  if (from_flag) tol.residual_rel = *from_flag;
  tol.validate();
  return tol;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"K-fusion frame analysis and verification"};
  app.require_subcommand(1);

  std::optional<double> tol_flag;
  bool as_json = false;
  std::string path;

  auto* analyze = app.add_subcommand("analyze", "Bounds and K-fusion verdicts for every family of an instance");
  analyze->add_option("path", path, "Instance file")->required();
  analyze->add_flag("--json", as_json, "Emit the JSON report");
  analyze->add_option("--tol", tol_flag, "Residual tolerance");

  std::string check = "all";
  auto* verify = app.add_subcommand("verify", "Run one named check (or all) on an instance");
  verify->add_option("path", path, "Instance file")->required();
  verify->add_option("--check", check, "Check name")->check(CLI::IsMember(check_names()));
  verify->add_option("--tol", tol_flag, "Residual tolerance");
  verify->add_flag("--json", as_json, "Emit the JSON report");

  RandomArgs ra;
  auto* random = app.add_subcommand("random", "Write a seeded random instance");
  random->add_option("--dim", ra.dim, "Ambient dimension");
  random->add_option("--subspaces", ra.subspaces, "Number of subspaces per family");
  random->add_option("--seed", ra.seed, "Seed");
  random->add_option("--rank-k", ra.rank_k, "Rank of K");
  random->add_option("--structure", ra.structure, "generic | k_invertible | inside_pinv_range | block_orthogonal")
      ->check(CLI::IsMember({"generic", "k_invertible", "inside_pinv_range", "block_orthogonal"}));
  random->add_option("--field", ra.field, "real | complex")->check(CLI::IsMember({"real", "complex"}));
  random->add_option("--subspace-dims", ra.subspace_dims, "Dimension of each subspace")->delimiter(',');
  random->add_option("--out", ra.out, "Output file (stdout when absent)");
  random->add_option("--tol", tol_flag, "Residual tolerance stored in the instance");

  SuiteOptions so;
  std::string dims = "2:8";
  std::optional<std::string> suite_out;
  auto* suite = app.add_subcommand("suite", "Run the seeded property suite");
  suite->add_option("--seed", so.seed, "Suite seed");
  suite->add_option("--trials", so.trials, "Trials per dimension and structure");
  suite->add_option("--dims", dims, "Dimension N or range LO:HI inside [2, 10]");
  suite->add_option("--oracle-samples", so.oracle_samples, "Samples for the Rayleigh oracle");
  suite->add_option("--tol", tol_flag, "Residual tolerance");
  suite->add_flag("--json", as_json, "Emit the JSON report");
  suite->add_option("--out", suite_out, "Write the report to a file");

  std::string source = "W", target = "V";
  std::optional<std::string> dual_out;
  auto* dual = app.add_subcommand("dual", "Add the canonical K-dual of a family to an instance");
  dual->add_option("path", path, "Instance file")->required();
  dual->add_option("--family", source, "Family to dualize");
  dual->add_option("--as", target, "Name of the dual family");
  dual->add_option("--out", dual_out, "Output file (stdout when absent)");
  dual->add_option("--tol", tol_flag, "Residual tolerance");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitPass;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitPass;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*analyze) return cmd_analyze(path, tol_flag, as_json, out);
    if (*verify) return cmd_verify(path, check, tol_flag, as_json, out);
    if (*random) return cmd_random(ra, tol_flag, out);
    if (*dual) return cmd_dual(path, source, target, tol_flag, dual_out, out);
    if (*suite) {
      const auto [lo, hi] = parse_dims(dims);
      so.dim_lo = lo;
      so.dim_hi = hi;
      so.tol = resolve_tolerances(nullptr, tol_flag ? &*tol_flag : nullptr);
      return cmd_suite(so, as_json, suite_out, out);
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ValidationError& e) {
    err << "validation error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const PreconditionError& e) {
    err << "precondition violated: " << e.what() << "\n";
    return kExitPrecondition;
  } catch (const DiagnosticError& e) {
    err << "diagnostic failure: " << e.what() << "\n";
    return kExitFail;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitFail;
  }
  return kExitUsage;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace kfusion
