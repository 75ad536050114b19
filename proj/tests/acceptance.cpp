// Acceptance run: the full seeded suite plus CLI pipeline checks, one
// PASS/FAIL line per criterion. Usage: acceptance <path-to-kfusion-binary>

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "kfusion/harness.hpp"
#include "kfusion/instance_io.hpp"

using namespace kfusion;
namespace fs = std::filesystem;

namespace {

struct Selection {
  std::size_t records = 0;
  std::size_t failed = 0;
  std::set<std::uint64_t> seeds;
  double worst = 0.0;  // largest residual or most negative slack seen
};

bool matches(const std::string& check, const std::string& prefix) {
  return check == prefix || (check.size() > prefix.size() && check.compare(0, prefix.size(), prefix) == 0 &&
                             check[prefix.size()] == '.');
}

Selection select(const VerificationReport& r, const std::vector<std::string>& prefixes,
                 const std::string& structure = "") {
  Selection s;
  for (const auto& rec : r.records) {
    bool hit = false;
    for (const auto& p : prefixes) hit |= matches(rec.check, p);
    if (!hit || (!structure.empty() && rec.structure != structure)) continue;
    ++s.records;
    s.failed += !rec.pass;
    s.seeds.insert(rec.seed);
    if (rec.kind == CheckKind::residual) s.worst = std::max(s.worst, rec.value);
    if (rec.kind == CheckKind::slack) s.worst = std::min(s.worst, rec.value);
  }
  return s;
}

std::size_t count(const VerificationReport& r, const std::string& check) {
  std::size_t n = 0;
  for (const auto& rec : r.records) n += rec.check == check;
  return n;
}

int run(const std::string& cmd) {
  const int status = std::system((cmd + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string quote(const std::string& s) { return "'" + s + "'"; }

int failures = 0;

void report(int id, bool ok, const std::string& title, const std::string& detail) {
  failures += !ok;
  std::printf("criterion %2d %s  %s: %s\n", id, ok ? "PASS" : "FAIL", title.c_str(), detail.c_str());
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: acceptance <kfusion-binary>\n");
    return 2;
  }
  const std::string bin = quote(argv[1]);
  const fs::path dir = fs::temp_directory_path() / ("kfusion_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const auto file = [&](const std::string& name) { return (dir / name).string(); };

  SuiteOptions opts;
  opts.seed = 7;
  opts.trials = 8;
  opts.dim_lo = 2;
  opts.dim_hi = 8;
  const auto t0 = std::chrono::steady_clock::now();
  const VerificationReport r = run_suite(opts);
  const double suite_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("suite seed %llu, trials %lld, dims %lld..%lld: %zu instances, %zu records, %zu failed, %.1f s\n",
              static_cast<unsigned long long>(r.seed), static_cast<long long>(r.trials),
              static_cast<long long>(r.dim_lo), static_cast<long long>(r.dim_hi), r.instances, r.records.size(),
              r.failed(), suite_seconds);

  {
    const Selection s = select(r, {"douglas", "fusion.douglas_agree"});
    const std::size_t pos = count(r, "douglas.agree"), neg = count(r, "douglas.negative");
    const double factor = select(r, {"douglas.factor"}).worst;
    report(1, s.failed == 0 && pos + neg >= 500 && neg >= 100 && factor <= 1e-8, "Douglas equivalence",
           std::to_string(pos + neg) + " pairs (" + std::to_string(neg) + " negatives), all criteria agree; factor "
           "residual max " + fmt(factor) + " <= 1e-8");
  }
  {
    const Selection oracle = select(r, {"fusion.oracle_lower", "fusion.oracle_upper", "kframe.oracle_lower",
                                        "kframe.oracle_upper"});
    const Selection ineq = select(r, {"fusion.lower_inequality", "fusion.upper_inequality",
                                      "kframe.lower_inequality", "kframe.upper_inequality"});
    const Selection rest = select(r, {"fusion.frame_identity", "fusion.is_kfusion", "fusion.negative",
                                      "kframe.negative"});
    const double upper = select(r, {"fusion.oracle_upper", "kframe.oracle_upper"}).worst;
    report(2, oracle.failed + ineq.failed + rest.failed == 0 && oracle.seeds.size() >= 200, "optimal bounds",
           std::to_string(oracle.records) + " oracle brackets on " + std::to_string(oracle.seeds.size()) +
               " instances, worst relative gap " + fmt(upper) + " <= 1e-4; sampled inequality slack min " +
               fmt(ineq.worst) + " >= -1e-9");
  }
  {
    const Selection s = select(r, {"reconstruction"});
    const double worst = select(r, {"reconstruction"}).worst;
    report(3, s.failed == 0 && s.seeds.size() >= 200 && worst <= 1e-8, "reconstruction of R(K)",
           std::to_string(s.seeds.size()) + " instances x 100 samples, max relative residual " + fmt(worst) +
               " <= 1e-8");
  }
  {
    const Selection s = select(r, {"sandwich"});
    report(4, s.failed == 0 && s.seeds.size() >= 200, "frame-operator sandwich",
           std::to_string(s.seeds.size()) + " instances, min slack " + fmt(s.worst) + " >= -1e-9");
  }
  {
    const Selection k_inv = select(r, {"canonical_dual", "kdual", "psi", "kframe.kdual"}, "k_invertible");
    const Selection all = select(r, {"canonical_dual", "kdual", "psi", "kframe.kdual"});
    const double hyp = select(r, {"canonical_dual.hypothesis"}).worst;
    const double dual = select(r, {"kdual.sum", "kdual.factored"}).worst;
    const double forms = select(r, {"kdual.forms_agree"}).worst;
    report(5, all.failed == 0 && !k_inv.seeds.empty(), "canonical K-dual",
           std::to_string(k_inv.seeds.size()) + " k_invertible instances; hypothesis " + fmt(hyp) +
               " <= 1e-10, duality " + fmt(dual) + " <= 1e-8, forms differ " + fmt(forms) +
               " <= 1e-12, Bessel bound finite");
  }
  {
    const Selection s = select(r, {"kstar", "lower_bound"});
    report(6, s.failed == 0 && s.records > 0, "K-dual lower bound",
           std::to_string(select(r, {"kstar.lower_bound"}).records) + " verified duals plus " +
               std::to_string(select(r, {"lower_bound"}).records) + " multiplier cases, min slack " + fmt(s.worst) +
               " >= -1e-9");
  }
  {
    const Selection s = select(r, {"local"});
    const double parseval = select(r, {"local.parseval_frame_operator"}).worst;
    const double coincide = select(r, {"local_duals.coincide"}).worst;
    const Selection equiv = select(r, {"local.equiv"});
    report(7, s.failed == 0 && select(r, {"local_duals.coincide"}).failed == 0, "local frames",
           "equivalence on " + std::to_string(equiv.records) + "/" + std::to_string(equiv.records) +
               " cases (Parseval, scaled, duplicated); ||S_F - S_W|| " + fmt(parseval) +
               " <= 1e-12; coincidence " + fmt(coincide) + " <= 1e-9");
  }
  {
    const Selection s = select(r, {"local_duals"});
    const double worst = select(r, {"local_duals.res1", "local_duals.res2"}).worst;
    report(8, s.failed == 0 && s.seeds.size() >= 100 && worst <= 1e-8, "local-dual identities",
           std::to_string(s.seeds.size()) + " instances, max residual " + fmt(worst) + " <= 1e-8");
  }
  {
    const Selection pos = select(r, {"kw", "tk"}, "inside_pinv_range");
    const Selection all = select(r, {"kw", "tk"});
    report(9, all.failed == 0 && pos.seeds.size() > 0, "KW and TK images",
           std::to_string(count(r, "kw")) + " KW and " + std::to_string(count(r, "tk")) +
               " TK families pass on " + std::to_string(pos.seeds.size()) + " inside_pinv_range instances");
  }
  {
    const Selection s = select(r, {"lemma_v"});
    const double worst = select(r, {"lemma_v"}).worst;
    const std::size_t pairs = count(r, "lemma_v");
    report(10, s.failed == 0 && pairs >= 500 && worst <= 1e-10, "projection lemma",
           std::to_string(pairs) + " (V, T) pairs, max residual " + fmt(worst) + " <= 1e-10");
  }
  {
    const Selection s = select(r, {"factorization", "multiplier", "ordinary_multiplier", "inverse"});
    const double fact = select(r, {"factorization"}).worst;
    const double bound = select(r, {"multiplier.bound", "ordinary_multiplier.bound"}).worst;
    report(11, s.failed == 0 && fact <= 1e-12, "multipliers",
           "factorization residual " + fmt(fact) + " <= 1e-12; norm bound slack min " + fmt(bound) +
               " >= -1e-9; K-sided inverses consistent");
  }
  {
    const Selection s = select(r, {"invertibility"});
    const Selection engineered = select(r, {"invertibility.criterion"});
    const double zero = select(r, {"invertibility.zero_perturbation"}).worst;
    report(12, s.failed == 0 && engineered.seeds.size() >= 50, "perturbation invertibility",
           std::to_string(engineered.seeds.size()) + " engineered instances with lhs < rhs: sigma_min > 0 and "
           "Neumann norm < 1; V = W gives lhs " + fmt(zero));
  }
  {
    const Selection comp = select(r, {"composition"});
    const Selection onb = select(r, {"onb_composition"});
    // Engineered violation through the command line: families that are not
    // block-aligned must be rejected with exit status 3.
    InstanceParams p;
    p.seed = 4;
    p.dim = 4;
    p.n_subspaces = 2;
    p.subspace_dims = {2, 2};
    p.k_rank = 3;
    Instance inst = random_instance(p);
    inst.families["Z"] = inst.families["W"];
    inst.families["X"] = inst.families["V"];
    inst.families["H"] = inst.families["W"];
    inst.l = inst.k;
    write_file_atomic(file("nonblock.json"), serialize_instance(inst));
    const int exit_comp = run(bin + " verify " + quote(file("nonblock.json")) + " --check composition");
    const int exit_onb = run(bin + " verify " + quote(file("nonblock.json")) + " --check onb-composition");
    report(13,
           comp.failed + onb.failed == 0 && comp.seeds.size() >= 50 && onb.seeds.size() >= 50 && exit_comp == 3 &&
               exit_onb == 3,
           "composition",
           std::to_string(comp.seeds.size()) + " and " + std::to_string(onb.seeds.size()) +
               " block instances, max residuals " + fmt(select(r, {"composition"}).worst) + ", " +
               fmt(select(r, {"onb_composition"}).worst) + " <= 1e-9; violations exit " + std::to_string(exit_comp) +
               ", " + std::to_string(exit_onb));
  }
  {
    bool same = true;
    for (const char* structure : {"generic", "block_orthogonal"}) {
      const std::string args = std::string(" random --dim 5 --subspaces 3 --seed 11 --structure ") + structure;
      same &= run(bin + args + " --out " + quote(file("r1.json"))) == 0;
      same &= run(bin + args + " --out " + quote(file("r2.json"))) == 0;
      same &= slurp(file("r1.json")) == slurp(file("r2.json")) && !slurp(file("r1.json")).empty();
    }
    const std::string suite = " suite --seed 7 --trials 1 --dims 2:4 --json --out ";
    same &= run(bin + suite + quote(file("s1.json"))) == 0;
    same &= run(bin + suite + quote(file("s2.json"))) == 0;
    same &= slurp(file("s1.json")) == slurp(file("s2.json")) && !slurp(file("s1.json")).empty();
    report(14, same, "determinism", "instance files and suite reports byte-identical across two runs");
  }

  const bool fast = suite_seconds < 60.0;
  failures += !fast;
  std::printf("budget      %s  wall time %.1f s < 60 s\n", fast ? "PASS" : "FAIL", suite_seconds);
  std::printf("%s\n", failures == 0 ? "ALL CRITERIA PASS" : "SOME CRITERIA FAILED");
  fs::remove_all(dir);
  return failures == 0 ? 0 : 1;
}
