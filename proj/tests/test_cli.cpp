#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "json.hpp"

#include "kfusion/cli.hpp"
#include "kfusion/errors.hpp"
#include "kfusion/instance_io.hpp"

using namespace kfusion;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    ::unsetenv(kTolEnv);
    dir_ = fs::temp_directory_path() /
           ("kfusion_cli_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override {
    ::unsetenv(kTolEnv);
    fs::remove_all(dir_);
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  /// Two coordinate lines in R^2 with unit weights, K = I.
  std::string identity_instance(const std::string& weight = "1") const {
    return R"({"schema_version": 1, "dim": 2, "field": "real", "K": [[1, 0], [0, 1]],
      "families": {"W": [{"basis": [[1, 0]], "weight": 1}, {"basis": [[0, 1]], "weight": )" +
           weight + "}]}}";
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, RandomIsDeterministic) {
  ASSERT_EQ(cli({"random", "--dim", "4", "--subspaces", "3", "--seed", "1", "--out", path("a.json")}).code, 0);
  ASSERT_EQ(cli({"random", "--dim", "4", "--subspaces", "3", "--seed", "1", "--out", path("b.json")}).code, 0);
  EXPECT_EQ(slurp(path("a.json")), slurp(path("b.json")));
  ASSERT_EQ(cli({"random", "--dim", "4", "--subspaces", "3", "--seed", "2", "--out", path("c.json")}).code, 0);
  EXPECT_NE(slurp(path("a.json")), slurp(path("c.json")));
}

TEST_F(CliTest, RandomToStdoutMatchesFile) {
  const CliRun r = cli({"random", "--dim", "3", "--subspaces", "2", "--seed", "5"});
  ASSERT_EQ(r.code, 0);
  cli({"random", "--dim", "3", "--subspaces", "2", "--seed", "5", "--out", path("x.json")});
  EXPECT_EQ(r.out, slurp(path("x.json")));
}

TEST_F(CliTest, RoundTripIsBitExact) {
  for (const char* field : {"complex", "real"}) {
    for (const char* structure : {"generic", "k_invertible", "inside_pinv_range", "block_orthogonal"}) {
      const CliRun r = cli({"random", "--dim", "5", "--subspaces", "2", "--seed", "3", "--structure", structure,
                         "--field", field});
      ASSERT_EQ(r.code, 0) << r.err;
      const Instance a = parse_instance(r.out);
      EXPECT_EQ(serialize_instance(a), r.out);
      const Instance b = parse_instance(serialize_instance(a));
      EXPECT_TRUE(a.k == b.k);
      for (const auto& [name, specs] : a.families) {
        for (std::size_t i = 0; i < specs.size(); ++i) {
          EXPECT_TRUE(specs[i].vectors == b.families.at(name)[i].vectors);
          EXPECT_EQ(specs[i].weight, b.families.at(name)[i].weight);
        }
      }
      if (std::string(field) == "real") EXPECT_EQ(a.k.imag().norm(), 0.0);
    }
  }
}

TEST_F(CliTest, RandomUsageErrors) {
  EXPECT_EQ(cli({"random", "--dim", "2", "--subspaces", "0"}).code, kExitUsage);
  EXPECT_EQ(cli({"random", "--dim", "0"}).code, kExitUsage);
  EXPECT_EQ(cli({"random", "--structure", "spiral"}).code, kExitUsage);
  EXPECT_EQ(cli({"random", "--dim", "3", "--structure", "block_orthogonal", "--subspaces", "4"}).code, kExitUsage);
}

TEST_F(CliTest, NoOrUnknownSubcommand) {
  EXPECT_EQ(cli({}).code, kExitUsage);
  EXPECT_EQ(cli({"frobnicate"}).code, kExitUsage);
}

TEST_F(CliTest, AnalyzeIdentityInstance) {
  spit(path("id.json"), identity_instance());
  const CliRun r = cli({"analyze", path("id.json"), "--json"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_EQ(j["schema_version"], 1);
  EXPECT_DOUBLE_EQ(j["families"]["W"]["A_opt"].get<double>(), 1.0);
  EXPECT_DOUBLE_EQ(j["families"]["W"]["B_opt"].get<double>(), 1.0);
  EXPECT_TRUE(j["families"]["W"]["is_kfusion"].get<bool>());

  const CliRun text = cli({"analyze", path("id.json")});
  EXPECT_NE(text.out.find("A_opt = 1\n"), std::string::npos) << text.out;
  EXPECT_NE(text.out.find("B_opt = 1\n"), std::string::npos);
}

TEST_F(CliTest, AnalyzeFamilyOrthogonalToCoimage) {
  spit(path("neg.json"), R"({"schema_version": 1, "dim": 2, "field": "real", "K": [[1, 0], [0, 0]],
    "families": {"V": [{"basis": [[0, 1]], "weight": 1}]}})");
  const CliRun r = cli({"analyze", path("neg.json"), "--json"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_FALSE(json::parse(r.out)["families"]["V"]["is_kfusion"].get<bool>());
}

TEST_F(CliTest, ZeroWeightNamesFamilyIndex) {
  spit(path("bad.json"), identity_instance("0"));
  const CliRun r = cli({"analyze", path("bad.json")});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("families.W[1].weight"), std::string::npos) << r.err;
}

TEST_F(CliTest, MalformedInputs) {
  spit(path("syntax.json"), "{\n  \"dim\": 2,\n  oops\n}");
  const CliRun s = cli({"analyze", path("syntax.json")});
  EXPECT_EQ(s.code, kExitUsage);
  EXPECT_NE(s.err.find("line 3"), std::string::npos) << s.err;

  spit(path("version.json"), R"({"schema_version": 2, "dim": 1, "field": "real", "K": [[1]], "families": {}})");
  EXPECT_EQ(cli({"analyze", path("version.json")}).code, kExitUsage);

  spit(path("shape.json"), R"({"schema_version": 1, "dim": 2, "field": "real", "K": [[1, 0]], "families": {}})");
  const CliRun shape = cli({"analyze", path("shape.json")});
  EXPECT_EQ(shape.code, kExitUsage);
  EXPECT_NE(shape.err.find("K"), std::string::npos);

  spit(path("imag.json"), R"({"schema_version": 1, "dim": 1, "field": "real", "K": [[[1, 2]]], "families": {}})");
  EXPECT_EQ(cli({"analyze", path("imag.json")}).code, kExitUsage);

  spit(path("extra.json"),
       R"({"schema_version": 1, "dim": 1, "field": "real", "K": [[1]], "families": {}, "color": "red"})");
  EXPECT_EQ(cli({"analyze", path("extra.json")}).code, kExitUsage);

  EXPECT_EQ(cli({"analyze", path("missing.json")}).code, kExitUsage);
}

TEST_F(CliTest, VerifyReconstructionOnIdentity) {
  spit(path("id.json"), identity_instance());
  const CliRun r = cli({"verify", path("id.json"), "--check", "reconstruction", "--json"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_TRUE(j["pass"].get<bool>());
  EXPECT_EQ(j["results"][0]["values"]["residual"].get<double>(), 0.0);
}

TEST_F(CliTest, VerifyKdualOnCanonicalDualFile) {
  ASSERT_EQ(cli({"random", "--dim", "4", "--subspaces", "3", "--seed", "8", "--structure", "k_invertible", "--out",
                 path("w.json")})
                .code,
            0);
  const CliRun d = cli({"dual", path("w.json"), "--family", "W", "--as", "V", "--out", path("wd.json")});
  ASSERT_EQ(d.code, 0) << d.err;
  const CliRun v = cli({"verify", path("wd.json"), "--check", "kdual"});
  EXPECT_EQ(v.code, 0) << v.out << v.err;
  // The original V is an unrelated family.
  EXPECT_EQ(cli({"verify", path("w.json"), "--check", "kdual"}).code, kExitFail);
}

TEST_F(CliTest, CompositionOnNonBlockInstanceIsPrecondition) {
  ASSERT_EQ(cli({"random", "--dim", "4", "--subspaces", "2", "--seed", "4", "--out", path("g.json")}).code, 0);
  Instance inst = load_instance(path("g.json"));
  inst.families["Z"] = inst.families["W"];
  inst.families["X"] = inst.families["V"];
  inst.l = inst.k;
  spit(path("g2.json"), serialize_instance(inst));
  EXPECT_EQ(cli({"verify", path("g2.json"), "--check", "composition"}).code, kExitPrecondition);
  // Without Z the request itself is malformed.
  const CliRun missing = cli({"verify", path("g.json"), "--check", "composition"});
  EXPECT_EQ(missing.code, kExitUsage);
  EXPECT_NE(missing.err.find("family Z"), std::string::npos) << missing.err;
}

TEST_F(CliTest, CompositionOnBlockInstancePasses) {
  ASSERT_EQ(cli({"random", "--dim", "5", "--subspaces", "2", "--seed", "4", "--structure", "block_orthogonal", "--out",
                 path("b.json")})
                .code,
            0);
  EXPECT_EQ(cli({"verify", path("b.json"), "--check", "composition"}).code, 0);
  EXPECT_EQ(cli({"verify", path("b.json"), "--check", "onb-composition"}).code, 0);
}

TEST_F(CliTest, InsidePinvRangePassesKw) {
  ASSERT_EQ(cli({"random", "--dim", "5", "--subspaces", "3", "--seed", "2", "--structure", "inside_pinv_range",
                 "--rank-k", "3", "--out", path("p.json")})
                .code,
            0);
  const CliRun r = cli({"verify", path("p.json"), "--check", "kw"});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
}

TEST_F(CliTest, VerifyAllReportsSkips) {
  ASSERT_EQ(cli({"random", "--dim", "3", "--subspaces", "2", "--seed", "6", "--out", path("r.json")}).code, 0);
  const CliRun r = cli({"verify", path("r.json"), "--check", "all", "--json"});
  const json j = json::parse(r.out);
  ASSERT_EQ(j["results"].size(), check_names().size() - 1);
  bool skipped = false;
  for (const auto& res : j["results"]) skipped |= res["status"] == "skipped";
  EXPECT_TRUE(skipped);
  EXPECT_EQ(r.code, j["pass"].get<bool>() ? 0 : 1);
}

TEST_F(CliTest, UnknownCheckIsUsage) {
  spit(path("id.json"), identity_instance());
  EXPECT_EQ(cli({"verify", path("id.json"), "--check", "nonsense"}).code, kExitUsage);
}

TEST_F(CliTest, SuiteUsageErrors) {
  EXPECT_EQ(cli({"suite", "--trials", "0"}).code, kExitUsage);
  EXPECT_EQ(cli({"suite", "--dims", "1:4"}).code, kExitUsage);
  EXPECT_EQ(cli({"suite", "--dims", "3:x"}).code, kExitUsage);
  EXPECT_EQ(cli({"suite", "--dims", "11"}).code, kExitUsage);
}

TEST_F(CliTest, SuiteJsonReport) {
  const std::vector<std::string> args{"suite",  "--seed", "3", "--trials", "1", "--dims", "2:3", "--oracle-samples",
                                      "5000", "--json", "--out"};
  auto a = args, b = args;
  a.push_back(path("s1.json"));
  b.push_back(path("s2.json"));
  ASSERT_EQ(cli(a).code, 0);
  ASSERT_EQ(cli(b).code, 0);
  EXPECT_EQ(slurp(path("s1.json")), slurp(path("s2.json")));
  const json j = json::parse(slurp(path("s1.json")));
  EXPECT_EQ(j["schema_version"], 1);
  EXPECT_EQ(j["kind"], "suite");
  EXPECT_EQ(j["summary"]["instances"], 8);
  EXPECT_TRUE(j["summary"]["pass"].get<bool>());
  EXPECT_EQ(j["summary"]["records"].get<std::size_t>(), j["records"].size());
  for (const auto& rec : j["records"]) {
    for (const char* key : {"check", "seed", "dim", "structure", "kind", "value", "threshold", "pass"}) {
      EXPECT_TRUE(rec.contains(key)) << key;
    }
  }
}

TEST_F(CliTest, EnvironmentToleranceAndPrecedence) {
  spit(path("id.json"), identity_instance());
  ::setenv(kTolEnv, "1e-3", 1);
  json j = json::parse(cli({"verify", path("id.json"), "--check", "reconstruction", "--json"}).out);
  EXPECT_DOUBLE_EQ(j["tol"]["residual_rel"].get<double>(), 1e-3);
  j = json::parse(cli({"verify", path("id.json"), "--check", "reconstruction", "--json", "--tol", "1e-5"}).out);
  EXPECT_DOUBLE_EQ(j["tol"]["residual_rel"].get<double>(), 1e-5);

  ::setenv(kTolEnv, "banana", 1);
  EXPECT_EQ(cli({"verify", path("id.json"), "--check", "reconstruction"}).code, kExitUsage);
  ::unsetenv(kTolEnv);

  ::setenv(kTolEnv, "1e-3", 1);
  Tolerances file;
  file.residual_rel = 1e-6;
  EXPECT_DOUBLE_EQ(resolve_tolerances(&file, nullptr).residual_rel, 1e-6);
  const double flag = 1e-7;
  EXPECT_DOUBLE_EQ(resolve_tolerances(&file, &flag).residual_rel, 1e-7);
  EXPECT_DOUBLE_EQ(resolve_tolerances(nullptr, nullptr).residual_rel, 1e-3);
  ::unsetenv(kTolEnv);
  EXPECT_DOUBLE_EQ(resolve_tolerances(nullptr, nullptr).residual_rel, Tolerances{}.residual_rel);
  const double bad = -1;
  EXPECT_THROW(resolve_tolerances(nullptr, &bad), ValidationError);
}

TEST_F(CliTest, AtomicWriteReplacesAndLeavesNoTemporaries) {
  const std::string target = path("out.txt");
  spit(target, "old");
  write_file_atomic(target, "new contents\n");
  EXPECT_EQ(slurp(target), "new contents\n");
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(dir_)) files += entry.is_regular_file();
  EXPECT_EQ(files, 1u);
  EXPECT_THROW(write_file_atomic(path("no/such/dir/x.txt"), "x"), Error);
}

TEST_F(CliTest, CheckNamesEndWithAll) {
  const auto& names = check_names();
  ASSERT_FALSE(names.empty());
  EXPECT_EQ(names.back(), "all");
  for (const char* n : {"reconstruction", "kdual", "kw", "lemma-v", "composition", "onb-composition"}) {
    EXPECT_NE(std::find(names.begin(), names.end(), n), names.end()) << n;
  }
}
