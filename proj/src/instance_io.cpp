#include "kfusion/instance_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/stat.h>
#include <unistd.h>

#include "kfusion/errors.hpp"

namespace kfusion {

using nlohmann::json;

namespace {

constexpr Index kMaxDim = 4096;

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw ValidationError(where + ": " + what);
}

std::string at(const std::string& base, std::size_t i) { return base + "[" + std::to_string(i) + "]"; }

double parse_real(const json& j, const std::string& where) {
  if (!j.is_number()) fail(where, "expected a number");
  const double x = j.get<double>();
  if (!std::isfinite(x)) fail(where, "non-finite value");
  return x;
}

Scalar parse_scalar(const json& j, Field field, const std::string& where) {
  Scalar z;
  if (j.is_number()) {
    z = Scalar(parse_real(j, where), 0.0);
  } else if (j.is_array() && j.size() == 2) {
    z = Scalar(parse_real(j[0], where + "[0]"), parse_real(j[1], where + "[1]"));
  } else {
    fail(where, "expected a number or an [re, im] pair");
  }
  if (field == Field::real && z.imag() != 0.0) fail(where, "nonzero imaginary part in a real instance");
  return z;
}

Vector parse_vector(const json& j, Index n, Field field, const std::string& where) {
  if (!j.is_array()) fail(where, "expected a list of scalars");
  if (static_cast<Index>(j.size()) != n) {
    fail(where, "expected " + std::to_string(n) + " entries, found " + std::to_string(j.size()));
  }
  Vector v(n);
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Index>(i)) = parse_scalar(j[i], field, at(where, i));
  return v;
}

Matrix parse_matrix(const json& j, Index n, Field field, const std::string& where) {
  if (!j.is_array()) fail(where, "expected a list of rows");
  if (static_cast<Index>(j.size()) != n) {
    fail(where, "expected " + std::to_string(n) + " rows, found " + std::to_string(j.size()));
  }
  Matrix m(n, n);
  for (std::size_t r = 0; r < j.size(); ++r) m.row(static_cast<Index>(r)) = parse_vector(j[r], n, field, at(where, r));
  return m;
}

FamilySpecs parse_family(const json& j, Index n, Field field, const std::string& where) {
  if (!j.is_array()) fail(where, "expected a list of members");
  if (j.empty()) fail(where, "a family needs at least one member");
  FamilySpecs out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string here = at(where, i);
    const json& member = j[i];
    if (!member.is_object()) fail(here, "expected an object with basis and weight");
    for (const auto& [key, _] : member.items()) {
      if (key != "basis" && key != "weight") fail(here, "unknown key '" + key + "'");
    }
    if (!member.contains("basis")) fail(here, "missing basis");
    const json& basis = member.at("basis");
    if (!basis.is_array()) fail(here + ".basis", "expected a list of vectors");
    FamilySpec spec;
    spec.vectors = Matrix(n, static_cast<Index>(basis.size()));
    for (std::size_t c = 0; c < basis.size(); ++c) {
      spec.vectors.col(static_cast<Index>(c)) = parse_vector(basis[c], n, field, at(here + ".basis", c));
    }
    spec.weight = member.contains("weight") ? parse_real(member.at("weight"), here + ".weight") : 1.0;
    if (!(spec.weight > 0.0)) fail(here + ".weight", "weight must be positive");
    out.push_back(std::move(spec));
  }
  return out;
}

json scalar_json(const Scalar& z, Field field) {
  if (field == Field::real) return z.real();
  return json::array({z.real(), z.imag()});
}

json vector_json(const Vector& v, Field field) {
  json out = json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(scalar_json(v(i), field));
  return out;
}

}  // namespace

json json_number(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

json json_tolerances(const Tolerances& tol) {
  return json{{"rank_rel", tol.rank_rel}, {"residual_rel", tol.residual_rel}};
}

json json_matrix(const Matrix& m, Field field) {
  json out = json::array();
  for (Index r = 0; r < m.rows(); ++r) out.push_back(vector_json(m.row(r).transpose(), field));
  return out;
}

Instance parse_instance(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    std::ostringstream msg;
    msg << "line " << line << ", column " << col << ": malformed JSON";
    throw ValidationError(msg.str());
  }
  if (!root.is_object()) fail("instance", "top level must be an object");
  static const char* const known[] = {"schema_version", "dim", "field", "K", "L", "families", "symbol", "tol"};
  for (const auto& [key, _] : root.items()) {
    if (std::find(std::begin(known), std::end(known), key) == std::end(known)) fail(key, "unknown key");
  }
  for (const char* key : {"schema_version", "dim", "field", "K", "families"}) {
    if (!root.contains(key)) fail(key, "missing required field");
  }
  const json& version = root.at("schema_version");
  if (!version.is_number_integer() || version.get<long long>() != kSchemaVersion) {
    fail("schema_version", "unsupported schema version (expected 1)");
  }
  const json& dim = root.at("dim");
  if (!dim.is_number_integer() || dim.get<long long>() < 1 || dim.get<long long>() > kMaxDim) {
    fail("dim", "expected an integer in [1, " + std::to_string(kMaxDim) + "]");
  }
  Instance inst;
  inst.dim = static_cast<Index>(dim.get<long long>());
  if (!root.at("field").is_string()) fail("field", "expected \"real\" or \"complex\"");
  try {
    inst.field = parse_field(root.at("field").get<std::string>());
  } catch (const Error&) {
    fail("field", "expected \"real\" or \"complex\"");
  }
  const Index n = inst.dim;
  inst.k = parse_matrix(root.at("K"), n, inst.field, "K");
  if (root.contains("L")) inst.l = parse_matrix(root.at("L"), n, inst.field, "L");

  const json& families = root.at("families");
  if (!families.is_object()) fail("families", "expected an object mapping names to member lists");
  for (const auto& [name, fam] : families.items()) {
    if (name.empty()) fail("families", "family names must be nonempty");
    inst.families[name] = parse_family(fam, n, inst.field, "families." + name);
  }

  if (root.contains("symbol")) {
    const json& sym = root.at("symbol");
    if (!sym.is_array()) fail("symbol", "expected a list of scalars");
    std::vector<Scalar> symbol;
    for (std::size_t i = 0; i < sym.size(); ++i) symbol.push_back(parse_scalar(sym[i], inst.field, at("symbol", i)));
    inst.symbol = std::move(symbol);
  }

  if (root.contains("tol")) {
    const json& tol = root.at("tol");
    if (!tol.is_object()) fail("tol", "expected an object with rank_rel and residual_rel");
    for (const auto& [key, _] : tol.items()) {
      if (key != "rank_rel" && key != "residual_rel") fail("tol." + key, "unknown key");
    }
    if (tol.contains("rank_rel")) inst.tol.rank_rel = parse_real(tol.at("rank_rel"), "tol.rank_rel");
    if (tol.contains("residual_rel")) inst.tol.residual_rel = parse_real(tol.at("residual_rel"), "tol.residual_rel");
    try {
      inst.tol.validate();
    } catch (const ValidationError& e) {
      fail("tol", e.what());
    }
    inst.tol_explicit = true;
  }
  return inst;
}

Instance load_instance(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(path + ": cannot open file");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_instance(buf.str());
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

std::string serialize_instance(const Instance& inst) {
  json root;
  root["schema_version"] = kSchemaVersion;
  root["dim"] = inst.dim;
  root["field"] = std::string(to_string(inst.field));
  root["K"] = json_matrix(inst.k, inst.field);
  if (inst.l) root["L"] = json_matrix(*inst.l, inst.field);
  json families = json::object();
  for (const auto& [name, specs] : inst.families) {
    json members = json::array();
    for (const auto& spec : specs) {
      json basis = json::array();
      for (Index c = 0; c < spec.vectors.cols(); ++c) basis.push_back(vector_json(spec.vectors.col(c), inst.field));
      members.push_back(json{{"basis", std::move(basis)}, {"weight", spec.weight}});
    }
    families[name] = std::move(members);
  }
  root["families"] = std::move(families);
  if (inst.symbol) {
    json sym = json::array();
    for (const auto& z : *inst.symbol) sym.push_back(scalar_json(z, inst.field));
    root["symbol"] = std::move(sym);
  }
  if (inst.tol_explicit) root["tol"] = json_tolerances(inst.tol);
  return root.dump(2) + "\n";
}

void write_file_atomic(const std::string& path, const std::string& contents) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  const fs::path dir = target.has_parent_path() ? target.parent_path() : fs::path(".");
  std::string tmpl = (dir / ("." + target.filename().string() + ".tmpXXXXXX")).string();
  const int fd = ::mkstemp(tmpl.data());
  if (fd < 0) throw Error(path + ": cannot create temporary file");
  const char* data = contents.data();
  std::size_t left = contents.size();
  while (left > 0) {
    const ssize_t n = ::write(fd, data, left);
    if (n <= 0) {
      ::close(fd);
      ::unlink(tmpl.c_str());
      throw Error(path + ": write failed");
    }
    data += n;
    left -= static_cast<std::size_t>(n);
  }
  if (::fsync(fd) != 0 || ::close(fd) != 0) {
    ::unlink(tmpl.c_str());
    throw Error(path + ": write failed");
  }
  // mkstemp creates 0600 files; match a regular file created under the umask.
  const mode_t mask = ::umask(0);
  ::umask(mask);
  fs::permissions(tmpl, static_cast<fs::perms>(0666 & ~mask));
  if (std::rename(tmpl.c_str(), path.c_str()) != 0) {
    ::unlink(tmpl.c_str());
    throw Error(path + ": rename failed");
  }
}

json report_to_json(const VerificationReport& report) {
  json checks = json::object();
  for (const auto& [name, s] : report.summary()) {
    checks[name] = json{{"count", s.count}, {"failed", s.failed}, {"worst", json_number(s.worst)}};
  }
  json records = json::array();
  for (const auto& r : report.records) {
    records.push_back(json{{"check", r.check},
                           {"seed", r.seed},
                           {"dim", r.dim},
                           {"structure", r.structure},
                           {"kind", std::string(to_string(r.kind))},
                           {"value", json_number(r.value)},
                           {"threshold", json_number(r.threshold)},
                           {"pass", r.pass}});
  }
  return json{{"schema_version", kSchemaVersion},
              {"kind", "suite"},
              {"seed", report.seed},
              {"trials", report.trials},
              {"dims", json::array({report.dim_lo, report.dim_hi})},
              {"tol", json_tolerances(report.tol)},
              {"summary",
               {{"instances", report.instances},
                {"records", report.records.size()},
                {"failed", report.failed()},
                {"pass", report.all_pass()},
                {"checks", std::move(checks)}}},
              {"records", std::move(records)}};
}

}  // namespace kfusion
