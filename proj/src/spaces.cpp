#include "kfusion/spaces.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "kfusion/errors.hpp"

namespace kfusion {

namespace {

constexpr int kMaxRetries = 100;

// Stacks the orthonormal bases of a family side by side.
Matrix stacked_bases(const std::vector<Subspace>& subspaces, Index n) {
  Index cols = 0;
  for (const auto& s : subspaces) cols += s.dim();
  Matrix out(n, cols);
  Index at = 0;
  for (const auto& s : subspaces) {
    out.middleCols(at, s.dim()) = s.basis();
    at += s.dim();
  }
  return out;
}

FamilySpecs specs_from(const std::vector<Subspace>& subspaces) {
  FamilySpecs out;
  out.reserve(subspaces.size());
  for (const auto& s : subspaces) out.push_back({s.basis(), 1.0});
  return out;
}

double condition_number(const Matrix& m) {
  const double lo = smallest_singular_value(m);
  return lo > 0.0 ? spectral_norm(m) / lo : std::numeric_limits<double>::infinity();
}

// Draws whose relevant spectrum falls below this ratio sit too close to a
// rank change: the pencil and range-inclusion routes may then legitimately
// disagree at the working rank tolerance.
constexpr double kMinSpectralRatio = 1e-6;

// sigma_r / sigma_1 of m (0 when m has fewer than r singular values).
double spectral_ratio(const Matrix& m, Index r) {
  if (r <= 0) return 1.0;
  const Eigen::VectorXd sv = Eigen::JacobiSVD<Matrix>(m).singularValues();
  if (sv.size() < r || sv(0) == 0.0) return 0.0;
  return sv(r - 1) / sv(0);
}

}  // namespace

Subspace Subspace::from_orthonormal(Matrix basis) { return Subspace(std::move(basis)); }

Subspace Subspace::zero(Index ambient_dim) { return Subspace(Matrix(ambient_dim, 0)); }

Subspace make_subspace(const Matrix& vectors, const Tolerances& tol) {
  const Index n = vectors.rows();
  // Rows that vanish identically stay exactly zero in the basis, so that
  // subspaces built inside coordinate blocks keep exact orthogonality.
  if (vectors.cols() == 0) return Subspace::zero(n);
  if (!all_finite(vectors)) throw ValidationError("subspace spanning vectors have non-finite entries");
  std::vector<Index> live;
  for (Index i = 0; i < n; ++i) {
    if (vectors.row(i).cwiseAbs().maxCoeff() != 0.0) live.push_back(i);
  }
  if (live.empty()) return Subspace::zero(n);
  if (static_cast<Index>(live.size()) == n) {
    return Subspace::from_orthonormal(orthonormal_range_basis(vectors, tol));
  }
  Matrix compressed(static_cast<Index>(live.size()), vectors.cols());
  for (std::size_t i = 0; i < live.size(); ++i) compressed.row(static_cast<Index>(i)) = vectors.row(live[i]);
  const Matrix small = orthonormal_range_basis(compressed, tol);
  Matrix basis = Matrix::Zero(n, small.cols());
  for (std::size_t i = 0; i < live.size(); ++i) basis.row(live[i]) = small.row(static_cast<Index>(i));
  return Subspace::from_orthonormal(std::move(basis));
}

WeightedFamily::WeightedFamily(Index ambient_dim, std::vector<FusionMember> members)
    : ambient_dim_(ambient_dim), members_(std::move(members)) {
  for (std::size_t i = 0; i < members_.size(); ++i) {
    const auto& m = members_[i];
    if (!(m.weight > 0.0) || !std::isfinite(m.weight)) {
      std::ostringstream msg;
      msg << "family member " << i << ": weight must be a positive finite number, got " << m.weight;
      throw ValidationError(msg.str());
    }
    if (m.subspace.ambient_dim() != ambient_dim_) {
      std::ostringstream msg;
      msg << "family member " << i << ": ambient dimension " << m.subspace.ambient_dim() << " != " << ambient_dim_;
      throw ValidationError(msg.str());
    }
  }
}

std::vector<Index> WeightedFamily::coord_dims() const {
  std::vector<Index> out;
  out.reserve(members_.size());
  for (const auto& m : members_) out.push_back(m.subspace.dim());
  return out;
}

Index WeightedFamily::total_coord_dim() const {
  Index total = 0;
  for (const auto& m : members_) total += m.subspace.dim();
  return total;
}

Index WeightedFamily::coord_offset(std::size_t i) const {
  Index at = 0;
  for (std::size_t j = 0; j < i; ++j) at += members_[j].subspace.dim();
  return at;
}

Matrix WeightedFamily::synthesis() const {
  Matrix t(ambient_dim_, total_coord_dim());
  Index at = 0;
  for (const auto& m : members_) {
    t.middleCols(at, m.subspace.dim()) = m.weight * m.subspace.basis();
    at += m.subspace.dim();
  }
  return t;
}

Matrix WeightedFamily::frame_operator() const {
  Matrix s = Matrix::Zero(ambient_dim_, ambient_dim_);
  for (const auto& m : members_) s += (m.weight * m.weight) * m.subspace.projector();
  return hermitian_part(s);
}

bool WeightedFamily::unit_weights() const {
  for (const auto& m : members_) {
    if (m.weight != 1.0) return false;
  }
  return true;
}

WeightedFamily WeightedFamily::with_weights(double w) const {
  auto members = members_;
  for (auto& m : members) m.weight = w;
  return WeightedFamily(ambient_dim_, std::move(members));
}

VectorFamily::VectorFamily(Index ambient_dim, std::vector<Matrix> groups)
    : ambient_dim_(ambient_dim), groups_(std::move(groups)) {
  for (std::size_t i = 0; i < groups_.size(); ++i) {
    if (groups_[i].rows() != ambient_dim_) {
      std::ostringstream msg;
      msg << "vector group " << i << " has dimension " << groups_[i].rows() << ", expected " << ambient_dim_;
      throw ValidationError(msg.str());
    }
    if (!all_finite(groups_[i])) throw ValidationError("vector family has non-finite entries");
  }
}

VectorFamily VectorFamily::single(Matrix columns) {
  const Index n = columns.rows();
  std::vector<Matrix> groups;
  groups.push_back(std::move(columns));
  return VectorFamily(n, std::move(groups));
}

Index VectorFamily::size() const {
  Index total = 0;
  for (const auto& g : groups_) total += g.cols();
  return total;
}

Matrix VectorFamily::flat() const {
  Matrix out(ambient_dim_, size());
  Index at = 0;
  for (const auto& g : groups_) {
    out.middleCols(at, g.cols()) = g;
    at += g.cols();
  }
  return out;
}

double Rng::uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }

Index Rng::uniform_index(Index lo, Index hi) {
  return static_cast<Index>(std::uniform_int_distribution<long long>(lo, hi)(engine_));
}

Matrix Rng::gaussian(Index rows, Index cols, Field field) {
  Matrix m(rows, cols);
  const double scale = field == Field::complex ? std::sqrt(0.5) : 1.0;
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) {
      const double re = normal();
      const double im = field == Field::complex ? normal() : 0.0;
      m(i, j) = Scalar(re * scale, im * scale);
    }
  }
  return m;
}

Matrix Rng::unit_vectors(Index n, Index count, Field field) {
  Matrix m = gaussian(n, count, field);
  for (Index j = 0; j < count; ++j) {
    const double norm = m.col(j).norm();
    if (norm > 0.0) m.col(j) /= norm;
  }
  return m;
}

Subspace random_subspace_in(Rng& rng, const Matrix& container, Index d, Field field, const Tolerances& tol) {
  if (d == 0) return Subspace::zero(container.rows());
  if (d > container.cols()) throw ValidationError("requested subspace dimension exceeds its container");
  for (int attempt = 0; attempt < kMaxRetries; ++attempt) {
    Subspace s = make_subspace(container * rng.gaussian(container.cols(), d, field), tol);
    if (s.dim() == d) return s;
  }
  throw ValidationError("could not draw a subspace of full dimension");
}

Matrix random_rank_k(Rng& rng, Index n, Index k, Field field) {
  if (k == 0) return Matrix::Zero(n, n);
  return rng.gaussian(n, k, field) * rng.gaussian(k, n, field);
}

WeightedFamily build_family(const FamilySpecs& specs, Index ambient_dim, const Tolerances& tol) {
  std::vector<FusionMember> members;
  members.reserve(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].vectors.rows() != ambient_dim) {
      std::ostringstream msg;
      msg << "family member " << i << ": vectors have dimension " << specs[i].vectors.rows() << ", expected "
          << ambient_dim;
      throw ValidationError(msg.str());
    }
    members.push_back({make_subspace(specs[i].vectors, tol), specs[i].weight});
  }
  return WeightedFamily(ambient_dim, std::move(members));
}

VectorFamily local_vectors(const FamilySpecs& specs, Index ambient_dim) {
  std::vector<Matrix> groups;
  groups.reserve(specs.size());
  for (const auto& s : specs) groups.push_back(s.vectors);
  return VectorFamily(ambient_dim, std::move(groups));
}

const FamilySpecs& Instance::family(const std::string& name) const {
  auto it = families.find(name);
  if (it == families.end()) throw UsageError("instance has no family '" + name + "'");
  return it->second;
}

std::string_view to_string(Structure s) {
  switch (s) {
    case Structure::generic: return "generic";
    case Structure::k_invertible: return "k_invertible";
    case Structure::inside_pinv_range: return "inside_pinv_range";
    case Structure::block_orthogonal: return "block_orthogonal";
  }
  return "generic";
}

Structure parse_structure(std::string_view name) {
  if (name == "generic") return Structure::generic;
  if (name == "k_invertible") return Structure::k_invertible;
  if (name == "inside_pinv_range") return Structure::inside_pinv_range;
  if (name == "block_orthogonal") return Structure::block_orthogonal;
  throw UsageError("unknown structure '" + std::string(name) + "'");
}

std::string_view to_string(Field f) { return f == Field::real ? "real" : "complex"; }

Field parse_field(std::string_view name) {
  if (name == "real") return Field::real;
  if (name == "complex") return Field::complex;
  throw ValidationError("field must be \"real\" or \"complex\", got '" + std::string(name) + "'");
}

Instance random_instance(const InstanceParams& p) {
  p.tol.validate();
  const Index n = p.dim;
  if (n < 1) throw ValidationError("dim must be at least 1");
  if (p.n_subspaces < 1) throw ValidationError("need at least one subspace");
  if (static_cast<Index>(p.subspace_dims.size()) != p.n_subspaces) {
    throw ValidationError("subspace_dims must have one entry per subspace");
  }
  for (Index d : p.subspace_dims) {
    if (d < 0 || d > n) throw ValidationError("each subspace dimension must lie in [0, dim]");
  }
  if (p.k_rank < 0 || p.k_rank > n) throw ValidationError("k_rank must lie in [0, dim]");
  const Index total = std::accumulate(p.subspace_dims.begin(), p.subspace_dims.end(), Index{0});

  switch (p.structure) {
    case Structure::generic: break;
    case Structure::k_invertible:
      if (total < n) throw ValidationError("k_invertible: subspace dimensions must sum to at least dim");
      break;
    case Structure::inside_pinv_range:
      if (p.k_rank < 1) throw ValidationError("inside_pinv_range: k_rank must be at least 1");
      for (Index d : p.subspace_dims) {
        if (d > p.k_rank) throw ValidationError("inside_pinv_range: subspace dimension exceeds k_rank");
      }
      if (total < p.k_rank) throw ValidationError("inside_pinv_range: subspace dimensions must sum to at least k_rank");
      break;
    case Structure::block_orthogonal:
      if (total > n) throw ValidationError("block_orthogonal: block dimensions sum to more than dim");
      for (Index d : p.subspace_dims) {
        if (d < 1) throw ValidationError("block_orthogonal: blocks must be nonempty");
      }
      break;
  }

  Rng rng(p.seed);
  const Matrix identity = Matrix::Identity(n, n);
  Instance inst;
  inst.dim = n;
  inst.field = p.field;
  inst.tol = p.tol;

  auto gaussian_family = [&](const std::vector<Index>& dims, const Matrix& container) {
    std::vector<Subspace> out;
    for (Index d : dims) out.push_back(random_subspace_in(rng, container, d, p.field, p.tol));
    return out;
  };

  for (int attempt = 0;; ++attempt) {
    if (attempt == kMaxRetries) {
      throw ValidationError("random_instance: structural precondition not met after 100 attempts");
    }
    std::vector<Subspace> w;
    switch (p.structure) {
      case Structure::generic: {
        inst.k = random_rank_k(rng, n, p.k_rank, p.field);
        w = gaussian_family(p.subspace_dims, identity);
        if (total >= n && spectral_ratio(stacked_bases(w, n), n) < kMinSpectralRatio) continue;
        break;
      }
      case Structure::k_invertible: {
        inst.k = rng.gaussian(n, n, p.field);
        w = gaussian_family(p.subspace_dims, identity);
        if (condition_number(inst.k) > 1e6) continue;
        if (spectral_ratio(stacked_bases(w, n), n) < kMinSpectralRatio) continue;
        break;
      }
      case Structure::inside_pinv_range: {
        // K = U0 M U0* has R(K) = R(K*) = span(U0).
        const Matrix u0 = random_subspace_in(rng, identity, p.k_rank, p.field, p.tol).basis();
        const Matrix core = rng.gaussian(p.k_rank, p.k_rank, p.field);
        inst.k = u0 * core * u0.adjoint();
        w = gaussian_family(p.subspace_dims, u0);
        if (condition_number(core) > 1e6) continue;
        if (spectral_ratio(stacked_bases(w, n), p.k_rank) < kMinSpectralRatio) continue;
        break;
      }
      case Structure::block_orthogonal: {
        inst.k = random_rank_k(rng, n, p.k_rank, p.field);
        w = gaussian_family(p.subspace_dims, identity);
        if (total == n && spectral_ratio(stacked_bases(w, n), n) < kMinSpectralRatio) continue;
        break;
      }
    }
    inst.families["W"] = specs_from(w);
    break;
  }

  if (p.structure == Structure::block_orthogonal) {
    std::vector<Subspace> v, z, x, h;
    Index at = 0;
    for (Index d : p.subspace_dims) {
      const Matrix block = identity.middleCols(at, d);
      v.push_back(Subspace::from_orthonormal(block));
      z.push_back(random_subspace_in(rng, block, rng.uniform_index(1, d), p.field, p.tol));
      x.push_back(random_subspace_in(rng, block, rng.uniform_index(1, d), p.field, p.tol));
      h.push_back(random_subspace_in(rng, block, d - 1, p.field, p.tol));
      at += d;
    }
    const Matrix z_span = orthonormal_range_basis(stacked_bases(z, n), p.tol);
    inst.l = Matrix(projector(z_span) * rng.gaussian(n, n, p.field));
    inst.families["V"] = specs_from(v);
    inst.families["Z"] = specs_from(z);
    inst.families["X"] = specs_from(x);
    inst.families["H"] = specs_from(h);
  } else {
    inst.families["V"] = specs_from(gaussian_family(p.subspace_dims, identity));
  }

  std::vector<Scalar> symbol;
  for (Index i = 0; i < p.n_subspaces; ++i) {
    const double mag = rng.uniform(0.5, 2.0);
    if (p.field == Field::complex) {
      symbol.push_back(std::polar(mag, rng.uniform(-M_PI, M_PI)));
    } else {
      symbol.emplace_back(rng.uniform(0.0, 1.0) < 0.5 ? -mag : mag, 0.0);
    }
  }
  inst.symbol = std::move(symbol);
  return inst;
}

Matrix unit_battery(Index n, Index count, std::uint64_t seed, Field field) {
  Rng rng(seed);
  return rng.unit_vectors(n, count, field);
}

}  // namespace kfusion
