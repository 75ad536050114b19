#pragma once

// Subspaces, weighted families (fusion sequences), vector families and the
// seeded generator of structured instances.

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "kfusion/numerics.hpp"

namespace kfusion {

/// Closed subspace of C^n stored through an orthonormal basis.
class Subspace {
 public:
  Subspace() = default;
  /// Wraps a basis already known to be orthonormal.
  static Subspace from_orthonormal(Matrix basis);
  /// The zero subspace of C^n.
  static Subspace zero(Index ambient_dim);

  Index ambient_dim() const { return basis_.rows(); }
  Index dim() const { return basis_.cols(); }
  const Matrix& basis() const { return basis_; }
  Matrix projector() const { return kfusion::projector(basis_); }
  /// ||(I - P) vectors||_F
  double residual_of(const Matrix& vectors) const { return membership_residual(vectors, basis_); }

 private:
  explicit Subspace(Matrix basis) : basis_(std::move(basis)) {}
  Matrix basis_;
};

/// Orthonormalizes the span of the columns of `vectors`.
Subspace make_subspace(const Matrix& vectors, const Tolerances& tol);

struct FusionMember {
  Subspace subspace;
  double weight = 1.0;
};

/// A fusion sequence {(W_i, w_i)}. Coordinates of the direct sum are the
/// concatenated local coordinates with respect to each stored basis.
class WeightedFamily {
 public:
  WeightedFamily(Index ambient_dim, std::vector<FusionMember> members);

  Index ambient_dim() const { return ambient_dim_; }
  std::size_t size() const { return members_.size(); }
  const std::vector<FusionMember>& members() const { return members_; }
  const FusionMember& operator[](std::size_t i) const { return members_[i]; }

  std::vector<Index> coord_dims() const;
  Index total_coord_dim() const;
  /// Offset of member i inside the direct-sum coordinates.
  Index coord_offset(std::size_t i) const;

  /// T_W = [w_1 B_1 | ... | w_N B_N]
  Matrix synthesis() const;
  /// S_W = sum_i w_i^2 P_i, symmetrized.
  Matrix frame_operator() const;
  bool unit_weights() const;
  WeightedFamily with_weights(double w) const;

 private:
  Index ambient_dim_;
  std::vector<FusionMember> members_;
};

/// Vectors grouped by index i: group i holds {f_ij}_j as the columns of an
/// n x J_i matrix.
class VectorFamily {
 public:
  VectorFamily(Index ambient_dim, std::vector<Matrix> groups);
  static VectorFamily single(Matrix columns);

  Index ambient_dim() const { return ambient_dim_; }
  const std::vector<Matrix>& groups() const { return groups_; }
  Index size() const;
  /// All vectors side by side, group order preserved.
  Matrix flat() const;

 private:
  Index ambient_dim_;
  std::vector<Matrix> groups_;
};

/// Seeded source of Gaussian matrices.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform(double lo, double hi);
  Index uniform_index(Index lo, Index hi);  // inclusive
  Matrix gaussian(Index rows, Index cols, Field field);
  /// Columns normalized to unit length.
  Matrix unit_vectors(Index n, Index count, Field field);
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Random d-dimensional subspace inside span(container), uniformly oriented.
Subspace random_subspace_in(Rng& rng, const Matrix& container, Index d, Field field, const Tolerances& tol);

/// n x n operator of rank k from two Gaussian factors.
Matrix random_rank_k(Rng& rng, Index n, Index k, Field field);

/// Spanning vectors of one member of a family as written in an instance file,
/// with its weight. The subspace is the span of the vectors.
struct FamilySpec {
  Matrix vectors;
  double weight = 1.0;
};
using FamilySpecs = std::vector<FamilySpec>;

WeightedFamily build_family(const FamilySpecs& specs, Index ambient_dim, const Tolerances& tol);
/// The spanning vectors of each member, as local frames.
VectorFamily local_vectors(const FamilySpecs& specs, Index ambient_dim);

struct Instance {
  Index dim = 0;
  Field field = Field::complex;
  Matrix k;
  std::optional<Matrix> l;
  std::map<std::string, FamilySpecs> families;
  std::optional<std::vector<Scalar>> symbol;
  Tolerances tol;
  /// Whether tol was stated explicitly (in a file or by the user) rather
  /// than inherited from the defaults.
  bool tol_explicit = false;

  bool has_family(const std::string& name) const { return families.count(name) != 0; }
  /// Throws UsageError naming the missing family.
  const FamilySpecs& family(const std::string& name) const;
};

enum class Structure { generic, k_invertible, inside_pinv_range, block_orthogonal };

std::string_view to_string(Structure s);
Structure parse_structure(std::string_view name);
std::string_view to_string(Field f);
Field parse_field(std::string_view name);

struct InstanceParams {
  std::uint64_t seed = 1;
  Index dim = 4;
  Index n_subspaces = 3;
  /// One entry per subspace (block sizes for block_orthogonal).
  std::vector<Index> subspace_dims;
  Index k_rank = 4;
  Structure structure = Structure::generic;
  Field field = Field::complex;
  Tolerances tol;
};

/// Deterministic structured instance. Families produced:
///  generic, k_invertible, inside_pinv_range: W (hypothesis-carrying) and V
///  (independent Gaussian family of the same shape);
///  block_orthogonal: W (spanning, Gaussian), V (coordinate blocks, an
///  orthonormal fusion basis when the blocks fill C^n), Z, X, H inside the
///  blocks (H_i a proper subspace of V_i) and L with R(L) inside span(Z).
/// Draws where W is within a relative singular-value gap of 1e-6 of losing
/// its required rank are redrawn. Throws ValidationError on infeasible
/// parameters.
Instance random_instance(const InstanceParams& params);

/// Gaussian unit vectors used as a test battery for inequalities.
Matrix unit_battery(Index n, Index count, std::uint64_t seed, Field field = Field::complex);

}  // namespace kfusion
