#include <gtest/gtest.h>

#include "kfusion/errors.hpp"
#include "kfusion/instance_io.hpp"
#include "kfusion/spaces.hpp"
#include "oracles.hpp"

using namespace kfusion;

namespace {

const Tolerances tol;

Matrix e(Index n, Index i) { return Matrix::Identity(n, n).col(i); }

InstanceParams params(Structure s, Index dim, std::vector<Index> dims, Index k_rank, std::uint64_t seed = 1) {
  InstanceParams p;
  p.seed = seed;
  p.dim = dim;
  p.n_subspaces = static_cast<Index>(dims.size());
  p.subspace_dims = std::move(dims);
  p.k_rank = k_rank;
  p.structure = s;
  return p;
}

}  // namespace

TEST(Subspace, CollinearInput) {
  Matrix v(3, 2);
  v << e(3, 0), 2.0 * e(3, 0);
  const Subspace s = make_subspace(v, tol);
  EXPECT_EQ(s.dim(), 1);
  Matrix p = Matrix::Zero(3, 3);
  p(0, 0) = 1;
  EXPECT_LE((s.projector() - p).norm(), 1e-15);
}

TEST(Subspace, TwoAxes) {
  Matrix v(3, 2);
  v << e(3, 0), e(3, 1);
  const Subspace s = make_subspace(v, tol);
  EXPECT_EQ(s.dim(), 2);
  Matrix p = Matrix::Zero(3, 3);
  p(0, 0) = p(1, 1) = 1;
  EXPECT_LE((s.projector() - p).norm(), 1e-15);
}

TEST(Subspace, OvercompleteGaussianSpansEverything) {
  const Matrix v = oracle::gauss(4, 5, 17);
  ASSERT_EQ(oracle::svd_rank(v), 4);
  const Subspace s = make_subspace(v, tol);
  EXPECT_EQ(s.dim(), 4);
  EXPECT_LE((s.projector() - Matrix::Identity(4, 4)).norm(), 1e-10);
}

TEST(Subspace, ZeroAndResidual) {
  const Subspace z = Subspace::zero(3);
  EXPECT_EQ(z.dim(), 0);
  EXPECT_EQ(z.ambient_dim(), 3);
  EXPECT_LE(z.projector().norm(), 0.0);
  const Subspace s = make_subspace(e(3, 0), tol);
  EXPECT_NEAR(s.residual_of(e(3, 1)), 1.0, 1e-15);
}

TEST(Family, SynthesisAndFrameOperator) {
  const Matrix a = oracle::gauss(4, 2, 51), b = oracle::gauss(4, 1, 52);
  const WeightedFamily w = build_family({{a, 2.0}, {b, 0.5}}, 4, tol);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_EQ(w.total_coord_dim(), 3);
  EXPECT_EQ(w.coord_offset(1), 2);
  const Matrix expect = oracle::fusion_frame_operator({a, b}, {2.0, 0.5});
  EXPECT_LE((w.frame_operator() - expect).norm(), 1e-12);
  const Matrix t = w.synthesis();
  EXPECT_LE((t * t.adjoint() - expect).norm(), 1e-12);
  EXPECT_FALSE(w.unit_weights());
  EXPECT_TRUE(w.with_weights(1.0).unit_weights());
}

TEST(Family, VectorGroupsFlatten) {
  const Matrix a = oracle::gauss(3, 2, 53), b = oracle::gauss(3, 1, 54);
  const VectorFamily f(3, {a, b});
  EXPECT_EQ(f.size(), 3);
  const Matrix flat = f.flat();
  EXPECT_EQ(flat.col(2), b.col(0));
}

TEST(Random, DeterministicBytes) {
  const auto p = params(Structure::generic, 4, {2, 1, 3}, 2);
  EXPECT_EQ(serialize_instance(random_instance(p)), serialize_instance(random_instance(p)));
  auto q = p;
  q.seed = 2;
  EXPECT_NE(serialize_instance(random_instance(p)), serialize_instance(random_instance(q)));
}

TEST(Random, InsidePinvRangeMembers) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Instance inst = random_instance(params(Structure::inside_pinv_range, 5, {2, 2, 1}, 3, seed));
    const Matrix p = oracle::svd_projector(inst.k.adjoint());
    for (const auto& spec : inst.family("W")) {
      const Matrix b = make_subspace(spec.vectors, tol).basis();
      EXPECT_LE(((Matrix::Identity(5, 5) - p) * b).norm(), 1e-10);
    }
  }
}

TEST(Random, BlockOrthogonalCrossProductsVanish) {
  const Instance inst = random_instance(params(Structure::block_orthogonal, 4, {2, 2}, 2));
  const WeightedFamily v = build_family(inst.family("V"), 4, tol);
  const WeightedFamily z = build_family(inst.family("Z"), 4, tol);
  EXPECT_EQ((v[0].subspace.projector() * z[1].subspace.projector()).norm(), 0.0);
  EXPECT_EQ((v[1].subspace.projector() * z[0].subspace.projector()).norm(), 0.0);
  ASSERT_TRUE(inst.l.has_value());
  for (const char* name : {"W", "V", "Z", "X", "H"}) EXPECT_TRUE(inst.has_family(name)) << name;
}

TEST(Random, KInvertibleIsInvertible) {
  const Instance inst = random_instance(params(Structure::k_invertible, 4, {2, 2}, 4));
  EXPECT_EQ(oracle::svd_rank(inst.k), 4);
}

TEST(Random, RealFieldHasZeroImaginaryParts) {
  auto p = params(Structure::generic, 3, {1, 2}, 2);
  p.field = Field::real;
  const Instance inst = random_instance(p);
  EXPECT_EQ(inst.k.imag().norm(), 0.0);
  for (const auto& spec : inst.family("W")) EXPECT_EQ(spec.vectors.imag().norm(), 0.0);
}

TEST(Random, InfeasibleParametersRejected) {
  EXPECT_THROW(random_instance(params(Structure::k_invertible, 4, {1, 1}, 4)), ValidationError);
  EXPECT_THROW(random_instance(params(Structure::inside_pinv_range, 4, {3}, 2)), ValidationError);
  EXPECT_THROW(random_instance(params(Structure::block_orthogonal, 4, {3, 2}, 2)), ValidationError);
  EXPECT_THROW(random_instance(params(Structure::generic, 4, {5}, 2)), ValidationError);
}

TEST(Random, MissingFamilyIsUsageError) {
  const Instance inst = random_instance(params(Structure::generic, 3, {1, 2}, 2));
  EXPECT_THROW(inst.family("H"), UsageError);
}

TEST(Names, RoundTrip) {
  for (Structure s : {Structure::generic, Structure::k_invertible, Structure::inside_pinv_range,
                      Structure::block_orthogonal}) {
    EXPECT_EQ(parse_structure(to_string(s)), s);
  }
  EXPECT_EQ(parse_field("real"), Field::real);
  EXPECT_THROW(parse_field("quaternion"), Error);
}
