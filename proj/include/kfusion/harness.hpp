#pragma once

// Seeded property-suite driver and the brute-force oracles it relies on.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "kfusion/numerics.hpp"
#include "kfusion/spaces.hpp"

namespace kfusion {

/// Minimum of <S f, f> / <G f, f> over f with <G f, f> > 0, estimated from
/// `samples` seeded unit vectors followed by nonlinear conjugate-gradient
/// descent from the best few of them. S and G Hermitian PSD; `u` spans R(G)
/// and is used only to discard samples with no component there.
double oracle_rayleigh_min(const Matrix& s, const Matrix& g, const Matrix& u, Index samples, std::uint64_t seed);

enum class CheckKind {
  residual,  ///< pass iff value <= threshold
  slack,     ///< pass iff value >= -threshold
  exceeds,   ///< engineered negative: pass iff value > threshold
  flag,      ///< pass iff value == 1
};

std::string_view to_string(CheckKind k);

struct CheckRecord {
  std::string check;
  std::uint64_t seed = 0;
  Index dim = 0;
  std::string structure;
  CheckKind kind = CheckKind::residual;
  double value = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

struct CheckSummary {
  std::size_t count = 0;
  std::size_t failed = 0;
  /// Largest value for residual checks, smallest for slack checks.
  double worst = 0.0;
};

struct VerificationReport {
  std::uint64_t seed = 0;
  Index trials = 0;
  Index dim_lo = 0;
  Index dim_hi = 0;
  Tolerances tol;
  /// Sorted by (check, seed) and then by insertion order.
  std::vector<CheckRecord> records;
  std::size_t instances = 0;
  /// Not part of the deterministic serialization.
  double wall_seconds = 0.0;

  bool all_pass() const;
  std::size_t failed() const;
  std::map<std::string, CheckSummary> summary() const;
};

struct SuiteOptions {
  std::uint64_t seed = 7;
  Index trials = 1;
  Index dim_lo = 2;
  Index dim_hi = 8;
  Tolerances tol;
  /// Samples for the Rayleigh oracle cross-check of optimal bounds.
  Index oracle_samples = 100000;
};

/// Runs every check on trials x dims x structure-mode instances. Throws
/// ValidationError on bad options and DiagnosticError (naming the seed) on
/// internal inconsistencies.
VerificationReport run_suite(const SuiteOptions& options);

/// Seed of instance (trial, dim, structure) derived from the suite seed.
std::uint64_t instance_seed(std::uint64_t suite_seed, Index trial, Index dim, Structure structure);

/// Parameters used by the suite for one instance.
InstanceParams suite_params(std::uint64_t seed, Index dim, Structure structure, const Tolerances& tol);

/// Unitary close to the identity: Cayley transform of theta times a seeded
/// skew-Hermitian matrix.
Matrix near_identity_unitary(Rng& rng, Index n, double theta, Field field);

}  // namespace kfusion
