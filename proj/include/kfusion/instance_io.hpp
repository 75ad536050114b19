#pragma once

// JSON interchange: instance files and machine-readable reports.
//
// Instance schema (schema_version 1):
//   { "schema_version": 1, "dim": n, "field": "real" | "complex",
//     "K": matrix, "L": matrix (optional),
//     "families": { name: [ { "basis": [vector, ...], "weight": w }, ... ] },
//     "symbol": [scalar, ...] (optional),
//     "tol": { "rank_rel": r, "residual_rel": e } (optional) }
// Scalars are numbers or [re, im] pairs (complex fields are written as
// pairs, real fields as plain numbers); matrices are row-major lists of rows;
// vectors are lists of n scalars.

#include <string>

#include "json.hpp"

#include "kfusion/harness.hpp"
#include "kfusion/spaces.hpp"

namespace kfusion {

inline constexpr int kSchemaVersion = 1;

/// Parses and validates an instance. Throws ValidationError naming the
/// offending field (and line/column for syntax errors).
Instance parse_instance(const std::string& text);
Instance load_instance(const std::string& path);

/// Canonical text: two-space indentation, shortest round-trip doubles, keys
/// in sorted order. parse_instance(serialize_instance(x)) reproduces x exactly.
std::string serialize_instance(const Instance& inst);

/// Writes to a temporary file in the same directory, then renames it over
/// `path`. Throws Error on I/O failure.
void write_file_atomic(const std::string& path, const std::string& contents);

/// Finite doubles as numbers, anything else as null.
nlohmann::json json_number(double x);
nlohmann::json json_tolerances(const Tolerances& tol);
nlohmann::json json_matrix(const Matrix& m, Field field);

/// Suite report; wall time is left out so that reports are reproducible.
nlohmann::json report_to_json(const VerificationReport& report);

}  // namespace kfusion
