#pragma once

// Finite-difference gradient suite over every loss term, the bilinear sampler
// and a full phase-1 composite, evaluated at non-degenerate random points.
//
// Precision 64: analytic gradients of the double tape against double
// fourth-order central differences. Precision 32: analytic gradients of the float tape against
// double central differences of the same function at the same (float
// representable) point, so the reference carries no float round-off.
//
// Relative error per element: |a - n| / max(|a|, |n|, f * max_i |a_i|, 1e-8)
// with f = relative_floor(precision). The floor keeps elements whose
// derivative cancels to almost nothing from being judged against round-off:
// the difference quotient's in 64-bit, float accumulation in 32-bit.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace trinet::gradsuite {

struct CaseResult {
  std::string name;
  std::size_t elements = 0;
  double max_rel_error = 0.0;
  /// Analytic and numeric derivative at the worst element.
  double analytic = 0.0;
  double numeric = 0.0;
  bool passed = false;
};

struct Report {
  int precision = 64;
  std::uint64_t seed = 1;
  double tolerance = 0.0;
  std::vector<CaseResult> cases;
  double seconds = 0.0;

  double max_rel_error() const;
  bool passed() const;
};

/// Relative-error tolerance per precision: 1e-5 (64) or 5e-3 (32).
double tolerance(int precision);

/// Fraction of the largest derivative used as the error floor: 1e-3 (64) or
/// 1e-2 (32).
double relative_floor(int precision);

/// Runs the whole suite. Throws std::invalid_argument unless precision is 32 or 64.
Report run(int precision, std::uint64_t seed);

/// One line per case, then "PASS max rel. err <e>" or "FAIL ...".
void print(std::ostream& os, const Report& report);

}  // namespace trinet::gradsuite
