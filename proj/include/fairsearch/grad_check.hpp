#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "fairsearch/tape.hpp"

namespace fairsearch {

/// Scalar-valued program of one tensor argument, re-recorded on a fresh
/// tape for every evaluation.
using TensorProgram = std::function<Var(Tape&, Var)>;

/// Max over coordinates of |analytic - central| / max(1, |analytic|, |central|).
double grad_check(const TensorProgram& f, const Tensor& x, double h = 1e-5);

struct GradCheckCase {
  std::string name;
  /// Builds a program and its evaluation point from a seed.
  std::function<std::pair<TensorProgram, Tensor>(std::uint64_t seed)> make;
};

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  int seeds = 0;
  bool passed = false;
};

/// Every tensor primitive, each composed with a fixed random projection so
/// that the scalar loss exercises all output coordinates.
std::vector<GradCheckCase> primitive_grad_cases();

/// End-to-end supernet cases on a one-cell configuration (alpha and weights).
std::vector<GradCheckCase> network_grad_cases();

std::vector<GradCheckResult> run_grad_checks(const std::vector<GradCheckCase>& cases,
                                             int seeds, double tolerance,
                                             double h = 1e-5);

/// Prints one line per case; returns true when every case passed.
bool print_grad_report(std::ostream& os, const std::vector<GradCheckResult>& results);

/// Random tensor with entries uniform in [lo, hi).
Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0);

}  // namespace fairsearch
