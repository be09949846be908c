#pragma once

// Property suites run by `dfkd verify`: loss values and gradients, Hessian-
// vector products, Taylor scaling of the inner step, and meta-gradients.
// Everything runs on freshly built tiny networks in double precision.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace dfkd::verify {

struct Check {
  std::string suite;
  std::string name;
  double measured = 0.0;
  std::string bound;  // human-readable acceptance bound
  bool pass = false;
};

struct Options {
  // Multiplies every tolerance; 0 makes all inexact checks fail.
  double tolerance_scale = 1.0;
  std::uint64_t seed = 1234;
};

const std::vector<std::string>& suite_names();
// `suite` is one of suite_names() or "all".
std::vector<Check> run_suite(const std::string& suite, const Options& options = {});

// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
double relative_error(std::span<const double> a, std::span<const double> b);

// Central differences of f at x with step h.
std::vector<double> central_difference(const std::function<double(std::span<const double>)>& f,
                                       std::vector<double> x, double h);

}  // namespace dfkd::verify
