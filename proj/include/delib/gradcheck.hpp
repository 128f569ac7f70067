#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "delib/autodiff.hpp"
#include "delib/params.hpp"

namespace delib {

/// The function under test returned different values for identical inputs.
class VerificationInvalid : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tol = 1e-6;
  /// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor);
  /// keeps coordinates whose gradient is at round-off level from dominating.
  double scale_floor = 1e-2;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  double tol = 0.0;
  bool passed = false;
  std::string summary() const;
};

/// Compares `analytic` against central differences of `f` over every scalar
/// of `params`. Parameters are perturbed in place and restored afterwards.
GradCheckReport finite_diff_check(const std::function<double()>& f, ParameterTable& params,
                                  const GradientMap& analytic, const GradCheckOptions& opts = {});

/// Builds the loss on a fresh graph, takes reverse-mode gradients of the leaves
/// in `group`, then checks them as above.
GradCheckReport finite_diff_check(const std::function<Var(Graph&)>& build, ParameterTable& params,
                                  int group, const GradCheckOptions& opts = {});

}  // namespace delib
