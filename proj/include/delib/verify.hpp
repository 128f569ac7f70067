#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "delib/config.hpp"
#include "delib/parallel.hpp"
#include "json.hpp"

namespace delib {

/// One numeric check: `value` compared with `threshold` under `relation`
/// ("<=", ">=", "in" for [threshold, upper]).
struct CheckResult {
  std::string name;
  bool passed = false;
  double value = 0.0;
  std::string relation;
  double threshold = 0.0;
  double upper = 0.0;
  std::string detail;
  double seconds = 0.0;  // not part of the JSON report

  /// Distance to the threshold, positive when passing.
  double margin() const;
  nlohmann::json to_json() const;
  std::string line() const;
};

struct VerifyReport {
  std::vector<CheckResult> checks;
  bool passed() const;
  /// Deterministic for a fixed config and seed (timings are left out).
  nlohmann::json to_json() const;
};

CheckResult check_at_most(std::string name, double value, double threshold, std::string detail = {});
CheckResult check_at_least(std::string name, double value, double threshold, std::string detail = {});
CheckResult check_within(std::string name, double value, double lo, double hi, std::string detail = {});

// Oracle checks on random tiny instances drawn from `seed`. Sizes come from
// VerifySection (vocabulary <= vocab_size, T_max <= max_len).

/// L_y >= L_check - 1e-9 on `instances` models; equality at point masses.
std::vector<CheckResult> check_upper_bound(const VerifySection& v, std::uint64_t seed, Execution exec);
/// First-pass and marginal probabilities sum to one (1e-9) on 20 instances.
std::vector<CheckResult> check_normalization(const VerifySection& v, std::uint64_t seed, Execution exec);
/// Finite-difference checks (relative tolerance 1e-6) of every differentiable loss.
std::vector<CheckResult> check_gradients(const VerifySection& v, std::uint64_t seed, Execution exec);
/// joint_grad mean over `trials` runs against the enumerated bound gradient.
CheckResult check_estimator_bias(const VerifySection& v, std::uint64_t seed, Execution exec);
/// Coordinate-averaged variance ratio of M = 4 to M = 1 in [0.1875, 0.3125].
CheckResult check_variance_scaling(const VerifySection& v, std::uint64_t seed, Execution exec);
/// theta^II gradients of joint_grad, joint_loss (hard) and separate agree (1e-12).
CheckResult check_scheme_equivalence(const VerifySection& v, std::uint64_t seed, Execution exec);
/// Exact MBR with risk -log F^II equals the enumerated bound loss and its
/// theta^I gradient (1e-12) on 20 instances.
CheckResult check_mbr_identity(const VerifySection& v, std::uint64_t seed, Execution exec);
/// Guided attention loss is exactly 0 on diagonal attention maps.
CheckResult check_guided_diagonal();

/// Everything above, in order.
VerifyReport run_verification(const VerifySection& v, std::uint64_t seed, Execution exec = default_execution());

}  // namespace delib
