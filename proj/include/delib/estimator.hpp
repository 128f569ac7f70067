#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "delib/oracle.hpp"
#include "delib/training.hpp"

namespace delib {

/// Per-coordinate statistics of a Monte-Carlo gradient estimator, compared with
/// the enumerated upper-bound gradients. Coordinates follow
/// PassGradients::flatten(): theta^I first, then theta^II.
struct EstimatorStats {
  std::vector<std::string> labels;  // "first/enc.embed[3]"
  std::vector<double> mean;
  std::vector<double> variance;  // unbiased sample variance
  std::vector<double> exact;
  std::vector<double> z;
  std::size_t first_count = 0;
  std::size_t trials = 0;
  int samples = 0;

  /// Largest |z| over [begin, end) (all coordinates by default).
  double max_abs_z(std::size_t begin = 0, std::size_t end = SIZE_MAX) const;
  std::size_t worst_coordinate() const;
};

/// One gradient estimate of `kind` from fresh ancestral samples (seed).
/// separate pairs the teacher-forcing theta^I gradient with the stored-sample
/// theta^II gradient; joint_loss uses straight-through rows at temperature tau.
PassGradients estimator_draw(const DelibModel& model, const Batch& batch, const Scheme& scheme,
                             int M, int max_len, std::uint64_t seed);

/// Runs the estimator `trials` times on independent sub-streams of `seed`.
/// A coordinate with zero sample variance scores z = 0 when its mean equals
/// the exact value (to 1e-12 relative) and infinity otherwise.
EstimatorStats verify_estimator(const DelibModel& model, const Batch& batch, const Scheme& scheme,
                                int M, std::size_t trials, std::uint64_t seed, int max_len,
                                Execution exec = default_execution(),
                                std::uint64_t cap = kDefaultSpaceCap);

/// Mean over theta^I coordinates of var_a / var_b, restricted to coordinates
/// whose var_b exceeds 1e-10 of the largest theta^I var_b.
double variance_ratio(const EstimatorStats& a, const EstimatorStats& b);

}  // namespace delib
