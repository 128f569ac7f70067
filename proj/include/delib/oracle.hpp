#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "delib/delibnet.hpp"
#include "delib/parallel.hpp"

namespace delib {

inline constexpr std::uint64_t kDefaultSpaceCap = 100000;

class CapacityError : public std::runtime_error {
 public:
  CapacityError(std::uint64_t count, std::uint64_t cap);
  std::uint64_t count() const noexcept { return count_; }
  std::uint64_t cap() const noexcept { return cap_; }

 private:
  std::uint64_t count_, cap_;
};

/// Every valid TokenSeq of length <= T_max: EOS-terminated sequences plus the
/// unterminated ones of length exactly T_max. With C = V - 2 content tokens the
/// count is sum_{k=0}^{T_max-1} C^k + C^T_max.
struct EnumeratedSpace {
  int vocab_size = 0;
  int max_len = 0;
  std::vector<TokenSeq> sequences;

  std::size_t size() const { return sequences.size(); }
};

/// Exact count, saturating at UINT64_MAX.
std::uint64_t space_size(int vocab_size, int max_len);
EnumeratedSpace enumerate_space(int vocab_size, int max_len, std::uint64_t cap = kDefaultSpaceCap);

/// Per-intermediate terms log F^I(y^I) and log F^II(y^I) for one (x, y).
struct SpaceTerms {
  std::vector<double> log_first;
  std::vector<double> log_second;
};
SpaceTerms space_terms(const DelibModel& model, const TokenSeq& x, const TokenSeq& y,
                       const EnumeratedSpace& space, Execution exec = default_execution());

/// sum_{y^I} F^I F^II.
double exact_marginal(const DelibModel& model, const TokenSeq& x, const TokenSeq& y,
                      const EnumeratedSpace& space, Execution exec = default_execution());

struct ExactLosses {
  double naive = 0.0;  // -log sum F^I F^II
  double bound = 0.0;  // -sum F^I log F^II
};
ExactLosses exact_losses(const DelibModel& model, const TokenSeq& x, const TokenSeq& y,
                         const EnumeratedSpace& space, Execution exec = default_execution());
/// Weighted batch mean.
ExactLosses exact_losses(const DelibModel& model, const Batch& batch, const EnumeratedSpace& space,
                         Execution exec = default_execution());

enum class Objective { naive, bound };

/// Exhaustive-summation gradients.
///   bound, theta^I:  -sum F^I log F^II grad log F^I
///   bound, theta^II: -sum F^I grad log F^II
///   naive:           the same sums weighted by F^I F^II / sum F^I F^II
///                    instead of F^I (and without the log F^II factor)
PassGradients exact_gradients(const DelibModel& model, const TokenSeq& x, const TokenSeq& y,
                              const EnumeratedSpace& space, Objective which,
                              Execution exec = default_execution());
PassGradients exact_gradients(const DelibModel& model, const Batch& batch,
                              const EnumeratedSpace& space, Objective which,
                              Execution exec = default_execution());

double batch_weight(const Batch& batch);

}  // namespace delib
