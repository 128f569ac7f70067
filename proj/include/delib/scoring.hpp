#pragma once

#include <span>

#include "delib/delibnet.hpp"

namespace delib {

/// A log-probability together with its gradient w.r.t. one pass's parameters.
struct ScoredTerm {
  double logp = 0.0;
  GradientMap grad;
};

/// log p(y | x; theta^I) and its theta^I gradient.
ScoredTerm first_pass_term(const FirstPassParams& params, std::span<const Token> x,
                           std::span<const Token> y);
/// log p(y | y^I, x; theta^II) and its theta^II gradient (shared encoder included).
ScoredTerm second_pass_term(const SecondPassParams& params, std::span<const Token> x,
                            const IntermediateFeatures& first, std::span<const Token> y);

/// Second-pass view of a first-pass sequence. With the extras variant enabled
/// the s^I / c^I rows come from running theta^I teacher-forced on `tokens`,
/// which reproduces the values recorded while generating them.
IntermediateFeatures features_for(const FirstPassParams& first, std::span<const Token> x,
                                  const TokenSeq& tokens);

}  // namespace delib
