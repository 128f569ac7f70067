#include "delib/scoring.hpp"

namespace delib {

ScoredTerm first_pass_term(const FirstPassParams& params, std::span<const Token> x,
                           std::span<const Token> y) {
  Graph g;
  FirstPassNet net(g, params);
  Var total = score_first_pass(net, net.encode(x), y).total;
  return {total.value().item(), g.backward(total, params.table, kFirstPassGroup)};
}

ScoredTerm second_pass_term(const SecondPassParams& params, std::span<const Token> x,
                            const IntermediateFeatures& first, std::span<const Token> y) {
  Graph g;
  SecondPassNet net(g, params);
  Var total = score_second_pass(net, net.encode_input(x), net.encode_intermediate(first), y).total;
  return {total.value().item(), g.backward(total, params.table, kSecondPassGroup)};
}

IntermediateFeatures features_for(const FirstPassParams& first, std::span<const Token> x,
                                  const TokenSeq& tokens) {
  if (!first.config.intermediate_extras) return IntermediateFeatures::from_tokens(tokens);
  Graph g;
  FirstPassNet net(g, first);
  ScoredSequence s = score_first_pass(net, net.encode(x), tokens);
  const int T = static_cast<int>(tokens.size()), d = first.config.width;
  IntermediateFeatures f{tokens, Tensor(T, d), Tensor(T, d)};
  for (int t = 0; t < T; ++t) {
    for (int j = 0; j < d; ++j) {
      f.states(t, j) = s.states[t].value()[j];
      f.contexts(t, j) = s.contexts[t].value()[j];
    }
  }
  return f;
}

}  // namespace delib
