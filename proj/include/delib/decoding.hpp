#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "delib/autodiff.hpp"
#include "delib/rng.hpp"
#include "delib/vocab.hpp"

namespace delib {

struct DecodeMode {
  enum class Kind { greedy, sample, beam };
  Kind kind = Kind::greedy;
  double temperature = 1.0;  // sample only
  int width = 1;             // beam only

  static DecodeMode greedy() { return {}; }
  static DecodeMode sample(double temperature) { return {Kind::sample, temperature, 1}; }
  static DecodeMode beam(int width) { return {Kind::beam, 1.0, width}; }

  void validate() const;
  /// "greedy", "sample:<temperature>", "beam:<width>"
  std::string to_string() const;
  static DecodeMode parse(std::string_view text);
};

/// Recurrent decoder carry: the state s_{t-1} and the previous context c_{t-1}
/// (the latter is only consumed when the context-in-state variant is enabled).
struct DecoderCarry {
  Var state;
  Var context;
};

struct StepResult {
  DecoderCarry carry;
  Var log_probs;             // [1 x (V-1)] over output indices
  Var context;               // primary context vector (c_t, or c_x,t for the second pass)
  std::vector<Var> alphas;   // one alignment row per attention source
};

/// One autoregressive model bound to a graph and a fixed input.
class StepModel {
 public:
  virtual ~StepModel() = default;
  virtual DecoderCarry start() = 0;
  virtual StepResult step(const DecoderCarry& carry, Token prev) = 0;
};

struct Generation {
  TokenSeq tokens;
  double logprob = 0.0;
  std::vector<double> step_logprobs;
  Tensor states;                  // [T x d] decoder states
  Tensor contexts;                // [T x d] primary context vectors
  std::vector<Tensor> attention;  // per source, [T x L_source]
  Tensor noise;                   // [T x (V-1)] Gumbel draws (sample mode only)
};

/// Argmax at each step; ties go to the lowest output index.
Generation decode_greedy(StepModel& model, int max_len);
/// Gumbel-max draw from p^(1/temperature) at each step, noise taken from rng.
Generation decode_sample(StepModel& model, int max_len, double temperature, Rng& rng);
/// Beam search where finished hypotheses leave the beam. Returns up to `width`
/// finished hypotheses sorted by score (descending). width = 1 reproduces
/// greedy; a width no smaller than the output space makes the search exact.
std::vector<Generation> decode_beam(StepModel& model, int max_len, int width);

Generation decode(StepModel& model, const DecodeMode& mode, int max_len, std::uint64_t seed);

}  // namespace delib
