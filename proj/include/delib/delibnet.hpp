#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "delib/seq2seq.hpp"

namespace delib {

/// First-pass output as seen by the second pass. The optional extras hold the
/// first-pass decoder states s^I and contexts c^I, one row per token.
struct IntermediateFeatures {
  TokenSeq tokens;
  Tensor states;
  Tensor contexts;

  bool has_extras() const { return !states.empty(); }
  void validate(const Vocab& vocab, int width) const;

  /// An empty sequence becomes [EOS] so the y-encoder always sees one position.
  static IntermediateFeatures from_tokens(TokenSeq tokens);
  static IntermediateFeatures from_generation(const Generation& g);
};

/// theta^II. Own parameter names:
///   dec2.embed, dec2.gru.*                        decoder state
///   yenc.embed, yenc.gru.*                        encoder of the first-pass output
///   attx.*, atty.*                                attention over x and over y^I
///   out2.W [3d x (V-1)], out2.b                   output layer on [s; c_x; c_y]
/// plus enc.* aliased to the first pass's encoder storage.
struct SecondPassParams {
  ModelConfig config;
  ParameterTable table;

  static SecondPassParams create(const FirstPassParams& first, std::uint64_t seed);
  static SecondPassParams zeros(const FirstPassParams& first);
  /// Re-points enc.* at `first`'s encoder storage.
  void rebind_encoder(const FirstPassParams& first);
  bool shares_encoder_with(const FirstPassParams& first) const;
  /// Names excluding the shared encoder.
  std::vector<std::string> own_names() const;
};

/// theta^II whose output equals theta^I's on every history: y-encoder and
/// y-attention zeroed, decoder/attention/output copied from theta^I.
SecondPassParams single_pass_equivalent(const FirstPassParams& first);

struct DelibModel {
  FirstPassParams first;
  SecondPassParams second;

  static DelibModel create(const ModelConfig& config, std::uint64_t seed);

  DelibModel(FirstPassParams f, SecondPassParams s);
  DelibModel(const DelibModel& other);
  DelibModel& operator=(const DelibModel& other);
  DelibModel(DelibModel&&) noexcept = default;
  DelibModel& operator=(DelibModel&&) noexcept = default;

  const ModelConfig& config() const { return first.config; }
  /// Aliasing view over theta^I and theta^II (the shared encoder appears once).
  ParameterTable all_parameters() const;
};

/// Gradients split by pass. `first` is keyed by theta^I names and `second`
/// by theta^II names; both contain enc.*, each holding that pass's share.
struct PassGradients {
  GradientMap first;
  GradientMap second;

  static PassGradients zeros_like(const DelibModel& model);
  /// Sum over the union of keys (the shared encoder receives both shares).
  GradientMap merged() const;
  void accumulate(const PassGradients& other, double scale = 1.0);
  void scale(double factor);
  std::vector<double> flatten() const;
  friend bool operator==(const PassGradients&, const PassGradients&) = default;
};

class SecondPassNet {
 public:
  SecondPassNet(Graph& g, const SecondPassParams& params, int group = kSecondPassGroup);

  Graph& graph() const { return *graph_; }
  const ModelConfig& config() const { return config_; }

  AttentionMemory encode_input(std::span<const Token> x) const;
  AttentionMemory encode_intermediate(const IntermediateFeatures& f) const;
  /// y-encoder over already embedded rows (used by relaxed samples).
  AttentionMemory encode_intermediate_rows(std::span<const Var> rows) const;
  Var intermediate_embed(Token t) const;
  /// Expected y-encoder embedding under [1 x (V-1)] output-index weights.
  Var intermediate_embed_distribution(Var dist) const;
  /// Appends s^I / c^I rows (as constants) when the extras variant is enabled.
  Var with_extras(Var embedded, const IntermediateFeatures& f, int position) const;

  DecoderCarry start() const;
  Var embed(Token t) const;

  struct Step {
    DecoderCarry carry;
    Attended x;
    Attended y;
    Var logits;
    Var log_probs;
  };
  Step step(const DecoderCarry& carry, Var input, const AttentionMemory& mem_x,
            const AttentionMemory& mem_y) const;

 private:
  Graph* graph_;
  ModelConfig config_;
  Var enc_embed_, yenc_embed_, dec_embed_, out_W_, out_b_;
  GruCell enc_, yenc_, dec_;
  AdditiveAttention attx_, atty_;
};

class SecondPassStepModel : public StepModel {
 public:
  SecondPassStepModel(const SecondPassNet& net, AttentionMemory mem_x, AttentionMemory mem_y)
      : net_(net), mem_x_(mem_x), mem_y_(mem_y) {}
  DecoderCarry start() override { return net_.start(); }
  StepResult step(const DecoderCarry& carry, Token prev) override;

 private:
  const SecondPassNet& net_;
  AttentionMemory mem_x_, mem_y_;
};

struct ScoredSecondPass {
  Var total;
  std::vector<Var> step_lp;
  std::vector<Var> log_probs;
  std::vector<Var> alphas_x;
  std::vector<Var> alphas_y;
};
ScoredSecondPass score_second_pass(const SecondPassNet& net, const AttentionMemory& mem_x,
                                   const AttentionMemory& mem_y, std::span<const Token> y);

// Value-level API.

struct SecondPassStepValues {
  Tensor state, alpha_x, alpha_y, context_x, context_y, logits;
};
/// One second-pass step over encoder states h_x [L x d] and h_y [T^I x d].
SecondPassStepValues second_pass_step(const Tensor& s_prev, Token prev, const Tensor& h_x,
                                      const Tensor& h_y, const SecondPassParams& params,
                                      const Tensor* c_prev = nullptr);

struct SecondPassScore {
  double total = 0.0;
  std::vector<double> per_step;
  Tensor attention_x;  // [T x L]
  Tensor attention_y;  // [T x T^I]
};
SecondPassScore second_pass_logprob(std::span<const Token> x, const IntermediateFeatures& first,
                                    std::span<const Token> y, const SecondPassParams& params);

struct TwoPassOutput {
  Generation first;
  Generation second;
};
/// theta^I decodes freely, then theta^II decodes conditioned on (x, y^I).
TwoPassOutput two_pass_generate(std::span<const Token> x, const DelibModel& model,
                                const DecodeMode& mode, int max_len, std::uint64_t seed = 0);

}  // namespace delib
