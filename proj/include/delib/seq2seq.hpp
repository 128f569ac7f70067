#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "delib/decoding.hpp"
#include "delib/layers.hpp"
#include "delib/params.hpp"
#include "delib/vocab.hpp"

namespace delib {

/// Graph leaf groups. The shared encoder is bound once per pass so that the
/// first-pass and second-pass contributions to its gradient stay separable.
inline constexpr int kFirstPassGroup = 1;
inline constexpr int kSecondPassGroup = 2;

struct ModelConfig {
  int vocab_size = 0;
  int width = 32;  // embedding, hidden and attention width d
  bool context_in_state = false;
  bool intermediate_extras = false;
  double init_bound = 0.08;

  Vocab vocab() const { return Vocab(vocab_size); }
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// theta^I. Parameter names:
///   enc.embed [V x d], enc.gru.*           encoder (theta_h)
///   dec.embed [V x d], dec.gru.*           decoder state (theta_s)
///   att.Ws, att.Wh [d x d], att.v [d x 1]  attention (theta_alpha)
///   out.W [2d x (V-1)], out.b [1 x (V-1)]  output layer (theta_y)
struct FirstPassParams {
  ModelConfig config;
  ParameterTable table;

  /// Zero-valued parameters with the right shapes.
  static FirstPassParams zeros(const ModelConfig& config);
  /// Uniform(-bound, bound) weights and zero biases from `seed`.
  static FirstPassParams create(const ModelConfig& config, std::uint64_t seed);
};

bool is_encoder_param(const std::string& name);

/// Turns theta^I into a (numerically) deterministic model that emits `token`
/// at every step: the output weights are zeroed and the bias of `token` is
/// raised by `margin`. Other parameters are left untouched.
void make_point_mass(FirstPassParams& params, Token token, double margin = 50.0);

/// theta^I bound to one graph.
class FirstPassNet {
 public:
  FirstPassNet(Graph& g, const FirstPassParams& params, int group = kFirstPassGroup);

  Graph& graph() const { return *graph_; }
  const ModelConfig& config() const { return config_; }

  AttentionMemory encode(std::span<const Token> x) const;
  /// Memory over externally supplied encoder states.
  AttentionMemory memory(Var states) const { return att_.memory(states); }
  DecoderCarry start() const;
  Var embed(Token t) const;
  /// Expected embedding under a distribution over output indices [1 x (V-1)];
  /// a one-hot row reproduces embed() exactly.
  Var embed_distribution(Var dist) const;

  struct Step {
    DecoderCarry carry;
    Attended attended;
    Var logits;
    Var log_probs;
  };
  Step step(const DecoderCarry& carry, Var input, const AttentionMemory& mem) const;

 private:
  Graph* graph_;
  ModelConfig config_;
  Var enc_embed_, dec_embed_, out_W_, out_b_;
  GruCell enc_, dec_;
  AdditiveAttention att_;
};

/// Encoder over a shared embedding/GRU parameter set.
Var encode_tokens(Var embed, const GruCell& cell, std::span<const Token> x);

/// Autoregressive view of theta^I for a fixed input, used by the decoders.
class FirstPassStepModel : public StepModel {
 public:
  FirstPassStepModel(const FirstPassNet& net, std::span<const Token> x)
      : net_(net), mem_(net.encode(x)) {}
  DecoderCarry start() override { return net_.start(); }
  StepResult step(const DecoderCarry& carry, Token prev) override;

 private:
  const FirstPassNet& net_;
  AttentionMemory mem_;
};

/// Teacher-forced scoring of y on a graph: log p(y_t | y_<t, x) per step.
struct ScoredSequence {
  Var total;                    // [1x1]
  std::vector<Var> step_lp;     // [1x1] each
  std::vector<Var> log_probs;   // full [1 x (V-1)] rows
  std::vector<Var> alphas;
  std::vector<Var> states;
  std::vector<Var> contexts;
};
ScoredSequence score_first_pass(const FirstPassNet& net, const AttentionMemory& mem,
                                std::span<const Token> y);

// Value-level API.

Tensor encode(std::span<const Token> x, const FirstPassParams& params);

struct DecodeStepValues {
  Tensor state;
  Tensor alpha;
  Tensor context;
  Tensor logits;
};
/// One decoder step over encoder states h [L x d]. c_prev is only read when
/// the context-in-state variant is enabled (zero when omitted).
DecodeStepValues decode_step(const Tensor& s_prev, Token prev, const Tensor& h,
                             const FirstPassParams& params, const Tensor* c_prev = nullptr);

struct SequenceScore {
  double total = 0.0;
  std::vector<double> per_step;
  Tensor attention;  // [T x L]
};
SequenceScore teacher_forced_logprob(std::span<const Token> x, std::span<const Token> y,
                                     const FirstPassParams& params);

Generation generate(std::span<const Token> x, const FirstPassParams& params,
                    const DecodeMode& mode, int max_len, std::uint64_t seed = 0);
std::vector<Generation> nbest(std::span<const Token> x, const FirstPassParams& params, int width,
                              int max_len);

/// Validates a reference sequence for teacher forcing (its length acts as
/// T_max when it carries no EOS).
void check_reference(std::span<const Token> y, const Vocab& vocab);

}  // namespace delib
