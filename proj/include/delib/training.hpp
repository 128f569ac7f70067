#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "delib/delibnet.hpp"
#include "delib/oracle.hpp"
#include "delib/parallel.hpp"

namespace delib {

/// Training data problems (e.g. missing stored samples).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LossReport {
  std::map<std::string, double> losses;
  std::map<std::string, double> grad_norms;
  double wall_seconds = 0.0;

  bool all_finite() const;
};

struct LossAndGrad {
  double loss = 0.0;
  GradientMap grad;
};

struct TrainStep {
  LossReport report;
  PassGradients grads;
};

// ---------------------------------------------------------------- single pass

/// Weighted mean of -log p(y | x; theta^I) with exact gradients.
LossAndGrad nll_teacher_forcing(const FirstPassParams& params, const Batch& batch,
                                Execution exec = default_execution());

std::size_t levenshtein(std::span<const Token> a, std::span<const Token> b);

enum class Distance { zero_one, levenshtein };
Distance parse_distance(std::string_view text);
/// Risk of hypothesis `hyp` for an example.
using RiskFn = std::function<double(const Example& ex, const TokenSeq& hyp)>;
RiskFn distance_risk(Distance d);

struct MbrMode {
  bool exact = true;
  int samples = 1;
  std::uint64_t seed = 0;

  static MbrMode exact_sum() { return {}; }
  static MbrMode sampled(int samples, std::uint64_t seed) { return {false, samples, seed}; }
};

/// Expected risk under theta^I. Exact mode sums over the enumerated space of
/// length <= max_len (CapacityError above `cap`); sampled mode averages M
/// ancestral samples and uses score-function gradients.
LossAndGrad mbr_loss(const FirstPassParams& params, const Batch& batch, const RiskFn& risk,
                     const MbrMode& mode, int max_len, Execution exec = default_execution(),
                     std::uint64_t cap = kDefaultSpaceCap);

// ------------------------------------------------------------------- sampling

struct SamplingStrategy {
  enum class Kind { ancestral, noisy_greedy, beam };
  Kind kind = Kind::ancestral;
  double temperature = 1.0;  // noisy_greedy
  int width = 1;             // beam

  static SamplingStrategy ancestral() { return {}; }
  static SamplingStrategy noisy_greedy(double t) { return {Kind::noisy_greedy, t, 1}; }
  static SamplingStrategy beam(int w) { return {Kind::beam, 1.0, w}; }

  void validate() const;
  /// "ancestral", "noisy_greedy:<t>", "beam:<w>"
  std::string to_string() const;
  static SamplingStrategy parse(std::string_view text);
};

enum class IntermediateMode { free_running, teacher_forced };
IntermediateMode parse_intermediate_mode(std::string_view text);
std::string to_string(IntermediateMode mode);

struct IntermediateSample {
  IntermediateFeatures features;
  double logprob = 0.0;  // log F^I of the tokens
  Tensor noise;          // [T_max x (V-1)] Gumbel draws (ancestral only)
};

struct SampleSet {
  std::vector<IntermediateSample> samples;
  std::size_t size() const { return samples.size(); }
};

/// M free-running first-pass sequences. Ancestral draws are exact i.i.d.
/// samples; their noise is padded to T_max rows so a relaxed replay can run
/// past the hard sample's end. beam(w) cycles through the w-best list.
SampleSet draw_intermediate_samples(const FirstPassParams& first, const TokenSeq& x, int M,
                                    const SamplingStrategy& strategy, int max_len,
                                    std::uint64_t seed);

/// First-pass predictions under the reference back-history: at step t the
/// token is chosen from p(. | y_<t, x) with the strategy's rule (ancestral
/// draw, noisy argmax, or argmax for beam), the sequence is cut after the
/// first EOS, and EOS is appended when none was chosen and |y| < T_max.
SampleSet teacher_forced_intermediate(const FirstPassParams& first, const Example& ex, int M,
                                      const SamplingStrategy& strategy, int max_len,
                                      std::uint64_t seed);

SampleSet intermediate_samples(const FirstPassParams& first, const Example& ex, int M,
                               const SamplingStrategy& strategy, IntermediateMode mode,
                               int max_len, std::uint64_t seed);

/// One SampleSet per example; example i uses the sub-stream (seed, i).
std::vector<SampleSet> draw_batch_samples(const FirstPassParams& first, const Batch& batch, int M,
                                          const SamplingStrategy& strategy, IntermediateMode mode,
                                          int max_len, std::uint64_t seed,
                                          Execution exec = default_execution());

// -------------------------------------------------------------------- schemes

/// MC gradients of the upper-bound loss on stored samples:
///   theta^I:  -(1/M) sum_m log F^II_m grad log F^I_m
///   theta^II: -(1/M) sum_m grad log F^II_m
/// Reported loss "joint" = -(1/M) sum_m log F^II_m (weighted batch mean).
TrainStep joint_grad_step(const DelibModel& model, const Batch& batch,
                          const std::vector<SampleSet>& samples,
                          Execution exec = default_execution());
TrainStep joint_grad_step(const DelibModel& model, const Batch& batch, int M,
                          const SamplingStrategy& strategy, int max_len, std::uint64_t seed,
                          Execution exec = default_execution());

enum class Relaxation { straight_through, relaxed };
Relaxation parse_relaxation(std::string_view text);
std::string to_string(Relaxation r);

/// -log p(y | y~^I, x; theta^II) on one graph, where y~^I is rebuilt from the
/// frozen Gumbel noise (rows of `noise`) and theta^I's log-probabilities:
/// soft_t = softmax((log p_t + z_t) / tau). Straight-through rows carry the
/// hard one-hot argmax(log p_t + z_t) forward; relaxed rows carry soft_t.
/// Either way the row feeds the next first-pass step and the y-encoder, and
/// the sequence ends at the first hard EOS or at max_len.
Var relaxed_joint_loss(const FirstPassNet& first, const SecondPassNet& second, const Example& ex,
                       const Tensor& noise, double tau, Relaxation relaxation, int max_len);

/// MC loss with reparameterized samples: pathwise theta^I gradient, theta^II
/// gradient -(1/M) sum grad log F^II. Uses the noise stored in `samples`.
TrainStep joint_loss_step(const DelibModel& model, const Batch& batch,
                          const std::vector<SampleSet>& samples, double tau,
                          Relaxation relaxation, int max_len,
                          Execution exec = default_execution());

/// Teacher forcing on theta^I alone ("nll").
TrainStep separate_train_first(const FirstPassParams& first, const Batch& batch,
                               Execution exec = default_execution());
/// -(1/M) sum_m grad log F^II_m on stored samples. Reports "separate"
/// = -(1/M) sum log F^II_m and "separate_log_mean" = -log((1/M) sum F^II_m).
TrainStep separate_train_second(const SecondPassParams& second, const Batch& batch,
                                const std::vector<SampleSet>& samples,
                                Execution exec = default_execution());

// ---------------------------------------------------------- guided attention

/// w_{t,l} = 1 - exp(-(t/T - l/T^I)^2 / (2 g^2)), t and l 1-based.
Tensor guided_attention_weights(int T, int T_first, double g);
double guided_attention_loss(const Tensor& attn_y, double g);
Var guided_attention_loss(Graph& graph, std::span<const Var> alphas_y, double g);

/// L_y + gamma * L_alpha, both averaged over samples and (weighted) batch.
/// Reports "separate", "guided_attention" and "combined".
TrainStep combined_second_pass_loss(const SecondPassParams& second, const Batch& batch,
                                    const std::vector<SampleSet>& samples, double gamma, double g,
                                    Execution exec = default_execution());

/// Gradient of L_alpha alone (averaged like the combined loss); lets a joint
/// scheme add gamma * grad L_alpha to its own theta^II gradient.
TrainStep guided_attention_step(const SecondPassParams& second, const Batch& batch,
                                const std::vector<SampleSet>& samples, double g,
                                Execution exec = default_execution());

// ------------------------------------------------------------------ info gain

/// Mean over the batch of (1/T) sum_t [H(p^I_t) - H(p^II_t)], both terms under
/// the reference back-history, with one intermediate sequence per example
/// drawn in `mode`. Entropies in nats.
double info_gain_estimate(const DelibModel& model, const Batch& batch, IntermediateMode mode,
                          const SamplingStrategy& strategy, int max_len, std::uint64_t seed,
                          Execution exec = default_execution());

// ------------------------------------------------------------------ optimizer

struct UpdateStats {
  double norm = 0.0;
  double applied_norm = 0.0;
  bool clipped = false;
};

/// theta <- theta - lr * g with global-norm clipping (clip <= 0 disables it).
/// A non-finite gradient is rejected with NumericDomainError and leaves the
/// parameters untouched.
UpdateStats sgd_update(ParameterTable& params, const GradientMap& grad, double lr, double clip);

// ---------------------------------------------------------------- schemes cfg

struct Scheme {
  enum class Kind { joint_grad, joint_loss, separate };
  Kind kind = Kind::separate;
  int samples = 4;
  double temperature = 1.0;  // Gumbel-softmax tau (joint_loss)
  Relaxation relaxation = Relaxation::straight_through;
  SamplingStrategy sampling;

  void validate() const;
};
Scheme::Kind parse_scheme_kind(std::string_view text);
std::string to_string(Scheme::Kind kind);

}  // namespace delib
