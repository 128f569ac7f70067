#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "delib/checkpoint.hpp"
#include "delib/config.hpp"
#include "delib/tasks.hpp"

namespace delib {

struct MetricRecord {
  int epoch = 0;
  std::string split;
  std::string phase;   // "pretrain", "scheme", "eval"
  std::string scheme;
  std::optional<double> nll;
  std::optional<double> token_error_rate;
  std::optional<double> exact_match;
  std::optional<double> guided_attention;
  std::optional<double> band_mass;  // mean alpha_y mass with |t/T - l/T^I| < 0.2
  std::optional<double> info_gain_free_running;
  std::optional<double> info_gain_teacher_forced;
  double wall_seconds = 0.0;

  /// Absent values are written as null.
  nlohmann::json to_json() const;
};

/// Content tokens of a sequence (EOS removed).
TokenSeq content_of(const TokenSeq& seq);

/// Corpus-level rate: sum of Levenshtein distances over content tokens divided
/// by the sum of max(|hyp|, |ref|).
double token_error_rate(const std::vector<TokenSeq>& hyps, const std::vector<TokenSeq>& refs);

/// Mean over rows of the alpha mass inside |t/T - l/T^I| < band (1-based t, l).
double band_mass(const Tensor& attn_y, double band = 0.2);

struct EvalOptions {
  DecodeMode mode = DecodeMode::greedy();
  bool two_pass = true;
  std::uint64_t seed = 0;
  int attention_dumps = 0;
  double g = 0.2;
  bool info_gain = true;
};

struct EvalResult {
  MetricRecord record;
  std::vector<TokenSeq> hypotheses;
  std::vector<nlohmann::json> attention;  // first `attention_dumps` examples
};

/// Decodes every pair (two-pass or first pass only) and scores the outputs.
/// NLL is -log p(y | x) for the first pass and -log p(y | y^I, x) with y^I the
/// decoded first-pass output for the two-pass model. Refuses a corpus whose
/// vocabulary differs from the model's.
EvalResult evaluate_model(const DelibModel& model, const Corpus& corpus, const EvalOptions& opts,
                          Execution exec = default_execution());

struct TrainHooks {
  std::function<void(const MetricRecord&)> on_metric;
  std::function<void(const Checkpoint&)> on_checkpoint;
};

struct TrainOutcome {
  Checkpoint final;
  std::vector<MetricRecord> metrics;
  bool numeric_failure = false;
  std::string failure;
};

/// Pretraining (teacher forcing on theta^I) followed by the configured scheme.
/// A checkpoint is emitted after every epoch. A non-finite loss or gradient
/// stops training; the outcome then holds the last good checkpoint.
TrainOutcome run_training(const RunConfig& config, const Corpus& train, const Corpus* dev,
                          const TrainHooks& hooks = {}, Execution exec = default_execution());

/// Second-pass phase of the separate scheme, on an already trained theta^I
/// (used to compare intermediate modes on a shared first pass).
TrainOutcome continue_separate(const RunConfig& config, const DelibModel& start, const Corpus& train,
                               const Corpus* dev, const TrainHooks& hooks = {},
                               Execution exec = default_execution());

}  // namespace delib
