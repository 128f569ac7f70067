#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "delib/seq2seq.hpp"
#include "delib/tasks.hpp"
#include "delib/training.hpp"
#include "json.hpp"

namespace delib {

/// Invalid configuration; the message names the offending field.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ModelSection {
  int width = 32;
  bool intermediate_extras = false;
  bool context_in_state = false;
  double init_bound = 0.08;
};

struct OptimizerSection {
  double lr = 0.05;
  double clip = 5.0;
  int epochs = 10;           // scheme phase
  int pretrain_epochs = 10;  // teacher forcing on theta^I
  int batch_size = 32;
};

struct RegularizerSection {
  bool enabled = false;
  double gamma = 1.0;
  double g = 0.2;
};

struct EvalSection {
  std::string decode = "greedy";  // DecodeMode text
  int attention_dumps = 20;       // examples per split written to attention_<split>.jsonl
};

/// Sizes used by the `verify` and `gradcheck` commands.
struct VerifySection {
  int vocab_size = 4;
  int max_len = 3;
  int width = 2;
  int instances = 100;
  std::size_t trials = 10000;
  double z_threshold = 4.0;
};

struct RunConfig {
  TaskSpec task;
  ModelSection model;
  Scheme scheme;
  OptimizerSection optimizer;
  RegularizerSection regularizer;
  IntermediateMode intermediate_mode = IntermediateMode::free_running;
  EvalSection eval;
  VerifySection verify;
  std::uint64_t seed = 1;
  std::string output_dir = "runs/default";

  ModelConfig model_config() const;
  DecodeMode decode_mode() const { return DecodeMode::parse(eval.decode); }
  std::filesystem::path data_path(Split split) const;
  /// Throws ConfigError naming the first invalid field.
  void validate() const;
};

nlohmann::json to_json(const RunConfig& config);
/// Missing fields keep their defaults; unknown keys and type mismatches are
/// ConfigErrors. The result is validated.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);

}  // namespace delib
