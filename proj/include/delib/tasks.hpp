#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "delib/vocab.hpp"
#include "json.hpp"

namespace delib {

enum class TaskKind { copy, reverse, noisy_copy };
TaskKind parse_task_kind(std::string_view text);
std::string to_string(TaskKind kind);

enum class Split { train, dev, test };
Split parse_split(std::string_view text);
std::string to_string(Split split);

struct TaskSpec {
  TaskKind kind = TaskKind::copy;
  double p_noise = 0.0;  // noisy_copy only
  int vocab_size = 12;
  int min_len = 4;  // content tokens, EOS excluded
  int max_len = 8;
  std::size_t train_size = 2000;
  std::size_t dev_size = 200;
  std::size_t test_size = 200;
  std::uint64_t seed = 1;

  void validate() const;
  /// Longest sequence including EOS.
  int max_tokens() const { return max_len + 1; }
  std::size_t split_size(Split s) const;
  /// First global pair index of a split; splits occupy consecutive ranges.
  std::size_t split_offset(Split s) const;
  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

void to_json(nlohmann::json& j, const TaskSpec& spec);
/// Unknown keys are rejected.
void from_json(const nlohmann::json& j, TaskSpec& spec);

struct Corpus {
  TaskSpec task;
  Split split = Split::train;
  Batch pairs;

  std::size_t size() const { return pairs.size(); }
  friend bool operator==(const Corpus&, const Corpus&) = default;
};

/// Pair i of a split is drawn from the sub-stream (seed, split_offset + i),
/// so every pair is reproducible on its own.
Example generate_pair(const TaskSpec& spec, std::size_t global_index);
Corpus generate_corpus(const TaskSpec& spec, Split split);

/// Fraction of content positions where x differs from y (pairs of equal length).
double corruption_rate(const Corpus& corpus);

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Header line: {"format":"delib-corpus/1","split":...,"task":{...}}; then one
/// pair per line, "x ids<TAB>y ids" with space-separated integers.
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path);

}  // namespace delib
