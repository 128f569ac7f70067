#include "delib/tasks.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "delib/parallel.hpp"
#include "delib/rng.hpp"

namespace delib {

namespace {

constexpr const char* kFormat = "delib-corpus/1";

const std::set<std::string> kTaskKeys{"kind",     "p_noise",  "vocab_size", "min_len", "max_len",
                                      "train_size", "dev_size", "test_size",  "seed"};

}  // namespace

TaskKind parse_task_kind(std::string_view text) {
  if (text == "copy") return TaskKind::copy;
  if (text == "reverse") return TaskKind::reverse;
  if (text == "noisy_copy") return TaskKind::noisy_copy;
  throw ContractViolation("task kind must be copy, reverse or noisy_copy, got '" + std::string(text) + "'");
}

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::copy: return "copy";
    case TaskKind::reverse: return "reverse";
    case TaskKind::noisy_copy: return "noisy_copy";
  }
  return "?";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "dev") return Split::dev;
  if (text == "test") return Split::test;
  throw ContractViolation("split must be train, dev or test, got '" + std::string(text) + "'");
}

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "?";
}

void TaskSpec::validate() const {
  if (vocab_size < 3) {
    throw ContractViolation("task.vocab_size must be >= 3 (BOS, EOS and one content token), got " +
                            std::to_string(vocab_size));
  }
  if (min_len < 1) throw ContractViolation("task.min_len must be >= 1, got " + std::to_string(min_len));
  if (max_len < min_len) {
    throw ContractViolation("task.max_len (" + std::to_string(max_len) + ") is below task.min_len (" +
                            std::to_string(min_len) + ")");
  }
  if (!(p_noise >= 0.0 && p_noise <= 1.0)) {
    throw ContractViolation("task.p_noise must lie in [0, 1], got " + std::to_string(p_noise));
  }
  if (kind != TaskKind::noisy_copy && p_noise != 0.0) {
    throw ContractViolation("task.p_noise is only meaningful for noisy_copy");
  }
  if (kind == TaskKind::noisy_copy && p_noise > 0.0 && vocab_size < 4) {
    throw ContractViolation("noisy_copy needs at least two content tokens (vocab_size >= 4) to corrupt a token");
  }
  if (train_size < 1) throw ContractViolation("task.train_size must be >= 1");
}

std::size_t TaskSpec::split_size(Split s) const {
  switch (s) {
    case Split::train: return train_size;
    case Split::dev: return dev_size;
    case Split::test: return test_size;
  }
  return 0;
}

std::size_t TaskSpec::split_offset(Split s) const {
  switch (s) {
    case Split::train: return 0;
    case Split::dev: return train_size;
    case Split::test: return train_size + dev_size;
  }
  return 0;
}

void to_json(nlohmann::json& j, const TaskSpec& s) {
  j = nlohmann::json{{"kind", to_string(s.kind)},      {"p_noise", s.p_noise},
                     {"vocab_size", s.vocab_size},     {"min_len", s.min_len},
                     {"max_len", s.max_len},           {"train_size", s.train_size},
                     {"dev_size", s.dev_size},         {"test_size", s.test_size},
                     {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, TaskSpec& s) {
  if (!j.is_object()) throw ContractViolation("task must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!kTaskKeys.count(key)) throw ContractViolation("unknown key 'task." + key + "'");
  }
  TaskSpec out;
  try {
    if (j.contains("kind")) out.kind = parse_task_kind(j.at("kind").get<std::string>());
    out.p_noise = j.value("p_noise", out.p_noise);
    out.vocab_size = j.value("vocab_size", out.vocab_size);
    out.min_len = j.value("min_len", out.min_len);
    out.max_len = j.value("max_len", out.max_len);
    out.train_size = j.value("train_size", out.train_size);
    out.dev_size = j.value("dev_size", out.dev_size);
    out.test_size = j.value("test_size", out.test_size);
    out.seed = j.value("seed", out.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ContractViolation(std::string("task: ") + e.what());
  }
  s = out;
}

Example generate_pair(const TaskSpec& spec, std::size_t global_index) {
  Rng rng = Rng::derive(spec.seed, {static_cast<std::uint64_t>(global_index)});
  const std::uint64_t C = static_cast<std::uint64_t>(spec.vocab_size - 2);
  const int len = spec.min_len + static_cast<int>(rng.below(spec.max_len - spec.min_len + 1));
  TokenSeq content(len);
  for (Token& t : content) t = 2 + static_cast<Token>(rng.below(C));

  Example ex;
  switch (spec.kind) {
    case TaskKind::copy:
      ex.x = ex.y = content;
      break;
    case TaskKind::reverse:
      ex.x = content;
      ex.y.assign(content.rbegin(), content.rend());
      break;
    case TaskKind::noisy_copy:
      ex.y = content;
      ex.x = content;
      // A corrupted position always receives a different content token.
      for (Token& t : ex.x) {
        if (rng.bernoulli(spec.p_noise)) {
          t = 2 + static_cast<Token>((static_cast<std::uint64_t>(t - 2) + 1 + rng.below(C - 1)) % C);
        }
      }
      break;
  }
  ex.x.push_back(Vocab::eos);
  ex.y.push_back(Vocab::eos);
  return ex;
}

Corpus generate_corpus(const TaskSpec& spec, Split split) {
  spec.validate();
  const std::size_t offset = spec.split_offset(split);
  Corpus c{spec, split, {}};
  c.pairs = map_indices<Example>(spec.split_size(split), default_execution(),
                                 [&](std::size_t i) { return generate_pair(spec, offset + i); });
  return c;
}

double corruption_rate(const Corpus& corpus) {
  std::size_t changed = 0, total = 0;
  for (const Example& ex : corpus.pairs) {
    if (ex.x.size() != ex.y.size()) throw ContractViolation("corruption_rate needs equal-length pairs");
    for (std::size_t i = 0; i + 1 < ex.x.size(); ++i) {
      changed += ex.x[i] != ex.y[i];
      ++total;
    }
  }
  return total ? static_cast<double>(changed) / static_cast<double>(total) : 0.0;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write corpus file " + path.string());
  const nlohmann::json header{{"format", kFormat}, {"split", to_string(corpus.split)}, {"task", corpus.task}};
  out << header.dump() << '\n';
  auto write_seq = [&](const TokenSeq& s) {
    for (std::size_t i = 0; i < s.size(); ++i) out << (i ? " " : "") << s[i];
  };
  for (const Example& ex : corpus.pairs) {
    write_seq(ex.x);
    out << '\t';
    write_seq(ex.y);
    out << '\n';
  }
  if (!out) throw std::runtime_error("error while writing " + path.string());
}

namespace {

TokenSeq parse_ids(std::string_view field, const Vocab& vocab, int max_tokens, std::size_t line,
                   const char* which) {
  TokenSeq out;
  std::size_t pos = 0;
  while (pos < field.size()) {
    if (field[pos] == ' ') {
      ++pos;
      continue;
    }
    std::size_t end = field.find(' ', pos);
    if (end == std::string_view::npos) end = field.size();
    Token t = 0;
    const auto res = std::from_chars(field.data() + pos, field.data() + end, t);
    if (res.ec != std::errc() || res.ptr != field.data() + end) {
      throw ParseError(line, std::string(which) + ": bad token '" + std::string(field.substr(pos, end - pos)) + "'");
    }
    if (!vocab.contains(t)) {
      throw ParseError(line, std::string(which) + ": token id " + std::to_string(t) + " outside vocabulary of size " +
                                 std::to_string(vocab.size()));
    }
    out.push_back(t);
    pos = end;
  }
  if (!is_valid_token_seq(out, vocab, max_tokens)) {
    throw ParseError(line, std::string(which) + ": not a valid sequence (" + to_string(out) + ")");
  }
  return out;
}

}  // namespace

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read corpus file " + path.string());
  std::string text;
  if (!std::getline(in, text)) throw ParseError(1, "missing header");
  Corpus c;
  try {
    const nlohmann::json header = nlohmann::json::parse(text);
    if (header.value("format", "") != kFormat) throw ParseError(1, "unsupported corpus format");
    c.split = parse_split(header.at("split").get<std::string>());
    c.task = header.at("task").get<TaskSpec>();
    c.task.validate();
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception& e) {
    throw ParseError(1, std::string("bad header: ") + e.what());
  }
  const Vocab vocab(c.task.vocab_size);
  std::size_t line = 1;
  while (std::getline(in, text)) {
    ++line;
    const auto tab = text.find('\t');
    if (tab == std::string::npos) throw ParseError(line, "expected 'x ids<TAB>y ids'");
    const std::string_view sv(text);
    Example ex;
    ex.x = parse_ids(sv.substr(0, tab), vocab, c.task.max_tokens(), line, "x");
    ex.y = parse_ids(sv.substr(tab + 1), vocab, c.task.max_tokens(), line, "y");
    c.pairs.push_back(std::move(ex));
  }
  return c;
}

}  // namespace delib
