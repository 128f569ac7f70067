// Command-line front end: generate-data, train, evaluate, verify, gradcheck.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "delib/experiment.hpp"
#include "delib/verify.hpp"

namespace fs = std::filesystem;
using namespace delib;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kNumeric = 2;
constexpr int kVerifyFailed = 3;

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("delib");
  logger->set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("DELIB_LOG_LEVEL")) {
    const auto level = spdlog::level::from_str(env);
    // from_str maps unknown names to "off"; only accept a real match.
    if (level != spdlog::level::off || std::string(env) == "off") {
      spdlog::set_level(level);
    } else {
      spdlog::warn("ignoring DELIB_LOG_LEVEL='{}' (use trace, debug, info, warn, error or off)", env);
    }
  }
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

RunConfig resolve(const Common& c) {
  RunConfig cfg = load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.output_dir = c.out;
  cfg.validate();
  return cfg;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

int cmd_generate(const Common& c) {
  const RunConfig cfg = resolve(c);
  for (Split s : {Split::train, Split::dev, Split::test}) {
    const Corpus corpus = generate_corpus(cfg.task, s);
    save_corpus(corpus, cfg.data_path(s));
    spdlog::info("wrote {} pairs to {}", corpus.size(), cfg.data_path(s).string());
  }
  return kOk;
}

Corpus load_split(const RunConfig& cfg, Split s) {
  const fs::path p = cfg.data_path(s);
  if (!fs::exists(p)) {
    throw ConfigError("missing corpus " + p.string() + " (run generate-data with the same config first)");
  }
  Corpus c = load_corpus(p);
  if (!(c.task == cfg.task)) throw ConfigError(p.string() + " was generated from a different task section");
  return c;
}

int cmd_train(const Common& c) {
  const RunConfig cfg = resolve(c);
  const Corpus train = load_split(cfg, Split::train);
  const Corpus dev = load_split(cfg, Split::dev);
  const fs::path dir(cfg.output_dir);
  write_json(dir / "config.json", to_json(cfg));
  const fs::path metrics_path = dir / "metrics.jsonl";
  std::ofstream metrics(metrics_path, std::ios::binary | std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot write " + metrics_path.string());
  TrainHooks hooks;
  hooks.on_metric = [&](const MetricRecord& r) {
    metrics << r.to_json().dump() << '\n';
    metrics.flush();
  };
  hooks.on_checkpoint = [&](const Checkpoint& ck) { save_checkpoint(ck, dir / "checkpoint.json"); };
  const TrainOutcome outcome = run_training(cfg, train, &dev, hooks);
  if (outcome.numeric_failure) {
    spdlog::error("{}; last good checkpoint (epoch {}) kept at {}", outcome.failure, outcome.final.epoch,
                  (dir / "checkpoint.json").string());
    return kNumeric;
  }
  spdlog::info("finished {} epochs; checkpoint at {}", outcome.final.epoch, (dir / "checkpoint.json").string());
  return kOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string corpus;
  std::string split = "test";
  std::string mode;
  bool single_pass = false;
  std::string out;
  std::optional<std::uint64_t> seed;
};

int cmd_evaluate(const EvalArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const fs::path corpus_path = a.corpus.empty() ? ck.config.data_path(parse_split(a.split)) : fs::path(a.corpus);
  const Corpus corpus = load_corpus(corpus_path);
  EvalOptions opts;
  opts.mode = DecodeMode::parse(a.mode.empty() ? ck.config.eval.decode : a.mode);
  opts.two_pass = !a.single_pass;
  opts.seed = a.seed.value_or(ck.config.seed);
  opts.attention_dumps = ck.config.eval.attention_dumps;
  opts.g = ck.config.regularizer.g;
  EvalResult r = evaluate_model(ck.model, corpus, opts);
  r.record.epoch = ck.epoch;
  r.record.scheme = to_string(ck.config.scheme.kind);
  const fs::path dir = a.out.empty() ? fs::path(ck.config.output_dir) : fs::path(a.out);
  fs::create_directories(dir);
  {
    std::ofstream log(dir / "eval_metrics.jsonl", std::ios::binary | std::ios::app);
    log << r.record.to_json().dump() << '\n';
  }
  {
    std::ofstream att(dir / ("attention_" + to_string(corpus.split) + ".jsonl"), std::ios::binary | std::ios::trunc);
    for (const auto& j : r.attention) att << j.dump() << '\n';
  }
  std::cout << r.record.to_json().dump() << std::endl;
  return kOk;
}

int cmd_verify(const Common& c) {
  const RunConfig cfg = resolve(c);
  const VerifyReport report = run_verification(cfg.verify, cfg.seed);
  for (const auto& check : report.checks) std::cout << check.line() << '\n';
  write_json(fs::path(cfg.output_dir) / "verify_report.json", report.to_json());
  std::cout << (report.passed() ? "verify: all checks passed" : "verify: FAILED") << std::endl;
  return report.passed() ? kOk : kVerifyFailed;
}

int cmd_gradcheck(const Common& c) {
  const RunConfig cfg = resolve(c);
  bool ok = true;
  for (const auto& check : check_gradients(cfg.verify, cfg.seed, default_execution())) {
    std::cout << check.line() << '\n';
    ok = ok && check.passed;
  }
  std::cout << (ok ? "gradcheck: all losses passed" : "gradcheck: FAILED") << std::endl;
  return ok ? kOk : kVerifyFailed;
}

void add_common(CLI::App* cmd, Common& c, bool needs_out = true) {
  cmd->add_option("--config", c.config, "JSON run configuration")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "override the run seed");
  if (needs_out) cmd->add_option("--out", c.out, "override output_dir");
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Two-pass deliberation network lab"};
  app.require_subcommand(1);
  Common common;
  EvalArgs eval;

  auto* gen = app.add_subcommand("generate-data", "write train/dev/test corpora under <out>/data");
  add_common(gen, common);
  auto* train = app.add_subcommand("train", "pretrain theta^I, then run the configured scheme");
  add_common(train, common);
  auto* evaluate = app.add_subcommand("evaluate", "decode a corpus with a checkpoint and report metrics");
  evaluate->add_option("--checkpoint", eval.checkpoint, "checkpoint JSON")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--corpus", eval.corpus, "corpus file (default: the checkpoint's <split> corpus)");
  evaluate->add_option("--split", eval.split, "train, dev or test")->check(CLI::IsMember({"train", "dev", "test"}));
  evaluate->add_option("--mode", eval.mode, "greedy, sample:<t> or beam:<w> (default: eval.decode)");
  evaluate->add_flag("--single-pass", eval.single_pass, "decode with theta^I only");
  evaluate->add_option("--seed", eval.seed, "decoding seed (sample mode)");
  evaluate->add_option("--out", eval.out, "directory for eval_metrics.jsonl and attention dumps");
  auto* verify = app.add_subcommand("verify", "run the oracle verification suite");
  add_common(verify, common);
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference checks of every loss");
  add_common(gradcheck, common, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_generate(common);
    if (*train) return cmd_train(common);
    if (*evaluate) return cmd_evaluate(eval);
    if (*verify) return cmd_verify(common);
    if (*gradcheck) return cmd_gradcheck(common);
  } catch (const NumericDomainError& e) {
    spdlog::error("numeric failure: {}", e.what());
    return kNumeric;
  } catch (const ConfigError& e) {
    spdlog::error("configuration error: {}", e.what());
    return kUsage;
  } catch (const ParseError& e) {
    spdlog::error("corpus parse error: {}", e.what());
    return kUsage;
  } catch (const CapacityError& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  } catch (const ContractViolation& e) {
    spdlog::error("invalid argument: {}", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  }
  return kUsage;
}
