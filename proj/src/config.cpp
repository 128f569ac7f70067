#include "delib/config.hpp"

#include <fstream>
#include <set>

namespace delib {

namespace {

using nlohmann::json;

// Typed field access over one JSON object with unknown-key rejection.
class Section {
 public:
  Section(const json& j, std::string path, std::set<std::string> keys) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("'" + path_ + "' must be an object");
    for (const auto& [key, _] : j_.items()) {
      if (!keys.count(key)) throw ConfigError("unknown key '" + field(key) + "'");
    }
  }

  template <class T>
  void read(const char* key, T& out) const {
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("'" + field(key) + "' has the wrong type (" + j_.at(key).dump() + ")");
    }
  }

  template <class T, class Parse>
  void parse(const char* key, T& out, Parse&& fn) const {
    std::string text;
    read(key, text);
    if (text.empty()) return;
    try {
      out = fn(text);
    } catch (const ContractViolation& e) {
      throw ConfigError("'" + field(key) + "': " + e.what());
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& at(const char* key) const { return j_.at(key); }
  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  const json& j_;
  std::string path_;
};

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.vocab_size = task.vocab_size;
  m.width = model.width;
  m.context_in_state = model.context_in_state;
  m.intermediate_extras = model.intermediate_extras;
  m.init_bound = model.init_bound;
  return m;
}

std::filesystem::path RunConfig::data_path(Split split) const {
  return std::filesystem::path(output_dir) / "data" / (to_string(split) + ".tsv");
}

void RunConfig::validate() const {
  auto wrap = [](const char* section, auto&& fn) {
    try {
      fn();
    } catch (const ContractViolation& e) {
      throw ConfigError(std::string(section) + ": " + e.what());
    }
  };
  wrap("task", [&] { task.validate(); });
  wrap("model", [&] { model_config().validate(); });
  wrap("scheme", [&] { scheme.validate(); });
  wrap("eval.decode", [&] { decode_mode().validate(); });
  require(optimizer.lr > 0.0, "optimizer.lr must be > 0");
  require(optimizer.epochs >= 0, "optimizer.epochs must be >= 0");
  require(optimizer.pretrain_epochs >= 0, "optimizer.pretrain_epochs must be >= 0");
  require(optimizer.batch_size >= 1, "optimizer.batch_size must be >= 1");
  require(regularizer.gamma >= 0.0, "regularizer.gamma must be >= 0");
  require(regularizer.g > 0.0, "regularizer.g must be > 0");
  require(eval.attention_dumps >= 0, "eval.attention_dumps must be >= 0");
  require(scheme.kind == Scheme::Kind::separate || intermediate_mode == IntermediateMode::free_running,
          "intermediate_mode=teacher_forced is only supported with scheme.kind=separate");
  require(scheme.kind != Scheme::Kind::joint_loss || scheme.sampling.kind == SamplingStrategy::Kind::ancestral,
          "scheme.kind=joint_loss needs scheme.sampling=ancestral (it replays the Gumbel noise)");
  require(verify.vocab_size >= 3, "verify.vocab_size must be >= 3");
  require(verify.max_len >= 1, "verify.max_len must be >= 1");
  require(verify.width >= 1, "verify.width must be >= 1");
  require(verify.instances >= 1, "verify.instances must be >= 1");
  require(verify.trials >= 2, "verify.trials must be >= 2");
  require(verify.z_threshold > 0.0, "verify.z_threshold must be > 0");
  require(!output_dir.empty(), "output_dir must not be empty");
}

json to_json(const RunConfig& c) {
  return json{
      {"task", c.task},
      {"model",
       {{"width", c.model.width},
        {"intermediate_extras", c.model.intermediate_extras},
        {"context_in_state", c.model.context_in_state},
        {"init_bound", c.model.init_bound}}},
      {"scheme",
       {{"kind", to_string(c.scheme.kind)},
        {"samples", c.scheme.samples},
        {"temperature", c.scheme.temperature},
        {"relaxation", to_string(c.scheme.relaxation)},
        {"sampling", c.scheme.sampling.to_string()}}},
      {"optimizer",
       {{"lr", c.optimizer.lr},
        {"clip", c.optimizer.clip},
        {"epochs", c.optimizer.epochs},
        {"pretrain_epochs", c.optimizer.pretrain_epochs},
        {"batch_size", c.optimizer.batch_size}}},
      {"regularizer", {{"enabled", c.regularizer.enabled}, {"gamma", c.regularizer.gamma}, {"g", c.regularizer.g}}},
      {"intermediate_mode", to_string(c.intermediate_mode)},
      {"eval", {{"decode", c.eval.decode}, {"attention_dumps", c.eval.attention_dumps}}},
      {"verify",
       {{"vocab_size", c.verify.vocab_size},
        {"max_len", c.verify.max_len},
        {"width", c.verify.width},
        {"instances", c.verify.instances},
        {"trials", c.verify.trials},
        {"z_threshold", c.verify.z_threshold}}},
      {"seed", c.seed},
      {"output_dir", c.output_dir}};
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  Section top(j, "", {"task", "model", "scheme", "optimizer", "regularizer", "intermediate_mode", "eval", "verify",
                      "seed", "output_dir"});
  if (top.has("task")) {
    try {
      c.task = top.at("task").get<TaskSpec>();
    } catch (const ContractViolation& e) {
      throw ConfigError(e.what());
    } catch (const json::exception& e) {
      throw ConfigError(std::string("task: ") + e.what());
    }
  }
  if (top.has("model")) {
    Section s(top.at("model"), "model", {"width", "intermediate_extras", "context_in_state", "init_bound"});
    s.read("width", c.model.width);
    s.read("intermediate_extras", c.model.intermediate_extras);
    s.read("context_in_state", c.model.context_in_state);
    s.read("init_bound", c.model.init_bound);
  }
  if (top.has("scheme")) {
    Section s(top.at("scheme"), "scheme", {"kind", "samples", "temperature", "relaxation", "sampling"});
    s.parse("kind", c.scheme.kind, parse_scheme_kind);
    s.read("samples", c.scheme.samples);
    s.read("temperature", c.scheme.temperature);
    s.parse("relaxation", c.scheme.relaxation, parse_relaxation);
    s.parse("sampling", c.scheme.sampling, SamplingStrategy::parse);
  }
  if (top.has("optimizer")) {
    Section s(top.at("optimizer"), "optimizer", {"lr", "clip", "epochs", "pretrain_epochs", "batch_size"});
    s.read("lr", c.optimizer.lr);
    s.read("clip", c.optimizer.clip);
    s.read("epochs", c.optimizer.epochs);
    s.read("pretrain_epochs", c.optimizer.pretrain_epochs);
    s.read("batch_size", c.optimizer.batch_size);
  }
  if (top.has("regularizer")) {
    Section s(top.at("regularizer"), "regularizer", {"enabled", "gamma", "g"});
    s.read("enabled", c.regularizer.enabled);
    s.read("gamma", c.regularizer.gamma);
    s.read("g", c.regularizer.g);
  }
  top.parse("intermediate_mode", c.intermediate_mode, parse_intermediate_mode);
  if (top.has("eval")) {
    Section s(top.at("eval"), "eval", {"decode", "attention_dumps"});
    s.read("decode", c.eval.decode);
    s.read("attention_dumps", c.eval.attention_dumps);
  }
  if (top.has("verify")) {
    Section s(top.at("verify"), "verify", {"vocab_size", "max_len", "width", "instances", "trials", "z_threshold"});
    s.read("vocab_size", c.verify.vocab_size);
    s.read("max_len", c.verify.max_len);
    s.read("width", c.verify.width);
    s.read("instances", c.verify.instances);
    s.read("trials", c.verify.trials);
    s.read("z_threshold", c.verify.z_threshold);
  }
  top.read("seed", c.seed);
  top.read("output_dir", c.output_dir);
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace delib
