#include "delib/checkpoint.hpp"

#include <fstream>

namespace delib {

namespace {

using nlohmann::json;

constexpr const char* kFormat = "delib-checkpoint/1";

json table_json(const ParameterTable& table, const std::vector<std::string>& names) {
  json out = json::object();
  for (const auto& name : names) {
    const Tensor& t = table.at(name);
    out[name] = {{"shape", {t.rows(), t.cols()}}, {"values", std::vector<double>(t.values().begin(), t.values().end())}};
  }
  return out;
}

void fill_table(ParameterTable& table, const std::vector<std::string>& names, const json& j, const char* part) {
  if (!j.is_object() || j.size() != names.size()) {
    throw ConfigError(std::string("checkpoint: '") + part + "' does not list the expected " +
                      std::to_string(names.size()) + " tensors");
  }
  for (const auto& name : names) {
    if (!j.contains(name)) throw ConfigError(std::string("checkpoint: missing ") + part + "." + name);
    Tensor& t = table.at(name);
    const auto shape = j.at(name).at("shape").get<std::vector<int>>();
    const auto values = j.at(name).at("values").get<std::vector<double>>();
    if (shape != std::vector<int>{t.rows(), t.cols()} || values.size() != t.size()) {
      throw ConfigError("checkpoint: " + std::string(part) + "." + name + " has shape [" +
                        (shape.size() == 2 ? std::to_string(shape[0]) + "x" + std::to_string(shape[1]) : "?") +
                        "], expected " + t.shape_string());
    }
    std::copy(values.begin(), values.end(), t.values().begin());
  }
}

}  // namespace

json checkpoint_to_json(const Checkpoint& ck) {
  return json{{"format", kFormat},
              {"epoch", ck.epoch},
              {"phase", ck.phase},
              {"config", to_json(ck.config)},
              {"first", table_json(ck.model.first.table, ck.model.first.table.names())},
              {"second", table_json(ck.model.second.table, ck.model.second.own_names())}};
}

Checkpoint checkpoint_from_json(const json& j) {
  try {
    if (j.value("format", "") != kFormat) throw ConfigError("not a checkpoint (format tag missing)");
    RunConfig config = config_from_json(j.at("config"));
    FirstPassParams first = FirstPassParams::zeros(config.model_config());
    SecondPassParams second = SecondPassParams::zeros(first);
    fill_table(first.table, first.table.names(), j.at("first"), "first");
    fill_table(second.table, second.own_names(), j.at("second"), "second");
    return Checkpoint{config, DelibModel(std::move(first), std::move(second)), j.at("epoch").get<int>(),
                      j.at("phase").get<std::string>()};
  } catch (const json::exception& e) {
    throw ConfigError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << checkpoint_to_json(ck).dump() << '\n';
    if (!out) throw std::runtime_error("error while writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read checkpoint " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace delib
