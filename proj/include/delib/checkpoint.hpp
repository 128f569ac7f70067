#pragma once

#include <filesystem>
#include <string>

#include "delib/config.hpp"
#include "delib/delibnet.hpp"

namespace delib {

struct Checkpoint {
  RunConfig config;
  DelibModel model;
  int epoch = 0;
  std::string phase;  // "init", "pretrain", "scheme"
};

/// {"format":..., "epoch", "phase", "config", "first": {name: {"shape", "values"}},
///  "second": {...own theta^II names...}}. Doubles are printed with enough
/// digits to round-trip exactly.
nlohmann::json checkpoint_to_json(const Checkpoint& ck);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

/// Writes to a sibling temporary file and renames it into place, so a crash
/// never leaves a truncated checkpoint behind.
void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace delib
