#pragma once

#include "ndp/data.hpp"
#include "ndp/model.hpp"
#include "ndp/vi.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace ndp {

/// Malformed or inconsistent run configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Fully resolved settings of one run: task, model, training and output.
struct RunConfig {
  TaskSpec task;
  ModelSpec model;
  TrainConfig train;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "run";
  /// Directory holding <task>-train.jsonl / <task>-test.jsonl; generated
  /// in memory from `task` when empty.
  std::filesystem::path data_dir;
};

/// Resolves a flat config document. Every key is optional and defaults
/// follow the task (the sine experiment when no task is given). Unknown keys
/// and invalid values throw ConfigError. `fallback_seed` applies when the
/// document has no "seed".
RunConfig resolve_run_config(const nlohmann::json& doc, std::uint64_t fallback_seed = 0);

/// Flat document that resolves back to `cfg`.
nlohmann::json to_json(const RunConfig& cfg);

/// Keys accepted by resolve_run_config.
const std::vector<std::string>& run_config_keys();

/// Parses a JSON file, throwing IoError if unreadable and ConfigError if
/// malformed.
nlohmann::json read_json_file(const std::filesystem::path& path);

/// Seed from NDP_SEED, if set to a valid unsigned integer.
std::optional<std::uint64_t> env_seed();

}  // namespace ndp
