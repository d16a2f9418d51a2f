#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "r2au/training.hpp"

namespace r2au {

/// Schema violation; `path` names the offending field, e.g. "train.optimizer.lr".
class ConfigError : public Error {
 public:
  ConfigError(std::string path, const std::string& message)
      : Error(path + ": " + message), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

struct DataConfig {
  std::string root;          // DSB-layout directory
  std::string manifest;      // defaults to <root>/manifest.json
  std::size_t image_size = 256;
  std::size_t val_count = 30;
  std::size_t test_count = 30;
  std::uint64_t split_seed = 0;
};

/// Everything one run needs. In JSON the loss and augmentation settings are
/// top-level sections ("loss", "augment") next to "model", "train", "data".
struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  TrainConfig train;
  DataConfig data;

  /// Cross-field checks; throws ConfigError.
  void validate() const;
};

/// Strict parse: unknown keys and wrong types are errors, missing keys keep
/// their defaults.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& c);

nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& path = "model");
nlohmann::json loss_config_to_json(const LossConfig& c);
LossConfig loss_config_from_json(const nlohmann::json& j, const std::string& path = "loss");

/// "table1" or a JSON list of loss objects.
std::vector<LossConfig> parse_grid(const nlohmann::json& j);

/// R2AU_SEED, when set to an unsigned integer. Malformed values throw ConfigError.
std::optional<std::uint64_t> seed_from_env();

}  // namespace r2au
