#pragma once

// Run configuration shared by the command-line entry points, and the named
// presets it can start from.

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mgnli/training.hpp"

namespace mgnli::cli {

struct RunConfig {
  std::string preset;  // empty when built from defaults
  std::string model = "M-512-Bi-Bi-mul";
  std::optional<Task> task;  // checked against the model when set
  std::optional<std::filesystem::path> data;
  std::optional<std::filesystem::path> dev;
  std::optional<std::filesystem::path> pairs;
  std::filesystem::path output = "runs";
  int folds = 0;  // 0 trains on a single split
  int max_len = 512;  // consistency network input length
  bool without_token = false;
  std::string paraphraser = "rule";
  TrainConfig train;

  // Throws UsageError on an unknown model, task mismatch or bad range.
  void validate() const;
  // Registered specs the model name expands to, with the token ablation applied.
  std::vector<ModelSpec> specs() const;
  PairTrainConfig pair_config() const;
};

nlohmann::json to_json(const RunConfig& c);
// Keys absent from j keep their value in base.
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

std::vector<std::string> preset_names();
// Throws UsageError for an unknown name.
RunConfig preset(std::string_view name);

}  // namespace mgnli::cli
