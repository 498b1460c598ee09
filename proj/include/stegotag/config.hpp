#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "stegotag/detect.hpp"
#include "stegotag/evalkit.hpp"
#include "stegotag/ingest.hpp"
#include "stegotag/trainer.hpp"

namespace stegotag {

// Everything the command-line tool needs in one auditable file. Defaults
// are the published hyperparameters; the desk preset swaps in the reduced
// schedule. Parsing is strict: unknown keys anywhere are an error.
struct RootConfig {
  std::string preset = "paper";  // "paper" or "desk"
  uint64_t seed = 0;

  DatasetSpec dataset;
  TrainConfig train;
  PipelineConfig pipeline;
  BenchmarkConfig eval;  // textures filled in by the eval command

  std::filesystem::path dataset_dir = "data";
  std::filesystem::path bundle_dir = "runs";
  std::filesystem::path registry_file;
  std::filesystem::path intrinsics_file;

  void validate() const;

  static RootConfig paper_defaults();
  static RootConfig desk_defaults();
  static RootConfig preset_by_name(const std::string& name);

  nlohmann::json to_json() const;
  static RootConfig from_json(const nlohmann::json& j);
  static RootConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

// Strict-parsing helper shared by the config readers: throws ConfigError
// naming the offending key when `j` holds anything outside `allowed`.
void reject_unknown_keys(const nlohmann::json& j,
                         std::initializer_list<const char*> allowed,
                         const std::string& context);

}  // namespace stegotag
