#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tbu/harness.hpp"

namespace tbu {

/// A parsed `run` config. `method` and `acquisition` may be lists in the JSON
/// document; the cross product becomes one experiment each, named
/// `<method>_<acquisition>`.
struct RunConfig {
    std::string name = "run";
    std::vector<ExperimentConfig> experiments;
    std::optional<std::filesystem::path> out;
    std::string verbosity = "info";
};

/// Unknown keys and wrong types raise ConfigError naming the JSON path.
RunConfig parse_run_config(const nlohmann::json& doc);

/// Missing file -> ConfigError naming the path; malformed JSON -> ParseError.
nlohmann::json read_json_file(const std::filesystem::path& path);
RunConfig load_run_config(const std::filesystem::path& path);

PlantedPoolSpec parse_planted_spec(const nlohmann::json& doc);
ModelConfig parse_model_config(const nlohmann::json& doc, const ModelConfig& defaults);

nlohmann::json to_json(const PlantedPoolSpec& spec);
nlohmann::json to_json(const ModelConfig& model);
nlohmann::json to_json(const ExperimentConfig& config);

/// Default config document, as printed by `--help`.
nlohmann::json default_config_json();

}  // namespace tbu
