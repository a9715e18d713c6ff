#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "cofair/data.hpp"
#include "cofair/training.hpp"

namespace cofair {

nlohmann::json to_json(const TrainConfig& config);
// Every key is optional; unknown keys and ill-typed values raise ConfigError.
TrainConfig train_config_from_json(const nlohmann::json& object);

// Everything a CLI invocation can be configured with. The JSON file and the
// command-line flags share key names; flags win.
struct RunConfig {
  TrainConfig train;
  std::string data;
  std::string attrs;
  std::string out;
  double rating_threshold = 0.0;
  SplitRatios ratios;
  std::uint64_t split_seed = 1;
  std::size_t k = 10;
  Split split = Split::test;
  int port = 8080;
  std::string static_dir;
  double tau = 1e-3;
  AttributeMap attr_map = default_attribute_map();
  bool cors = true;
};

nlohmann::json to_json(const RunConfig& config);
// Applies the keys of `object` on top of `base`.
RunConfig run_config_from_json(const nlohmann::json& object, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

}  // namespace cofair
