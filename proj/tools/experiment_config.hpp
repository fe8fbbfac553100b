#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "vmoe/model/config.hpp"
#include "vmoe/model/data.hpp"

namespace vmoe::cli {

// Everything one experiment needs. The file form is a flat JSON object; every
// key is optional and unknown keys are rejected.
struct ExperimentConfig {
  model::ModelConfig model;
  model::TrainConfig train;
  model::SyntheticSpec data;
  std::size_t train_images = 2048;
  std::size_t test_images = 1024;
  double keep_fraction = 0.5;  // skip-patch
  std::uint64_t seed = 0;
  std::string out = "out";

  std::vector<double> sweep_capacities{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<std::string> sweep_algorithms{"vanilla", "bpr"};
  std::vector<std::size_t> sweep_k;  // empty: the trained k only
  std::vector<std::size_t> vary_k{1, 2, 3};
  std::string ablate_mode = "vary_k";
  std::size_t probe_shots = 10;

  // Copies `seed` into the model config.
  void finalize();
  void validate() const;
};

ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
nlohmann::ordered_json to_json(const ExperimentConfig& c);

// FNV-1a over the canonical JSON dump (minus `out`), as 16 hex digits.
std::string config_hash(const ExperimentConfig& c);

std::string placement_name(model::Placement p);
model::Placement parse_placement(const std::string& s);

}  // namespace vmoe::cli
