#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "vmoe/common.hpp"

namespace vmoe::model {

enum class Placement { kEvery2, kLastN, kNone };

struct ModelConfig {
  std::size_t image_size = 16;
  std::size_t channels = 1;
  std::size_t patch = 4;
  std::size_t dim = 32;
  std::size_t blocks = 4;
  std::size_t heads = 2;
  std::size_t mlp_dim = 64;
  std::size_t experts = 4;
  std::size_t k = 1;
  double capacity = 1.05;
  Placement placement = Placement::kEvery2;
  std::size_t last_n = 2;
  std::size_t classes = 8;
  GateOrder gate_order = GateOrder::kTopKOfSoftmax;
  // Images per allocation group; expert buffers are sized per group.
  std::size_t group_images = 32;
  std::uint64_t seed = 0;

  std::size_t grid() const { return image_size / patch; }
  std::size_t num_patches() const { return grid() * grid(); }
  // Patches plus the class token.
  std::size_t seq_len() const { return num_patches() + 1; }
  std::size_t patch_dim() const { return patch * patch * channels; }
  bool is_moe(std::size_t block) const;
  std::vector<std::size_t> moe_blocks() const;

  // Throws ConfigError on inconsistent settings.
  void validate() const;
};

struct TrainConfig {
  double learning_rate = 3e-3;  // decays linearly to zero over `steps`
  double weight_decay = 1e-4;   // decoupled, matrices only
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 32;
  std::size_t steps = 300;
  double lambda = 0.01;
  Algorithm algorithm = Algorithm::kVanilla;
  PriorityMode priority = PriorityMode::kMax;
  std::size_t log_every = 10;

  void validate() const;
};

}  // namespace vmoe::model
