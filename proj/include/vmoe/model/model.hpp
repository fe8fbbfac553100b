#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vmoe/allocator.hpp"
#include "vmoe/model/config.hpp"
#include "vmoe/model/data.hpp"
#include "vmoe/moe_layer.hpp"
#include "vmoe/numkit/graph.hpp"
#include "vmoe/numkit/rng.hpp"
#include "vmoe/router.hpp"

namespace vmoe::model {

using numkit::Graph;
using numkit::Var;

// Named parameters; std::map keeps a stable order for optimizers and files.
using ParamStore = std::map<std::string, Tensor>;

std::string block_prefix(std::size_t block);  // "block3/"

ParamStore init_params(const ModelConfig& config);
std::size_t count_params(const ParamStore& params);
// Closed-form count for a config, checked against init_params in tests.
std::size_t count_params(const ModelConfig& config);

class ParamVars {
 public:
  ParamVars(Graph& graph, const ParamStore& params, bool trainable);
  Var operator()(const std::string& name) const;
  const std::map<std::string, Var>& all() const { return vars_; }

 private:
  std::map<std::string, Var> vars_;
};

struct ForwardOptions {
  Mode mode = Mode::kEval;
  allocator::AllocationOptions allocation;
  std::optional<double> capacity_override;
  std::optional<std::size_t> k_override;
  std::optional<GateOrder> order_override;
  // Replaces the router of the given blocks (random-router ablations).
  std::map<std::size_t, moe::RouterOverride> router_overrides;
};

struct MoeRecord {
  std::size_t block = 0;
  router::GateVars gates;
  std::vector<allocator::AssignmentTable> tables;
  std::size_t k = 1;
};

struct ForwardGraph {
  Var logits;    // [N, classes]
  Var features;  // [N, D], normalized class-token representation
  std::vector<MoeRecord> moe;
};

Var block_forward(Var x, const ParamVars& p, const ModelConfig& config, std::size_t block, std::size_t images,
                  const ForwardOptions& opts, numkit::RngStream& rng, MoeRecord* record);

// patches: [N * P, patch_dim].
ForwardGraph forward_graph(const ModelConfig& config, const ParamVars& p, const Tensor& patches, std::size_t images,
                           const ForwardOptions& opts, numkit::RngStream& rng);

struct LayerTrace {
  std::size_t block = 0;
  router::GateMatrix gates;          // rows for every token of every evaluated image
  router::TopKSelection selection;
  std::vector<allocator::AssignmentTable> tables;  // one per allocation group, in image order
};

struct EvalResult {
  Tensor logits;    // [N, classes]
  Tensor features;  // [N, D]
  std::vector<LayerTrace> layers;
  std::vector<int> predictions;
};

// Runs the frozen model over every image in chunks of config.group_images
// images. `seed` only feeds random-router overrides.
EvalResult evaluate(const ModelConfig& config, const ParamStore& params, const Dataset& data,
                    const ForwardOptions& opts, std::uint64_t seed = 0);

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);
double accuracy(const EvalResult& result, const Dataset& data);

}  // namespace vmoe::model
