#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vmoe/model/model.hpp"

namespace vmoe::analysis {

using model::Dataset;
using model::ModelConfig;
using model::ParamStore;

struct TraceRecord {
  std::size_t layer = 0;     // index among MoE layers
  std::size_t block = 0;     // transformer block of that layer
  std::size_t image = 0;
  std::size_t position = 0;  // 0 is the class token, patches follow in grid order
  int label = -1;
  std::vector<int> experts;      // k entries, descending gate weight
  std::vector<double> weights;   // k entries
  std::vector<bool> success;     // k entries
};

struct RoutingTrace {
  std::size_t num_layers = 0;
  std::size_t num_experts = 0;
  std::size_t k = 0;
  std::size_t seq_len = 0;
  std::vector<std::size_t> blocks;  // per layer
  std::vector<TraceRecord> records; // layer-major, then image, then position
};

// One record per (MoE layer, token) of an eval pass.
RoutingTrace collect_traces(const ModelConfig& config, const ParamStore& params, const Dataset& data,
                            const model::ForwardOptions& opts = {});

// Rows keyed by class label or sequence position; only keys that occur are present.
struct SpecializationMatrix {
  std::vector<int> keys;
  std::size_t num_experts = 0;
  std::vector<std::vector<double>> rows;  // rows[r][e] = mean routing weight to e
  std::vector<std::size_t> counts;        // tokens per row
};

SpecializationMatrix class_expert_matrix(const RoutingTrace& trace, std::size_t layer);
SpecializationMatrix position_expert_matrix(const RoutingTrace& trace, std::size_t layer);

// histogram[n] = images whose tokens were successfully assigned to exactly n distinct experts.
std::vector<std::size_t> experts_per_image(const RoutingTrace& trace, std::size_t layer);

enum class AblationScope { kSingle, kCumulative };

struct AblationPoint {
  AblationScope scope = AblationScope::kSingle;
  std::size_t layer = 0;             // single: the replaced layer; cumulative: last replaced layer
  std::vector<std::size_t> replaced; // MoE layer indices whose router was replaced
  double accuracy = 0.0;
};

// Accuracy with the routers of the given MoE layers replaced. An empty set is the baseline.
double ablated_accuracy(const ModelConfig& config, const ParamStore& params, const Dataset& data,
                        const std::vector<std::size_t>& layers, moe::RouterOverride kind, std::uint64_t seed,
                        const model::ForwardOptions& opts = {});

// One scope point: single(layer) or cumulative(up to and including layer).
AblationPoint random_router_ablation(const ModelConfig& config, const ParamStore& params, const Dataset& data,
                                     AblationScope scope, std::size_t layer, std::uint64_t seed,
                                     moe::RouterOverride kind = moe::RouterOverride::kGaussian,
                                     const model::ForwardOptions& opts = {});
// Every scope point for every MoE layer.
std::vector<AblationPoint> random_router_sweep(const ModelConfig& config, const ParamStore& params, const Dataset& data,
                                               AblationScope scope, std::uint64_t seed,
                                               moe::RouterOverride kind = moe::RouterOverride::kGaussian,
                                               const model::ForwardOptions& opts = {});

struct VaryKPoint {
  std::size_t k = 0;
  double accuracy = 0.0;
  bool finite = true;
};

std::vector<VaryKPoint> vary_k_eval(const ModelConfig& config, const ParamStore& params, const Dataset& data,
                                    const std::vector<std::size_t>& k_grid, const model::ForwardOptions& opts = {});

// Columns: layer,block,image,position,label,expert1,weight1,success1,expert2,weight2,success2,...
// Missing ranks (k = 1) leave the TOP-2 fields empty.
void write_trace_csv(std::ostream& os, const RoutingTrace& trace, const std::vector<std::string>& header = {});
// Columns: key,count,expert0,...
void write_matrix_csv(std::ostream& os, const SpecializationMatrix& m, const char* key_name,
                      const std::vector<std::string>& header = {});
nlohmann::ordered_json histogram_json(const std::vector<std::size_t>& histogram, std::size_t layer);

}  // namespace vmoe::analysis
