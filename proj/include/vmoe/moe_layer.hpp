#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "vmoe/allocator.hpp"
#include "vmoe/common.hpp"
#include "vmoe/numkit/graph.hpp"
#include "vmoe/numkit/rng.hpp"
#include "vmoe/router.hpp"

namespace vmoe::moe {

using numkit::Tensor;
using numkit::Var;

// Two-layer GeLU MLP, weights stored [out, in].
struct MlpWeights {
  Tensor w1;  // [D_mlp, D]
  Tensor b1;  // [D_mlp]
  Tensor w2;  // [D, D_mlp]
  Tensor b2;  // [D]
};

struct ExpertParams {
  std::vector<MlpWeights> experts;
  std::size_t num_experts() const { return experts.size(); }
};

// [E, B_e, D]; slots past an expert's occupancy are zero.
struct ExpertBuffers {
  Tensor slots;
  std::vector<std::size_t> occupancy;
  std::size_t num_experts() const { return slots.dim(0); }
  std::size_t capacity() const { return slots.dim(1); }
};

struct MoELayerParams {
  router::RouterParams router;
  ExpertParams experts;
  std::size_t k = 1;
  double capacity_ratio = 1.05;
};

enum class RouterOverride { kNone, kGaussian, kPermuted };

struct MoeOptions {
  Mode mode = Mode::kEval;
  allocator::AllocationOptions allocation;
  GateOrder order = GateOrder::kTopKOfSoftmax;
  std::optional<double> capacity_override;
  std::optional<std::size_t> k_override;
  // Tokens are allocated in groups of group_images * tokens_per_image rows.
  std::size_t tokens_per_image = 1;
  std::size_t group_images = 1;
  RouterOverride router_override = RouterOverride::kNone;
};

Tensor mlp_forward(const Tensor& x, const MlpWeights& w);

ExpertBuffers dispatch(const Tensor& x, const allocator::AssignmentTable& table);
ExpertBuffers experts_forward(const ExpertBuffers& buffers, const ExpertParams& params);
Tensor combine(const ExpertBuffers& outputs, const allocator::AssignmentTable& table);

struct MoeResult {
  Tensor output;
  router::GateMatrix gates;
  router::TopKSelection selection;
  std::vector<allocator::AssignmentTable> tables;  // one per group
};

MoeResult moe_forward(const Tensor& x, const MoELayerParams& params, const MoeOptions& opts, numkit::RngStream& rng);

// Graph form used by the model. Experts run on their whole buffers, padded
// slots included, so compute depends on E * B_e only.
struct MlpVars {
  Var w1, b1, w2, b2;
};

struct MoeLayerVars {
  Var router_weight;
  std::vector<MlpVars> experts;
  std::size_t k = 1;
  double capacity_ratio = 1.05;
};

struct MoeGraphResult {
  Var output;
  router::GateVars gates;
  std::vector<allocator::AssignmentTable> tables;
  std::size_t effective_k = 1;
};

Var mlp_graph(Var x, const MlpVars& w);

MoeGraphResult moe_forward_graph(Var x, const MoeLayerVars& layer, const MoeOptions& opts, numkit::RngStream& rng);

// Row ranges [begin, end) of each allocation group.
std::vector<std::pair<std::size_t, std::size_t>> group_ranges(std::size_t tokens, const MoeOptions& opts);

}  // namespace vmoe::moe
