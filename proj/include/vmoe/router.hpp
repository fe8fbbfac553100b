#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "vmoe/common.hpp"
#include "vmoe/numkit/graph.hpp"
#include "vmoe/numkit/rng.hpp"
#include "vmoe/numkit/tensor.hpp"

namespace vmoe::router {

using numkit::Tensor;

struct RouterParams {
  Tensor weight;  // [E, D]
  std::size_t num_experts() const { return weight.rows(); }
  std::size_t input_dim() const { return weight.cols(); }
};

// Per-token gate values. noisy_logits == clean_logits when no noise was drawn.
struct GateMatrix {
  Tensor probs;         // [T, E], softmax of noisy_logits
  Tensor clean_logits;  // [T, E], W x
  Tensor noisy_logits;  // [T, E], W x + eps
  bool noise_applied = false;

  std::size_t tokens() const { return probs.rows(); }
  std::size_t experts() const { return probs.cols(); }
};

// The k chosen experts per token, ordered by decreasing gate value.
struct TopKSelection {
  std::size_t tokens = 0;
  std::size_t k = 0;
  std::size_t num_experts = 0;
  std::vector<int> indices;      // tokens * k
  std::vector<double> weights;   // tokens * k

  int expert(std::size_t t, std::size_t slot) const { return indices[t * k + slot]; }
  double weight(std::size_t t, std::size_t slot) const { return weights[t * k + slot]; }

  // Rows [begin, end) as a standalone selection.
  TopKSelection slice(std::size_t begin, std::size_t end) const;
};

// Standard deviation of the routing noise, 1/E.
double noise_std(std::size_t num_experts);

// eps ~ N(0, 1/E^2) entry-wise.
Tensor routing_noise(numkit::RngStream& rng, std::size_t tokens, std::size_t num_experts);

// softmax(W x + eps) with noise only in train mode.
GateMatrix gates(const Tensor& x, const RouterParams& params, Mode mode, numkit::RngStream& rng);

// Indices of the k largest entries, descending, ties to the lower index.
std::vector<int> top_k_indices(std::span<const double> row, std::size_t k);

TopKSelection top_k_select(const GateMatrix& g, std::size_t k);
TopKSelection legacy_softmax_of_topk(const GateMatrix& g, std::size_t k);
TopKSelection select(const GateMatrix& g, std::size_t k, GateOrder order);

// Differentiable gating for training. `combine_weights` is the [T, E] matrix
// whose entries at selected experts scale the expert outputs.
struct GateVars {
  numkit::Var clean_logits;
  numkit::Var noisy_logits;
  numkit::Var probs;
  numkit::Var combine_weights;
  GateMatrix values;
  TopKSelection selection;
};

GateVars gates_graph(numkit::Var x, numkit::Var weight, Mode mode, numkit::RngStream& rng, std::size_t k,
                     GateOrder order);
// Gating from precomputed clean logits plus optional fixed noise.
GateVars gates_from_logits(numkit::Var clean_logits, const Tensor* noise, std::size_t k, GateOrder order);

}  // namespace vmoe::router
