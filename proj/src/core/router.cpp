#include "vmoe/router.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "vmoe/numkit/kernels.hpp"
#include "vmoe/numkit/ops.hpp"

namespace vmoe::router {

namespace {

void require_k(std::size_t k, std::size_t experts) {
  if (k < 1 || k > experts) {
    throw std::out_of_range("k=" + std::to_string(k) + " outside [1, " + std::to_string(experts) + "]");
  }
}

TopKSelection empty_selection(std::size_t tokens, std::size_t k, std::size_t experts) {
  TopKSelection sel;
  sel.tokens = tokens;
  sel.k = k;
  sel.num_experts = experts;
  sel.indices.reserve(tokens * k);
  sel.weights.reserve(tokens * k);
  return sel;
}

Tensor selection_mask(const TopKSelection& sel) {
  Tensor mask({sel.tokens, sel.num_experts});
  for (std::size_t t = 0; t < sel.tokens; ++t)
    for (std::size_t i = 0; i < sel.k; ++i) mask(t, static_cast<std::size_t>(sel.expert(t, i))) = 1.0;
  return mask;
}

}  // namespace

TopKSelection TopKSelection::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > tokens) throw std::out_of_range("TopKSelection::slice");
  TopKSelection out;
  out.tokens = end - begin;
  out.k = k;
  out.num_experts = num_experts;
  out.indices.assign(indices.begin() + static_cast<std::ptrdiff_t>(begin * k),
                     indices.begin() + static_cast<std::ptrdiff_t>(end * k));
  out.weights.assign(weights.begin() + static_cast<std::ptrdiff_t>(begin * k),
                     weights.begin() + static_cast<std::ptrdiff_t>(end * k));
  return out;
}

double noise_std(std::size_t num_experts) { return 1.0 / static_cast<double>(num_experts); }

Tensor routing_noise(numkit::RngStream& rng, std::size_t tokens, std::size_t num_experts) {
  return numkit::sample_gaussian(rng, {tokens, num_experts}, 0.0, noise_std(num_experts));
}

GateMatrix gates(const Tensor& x, const RouterParams& params, Mode mode, numkit::RngStream& rng) {
  if (x.rank() != 2 || x.cols() != params.input_dim()) {
    throw numkit::ShapeError("gates: token width " + numkit::shape_string(x.shape()) + " vs router " +
                             numkit::shape_string(params.weight.shape()));
  }
  GateMatrix g;
  g.clean_logits = numkit::matmul_bt(x, params.weight);
  g.noisy_logits = g.clean_logits;
  if (mode == Mode::kTrain) {
    const Tensor eps = routing_noise(rng, x.rows(), params.num_experts());
    for (std::size_t i = 0; i < eps.size(); ++i) g.noisy_logits[i] += eps[i];
    g.noise_applied = true;
  }
  g.probs = numkit::softmax_rows(g.noisy_logits);
  return g;
}

std::vector<int> top_k_indices(std::span<const double> row, std::size_t k) {
  std::vector<int> order(row.size());
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), [&](int a, int b) {
    const double va = row[static_cast<std::size_t>(a)], vb = row[static_cast<std::size_t>(b)];
    return va > vb || (va == vb && a < b);
  });
  order.resize(k);
  return order;
}

TopKSelection top_k_select(const GateMatrix& g, std::size_t k) {
  require_k(k, g.experts());
  TopKSelection sel = empty_selection(g.tokens(), k, g.experts());
  for (std::size_t t = 0; t < g.tokens(); ++t) {
    const auto row = g.probs.row(t);
    for (int e : top_k_indices(row, k)) {
      sel.indices.push_back(e);
      sel.weights.push_back(row[static_cast<std::size_t>(e)]);
    }
  }
  return sel;
}

TopKSelection legacy_softmax_of_topk(const GateMatrix& g, std::size_t k) {
  require_k(k, g.experts());
  TopKSelection sel = empty_selection(g.tokens(), k, g.experts());
  for (std::size_t t = 0; t < g.tokens(); ++t) {
    const auto logits = g.noisy_logits.row(t);
    const std::vector<int> chosen = top_k_indices(logits, k);
    const double top = logits[static_cast<std::size_t>(chosen.front())];
    std::vector<double> w(k);
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      w[i] = std::exp(logits[static_cast<std::size_t>(chosen[i])] - top);
      total += w[i];
    }
    for (std::size_t i = 0; i < k; ++i) {
      sel.indices.push_back(chosen[i]);
      sel.weights.push_back(w[i] / total);
    }
  }
  return sel;
}

TopKSelection select(const GateMatrix& g, std::size_t k, GateOrder order) {
  return order == GateOrder::kTopKOfSoftmax ? top_k_select(g, k) : legacy_softmax_of_topk(g, k);
}

GateVars gates_from_logits(numkit::Var clean_logits, const Tensor* noise, std::size_t k, GateOrder order) {
  numkit::Graph& graph = clean_logits.graph();
  GateVars out;
  out.clean_logits = clean_logits;
  out.noisy_logits = noise ? numkit::add(clean_logits, graph.constant(*noise)) : clean_logits;
  out.probs = numkit::softmax_rows(out.noisy_logits);
  out.values.clean_logits = clean_logits.value();
  out.values.noisy_logits = out.noisy_logits.value();
  out.values.probs = out.probs.value();
  out.values.noise_applied = noise != nullptr;
  out.selection = select(out.values, k, order);
  if (order == GateOrder::kTopKOfSoftmax) {
    out.combine_weights = out.probs;
  } else {
    out.combine_weights = numkit::masked_softmax_rows(out.noisy_logits, selection_mask(out.selection));
    // Keep the selection bit-identical to what combine multiplies by.
    const Tensor& w = out.combine_weights.value();
    for (std::size_t t = 0; t < out.selection.tokens; ++t)
      for (std::size_t i = 0; i < k; ++i)
        out.selection.weights[t * k + i] = w(t, static_cast<std::size_t>(out.selection.expert(t, i)));
  }
  return out;
}

GateVars gates_graph(numkit::Var x, numkit::Var weight, Mode mode, numkit::RngStream& rng, std::size_t k,
                     GateOrder order) {
  numkit::Var clean = numkit::matmul_bt(x, weight);
  if (mode == Mode::kTrain) {
    const Tensor eps = routing_noise(rng, x.value().rows(), weight.value().rows());
    return gates_from_logits(clean, &eps, k, order);
  }
  return gates_from_logits(clean, nullptr, k, order);
}

}  // namespace vmoe::router
