#pragma once

// Literal transcription of the three allocation procedures (vanilla, batch
// prioritized, skip-patch), written without sharing code with the library so
// it can serve as an equivalence oracle. Loop indices follow the pseudocode:
// i is the choice rank, p walks patches in the chosen order.

#include <cmath>
#include <cstddef>
#include <vector>

#include "vmoe/allocator.hpp"
#include "vmoe/numkit/rng.hpp"
#include "vmoe/router.hpp"

namespace vmoe::testing {

struct ReferenceBuffers {
  // buffer[e] lists (patch, rank) pairs in arrival order.
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> buffer;
};

inline double reference_score(const router::TopKSelection& sel, std::size_t p, bool use_max) {
  double s = use_max ? -1.0 : 0.0;
  for (std::size_t i = 0; i < sel.k; ++i) {
    const double w = sel.weights[p * sel.k + i];
    if (use_max) {
      if (w > s) s = w;
    } else {
      s += w;
    }
  }
  return s;
}

// Insertion sort: decreasing score, earlier patch first on ties.
inline std::vector<std::size_t> reference_sort(const router::TopKSelection& sel, bool use_max) {
  std::vector<std::size_t> order;
  std::vector<double> score;
  for (std::size_t p = 0; p < sel.tokens; ++p) {
    const double s = reference_score(sel, p, use_max);
    std::size_t pos = order.size();
    while (pos > 0 && score[pos - 1] < s) --pos;
    order.insert(order.begin() + static_cast<std::ptrdiff_t>(pos), p);
    score.insert(score.begin() + static_cast<std::ptrdiff_t>(pos), s);
  }
  return order;
}

inline allocator::AssignmentTable reference_run(const router::TopKSelection& sel, std::size_t capacity,
                                                const std::vector<std::size_t>& patch_order) {
  ReferenceBuffers b;
  b.buffer.resize(sel.num_experts);
  for (std::size_t i = 0; i < sel.k; ++i) {
    for (std::size_t p : patch_order) {
      const auto e = static_cast<std::size_t>(sel.indices[p * sel.k + i]);
      if (b.buffer[e].size() < capacity) b.buffer[e].push_back({p, i});
      // else: skip the i-th expert assignment for patch p
    }
  }
  allocator::AssignmentTable t;
  t.tokens = sel.tokens;
  t.k = sel.k;
  t.num_experts = sel.num_experts;
  t.capacity = capacity;
  t.entries.resize(sel.tokens * sel.k);
  for (std::size_t p = 0; p < sel.tokens; ++p) {
    for (std::size_t i = 0; i < sel.k; ++i) {
      t.entries[p * sel.k + i].expert = sel.indices[p * sel.k + i];
      t.entries[p * sel.k + i].weight = sel.weights[p * sel.k + i];
    }
  }
  for (std::size_t e = 0; e < sel.num_experts; ++e) {
    for (std::size_t slot = 0; slot < b.buffer[e].size(); ++slot) {
      auto& a = t.entries[b.buffer[e][slot].first * sel.k + b.buffer[e][slot].second];
      a.success = true;
      a.position = static_cast<int>(slot);
    }
  }
  return t;
}

inline allocator::AssignmentTable reference_vanilla(const router::TopKSelection& sel, std::size_t capacity) {
  std::vector<std::size_t> order;
  for (std::size_t p = 0; p < sel.tokens; ++p) order.push_back(p);
  return reference_run(sel, capacity, order);
}

inline allocator::AssignmentTable reference_bpr(const router::TopKSelection& sel, std::size_t capacity, bool use_max) {
  return reference_run(sel, capacity, reference_sort(sel, use_max));
}

inline allocator::AssignmentTable reference_skip(const router::TopKSelection& sel, std::size_t capacity, double s,
                                                 bool use_max) {
  std::vector<std::size_t> order = reference_sort(sel, use_max);
  const double m = s * static_cast<double>(sel.tokens);
  const auto keep = static_cast<std::size_t>(std::floor(m + 0.5));
  order.resize(keep < order.size() ? keep : order.size());
  return reference_run(sel, capacity, order);
}

struct RandomInstance {
  router::TopKSelection selection;
  std::size_t images = 1;
  std::size_t tokens_per_image = 1;
  double capacity_ratio = 1.0;
  std::size_t capacity = 0;
};

// T <= 64, E <= 8, k <= 3, C in [0.05, 2]. Some instances quantize the logits
// so that equal gate values (and equal priority scores) occur.
inline RandomInstance random_instance(numkit::RngStream& rng) {
  RandomInstance inst;
  const std::size_t experts = 1 + rng.below(8);
  const std::size_t k = 1 + rng.below(experts < 3 ? experts : 3);
  inst.tokens_per_image = 1 + rng.below(8);
  inst.images = 1 + rng.below(64 / inst.tokens_per_image);
  const std::size_t tokens = inst.images * inst.tokens_per_image;
  inst.capacity_ratio = 0.05 + 1.95 * rng.uniform();
  const bool quantize = rng.below(4) == 0;
  router::GateMatrix g;
  g.clean_logits = numkit::sample_gaussian(rng, {tokens, experts}, 0.0, 1.5);
  if (quantize)
    for (auto& v : g.clean_logits.data()) v = std::round(v);
  g.noisy_logits = g.clean_logits;
  g.probs = numkit::Tensor({tokens, experts});
  for (std::size_t t = 0; t < tokens; ++t) {
    double total = 0.0;
    for (std::size_t e = 0; e < experts; ++e) total += std::exp(g.clean_logits(t, e));
    for (std::size_t e = 0; e < experts; ++e) g.probs(t, e) = std::exp(g.clean_logits(t, e)) / total;
  }
  inst.selection = router::top_k_select(g, k);
  inst.capacity =
      allocator::buffer_capacity(inst.images, inst.tokens_per_image, k, experts, inst.capacity_ratio);
  return inst;
}

}  // namespace vmoe::testing
