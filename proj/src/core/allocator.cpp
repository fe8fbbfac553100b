#include "vmoe/allocator.hpp"

#include <algorithm>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace vmoe::allocator {

CapacitySpec CapacitySpec::make(std::size_t images, std::size_t tokens_per_image, std::size_t k,
                                std::size_t num_experts, double capacity_ratio) {
  return CapacitySpec{images, tokens_per_image, k, num_experts, capacity_ratio,
                      buffer_capacity(images, tokens_per_image, k, num_experts, capacity_ratio)};
}

std::size_t buffer_capacity(std::size_t images, std::size_t tokens_per_image, std::size_t k, std::size_t num_experts,
                            double capacity_ratio) {
  if (images == 0 || tokens_per_image == 0 || k == 0 || num_experts == 0) {
    throw std::invalid_argument("buffer_capacity: N, P, k, E must be positive");
  }
  if (!(capacity_ratio > 0.0)) throw std::invalid_argument("buffer_capacity: C must be positive");
  const double raw = static_cast<double>(k) * static_cast<double>(images) * static_cast<double>(tokens_per_image) *
                     capacity_ratio / static_cast<double>(num_experts);
  return static_cast<std::size_t>(round_half_away(raw));
}

std::vector<std::size_t> AssignmentTable::occupancy() const {
  std::vector<std::size_t> counts(num_experts, 0);
  for (const auto& a : entries)
    if (a.success) ++counts[static_cast<std::size_t>(a.expert)];
  return counts;
}

std::size_t AssignmentTable::successes() const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [](const Assignment& a) { return a.success; }));
}

bool AssignmentTable::token_fully_dropped(std::size_t t) const {
  for (std::size_t i = 0; i < k; ++i)
    if (at(t, i).success) return false;
  return true;
}

bool operator==(const AssignmentTable& a, const AssignmentTable& b) {
  if (a.tokens != b.tokens || a.k != b.k || a.num_experts != b.num_experts || a.capacity != b.capacity) return false;
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    const Assignment& x = a.entries[i];
    const Assignment& y = b.entries[i];
    if (x.expert != y.expert || x.weight != y.weight || x.success != y.success || x.position != y.position) {
      return false;
    }
  }
  return a.entries.size() == b.entries.size();
}

std::vector<double> priority_score(const router::TopKSelection& sel, PriorityMode mode) {
  std::vector<double> scores(sel.tokens, 0.0);
  for (std::size_t t = 0; t < sel.tokens; ++t) {
    if (mode == PriorityMode::kMax) {
      double best = sel.weight(t, 0);
      for (std::size_t i = 1; i < sel.k; ++i) best = std::max(best, sel.weight(t, i));
      scores[t] = best;
    } else {
      double total = 0.0;
      for (std::size_t i = 0; i < sel.k; ++i) total += sel.weight(t, i);
      scores[t] = total;
    }
  }
  return scores;
}

PriorityOrder priority_order(const router::TopKSelection& sel, PriorityMode mode) {
  PriorityOrder p;
  p.scores = priority_score(sel, mode);
  p.order.resize(sel.tokens);
  std::iota(p.order.begin(), p.order.end(), std::size_t{0});
  std::stable_sort(p.order.begin(), p.order.end(),
                   [&](std::size_t a, std::size_t b) { return p.scores[a] > p.scores[b]; });
  return p;
}

namespace {

AssignmentTable blank_table(const router::TopKSelection& sel, std::size_t slots) {
  AssignmentTable table;
  table.tokens = sel.tokens;
  table.k = sel.k;
  table.num_experts = sel.num_experts;
  table.capacity = slots;
  table.entries.resize(sel.tokens * sel.k);
  for (std::size_t t = 0; t < sel.tokens; ++t) {
    for (std::size_t i = 0; i < sel.k; ++i) {
      table.at(t, i).expert = sel.expert(t, i);
      table.at(t, i).weight = sel.weight(t, i);
    }
  }
  return table;
}

// Core loop shared by all three algorithms; `visit` lists the tokens allowed
// to compete, in the order they are served.
AssignmentTable fill_buffers(const router::TopKSelection& sel, std::size_t slots,
                             const std::vector<std::size_t>& visit) {
  AssignmentTable table = blank_table(sel, slots);
  std::vector<std::size_t> fill(sel.num_experts, 0);
  for (std::size_t i = 0; i < sel.k; ++i) {
    for (std::size_t t : visit) {
      Assignment& a = table.at(t, i);
      auto& used = fill[static_cast<std::size_t>(a.expert)];
      if (used < slots) {
        a.success = true;
        a.position = static_cast<int>(used++);
      }
    }
  }
  return table;
}

}  // namespace

AssignmentTable allocate_vanilla(const router::TopKSelection& sel, std::size_t slots) {
  std::vector<std::size_t> visit(sel.tokens);
  std::iota(visit.begin(), visit.end(), std::size_t{0});
  return fill_buffers(sel, slots, visit);
}

AssignmentTable allocate_bpr(const router::TopKSelection& sel, std::size_t slots, PriorityMode mode) {
  return fill_buffers(sel, slots, priority_order(sel, mode).order);
}

AssignmentTable allocate_skip_patch(const router::TopKSelection& sel, std::size_t slots, double keep_fraction,
                                    PriorityMode mode) {
  if (!(keep_fraction > 0.0 && keep_fraction < 1.0)) {
    throw std::invalid_argument("allocate_skip_patch: keep fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> visit = priority_order(sel, mode).order;
  const auto keep = static_cast<std::size_t>(round_half_away(keep_fraction * static_cast<double>(sel.tokens)));
  visit.resize(std::min(keep, visit.size()));
  return fill_buffers(sel, slots, visit);
}

AssignmentTable allocate(const router::TopKSelection& sel, std::size_t slots, const AllocationOptions& opts) {
  switch (opts.algorithm) {
    case Algorithm::kVanilla: return allocate_vanilla(sel, slots);
    case Algorithm::kBatchPrioritized: return allocate_bpr(sel, slots, opts.priority);
    case Algorithm::kSkipPatch: return allocate_skip_patch(sel, slots, opts.keep_fraction, opts.priority);
  }
  throw std::logic_error("allocate: unknown algorithm");
}

void write_csv(std::ostream& os, const AssignmentTable& table) {
  os << "token,slot,expert,weight,success\n";
  const auto old_precision = os.precision(17);
  for (std::size_t t = 0; t < table.tokens; ++t) {
    for (std::size_t i = 0; i < table.k; ++i) {
      const Assignment& a = table.at(t, i);
      os << t << ',' << i << ',' << a.expert << ',' << a.weight << ',' << (a.success ? 1 : 0) << '\n';
    }
  }
  os.precision(old_precision);
}

}  // namespace vmoe::allocator
