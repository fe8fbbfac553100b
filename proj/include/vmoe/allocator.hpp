#pragma once

#include <cstddef>
#include <iosfwd>
#include <vector>

#include "vmoe/common.hpp"
#include "vmoe/router.hpp"

namespace vmoe::allocator {

// Buffer sizing for one group of N images with P tokens each.
struct CapacitySpec {
  std::size_t images = 0;            // N
  std::size_t tokens_per_image = 0;  // P
  std::size_t k = 0;
  std::size_t num_experts = 0;       // E
  double capacity_ratio = 0.0;       // C
  std::size_t slots = 0;             // B_e

  static CapacitySpec make(std::size_t images, std::size_t tokens_per_image, std::size_t k, std::size_t num_experts,
                           double capacity_ratio);
};

// B_e = round(k N P C / E), rounding half away from zero.
std::size_t buffer_capacity(std::size_t images, std::size_t tokens_per_image, std::size_t k, std::size_t num_experts,
                            double capacity_ratio);

struct Assignment {
  int expert = -1;
  double weight = 0.0;
  bool success = false;
  int position = -1;  // buffer slot inside the expert when successful
};

// Allocation result for one group: entry (t, i) is token t's i-th choice.
struct AssignmentTable {
  std::size_t tokens = 0;
  std::size_t k = 0;
  std::size_t num_experts = 0;
  std::size_t capacity = 0;
  std::vector<Assignment> entries;

  const Assignment& at(std::size_t t, std::size_t slot) const { return entries[t * k + slot]; }
  Assignment& at(std::size_t t, std::size_t slot) { return entries[t * k + slot]; }
  std::vector<std::size_t> occupancy() const;
  std::size_t successes() const;
  bool token_fully_dropped(std::size_t t) const;

  friend bool operator==(const AssignmentTable& a, const AssignmentTable& b);
};

struct PriorityOrder {
  std::vector<std::size_t> order;  // token indices, highest score first
  std::vector<double> scores;      // indexed by token
};

std::vector<double> priority_score(const router::TopKSelection& sel, PriorityMode mode);
// Stable descending sort: equal scores keep token order.
PriorityOrder priority_order(const router::TopKSelection& sel, PriorityMode mode);

// Slot rank i = 0..k-1 outer, tokens inner, first come first served per buffer.
AssignmentTable allocate_vanilla(const router::TopKSelection& sel, std::size_t slots);
// As vanilla, with tokens visited in priority order computed once per group.
AssignmentTable allocate_bpr(const router::TopKSelection& sel, std::size_t slots, PriorityMode mode);
// Keeps the round(S*T) highest-priority tokens and fails every slot of the rest.
AssignmentTable allocate_skip_patch(const router::TopKSelection& sel, std::size_t slots, double keep_fraction,
                                    PriorityMode mode);

struct AllocationOptions {
  Algorithm algorithm = Algorithm::kVanilla;
  PriorityMode priority = PriorityMode::kMax;
  double keep_fraction = 0.5;  // skip-patch only
};

AssignmentTable allocate(const router::TopKSelection& sel, std::size_t slots, const AllocationOptions& opts);

// Columns: token,slot,expert,weight,success
void write_csv(std::ostream& os, const AssignmentTable& table);

}  // namespace vmoe::allocator
