#include "vmoe/numkit/flops.hpp"

#include <numeric>

namespace vmoe::numkit {

namespace {
thread_local FlopCounter* active_counter = nullptr;
}

std::string_view component_name(Component c) {
  switch (c) {
    case Component::kEmbedding: return "embedding";
    case Component::kAttention: return "attention";
    case Component::kDenseMlp: return "dense_mlp";
    case Component::kRouter: return "router";
    case Component::kExpertMlp: return "expert_mlp";
    case Component::kHead: return "head";
    case Component::kOther: return "other";
  }
  return "unknown";
}

std::uint64_t FlopCounter::total() const {
  return std::accumulate(madds_.begin(), madds_.end(), std::uint64_t{0});
}

ScopedFlopCounter::ScopedFlopCounter(FlopCounter& counter) : previous_(active_counter) {
  active_counter = &counter;
}
ScopedFlopCounter::~ScopedFlopCounter() { active_counter = previous_; }

ComponentScope::ComponentScope(Component c)
    : previous_(active_counter ? active_counter->current() : Component::kOther) {
  if (active_counter) active_counter->set_current(c);
}
ComponentScope::~ComponentScope() {
  if (active_counter) active_counter->set_current(previous_);
}

SuspendFlopCounting::SuspendFlopCounting() : previous_(active_counter) { active_counter = nullptr; }
SuspendFlopCounting::~SuspendFlopCounting() { active_counter = previous_; }

void record_madds(std::uint64_t madds) {
  if (active_counter) active_counter->add(madds);
}

}  // namespace vmoe::numkit
