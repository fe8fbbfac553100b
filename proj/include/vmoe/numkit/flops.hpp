#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string_view>

namespace vmoe::numkit {

enum class Component : std::size_t {
  kEmbedding = 0,
  kAttention,
  kDenseMlp,
  kRouter,
  kExpertMlp,
  kHead,
  kOther,
};
inline constexpr std::size_t kNumComponents = 7;

std::string_view component_name(Component c);

// Multiply-add accumulator fed by every matmul executed while it is installed.
class FlopCounter {
 public:
  void add(std::uint64_t madds) { madds_[static_cast<std::size_t>(current_)] += madds; }
  std::uint64_t madds(Component c) const { return madds_[static_cast<std::size_t>(c)]; }
  std::uint64_t total() const;
  Component current() const { return current_; }
  void set_current(Component c) { current_ = c; }

 private:
  std::array<std::uint64_t, kNumComponents> madds_{};
  Component current_ = Component::kOther;
};

// Installs a counter for the current thread for the scope's lifetime.
class ScopedFlopCounter {
 public:
  explicit ScopedFlopCounter(FlopCounter& counter);
  ~ScopedFlopCounter();
  ScopedFlopCounter(const ScopedFlopCounter&) = delete;
  ScopedFlopCounter& operator=(const ScopedFlopCounter&) = delete;

 private:
  FlopCounter* previous_;
};

// Attributes matmuls in scope to one component of the active counter.
class ComponentScope {
 public:
  explicit ComponentScope(Component c);
  ~ComponentScope();
  ComponentScope(const ComponentScope&) = delete;
  ComponentScope& operator=(const ComponentScope&) = delete;

 private:
  Component previous_;
};

// Backward passes are not part of the forward cost model.
class SuspendFlopCounting {
 public:
  SuspendFlopCounting();
  ~SuspendFlopCounting();
  SuspendFlopCounting(const SuspendFlopCounting&) = delete;
  SuspendFlopCounting& operator=(const SuspendFlopCounting&) = delete;

 private:
  FlopCounter* previous_;
};

void record_madds(std::uint64_t madds);

}  // namespace vmoe::numkit
