#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vmoe {

enum class Mode { kTrain, kEval };

// Token allocation strategy for expert buffers.
enum class Algorithm { kVanilla, kBatchPrioritized, kSkipPatch };

// Priority score used by batch-prioritized and skip-patch allocation.
enum class PriorityMode { kMax, kSumTopK };

// kTopKOfSoftmax keeps the k largest softmax values; kSoftmaxOfTopK is the
// older formulation that renormalizes over the k largest logits.
enum class GateOrder { kTopKOfSoftmax, kSoftmaxOfTopK };

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string_view to_string(Mode m);
std::string_view to_string(Algorithm a);
std::string_view to_string(PriorityMode p);
std::string_view to_string(GateOrder o);

Algorithm parse_algorithm(std::string_view s);
PriorityMode parse_priority_mode(std::string_view s);
GateOrder parse_gate_order(std::string_view s);

// Round half away from zero, independent of the current FP rounding mode.
long long round_half_away(double x);

}  // namespace vmoe
