#include "vmoe/common.hpp"

#include <cmath>

namespace vmoe {

std::string_view to_string(Mode m) { return m == Mode::kTrain ? "train" : "eval"; }

std::string_view to_string(Algorithm a) {
  switch (a) {
    case Algorithm::kVanilla: return "vanilla";
    case Algorithm::kBatchPrioritized: return "bpr";
    case Algorithm::kSkipPatch: return "skip";
  }
  return "unknown";
}

std::string_view to_string(PriorityMode p) { return p == PriorityMode::kMax ? "max" : "sum_topk"; }

std::string_view to_string(GateOrder o) {
  return o == GateOrder::kTopKOfSoftmax ? "topk_of_softmax" : "softmax_of_topk";
}

Algorithm parse_algorithm(std::string_view s) {
  if (s == "vanilla") return Algorithm::kVanilla;
  if (s == "bpr") return Algorithm::kBatchPrioritized;
  if (s == "skip") return Algorithm::kSkipPatch;
  throw ConfigError("unknown allocation algorithm '" + std::string(s) + "'");
}

PriorityMode parse_priority_mode(std::string_view s) {
  if (s == "max") return PriorityMode::kMax;
  if (s == "sum_topk") return PriorityMode::kSumTopK;
  throw ConfigError("unknown priority mode '" + std::string(s) + "'");
}

GateOrder parse_gate_order(std::string_view s) {
  if (s == "topk_of_softmax") return GateOrder::kTopKOfSoftmax;
  if (s == "softmax_of_topk") return GateOrder::kSoftmaxOfTopK;
  throw ConfigError("unknown gate order '" + std::string(s) + "'");
}

long long round_half_away(double x) {
  return static_cast<long long>(x < 0.0 ? -std::floor(-x + 0.5) : std::floor(x + 0.5));
}

}  // namespace vmoe
