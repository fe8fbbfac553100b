#pragma once

#include <cstddef>
#include <vector>

#include "vmoe/model/model.hpp"

namespace vmoe::model {

struct ProbeResult {
  double accuracy = 0.0;
  std::size_t support = 0;
  std::size_t queries = 0;
};

// Ridge regression from features (plus a bias column) to one-hot targets,
// predicting by argmax. `ridge` must be positive.
std::vector<int> ridge_probe_predict(const Tensor& support_features, const std::vector<int>& support_labels,
                                     const Tensor& query_features, std::size_t classes, double ridge);

// n_shot support images per class taken from `support_pool`; accuracy on `queries`.
ProbeResult linear_probe(const ModelConfig& config, const ParamStore& params, const Dataset& support_pool,
                         const Dataset& queries, std::size_t n_shot, double ridge = 1e-2);

}  // namespace vmoe::model
