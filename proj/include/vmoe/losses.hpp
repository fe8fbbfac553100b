#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "vmoe/numkit/graph.hpp"
#include "vmoe/router.hpp"

namespace vmoe::losses {

using numkit::Tensor;
using numkit::Var;

struct AuxLossReport {
  std::vector<double> importance;  // per expert, sums to the token count
  std::vector<double> load;        // per expert expected assignments; empty without noise
  double imp_cv2 = 0.0;
  double load_cv2 = 0.0;
  double aux = 0.0;  // 0.5 * imp_cv2 + 0.5 * load_cv2
};

struct LossConfig {
  double lambda = 0.01;
  std::optional<double> sigma;  // defaults to 1/E
  double sigma_for(std::size_t num_experts) const;
};

// Population (std / mean)^2.
double cv_squared(std::span<const double> values);

struct ImportanceResult {
  std::vector<double> importance;
  double cv2 = 0.0;
};
ImportanceResult importance_loss(const router::GateMatrix& g);

struct LoadResult {
  std::vector<double> load;
  Tensor probabilities;  // [T, E], p_i per token
  double cv2 = 0.0;
};
// Requires the realized noise: the threshold is the k-th largest noisy logit.
LoadResult load_loss(const router::GateMatrix& g, std::size_t k, double sigma);

double total_loss(double task_loss, std::span<const AuxLossReport> reports, double lambda);

// p_i = 1 - Phi((threshold - clean_i) / sigma), differentiable in clean logits.
Var load_probabilities(Var clean_logits, const Tensor& noisy_logits, std::size_t k, double sigma);

struct AuxVars {
  Var imp_cv2;
  Var load_cv2;  // invalid when the gates carry no noise
  Var aux;
  AuxLossReport report;
};
AuxVars aux_loss_graph(const router::GateVars& gates, std::size_t k, double sigma);

}  // namespace vmoe::losses
