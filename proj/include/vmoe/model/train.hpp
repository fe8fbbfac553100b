#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "vmoe/model/model.hpp"

namespace vmoe::model {

// Non-finite loss or gradient during training.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t step, const std::string& what);
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

struct MetricRow {
  std::size_t step = 0;
  double task_loss = 0.0;
  double aux = 0.0;  // mean over MoE layers
  std::vector<double> imp_cv2;   // per MoE layer
  std::vector<double> load_cv2;  // per MoE layer
  double accuracy = 0.0;         // on the training batch
};

struct ExpertLoadRow {
  std::size_t step = 0;
  std::size_t block = 0;
  std::size_t expert = 0;
  double importance = 0.0;
  double load = 0.0;
  std::size_t assigned = 0;  // successful buffer assignments
};

struct TrainResult {
  ParamStore params;
  std::vector<MetricRow> metrics;        // every log_every steps plus the last step
  std::vector<ExpertLoadRow> expert_loads;
  std::vector<double> step_loss;         // task loss at every step
  std::vector<double> step_imp_cv2;      // layer-mean imp_cv2 at every step
  numkit::RngStream data_rng;
  numkit::RngStream noise_rng;
};

class Adam {
 public:
  explicit Adam(const TrainConfig& config) : config_(config) {}
  // One update at the given 0-based step; gradients keyed like the params.
  void step(ParamStore& params, const std::map<std::string, Tensor>& grads, std::size_t step);
  double learning_rate(std::size_t step) const;

 private:
  TrainConfig config_;
  std::map<std::string, Tensor> m_, v_;
};

using StepCallback = std::function<void(const MetricRow&)>;

// Trains from init_params(model) on batches drawn with replacement from `data`.
TrainResult train(const ModelConfig& model, const TrainConfig& train, const Dataset& data,
                  const StepCallback& on_log = {});

// `header` lines are written first, each prefixed with '#'.
void write_metrics_csv(std::ostream& os, const std::vector<MetricRow>& rows, const std::vector<std::size_t>& moe_blocks,
                       const std::vector<std::string>& header = {});
void write_expert_loads_csv(std::ostream& os, const std::vector<ExpertLoadRow>& rows,
                            const std::vector<std::string>& header = {});

}  // namespace vmoe::model
