#include "vmoe/model/train.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "vmoe/losses.hpp"
#include "vmoe/numkit/ops.hpp"

namespace vmoe::model {

DivergenceError::DivergenceError(std::size_t step, const std::string& what)
    : std::runtime_error("training diverged at step " + std::to_string(step) + ": " + what), step_(step) {}

double Adam::learning_rate(std::size_t step) const {
  const double frac = static_cast<double>(step) / static_cast<double>(config_.steps);
  return config_.learning_rate * std::max(0.0, 1.0 - frac);
}

void Adam::step(ParamStore& params, const std::map<std::string, Tensor>& grads, std::size_t step) {
  const double lr = learning_rate(step);
  const double t = static_cast<double>(step + 1);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  for (auto& [name, p] : params) {
    const auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Tensor& g = git->second;
    Tensor& m = m_.try_emplace(name, p.shape()).first->second;
    Tensor& v = v_.try_emplace(name, p.shape()).first->second;
    const bool decay = p.rank() == 2 && name != "pos" && name != "cls";
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.adam_eps);
      if (decay) p[i] -= lr * config_.weight_decay * p[i];
      p[i] -= lr * update;
    }
  }
}

TrainResult train(const ModelConfig& model, const TrainConfig& cfg, const Dataset& data, const StepCallback& on_log) {
  model.validate();
  cfg.validate();
  if (data.size() == 0) throw std::invalid_argument("train: empty dataset");
  for (int label : data.labels)
    if (label < 0 || static_cast<std::size_t>(label) >= model.classes) throw std::invalid_argument("train: label out of range");

  TrainResult result;
  result.params = init_params(model);
  const numkit::RngStream root(model.seed);
  result.data_rng = root.fork(2);
  result.noise_rng = root.fork(3);
  Adam adam(cfg);
  ForwardOptions opts;
  opts.mode = Mode::kTrain;
  opts.allocation.algorithm = cfg.algorithm;
  opts.allocation.priority = cfg.priority;
  const double sigma = model.experts > 0 ? 1.0 / static_cast<double>(model.experts) : 1.0;

  std::vector<std::size_t> batch(cfg.batch_size);
  std::vector<int> labels(cfg.batch_size);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (std::size_t i = 0; i < cfg.batch_size; ++i) {
      batch[i] = static_cast<std::size_t>(result.data_rng.below(data.size()));
      labels[i] = data.labels[batch[i]];
    }
    const Tensor patches = patchify_batch(data, batch, model.patch);

    Graph g;
    ParamVars p(g, result.params, true);
    MetricRow row;
    row.step = step;
    std::vector<losses::AuxVars> aux;
    Var loss;
    try {
      const ForwardGraph f = forward_graph(model, p, patches, cfg.batch_size, opts, result.noise_rng);
      Var task = numkit::cross_entropy(f.logits, labels);
      loss = task;
      row.task_loss = task.value().item();
      for (const auto& rec : f.moe) aux.push_back(losses::aux_loss_graph(rec.gates, rec.k, sigma));
      if (!aux.empty()) {
        Var total_aux = aux.front().aux;
        for (std::size_t l = 1; l < aux.size(); ++l) total_aux = numkit::add(total_aux, aux[l].aux);
        Var mean_aux = numkit::scale(total_aux, 1.0 / static_cast<double>(aux.size()));
        row.aux = mean_aux.value().item();
        if (cfg.lambda > 0.0) loss = numkit::add(task, numkit::scale(mean_aux, cfg.lambda));
      }
      const Tensor& logits = f.logits.value();
      std::size_t hit = 0;
      for (std::size_t n = 0; n < cfg.batch_size; ++n) {
        const auto r = logits.row(n);
        hit += static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin()) == labels[n];
      }
      row.accuracy = static_cast<double>(hit) / static_cast<double>(cfg.batch_size);
      g.backward(loss);

      if (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
        for (std::size_t l = 0; l < f.moe.size(); ++l) {
          std::vector<std::size_t> assigned(model.experts, 0);
          for (const auto& table : f.moe[l].tables) {
            const auto occ = table.occupancy();
            for (std::size_t e = 0; e < model.experts; ++e) assigned[e] += occ[e];
          }
          for (std::size_t e = 0; e < model.experts; ++e) {
            const auto& rep = aux[l].report;
            result.expert_loads.push_back(
                {step, f.moe[l].block, e, rep.importance[e], rep.load.empty() ? 0.0 : rep.load[e], assigned[e]});
          }
        }
      }
    } catch (const numkit::NonFiniteError& e) {
      throw DivergenceError(step, e.what());
    }
    if (!std::isfinite(row.task_loss)) throw DivergenceError(step, "non-finite task loss");

    double imp_mean = 0.0;
    for (const auto& a : aux) {
      row.imp_cv2.push_back(a.report.imp_cv2);
      row.load_cv2.push_back(a.report.load_cv2);
      imp_mean += a.report.imp_cv2;
    }
    result.step_loss.push_back(row.task_loss);
    result.step_imp_cv2.push_back(aux.empty() ? 0.0 : imp_mean / static_cast<double>(aux.size()));

    std::map<std::string, Tensor> grads;
    for (const auto& [name, v] : p.all()) grads.emplace(name, v.grad());
    for (const auto& [name, gt] : grads)
      if (!gt.all_finite()) throw DivergenceError(step, "non-finite gradient for " + name);
    adam.step(result.params, grads, step);

    if (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
      if (on_log) on_log(row);
      result.metrics.push_back(std::move(row));
    }
  }
  return result;
}

namespace {

void write_header(std::ostream& os, const std::vector<std::string>& header) {
  for (const auto& line : header) os << "# " << line << '\n';
}

}  // namespace

void write_metrics_csv(std::ostream& os, const std::vector<MetricRow>& rows, const std::vector<std::size_t>& moe_blocks,
                       const std::vector<std::string>& header) {
  write_header(os, header);
  os << "step,task_loss,aux";
  for (std::size_t b : moe_blocks) os << ",imp_cv2_block" << b;
  for (std::size_t b : moe_blocks) os << ",load_cv2_block" << b;
  os << ",accuracy\n";
  os << std::setprecision(17);
  for (const auto& r : rows) {
    os << r.step << ',' << r.task_loss << ',' << r.aux;
    for (double v : r.imp_cv2) os << ',' << v;
    for (double v : r.load_cv2) os << ',' << v;
    os << ',' << r.accuracy << '\n';
  }
}

void write_expert_loads_csv(std::ostream& os, const std::vector<ExpertLoadRow>& rows,
                            const std::vector<std::string>& header) {
  write_header(os, header);
  os << "step,block,expert,importance,load,assigned\n" << std::setprecision(17);
  for (const auto& r : rows)
    os << r.step << ',' << r.block << ',' << r.expert << ',' << r.importance << ',' << r.load << ',' << r.assigned << '\n';
}

}  // namespace vmoe::model
