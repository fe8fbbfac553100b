#include "vmoe/model/probe.hpp"

#include <Eigen/Dense>
#include <stdexcept>

namespace vmoe::model {

namespace {

Eigen::MatrixXd with_bias(const Tensor& f) {
  Eigen::MatrixXd x(f.rows(), f.cols() + 1);
  for (std::size_t r = 0; r < f.rows(); ++r) {
    for (std::size_t c = 0; c < f.cols(); ++c) x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = f(r, c);
    x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(f.cols())) = 1.0;
  }
  return x;
}

}  // namespace

std::vector<int> ridge_probe_predict(const Tensor& support_features, const std::vector<int>& support_labels,
                                     const Tensor& query_features, std::size_t classes, double ridge) {
  if (!(ridge > 0.0)) throw std::invalid_argument("linear probe: ridge must be positive");
  if (support_features.rows() != support_labels.size() || support_labels.empty()) {
    throw std::invalid_argument("linear probe: support features and labels disagree");
  }
  if (query_features.cols() != support_features.cols()) throw numkit::ShapeError("linear probe: feature widths differ");
  const Eigen::MatrixXd x = with_bias(support_features);
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(x.rows(), static_cast<Eigen::Index>(classes));
  for (std::size_t i = 0; i < support_labels.size(); ++i) {
    const int label = support_labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) throw std::invalid_argument("linear probe: bad label");
    y(static_cast<Eigen::Index>(i), label) = 1.0;
  }
  Eigen::MatrixXd gram = x.transpose() * x;
  gram.diagonal().array() += ridge;
  const Eigen::MatrixXd w = gram.ldlt().solve(x.transpose() * y);
  const Eigen::MatrixXd scores = with_bias(query_features) * w;
  std::vector<int> pred(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    Eigen::Index best = 0;
    scores.row(r).maxCoeff(&best);
    pred[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return pred;
}

ProbeResult linear_probe(const ModelConfig& config, const ParamStore& params, const Dataset& support_pool,
                         const Dataset& queries, std::size_t n_shot, double ridge) {
  if (n_shot == 0) throw std::invalid_argument("linear probe: n_shot must be at least 1");
  const auto idx = per_class_indices(support_pool, n_shot);
  const Dataset support = support_pool.subset(idx);
  ForwardOptions opts;
  const EvalResult s = evaluate(config, params, support, opts);
  const EvalResult q = evaluate(config, params, queries, opts);
  const auto pred = ridge_probe_predict(s.features, support.labels, q.features, config.classes, ridge);
  return {accuracy(pred, queries.labels), support.size(), queries.size()};
}

}  // namespace vmoe::model
