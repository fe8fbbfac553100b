#pragma once

// Central finite-difference oracle shared by the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "vmoe/numkit/graph.hpp"

namespace vmoe::testing {

using LossBuilder = std::function<numkit::Var(numkit::Graph&, const std::vector<numkit::Var>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
};

// Relative error with an absolute floor so that gradients that are zero up to
// rounding do not produce spurious 0/0 ratios.
inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double evaluate_loss(const LossBuilder& build, const std::vector<numkit::Tensor>& params) {
  numkit::Graph g;
  std::vector<numkit::Var> leaves;
  for (const auto& p : params) leaves.push_back(g.constant(p));
  return build(g, leaves).value().item();
}

inline GradCheckResult check_gradients(const LossBuilder& build, std::vector<numkit::Tensor> params,
                                       double step = 1e-5) {
  numkit::Graph g;
  std::vector<numkit::Var> leaves;
  for (const auto& p : params) leaves.push_back(g.leaf(p));
  numkit::Var loss = build(g, leaves);
  g.backward(loss);

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const numkit::Tensor analytic = leaves[pi].grad();
    for (std::size_t i = 0; i < params[pi].size(); ++i) {
      const double saved = params[pi][i];
      params[pi][i] = saved + step;
      const double up = evaluate_loss(build, params);
      params[pi][i] = saved - step;
      const double down = evaluate_loss(build, params);
      params[pi][i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      result.max_rel_error = std::max(result.max_rel_error, relative_error(analytic[i], numeric));
      result.max_abs_error = std::max(result.max_abs_error, std::abs(analytic[i] - numeric));
      ++result.checked;
    }
  }
  return result;
}

}  // namespace vmoe::testing
