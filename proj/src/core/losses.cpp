#include "vmoe/losses.hpp"

#include <stdexcept>

#include "vmoe/numkit/ops.hpp"
#include "vmoe/numkit/special.hpp"

namespace vmoe::losses {

double LossConfig::sigma_for(std::size_t num_experts) const {
  return sigma.value_or(1.0 / static_cast<double>(num_experts));
}

double cv_squared(std::span<const double> values) {
  const double n = static_cast<double>(values.size());
  double mu = 0.0;
  for (double v : values) mu += v;
  mu /= n;
  if (!(mu > 0.0)) throw std::domain_error("cv_squared: mean must be positive");
  double var = 0.0;
  for (double v : values) var += (v - mu) * (v - mu);
  var /= n;
  return var / (mu * mu);
}

ImportanceResult importance_loss(const router::GateMatrix& g) {
  ImportanceResult r;
  r.importance.assign(g.experts(), 0.0);
  for (std::size_t t = 0; t < g.tokens(); ++t)
    for (std::size_t e = 0; e < g.experts(); ++e) r.importance[e] += g.probs(t, e);
  r.cv2 = cv_squared(r.importance);
  return r;
}

namespace {

void check_load_inputs(const Tensor& clean, const Tensor& noisy, std::size_t k, double sigma) {
  if (clean.shape() != noisy.shape()) throw numkit::ShapeError("load loss: clean/noisy logits shape mismatch");
  if (k < 1 || k > clean.cols()) throw std::out_of_range("load loss: k outside [1, E]");
  if (!(sigma > 0.0)) throw std::invalid_argument("load loss: sigma must be positive");
}

// Index of the k-th largest noisy logit per token, ties to the lower index.
std::vector<std::size_t> threshold_experts(const Tensor& noisy, std::size_t k) {
  std::vector<std::size_t> idx(noisy.rows());
  for (std::size_t t = 0; t < noisy.rows(); ++t)
    idx[t] = static_cast<std::size_t>(router::top_k_indices(noisy.row(t), k).back());
  return idx;
}

}  // namespace

LoadResult load_loss(const router::GateMatrix& g, std::size_t k, double sigma) {
  if (!g.noise_applied) throw std::logic_error("load_loss: gates were computed without noise");
  check_load_inputs(g.clean_logits, g.noisy_logits, k, sigma);
  LoadResult r;
  r.probabilities = Tensor(g.clean_logits.shape());
  r.load.assign(g.experts(), 0.0);
  const auto thr = threshold_experts(g.noisy_logits, k);
  for (std::size_t t = 0; t < g.tokens(); ++t) {
    const double threshold = g.noisy_logits(t, thr[t]);
    for (std::size_t e = 0; e < g.experts(); ++e) {
      const double p = 1.0 - numkit::std_normal_cdf((threshold - g.clean_logits(t, e)) / sigma);
      r.probabilities(t, e) = p;
      r.load[e] += p;
    }
  }
  r.cv2 = cv_squared(r.load);
  return r;
}

double total_loss(double task_loss, std::span<const AuxLossReport> reports, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("total_loss: lambda must be non-negative");
  if (reports.empty()) return task_loss;
  double aux = 0.0;
  for (const auto& r : reports) aux += r.aux;
  return task_loss + lambda * aux / static_cast<double>(reports.size());
}

Var load_probabilities(Var clean_logits, const Tensor& noisy_logits, std::size_t k, double sigma) {
  const Tensor& clean = clean_logits.value();
  check_load_inputs(clean, noisy_logits, k, sigma);
  const auto thr = threshold_experts(noisy_logits, k);
  Tensor p(clean.shape());
  Tensor density(clean.shape());  // phi(z) / sigma, the magnitude of dp/dclean
  for (std::size_t t = 0; t < clean.rows(); ++t) {
    const double threshold = noisy_logits(t, thr[t]);
    for (std::size_t e = 0; e < clean.cols(); ++e) {
      const double z = (threshold - clean(t, e)) / sigma;
      p(t, e) = 1.0 - numkit::std_normal_cdf(z);
      density(t, e) = numkit::std_normal_pdf(z) / sigma;
    }
  }
  return clean_logits.graph().record(
      std::move(p), {clean_logits},
      [clean_logits, thr, density = std::move(density)](numkit::Graph& g, const Tensor& dy) {
        Tensor* dc = g.grad_sink(clean_logits);
        if (!dc) return;
        // The threshold is clean[j*] + fixed noise, so it moves with clean[j*].
        for (std::size_t t = 0; t < dy.rows(); ++t) {
          for (std::size_t e = 0; e < dy.cols(); ++e) {
            const double gval = dy(t, e) * density(t, e);
            (*dc)(t, e) += gval;
            (*dc)(t, thr[t]) -= gval;
          }
        }
      },
      "load_probabilities");
}

AuxVars aux_loss_graph(const router::GateVars& gates, std::size_t k, double sigma) {
  AuxVars out;
  Var imp = numkit::column_sum(gates.probs);
  out.imp_cv2 = numkit::cv_squared(imp);
  out.report.importance.assign(imp.value().data().begin(), imp.value().data().end());
  out.report.imp_cv2 = out.imp_cv2.value().item();
  if (gates.values.noise_applied) {
    Var load = numkit::column_sum(load_probabilities(gates.clean_logits, gates.values.noisy_logits, k, sigma));
    out.load_cv2 = numkit::cv_squared(load);
    out.report.load.assign(load.value().data().begin(), load.value().data().end());
    out.report.load_cv2 = out.load_cv2.value().item();
    out.aux = numkit::scale(numkit::add(out.imp_cv2, out.load_cv2), 0.5);
  } else {
    out.aux = numkit::scale(out.imp_cv2, 0.5);
  }
  out.report.aux = out.aux.value().item();
  return out;
}

}  // namespace vmoe::losses
