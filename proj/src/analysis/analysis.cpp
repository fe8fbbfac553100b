#include "vmoe/analysis/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <ostream>
#include <stdexcept>

namespace vmoe::analysis {

RoutingTrace collect_traces(const ModelConfig& c, const ParamStore& params, const Dataset& data,
                            const model::ForwardOptions& opts) {
  const model::EvalResult r = model::evaluate(c, params, data, opts);
  RoutingTrace trace;
  trace.num_layers = r.layers.size();
  trace.num_experts = c.experts;
  trace.seq_len = c.seq_len();
  const std::size_t s = c.seq_len();
  for (std::size_t l = 0; l < r.layers.size(); ++l) {
    const model::LayerTrace& lt = r.layers[l];
    const router::TopKSelection& sel = lt.selection;
    trace.k = sel.k;
    trace.blocks.push_back(lt.block);
    for (std::size_t img = 0; img < data.size(); ++img) {
      const std::size_t group = img / c.group_images;
      const allocator::AssignmentTable& table = lt.tables.at(group);
      const std::size_t base = group * c.group_images * s;
      for (std::size_t pos = 0; pos < s; ++pos) {
        const std::size_t t = img * s + pos;
        TraceRecord rec;
        rec.layer = l;
        rec.block = lt.block;
        rec.image = img;
        rec.position = pos;
        rec.label = data.labels[img];
        for (std::size_t i = 0; i < sel.k; ++i) {
          rec.experts.push_back(sel.expert(t, i));
          rec.weights.push_back(sel.weight(t, i));
          rec.success.push_back(table.at(t - base, i).success);
        }
        trace.records.push_back(std::move(rec));
      }
    }
  }
  return trace;
}

namespace {

void check_layer(const RoutingTrace& trace, std::size_t layer) {
  if (layer >= trace.num_layers) {
    throw std::out_of_range("unknown MoE layer " + std::to_string(layer) + " (trace has " +
                            std::to_string(trace.num_layers) + ")");
  }
}

template <typename KeyFn>
SpecializationMatrix group_mean(const RoutingTrace& trace, std::size_t layer, KeyFn key) {
  check_layer(trace, layer);
  std::map<int, std::pair<std::vector<double>, std::size_t>> acc;
  for (const auto& rec : trace.records) {
    if (rec.layer != layer) continue;
    auto& [sum, count] = acc[key(rec)];
    sum.resize(trace.num_experts, 0.0);
    for (std::size_t i = 0; i < rec.experts.size(); ++i) sum[static_cast<std::size_t>(rec.experts[i])] += rec.weights[i];
    ++count;
  }
  SpecializationMatrix m;
  m.num_experts = trace.num_experts;
  for (auto& [k, entry] : acc) {
    auto& [sum, count] = entry;
    for (double& v : sum) v /= static_cast<double>(count);
    m.keys.push_back(k);
    m.rows.push_back(std::move(sum));
    m.counts.push_back(count);
  }
  return m;
}

}  // namespace

SpecializationMatrix class_expert_matrix(const RoutingTrace& trace, std::size_t layer) {
  return group_mean(trace, layer, [](const TraceRecord& r) { return r.label; });
}

SpecializationMatrix position_expert_matrix(const RoutingTrace& trace, std::size_t layer) {
  return group_mean(trace, layer, [](const TraceRecord& r) { return static_cast<int>(r.position); });
}

std::vector<std::size_t> experts_per_image(const RoutingTrace& trace, std::size_t layer) {
  check_layer(trace, layer);
  std::map<std::size_t, std::vector<bool>> used;
  for (const auto& rec : trace.records) {
    if (rec.layer != layer) continue;
    auto& u = used[rec.image];
    u.resize(trace.num_experts, false);
    for (std::size_t i = 0; i < rec.experts.size(); ++i)
      if (rec.success[i]) u[static_cast<std::size_t>(rec.experts[i])] = true;
  }
  std::vector<std::size_t> hist(trace.num_experts + 1, 0);
  for (const auto& [img, u] : used) ++hist[static_cast<std::size_t>(std::count(u.begin(), u.end(), true))];
  return hist;
}

double ablated_accuracy(const ModelConfig& c, const ParamStore& params, const Dataset& data,
                        const std::vector<std::size_t>& layers, moe::RouterOverride kind, std::uint64_t seed,
                        const model::ForwardOptions& opts) {
  const auto blocks = c.moe_blocks();
  model::ForwardOptions o = opts;
  for (std::size_t l : layers) {
    if (l >= blocks.size()) throw std::out_of_range("ablation scope: MoE layer " + std::to_string(l) + " out of range");
    o.router_overrides[blocks[l]] = kind;
  }
  return model::accuracy(model::evaluate(c, params, data, o, seed), data);
}

AblationPoint random_router_ablation(const ModelConfig& c, const ParamStore& params, const Dataset& data,
                                     AblationScope scope, std::size_t layer, std::uint64_t seed,
                                     moe::RouterOverride kind, const model::ForwardOptions& opts) {
  const std::size_t n = c.moe_blocks().size();
  if (layer >= n) throw std::out_of_range("ablation scope: MoE layer " + std::to_string(layer) + " out of range");
  AblationPoint p;
  p.scope = scope;
  p.layer = layer;
  if (scope == AblationScope::kSingle) {
    p.replaced = {layer};
  } else {
    for (std::size_t l = 0; l <= layer; ++l) p.replaced.push_back(l);
  }
  p.accuracy = ablated_accuracy(c, params, data, p.replaced, kind, seed, opts);
  return p;
}

std::vector<AblationPoint> random_router_sweep(const ModelConfig& c, const ParamStore& params, const Dataset& data,
                                               AblationScope scope, std::uint64_t seed, moe::RouterOverride kind,
                                               const model::ForwardOptions& opts) {
  std::vector<AblationPoint> out;
  for (std::size_t l = 0; l < c.moe_blocks().size(); ++l)
    out.push_back(random_router_ablation(c, params, data, scope, l, seed, kind, opts));
  return out;
}

std::vector<VaryKPoint> vary_k_eval(const ModelConfig& c, const ParamStore& params, const Dataset& data,
                                    const std::vector<std::size_t>& k_grid, const model::ForwardOptions& opts) {
  for (std::size_t k : k_grid)
    if (k < 1 || k > c.experts) throw std::out_of_range("k' = " + std::to_string(k) + " outside [1, E]");
  std::vector<VaryKPoint> out;
  for (std::size_t k : k_grid) {
    model::ForwardOptions o = opts;
    o.k_override = k;
    const model::EvalResult r = model::evaluate(c, params, data, o);
    out.push_back({k, model::accuracy(r, data), r.logits.all_finite()});
  }
  return out;
}

namespace {

void write_header(std::ostream& os, const std::vector<std::string>& header) {
  for (const auto& line : header) os << "# " << line << '\n';
}

}  // namespace

void write_trace_csv(std::ostream& os, const RoutingTrace& trace, const std::vector<std::string>& header) {
  write_header(os, header);
  const std::size_t ranks = std::max<std::size_t>(trace.k, 2);
  os << "layer,block,image,position,label";
  for (std::size_t i = 1; i <= ranks; ++i) os << ",expert" << i << ",weight" << i << ",success" << i;
  os << '\n' << std::setprecision(17);
  for (const auto& r : trace.records) {
    os << r.layer << ',' << r.block << ',' << r.image << ',' << r.position << ',' << r.label;
    for (std::size_t i = 0; i < ranks; ++i) {
      if (i < r.experts.size()) {
        os << ',' << r.experts[i] << ',' << r.weights[i] << ',' << (r.success[i] ? 1 : 0);
      } else {
        os << ",,,";
      }
    }
    os << '\n';
  }
}

void write_matrix_csv(std::ostream& os, const SpecializationMatrix& m, const char* key_name,
                      const std::vector<std::string>& header) {
  write_header(os, header);
  os << key_name << ",count";
  for (std::size_t e = 0; e < m.num_experts; ++e) os << ",expert" << e;
  os << '\n' << std::setprecision(17);
  for (std::size_t r = 0; r < m.keys.size(); ++r) {
    os << m.keys[r] << ',' << m.counts[r];
    for (double v : m.rows[r]) os << ',' << v;
    os << '\n';
  }
}

nlohmann::ordered_json histogram_json(const std::vector<std::size_t>& histogram, std::size_t layer) {
  nlohmann::ordered_json j;
  j["layer"] = layer;
  j["experts_per_image"] = histogram;
  std::size_t total = 0;
  for (std::size_t v : histogram) total += v;
  j["images"] = total;
  return j;
}

}  // namespace vmoe::analysis
