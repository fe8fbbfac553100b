#include "vmoe/moe_layer.hpp"

#include <algorithm>
#include <stdexcept>

#include "vmoe/numkit/flops.hpp"
#include "vmoe/numkit/kernels.hpp"
#include "vmoe/numkit/ops.hpp"

namespace vmoe::moe {

using allocator::AssignmentTable;
using numkit::Component;
using numkit::ComponentScope;
using numkit::Graph;

namespace {

void add_row_bias(Tensor& x, const Tensor& b) {
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) x(r, c) += b[c];
}

struct CombineEntry {
  std::size_t token;
  std::size_t expert;
  std::size_t row;  // row in that expert's output buffer
};

// out[t] = sum over successful (t, e, row) of weights[t, e] * expert_out[e][row].
Var combine_graph(std::span<const Var> expert_outputs, Var weights, std::vector<CombineEntry> entries,
                  std::size_t tokens) {
  const std::size_t d = weights.graph().value(expert_outputs.front()).cols();
  Tensor out({tokens, d});
  const Tensor& w = weights.value();
  for (const auto& e : entries) {
    const double g = w(e.token, e.expert);
    const auto src = expert_outputs[e.expert].value().row(e.row);
    auto dst = out.row(e.token);
    for (std::size_t c = 0; c < d; ++c) dst[c] += g * src[c];
  }
  std::vector<Var> parents(expert_outputs.begin(), expert_outputs.end());
  parents.push_back(weights);
  std::vector<Var> outs(expert_outputs.begin(), expert_outputs.end());
  return weights.graph().record(
      std::move(out), parents,
      [outs = std::move(outs), weights, entries = std::move(entries), d](Graph& g, const Tensor& dy) {
        Tensor* dw = g.grad_sink(weights);
        const Tensor& w = weights.value();
        for (const auto& e : entries) {
          const auto up = dy.row(e.token);
          if (Tensor* dout = g.grad_sink(outs[e.expert])) {
            auto dst = dout->row(e.row);
            const double gw = w(e.token, e.expert);
            for (std::size_t c = 0; c < d; ++c) dst[c] += gw * up[c];
          }
          if (dw) {
            const auto src = outs[e.expert].value().row(e.row);
            double dot = 0.0;
            for (std::size_t c = 0; c < d; ++c) dot += up[c] * src[c];
            (*dw)(e.token, e.expert) += dot;
          }
        }
      },
      "combine");
}

}  // namespace

Tensor mlp_forward(const Tensor& x, const MlpWeights& w) {
  Tensor h = numkit::matmul_bt(x, w.w1);
  add_row_bias(h, w.b1);
  h = numkit::gelu(h);
  Tensor y = numkit::matmul_bt(h, w.w2);
  add_row_bias(y, w.b2);
  return y;
}

ExpertBuffers dispatch(const Tensor& x, const AssignmentTable& table) {
  if (x.rank() != 2 || x.rows() != table.tokens) {
    throw numkit::ShapeError("dispatch: input has " + numkit::shape_string(x.shape()) + " rows for a table of " +
                             std::to_string(table.tokens) + " tokens");
  }
  const std::size_t d = x.cols();
  ExpertBuffers buf{Tensor({table.num_experts, table.capacity, d}), std::vector<std::size_t>(table.num_experts, 0)};
  std::vector<char> taken(table.num_experts * table.capacity, 0);
  for (std::size_t t = 0; t < table.tokens; ++t) {
    for (std::size_t i = 0; i < table.k; ++i) {
      const auto& a = table.at(t, i);
      if (!a.success) continue;
      const auto e = static_cast<std::size_t>(a.expert);
      const auto pos = static_cast<std::size_t>(a.position);
      if (pos >= table.capacity) throw std::logic_error("dispatch: buffer position out of range");
      char& slot = taken[e * table.capacity + pos];
      if (slot) throw std::logic_error("dispatch: two tokens assigned to one buffer slot");
      slot = 1;
      ++buf.occupancy[e];
      const auto src = x.row(t);
      std::copy(src.begin(), src.end(), buf.slots.data().begin() + static_cast<std::ptrdiff_t>((e * table.capacity + pos) * d));
    }
  }
  return buf;
}

ExpertBuffers experts_forward(const ExpertBuffers& buffers, const ExpertParams& params) {
  const std::size_t e_count = buffers.num_experts();
  if (params.num_experts() != e_count) throw numkit::ShapeError("experts_forward: expert count mismatch");
  const std::size_t cap = buffers.capacity();
  const std::size_t d = buffers.slots.dim(2);
  ExpertBuffers out{Tensor({e_count, cap, d}), buffers.occupancy};
  ComponentScope scope(Component::kExpertMlp);
  for (std::size_t e = 0; e < e_count; ++e) {
    const auto begin = buffers.slots.data().begin() + static_cast<std::ptrdiff_t>(e * cap * d);
    Tensor x({cap, d}, std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(cap * d)));
    const Tensor y = mlp_forward(x, params.experts[e]);
    std::copy(y.data().begin(), y.data().end(), out.slots.data().begin() + static_cast<std::ptrdiff_t>(e * cap * d));
  }
  return out;
}

Tensor combine(const ExpertBuffers& outputs, const AssignmentTable& table) {
  const std::size_t d = outputs.slots.dim(2);
  const std::size_t cap = outputs.capacity();
  Tensor out({table.tokens, d});
  for (std::size_t t = 0; t < table.tokens; ++t) {
    for (std::size_t i = 0; i < table.k; ++i) {
      const auto& a = table.at(t, i);
      if (!a.success) continue;
      const std::size_t base = (static_cast<std::size_t>(a.expert) * cap + static_cast<std::size_t>(a.position)) * d;
      for (std::size_t c = 0; c < d; ++c) out(t, c) += a.weight * outputs.slots[base + c];
    }
  }
  return out;
}

Var mlp_graph(Var x, const MlpVars& w) {
  Var h = numkit::gelu(numkit::add_bias(numkit::matmul_bt(x, w.w1), w.b1));
  return numkit::add_bias(numkit::matmul_bt(h, w.w2), w.b2);
}

std::vector<std::pair<std::size_t, std::size_t>> group_ranges(std::size_t tokens, const MoeOptions& opts) {
  if (opts.tokens_per_image == 0 || opts.group_images == 0) throw std::invalid_argument("group size must be positive");
  if (tokens % opts.tokens_per_image != 0) {
    throw numkit::ShapeError("token count " + std::to_string(tokens) + " is not a multiple of tokens per image");
  }
  const std::size_t group = opts.tokens_per_image * opts.group_images;
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  for (std::size_t begin = 0; begin < tokens; begin += group) ranges.emplace_back(begin, std::min(tokens, begin + group));
  return ranges;
}

MoeGraphResult moe_forward_graph(Var x, const MoeLayerVars& layer, const MoeOptions& opts, numkit::RngStream& rng) {
  Graph& graph = x.graph();
  const std::size_t tokens = x.value().rows();
  const std::size_t num_experts = layer.experts.size();
  const std::size_t k = opts.k_override.value_or(layer.k);
  const double capacity = opts.capacity_override.value_or(layer.capacity_ratio);
  if (k < 1 || k > num_experts) throw std::out_of_range("moe_forward: k outside [1, E]");
  if (!(capacity > 0.0)) throw std::invalid_argument("moe_forward: capacity ratio must be positive");

  MoeGraphResult result;
  result.effective_k = k;
  {
    ComponentScope scope(Component::kRouter);
    Var clean = numkit::matmul_bt(x, layer.router_weight);
    if (opts.router_override == RouterOverride::kGaussian) {
      clean = graph.constant(numkit::sample_gaussian(rng, {tokens, num_experts}, 0.0, 1.0));
    } else if (opts.router_override == RouterOverride::kPermuted) {
      std::vector<std::size_t> perm(num_experts);
      for (std::size_t e = 0; e < num_experts; ++e) perm[e] = e;
      for (std::size_t e = num_experts; e > 1; --e) std::swap(perm[e - 1], perm[rng.below(e)]);
      Tensor permuted(clean.value().shape());
      for (std::size_t t = 0; t < tokens; ++t)
        for (std::size_t e = 0; e < num_experts; ++e) permuted(t, perm[e]) = clean.value()(t, e);
      clean = graph.constant(std::move(permuted));
    }
    if (opts.mode == Mode::kTrain) {
      const Tensor eps = router::routing_noise(rng, tokens, num_experts);
      result.gates = router::gates_from_logits(clean, &eps, k, opts.order);
    } else {
      result.gates = router::gates_from_logits(clean, nullptr, k, opts.order);
    }
  }

  // Allocate each group independently; expert buffers stack the groups.
  const auto ranges = group_ranges(tokens, opts);
  std::vector<std::vector<std::int64_t>> sources(num_experts);
  std::vector<CombineEntry> entries;
  for (const auto& [begin, end] : ranges) {
    const std::size_t images = (end - begin) / opts.tokens_per_image;
    const std::size_t slots = allocator::buffer_capacity(images, opts.tokens_per_image, k, num_experts, capacity);
    AssignmentTable table = allocator::allocate(result.gates.selection.slice(begin, end), slots, opts.allocation);
    std::vector<std::size_t> offset(num_experts);
    for (std::size_t e = 0; e < num_experts; ++e) {
      offset[e] = sources[e].size();
      sources[e].resize(sources[e].size() + slots, -1);
    }
    for (std::size_t t = 0; t < table.tokens; ++t) {
      for (std::size_t i = 0; i < table.k; ++i) {
        const auto& a = table.at(t, i);
        if (!a.success) continue;
        const auto e = static_cast<std::size_t>(a.expert);
        const std::size_t row = offset[e] + static_cast<std::size_t>(a.position);
        sources[e][row] = static_cast<std::int64_t>(begin + t);
        entries.push_back({begin + t, e, row});
      }
    }
    result.tables.push_back(std::move(table));
  }

  std::vector<Var> expert_outputs;
  expert_outputs.reserve(num_experts);
  {
    ComponentScope scope(Component::kExpertMlp);
    for (std::size_t e = 0; e < num_experts; ++e) {
      expert_outputs.push_back(mlp_graph(numkit::gather_rows(x, sources[e]), layer.experts[e]));
    }
  }
  result.output = combine_graph(expert_outputs, result.gates.combine_weights, std::move(entries), tokens);
  return result;
}

MoeResult moe_forward(const Tensor& x, const MoELayerParams& params, const MoeOptions& opts, numkit::RngStream& rng) {
  Graph graph;
  MoeLayerVars layer;
  layer.router_weight = graph.constant(params.router.weight);
  layer.k = params.k;
  layer.capacity_ratio = params.capacity_ratio;
  for (const auto& w : params.experts.experts) {
    layer.experts.push_back(
        {graph.constant(w.w1), graph.constant(w.b1), graph.constant(w.w2), graph.constant(w.b2)});
  }
  MoeGraphResult r = moe_forward_graph(graph.constant(x), layer, opts, rng);
  return MoeResult{r.output.value(), r.gates.values, r.gates.selection, std::move(r.tables)};
}

}  // namespace vmoe::moe
