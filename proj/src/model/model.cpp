#include "vmoe/model/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include "vmoe/numkit/flops.hpp"
#include "vmoe/numkit/ops.hpp"

namespace vmoe::model {

using numkit::Component;
using numkit::ComponentScope;

bool ModelConfig::is_moe(std::size_t block) const {
  switch (placement) {
    case Placement::kEvery2:
      return block % 2 == 1;
    case Placement::kLastN:
      // Odd blocks counted back from the top, so Last-n picks a subset of Every-2 when L is even.
      return block < blocks && (blocks - 1 - block) % 2 == 0 && (blocks - 1 - block) / 2 < last_n;
    case Placement::kNone:
      return false;
  }
  return false;
}

std::vector<std::size_t> ModelConfig::moe_blocks() const {
  std::vector<std::size_t> out;
  for (std::size_t b = 0; b < blocks; ++b)
    if (is_moe(b)) out.push_back(b);
  return out;
}

void ModelConfig::validate() const {
  if (patch == 0 || image_size == 0 || image_size % patch != 0) throw ConfigError("image_size must be a multiple of patch");
  if (channels == 0) throw ConfigError("channels must be positive");
  if (dim == 0 || heads == 0 || dim % heads != 0) throw ConfigError("dim must be a positive multiple of heads");
  if (blocks == 0 || mlp_dim == 0) throw ConfigError("blocks and mlp_dim must be positive");
  if (classes < 2) throw ConfigError("classes must be at least 2");
  if (group_images == 0) throw ConfigError("group_images must be positive");
  if (!moe_blocks().empty()) {
    if (experts == 0) throw ConfigError("experts must be positive");
    if (k < 1 || k > experts) throw ConfigError("k must lie in [1, experts]");
    if (!(capacity > 0.0)) throw ConfigError("capacity must be positive");
  }
  if (placement == Placement::kLastN && (last_n == 0 || 2 * last_n > blocks + 1)) {
    throw ConfigError("last_n must lie in [1, ceil(blocks / 2)]");
  }
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be non-negative");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (batch_size == 0 || steps == 0 || log_every == 0) throw ConfigError("batch_size, steps and log_every must be positive");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
}

std::string block_prefix(std::size_t block) { return "block" + std::to_string(block) + "/"; }

namespace {

Tensor lecun(numkit::RngStream& rng, std::size_t out, std::size_t in) {
  return numkit::sample_gaussian(rng, {out, in}, 0.0, 1.0 / std::sqrt(static_cast<double>(in)));
}

void add_mlp(ParamStore& p, numkit::RngStream& rng, const std::string& prefix, std::size_t d, std::size_t dm) {
  p[prefix + "w1"] = lecun(rng, dm, d);
  p[prefix + "b1"] = Tensor({dm});
  p[prefix + "w2"] = lecun(rng, d, dm);
  p[prefix + "b2"] = Tensor({d});
}

std::size_t mlp_count(std::size_t d, std::size_t dm) { return 2 * d * dm + dm + d; }

}  // namespace

ParamStore init_params(const ModelConfig& c) {
  c.validate();
  numkit::RngStream rng = numkit::RngStream(c.seed).fork(1);
  const std::size_t d = c.dim;
  ParamStore p;
  p["embed/w"] = lecun(rng, d, c.patch_dim());
  p["embed/b"] = Tensor({d});
  p["cls"] = Tensor({1, d});
  p["pos"] = numkit::sample_gaussian(rng, {c.seq_len(), d}, 0.0, 0.02);
  for (std::size_t b = 0; b < c.blocks; ++b) {
    const std::string pre = block_prefix(b);
    p[pre + "ln1/gamma"] = Tensor({d}, 1.0);
    p[pre + "ln1/beta"] = Tensor({d});
    p[pre + "attn/qkv/w"] = lecun(rng, 3 * d, d);
    p[pre + "attn/qkv/b"] = Tensor({3 * d});
    p[pre + "attn/out/w"] = lecun(rng, d, d);
    p[pre + "attn/out/b"] = Tensor({d});
    p[pre + "ln2/gamma"] = Tensor({d}, 1.0);
    p[pre + "ln2/beta"] = Tensor({d});
    if (c.is_moe(b)) {
      p[pre + "moe/router/w"] = lecun(rng, c.experts, d);
      for (std::size_t e = 0; e < c.experts; ++e)
        add_mlp(p, rng, pre + "moe/expert" + std::to_string(e) + "/", d, c.mlp_dim);
    } else {
      add_mlp(p, rng, pre + "mlp/", d, c.mlp_dim);
    }
  }
  p["final_ln/gamma"] = Tensor({d}, 1.0);
  p["final_ln/beta"] = Tensor({d});
  p["head/w"] = Tensor({c.classes, d});
  p["head/b"] = Tensor({c.classes});
  return p;
}

std::size_t count_params(const ParamStore& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.size();
  return n;
}

std::size_t count_params(const ModelConfig& c) {
  const std::size_t d = c.dim;
  std::size_t n = d * c.patch_dim() + d + d + c.seq_len() * d;
  for (std::size_t b = 0; b < c.blocks; ++b) {
    n += 4 * d + 3 * d * d + 3 * d + d * d + d;
    n += c.is_moe(b) ? c.experts * mlp_count(d, c.mlp_dim) + c.experts * d : mlp_count(d, c.mlp_dim);
  }
  return n + 2 * d + c.classes * d + c.classes;
}

ParamVars::ParamVars(Graph& graph, const ParamStore& params, bool trainable) {
  for (const auto& [name, t] : params) vars_.emplace(name, trainable ? graph.leaf(t) : graph.constant(t));
}

Var ParamVars::operator()(const std::string& name) const {
  const auto it = vars_.find(name);
  if (it == vars_.end()) throw std::out_of_range("missing parameter '" + name + "'");
  return it->second;
}

namespace {

moe::MlpVars mlp_vars(const ParamVars& p, const std::string& prefix) {
  return {p(prefix + "w1"), p(prefix + "b1"), p(prefix + "w2"), p(prefix + "b2")};
}

}  // namespace

Var block_forward(Var x, const ParamVars& p, const ModelConfig& c, std::size_t block, std::size_t images,
                  const ForwardOptions& opts, numkit::RngStream& rng, MoeRecord* record) {
  const std::string pre = block_prefix(block);
  {
    ComponentScope scope(Component::kAttention);
    Var h = numkit::layer_norm_rows(x, p(pre + "ln1/gamma"), p(pre + "ln1/beta"));
    Var qkv = numkit::add_bias(numkit::matmul_bt(h, p(pre + "attn/qkv/w")), p(pre + "attn/qkv/b"));
    Var a = numkit::attention(qkv, images, c.seq_len(), c.heads);
    x = numkit::add(x, numkit::add_bias(numkit::matmul_bt(a, p(pre + "attn/out/w")), p(pre + "attn/out/b")));
  }
  Var h = numkit::layer_norm_rows(x, p(pre + "ln2/gamma"), p(pre + "ln2/beta"));
  if (!c.is_moe(block)) {
    ComponentScope scope(Component::kDenseMlp);
    return numkit::add(x, moe::mlp_graph(h, mlp_vars(p, pre + "mlp/")));
  }
  moe::MoeLayerVars layer;
  layer.router_weight = p(pre + "moe/router/w");
  for (std::size_t e = 0; e < c.experts; ++e) layer.experts.push_back(mlp_vars(p, pre + "moe/expert" + std::to_string(e) + "/"));
  layer.k = c.k;
  layer.capacity_ratio = c.capacity;
  moe::MoeOptions mo;
  mo.mode = opts.mode;
  mo.allocation = opts.allocation;
  mo.order = opts.order_override.value_or(c.gate_order);
  mo.capacity_override = opts.capacity_override;
  mo.k_override = opts.k_override;
  mo.tokens_per_image = c.seq_len();
  mo.group_images = c.group_images;
  if (const auto it = opts.router_overrides.find(block); it != opts.router_overrides.end()) mo.router_override = it->second;
  moe::MoeGraphResult r = moe::moe_forward_graph(h, layer, mo, rng);
  if (record) {
    record->block = block;
    record->gates = r.gates;
    record->tables = std::move(r.tables);
    record->k = r.effective_k;
  }
  return numkit::add(x, r.output);
}

ForwardGraph forward_graph(const ModelConfig& c, const ParamVars& p, const Tensor& patches, std::size_t images,
                           const ForwardOptions& opts, numkit::RngStream& rng) {
  const std::size_t np = c.num_patches(), s = c.seq_len();
  if (patches.rank() != 2 || patches.rows() != images * np || patches.cols() != c.patch_dim()) {
    throw numkit::ShapeError("forward: patch matrix " + numkit::shape_string(patches.shape()) + " does not match " +
                             std::to_string(images) + " images of the configured size");
  }
  Graph& g = p("cls").graph();
  Var x;
  {
    ComponentScope scope(Component::kEmbedding);
    Var emb = numkit::add_bias(numkit::matmul_bt(g.constant(patches), p("embed/w")), p("embed/b"));
    // Row 0 of the stack is the class token; sequence n is [cls, patches of image n].
    const std::array<Var, 2> parts{p("cls"), emb};
    Var stacked = numkit::concat_rows(parts);
    std::vector<std::int64_t> seq_index(images * s), pos_index(images * s);
    for (std::size_t n = 0; n < images; ++n) {
      for (std::size_t t = 0; t < s; ++t) {
        seq_index[n * s + t] = t == 0 ? 0 : static_cast<std::int64_t>(1 + n * np + t - 1);
        pos_index[n * s + t] = static_cast<std::int64_t>(t);
      }
    }
    x = numkit::add(numkit::gather_rows(stacked, seq_index), numkit::gather_rows(p("pos"), pos_index));
  }
  ForwardGraph out;
  for (std::size_t b = 0; b < c.blocks; ++b) {
    MoeRecord rec;
    x = block_forward(x, p, c, b, images, opts, rng, c.is_moe(b) ? &rec : nullptr);
    if (c.is_moe(b)) out.moe.push_back(std::move(rec));
  }
  std::vector<std::int64_t> cls_rows(images);
  for (std::size_t n = 0; n < images; ++n) cls_rows[n] = static_cast<std::int64_t>(n * s);
  out.features = numkit::layer_norm_rows(numkit::gather_rows(x, cls_rows), p("final_ln/gamma"), p("final_ln/beta"));
  ComponentScope scope(Component::kHead);
  out.logits = numkit::add_bias(numkit::matmul_bt(out.features, p("head/w")), p("head/b"));
  return out;
}

namespace {

void append_rows(Tensor& dst, const Tensor& src) {
  if (dst.size() == 0) {
    dst = src;
    return;
  }
  std::vector<double> data(dst.data().begin(), dst.data().end());
  data.insert(data.end(), src.data().begin(), src.data().end());
  dst = Tensor({dst.rows() + src.rows(), dst.cols()}, std::move(data));
}

void append_selection(router::TopKSelection& dst, const router::TopKSelection& src) {
  if (dst.tokens == 0) {
    dst = src;
    return;
  }
  dst.tokens += src.tokens;
  dst.indices.insert(dst.indices.end(), src.indices.begin(), src.indices.end());
  dst.weights.insert(dst.weights.end(), src.weights.begin(), src.weights.end());
}

}  // namespace

EvalResult evaluate(const ModelConfig& c, const ParamStore& params, const Dataset& data, const ForwardOptions& opts,
                    std::uint64_t seed) {
  if (opts.mode != Mode::kEval) throw std::invalid_argument("evaluate runs in eval mode only");
  EvalResult result;
  const numkit::RngStream root = numkit::RngStream(seed).fork(7);
  for (std::size_t begin = 0, chunk = 0; begin < data.size(); begin += c.group_images, ++chunk) {
    const std::size_t end = std::min(data.size(), begin + c.group_images);
    std::vector<std::size_t> idx(end - begin);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = begin + i;
    Graph g;
    ParamVars p(g, params, false);
    numkit::RngStream rng = root.fork(chunk);
    const ForwardGraph f = forward_graph(c, p, patchify_batch(data, idx, c.patch), idx.size(), opts, rng);
    append_rows(result.logits, f.logits.value());
    append_rows(result.features, f.features.value());
    if (result.layers.empty()) result.layers.resize(f.moe.size());
    for (std::size_t l = 0; l < f.moe.size(); ++l) {
      LayerTrace& t = result.layers[l];
      t.block = f.moe[l].block;
      const router::GateMatrix& gm = f.moe[l].gates.values;
      append_rows(t.gates.probs, gm.probs);
      append_rows(t.gates.clean_logits, gm.clean_logits);
      append_rows(t.gates.noisy_logits, gm.noisy_logits);
      t.gates.noise_applied = gm.noise_applied;
      append_selection(t.selection, f.moe[l].gates.selection);
      t.tables.insert(t.tables.end(), f.moe[l].tables.begin(), f.moe[l].tables.end());
    }
  }
  const Tensor& logits = result.logits;
  for (std::size_t n = 0; n < logits.rows(); ++n) {
    const auto row = logits.row(n);
    result.predictions.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
  }
  return result;
}

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size() || labels.empty()) throw std::invalid_argument("accuracy: size mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predictions[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

double accuracy(const EvalResult& result, const Dataset& data) { return accuracy(result.predictions, data.labels); }

}  // namespace vmoe::model
