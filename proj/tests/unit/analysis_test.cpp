#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "vmoe/analysis/analysis.hpp"

namespace vmoe::analysis {
namespace {

ModelConfig small_config(std::size_t k = 2) {
  ModelConfig c;
  c.image_size = 8;
  c.patch = 4;
  c.dim = 8;
  c.heads = 2;
  c.mlp_dim = 16;
  c.experts = 4;
  c.k = k;
  c.classes = 4;
  c.group_images = 6;
  c.seed = 3;
  return c;
}

Dataset small_data(const ModelConfig& c, std::size_t n) {
  model::SyntheticSpec s;
  s.image_size = c.image_size;
  s.patch = c.patch;
  s.classes = c.classes;
  return model::make_synthetic(s, n, 1);
}

// Router weights scaled up so routing is far from uniform.
ParamStore sharp_params(const ModelConfig& c) {
  ParamStore p = model::init_params(c);
  for (std::size_t b : c.moe_blocks())
    for (double& v : p[model::block_prefix(b) + "moe/router/w"].data()) v *= 4.0;
  numkit::RngStream rng(8);
  p["head/w"] = numkit::sample_gaussian(rng, p["head/w"].shape(), 0.0, 1.0);
  return p;
}

TEST(Trace, RowCountAndFields) {
  const ModelConfig c = small_config();
  const Dataset d = small_data(c, 14);
  const RoutingTrace t = collect_traces(c, sharp_params(c), d);
  EXPECT_EQ(t.num_layers, 2u);
  EXPECT_EQ(t.k, 2u);
  EXPECT_EQ(t.blocks, (std::vector<std::size_t>{1, 3}));
  ASSERT_EQ(t.records.size(), 2 * 14 * c.seq_len());
  for (std::size_t i = 0; i < t.records.size(); ++i) {
    const auto& r = t.records[i];
    EXPECT_EQ(r.layer, i / (14 * c.seq_len()));
    EXPECT_EQ(r.image, (i / c.seq_len()) % 14);
    EXPECT_EQ(r.position, i % c.seq_len());
    EXPECT_EQ(r.label, d.labels[r.image]);
    ASSERT_EQ(r.experts.size(), 2u);
    EXPECT_GE(r.weights[0], r.weights[1]);
    EXPECT_NE(r.experts[0], r.experts[1]);
  }
}

TEST(Trace, TopTwoAbsentForKOne) {
  const ModelConfig c = small_config(1);
  const RoutingTrace t = collect_traces(c, sharp_params(c), small_data(c, 3));
  for (const auto& r : t.records) EXPECT_EQ(r.experts.size(), 1u);
  std::ostringstream os;
  write_trace_csv(os, t);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "layer,block,image,position,label,expert1,weight1,success1,expert2,weight2,success2");
  std::getline(is, line);
  EXPECT_EQ(line.substr(line.size() - 3), ",,,");
}

TEST(Trace, MatchesRecomputedGates) {
  const ModelConfig c = small_config();
  const ParamStore p = sharp_params(c);
  const Dataset d = small_data(c, 6);  // one group
  const RoutingTrace t = collect_traces(c, p, d);

  // Independent recomputation: rerun the graph and select from its gate matrix.
  numkit::Graph g;
  model::ParamVars pv(g, p, false);
  std::vector<std::size_t> idx{0, 1, 2, 3, 4, 5};
  numkit::RngStream rng(0);
  const auto f = model::forward_graph(c, pv, model::patchify_batch(d, idx, c.patch), 6, {}, rng);
  for (std::size_t l = 0; l < f.moe.size(); ++l) {
    const auto sel = router::top_k_select(f.moe[l].gates.values, 2);
    for (std::size_t tok = 0; tok < 6 * c.seq_len(); ++tok) {
      const auto& r = t.records[l * 6 * c.seq_len() + tok];
      for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(r.experts[i], sel.expert(tok, i));
        EXPECT_EQ(r.weights[i], sel.weight(tok, i));
        EXPECT_EQ(r.success[i], f.moe[l].tables[0].at(tok, i).success);
      }
    }
  }
}

TEST(Trace, Deterministic) {
  const ModelConfig c = small_config();
  const ParamStore p = sharp_params(c);
  const Dataset d = small_data(c, 9);
  std::ostringstream a, b;
  write_trace_csv(a, collect_traces(c, p, d));
  write_trace_csv(b, collect_traces(c, p, d));
  EXPECT_EQ(a.str(), b.str());
}

// ---------- specialization matrices ----------

RoutingTrace hand_trace(std::size_t experts, std::size_t k) {
  RoutingTrace t;
  t.num_layers = 1;
  t.num_experts = experts;
  t.k = k;
  t.seq_len = 2;
  t.blocks = {1};
  return t;
}

TEST(Specialization, SingleExpertWithFullWeight) {
  RoutingTrace t = hand_trace(3, 1);
  for (std::size_t img = 0; img < 4; ++img)
    for (std::size_t pos = 0; pos < 2; ++pos) t.records.push_back({0, 1, img, pos, static_cast<int>(img % 2), {2}, {1.0}, {true}});
  for (const auto& m : {class_expert_matrix(t, 0), position_expert_matrix(t, 0)}) {
    ASSERT_EQ(m.rows.size(), 2u);
    for (const auto& row : m.rows) EXPECT_EQ(row, (std::vector<double>{0.0, 0.0, 1.0}));
  }
}

TEST(Specialization, AbsentRowsAreOmitted) {
  RoutingTrace t = hand_trace(2, 1);
  t.records.push_back({0, 1, 0, 0, 5, {0}, {0.7}, {true}});
  t.records.push_back({0, 1, 0, 1, 5, {1}, {0.6}, {false}});
  t.records.push_back({0, 1, 1, 0, 2, {1}, {0.9}, {true}});
  const auto m = class_expert_matrix(t, 0);
  EXPECT_EQ(m.keys, (std::vector<int>{2, 5}));
  EXPECT_EQ(m.counts, (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(m.rows[0], (std::vector<double>{0.0, 0.9}));
  EXPECT_DOUBLE_EQ(m.rows[1][0], 0.35);
  EXPECT_DOUBLE_EQ(m.rows[1][1], 0.3);
}

TEST(Specialization, UnknownLayerThrows) {
  const RoutingTrace t = hand_trace(2, 1);
  EXPECT_THROW(class_expert_matrix(t, 1), std::out_of_range);
  EXPECT_THROW(position_expert_matrix(t, 3), std::out_of_range);
  EXPECT_THROW(experts_per_image(t, 1), std::out_of_range);
}

TEST(Specialization, RandomRouterIsUniformPerClass) {
  ModelConfig c = small_config();
  c.classes = 2;
  const Dataset d = small_data(c, 200);
  model::ForwardOptions opts;
  opts.k_override = c.experts;  // full softmax mass per token
  opts.capacity_override = 10.0;
  for (std::size_t b : c.moe_blocks()) opts.router_overrides[b] = moe::RouterOverride::kGaussian;
  const RoutingTrace t = collect_traces(c, model::init_params(c), d, opts);
  for (const auto& m : {class_expert_matrix(t, 0), position_expert_matrix(t, 1)}) {
    for (std::size_t r = 0; r < m.rows.size(); ++r) {
      double total = 0.0;
      for (double v : m.rows[r]) {
        total += v;
        // Softmax of 4 standard normals: per-entry std < 0.3; 5-sigma CLT band.
        EXPECT_NEAR(v, 0.25, 5.0 * 0.3 / std::sqrt(static_cast<double>(m.counts[r])));
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(Specialization, MatchesGroupByOracle) {
  const ModelConfig c = small_config();
  const RoutingTrace t = collect_traces(c, sharp_params(c), small_data(c, 30));
  for (std::size_t layer = 0; layer < 2; ++layer) {
    // Streaming aggregation keyed by (class, expert) from the flat CSV view.
    std::map<std::pair<int, int>, double> sum;
    std::map<int, double> count;
    for (const auto& r : t.records) {
      if (r.layer != layer) continue;
      count[r.label] += 1.0;
      for (std::size_t i = 0; i < r.experts.size(); ++i) sum[{r.label, r.experts[i]}] += r.weights[i];
    }
    const auto m = class_expert_matrix(t, layer);
    ASSERT_EQ(m.keys.size(), count.size());
    for (std::size_t row = 0; row < m.keys.size(); ++row) {
      for (int e = 0; e < 4; ++e) {
        const auto it = sum.find({m.keys[row], e});
        const double expect = it == sum.end() ? 0.0 : it->second / count[m.keys[row]];
        EXPECT_NEAR(m.rows[row][static_cast<std::size_t>(e)], expect, 1e-12);
        EXPECT_GE(m.rows[row][static_cast<std::size_t>(e)], 0.0);
        EXPECT_LE(m.rows[row][static_cast<std::size_t>(e)], 1.0);
      }
    }
  }
}

TEST(Specialization, MatrixCsv) {
  RoutingTrace t = hand_trace(2, 1);
  t.records.push_back({0, 1, 0, 1, 3, {1}, {0.5}, {true}});
  std::ostringstream os;
  write_matrix_csv(os, position_expert_matrix(t, 0), "position", {"seed 4"});
  EXPECT_EQ(os.str(), "# seed 4\nposition,count,expert0,expert1\n1,1,0,0.5\n");
}

// ---------- experts per image ----------

TEST(ExpertsPerImage, BoundsAndTotal) {
  const ModelConfig c = small_config();
  const RoutingTrace t = collect_traces(c, sharp_params(c), small_data(c, 25));
  for (std::size_t layer = 0; layer < 2; ++layer) {
    const auto h = experts_per_image(t, layer);
    ASSERT_EQ(h.size(), c.experts + 1);
    std::size_t total = 0;
    for (std::size_t v : h) total += v;
    EXPECT_EQ(total, 25u);
  }
}

TEST(ExpertsPerImage, PigeonholeForFewTokens) {
  RoutingTrace t = hand_trace(8, 1);
  for (std::size_t pos = 0; pos < 2; ++pos) t.records.push_back({0, 1, 0, pos, 0, {static_cast<int>(pos)}, {1.0}, {true}});
  const auto h = experts_per_image(t, 0);
  EXPECT_EQ(h[2], 1u);
  for (std::size_t n = 3; n < h.size(); ++n) EXPECT_EQ(h[n], 0u);
}

TEST(ExpertsPerImage, SingleExpertCollapse) {
  ModelConfig c = small_config(1);
  c.experts = 1;
  const RoutingTrace t = collect_traces(c, model::init_params(c), small_data(c, 10));
  const auto h = experts_per_image(t, 0);
  EXPECT_EQ(h, (std::vector<std::size_t>{0, 10}));
}

TEST(ExpertsPerImage, FailedAssignmentsDoNotCount) {
  RoutingTrace t = hand_trace(3, 1);
  t.records.push_back({0, 1, 0, 0, 0, {0}, {1.0}, {false}});
  t.records.push_back({0, 1, 0, 1, 0, {1}, {1.0}, {true}});
  EXPECT_EQ(experts_per_image(t, 0), (std::vector<std::size_t>{0, 1, 0, 0}));
}

TEST(ExpertsPerImage, Json) {
  EXPECT_EQ(histogram_json({0, 3, 2}, 1).dump(), R"({"layer":1,"experts_per_image":[0,3,2],"images":5})");
}

// ---------- ablations ----------

TEST(Ablation, EmptyScopeIsBaseline) {
  const ModelConfig c = small_config();
  const ParamStore p = sharp_params(c);
  const Dataset d = small_data(c, 40);
  EXPECT_EQ(ablated_accuracy(c, p, d, {}, moe::RouterOverride::kGaussian, 1),
            model::accuracy(model::evaluate(c, p, d, {}), d));
}

TEST(Ablation, ScopesAndRange) {
  const ModelConfig c = small_config();
  const ParamStore p = sharp_params(c);
  const Dataset d = small_data(c, 12);
  const auto cumulative = random_router_sweep(c, p, d, AblationScope::kCumulative, 1);
  ASSERT_EQ(cumulative.size(), 2u);
  EXPECT_EQ(cumulative[1].replaced, (std::vector<std::size_t>{0, 1}));
  const auto single = random_router_sweep(c, p, d, AblationScope::kSingle, 1);
  EXPECT_EQ(single[1].replaced, (std::vector<std::size_t>{1}));
  // The last cumulative point and a direct evaluation with both layers replaced agree.
  EXPECT_EQ(cumulative[1].accuracy, ablated_accuracy(c, p, d, {0, 1}, moe::RouterOverride::kGaussian, 1));
  EXPECT_THROW(random_router_ablation(c, p, d, AblationScope::kSingle, 2, 1), std::out_of_range);
  EXPECT_THROW(ablated_accuracy(c, p, d, {5}, moe::RouterOverride::kGaussian, 1), std::out_of_range);
}

TEST(Ablation, RandomRouterChangesRouting) {
  const ModelConfig c = small_config();
  const ParamStore p = sharp_params(c);
  const Dataset d = small_data(c, 12);
  model::ForwardOptions opts;
  opts.router_overrides[1] = moe::RouterOverride::kGaussian;
  const auto base = collect_traces(c, p, d);
  const auto ablated = collect_traces(c, p, d, opts);
  std::size_t differ = 0, same_layer1 = 0;
  for (std::size_t i = 0; i < base.records.size(); ++i) {
    if (base.records[i].layer == 0) differ += base.records[i].experts != ablated.records[i].experts;
    else same_layer1 += base.records[i].experts == ablated.records[i].experts;
  }
  EXPECT_GT(differ, base.records.size() / 4);
  EXPECT_LT(same_layer1, base.records.size() / 2);
}

// ---------- vary k ----------

TEST(VaryK, NativeKIsBitIdenticalToEval) {
  const ModelConfig c = small_config();
  const ParamStore p = sharp_params(c);
  const Dataset d = small_data(c, 20);
  model::ForwardOptions o;
  o.k_override = c.k;
  EXPECT_EQ(model::evaluate(c, p, d, o).logits, model::evaluate(c, p, d, {}).logits);
  const auto pts = vary_k_eval(c, p, d, {2});
  ASSERT_EQ(pts.size(), 1u);
  EXPECT_EQ(pts[0].accuracy, model::accuracy(model::evaluate(c, p, d, {}), d));
}

TEST(VaryK, FullKIsFiniteAndRangeChecked) {
  const ModelConfig c = small_config();
  const ParamStore p = sharp_params(c);
  const Dataset d = small_data(c, 10);
  const auto pts = vary_k_eval(c, p, d, {1, 2, 3, 4});
  ASSERT_EQ(pts.size(), 4u);
  for (const auto& pt : pts) EXPECT_TRUE(pt.finite);
  EXPECT_THROW(vary_k_eval(c, p, d, {0}), std::out_of_range);
  EXPECT_THROW(vary_k_eval(c, p, d, {5}), std::out_of_range);
}

}  // namespace
}  // namespace vmoe::analysis
