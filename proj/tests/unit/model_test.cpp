#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "vmoe/model/checkpoint.hpp"
#include "vmoe/model/data.hpp"
#include "vmoe/model/model.hpp"
#include "vmoe/model/probe.hpp"
#include "vmoe/model/train.hpp"
#include "vmoe/numkit/ops.hpp"

namespace vmoe::model {
namespace {

ModelConfig tiny_config(std::uint64_t seed = 1) {
  ModelConfig c;
  c.image_size = 8;
  c.patch = 4;
  c.dim = 8;
  c.blocks = 2;
  c.heads = 2;
  c.mlp_dim = 16;
  c.experts = 3;
  c.k = 2;
  c.classes = 4;
  c.group_images = 4;
  c.seed = seed;
  return c;
}

SyntheticSpec tiny_data_spec(const ModelConfig& c) {
  SyntheticSpec s;
  s.image_size = c.image_size;
  s.patch = c.patch;
  s.classes = c.classes;
  s.seed = 5;
  return s;
}

Tensor random_tensor(numkit::RngStream& rng, numkit::Shape shape, double std = 1.0) {
  return numkit::sample_gaussian(rng, std::move(shape), 0.0, std);
}

// ---------- patchify ----------

TEST(Patchify, FourByFourPatchTwo) {
  Tensor img({4, 4, 1});
  for (std::size_t i = 0; i < 16; ++i) img[i] = static_cast<double>(i);
  const Tensor p = patchify(img, 2);
  ASSERT_EQ(p.shape(), (numkit::Shape{4, 4}));
  // Top-left cell holds pixels (0,0),(0,1),(1,0),(1,1).
  EXPECT_EQ(p(0, 0), 0.0);
  EXPECT_EQ(p(0, 1), 1.0);
  EXPECT_EQ(p(0, 2), 4.0);
  EXPECT_EQ(p(0, 3), 5.0);
  EXPECT_EQ(p(1, 0), 2.0);
  EXPECT_EQ(p(2, 0), 8.0);
  EXPECT_EQ(p(3, 3), 15.0);
}

TEST(Patchify, WholeImageIsIdentityFlatten) {
  numkit::RngStream rng(3);
  const Tensor img = random_tensor(rng, {4, 4, 2});
  const Tensor p = patchify(img, 4);
  ASSERT_EQ(p.shape(), (numkit::Shape{1, 32}));
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_EQ(p[i], img[i]);
}

TEST(Patchify, RoundTrip) {
  numkit::RngStream rng(4);
  const Tensor img = random_tensor(rng, {8, 8, 3});
  EXPECT_EQ(unpatchify(patchify(img, 4), 8, 3, 4), img);
  EXPECT_EQ(unpatchify(patchify(img, 2), 8, 3, 2), img);
}

TEST(Patchify, IndivisibleThrows) {
  EXPECT_THROW(patchify(Tensor({6, 6, 1}), 4), numkit::ShapeError);
  EXPECT_THROW(patchify(Tensor({6, 4, 1}), 2), numkit::ShapeError);
  EXPECT_THROW(patchify(Tensor({4, 4, 1}), 0), numkit::ShapeError);
}

// ---------- config ----------

TEST(Config, Every2Placement) {
  ModelConfig c;
  c.blocks = 4;
  EXPECT_EQ(c.moe_blocks(), (std::vector<std::size_t>{1, 3}));
  c.blocks = 5;
  EXPECT_EQ(c.moe_blocks(), (std::vector<std::size_t>{1, 3}));
  c.blocks = 1;
  EXPECT_TRUE(c.moe_blocks().empty());
}

TEST(Config, LastNPlacementIsSubsetOfEvery2) {
  ModelConfig c;
  c.blocks = 8;
  c.placement = Placement::kLastN;
  c.last_n = 1;
  EXPECT_EQ(c.moe_blocks(), (std::vector<std::size_t>{7}));
  c.last_n = 2;
  EXPECT_EQ(c.moe_blocks(), (std::vector<std::size_t>{5, 7}));
  c.last_n = 4;
  EXPECT_EQ(c.moe_blocks(), (std::vector<std::size_t>{1, 3, 5, 7}));
  c.last_n = 5;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Config, NonePlacementIsDense) {
  ModelConfig c;
  c.placement = Placement::kNone;
  EXPECT_TRUE(c.moe_blocks().empty());
}

TEST(Config, ValidationErrors) {
  ModelConfig c;
  c.patch = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.k = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.capacity = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  TrainConfig t;
  t.lambda = -1.0;
  EXPECT_THROW(t.validate(), ConfigError);
}

// ---------- parameters ----------

TEST(Params, ClosedFormCountMatchesStore) {
  for (auto placement : {Placement::kEvery2, Placement::kLastN, Placement::kNone}) {
    ModelConfig c;
    c.placement = placement;
    c.last_n = 1;
    EXPECT_EQ(count_params(c), count_params(init_params(c)));
  }
}

TEST(Params, MoeExceedsDenseTwinByExpertsAndRouters) {
  for (std::size_t e : {2u, 4u, 8u}) {
    ModelConfig moe;
    moe.experts = e;
    ModelConfig dense = moe;
    dense.placement = Placement::kNone;
    const std::size_t per_expert = 2 * moe.dim * moe.mlp_dim + moe.mlp_dim + moe.dim;
    const std::size_t n_moe = moe.moe_blocks().size();
    EXPECT_EQ(count_params(init_params(moe)) - count_params(init_params(dense)),
              (e - 1) * per_expert * n_moe + e * moe.dim * n_moe);
  }
}

TEST(Params, InitIsSeedDeterministic) {
  EXPECT_EQ(init_params(tiny_config(3)), init_params(tiny_config(3)));
  EXPECT_NE(init_params(tiny_config(3)), init_params(tiny_config(4)));
}

// ---------- blocks ----------

struct BlockHarness {
  ModelConfig config;
  ParamStore params;
  Tensor x;
  std::size_t images = 2;
};

BlockHarness block_harness(ModelConfig c) {
  BlockHarness h{c, init_params(c), {}};
  numkit::RngStream rng(11);
  h.x = random_tensor(rng, {h.images * c.seq_len(), c.dim});
  return h;
}

Tensor run_block(const BlockHarness& h, std::size_t block, const ForwardOptions& opts = {}) {
  Graph g;
  ParamVars p(g, h.params, false);
  numkit::RngStream rng(0);
  return block_forward(g.constant(h.x), p, h.config, block, h.images, opts, rng, nullptr).value();
}

void zero(ParamStore& p, const std::string& name) { p[name] = Tensor(p.at(name).shape()); }

TEST(Block, ZeroOutputProjectionsMakeDenseBlockIdentity) {
  BlockHarness h = block_harness(tiny_config());
  zero(h.params, "block0/attn/out/w");
  zero(h.params, "block0/attn/out/b");
  zero(h.params, "block0/mlp/w2");
  zero(h.params, "block0/mlp/b2");
  EXPECT_EQ(run_block(h, 0), h.x);
}

TEST(Block, ZeroOutputProjectionsMakeMoeBlockIdentity) {
  BlockHarness h = block_harness(tiny_config());
  zero(h.params, "block1/attn/out/w");
  zero(h.params, "block1/attn/out/b");
  for (std::size_t e = 0; e < h.config.experts; ++e) {
    zero(h.params, "block1/moe/expert" + std::to_string(e) + "/w2");
    zero(h.params, "block1/moe/expert" + std::to_string(e) + "/b2");
  }
  EXPECT_EQ(run_block(h, 1), h.x);
}

TEST(Block, AllDroppedMoeBlockKeepsAttentionResidual) {
  BlockHarness h = block_harness(tiny_config());
  ForwardOptions starve;
  starve.capacity_override = 1e-9;  // B_e rounds to zero
  const Tensor dropped = run_block(h, 1, starve);

  // Same block with silent experts: output is x + attention exactly.
  BlockHarness silent = h;
  for (std::size_t e = 0; e < h.config.experts; ++e) {
    zero(silent.params, "block1/moe/expert" + std::to_string(e) + "/w2");
    zero(silent.params, "block1/moe/expert" + std::to_string(e) + "/b2");
  }
  EXPECT_EQ(dropped, run_block(silent, 1));
  EXPECT_NE(dropped, run_block(h, 1));
}

TEST(Block, DenseEqualsSingleExpertMoeWithCopiedWeights) {
  ModelConfig dense = tiny_config();
  dense.placement = Placement::kNone;
  ModelConfig moe = tiny_config();
  moe.experts = 1;
  moe.k = 1;
  moe.capacity = 1.0;  // B_e = T
  ParamStore pd = init_params(dense);
  ParamStore pm = init_params(moe);
  for (auto& [name, t] : pm) {
    const auto pos = name.find("moe/expert0/");
    if (name.find("moe/router") != std::string::npos) continue;
    const std::string src = pos == std::string::npos ? name : name.substr(0, pos) + "mlp/" + name.substr(pos + 12);
    t = pd.at(src);
  }
  numkit::RngStream rng(9);
  pd["head/w"] = random_tensor(rng, pd["head/w"].shape());
  pm["head/w"] = pd["head/w"];

  const Dataset data = make_synthetic(tiny_data_spec(dense), 8, 1);
  const EvalResult a = evaluate(dense, pd, data, {});
  const EvalResult b = evaluate(moe, pm, data, {});
  for (std::size_t i = 0; i < a.logits.size(); ++i) EXPECT_NEAR(a.logits[i], b.logits[i], 1e-12);
  for (std::size_t i = 0; i < a.features.size(); ++i) EXPECT_NEAR(a.features[i], b.features[i], 1e-12);
}

// ---------- forward ----------

TEST(Forward, BatchIndependenceUnderSlackCapacity) {
  const ModelConfig c = tiny_config();
  ParamStore p = init_params(c);
  numkit::RngStream rng(2);
  p["head/w"] = random_tensor(rng, p["head/w"].shape());
  const Dataset data = make_synthetic(tiny_data_spec(c), 2, 1);
  const std::size_t first[] = {0};
  ForwardOptions opts;
  opts.capacity_override = 10.0;
  const EvalResult one = evaluate(c, p, data.subset(first), opts);
  const EvalResult two = evaluate(c, p, data, opts);
  for (std::size_t j = 0; j < c.classes; ++j) EXPECT_NEAR(one.logits(0, j), two.logits(0, j), 1e-12);
}

TEST(Forward, EvalIsPure) {
  const ModelConfig c = tiny_config();
  const ParamStore p = init_params(c);
  const Dataset data = make_synthetic(tiny_data_spec(c), 10, 1);
  const EvalResult a = evaluate(c, p, data, {});
  const EvalResult b = evaluate(c, p, data, {});
  EXPECT_EQ(a.logits, b.logits);
  EXPECT_EQ(a.features, b.features);
  ASSERT_EQ(a.layers.size(), 1u);
  EXPECT_EQ(a.layers[0].tables, b.layers[0].tables);
}

TEST(Forward, TraceShapes) {
  const ModelConfig c = tiny_config();
  const Dataset data = make_synthetic(tiny_data_spec(c), 10, 1);
  const EvalResult r = evaluate(c, init_params(c), data, {});
  EXPECT_EQ(r.logits.shape(), (numkit::Shape{10, c.classes}));
  EXPECT_EQ(r.features.shape(), (numkit::Shape{10, c.dim}));
  ASSERT_EQ(r.layers.size(), 1u);
  EXPECT_EQ(r.layers[0].block, 1u);
  EXPECT_EQ(r.layers[0].gates.tokens(), 10 * c.seq_len());
  EXPECT_EQ(r.layers[0].tables.size(), 3u);  // groups of 4, 4, 2 images
  EXPECT_FALSE(r.layers[0].gates.noise_applied);
}

TEST(Forward, RejectsTrainMode) {
  const ModelConfig c = tiny_config();
  ForwardOptions opts;
  opts.mode = Mode::kTrain;
  EXPECT_THROW(evaluate(c, init_params(c), make_synthetic(tiny_data_spec(c), 2, 1), opts), std::invalid_argument);
}

TEST(Forward, UntrainedModelIsNearChance) {
  ModelConfig c = tiny_config();
  c.classes = 2;
  ParamStore p = init_params(c);
  numkit::RngStream rng(21);
  p["head/w"] = random_tensor(rng, p["head/w"].shape());
  SyntheticSpec s = tiny_data_spec(c);
  const Dataset data = make_synthetic(s, 400, 1);
  const double acc = accuracy(evaluate(c, p, data, {}), data);
  // 3-sigma binomial interval around 0.5 for n = 400.
  EXPECT_NEAR(acc, 0.5, 3.0 * std::sqrt(0.25 / 400.0));
}

// ---------- data ----------

TEST(Data, SyntheticIsDeterministicAndBalanced) {
  SyntheticSpec s;
  const Dataset a = make_synthetic(s, 64, 0);
  const Dataset b = make_synthetic(s, 64, 0);
  EXPECT_EQ(a.images, b.images);
  EXPECT_NE(a.images, make_synthetic(s, 64, 1).images);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.labels[i], static_cast<int>(i % s.classes));
    EXPECT_GE(a.key_positions[i], 0);
    EXPECT_LT(a.key_positions[i], 16);
  }
}

TEST(Data, KeyCellCarriesSignal) {
  SyntheticSpec s;
  s.noise = 0.0;
  s.distractor = 0.0;
  const Dataset d = make_synthetic(s, 16, 0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const Tensor p = patchify(d.image(i), s.patch);
    double ss = 0.0;
    for (double v : p.row(static_cast<std::size_t>(d.key_positions[i]))) ss += v * v;
    EXPECT_NEAR(std::sqrt(ss / static_cast<double>(p.cols())), s.signal, 1e-12);
  }
}

TEST(Data, PerClassIndices) {
  SyntheticSpec s;
  const Dataset d = make_synthetic(s, 40, 0);
  const auto idx = per_class_indices(d, 3);
  ASSERT_EQ(idx.size(), 24u);
  std::vector<int> count(s.classes, 0);
  for (std::size_t i : idx) ++count[static_cast<std::size_t>(d.labels[i])];
  for (int n : count) EXPECT_EQ(n, 3);
}

// ---------- training ----------

TrainConfig short_train(std::size_t steps) {
  TrainConfig t;
  t.steps = steps;
  t.batch_size = 8;
  t.log_every = 2;
  return t;
}

TEST(Train, ZeroLearningRateLeavesParamsUnchanged) {
  const ModelConfig c = tiny_config();
  TrainConfig t = short_train(4);
  t.learning_rate = 0.0;
  const Dataset data = make_synthetic(tiny_data_spec(c), 16, 0);
  EXPECT_EQ(train(c, t, data).params, init_params(c));
}

TEST(Train, ZeroLearningRateGivesFlatLossOnFixedBatch) {
  ModelConfig c = tiny_config();
  c.placement = Placement::kNone;  // no routing noise
  TrainConfig t = short_train(5);
  t.learning_rate = 0.0;
  const Dataset data = make_synthetic(tiny_data_spec(c), 1, 0);
  const TrainResult r = train(c, t, data);
  for (double l : r.step_loss) EXPECT_EQ(l, r.step_loss.front());
}

TEST(Train, FixedSeedGivesIdenticalMetricsCsv) {
  const ModelConfig c = tiny_config();
  const TrainConfig t = short_train(6);
  const Dataset data = make_synthetic(tiny_data_spec(c), 32, 0);
  std::ostringstream a, b;
  write_metrics_csv(a, train(c, t, data).metrics, c.moe_blocks());
  write_metrics_csv(b, train(c, t, data).metrics, c.moe_blocks());
  EXPECT_EQ(a.str(), b.str());
  std::ostringstream other;
  write_metrics_csv(other, train(tiny_config(2), t, data).metrics, c.moe_blocks());
  EXPECT_NE(a.str(), other.str());
}

TEST(Train, LossDecreases) {
  const ModelConfig c = tiny_config();
  TrainConfig t = short_train(60);
  t.learning_rate = 1e-2;
  SyntheticSpec s = tiny_data_spec(c);
  s.random_sign = false;
  s.noise = 0.3;
  const Dataset data = make_synthetic(s, 64, 0);
  const TrainResult r = train(c, t, data);
  double head = 0.0, tail = 0.0;
  for (std::size_t i = 0; i < 10; ++i) {
    head += r.step_loss[i];
    tail += r.step_loss[r.step_loss.size() - 1 - i];
  }
  EXPECT_LT(tail, head);
}

TEST(Train, MetricsRowsAndCsvColumns) {
  const ModelConfig c = tiny_config();
  const TrainConfig t = short_train(5);
  const TrainResult r = train(c, t, make_synthetic(tiny_data_spec(c), 16, 0));
  ASSERT_EQ(r.metrics.size(), 3u);  // steps 0, 2, 4
  EXPECT_EQ(r.metrics.back().step, 4u);
  EXPECT_EQ(r.step_loss.size(), 5u);
  EXPECT_EQ(r.expert_loads.size(), 3u * c.experts);
  for (const auto& m : r.metrics) {
    ASSERT_EQ(m.imp_cv2.size(), 1u);
    EXPECT_GE(m.imp_cv2[0], 0.0);
    EXPECT_GE(m.load_cv2[0], 0.0);
    EXPECT_NEAR(m.aux, 0.5 * m.imp_cv2[0] + 0.5 * m.load_cv2[0], 1e-12);
  }
  std::ostringstream os;
  write_metrics_csv(os, r.metrics, c.moe_blocks(), {"seed 1"});
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "# seed 1");
  std::getline(is, line);
  EXPECT_EQ(line, "step,task_loss,aux,imp_cv2_block1,load_cv2_block1,accuracy");
}

TEST(Train, NonFiniteInputRaisesDivergence) {
  const ModelConfig c = tiny_config();
  Dataset data = make_synthetic(tiny_data_spec(c), 4, 0);
  for (double& v : data.images.data()) v = std::nan("");
  EXPECT_THROW(train(c, short_train(2), data), DivergenceError);
}

TEST(Train, LabelOutOfRangeThrows) {
  const ModelConfig c = tiny_config();
  Dataset data = make_synthetic(tiny_data_spec(c), 4, 0);
  data.labels[0] = 7;
  EXPECT_THROW(train(c, short_train(2), data), std::invalid_argument);
}

TEST(Adam, LinearDecaySchedule) {
  TrainConfig t;
  t.steps = 10;
  t.learning_rate = 1.0;
  const Adam adam(t);
  EXPECT_EQ(adam.learning_rate(0), 1.0);
  EXPECT_NEAR(adam.learning_rate(5), 0.5, 1e-15);
  EXPECT_EQ(adam.learning_rate(10), 0.0);
}

TEST(Adam, FirstStepMovesBySignTimesLr) {
  TrainConfig t;
  t.learning_rate = 0.1;
  t.weight_decay = 0.0;
  t.steps = 100;
  Adam adam(t);
  ParamStore p{{"b", Tensor::vector({1.0, 1.0})}};
  adam.step(p, {{"b", Tensor::vector({3.0, -0.5})}}, 0);
  EXPECT_NEAR(p["b"][0], 0.9, 1e-6);
  EXPECT_NEAR(p["b"][1], 1.1, 1e-6);
}

TEST(Adam, WeightDecaySkipsVectorsAndEmbeddings) {
  TrainConfig t;
  t.learning_rate = 1.0;
  t.weight_decay = 0.5;
  t.steps = 100;
  Adam adam(t);
  ParamStore p{{"w", Tensor({1, 1}, 2.0)}, {"pos", Tensor({1, 1}, 2.0)}, {"b", Tensor({1}, 2.0)}};
  const std::map<std::string, Tensor> zero_grads{{"w", Tensor({1, 1})}, {"pos", Tensor({1, 1})}, {"b", Tensor({1})}};
  adam.step(p, zero_grads, 0);
  EXPECT_EQ(p["w"][0], 1.0);
  EXPECT_EQ(p["pos"][0], 2.0);
  EXPECT_EQ(p["b"][0], 2.0);
}

// ---------- checkpoint ----------

Checkpoint sample_checkpoint() {
  const ModelConfig c = tiny_config(7);
  const TrainResult r = train(c, short_train(3), make_synthetic(tiny_data_spec(c), 16, 0));
  return {c, r.params, r.data_rng, r.noise_rng};
}

std::string serialize(const Checkpoint& ck) {
  std::ostringstream os;
  write_checkpoint(os, ck);
  return os.str();
}

Checkpoint parse(const std::string& bytes) {
  std::istringstream is(bytes);
  return read_checkpoint(is);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const Checkpoint ck = sample_checkpoint();
  const std::string bytes = serialize(ck);
  EXPECT_EQ(bytes.substr(0, 4), "VMOE");
  const Checkpoint back = parse(bytes);
  EXPECT_EQ(back.params, ck.params);
  EXPECT_EQ(back.data_rng, ck.data_rng);
  EXPECT_EQ(back.noise_rng, ck.noise_rng);
  EXPECT_EQ(back.config.seed, ck.config.seed);
  EXPECT_EQ(back.config.capacity, ck.config.capacity);
  EXPECT_EQ(back.config.moe_blocks(), ck.config.moe_blocks());
  EXPECT_EQ(serialize(back), bytes);

  const Dataset data = make_synthetic(tiny_data_spec(ck.config), 12, 1);
  EXPECT_EQ(evaluate(back.config, back.params, data, {}).logits, evaluate(ck.config, ck.params, data, {}).logits);
}

TEST(Checkpoint, LargeSeedSurvives) {
  Checkpoint ck = sample_checkpoint();
  ck.config.seed = 0xfedcba9876543210ULL;
  ck.noise_rng.set_counter(0xffffffffffffffffULL);
  const Checkpoint back = parse(serialize(ck));
  EXPECT_EQ(back.config.seed, ck.config.seed);
  EXPECT_EQ(back.noise_rng, ck.noise_rng);
}

TEST(Checkpoint, CorruptionIsDetected) {
  const std::string good = serialize(sample_checkpoint());
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(parse(bad_magic), CheckpointError);

  std::string bad_version = good;
  bad_version[4] = 9;
  EXPECT_THROW(parse(bad_version), CheckpointError);

  EXPECT_THROW(parse(good.substr(0, good.size() - 3)), CheckpointError);
  EXPECT_THROW(parse(good.substr(0, 6)), CheckpointError);
  EXPECT_THROW(parse(good + "ab"), CheckpointError);
  EXPECT_THROW(parse(""), CheckpointError);
}

TEST(Checkpoint, ParamsMustMatchConfig) {
  Checkpoint ck = sample_checkpoint();
  ck.params["head/w"] = Tensor({1, 1});
  EXPECT_THROW(parse(serialize(ck)), CheckpointError);
  ck = sample_checkpoint();
  ck.params.erase("head/b");
  EXPECT_THROW(parse(serialize(ck)), CheckpointError);
  ck = sample_checkpoint();
  ck.params["extra"] = Tensor({1});
  EXPECT_THROW(parse(serialize(ck)), CheckpointError);
}

TEST(Checkpoint, MissingFile) { EXPECT_THROW(load_checkpoint("/nonexistent/ckpt.bin"), CheckpointError); }

// ---------- probe ----------

TEST(Probe, IdenticalQueryGetsSupportLabel) {
  const Tensor support = Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}});
  const std::vector<int> labels{0, 1, 2, 3};
  const Tensor query = Tensor::matrix({{0, 1, 0}, {1, 1, 0}});
  EXPECT_EQ(ridge_probe_predict(support, labels, query, 4, 1e-6), (std::vector<int>{1, 3}));
}

TEST(Probe, SingularSystemNeedsStabilizer) {
  // Duplicate columns make X^T X singular without a ridge term.
  const Tensor support = Tensor::matrix({{1, 1}, {2, 2}});
  EXPECT_THROW(ridge_probe_predict(support, {0, 1}, support, 2, 0.0), std::invalid_argument);
  EXPECT_NO_THROW(ridge_probe_predict(support, {0, 1}, support, 2, 1e-2));
}

TEST(Probe, BadInputs) {
  const Tensor s = Tensor::matrix({{1, 0}});
  EXPECT_THROW(ridge_probe_predict(s, {0, 1}, s, 2, 1e-2), std::invalid_argument);
  EXPECT_THROW(ridge_probe_predict(s, {5}, s, 2, 1e-2), std::invalid_argument);
  EXPECT_THROW(ridge_probe_predict(s, {0}, Tensor::matrix({{1, 0, 0}}), 2, 1e-2), numkit::ShapeError);
  const ModelConfig c = tiny_config();
  const Dataset d = make_synthetic(tiny_data_spec(c), 8, 0);
  EXPECT_THROW(linear_probe(c, init_params(c), d, d, 0), std::invalid_argument);
}

TEST(Probe, CountsSupportAndQueries) {
  const ModelConfig c = tiny_config();
  const Dataset pool = make_synthetic(tiny_data_spec(c), 40, 0);
  const Dataset queries = make_synthetic(tiny_data_spec(c), 20, 1);
  const ProbeResult r = linear_probe(c, init_params(c), pool, queries, 2);
  EXPECT_EQ(r.support, 2 * c.classes);
  EXPECT_EQ(r.queries, 20u);
  EXPECT_GE(r.accuracy, 0.0);
  EXPECT_LE(r.accuracy, 1.0);
}

}  // namespace
}  // namespace vmoe::model
