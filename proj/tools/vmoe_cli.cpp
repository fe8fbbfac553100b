#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "experiment_config.hpp"
#include "vmoe/analysis/analysis.hpp"
#include "vmoe/analysis/metering.hpp"
#include "vmoe/model/checkpoint.hpp"
#include "vmoe/model/probe.hpp"
#include "vmoe/model/train.hpp"

namespace fs = std::filesystem;
using namespace vmoe;
using nlohmann::ordered_json;

namespace {

constexpr int kExitError = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string checkpoint;
};

struct Context {
  std::string command;
  cli::ExperimentConfig config;
  std::string hash;
  // Files are collected in memory and written only once the command succeeded.
  std::map<std::string, std::string> files;

  std::vector<std::string> header() const {
    return {"vmoe " + command, "config_hash " + hash, "seed " + std::to_string(config.seed)};
  }
  ordered_json json_header() const {
    return {{"command", command}, {"config_hash", hash}, {"seed", config.seed}};
  }
  void add_json(const std::string& name, ordered_json body) {
    ordered_json j;
    j["header"] = json_header();
    for (auto& [k, v] : body.items()) j[k] = v;
    files[name] = j.dump(2) + "\n";
  }
};

Context make_context(const std::string& command, const Flags& f, bool config_required) {
  if (config_required && f.config.empty()) throw ConfigError(command + " needs --config");
  Context ctx;
  ctx.command = command;
  ctx.config = f.config.empty() ? cli::ExperimentConfig{} : cli::load_config(f.config);
  if (f.seed) ctx.config.seed = *f.seed;
  if (!f.out.empty()) ctx.config.out = f.out;
  ctx.config.finalize();
  ctx.config.validate();
  ctx.hash = cli::config_hash(ctx.config);
  return ctx;
}

void flush(const Context& ctx) {
  const fs::path dir(ctx.config.out);
  fs::create_directories(dir);
  for (const auto& [name, body] : ctx.files) {
    const fs::path tmp = dir / (name + ".tmp");
    {
      std::ofstream os(tmp, std::ios::binary);
      os << body;
      if (!os) throw std::runtime_error("failed to write " + tmp.string());
    }
    fs::rename(tmp, dir / name);
    std::cerr << "wrote " << (dir / name).string() << '\n';
  }
}

model::SyntheticData make_data(const cli::ExperimentConfig& c, const model::ModelConfig& m) {
  model::SyntheticSpec spec = c.data;
  spec.image_size = m.image_size;
  spec.channels = m.channels;
  spec.patch = m.patch;
  spec.classes = m.classes;
  return model::make_synthetic_split(spec, c.train_images, c.test_images);
}

model::Checkpoint require_checkpoint(const Flags& f) {
  if (f.checkpoint.empty()) throw ConfigError("this command needs --checkpoint");
  return model::load_checkpoint(f.checkpoint);
}

model::ForwardOptions eval_options(const cli::ExperimentConfig& c) {
  model::ForwardOptions o;
  o.allocation.algorithm = c.train.algorithm;
  o.allocation.priority = c.train.priority;
  o.allocation.keep_fraction = c.keep_fraction;
  return o;
}

std::string csv(const std::vector<std::string>& header, const std::string& body) {
  std::ostringstream os;
  for (const auto& line : header) os << "# " << line << '\n';
  os << body;
  return os.str();
}

void cmd_train(const Flags& f) {
  Context ctx = make_context("train", f, true);
  const auto& c = ctx.config;
  const auto data = make_data(c, c.model);
  const model::TrainResult r = model::train(c.model, c.train, data.train, [](const model::MetricRow& m) {
    std::fprintf(stderr, "step %zu task_loss %.4f aux %.4f batch_acc %.3f\n", m.step, m.task_loss, m.aux, m.accuracy);
  });
  const double test_acc = model::accuracy(model::evaluate(c.model, r.params, data.test, eval_options(c)), data.test);

  std::ostringstream metrics, loads, ckpt;
  model::write_metrics_csv(metrics, r.metrics, c.model.moe_blocks(), ctx.header());
  model::write_expert_loads_csv(loads, r.expert_loads, ctx.header());
  model::write_checkpoint(ckpt, {c.model, r.params, r.data_rng, r.noise_rng});
  ctx.files["metrics.csv"] = metrics.str();
  ctx.files["expert_loads.csv"] = loads.str();
  ctx.files["checkpoint.vmoe"] = ckpt.str();
  ctx.files["config.json"] = cli::to_json(c).dump(2) + "\n";
  ctx.add_json("summary.json", {{"test_accuracy", test_acc},
                                {"steps", c.train.steps},
                                {"final_task_loss", r.step_loss.back()},
                                {"parameters", model::count_params(r.params)}});
  flush(ctx);
  std::printf("test accuracy %.4f\n", test_acc);
}

void cmd_eval(const Flags& f) {
  Context ctx = make_context("eval", f, false);
  const model::Checkpoint ck = require_checkpoint(f);
  const auto data = make_data(ctx.config, ck.config);
  const auto opts = eval_options(ctx.config);
  const model::EvalResult r = model::evaluate(ck.config, ck.params, data.test, opts);
  const double acc = model::accuracy(r, data.test);
  const auto probe = model::linear_probe(ck.config, ck.params, data.train, data.test, ctx.config.probe_shots);
  ctx.add_json("eval.json", {{"test_accuracy", acc},
                             {"images", data.test.size()},
                             {"probe_shots", ctx.config.probe_shots},
                             {"probe_accuracy", probe.accuracy},
                             {"flops", metering::to_json(metering::flops_analytic(ck.config, data.test.size()))}});
  flush(ctx);
  std::printf("test accuracy %.4f, %zu-shot probe %.4f\n", acc, ctx.config.probe_shots, probe.accuracy);
}

void cmd_sweep_capacity(const Flags& f) {
  Context ctx = make_context("sweep-capacity", f, false);
  const model::Checkpoint ck = require_checkpoint(f);
  const auto data = make_data(ctx.config, ck.config);
  std::vector<std::size_t> ks = ctx.config.sweep_k;
  if (ks.empty()) ks.push_back(ck.config.k);
  for (std::size_t k : ks)
    if (k < 1 || k > ck.config.experts) throw ConfigError("sweep_k entry outside [1, experts] of the checkpoint");
  std::ostringstream os;
  os << std::setprecision(17) << "algorithm,capacity,k,accuracy,flops\n";
  for (const auto& algo : ctx.config.sweep_algorithms) {
    for (std::size_t k : ks) {
      for (double cap : ctx.config.sweep_capacities) {
        model::ForwardOptions o = eval_options(ctx.config);
        o.allocation.algorithm = parse_algorithm(algo);
        o.capacity_override = cap;
        o.k_override = k;
        const double acc = model::accuracy(model::evaluate(ck.config, ck.params, data.test, o), data.test);
        const auto flops = metering::flops_analytic(ck.config, data.test.size(), cap, k).total_flops();
        os << algo << ',' << std::setprecision(6) << cap << std::setprecision(17) << ',' << k << ',' << acc << ',' << flops
           << '\n';
      }
    }
  }
  ctx.files["sweep_capacity.csv"] = csv(ctx.header(), os.str());
  flush(ctx);
}

void cmd_ablate(const Flags& f) {
  Context ctx = make_context("ablate", f, false);
  const auto& c = ctx.config;
  std::ostringstream os;
  os << std::setprecision(17);
  if (c.ablate_mode == "routing_order") {
    const auto data = make_data(c, c.model);
    os << "gate_order,test_accuracy,final_task_loss\n";
    for (GateOrder order : {GateOrder::kTopKOfSoftmax, GateOrder::kSoftmaxOfTopK}) {
      model::ModelConfig m = c.model;
      m.gate_order = order;
      const auto r = model::train(m, c.train, data.train);
      const double acc = model::accuracy(model::evaluate(m, r.params, data.test, eval_options(c)), data.test);
      os << to_string(order) << ',' << acc << ',' << r.step_loss.back() << '\n';
    }
  } else {
    const model::Checkpoint ck = require_checkpoint(f);
    const auto data = make_data(c, ck.config);
    if (c.ablate_mode == "vary_k") {
      os << "k,accuracy,finite\n";
      for (const auto& p : analysis::vary_k_eval(ck.config, ck.params, data.test, c.vary_k, eval_options(c)))
        os << p.k << ',' << p.accuracy << ',' << (p.finite ? 1 : 0) << '\n';
    } else {
      const auto blocks = ck.config.moe_blocks();
      os << "scope,layer,block,replaced,accuracy\n";
      os << "none,,,0," << analysis::ablated_accuracy(ck.config, ck.params, data.test, {}, moe::RouterOverride::kGaussian,
                                                       c.seed, eval_options(c))
         << '\n';
      for (auto scope : {analysis::AblationScope::kSingle, analysis::AblationScope::kCumulative}) {
        for (const auto& p : analysis::random_router_sweep(ck.config, ck.params, data.test, scope, c.seed,
                                                           moe::RouterOverride::kGaussian, eval_options(c))) {
          os << (scope == analysis::AblationScope::kSingle ? "single" : "cumulative") << ',' << p.layer << ','
             << blocks[p.layer] << ',' << p.replaced.size() << ',' << p.accuracy << '\n';
        }
      }
    }
  }
  ctx.files["ablate_" + c.ablate_mode + ".csv"] = csv(ctx.header(), os.str());
  flush(ctx);
}

void cmd_analyze(const Flags& f) {
  Context ctx = make_context("analyze", f, false);
  const model::Checkpoint ck = require_checkpoint(f);
  const auto data = make_data(ctx.config, ck.config);
  const auto opts = eval_options(ctx.config);
  const analysis::RoutingTrace trace = analysis::collect_traces(ck.config, ck.params, data.test, opts);
  std::ostringstream tr;
  analysis::write_trace_csv(tr, trace, ctx.header());
  ctx.files["trace.csv"] = tr.str();

  // One device per expert; images dealt round-robin over the same devices.
  const model::EvalResult ev = model::evaluate(ck.config, ck.params, data.test, opts);
  std::vector<int> expert_dev(ck.config.experts), token_dev(data.test.size() * ck.config.seq_len());
  for (std::size_t e = 0; e < expert_dev.size(); ++e) expert_dev[e] = static_cast<int>(e);
  for (std::size_t t = 0; t < token_dev.size(); ++t)
    token_dev[t] = static_cast<int>((t / ck.config.seq_len()) % ck.config.experts);

  ordered_json hist = ordered_json::array(), comm = ordered_json::array();
  for (std::size_t l = 0; l < trace.num_layers; ++l) {
    std::ostringstream cm, pm;
    analysis::write_matrix_csv(cm, analysis::class_expert_matrix(trace, l), "class", ctx.header());
    analysis::write_matrix_csv(pm, analysis::position_expert_matrix(trace, l), "position", ctx.header());
    ctx.files["class_matrix_layer" + std::to_string(l) + ".csv"] = cm.str();
    ctx.files["position_matrix_layer" + std::to_string(l) + ".csv"] = pm.str();
    hist.push_back(analysis::histogram_json(analysis::experts_per_image(trace, l), l));
    auto c = metering::to_json(metering::comm_volume(ev.layers[l].tables, expert_dev, token_dev));
    c["layer"] = l;
    comm.push_back(c);
  }
  ctx.add_json("experts_per_image.json", {{"layers", hist}});
  ctx.add_json("comm.json", {{"devices", ck.config.experts}, {"layers", comm}});
  flush(ctx);
}

void cmd_flops(const Flags& f) {
  Context ctx = make_context("flops", f, false);
  model::ModelConfig m = ctx.config.model;
  if (!f.checkpoint.empty()) m = model::load_checkpoint(f.checkpoint).config;
  const std::size_t n = m.group_images;
  const auto analytic = metering::flops_analytic(m, n);
  model::SyntheticSpec spec = ctx.config.data;
  spec.image_size = m.image_size;
  spec.channels = m.channels;
  spec.patch = m.patch;
  spec.classes = m.classes;
  const auto counted = metering::flops_counted(m, model::init_params(m), model::make_synthetic(spec, n, 1));
  ctx.add_json("flops.json", {{"capacity", m.capacity},
                              {"k", m.k},
                              {"analytic", metering::to_json(analytic)},
                              {"counted", metering::to_json(counted)},
                              {"counted_equals_analytic", counted == analytic}});
  flush(ctx);
  std::printf("%llu FLOPs per group of %zu images (%s)\n", static_cast<unsigned long long>(analytic.total_flops()), n,
              metering::kFlopConvention);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vision mixture-of-experts toy experiments"};
  app.require_subcommand(1);
  Flags flags;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", flags.config, "Flat JSON experiment config");
    sub->add_option("--seed", flags.seed, "Overrides the config seed");
    sub->add_option("--out", flags.out, "Output directory");
    sub->add_option("--checkpoint", flags.checkpoint, "Checkpoint file");
  };
  struct Command {
    const char* name;
    const char* help;
    void (*fn)(const Flags&);
  };
  const Command commands[] = {
      {"train", "Train a model; writes metrics, expert loads and a checkpoint", cmd_train},
      {"eval", "Test accuracy, linear probe and FLOPs of a checkpoint", cmd_eval},
      {"sweep-capacity", "Accuracy and FLOPs over capacity ratios and algorithms", cmd_sweep_capacity},
      {"ablate", "vary_k, random_router or routing_order ablation", cmd_ablate},
      {"analyze", "Routing traces, specialization matrices, expert counts, comm volume", cmd_analyze},
      {"flops", "Analytic vs counted FLOPs by component", cmd_flops}};
  std::map<CLI::App*, void (*)(const Flags&)> handlers;
  for (const auto& [name, help, fn] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    add_common(sub);
    handlers[sub] = fn;
  }
  CLI11_PARSE(app, argc, argv);

  try {
    for (const auto& [sub, fn] : handlers)
      if (sub->parsed()) fn(flags);
  } catch (const model::DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return 0;
}
