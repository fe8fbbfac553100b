#include "experiment_config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>

namespace vmoe::cli {

using nlohmann::json;

std::string placement_name(model::Placement p) {
  switch (p) {
    case model::Placement::kEvery2: return "every_2";
    case model::Placement::kLastN: return "last_n";
    case model::Placement::kNone: return "none";
  }
  return "unknown";
}

model::Placement parse_placement(const std::string& s) {
  if (s == "every_2") return model::Placement::kEvery2;
  if (s == "last_n") return model::Placement::kLastN;
  if (s == "none") return model::Placement::kNone;
  throw ConfigError("unknown placement '" + s + "'");
}

namespace {

template <typename T>
T get_as(const json& v, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
        throw ConfigError("");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError("");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError("");
    }
    return v.get<T>();
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type (" + v.dump() + ")");
  }
}

template <typename T>
std::vector<T> get_list(const json& v, const std::string& key) {
  if (!v.is_array()) throw ConfigError("config key '" + key + "' must be a list");
  std::vector<T> out;
  for (const auto& e : v) out.push_back(get_as<T>(e, key));
  return out;
}

using Setter = std::function<void(ExperimentConfig&, const json&, const std::string&)>;

template <typename T, typename F>
Setter field(F ptr) {
  return [ptr](ExperimentConfig& c, const json& v, const std::string& key) { ptr(c) = get_as<T>(v, key); };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"image_size", field<std::size_t>([](ExperimentConfig& c) -> auto& { return c.model.image_size; })},
      {"channels", field<std::size_t>([](ExperimentConfig& c) -> auto& { return c.model.channels; })},
      {"patch", field<std::size_t>([](ExperimentConfig& c) -> auto& { return c.model.patch; })},
      {"dim", field<std::size_t>([](ExperimentConfig& c) -> auto& { return c.model.dim; })},
      {"blocks", field<std::size_t>([](ExperimentConfig& c) -> auto& { return c.model.blocks; })},
      {"heads", field<std::size_t>([](ExperimentConfig& c) -> auto& { return c.model.heads; })},
      {"mlp_dim", field<std::size_t>([](ExperimentConfig& c) -> auto& { return c.model.mlp_dim; })},
      {"experts", field<std::size_t>([](ExperimentConfig& c) -> auto& { return c.model.experts; })},
      {"k", field<std::size_t>([](ExperimentConfig& c) -> auto& { return c.model.k; })},
      {"capacity", field<double>([](ExperimentConfig& c) -> auto& { return c.model.capacity; })},
      {"placement", [](ExperimentConfig& c, const json& v, const std::string& k) {
         c.model.placement = parse_placement(get_as<std::string>(v, k));
       }},
      {"last_n", field<std::size_t>([](ExperimentConfig& c) -> auto& { return c.model.last_n; })},
      {"classes", field<std::size_t>([](ExperimentConfig& c) -> auto& { return c.model.classes; })},
      {"gate_order", [](ExperimentConfig& c, const json& v, const std::string& k) {
         c.model.gate_order = parse_gate_order(get_as<std::string>(v, k));
       }},
      {"group_images", field<std::size_t>([](ExperimentConfig& c) -> auto& { return c.model.group_images; })},
      {"learning_rate", field<double>([](ExperimentConfig& c) -> auto& { return c.train.learning_rate; })},
      {"weight_decay", field<double>([](ExperimentConfig& c) -> auto& { return c.train.weight_decay; })},
      {"beta1", field<double>([](ExperimentConfig& c) -> auto& { return c.train.beta1; })},
      {"beta2", field<double>([](ExperimentConfig& c) -> auto& { return c.train.beta2; })},
      {"adam_eps", field<double>([](ExperimentConfig& c) -> auto& { return c.train.adam_eps; })},
      {"batch_size", field<std::size_t>([](ExperimentConfig& c) -> auto& { return c.train.batch_size; })},
      {"steps", field<std::size_t>([](ExperimentConfig& c) -> auto& { return c.train.steps; })},
      {"lambda", field<double>([](ExperimentConfig& c) -> auto& { return c.train.lambda; })},
      {"algorithm", [](ExperimentConfig& c, const json& v, const std::string& k) {
         c.train.algorithm = parse_algorithm(get_as<std::string>(v, k));
       }},
      {"priority", [](ExperimentConfig& c, const json& v, const std::string& k) {
         c.train.priority = parse_priority_mode(get_as<std::string>(v, k));
       }},
      {"log_every", field<std::size_t>([](ExperimentConfig& c) -> auto& { return c.train.log_every; })},
      {"keep_fraction", field<double>([](ExperimentConfig& c) -> auto& { return c.keep_fraction; })},
      {"data_keys", field<std::size_t>([](ExperimentConfig& c) -> auto& { return c.data.keys; })},
      {"data_signal", field<double>([](ExperimentConfig& c) -> auto& { return c.data.signal; })},
      {"data_distractor", field<double>([](ExperimentConfig& c) -> auto& { return c.data.distractor; })},
      {"data_noise", field<double>([](ExperimentConfig& c) -> auto& { return c.data.noise; })},
      {"data_random_sign", field<bool>([](ExperimentConfig& c) -> auto& { return c.data.random_sign; })},
      {"data_seed", field<std::uint64_t>([](ExperimentConfig& c) -> auto& { return c.data.seed; })},
      {"train_images", field<std::size_t>([](ExperimentConfig& c) -> auto& { return c.train_images; })},
      {"test_images", field<std::size_t>([](ExperimentConfig& c) -> auto& { return c.test_images; })},
      {"seed", field<std::uint64_t>([](ExperimentConfig& c) -> auto& { return c.seed; })},
      {"out", field<std::string>([](ExperimentConfig& c) -> auto& { return c.out; })},
      {"sweep_capacities", [](ExperimentConfig& c, const json& v, const std::string& k) {
         c.sweep_capacities = get_list<double>(v, k);
       }},
      {"sweep_algorithms", [](ExperimentConfig& c, const json& v, const std::string& k) {
         c.sweep_algorithms = get_list<std::string>(v, k);
       }},
      {"sweep_k", [](ExperimentConfig& c, const json& v, const std::string& k) {
         c.sweep_k = get_list<std::size_t>(v, k);
       }},
      {"vary_k", [](ExperimentConfig& c, const json& v, const std::string& k) {
         c.vary_k = get_list<std::size_t>(v, k);
       }},
      {"ablate_mode", field<std::string>([](ExperimentConfig& c) -> auto& { return c.ablate_mode; })},
      {"probe_shots", field<std::size_t>([](ExperimentConfig& c) -> auto& { return c.probe_shots; })},
  };
  return table;
}

}  // namespace

void ExperimentConfig::finalize() {
  model.seed = seed;
  data.image_size = model.image_size;
  data.channels = model.channels;
  data.patch = model.patch;
  data.classes = model.classes;
}

void ExperimentConfig::validate() const {
  model.validate();
  train.validate();
  if (train_images == 0 || test_images == 0) throw ConfigError("train_images and test_images must be positive");
  if (!(keep_fraction >= 0.0 && keep_fraction <= 1.0)) throw ConfigError("keep_fraction must lie in [0, 1]");
  if (data.keys == 0 || data.keys + 1 > model.num_patches()) throw ConfigError("data_keys must lie in [1, patches - 1]");
  if (!(data.noise >= 0.0)) throw ConfigError("data_noise must be non-negative");
  for (double c : sweep_capacities)
    if (!(c > 0.0)) throw ConfigError("sweep_capacities entries must be positive");
  for (const auto& a : sweep_algorithms) parse_algorithm(a);
  for (std::size_t k : sweep_k)
    if (k < 1 || k > model.experts) throw ConfigError("sweep_k entries must lie in [1, experts]");
  for (std::size_t k : vary_k)
    if (k < 1 || k > model.experts) throw ConfigError("vary_k entries must lie in [1, experts]");
  if (ablate_mode != "routing_order" && ablate_mode != "random_router" && ablate_mode != "vary_k") {
    throw ConfigError("ablate_mode must be routing_order, random_router or vary_k");
  }
  if (probe_shots == 0) throw ConfigError("probe_shots must be positive");
}

ExperimentConfig parse_config(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig c;
  const auto& table = setters();
  for (const auto& [key, value] : j.items()) {
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(c, value, key);
  }
  c.finalize();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file '" + path + "'");
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

nlohmann::ordered_json to_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  j["image_size"] = c.model.image_size;
  j["channels"] = c.model.channels;
  j["patch"] = c.model.patch;
  j["dim"] = c.model.dim;
  j["blocks"] = c.model.blocks;
  j["heads"] = c.model.heads;
  j["mlp_dim"] = c.model.mlp_dim;
  j["experts"] = c.model.experts;
  j["k"] = c.model.k;
  j["capacity"] = c.model.capacity;
  j["placement"] = placement_name(c.model.placement);
  j["last_n"] = c.model.last_n;
  j["classes"] = c.model.classes;
  j["gate_order"] = std::string(to_string(c.model.gate_order));
  j["group_images"] = c.model.group_images;
  j["learning_rate"] = c.train.learning_rate;
  j["weight_decay"] = c.train.weight_decay;
  j["beta1"] = c.train.beta1;
  j["beta2"] = c.train.beta2;
  j["adam_eps"] = c.train.adam_eps;
  j["batch_size"] = c.train.batch_size;
  j["steps"] = c.train.steps;
  j["lambda"] = c.train.lambda;
  j["algorithm"] = std::string(to_string(c.train.algorithm));
  j["priority"] = std::string(to_string(c.train.priority));
  j["log_every"] = c.train.log_every;
  j["keep_fraction"] = c.keep_fraction;
  j["data_keys"] = c.data.keys;
  j["data_signal"] = c.data.signal;
  j["data_distractor"] = c.data.distractor;
  j["data_noise"] = c.data.noise;
  j["data_random_sign"] = c.data.random_sign;
  j["data_seed"] = c.data.seed;
  j["train_images"] = c.train_images;
  j["test_images"] = c.test_images;
  j["seed"] = c.seed;
  j["out"] = c.out;
  j["sweep_capacities"] = c.sweep_capacities;
  j["sweep_algorithms"] = c.sweep_algorithms;
  j["sweep_k"] = c.sweep_k;
  j["vary_k"] = c.vary_k;
  j["ablate_mode"] = c.ablate_mode;
  j["probe_shots"] = c.probe_shots;
  return j;
}

std::string config_hash(const ExperimentConfig& c) {
  // The output directory does not change results.
  auto j = to_json(c);
  j.erase("out");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace vmoe::cli
