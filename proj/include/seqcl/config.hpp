#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqcl/errors.hpp"
#include "seqcl/metrics.hpp"
#include "seqcl/model.hpp"
#include "seqcl/strategies.hpp"
#include "seqcl/tasks.hpp"

namespace seqcl {

enum class Method { kMulti, kMono, kVanilla, kReplay, kAgem, kEwc };

inline std::string method_name(Method m) {
  switch (m) {
    case Method::kMulti: return "multi";
    case Method::kMono: return "mono";
    case Method::kVanilla: return "vanilla";
    case Method::kReplay: return "replay";
    case Method::kAgem: return "agem";
    case Method::kEwc: return "ewc";
  }
  return "vanilla";
}

inline Method method_from_name(const std::string& name) {
  if (name == "multi") return Method::kMulti;
  if (name == "mono") return Method::kMono;
  if (name == "vanilla") return Method::kVanilla;
  if (name == "replay") return Method::kReplay;
  if (name == "agem") return Method::kAgem;
  if (name == "ewc") return Method::kEwc;
  throw ConfigError("unknown method '" + name + "'");
}

// Every knob an experiment run reads. Parsed from one JSON document; the
// resolved document (defaults + file + overrides) rides along for metadata.
struct ExperimentConfig {
  Method method = Method::kVanilla;
  std::vector<std::uint64_t> seeds = {42, 52, 62, 72, 82};
  CbtRow cbt_row = CbtRow::kFinal;
  OrderingPolicy ordering_policy = OrderingPolicy::kRandom;
  std::vector<std::string> explicit_order;
  std::size_t warm_start_k = 0;  // 0 disables the warm-start block

  bool synthetic_source = true;
  SyntheticStreamConfig synthetic;
  std::string dataset_path;
  std::size_t hash_dim = 64;

  std::vector<std::size_t> hidden_dims = {32};
  Activation activation = Activation::kTanh;
  std::uint64_t init_seed = 1;

  TrainConfig training;
  LrSchedule schedule;
  StrategyConfig strategy;
  std::string output_dir = "results";

  nlohmann::ordered_json resolved;

  void validate() const {
    if (seeds.empty()) throw ConfigError("seeds must list at least one seed");
    if (synthetic_source) {
      synthetic.validate();
      if (warm_start_k >= synthetic.num_tasks && warm_start_k != 0)
        throw ConfigError("warm_start_k must stay below the number of tasks");
    } else if (dataset_path.empty()) {
      throw ConfigError("stream.path is required when stream.source is 'jsonl'");
    }
    if (!synthetic_source && hash_dim == 0)
      throw ConfigError("stream.hash_dim must be positive");
    for (std::size_t h : hidden_dims)
      if (h == 0) throw ConfigError("model.hidden_dims entries must be positive");
    training.validate();
    schedule.validate();
    strategy.validate();
    if (ordering_policy == OrderingPolicy::kExplicit && explicit_order.empty())
      throw ConfigError("ordering.policy 'explicit' needs ordering.explicit_order");
  }
};

inline nlohmann::ordered_json default_config_json() {
  return nlohmann::ordered_json{
      {"method", "vanilla"},
      {"seeds", {42, 52, 62, 72, 82}},
      {"cbt_row", "final"},
      {"warm_start_k", 0},
      {"ordering",
       {{"policy", "random"}, {"explicit_order", nlohmann::ordered_json::array()}}},
      {"stream",
       {{"source", "synthetic"},
        {"path", ""},
        {"hash_dim", 64},
        {"synthetic",
         {{"num_tasks", 10},
          {"num_families", 4},
          {"input_dim", 8},
          {"num_labels", 3},
          {"train_per_task", 64},
          {"dev_per_task", 24},
          {"test_per_task", 48},
          {"rotation_within_family", 0.1},
          {"rotation_between_families", 0.8},
          {"label_prototype_noise", 0.3},
          {"head_kind", "sequence"},
          {"seed", 1234}}}}},
      {"model", {{"hidden_dims", {32}}, {"activation", "tanh"}, {"init_seed", 1}}},
      {"training",
       {{"batch_size", 32}, {"max_epochs", 20}, {"patience", 5}, {"early_stopping", true}}},
      {"lr",
       {{"lr0", 5e-5},
        {"gamma", 0.9},
        {"lr_min", 1e-6},
        {"per_step_decay", 1.0},
        {"use_lr_adjust", false}}},
      {"strategy",
       {{"kind", ""},
        {"ewc_lambda", 10000.0},
        {"ewc_anchor", "all_tasks"},
        {"fisher_num_samples", 1000},
        {"store_memory_prob", 0.01},
        {"max_store_num_samples", 100000},
        {"retrieve_num_samples", 100},
        {"run_per_step", 2000}}},
      {"output_dir", "results"}};
}

namespace detail {

inline void merge_into(nlohmann::ordered_json& base, const nlohmann::json& user,
                       const std::string& prefix) {
  if (!user.is_object())
    throw ConfigError("config section '" + (prefix.empty() ? "<root>" : prefix) +
                      "' must be a JSON object");
  for (const auto& [key, value] : user.items()) {
    std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    if (base[key].is_object()) {
      merge_into(base[key], value, path);
    } else {
      base[key] = value;
    }
  }
}

inline nlohmann::ordered_json* walk_path(nlohmann::ordered_json& doc, const std::string& dotted) {
  nlohmann::ordered_json* node = &doc;
  std::size_t begin = 0;
  while (true) {
    std::size_t dot = dotted.find('.', begin);
    std::string key = dotted.substr(begin, dot == std::string::npos ? dot : dot - begin);
    if (!node->is_object() || !node->contains(key))
      throw ConfigError("override references unknown config key '" + dotted + "'");
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    begin = dot + 1;
  }
  return node;
}

}  // namespace detail

// Apply one --set override. The dotted path must already exist; the value is
// parsed as JSON when possible and taken as a bare string otherwise.
inline void apply_override(nlohmann::ordered_json& doc, const std::string& assignment) {
  std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "' must look like key.path=value");
  std::string path = assignment.substr(0, eq);
  std::string value = assignment.substr(eq + 1);
  nlohmann::ordered_json* node = detail::walk_path(doc, path);
  if (node->is_object()) throw ConfigError("override '" + path + "' targets a config section");
  nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
  if (parsed.is_discarded())
    *node = value;
  else
    *node = parsed;
}

namespace detail {

template <typename T>
T fetch(const nlohmann::ordered_json& doc, const std::string& path) {
  nlohmann::ordered_json copy = doc;  // walk_path needs mutable access
  try {
    return walk_path(copy, path)->get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config key '" + path + "' has the wrong type: " + e.what());
  }
}

inline HeadKind head_from_name(const std::string& name) {
  if (name == "sequence") return HeadKind::kSequenceClassification;
  if (name == "token") return HeadKind::kTokenLabeling;
  throw ConfigError("head_kind must be 'sequence' or 'token', not '" + name + "'");
}

inline Activation activation_from_name(const std::string& name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "relu") return Activation::kRelu;
  throw ConfigError("activation must be 'tanh' or 'relu', not '" + name + "'");
}

inline OrderingPolicy ordering_from_name(const std::string& name) {
  if (name == "random") return OrderingPolicy::kRandom;
  if (name == "family_grouped") return OrderingPolicy::kFamilyGrouped;
  if (name == "explicit") return OrderingPolicy::kExplicit;
  throw ConfigError("ordering.policy must be random, family_grouped or explicit");
}

}  // namespace detail

// Build the validated ExperimentConfig from a fully merged document. A
// nonempty strategy.kind names the sequential method to run and wins over
// the method field (so `--set strategy.kind=ewc` flips a vanilla config);
// multi and mono ignore strategy.kind.
inline ExperimentConfig parse_config(const nlohmann::ordered_json& doc) {
  using detail::fetch;
  ExperimentConfig cfg;
  cfg.method = method_from_name(fetch<std::string>(doc, "method"));
  std::string kind = fetch<std::string>(doc, "strategy.kind");
  if (!kind.empty() && cfg.method != Method::kMulti && cfg.method != Method::kMono)
    cfg.method = method_from_name(kind);

  cfg.seeds = fetch<std::vector<std::uint64_t>>(doc, "seeds");
  std::string cbt_row = fetch<std::string>(doc, "cbt_row");
  if (cbt_row == "final")
    cfg.cbt_row = CbtRow::kFinal;
  else if (cbt_row == "T_minus_1")
    cfg.cbt_row = CbtRow::kTMinus1;
  else
    throw ConfigError("cbt_row must be 'final' or 'T_minus_1'");
  cfg.warm_start_k = fetch<std::size_t>(doc, "warm_start_k");
  cfg.ordering_policy = detail::ordering_from_name(fetch<std::string>(doc, "ordering.policy"));
  cfg.explicit_order = fetch<std::vector<std::string>>(doc, "ordering.explicit_order");

  std::string source = fetch<std::string>(doc, "stream.source");
  if (source == "synthetic")
    cfg.synthetic_source = true;
  else if (source == "jsonl")
    cfg.synthetic_source = false;
  else
    throw ConfigError("stream.source must be 'synthetic' or 'jsonl'");
  cfg.dataset_path = fetch<std::string>(doc, "stream.path");
  cfg.hash_dim = fetch<std::size_t>(doc, "stream.hash_dim");
  cfg.synthetic.num_tasks = fetch<std::size_t>(doc, "stream.synthetic.num_tasks");
  cfg.synthetic.num_families = fetch<std::size_t>(doc, "stream.synthetic.num_families");
  cfg.synthetic.input_dim = fetch<std::size_t>(doc, "stream.synthetic.input_dim");
  cfg.synthetic.num_labels = fetch<std::size_t>(doc, "stream.synthetic.num_labels");
  cfg.synthetic.train_per_task = fetch<std::size_t>(doc, "stream.synthetic.train_per_task");
  cfg.synthetic.dev_per_task = fetch<std::size_t>(doc, "stream.synthetic.dev_per_task");
  cfg.synthetic.test_per_task = fetch<std::size_t>(doc, "stream.synthetic.test_per_task");
  cfg.synthetic.rotation_within_family =
      fetch<double>(doc, "stream.synthetic.rotation_within_family");
  cfg.synthetic.rotation_between_families =
      fetch<double>(doc, "stream.synthetic.rotation_between_families");
  cfg.synthetic.label_prototype_noise =
      fetch<double>(doc, "stream.synthetic.label_prototype_noise");
  cfg.synthetic.head_kind =
      detail::head_from_name(fetch<std::string>(doc, "stream.synthetic.head_kind"));
  cfg.synthetic.seed = fetch<std::uint64_t>(doc, "stream.synthetic.seed");

  cfg.hidden_dims = fetch<std::vector<std::size_t>>(doc, "model.hidden_dims");
  cfg.activation = detail::activation_from_name(fetch<std::string>(doc, "model.activation"));
  cfg.init_seed = fetch<std::uint64_t>(doc, "model.init_seed");

  cfg.training.batch_size = fetch<std::size_t>(doc, "training.batch_size");
  cfg.training.max_epochs = fetch<std::size_t>(doc, "training.max_epochs");
  cfg.training.patience = fetch<std::size_t>(doc, "training.patience");
  cfg.training.early_stopping = fetch<bool>(doc, "training.early_stopping");

  cfg.schedule.lr_current = fetch<double>(doc, "lr.lr0");
  cfg.schedule.gamma = fetch<double>(doc, "lr.gamma");
  cfg.schedule.lr_min = fetch<double>(doc, "lr.lr_min");
  cfg.schedule.per_step_decay = fetch<double>(doc, "lr.per_step_decay");
  cfg.strategy.use_lr_adjust = fetch<bool>(doc, "lr.use_lr_adjust");

  switch (cfg.method) {
    case Method::kReplay: cfg.strategy.kind = StrategyKind::kReplay; break;
    case Method::kAgem: cfg.strategy.kind = StrategyKind::kAgem; break;
    case Method::kEwc: cfg.strategy.kind = StrategyKind::kEwc; break;
    default: cfg.strategy.kind = StrategyKind::kVanilla; break;
  }
  cfg.strategy.ewc_lambda = fetch<double>(doc, "strategy.ewc_lambda");
  std::string anchor = fetch<std::string>(doc, "strategy.ewc_anchor");
  if (anchor == "all_tasks")
    cfg.strategy.ewc_anchor = EwcAnchor::kAllTasks;
  else if (anchor == "latest")
    cfg.strategy.ewc_anchor = EwcAnchor::kLatest;
  else
    throw ConfigError("strategy.ewc_anchor must be 'all_tasks' or 'latest'");
  cfg.strategy.fisher_num_samples = fetch<std::size_t>(doc, "strategy.fisher_num_samples");
  cfg.strategy.store_memory_prob = fetch<double>(doc, "strategy.store_memory_prob");
  cfg.strategy.max_store_num_samples =
      fetch<std::size_t>(doc, "strategy.max_store_num_samples");
  cfg.strategy.retrieve_num_samples =
      fetch<std::size_t>(doc, "strategy.retrieve_num_samples");
  cfg.strategy.run_per_step = fetch<std::size_t>(doc, "strategy.run_per_step");
  cfg.output_dir = fetch<std::string>(doc, "output_dir");

  // record the effective method in the resolved document
  cfg.resolved = doc;
  cfg.resolved["method"] = method_name(cfg.method);
  cfg.validate();
  return cfg;
}

inline nlohmann::ordered_json resolve_config_json(
    const nlohmann::json& user, const std::vector<std::string>& overrides = {}) {
  nlohmann::ordered_json doc = default_config_json();
  detail::merge_into(doc, user, "");
  for (const std::string& assignment : overrides) apply_override(doc, assignment);
  return doc;
}

inline ExperimentConfig load_config_file(const std::string& path,
                                         const std::vector<std::string>& overrides = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  nlohmann::json user;
  try {
    user = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  return parse_config(resolve_config_json(user, overrides));
}

}  // namespace seqcl
