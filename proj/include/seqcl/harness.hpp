#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "seqcl/config.hpp"
#include "seqcl/errors.hpp"
#include "seqcl/metrics.hpp"
#include "seqcl/model.hpp"
#include "seqcl/rng.hpp"
#include "seqcl/strategies.hpp"
#include "seqcl/tasks.hpp"

namespace seqcl {

struct StagePoint {
  std::size_t stage = 0;
  double value = 0.0;
};

// Everything one seed produced: the score matrix plus the scalar summaries
// derived from it.
struct SeedResult {
  explicit SeedResult(ScoreMatrix m) : matrix(std::move(m)) {}

  std::uint64_t seed = 0;
  std::vector<std::string> task_order;
  ScoreMatrix matrix;
  EvalReport report;
  std::vector<StagePoint> stage_averages;
};

struct StageAggregate {
  std::size_t stage = 0;
  double mean = 0.0;
  double stdev = 0.0;
};

struct AggregateStat {
  double mean = 0.0;
  double stdev = 0.0;
};

struct RunResult {
  std::string method_label;
  ExperimentConfig config;
  std::vector<SeedResult> per_seed;
  std::vector<StageAggregate> curve;
  AggregateStat final_average;
  std::optional<AggregateStat> cft;
  std::optional<AggregateStat> cbt;
  double wall_clock_ms = 0.0;  // reported in the sidecar, never in result.json
};

inline TaskStream build_stream(const ExperimentConfig& cfg) {
  if (cfg.synthetic_source) return generate_stream(cfg.synthetic);
  return load_stream(cfg.dataset_path, cfg.hash_dim);
}

inline std::string method_label(const ExperimentConfig& cfg) {
  std::string label = method_name(cfg.method);
  if (cfg.strategy.use_lr_adjust) label += "+lr_adjust";
  if (cfg.warm_start_k >= 1 && cfg.method != Method::kMulti && cfg.method != Method::kMono)
    label += "+warm" + std::to_string(cfg.warm_start_k);
  return label;
}

namespace detail {

inline int o_label_index(const std::vector<std::string>& label_names) {
  for (std::size_t i = 0; i < label_names.size(); ++i)
    if (label_names[i] == "O") return static_cast<int>(i);
  return 0;
}

inline ModelConfig model_config_for(const ExperimentConfig& cfg, const TaskStream& stream) {
  ModelConfig mc;
  mc.input_dim = stream.input_dim;
  mc.hidden_dims = cfg.hidden_dims;
  mc.num_labels = stream.num_labels();
  mc.activation = cfg.activation;
  mc.head_kind = stream.head_kind;
  return mc;
}

inline TaskStream order_for_seed(const ExperimentConfig& cfg, const TaskStream& stream,
                                 std::uint64_t seed) {
  return order_stream(stream, cfg.ordering_policy, mix_seed(seed, rng_tag::kOrder),
                      cfg.explicit_order);
}

// Mean of the present cells in the last recorded row.
inline double last_row_average(const ScoreMatrix& R) {
  return R.row_mean_over_seen(R.last_recorded_stage());
}

inline void finish_seed(SeedResult& out, const ExperimentConfig& cfg, const std::string& label,
                        std::uint64_t seed) {
  out.seed = seed;
  out.report.method = label;
  out.report.seed = seed;
  std::size_t last = out.matrix.last_recorded_stage();
  std::size_t tasks = out.task_order.size();
  out.report.final_task_f1.clear();
  for (std::size_t t = 1; t <= tasks; ++t) out.report.final_task_f1.push_back(out.matrix.cell(last, t));
  out.report.average_f1 = last_row_average(out.matrix);
  try {
    out.report.cft_value = cft(out.matrix);
  } catch (const StateError&) {
    out.report.cft_value.reset();
  }
  try {
    out.report.cbt_value = cbt(out.matrix, cfg.cbt_row);
  } catch (const StateError&) {
    out.report.cbt_value.reset();
  }
  out.stage_averages.clear();
  for (std::size_t stage : out.matrix.recorded_stages())
    out.stage_averages.push_back({stage, out.matrix.row_mean_over_seen(stage)});
}

}  // namespace detail

// Concatenate the train and dev splits of the first k tasks into one block
// task. The block id joins the member ids, so a single-member block behaves
// exactly like the task itself.
inline TaskSpec pooled_task(const TaskStream& stream, std::size_t first_k) {
  if (first_k == 0 || first_k > stream.tasks.size())
    throw ConfigError("pooled block needs between 1 and T tasks");
  TaskSpec block;
  block.family = "pooled";
  block.head_kind = stream.head_kind;
  for (std::size_t t = 0; t < first_k; ++t) {
    const TaskSpec& task = stream.tasks[t];
    if (t > 0) block.task_id += "+";
    block.task_id += task.task_id;
    block.train.insert(block.train.end(), task.train.begin(), task.train.end());
    block.dev.insert(block.dev.end(), task.dev.begin(), task.dev.end());
  }
  return block;
}

// Sequential training over the ordered stream, optionally opening with a
// pooled block over the first warm_k tasks (recorded as stage warm_k). The
// learning rate adjustment fires at every task boundary after the first
// training stage.
inline SeedResult seed_sequential(const ExperimentConfig& cfg, const TaskStream& stream,
                                  std::uint64_t seed, std::size_t warm_k) {
  TaskStream ordered = detail::order_for_seed(cfg, stream, seed);
  std::size_t T = ordered.tasks.size();
  if (warm_k != 0 && warm_k >= T)
    throw ConfigError("warm_start_k must stay below the number of tasks");

  ModelConfig mc = detail::model_config_for(cfg, ordered);
  mc.init_seed = mix_seed(cfg.init_seed, seed);
  ParameterVector theta = init_model(mc);
  StrategyState state(cfg.strategy, mc.head_kind, detail::o_label_index(ordered.label_names),
                      seed);
  LrSchedule schedule = cfg.schedule;

  SeedResult result{ScoreMatrix(ordered.task_ids())};
  result.task_order = ordered.task_ids();

  std::size_t stage_counter = 0;
  std::size_t next_task = 0;
  if (warm_k >= 1) {
    TaskSpec block = pooled_task(ordered, warm_k);
    ++stage_counter;
    theta = train_task(theta, mc, block, ordered.label_names, state, schedule, cfg.training,
                       mix_seed(seed, rng_tag::kShuffle, stage_counter));
    record_row(result.matrix, warm_k, theta, mc, ordered);
    next_task = warm_k;
  }
  for (std::size_t t = next_task; t < T; ++t) {
    ++stage_counter;
    if (cfg.strategy.use_lr_adjust && stage_counter > 1) schedule = lr_adjust(schedule);
    theta = train_task(theta, mc, ordered.tasks[t], ordered.label_names, state, schedule,
                       cfg.training, mix_seed(seed, rng_tag::kShuffle, stage_counter));
    record_row(result.matrix, t + 1, theta, mc, ordered);
  }
  detail::finish_seed(result, cfg, method_label(cfg), seed);
  return result;
}

// One training pass over all tasks pooled together; fills the final row only.
inline SeedResult seed_multi(const ExperimentConfig& cfg, const TaskStream& stream,
                             std::uint64_t seed) {
  TaskStream ordered = detail::order_for_seed(cfg, stream, seed);
  std::size_t T = ordered.tasks.size();
  ModelConfig mc = detail::model_config_for(cfg, ordered);
  mc.init_seed = mix_seed(cfg.init_seed, seed);
  ParameterVector theta = init_model(mc);
  StrategyState state(cfg.strategy, mc.head_kind, detail::o_label_index(ordered.label_names),
                      seed);
  LrSchedule schedule = cfg.schedule;

  SeedResult result{ScoreMatrix(ordered.task_ids())};
  result.task_order = ordered.task_ids();
  TaskSpec block = pooled_task(ordered, T);
  theta = train_task(theta, mc, block, ordered.label_names, state, schedule, cfg.training,
                     mix_seed(seed, rng_tag::kShuffle, 1));
  record_row(result.matrix, T, theta, mc, ordered);
  detail::finish_seed(result, cfg, method_label(cfg), seed);
  return result;
}

// A fresh model per task; only the diagonal of the score matrix is defined.
inline SeedResult seed_mono(const ExperimentConfig& cfg, const TaskStream& stream,
                            std::uint64_t seed) {
  TaskStream ordered = detail::order_for_seed(cfg, stream, seed);
  std::size_t T = ordered.tasks.size();
  ModelConfig mc = detail::model_config_for(cfg, ordered);

  SeedResult result{ScoreMatrix(ordered.task_ids())};
  result.task_order = ordered.task_ids();
  for (std::size_t t = 0; t < T; ++t) {
    mc.init_seed = mix_seed(cfg.init_seed, seed, t + 1);
    ParameterVector theta = init_model(mc);
    StrategyState state(cfg.strategy, mc.head_kind, detail::o_label_index(ordered.label_names),
                        seed);
    LrSchedule schedule = cfg.schedule;
    theta = train_task(theta, mc, ordered.tasks[t], ordered.label_names, state, schedule,
                       cfg.training, mix_seed(seed, rng_tag::kShuffle, t + 1));
    std::vector<std::optional<double>> row(T);
    row[t] = evaluate_split(theta, mc, ordered.tasks[t].test, ordered.label_names);
    result.matrix.record_row(t + 1, row);
  }
  detail::finish_seed(result, cfg, method_label(cfg), seed);
  return result;
}

namespace detail {

// Population statistics with the summation ordered by seed value, so a
// permutation of the seeds list cannot change the aggregate bytes.
inline AggregateStat stat_by_seed(std::vector<std::pair<std::uint64_t, double>> pairs) {
  std::sort(pairs.begin(), pairs.end());
  double sum = 0.0;
  for (const auto& [seed, value] : pairs) sum += value;
  double mean = sum / static_cast<double>(pairs.size());
  double sq = 0.0;
  for (const auto& [seed, value] : pairs) sq += (value - mean) * (value - mean);
  return {mean, std::sqrt(sq / static_cast<double>(pairs.size()))};
}

}  // namespace detail

// Reduce per-seed results to curve points and scalar summaries. CFT and CBT
// aggregates exist only when every seed produced them.
inline void aggregate(RunResult& result) {
  if (result.per_seed.empty()) throw StateError("aggregate: no per-seed results");
  const std::vector<StagePoint>& stages = result.per_seed.front().stage_averages;
  result.curve.clear();
  for (std::size_t i = 0; i < stages.size(); ++i) {
    std::vector<std::pair<std::uint64_t, double>> pairs;
    for (const SeedResult& sr : result.per_seed) {
      if (sr.stage_averages.size() != stages.size() ||
          sr.stage_averages[i].stage != stages[i].stage)
        throw StateError("aggregate: seeds recorded different stages");
      pairs.emplace_back(sr.seed, sr.stage_averages[i].value);
    }
    AggregateStat stat = detail::stat_by_seed(std::move(pairs));
    result.curve.push_back({stages[i].stage, stat.mean, stat.stdev});
  }

  std::vector<std::pair<std::uint64_t, double>> finals;
  for (const SeedResult& sr : result.per_seed) finals.emplace_back(sr.seed, sr.report.average_f1);
  result.final_average = detail::stat_by_seed(std::move(finals));

  auto reduce_optional = [&](auto pick) -> std::optional<AggregateStat> {
    std::vector<std::pair<std::uint64_t, double>> pairs;
    for (const SeedResult& sr : result.per_seed) {
      std::optional<double> v = pick(sr);
      if (!v.has_value()) return std::nullopt;
      pairs.emplace_back(sr.seed, *v);
    }
    return detail::stat_by_seed(std::move(pairs));
  };
  result.cft = reduce_optional([](const SeedResult& sr) { return sr.report.cft_value; });
  result.cbt = reduce_optional([](const SeedResult& sr) { return sr.report.cbt_value; });
}

inline RunResult run_sequential(const ExperimentConfig& cfg, const TaskStream& stream) {
  RunResult result;
  result.method_label = method_label(cfg);
  result.config = cfg;
  for (std::uint64_t seed : cfg.seeds)
    result.per_seed.push_back(seed_sequential(cfg, stream, seed, 0));
  aggregate(result);
  return result;
}

inline RunResult run_warm_start(const ExperimentConfig& cfg, const TaskStream& stream) {
  if (cfg.warm_start_k < 1) throw ConfigError("warm start requires warm_start_k >= 1");
  if (cfg.warm_start_k >= stream.tasks.size())
    throw ConfigError("warm_start_k must stay below the number of tasks");
  RunResult result;
  result.method_label = method_label(cfg);
  result.config = cfg;
  for (std::uint64_t seed : cfg.seeds)
    result.per_seed.push_back(seed_sequential(cfg, stream, seed, cfg.warm_start_k));
  aggregate(result);
  return result;
}

inline RunResult run_multi(const ExperimentConfig& cfg, const TaskStream& stream) {
  RunResult result;
  result.method_label = method_label(cfg);
  result.config = cfg;
  for (std::uint64_t seed : cfg.seeds) result.per_seed.push_back(seed_multi(cfg, stream, seed));
  aggregate(result);
  return result;
}

inline RunResult run_mono(const ExperimentConfig& cfg, const TaskStream& stream) {
  RunResult result;
  result.method_label = method_label(cfg);
  result.config = cfg;
  for (std::uint64_t seed : cfg.seeds) result.per_seed.push_back(seed_mono(cfg, stream, seed));
  aggregate(result);
  return result;
}

inline RunResult run_experiment(const ExperimentConfig& cfg, const TaskStream& stream) {
  cfg.validate();
  auto started = std::chrono::steady_clock::now();
  RunResult result = [&] {
    switch (cfg.method) {
      case Method::kMulti: return run_multi(cfg, stream);
      case Method::kMono: return run_mono(cfg, stream);
      default:
        return cfg.warm_start_k >= 1 ? run_warm_start(cfg, stream) : run_sequential(cfg, stream);
    }
  }();
  auto finished = std::chrono::steady_clock::now();
  result.wall_clock_ms =
      std::chrono::duration<double, std::milli>(finished - started).count();
  return result;
}

inline RunResult run_experiment(const ExperimentConfig& cfg) {
  return run_experiment(cfg, build_stream(cfg));
}

namespace detail {

inline nlohmann::ordered_json json_optional(const std::optional<double>& v) {
  if (v.has_value()) return *v;
  return nullptr;
}

inline nlohmann::ordered_json json_stat(const std::optional<AggregateStat>& v) {
  if (!v.has_value()) return nullptr;
  return nlohmann::ordered_json{{"mean", v->mean}, {"std", v->stdev}};
}

}  // namespace detail

inline nlohmann::ordered_json result_to_json(const RunResult& result) {
  nlohmann::ordered_json doc;
  doc["schema"] = "seqcl-result-v1";
  doc["method"] = result.method_label;
  doc["config"] = result.config.resolved.is_null() ? nlohmann::ordered_json::object()
                                                   : result.config.resolved;
  doc["seeds"] = nlohmann::ordered_json::array();
  for (const SeedResult& sr : result.per_seed) {
    nlohmann::ordered_json entry;
    entry["seed"] = sr.seed;
    entry["task_order"] = sr.task_order;
    entry["stages"] = nlohmann::ordered_json::array();
    for (const StagePoint& p : sr.stage_averages)
      entry["stages"].push_back({{"stage", p.stage}, {"average", p.value}});
    entry["final_row"] = nlohmann::ordered_json::array();
    for (const auto& cell : sr.report.final_task_f1)
      entry["final_row"].push_back(detail::json_optional(cell));
    entry["final_average"] = sr.report.average_f1;
    entry["cft"] = detail::json_optional(sr.report.cft_value);
    entry["cbt"] = detail::json_optional(sr.report.cbt_value);
    entry["matrix_csv"] = "R_seed" + std::to_string(sr.seed) + ".csv";
    doc["seeds"].push_back(entry);
  }
  nlohmann::ordered_json agg;
  agg["std"] = "population";
  agg["order"] = "by_seed_value";
  agg["curve"] = nlohmann::ordered_json::array();
  for (const StageAggregate& p : result.curve)
    agg["curve"].push_back({{"stage", p.stage}, {"mean", p.mean}, {"std", p.stdev}});
  agg["final_average"] =
      nlohmann::ordered_json{{"mean", result.final_average.mean}, {"std", result.final_average.stdev}};
  agg["cft"] = detail::json_stat(result.cft);
  agg["cbt"] = detail::json_stat(result.cbt);
  doc["aggregate"] = agg;
  return doc;
}

// Writes result.json, one R_seed<seed>.csv per seed and curve.csv. Timing
// lives in run_meta.json so result.json stays byte-identical across reruns.
inline void write_run_result(const std::string& dir, const RunResult& result) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto write_file = [&](const std::string& name, const std::string& body) {
    std::ofstream out(fs::path(dir) / name, std::ios::binary);
    if (!out) throw DataError("cannot write " + (fs::path(dir) / name).string());
    out << body;
  };
  write_file("result.json", result_to_json(result).dump(2) + "\n");
  for (const SeedResult& sr : result.per_seed)
    write_file("R_seed" + std::to_string(sr.seed) + ".csv", to_csv(sr.matrix));
  std::string curve = "stage,mean,std\n";
  for (const StageAggregate& p : result.curve)
    curve += std::to_string(p.stage) + "," + detail::format_score(p.mean) + "," +
             detail::format_score(p.stdev) + "\n";
  write_file("curve.csv", curve);
  nlohmann::ordered_json meta{{"wall_clock_ms", result.wall_clock_ms}};
  write_file("run_meta.json", meta.dump(2) + "\n");
}

}  // namespace seqcl
