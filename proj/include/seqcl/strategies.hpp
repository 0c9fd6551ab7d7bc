#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "seqcl/errors.hpp"
#include "seqcl/metrics.hpp"
#include "seqcl/model.hpp"
#include "seqcl/rng.hpp"
#include "seqcl/tasks.hpp"

namespace seqcl {

enum class StrategyKind { kVanilla, kReplay, kAgem, kEwc };
enum class EwcAnchor { kAllTasks, kLatest };

inline std::string strategy_name(StrategyKind k) {
  switch (k) {
    case StrategyKind::kVanilla: return "vanilla";
    case StrategyKind::kReplay: return "replay";
    case StrategyKind::kAgem: return "agem";
    case StrategyKind::kEwc: return "ewc";
  }
  return "vanilla";
}

inline StrategyKind strategy_from_name(const std::string& name) {
  if (name == "vanilla") return StrategyKind::kVanilla;
  if (name == "replay") return StrategyKind::kReplay;
  if (name == "agem") return StrategyKind::kAgem;
  if (name == "ewc") return StrategyKind::kEwc;
  throw ConfigError("unknown strategy '" + name + "'");
}

// Learning-rate state. lr_adjust fires once per task boundary (never before
// the first task); per_step_decay multiplies lr after every gradient step
// inside a task, and the boundary adjustment applies to whatever lr that
// decay has produced.
struct LrSchedule {
  double lr_current = 5e-5;
  double gamma = 0.9;
  double lr_min = 1e-6;
  double per_step_decay = 1.0;

  void validate() const {
    if (!(lr_current > 0.0)) throw ConfigError("lr schedule: lr must be positive");
    if (!(gamma > 0.0) || gamma > 1.0) throw ConfigError("lr schedule: gamma must lie in (0,1]");
    if (!(lr_min > 0.0)) throw ConfigError("lr schedule: lr_min must be positive");
    if (!(per_step_decay > 0.0) || per_step_decay > 1.0)
      throw ConfigError("lr schedule: per_step_decay must lie in (0,1]");
  }
};

inline LrSchedule lr_adjust(LrSchedule schedule) {
  schedule.lr_current = std::max(schedule.lr_min, schedule.lr_current * schedule.gamma);
  return schedule;
}

// Bounded episodic memory with label-balanced eviction. Admission offers each
// example a single biased coin flip; when the buffer is full the incoming
// example's label is counted tentatively and the eviction victim is the
// oldest entry among the labels that are then most represented.
class EpisodicMemory {
 public:
  static constexpr std::size_t kUnbounded = std::numeric_limits<std::size_t>::max();

  EpisodicMemory() = default;

  EpisodicMemory(std::size_t capacity, double admission_prob, HeadKind head_kind,
                 int o_label_id = 0)
      : capacity_(capacity),
        admission_prob_(admission_prob),
        head_kind_(head_kind),
        o_label_id_(o_label_id) {
    if (admission_prob_ < 0.0 || admission_prob_ > 1.0)
      throw ConfigError("memory: admission probability must lie in [0,1]");
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  // Balance key: the example's label; token examples use their first
  // non-O label, or O when the sequence is all O.
  int balance_key(const Example& ex) const {
    if (ex.labels.empty()) throw DataError("memory: example without labels");
    if (head_kind_ == HeadKind::kTokenLabeling) {
      for (int y : ex.labels)
        if (y != o_label_id_) return y;
      return o_label_id_;
    }
    return ex.labels[0];
  }

  // One admission coin is always drawn per offer, so a run's random streams
  // do not depend on the admission outcome.
  void observe(const Example& ex, Rng& rng) {
    bool admit = rng.uniform01() < admission_prob_;
    if (!admit || capacity_ == 0) return;
    int key = balance_key(ex);
    if (entries_.size() >= capacity_) evict_for(key);
    entries_.push_back({ex, key});
    counts_[key] += 1;
  }

  // k entries uniformly without replacement; everything when k >= size.
  std::vector<Example> sample(std::size_t k, Rng& rng) const {
    std::vector<Example> out;
    if (entries_.empty() || k == 0) return out;
    auto picks = rng.sample_indices(entries_.size(), k);
    out.reserve(picks.size());
    for (std::size_t i : picks) out.push_back(entries_[i].example);
    return out;
  }

  std::map<int, std::size_t> label_counts() const { return counts_; }

  // Arrival-order access for inspection.
  const Example& entry(std::size_t i) const { return entries_.at(i).example; }

 private:
  struct Entry {
    Example example;
    int key;
  };

  void evict_for(int incoming_key) {
    std::map<int, std::size_t> tentative = counts_;
    tentative[incoming_key] += 1;
    std::size_t top = 0;
    for (const auto& [key, n] : tentative) top = std::max(top, n);
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (tentative[entries_[i].key] == top) {
        counts_[entries_[i].key] -= 1;
        if (counts_[entries_[i].key] == 0) counts_.erase(entries_[i].key);
        entries_.erase(entries_.begin() + static_cast<std::ptrdiff_t>(i));
        return;
      }
    }
    // Unreachable: a full buffer always stores an entry of some top label.
    counts_[entries_.front().key] -= 1;
    entries_.erase(entries_.begin());
  }

  std::vector<Entry> entries_;
  std::map<int, std::size_t> counts_;
  std::size_t capacity_ = kUnbounded;
  double admission_prob_ = 1.0;
  HeadKind head_kind_ = HeadKind::kSequenceClassification;
  int o_label_id_ = 0;
};

// Fisher information (diagonal) with the parameters it was computed at.
struct FisherSnapshot {
  std::vector<double> fisher_diag;
  ParameterVector anchor;
  std::string task_id;
};

struct StrategyConfig {
  StrategyKind kind = StrategyKind::kVanilla;
  double ewc_lambda = 10000.0;
  EwcAnchor ewc_anchor = EwcAnchor::kAllTasks;
  std::size_t fisher_num_samples = 1000;
  double store_memory_prob = 0.01;
  std::size_t max_store_num_samples = 100000;
  std::size_t retrieve_num_samples = 100;
  std::size_t run_per_step = 2000;
  bool use_lr_adjust = false;

  void validate() const {
    if (ewc_lambda < 0.0) throw ConfigError("strategy: ewc_lambda must be >= 0");
    if (fisher_num_samples == 0) throw ConfigError("strategy: fisher_num_samples must be positive");
    if (store_memory_prob < 0.0 || store_memory_prob > 1.0)
      throw ConfigError("strategy: store_memory_prob must lie in [0,1]");
    if (max_store_num_samples == 0)
      throw ConfigError("strategy: max_store_num_samples must be positive");
    if (retrieve_num_samples == 0)
      throw ConfigError("strategy: retrieve_num_samples must be positive");
    if (retrieve_num_samples > max_store_num_samples)
      throw ConfigError("strategy: retrieve_num_samples cannot exceed memory capacity");
    if (run_per_step == 0) throw ConfigError("strategy: run_per_step must be positive");
  }
};

// Everything a strategy mutates while a run trains through the stream. Each
// random purpose has its own stream so that disabling one mechanism never
// shifts the draws of another.
struct StrategyState {
  StrategyConfig cfg;
  EpisodicMemory memory;
  std::vector<FisherSnapshot> snapshots;
  std::uint64_t global_step = 0;
  std::size_t tasks_completed = 0;
  Rng admit_rng{0};
  Rng sample_rng{0};
  Rng fisher_rng{0};

  StrategyState(const StrategyConfig& config, HeadKind head_kind, int o_label_id,
                std::uint64_t run_seed)
      : cfg(config),
        memory(config.max_store_num_samples, config.store_memory_prob, head_kind, o_label_id),
        admit_rng(mix_seed(run_seed, rng_tag::kAdmit)),
        sample_rng(mix_seed(run_seed, rng_tag::kSample)),
        fisher_rng(mix_seed(run_seed, rng_tag::kFisher)) {
    cfg.validate();
  }

  bool uses_memory() const {
    return cfg.kind == StrategyKind::kReplay || cfg.kind == StrategyKind::kAgem;
  }
};

// A-GEM projection: remove the component of g that conflicts with the
// memory reference gradient. No conflict (or a vanishing reference) leaves g
// untouched.
inline GradientVector agem_project(const GradientVector& g, const GradientVector& g_ref) {
  if (g.values.size() != g_ref.values.size())
    throw DataError("agem_project: gradient lengths differ");
  double dot = 0.0, ref_sq = 0.0;
  for (std::size_t i = 0; i < g.values.size(); ++i) {
    dot += g.values[i] * g_ref.values[i];
    ref_sq += g_ref.values[i] * g_ref.values[i];
  }
  if (ref_sq < 1e-12 || dot >= 0.0) return g;
  GradientVector out = g;
  double scale = dot / ref_sq;
  for (std::size_t i = 0; i < out.values.size(); ++i)
    out.values[i] -= scale * g_ref.values[i];
  return out;
}

// Diagonal empirical Fisher at theta over the first min(num_samples, |data|)
// examples, with labels sampled from the model's own predictive distribution.
inline FisherSnapshot ewc_fisher(const ParameterVector& theta, const ModelConfig& cfg,
                                 const std::vector<Example>& data, std::size_t num_samples,
                                 Rng& rng, const std::string& task_id = "") {
  if (data.empty()) throw DataError("ewc_fisher: empty data");
  std::size_t n = std::min(num_samples, data.size());
  if (n == 0) throw DataError("ewc_fisher: num_samples must be positive");
  FisherSnapshot snap;
  snap.fisher_diag.assign(theta.values.size(), 0.0);
  snap.anchor = theta;
  snap.task_id = task_id;
  for (std::size_t e = 0; e < n; ++e) {
    auto probs = forward(theta, cfg, data[e]);
    Example sampled = data[e];
    for (std::size_t p = 0; p < probs.size(); ++p) {
      double u = rng.uniform01();
      double cum = 0.0;
      int label = static_cast<int>(probs[p].size()) - 1;
      for (std::size_t c = 0; c < probs[p].size(); ++c) {
        cum += probs[p][c];
        if (u < cum) {
          label = static_cast<int>(c);
          break;
        }
      }
      sampled.labels[p] = label;
    }
    GradientVector g = loss_and_grad(theta, cfg, {sampled}).second;
    for (std::size_t i = 0; i < g.values.size(); ++i)
      snap.fisher_diag[i] += g.values[i] * g.values[i];
  }
  for (double& f : snap.fisher_diag) f /= static_cast<double>(n);
  return snap;
}

// Quadratic anchor penalty summed over snapshots (or only the latest one):
// penalty = sum_i (lambda/2) F_i (theta_i - anchor_i)^2, with its exact
// gradient lambda F_i (theta_i - anchor_i).
inline std::pair<double, GradientVector> ewc_penalty_grad(
    const ParameterVector& theta, const std::vector<FisherSnapshot>& snapshots,
    double lambda, EwcAnchor anchor = EwcAnchor::kAllTasks) {
  GradientVector grad;
  grad.values.assign(theta.values.size(), 0.0);
  double penalty = 0.0;
  if (lambda == 0.0 || snapshots.empty()) return {penalty, grad};
  std::size_t first = (anchor == EwcAnchor::kLatest) ? snapshots.size() - 1 : 0;
  for (std::size_t s = first; s < snapshots.size(); ++s) {
    const FisherSnapshot& snap = snapshots[s];
    if (snap.fisher_diag.size() != theta.values.size() ||
        snap.anchor.values.size() != theta.values.size())
      throw DataError("ewc_penalty_grad: snapshot length does not match model");
    for (std::size_t i = 0; i < theta.values.size(); ++i) {
      double d = theta.values[i] - snap.anchor.values[i];
      penalty += 0.5 * lambda * snap.fisher_diag[i] * d * d;
      grad.values[i] += lambda * snap.fisher_diag[i] * d;
    }
  }
  return {penalty, grad};
}

// One scheduled replay step: on every run_per_step-th ordinary step, take a
// single SGD step on a fresh memory sample at the current lr. Draws from the
// sampling stream only when the step actually fires on a nonempty memory.
inline ParameterVector replay_step(const ParameterVector& theta, const ModelConfig& cfg,
                                   EpisodicMemory& memory, const StrategyConfig& scfg,
                                   const LrSchedule& schedule, std::uint64_t step_index,
                                   Rng& rng) {
  if (step_index == 0 || step_index % scfg.run_per_step != 0) return theta;
  std::vector<Example> batch = memory.sample(scfg.retrieve_num_samples, rng);
  if (batch.empty()) return theta;
  GradientVector g = loss_and_grad(theta, cfg, batch).second;
  return sgd_step(theta, g, schedule.lr_current);
}

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t max_epochs = 20;
  std::size_t patience = 5;
  bool early_stopping = true;

  void validate() const {
    if (batch_size == 0) throw ConfigError("training: batch_size must be positive");
    if (max_epochs == 0) throw ConfigError("training: max_epochs must be positive");
    if (early_stopping && patience == 0)
      throw ConfigError("training: patience must be positive when early stopping is on");
  }
};

// Train on one task with the configured strategy.
//   - mini-batch SGD over task.train, reshuffled each epoch from shuffle_seed
//   - replay/a-gem offer each train example to memory once (first epoch)
//   - ewc adds the anchor penalty once snapshots exist; a-gem projects against
//     a fresh memory sample once an earlier task has completed
//   - early stopping on dev score with strict improvement, restoring the best
//     weights; afterwards ewc appends this task's Fisher snapshot
inline ParameterVector train_task(const ParameterVector& theta0, const ModelConfig& mc,
                                  const TaskSpec& task,
                                  const std::vector<std::string>& label_names,
                                  StrategyState& state, LrSchedule& schedule,
                                  const TrainConfig& tc, std::uint64_t shuffle_seed) {
  tc.validate();
  schedule.validate();
  if (task.train.empty()) throw DataError("task '" + task.task_id + "' has no train split");
  if (tc.early_stopping && task.dev.empty())
    throw DataError("task '" + task.task_id + "' has no dev split but early stopping is on");

  ParameterVector theta = theta0;
  ParameterVector best = theta0;
  double best_score = -1.0;
  std::size_t strikes = 0;

  std::vector<std::size_t> order(task.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < tc.max_epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(shuffle_seed, epoch));
    shuffle_rng.shuffle(order);

    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      std::size_t stop = std::min(order.size(), start + tc.batch_size);
      std::vector<Example> batch;
      batch.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) batch.push_back(task.train[order[i]]);

      if (epoch == 0 && state.uses_memory())
        for (const Example& ex : batch) state.memory.observe(ex, state.admit_rng);

      auto [loss, grad] = loss_and_grad(theta, mc, batch);
      if (state.cfg.kind == StrategyKind::kEwc && state.cfg.ewc_lambda > 0.0 &&
          !state.snapshots.empty()) {
        auto [penalty, pgrad] =
            ewc_penalty_grad(theta, state.snapshots, state.cfg.ewc_lambda, state.cfg.ewc_anchor);
        loss += penalty;
        for (std::size_t i = 0; i < grad.values.size(); ++i)
          grad.values[i] += pgrad.values[i];
      }
      if (state.cfg.kind == StrategyKind::kAgem && state.tasks_completed > 0 &&
          !state.memory.empty()) {
        std::vector<Example> ref =
            state.memory.sample(state.cfg.retrieve_num_samples, state.sample_rng);
        GradientVector g_ref = loss_and_grad(theta, mc, ref).second;
        grad = agem_project(grad, g_ref);
      }
      if (!std::isfinite(loss))
        throw NumericError("task '" + task.task_id + "': nonfinite loss at global step " +
                           std::to_string(state.global_step + 1) + " (epoch " +
                           std::to_string(epoch + 1) + ")");

      theta = sgd_step(theta, grad, schedule.lr_current);
      schedule.lr_current *= schedule.per_step_decay;
      state.global_step += 1;
      if (state.cfg.kind == StrategyKind::kReplay)
        theta = replay_step(theta, mc, state.memory, state.cfg, schedule, state.global_step,
                            state.sample_rng);
    }

    if (tc.early_stopping) {
      double score = evaluate_split(theta, mc, task.dev, label_names);
      if (score > best_score) {
        best_score = score;
        best = theta;
        strikes = 0;
      } else if (++strikes >= tc.patience) {
        break;
      }
    }
  }

  if (tc.early_stopping) theta = best;

  if (state.cfg.kind == StrategyKind::kEwc)
    state.snapshots.push_back(ewc_fisher(theta, mc, task.train, state.cfg.fisher_num_samples,
                                         state.fisher_rng, task.task_id));
  state.tasks_completed += 1;
  return theta;
}

}  // namespace seqcl
