#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqcl/errors.hpp"
#include "seqcl/model.hpp"
#include "seqcl/rng.hpp"

namespace seqcl {

enum class OrderingPolicy { kRandom, kFamilyGrouped, kExplicit };

// One "language": a labeled dataset with a family tag.
struct TaskSpec {
  std::string task_id;
  std::string family;
  HeadKind head_kind = HeadKind::kSequenceClassification;
  std::vector<Example> train, dev, test;
};

// An ordered curriculum of tasks plus the label vocabulary they share.
struct TaskStream {
  std::vector<TaskSpec> tasks;
  std::vector<std::string> label_names;
  std::size_t input_dim = 0;
  HeadKind head_kind = HeadKind::kSequenceClassification;
  OrderingPolicy ordering_policy = OrderingPolicy::kExplicit;
  std::uint64_t order_seed = 0;

  std::size_t num_labels() const { return label_names.size(); }

  std::vector<std::string> task_ids() const {
    std::vector<std::string> ids;
    ids.reserve(tasks.size());
    for (const auto& t : tasks) ids.push_back(t.task_id);
    return ids;
  }
};

struct SyntheticStreamConfig {
  std::size_t num_tasks = 2;
  std::size_t num_families = 1;
  std::size_t input_dim = 4;
  std::size_t num_labels = 3;
  std::size_t train_per_task = 64;
  std::size_t dev_per_task = 32;
  std::size_t test_per_task = 32;
  double rotation_within_family = 0.0;    // radians, applied per task inside a family
  double rotation_between_families = 0.0; // radians, applied per family index
  double label_prototype_noise = 0.3;     // stddev of the example cloud around each prototype
  HeadKind head_kind = HeadKind::kSequenceClassification;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_families < 1) throw ConfigError("stream: num_families must be >= 1");
    if (num_tasks < num_families)
      throw ConfigError("stream: num_tasks must be >= num_families");
    if (input_dim < 2) throw ConfigError("stream: input_dim must be >= 2");
    if (num_labels < 2) throw ConfigError("stream: num_labels must be >= 2");
    if (head_kind == HeadKind::kTokenLabeling && num_labels % 2 == 0)
      throw ConfigError("stream: token tasks need an odd num_labels (O plus B/I pairs)");
    if (train_per_task == 0 || test_per_task == 0)
      throw ConfigError("stream: train and test splits must be nonempty");
    auto angle_ok = [](double a) { return a >= 0.0 && a <= 3.14159265358979323846; };
    if (!angle_ok(rotation_within_family) || !angle_ok(rotation_between_families))
      throw ConfigError("stream: rotation angles must lie in [0, pi]");
    if (label_prototype_noise < 0.0) throw ConfigError("stream: noise must be >= 0");
  }
};

namespace detail {

constexpr double kProtoRadius = 2.0;
constexpr double kTwoPi = 6.28318530717958647692;

inline std::string family_name(std::size_t family_index) {
  return "fam" + std::to_string(family_index);
}

inline std::string task_name(std::size_t task_index) {
  std::string n = std::to_string(task_index);
  if (n.size() < 2) n = "0" + n;
  return "t" + n;
}

}  // namespace detail

inline std::vector<std::string> synthetic_label_names(const SyntheticStreamConfig& cfg) {
  std::vector<std::string> names;
  if (cfg.head_kind == HeadKind::kTokenLabeling) {
    names.push_back("O");
    for (std::size_t p = 0; p < (cfg.num_labels - 1) / 2; ++p) {
      names.push_back("B-" + std::to_string(p));
      names.push_back("I-" + std::to_string(p));
    }
  } else {
    for (std::size_t c = 0; c < cfg.num_labels; ++c)
      names.push_back("L" + std::to_string(c));
  }
  return names;
}

// Per-label class centers for one task. The base prototypes sit on a circle
// of fixed radius in the first two feature dimensions; task index selects a
// rotation of that circle: family_index * between-family angle plus
// within-family position * within-family angle. Tasks in the same family are
// therefore closer to each other than to tasks of other families. Tasks are
// assigned to families round-robin (task i -> family i mod F).
inline std::vector<std::vector<double>> synthetic_prototypes(const SyntheticStreamConfig& cfg,
                                                             std::size_t task_index) {
  std::size_t family_index = task_index % cfg.num_families;
  std::size_t within_index = task_index / cfg.num_families;
  double angle = cfg.rotation_between_families * static_cast<double>(family_index) +
                 cfg.rotation_within_family * static_cast<double>(within_index);
  std::vector<std::vector<double>> protos;
  protos.reserve(cfg.num_labels);
  for (std::size_t c = 0; c < cfg.num_labels; ++c) {
    double base = detail::kTwoPi * static_cast<double>(c) /
                  static_cast<double>(cfg.num_labels);
    std::vector<double> p(cfg.input_dim, 0.0);
    p[0] = detail::kProtoRadius * std::cos(base + angle);
    p[1] = detail::kProtoRadius * std::sin(base + angle);
    protos.push_back(std::move(p));
  }
  return protos;
}

namespace detail {

inline std::vector<double> noisy_point(const std::vector<double>& proto, double sigma,
                                       Rng& rng) {
  std::vector<double> x(proto.size());
  for (std::size_t d = 0; d < proto.size(); ++d) x[d] = proto[d] + sigma * rng.normal();
  return x;
}

inline std::vector<Example> generate_split(const SyntheticStreamConfig& cfg,
                                           const std::vector<std::vector<double>>& protos,
                                           const std::string& task_id, std::size_t count,
                                           Rng& rng) {
  std::vector<Example> out;
  out.reserve(count);
  std::size_t num_types = (cfg.num_labels - 1) / 2;
  for (std::size_t i = 0; i < count; ++i) {
    Example ex;
    ex.task_id = task_id;
    if (cfg.head_kind == HeadKind::kSequenceClassification) {
      int label = static_cast<int>(i % cfg.num_labels);  // balanced by construction
      ex.features.push_back(noisy_point(protos[label], cfg.label_prototype_noise, rng));
      ex.labels.push_back(label);
    } else {
      std::size_t len = 3 + rng.uniform_index(8);  // 3..10 tokens
      std::size_t pos = 0;
      while (pos < len) {
        if (num_types > 0 && rng.uniform01() < 0.45) {
          std::size_t type = rng.uniform_index(num_types);
          int b_label = static_cast<int>(1 + 2 * type);
          ex.labels.push_back(b_label);
          ++pos;
          while (pos < len && rng.uniform01() < 0.5) {
            ex.labels.push_back(b_label + 1);
            ++pos;
          }
        } else {
          ex.labels.push_back(0);
          ++pos;
        }
      }
      for (int label : ex.labels)
        ex.features.push_back(noisy_point(protos[label], cfg.label_prototype_noise, rng));
    }
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace detail

// Deterministic synthetic task stream; every draw derives from cfg.seed.
inline TaskStream generate_stream(const SyntheticStreamConfig& cfg) {
  cfg.validate();
  TaskStream stream;
  stream.label_names = synthetic_label_names(cfg);
  stream.input_dim = cfg.input_dim;
  stream.head_kind = cfg.head_kind;
  for (std::size_t i = 0; i < cfg.num_tasks; ++i) {
    TaskSpec task;
    task.task_id = detail::task_name(i);
    task.family = detail::family_name(i % cfg.num_families);
    task.head_kind = cfg.head_kind;
    auto protos = synthetic_prototypes(cfg, i);
    Rng train_rng(mix_seed(cfg.seed, rng_tag::kGenerate, i, 0));
    Rng dev_rng(mix_seed(cfg.seed, rng_tag::kGenerate, i, 1));
    Rng test_rng(mix_seed(cfg.seed, rng_tag::kGenerate, i, 2));
    task.train = detail::generate_split(cfg, protos, task.task_id, cfg.train_per_task, train_rng);
    task.dev = detail::generate_split(cfg, protos, task.task_id, cfg.dev_per_task, dev_rng);
    task.test = detail::generate_split(cfg, protos, task.task_id, cfg.test_per_task, test_rng);
    stream.tasks.push_back(std::move(task));
  }
  return stream;
}

// Reorder a stream. random shuffles uniformly by seed; family_grouped keeps
// each family contiguous (family order and within-family order both seeded);
// explicit applies a caller-provided permutation of task ids.
inline TaskStream order_stream(const TaskStream& stream, OrderingPolicy policy,
                               std::uint64_t seed,
                               const std::vector<std::string>& explicit_order = {}) {
  TaskStream out = stream;
  out.ordering_policy = policy;
  out.order_seed = seed;
  if (policy == OrderingPolicy::kRandom) {
    Rng rng(seed);
    rng.shuffle(out.tasks);
  } else if (policy == OrderingPolicy::kFamilyGrouped) {
    Rng rng(seed);
    std::vector<std::string> families;
    std::map<std::string, std::vector<TaskSpec>> grouped;
    for (const auto& t : stream.tasks) {
      if (!grouped.count(t.family)) families.push_back(t.family);
      grouped[t.family].push_back(t);
    }
    rng.shuffle(families);
    out.tasks.clear();
    for (const auto& f : families) {
      auto& members = grouped[f];
      rng.shuffle(members);
      for (auto& t : members) out.tasks.push_back(std::move(t));
    }
  } else {
    std::set<std::string> want(explicit_order.begin(), explicit_order.end());
    std::set<std::string> have;
    for (const auto& t : stream.tasks) have.insert(t.task_id);
    if (want != have || explicit_order.size() != stream.tasks.size())
      throw DataError("explicit order is not a permutation of the stream's task ids");
    out.tasks.clear();
    for (const auto& id : explicit_order) {
      for (const auto& t : stream.tasks) {
        if (t.task_id == id) {
          out.tasks.push_back(t);
          break;
        }
      }
    }
  }
  return out;
}

// FNV-1a, the documented 64-bit token hash.
inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Hashing featurizer: each token maps to index (hash & 2^63-1) mod dim with a
// +/-1 contribution taken from the hash's top bit; the accumulated vector is
// L2-normalized when nonzero.
inline std::vector<double> hash_featurize(const std::vector<std::string>& tokens,
                                          std::size_t dim) {
  if (dim == 0) throw DataError("hash_featurize: dim must be positive");
  std::vector<double> v(dim, 0.0);
  for (const auto& tok : tokens) {
    std::uint64_t h = fnv1a64(tok);
    std::size_t idx = static_cast<std::size_t>((h & 0x7fffffffffffffffULL) % dim);
    v[idx] += (h >> 63) ? -1.0 : 1.0;
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm > 0.0) {
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
  }
  return v;
}

namespace detail {

inline int label_id_for(const std::string& name,
                        const std::map<std::string, int>& vocab, std::size_t line_no) {
  auto it = vocab.find(name);
  if (it == vocab.end())
    throw DataError("line " + std::to_string(line_no) + ": unknown label string '" +
                    name + "' (not in vocabulary file)");
  return it->second;
}

}  // namespace detail

// Load a JSONL dataset. One record per line:
//   {"task_id": str, "family": str, "split": "train"|"dev"|"test",
//    "tokens": [str,...], "labels": [str,...]}            token-labeling task
//   {"task_id", "family", "split", "tokens": [str,...], "label": str}
//                                                          sequence task
// Records may carry pre-computed "features" (one vector for sequence tasks, a
// list of per-token vectors for token tasks) instead of "tokens"; token
// strings are hash-featurized to hash_dim at load. The label vocabulary is
// read from <path>.labels, one label string per line (line number = id).
inline TaskStream load_stream(const std::string& path, std::size_t hash_dim) {
  std::ifstream vocab_in(path + ".labels");
  if (!vocab_in) throw DataError("cannot open label vocabulary file " + path + ".labels");
  std::vector<std::string> label_names;
  std::map<std::string, int> vocab;
  for (std::string line; std::getline(vocab_in, line);) {
    if (line.empty()) continue;
    vocab[line] = static_cast<int>(label_names.size());
    label_names.push_back(line);
  }
  if (label_names.size() < 2) throw DataError("label vocabulary must define >= 2 labels");

  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file " + path);

  TaskStream stream;
  stream.label_names = label_names;
  std::map<std::string, std::size_t> task_index;
  std::size_t input_dim = 0;
  bool head_known = false;

  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("line " + std::to_string(line_no) + ": malformed record: " + e.what());
    }
    auto require = [&](const char* key) {
      if (!rec.contains(key))
        throw DataError("line " + std::to_string(line_no) + ": missing field '" +
                        key + "'");
    };
    require("task_id");
    require("family");
    require("split");
    std::string task_id = rec["task_id"].get<std::string>();
    std::string family = rec["family"].get<std::string>();
    std::string split = rec["split"].get<std::string>();
    if (split != "train" && split != "dev" && split != "test")
      throw DataError("line " + std::to_string(line_no) + ": bad split '" + split + "'");

    bool is_token = rec.contains("labels");
    if (!is_token && !rec.contains("label"))
      throw DataError("line " + std::to_string(line_no) + ": record needs 'label' or 'labels'");
    HeadKind head = is_token ? HeadKind::kTokenLabeling : HeadKind::kSequenceClassification;
    if (head_known && head != stream.head_kind)
      throw DataError("line " + std::to_string(line_no) + ": mixed task kinds in one dataset");
    stream.head_kind = head;
    head_known = true;

    Example ex;
    ex.task_id = task_id;
    try {
      if (is_token) {
        for (const auto& name : rec["labels"])
          ex.labels.push_back(detail::label_id_for(name.get<std::string>(), vocab, line_no));
        if (rec.contains("features")) {
          for (const auto& row : rec["features"])
            ex.features.push_back(row.get<std::vector<double>>());
        } else {
          require("tokens");
          for (const auto& tok : rec["tokens"])
            ex.features.push_back(hash_featurize({tok.get<std::string>()}, hash_dim));
        }
        if (ex.features.size() != ex.labels.size())
          throw DataError("line " + std::to_string(line_no) +
                          ": tokens and labels differ in length");
      } else {
        ex.labels.push_back(
            detail::label_id_for(rec["label"].get<std::string>(), vocab, line_no));
        if (rec.contains("features")) {
          ex.features.push_back(rec["features"].get<std::vector<double>>());
        } else {
          require("tokens");
          std::vector<std::string> tokens;
          for (const auto& tok : rec["tokens"]) tokens.push_back(tok.get<std::string>());
          ex.features.push_back(hash_featurize(tokens, hash_dim));
        }
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError("line " + std::to_string(line_no) + ": malformed record: " + e.what());
    }

    for (const auto& f : ex.features) {
      if (input_dim == 0) input_dim = f.size();
      if (f.size() != input_dim)
        throw DataError("line " + std::to_string(line_no) + ": feature width " +
                        std::to_string(f.size()) + " differs from established input dim " +
                        std::to_string(input_dim));
    }

    if (!task_index.count(task_id)) {
      task_index[task_id] = stream.tasks.size();
      TaskSpec t;
      t.task_id = task_id;
      t.family = family;
      t.head_kind = head;
      stream.tasks.push_back(std::move(t));
    }
    TaskSpec& task = stream.tasks[task_index[task_id]];
    if (task.family != family)
      throw DataError("line " + std::to_string(line_no) + ": task '" + task_id +
                      "' listed under two families");
    if (split == "train")
      task.train.push_back(std::move(ex));
    else if (split == "dev")
      task.dev.push_back(std::move(ex));
    else
      task.test.push_back(std::move(ex));
  }

  if (stream.tasks.empty()) throw DataError("dataset " + path + " holds no records");
  for (const auto& t : stream.tasks) {
    if (t.train.empty() || t.test.empty())
      throw DataError("task '" + t.task_id + "' needs nonempty train and test splits");
  }
  stream.input_dim = input_dim;
  return stream;
}

// Counterpart of load_stream: serialize a stream to JSONL (features form)
// plus the <path>.labels vocabulary file.
inline void save_stream_jsonl(const TaskStream& stream, const std::string& path) {
  std::ofstream vocab_out(path + ".labels", std::ios::binary);
  if (!vocab_out) throw DataError("cannot write vocabulary file " + path + ".labels");
  for (const auto& name : stream.label_names) vocab_out << name << "\n";

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write dataset file " + path);
  auto write_split = [&](const TaskSpec& task, const std::vector<Example>& split,
                         const char* split_name) {
    for (const Example& ex : split) {
      nlohmann::ordered_json rec;
      rec["task_id"] = task.task_id;
      rec["family"] = task.family;
      rec["split"] = split_name;
      if (task.head_kind == HeadKind::kTokenLabeling) {
        rec["features"] = ex.features;
        std::vector<std::string> labels;
        for (int y : ex.labels) labels.push_back(stream.label_names[static_cast<std::size_t>(y)]);
        rec["labels"] = labels;
      } else {
        rec["features"] = ex.features[0];
        rec["label"] = stream.label_names[static_cast<std::size_t>(ex.labels[0])];
      }
      out << rec.dump() << "\n";
    }
  };
  for (const TaskSpec& task : stream.tasks) {
    write_split(task, task.train, "train");
    write_split(task, task.dev, "dev");
    write_split(task, task.test, "test");
  }
}

}  // namespace seqcl
