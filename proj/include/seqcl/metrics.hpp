#pragma once

#include <cmath>
#include <cstdio>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "seqcl/errors.hpp"
#include "seqcl/model.hpp"
#include "seqcl/tasks.hpp"

namespace seqcl {

// Micro-averaged F1 in [0,100] over single-label instances. Every wrong
// prediction is one false positive (for the predicted class) and one false
// negative (for the gold class), so this equals accuracy.
inline double micro_f1(const std::vector<int>& predictions, const std::vector<int>& golds) {
  if (predictions.size() != golds.size())
    throw DataError("micro_f1: predictions and golds differ in length");
  if (predictions.empty()) throw DataError("micro_f1: empty inputs");
  std::size_t tp = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    if (predictions[i] == golds[i]) ++tp;
  return 100.0 * static_cast<double>(tp) / static_cast<double>(predictions.size());
}

struct Span {
  std::string type;
  std::size_t start = 0;  // token index, inclusive
  std::size_t end = 0;    // token index, exclusive

  bool operator<(const Span& o) const {
    return std::tie(type, start, end) < std::tie(o.type, o.start, o.end);
  }
  bool operator==(const Span& o) const {
    return type == o.type && start == o.start && end == o.end;
  }
};

// Decode BIO tags into typed spans. A span is a B-X followed by I-X of the
// same type; a bare I-X (no live span of its type) starts a new span.
inline std::vector<Span> decode_bio(const std::vector<int>& labels,
                                    const std::vector<std::string>& label_names) {
  std::vector<Span> spans;
  bool open = false;
  Span cur;
  auto close = [&](std::size_t end) {
    if (open) {
      cur.end = end;
      spans.push_back(cur);
      open = false;
    }
  };
  for (std::size_t i = 0; i < labels.size(); ++i) {
    int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= label_names.size())
      throw DataError("decode_bio: unknown label id " + std::to_string(y));
    const std::string& name = label_names[static_cast<std::size_t>(y)];
    if (name == "O") {
      close(i);
    } else if (name.rfind("B-", 0) == 0) {
      close(i);
      cur.type = name.substr(2);
      cur.start = i;
      open = true;
    } else if (name.rfind("I-", 0) == 0) {
      std::string type = name.substr(2);
      if (!(open && cur.type == type)) {
        close(i);
        cur.type = type;
        cur.start = i;
        open = true;
      }
    } else {
      throw DataError("decode_bio: label '" + name + "' is neither O nor B-/I- tagged");
    }
  }
  close(labels.size());
  return spans;
}

// Exact-match span F1 in [0,100] over (type, start, end) triples. 100 when
// neither side has any span; 0 when precision and recall are both 0.
inline double span_f1(const std::vector<std::vector<int>>& pred_seqs,
                      const std::vector<std::vector<int>>& gold_seqs,
                      const std::vector<std::string>& label_names) {
  if (pred_seqs.size() != gold_seqs.size())
    throw DataError("span_f1: pred and gold sequence counts differ");
  std::size_t tp = 0, num_pred = 0, num_gold = 0;
  for (std::size_t s = 0; s < pred_seqs.size(); ++s) {
    if (pred_seqs[s].size() != gold_seqs[s].size())
      throw DataError("span_f1: sequence " + std::to_string(s) + " lengths differ");
    auto pred = decode_bio(pred_seqs[s], label_names);
    auto gold = decode_bio(gold_seqs[s], label_names);
    std::set<Span> gold_set(gold.begin(), gold.end());
    for (const Span& p : pred)
      if (gold_set.count(p)) ++tp;
    num_pred += pred.size();
    num_gold += gold.size();
  }
  if (num_pred == 0 && num_gold == 0) return 100.0;
  double precision = num_pred ? static_cast<double>(tp) / static_cast<double>(num_pred) : 0.0;
  double recall = num_gold ? static_cast<double>(tp) / static_cast<double>(num_gold) : 0.0;
  if (precision + recall == 0.0) return 0.0;
  return 100.0 * 2.0 * precision * recall / (precision + recall);
}

// Score a model on one test split with the metric matching the head kind.
inline double evaluate_split(const ParameterVector& theta, const ModelConfig& cfg,
                             const std::vector<Example>& data,
                             const std::vector<std::string>& label_names) {
  if (data.empty()) throw DataError("evaluate_split: empty split");
  if (cfg.head_kind == HeadKind::kTokenLabeling) {
    std::vector<std::vector<int>> preds, golds;
    preds.reserve(data.size());
    golds.reserve(data.size());
    for (const Example& ex : data) {
      preds.push_back(predict(theta, cfg, ex));
      golds.push_back(ex.labels);
    }
    return span_f1(preds, golds, label_names);
  }
  std::vector<int> preds, golds;
  preds.reserve(data.size());
  golds.reserve(data.size());
  for (const Example& ex : data) {
    preds.push_back(predict(theta, cfg, ex)[0]);
    golds.push_back(ex.labels[0]);
  }
  return micro_f1(preds, golds);
}

// The T x T score matrix R: row = training stage, column = task. Cell (i, j)
// holds the test score on task j of the model as it stood after stage i.
// Rows are recorded in strictly increasing stage order; a run mode that only
// evaluates some stages or some tasks leaves the other cells empty.
class ScoreMatrix {
 public:
  ScoreMatrix() = default;

  explicit ScoreMatrix(std::vector<std::string> task_ids) : task_ids_(std::move(task_ids)) {
    if (task_ids_.empty()) throw DataError("ScoreMatrix: needs at least one task");
    cells_.assign(task_ids_.size() * task_ids_.size(), std::nullopt);
  }

  std::size_t num_tasks() const { return task_ids_.size(); }
  const std::vector<std::string>& task_ids() const { return task_ids_; }

  // stage and task are 1-based.
  void record_row(std::size_t stage, const std::vector<std::optional<double>>& row) {
    std::size_t T = num_tasks();
    if (stage < 1 || stage > T)
      throw StateError("record_row: stage " + std::to_string(stage) + " outside 1.." +
                       std::to_string(T));
    if (stage <= last_stage_)
      throw StateError("record_row: stage " + std::to_string(stage) +
                       " already recorded or out of order");
    if (row.size() != T) throw DataError("record_row: row width does not match task count");
    for (const auto& v : row) {
      if (v && (!std::isfinite(*v) || *v < 0.0 || *v > 100.0))
        throw DataError("record_row: scores must be finite percentages in [0,100]");
    }
    for (std::size_t j = 0; j < T; ++j) cells_[(stage - 1) * T + j] = row[j];
    last_stage_ = stage;
    stages_.push_back(stage);
  }

  const std::optional<double>& cell(std::size_t stage, std::size_t task) const {
    std::size_t T = num_tasks();
    if (stage < 1 || stage > T || task < 1 || task > T)
      throw StateError("ScoreMatrix::cell: index out of range");
    return cells_[(stage - 1) * T + (task - 1)];
  }

  bool row_recorded(std::size_t stage) const {
    for (std::size_t s : stages_)
      if (s == stage) return true;
    return false;
  }

  std::size_t last_recorded_stage() const { return last_stage_; }
  const std::vector<std::size_t>& recorded_stages() const { return stages_; }

  // Mean over the cells present among the first `stage` columns of that row.
  double row_mean_over_seen(std::size_t stage) const {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t j = 1; j <= stage; ++j) {
      const auto& v = cell(stage, j);
      if (v) {
        sum += *v;
        ++n;
      }
    }
    if (n == 0) throw StateError("row_mean_over_seen: row " + std::to_string(stage) + " is empty");
    return sum / static_cast<double>(n);
  }

 private:
  std::vector<std::string> task_ids_;
  std::vector<std::optional<double>> cells_;
  std::vector<std::size_t> stages_;
  std::size_t last_stage_ = 0;
};

// Evaluate the current model on every task's test split (later tasks give
// zero-shot scores) and store the result as row `stage`.
inline void record_row(ScoreMatrix& R, std::size_t stage, const ParameterVector& theta,
                       const ModelConfig& cfg, const TaskStream& stream) {
  if (stream.tasks.size() != R.num_tasks())
    throw DataError("record_row: stream and matrix disagree on task count");
  std::vector<std::optional<double>> row;
  row.reserve(stream.tasks.size());
  for (const TaskSpec& task : stream.tasks)
    row.push_back(evaluate_split(theta, cfg, task.test, stream.label_names));
  R.record_row(stage, row);
}

enum class CbtRow { kFinal, kTMinus1 };

namespace detail {

inline double require_cell(const ScoreMatrix& R, std::size_t stage, std::size_t task,
                           const char* what) {
  const auto& v = R.cell(stage, task);
  if (!v)
    throw StateError(std::string(what) + ": cell (" + std::to_string(stage) + ", " +
                     std::to_string(task) + ") was never recorded");
  return *v;
}

}  // namespace detail

// Average zero-shot score on future tasks: mean over stages i < T of the mean
// score on tasks j > i as of stage i.
inline double cft(const ScoreMatrix& R) {
  std::size_t T = R.num_tasks();
  if (T < 2) throw StateError("cft: transfer metrics need at least two tasks");
  double acc = 0.0;
  for (std::size_t i = 1; i <= T - 1; ++i) {
    double row = 0.0;
    for (std::size_t j = i + 1; j <= T; ++j) row += detail::require_cell(R, i, j, "cft");
    acc += row / static_cast<double>(T - i);
  }
  return acc / static_cast<double>(T - 1);
}

// Average score change on past tasks after the curriculum ends; negative
// values quantify forgetting. kFinal compares against the row recorded after
// the last task; kTMinus1 preserves the literal next-to-last-row reading.
inline double cbt(const ScoreMatrix& R, CbtRow row = CbtRow::kFinal) {
  std::size_t T = R.num_tasks();
  if (T < 2) throw StateError("cbt: transfer metrics need at least two tasks");
  std::size_t final_stage = (row == CbtRow::kFinal) ? T : T - 1;
  double acc = 0.0;
  for (std::size_t i = 1; i <= T - 1; ++i) {
    acc += detail::require_cell(R, final_stage, i, "cbt") -
           detail::require_cell(R, i, i, "cbt");
  }
  return acc / static_cast<double>(T - 1);
}

// Per-seed evaluation summary. Averages are recomputed from the per-task
// scores they summarize.
struct EvalReport {
  std::string method;
  std::uint64_t seed = 0;
  std::vector<std::optional<double>> final_task_f1;  // last recorded row
  double average_f1 = 0.0;                           // mean of present cells above
  std::optional<double> cft_value;
  std::optional<double> cbt_value;
};

namespace detail {

inline std::string format_score(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

// CSV form: header "stage,<task ids...>", one line per recorded stage, empty
// fields for cells that were never evaluated.
inline std::string to_csv(const ScoreMatrix& R) {
  std::ostringstream out;
  out << "stage";
  for (const auto& id : R.task_ids()) out << "," << id;
  out << "\n";
  for (std::size_t stage : R.recorded_stages()) {
    out << stage;
    for (std::size_t j = 1; j <= R.num_tasks(); ++j) {
      out << ",";
      const auto& v = R.cell(stage, j);
      if (v) out << detail::format_score(*v);
    }
    out << "\n";
  }
  return out.str();
}

inline ScoreMatrix score_matrix_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError("score matrix CSV is empty");
  auto split = [](const std::string& s) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ls(s);
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (!s.empty() && s.back() == ',') fields.push_back("");
    return fields;
  };
  auto header = split(line);
  if (header.size() < 2 || header[0] != "stage")
    throw DataError("score matrix CSV header must read 'stage,<task ids...>'");
  ScoreMatrix R(std::vector<std::string>(header.begin() + 1, header.end()));
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = split(line);
    if (fields.size() != header.size())
      throw DataError("line " + std::to_string(line_no) + ": expected " +
                      std::to_string(header.size()) + " fields, found " +
                      std::to_string(fields.size()));
    std::size_t stage = 0;
    try {
      stage = static_cast<std::size_t>(std::stoul(fields[0]));
    } catch (const std::exception&) {
      throw DataError("line " + std::to_string(line_no) + ": bad stage '" + fields[0] + "'");
    }
    std::vector<std::optional<double>> row;
    for (std::size_t j = 1; j < fields.size(); ++j) {
      if (fields[j].empty()) {
        row.push_back(std::nullopt);
        continue;
      }
      try {
        row.push_back(std::stod(fields[j]));
      } catch (const std::exception&) {
        throw DataError("line " + std::to_string(line_no) + ": bad score '" + fields[j] + "'");
      }
    }
    R.record_row(stage, row);
  }
  return R;
}

}  // namespace seqcl
