#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "seqcl/harness.hpp"

namespace {

using namespace seqcl;

std::string format_pm(double mean, double stdev) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f +- %.2f", mean, stdev);
  return buf;
}

int cmd_run(const std::string& config_path, const std::vector<std::string>& overrides,
            const std::string& out_dir) {
  ExperimentConfig cfg = load_config_file(config_path, overrides);
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  RunResult result = run_experiment(cfg);
  write_run_result(cfg.output_dir, result);

  std::cout << "method: " << result.method_label << "\n";
  std::cout << "seeds: " << result.per_seed.size() << "\n";
  std::cout << "final_average: "
            << format_pm(result.final_average.mean, result.final_average.stdev) << "\n";
  if (result.cft) std::cout << "cft: " << format_pm(result.cft->mean, result.cft->stdev) << "\n";
  if (result.cbt) std::cout << "cbt: " << format_pm(result.cbt->mean, result.cbt->stdev) << "\n";
  std::cout << "wrote " << cfg.output_dir << "/result.json\n";
  return 0;
}

int cmd_generate_data(const std::string& config_path, const std::vector<std::string>& overrides,
                      const std::string& out_path) {
  ExperimentConfig cfg = load_config_file(config_path, overrides);
  TaskStream stream = generate_stream(cfg.synthetic);
  std::filesystem::path parent = std::filesystem::path(out_path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  save_stream_jsonl(stream, out_path);
  std::cout << "wrote " << out_path << " (" << stream.tasks.size() << " tasks, "
            << out_path << ".labels)\n";
  return 0;
}

int cmd_metrics(const std::string& csv_path, const std::string& cbt_row_name) {
  std::ifstream in(csv_path, std::ios::binary);
  if (!in) throw DataError("cannot open score matrix " + csv_path);
  std::string text(std::istreambuf_iterator<char>(in), {});
  ScoreMatrix R = score_matrix_from_csv(text);

  CbtRow row = CbtRow::kFinal;
  if (cbt_row_name == "T_minus_1")
    row = CbtRow::kTMinus1;
  else if (cbt_row_name != "final")
    throw ConfigError("--cbt-row must be 'final' or 'T_minus_1'");

  nlohmann::ordered_json doc;
  try {
    doc["cft"] = cft(R);
  } catch (const StateError&) {
    doc["cft"] = nullptr;
  }
  try {
    doc["cbt"] = cbt(R, row);
  } catch (const StateError&) {
    doc["cbt"] = nullptr;
  }
  std::cout << doc.dump(2) << "\n";
  return 0;
}

struct CompareRow {
  std::string method;
  std::optional<double> final_mean, final_std;
  std::optional<double> cft_mean, cft_std;
  std::optional<double> cbt_mean, cbt_std;
};

int cmd_compare(const std::vector<std::string>& paths) {
  std::vector<CompareRow> rows;
  for (const std::string& path : paths) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open result file " + path);
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("result file " + path + " is not valid JSON: " + e.what());
    }
    if (!doc.contains("aggregate") || !doc.contains("method"))
      throw DataError("result file " + path + " lacks a method or aggregate section");
    CompareRow row;
    row.method = doc["method"].get<std::string>();
    const auto& agg = doc["aggregate"];
    auto read_stat = [&](const char* key, std::optional<double>& mean,
                         std::optional<double>& stdev) {
      if (!agg.contains(key) || agg[key].is_null()) return;
      mean = agg[key]["mean"].get<double>();
      stdev = agg[key]["std"].get<double>();
    };
    read_stat("final_average", row.final_mean, row.final_std);
    read_stat("cft", row.cft_mean, row.cft_std);
    read_stat("cbt", row.cbt_mean, row.cbt_std);
    rows.push_back(row);
  }

  auto best_of = [&](auto pick) -> std::optional<std::size_t> {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::optional<double> v = pick(rows[i]);
      if (!v) continue;
      if (!best || *v > *pick(rows[*best])) best = i;
    }
    return best;
  };
  auto best_final = best_of([](const CompareRow& r) { return r.final_mean; });
  auto best_cft = best_of([](const CompareRow& r) { return r.cft_mean; });
  auto best_cbt = best_of([](const CompareRow& r) { return r.cbt_mean; });

  auto cell = [&](std::optional<double> mean, std::optional<double> stdev, bool best) {
    if (!mean) return std::string("-");
    return (best ? "*" : "") + format_pm(*mean, stdev.value_or(0.0));
  };
  std::printf("%-24s %-20s %-20s %-20s\n", "method", "final_avg", "CFT", "CBT");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const CompareRow& r = rows[i];
    std::printf("%-24s %-20s %-20s %-20s\n", r.method.c_str(),
                cell(r.final_mean, r.final_std, best_final == i).c_str(),
                cell(r.cft_mean, r.cft_std, best_cft == i).c_str(),
                cell(r.cbt_mean, r.cbt_std, best_cbt == i).c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential task-stream training and forgetting metrics"};
  app.require_subcommand(1);
  app.footer(
      "Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric error.");

  std::string config_path, out_dir, out_path, csv_path, cbt_row = "final";
  std::vector<std::string> overrides, result_paths;

  CLI::App* run = app.add_subcommand("run", "Run an experiment and write its artifacts");
  run->add_option("--config", config_path, "experiment config (JSON)")->required();
  run->add_option("--set", overrides, "override a config key, e.g. lr.gamma=0.5");
  run->add_option("--out", out_dir, "output directory (defaults to output_dir in the config)");

  CLI::App* gen = app.add_subcommand("generate-data", "Write the configured synthetic stream");
  gen->add_option("--config", config_path, "experiment config (JSON)")->required();
  gen->add_option("--set", overrides, "override a config key");
  gen->add_option("--out", out_path, "output JSONL path")->required();

  CLI::App* metrics = app.add_subcommand("metrics", "Compute CFT/CBT from a score matrix CSV");
  metrics->add_option("--r", csv_path, "score matrix CSV")->required();
  metrics->add_option("--cbt-row", cbt_row, "'final' (default) or 'T_minus_1'");

  CLI::App* compare = app.add_subcommand("compare", "Tabulate result.json files side by side");
  compare->add_option("results", result_paths, "result.json paths")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*run) return cmd_run(config_path, overrides, out_dir);
    if (*gen) return cmd_generate_data(config_path, overrides, out_path);
    if (*metrics) return cmd_metrics(csv_path, cbt_row);
    if (*compare) return cmd_compare(result_paths);
  } catch (const seqcl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const seqcl::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const seqcl::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
