#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

using nlohmann::json;

namespace {

namespace fs = std::filesystem;

struct CmdResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

fs::path scratch() {
  static fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("seqcl_cli_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void spit(const fs::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  out << body;
}

CmdResult cli(const std::string& args) {
  fs::path out = scratch() / "stdout.txt";
  fs::path err = scratch() / "stderr.txt";
  std::string cmd = std::string(SEQCL_CLI_PATH) + " " + args + " > " + out.string() + " 2> " +
                    err.string();
  int rc = std::system(cmd.c_str());
  CmdResult result;
  result.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  result.out = slurp(out);
  result.err = slurp(err);
  return result;
}

// Small stream, short training: every run here finishes in well under a second.
fs::path write_config(const std::string& name, const std::string& extra = "") {
  fs::path path = scratch() / name;
  spit(path, R"({
  "seeds": [11, 23],
  "stream": {"synthetic": {"num_tasks": 3, "num_families": 1, "input_dim": 4,
    "train_per_task": 24, "dev_per_task": 9, "test_per_task": 12,
    "rotation_within_family": 0.7, "rotation_between_families": 0.0, "seed": 5}},
  "model": {"hidden_dims": [8]},
  "training": {"batch_size": 16, "max_epochs": 6, "patience": 2},
  "lr": {"lr0": 0.4})" +
            std::string(extra.empty() ? "" : ",\n  " + extra) + "\n}");
  return path;
}

}  // namespace

TEST_CASE("run writes artifacts and reports where they went") {
  fs::path cfg = write_config("run.json");
  fs::path out = scratch() / "run_out";
  CmdResult r = cli("run --config " + cfg.string() + " --out " + out.string());
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("result.json") != std::string::npos);
  CHECK(fs::exists(out / "result.json"));
  CHECK(fs::exists(out / "R_seed11.csv"));
  CHECK(fs::exists(out / "R_seed23.csv"));
  CHECK(fs::exists(out / "curve.csv"));
  CHECK(fs::exists(out / "run_meta.json"));

  json doc = json::parse(slurp(out / "result.json"));
  CHECK(doc["method"] == "vanilla");
  CHECK(doc["seeds"].size() == 2);
  CHECK(doc["config"]["lr"]["lr0"] == 0.4);
}

TEST_CASE("metrics on the written matrices matches result.json") {
  fs::path cfg = write_config("roundtrip.json");
  fs::path out = scratch() / "roundtrip_out";
  REQUIRE(cli("run --config " + cfg.string() + " --out " + out.string()).exit_code == 0);

  json doc = json::parse(slurp(out / "result.json"));
  for (const json& seed_entry : doc["seeds"]) {
    std::string csv = seed_entry["matrix_csv"].get<std::string>();
    CmdResult r = cli("metrics --r " + (out / csv).string());
    REQUIRE(r.exit_code == 0);
    json m = json::parse(r.out);
    REQUIRE(m["cft"].is_number());
    REQUIRE(m["cbt"].is_number());
    CHECK(m["cft"].get<double>() ==
          Catch::Approx(seed_entry["cft"].get<double>()).margin(1e-9));
    CHECK(m["cbt"].get<double>() ==
          Catch::Approx(seed_entry["cbt"].get<double>()).margin(1e-9));
  }
}

TEST_CASE("metrics computes the documented worked example and cbt row switch") {
  fs::path csv = scratch() / "worked.csv";
  spit(csv, "stage,a,b\n1,90,60\n2,70,80\n");
  CmdResult r = cli("metrics --r " + csv.string());
  REQUIRE(r.exit_code == 0);
  json m = json::parse(r.out);
  CHECK(m["cft"].get<double>() == Catch::Approx(60.0).margin(1e-12));
  CHECK(m["cbt"].get<double>() == Catch::Approx(-20.0).margin(1e-12));

  CmdResult alt = cli("metrics --r " + csv.string() + " --cbt-row T_minus_1");
  REQUIRE(alt.exit_code == 0);
  CHECK(json::parse(alt.out)["cbt"].get<double>() == Catch::Approx(0.0).margin(1e-12));

  CmdResult bad = cli("metrics --r " + csv.string() + " --cbt-row middle");
  CHECK(bad.exit_code == 2);
}

TEST_CASE("set overrides flow into the run and its metadata") {
  fs::path cfg = write_config("override.json");
  fs::path out = scratch() / "override_out";
  CmdResult r = cli("run --config " + cfg.string() + " --set strategy.kind=ewc" +
                    " --set strategy.ewc_lambda=2.5 --set strategy.fisher_num_samples=16" +
                    " --out " + out.string());
  REQUIRE(r.exit_code == 0);
  json doc = json::parse(slurp(out / "result.json"));
  CHECK(doc["method"] == "ewc");
  CHECK(doc["config"]["method"] == "ewc");
  CHECK(doc["config"]["strategy"]["kind"] == "ewc");
  CHECK(doc["config"]["strategy"]["ewc_lambda"] == 2.5);
}

TEST_CASE("config problems exit with code 2") {
  fs::path cfg = write_config("bad.json");
  CHECK(cli("run --config " + cfg.string() + " --set lr.gamma=1.5").exit_code == 2);
  CHECK(cli("run --config " + cfg.string() + " --set lr.bogus=1").exit_code == 2);
  CHECK(cli("run --config /nonexistent/cfg.json").exit_code == 2);
  CHECK(cli("run --config " + cfg.string() + " --warp 9").exit_code == 2);
  CHECK(cli("frobnicate").exit_code == 2);
  CHECK(cli("").exit_code == 2);

  fs::path broken = scratch() / "broken.json";
  spit(broken, "{oops");
  CHECK(cli("run --config " + broken.string()).exit_code == 2);
}

TEST_CASE("data problems exit with code 3") {
  CHECK(cli("metrics --r /nonexistent/matrix.csv").exit_code == 3);
  fs::path junk = scratch() / "junk.csv";
  spit(junk, "this,is\nnot a matrix\n");
  CHECK(cli("metrics --r " + junk.string()).exit_code == 3);

  fs::path cfg = write_config("missing_data.json",
                              R"("output_dir": "unused")");
  CHECK(cli("run --config " + cfg.string() +
            " --set stream.source=jsonl --set stream.path=/nonexistent/data.jsonl")
            .exit_code == 3);
  CHECK(cli("compare /nonexistent/result.json").exit_code == 3);
}

TEST_CASE("generated data reloads into an identical run") {
  fs::path cfg = write_config("gen.json");
  fs::path data = scratch() / "gen_stream.jsonl";
  CmdResult g = cli("generate-data --config " + cfg.string() + " --out " + data.string());
  REQUIRE(g.exit_code == 0);
  REQUIRE(fs::exists(data));
  REQUIRE(fs::exists(data.string() + ".labels"));

  fs::path out_syn = scratch() / "gen_out_syn";
  fs::path out_jsonl = scratch() / "gen_out_jsonl";
  REQUIRE(cli("run --config " + cfg.string() + " --out " + out_syn.string()).exit_code == 0);
  REQUIRE(cli("run --config " + cfg.string() + " --set stream.source=jsonl --set stream.path=" +
              data.string() + " --out " + out_jsonl.string())
              .exit_code == 0);

  json a = json::parse(slurp(out_syn / "result.json"));
  json b = json::parse(slurp(out_jsonl / "result.json"));
  CHECK(a["seeds"] == b["seeds"]);
  CHECK(a["aggregate"] == b["aggregate"]);
}

TEST_CASE("compare tabulates runs in input order and marks the best") {
  fs::path cfg = write_config("cmp.json");
  fs::path out_v = scratch() / "cmp_vanilla";
  fs::path out_m = scratch() / "cmp_multi";
  REQUIRE(cli("run --config " + cfg.string() + " --out " + out_v.string()).exit_code == 0);
  REQUIRE(cli("run --config " + cfg.string() + " --set method=multi --out " + out_m.string())
              .exit_code == 0);

  CmdResult r = cli("compare " + out_v.string() + "/result.json " + out_m.string() +
                    "/result.json");
  REQUIRE(r.exit_code == 0);
  std::size_t pos_v = r.out.find("vanilla");
  std::size_t pos_m = r.out.find("multi");
  REQUIRE(pos_v != std::string::npos);
  REQUIRE(pos_m != std::string::npos);
  CHECK(pos_v < pos_m);  // input order
  CHECK(r.out.find('*') != std::string::npos);
  CHECK(r.out.find("CFT") != std::string::npos);
  CHECK(r.out.find('-') != std::string::npos);  // multi has no CFT/CBT

  CmdResult swapped = cli("compare " + out_m.string() + "/result.json " + out_v.string() +
                          "/result.json");
  REQUIRE(swapped.exit_code == 0);
  CHECK(swapped.out.find("multi") < swapped.out.find("vanilla"));
}

TEST_CASE("help names the exit codes") {
  CmdResult r = cli("--help");
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("Exit codes") != std::string::npos);
  CHECK(cli("run --help").exit_code == 0);
}
