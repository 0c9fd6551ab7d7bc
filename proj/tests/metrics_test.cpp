#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "seqcl/metrics.hpp"
#include "seqcl/rng.hpp"
#include "seqcl/tasks.hpp"
#include "support/oracles.hpp"

using namespace seqcl;

namespace {

std::vector<std::string> ids_for(std::size_t t) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < t; ++i) ids.push_back("t" + std::to_string(i));
  return ids;
}

ScoreMatrix matrix_from(const std::vector<std::vector<double>>& rows) {
  ScoreMatrix R(ids_for(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::vector<std::optional<double>> row(rows[i].begin(), rows[i].end());
    R.record_row(i + 1, row);
  }
  return R;
}

const std::vector<std::string> kBio = {"O", "B-X", "I-X", "B-Y", "I-Y"};

int bio_id(const std::string& name) {
  for (std::size_t i = 0; i < kBio.size(); ++i)
    if (kBio[i] == name) return static_cast<int>(i);
  throw std::runtime_error("bad test label " + name);
}

std::vector<int> tags(const std::vector<std::string>& names) {
  std::vector<int> out;
  for (const auto& n : names) out.push_back(bio_id(n));
  return out;
}

}  // namespace

TEST_CASE("micro_f1 worked examples") {
  CHECK(micro_f1({0, 1, 2}, {0, 1, 2}) == 100.0);
  CHECK(micro_f1({0, 0, 0}, {0, 1, 2}) == Catch::Approx(100.0 / 3.0));
  CHECK_THROWS_AS(micro_f1({}, {}), DataError);
  CHECK_THROWS_AS(micro_f1({0, 1}, {0}), DataError);
}

TEST_CASE("micro_f1 equals accuracy for single-label classification") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::size_t n = 1 + rng.uniform_index(40);
    std::vector<int> preds, golds;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
      preds.push_back(static_cast<int>(rng.uniform_index(5)));
      golds.push_back(static_cast<int>(rng.uniform_index(5)));
      if (preds.back() == golds.back()) ++hits;
    }
    double acc = 100.0 * static_cast<double>(hits) / static_cast<double>(n);
    CHECK(micro_f1(preds, golds) == Catch::Approx(acc).margin(1e-12));
  }
}

TEST_CASE("decode_bio") {
  SECTION("B then I forms one span") {
    auto spans = decode_bio(tags({"B-X", "I-X", "O"}), kBio);
    REQUIRE(spans.size() == 1);
    CHECK(spans[0] == Span{"X", 0, 2});
  }
  SECTION("type switch splits spans") {
    auto spans = decode_bio(tags({"B-X", "I-Y"}), kBio);
    REQUIRE(spans.size() == 2);
    CHECK(spans[0] == Span{"X", 0, 1});
    CHECK(spans[1] == Span{"Y", 1, 2});
  }
  SECTION("bare I starts a new span") {
    auto spans = decode_bio(tags({"O", "I-X", "I-X"}), kBio);
    REQUIRE(spans.size() == 1);
    CHECK(spans[0] == Span{"X", 1, 3});
  }
  SECTION("adjacent B tags start fresh spans") {
    auto spans = decode_bio(tags({"B-X", "B-X"}), kBio);
    REQUIRE(spans.size() == 2);
    CHECK(spans[0] == Span{"X", 0, 1});
    CHECK(spans[1] == Span{"X", 1, 2});
  }
  SECTION("span running to the end is closed") {
    auto spans = decode_bio(tags({"O", "B-Y", "I-Y"}), kBio);
    REQUIRE(spans.size() == 1);
    CHECK(spans[0] == Span{"Y", 1, 3});
  }
  SECTION("unknown label id") {
    CHECK_THROWS_AS(decode_bio({7}, kBio), DataError);
    CHECK_THROWS_AS(decode_bio({-1}, kBio), DataError);
  }
  SECTION("malformed vocabulary name") {
    CHECK_THROWS_AS(decode_bio({0}, {"PLAIN"}), DataError);
  }
}

TEST_CASE("span_f1 worked examples") {
  CHECK(span_f1({tags({"B-X", "I-X", "O"})}, {tags({"B-X", "I-X", "O"})}, kBio) == 100.0);
  CHECK(span_f1({tags({"B-X", "O", "O"})}, {tags({"B-X", "I-X", "O"})}, kBio) == 0.0);
  CHECK(span_f1({tags({"O", "O", "O"})}, {tags({"O", "O", "O"})}, kBio) == 100.0);
}

TEST_CASE("span_f1 counting") {
  SECTION("partial credit across spans") {
    // gold holds spans X[0,2) and Y[3,4); pred hits X exactly, invents Y at 2.
    auto gold = tags({"B-X", "I-X", "O", "B-Y"});
    auto pred = tags({"B-X", "I-X", "B-Y", "O"});
    // tp=1, pred spans=2, gold spans=2: P=R=0.5, F1=50.
    CHECK(span_f1({pred}, {gold}, kBio) == Catch::Approx(50.0));
  }
  SECTION("leniency makes bare-I runs equal to B-led spans") {
    auto pred = tags({"I-X", "I-X", "O"});
    auto gold = tags({"B-X", "I-X", "O"});
    CHECK(span_f1({pred}, {gold}, kBio) == 100.0);
  }
  SECTION("aggregates across sequences") {
    auto a = tags({"B-X", "O"});
    auto b = tags({"O", "B-Y"});
    CHECK(span_f1({a, b}, {a, b}, kBio) == 100.0);
    CHECK(span_f1({a, tags({"O", "O"})}, {a, b}, kBio) ==
          Catch::Approx(100.0 * 2.0 * 1.0 * 0.5 / 1.5));
  }
  SECTION("length mismatches rejected") {
    CHECK_THROWS_AS(span_f1({tags({"O"})}, {tags({"O"}), tags({"O"})}, kBio), DataError);
    CHECK_THROWS_AS(span_f1({tags({"O", "O"})}, {tags({"O"})}, kBio), DataError);
  }
}

TEST_CASE("span_f1 is symmetric under pred/gold swap") {
  Rng rng(23);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<std::vector<int>> a, b;
    std::size_t seqs = 1 + rng.uniform_index(4);
    for (std::size_t s = 0; s < seqs; ++s) {
      std::size_t len = 1 + rng.uniform_index(8);
      std::vector<int> xa, xb;
      for (std::size_t i = 0; i < len; ++i) {
        xa.push_back(static_cast<int>(rng.uniform_index(kBio.size())));
        xb.push_back(static_cast<int>(rng.uniform_index(kBio.size())));
      }
      a.push_back(xa);
      b.push_back(xb);
    }
    CHECK(span_f1(a, b, kBio) == Catch::Approx(span_f1(b, a, kBio)).margin(1e-12));
  }
}

TEST_CASE("ScoreMatrix contracts") {
  ScoreMatrix R(ids_for(3));
  CHECK(R.num_tasks() == 3);
  CHECK(R.last_recorded_stage() == 0);

  R.record_row(1, {80.0, 40.0, 30.0});
  CHECK(R.row_recorded(1));
  CHECK_FALSE(R.row_recorded(2));
  CHECK(*R.cell(1, 1) == 80.0);
  CHECK_FALSE(R.cell(2, 1).has_value());

  SECTION("re-recording a stage is a state error") {
    CHECK_THROWS_AS(R.record_row(1, {1.0, 2.0, 3.0}), StateError);
  }
  SECTION("earlier stages cannot follow later ones") {
    R.record_row(3, {50.0, 60.0, 70.0});
    CHECK_THROWS_AS(R.record_row(2, {0.0, 0.0, 0.0}), StateError);
  }
  SECTION("skipping stages is allowed") {
    R.record_row(3, {50.0, 60.0, 70.0});
    CHECK(R.recorded_stages() == std::vector<std::size_t>{1, 3});
    CHECK_FALSE(R.row_recorded(2));
  }
  SECTION("stage outside the matrix") {
    CHECK_THROWS_AS(R.record_row(4, {0.0, 0.0, 0.0}), StateError);
    CHECK_THROWS_AS(R.record_row(0, {0.0, 0.0, 0.0}), StateError);
  }
  SECTION("row width must match") {
    CHECK_THROWS_AS(R.record_row(2, {1.0, 2.0}), DataError);
  }
  SECTION("scores must be percentages") {
    CHECK_THROWS_AS(R.record_row(2, {1.0, 2.0, 101.0}), DataError);
    CHECK_THROWS_AS(R.record_row(2, {1.0, 2.0, -0.5}), DataError);
  }
  SECTION("sparse rows and row_mean_over_seen") {
    R.record_row(2, {std::nullopt, 90.0, std::nullopt});
    CHECK(R.row_mean_over_seen(2) == 90.0);
    CHECK(R.row_mean_over_seen(1) == 80.0);  // one task seen at stage 1
    R.record_row(3, {70.0, 90.0, 80.0});
    CHECK(R.row_mean_over_seen(3) == Catch::Approx(80.0));
  }
  SECTION("cell bounds") {
    CHECK_THROWS_AS(R.cell(0, 1), StateError);
    CHECK_THROWS_AS(R.cell(1, 4), StateError);
  }
}

TEST_CASE("cft worked examples") {
  SECTION("two tasks") {
    ScoreMatrix R(ids_for(2));
    R.record_row(1, {70.0, 80.0});
    R.record_row(2, {65.0, 85.0});
    CHECK(cft(R) == 80.0);
  }
  SECTION("three tasks") {
    ScoreMatrix R = matrix_from({{90, 60, 80}, {70, 85, 90}, {50, 60, 88}});
    CHECK(cft(R) == Catch::Approx(80.0).margin(1e-12));
  }
  SECTION("constant matrix") {
    ScoreMatrix R = matrix_from({{42, 42, 42}, {42, 42, 42}, {42, 42, 42}});
    CHECK(cft(R) == Catch::Approx(42.0).margin(1e-12));
  }
  SECTION("missing cells are a state error") {
    ScoreMatrix R(ids_for(3));
    R.record_row(1, {80.0, std::nullopt, 70.0});
    CHECK_THROWS_AS(cft(R), StateError);
  }
  SECTION("single task") {
    ScoreMatrix R(ids_for(1));
    R.record_row(1, {90.0});
    CHECK_THROWS_AS(cft(R), StateError);
  }
}

TEST_CASE("cbt worked examples") {
  SECTION("no forgetting") {
    ScoreMatrix R = matrix_from({{90, 10, 20}, {90, 85, 30}, {90, 85, 95}});
    CHECK(cbt(R) == 0.0);
  }
  SECTION("forgetting") {
    ScoreMatrix R = matrix_from({{90, 10, 20}, {40, 85, 30}, {70, 80, 95}});
    CHECK(cbt(R) == Catch::Approx(-12.5).margin(1e-12));
  }
  SECTION("literal next-to-last row variant") {
    ScoreMatrix R = matrix_from({{90, 10, 20}, {75, 85, 30}, {70, 80, 95}});
    CHECK(cbt(R, CbtRow::kTMinus1) == Catch::Approx(-7.5).margin(1e-12));
    CHECK(cbt(R, CbtRow::kFinal) == Catch::Approx(-12.5).margin(1e-12));
  }
  SECTION("two tasks under the literal variant degenerate to zero") {
    ScoreMatrix R = matrix_from({{90, 10}, {40, 80}});
    CHECK(cbt(R, CbtRow::kTMinus1) == 0.0);
    CHECK(cbt(R, CbtRow::kFinal) == -50.0);
  }
  SECTION("missing diagonal is a state error") {
    ScoreMatrix R(ids_for(2));
    R.record_row(2, {40.0, 80.0});
    CHECK_THROWS_AS(cbt(R), StateError);
  }
}

TEST_CASE("cft and cbt match the double-loop oracle on random matrices") {
  Rng rng(97);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t t = 2 + rng.uniform_index(19);  // T in [2, 20]
    std::vector<std::vector<double>> rows(t, std::vector<double>(t));
    for (auto& row : rows)
      for (double& v : row) v = rng.uniform(0.0, 100.0);
    ScoreMatrix R = matrix_from(rows);
    CHECK(std::abs(cft(R) - oracles::cft_double_loop(rows)) < 1e-12);
    CHECK(std::abs(cbt(R) - oracles::cbt_double_loop(rows, t)) < 1e-12);
    if (t >= 2)
      CHECK(std::abs(cbt(R, CbtRow::kTMinus1) - oracles::cbt_double_loop(rows, t - 1)) <
            1e-12);
  }
}

TEST_CASE("cbt sign flips when the counterexample is transposed") {
  const std::size_t t = 4;
  const double c = 50.0, d = 10.0;
  std::vector<std::vector<double>> a(t, std::vector<double>(t, c));
  for (std::size_t i = 0; i + 1 < t; ++i) {
    a[t - 1][i] = c - d;  // final row below the diagonal
    a[i][t - 1] = c + d;  // last column above it
  }
  std::vector<std::vector<double>> b(t, std::vector<double>(t));
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < t; ++j) b[i][j] = a[j][i];
  double fwd = cbt(matrix_from(a));
  double rev = cbt(matrix_from(b));
  CHECK(fwd == Catch::Approx(-d).margin(1e-12));
  CHECK(rev == Catch::Approx(d).margin(1e-12));
  CHECK(fwd == Catch::Approx(-rev).margin(1e-12));
}

TEST_CASE("cbt non-positive when final row dominates nowhere") {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    std::size_t t = 2 + rng.uniform_index(6);
    std::vector<std::vector<double>> rows(t, std::vector<double>(t));
    for (auto& row : rows)
      for (double& v : row) v = rng.uniform(20.0, 100.0);
    for (std::size_t i = 0; i + 1 < t; ++i)
      rows[t - 1][i] = rows[i][i] - rng.uniform(0.0, 20.0);
    CHECK(cbt(matrix_from(rows)) <= 1e-12);
  }
}

TEST_CASE("score matrix CSV round trip") {
  SECTION("full matrix with full-precision values") {
    Rng rng(3);
    std::vector<std::vector<double>> rows(4, std::vector<double>(4));
    for (auto& row : rows)
      for (double& v : row) v = rng.uniform(0.0, 100.0);
    ScoreMatrix R = matrix_from(rows);
    ScoreMatrix S = score_matrix_from_csv(to_csv(R));
    REQUIRE(S.task_ids() == R.task_ids());
    REQUIRE(S.recorded_stages() == R.recorded_stages());
    for (std::size_t i = 1; i <= 4; ++i)
      for (std::size_t j = 1; j <= 4; ++j) CHECK(*S.cell(i, j) == *R.cell(i, j));
    CHECK(cft(S) == cft(R));
    CHECK(cbt(S) == cbt(R));
  }
  SECTION("sparse diagonal matrix") {
    ScoreMatrix R(ids_for(3));
    R.record_row(1, {81.0, std::nullopt, std::nullopt});
    R.record_row(3, {std::nullopt, std::nullopt, 93.0});
    ScoreMatrix S = score_matrix_from_csv(to_csv(R));
    CHECK(S.recorded_stages() == std::vector<std::size_t>{1, 3});
    CHECK(*S.cell(1, 1) == 81.0);
    CHECK_FALSE(S.cell(1, 2).has_value());
    CHECK_FALSE(S.row_recorded(2));
    CHECK(*S.cell(3, 3) == 93.0);
  }
  SECTION("parse errors carry line numbers") {
    CHECK_THROWS_AS(score_matrix_from_csv(""), DataError);
    CHECK_THROWS_AS(score_matrix_from_csv("nope,t0\n1,50\n"), DataError);
    CHECK_THROWS_MATCHES(score_matrix_from_csv("stage,t0,t1\n1,50\n"), DataError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("line 2")));
    CHECK_THROWS_MATCHES(score_matrix_from_csv("stage,t0,t1\nx,50,60\n"), DataError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("line 2")));
    CHECK_THROWS_MATCHES(score_matrix_from_csv("stage,t0,t1\n1,abc,60\n"), DataError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("line 2")));
  }
}

TEST_CASE("record_row evaluates every task including unseen ones") {
  SyntheticStreamConfig cfg;
  cfg.num_tasks = 3;
  cfg.num_families = 3;
  cfg.input_dim = 4;
  cfg.num_labels = 3;
  cfg.train_per_task = 9;
  cfg.dev_per_task = 3;
  cfg.test_per_task = 30;
  cfg.rotation_between_families = 0.8;
  cfg.label_prototype_noise = 0.3;
  cfg.seed = 19;
  TaskStream stream = generate_stream(cfg);

  ModelConfig mc;
  mc.input_dim = 4;
  mc.hidden_dims = {8};
  mc.num_labels = 3;
  mc.init_seed = 5;
  ParameterVector theta = init_model(mc);

  ScoreMatrix R(stream.task_ids());
  record_row(R, 1, theta, mc, stream);
  for (std::size_t j = 1; j <= 3; ++j) {
    REQUIRE(R.cell(1, j).has_value());
    CHECK(*R.cell(1, j) >= 0.0);
    CHECK(*R.cell(1, j) <= 100.0);
  }
  CHECK_THROWS_AS(record_row(R, 1, theta, mc, stream), StateError);

  SECTION("task count mismatch rejected") {
    ScoreMatrix wrong(ids_for(2));
    CHECK_THROWS_AS(record_row(wrong, 1, theta, mc, stream), DataError);
  }
}

TEST_CASE("untrained models score near chance on balanced labels") {
  SyntheticStreamConfig cfg;
  cfg.num_tasks = 1;
  cfg.num_families = 1;
  cfg.input_dim = 4;
  cfg.num_labels = 3;
  cfg.train_per_task = 3;
  cfg.dev_per_task = 3;
  cfg.test_per_task = 300;
  // noise far above the prototype radius: the three label distributions are
  // then nearly identical, so any fixed decision rule scores 1/3 per seed up
  // to sampling noise; tight clouds would flip as whole blocks instead
  cfg.label_prototype_noise = 10.0;
  cfg.seed = 29;
  TaskStream stream = generate_stream(cfg);

  ModelConfig mc;
  mc.input_dim = 4;
  mc.hidden_dims = {8};
  mc.num_labels = 3;

  double total = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    mc.init_seed = seed * 977;
    ParameterVector theta = init_model(mc);
    total += evaluate_split(theta, mc, stream.tasks[0].test, stream.label_names);
  }
  double mean = total / 5.0;
  CHECK(mean > 100.0 / 3.0 - 5.0);
  CHECK(mean < 100.0 / 3.0 + 5.0);
}

TEST_CASE("evaluate_split on token tasks uses span scoring") {
  SyntheticStreamConfig cfg;
  cfg.num_tasks = 1;
  cfg.num_families = 1;
  cfg.input_dim = 4;
  cfg.num_labels = 5;
  cfg.head_kind = HeadKind::kTokenLabeling;
  cfg.train_per_task = 3;
  cfg.dev_per_task = 3;
  cfg.test_per_task = 40;
  cfg.label_prototype_noise = 0.2;
  cfg.seed = 31;
  TaskStream stream = generate_stream(cfg);

  ModelConfig mc;
  mc.input_dim = 4;
  mc.hidden_dims = {8};
  mc.num_labels = 5;
  mc.head_kind = HeadKind::kTokenLabeling;
  mc.init_seed = 3;
  ParameterVector theta = init_model(mc);

  double f1 = evaluate_split(theta, mc, stream.tasks[0].test, stream.label_names);
  CHECK(f1 >= 0.0);
  CHECK(f1 <= 100.0);
  CHECK_THROWS_AS(evaluate_split(theta, mc, {}, stream.label_names), DataError);
}
