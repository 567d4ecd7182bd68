#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pdistill/errors.hpp"
#include "pdistill/harness.hpp"

using namespace pdistill;
using nlohmann::json;

namespace {

EvalRow row(std::uint64_t mdp, std::uint64_t run, const std::string& method, long step, double ret) {
  return {mdp, run, method, step, ret, 0.0, 0.0, 0.0, 0.0};
}

json small_sweep() {
  return {{"seed", 3},
          {"world", {{"count", 3}, {"width", 8}, {"height", 8}}},
          {"teacher", {{"q_learning", {{"iterations", 5000}}}}},
          {"methods", {"teacher_distill", "on_policy_distill"}},
          {"run_seeds", {0, 1}},
          {"steps", 200},
          {"eval_every", 50},
          {"eval_episodes", 5},
          {"teacher_eval_episodes", 20}};
}

std::vector<EvalRow> sorted(std::vector<EvalRow> rows) {
  std::sort(rows.begin(), rows.end(), [](const EvalRow& a, const EvalRow& b) {
    return std::tie(a.mdp_seed, a.method, a.run_seed, a.step) <
           std::tie(b.mdp_seed, b.method, b.run_seed, b.step);
  });
  return rows;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("aggregate: two runs {0, 2}") {
  const std::vector<EvalRow> rows{row(1, 0, "m", 0, 0.0), row(2, 0, "m", 0, 2.0)};
  const auto curves = aggregate(rows, Metric::RetStudent);
  const AggregateCurve& c = curves.at("m");
  CHECK(c.runs == 2);
  CHECK(c.mean[0] == 1.0);
  CHECK(c.half_width[0] == doctest::Approx(1.96).epsilon(1e-14));
}

TEST_CASE("aggregate: identical runs and too few runs") {
  const std::vector<EvalRow> same{row(1, 0, "m", 0, 3.0), row(2, 0, "m", 0, 3.0),
                                  row(1, 0, "m", 10, 4.0), row(2, 0, "m", 10, 4.0)};
  const auto c = aggregate(same, Metric::RetStudent).at("m");
  CHECK(c.steps == std::vector<long>{0, 10});
  CHECK(c.half_width == std::vector<double>{0.0, 0.0});
  CHECK_THROWS_AS(aggregate({row(1, 0, "m", 0, 3.0)}, Metric::RetStudent), InsufficientRuns);
  CHECK_THROWS_AS(aggregate(same, Metric::RetStudent, {"colour"}), ConfigError);
}

TEST_CASE("aggregate: half-width halves when runs quadruple") {
  Rng rng(1);
  auto half_width = [&](int n) {
    std::vector<EvalRow> rows;
    for (int i = 0; i < n; ++i) rows.push_back(row(i, 0, "m", 0, uniform01(rng)));
    return aggregate(rows, Metric::RetStudent).at("m").half_width[0];
  };
  double ratio = 0.0;
  for (int rep = 0; rep < 20; ++rep) ratio += half_width(1600) / half_width(400);
  CHECK(ratio / 20 == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("aggregate groups by the requested keys") {
  const std::vector<EvalRow> rows{row(1, 0, "a", 0, 1.0), row(1, 1, "a", 0, 3.0),
                                  row(2, 0, "a", 0, 5.0), row(2, 1, "a", 0, 7.0)};
  const auto by_mdp = aggregate(rows, Metric::RetStudent, {"method", "mdp_seed"});
  CHECK(by_mdp.at("a|1").mean[0] == 2.0);
  CHECK(by_mdp.at("a|2").mean[0] == 6.0);
}

TEST_CASE("area speedup examples") {
  const std::vector<long> steps{0, 10, 20, 30};
  const std::vector<double> b{1.0, 2.0, 3.0, 3.5};
  CHECK(area_speedup(steps, b, b) == 1.0);
  std::vector<double> a(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) a[i] = b[0] + 2.0 * (b[i] - b[0]);
  CHECK(area_speedup(steps, a, b) == doctest::Approx(2.0).epsilon(1e-14));
  // Uneven step grids use the trapezoid rule: area of b is 5*1 + 10*2.5.
  const std::vector<long> uneven{0, 10, 30};
  CHECK(area_speedup(uneven, std::vector<double>{0, 2, 2}, std::vector<double>{0, 1, 1}) ==
        doctest::Approx(2.0));
  CHECK_THROWS_AS(area_speedup(steps, std::vector<double>(4, 1.0), b), DegenerateCurve);
  CHECK_THROWS_AS(area_speedup({0}, {1.0}, {1.0}), DegenerateCurve);
}

TEST_CASE("CSV round-trips exactly") {
  std::vector<EvalRow> rows{{7, 2, "n_distill", 100, 0.1, 9.75, 1.0 / 3.0, 1e-300, 12345.678901234567},
                            {18446744073709551615ULL, 0, "teacher_distill", 0, -3.5, 0, 0, 0, 0}};
  const std::string text = format_csv(rows);
  CHECK(text.rfind(kCsvHeader, 0) == 0);
  const auto back = parse_csv(text);
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].mdp_seed == rows[i].mdp_seed);
    CHECK(back[i].method == rows[i].method);
    CHECK(back[i].xent_student == rows[i].xent_student);
    CHECK(back[i].xent_teacher == rows[i].xent_teacher);
    CHECK(back[i].xent_uniform == rows[i].xent_uniform);
  }
  CHECK(format_csv(back) == text);
  CHECK_THROWS_AS(parse_csv("step,method\n1,a\n"), ConfigError);
  CHECK_THROWS_AS(parse_csv(std::string(kCsvHeader) + "\n1,2,m\n"), ConfigError);
}

TEST_CASE("config parsing") {
  SUBCASE("defaults") {
    const ExperimentConfig c = parse_config({{"methods", {"on_policy_distill"}}});
    CHECK(c.steps == 30000);
    CHECK(c.eval_every == 100);
    CHECK(c.eval_episodes == 30);
    CHECK(c.learning_rate == 0.1);
    CHECK(c.gamma == 0.99);
    CHECK(c.world.count == 100);
    CHECK(c.world.width == 20);
    CHECK(c.observation.mode == ObservationMode::Window);
    CHECK(c.observation.k == 4);
    CHECK(c.teacher.temperature == 0.0);
  }
  SUBCASE("round trip through the canonical document") {
    json doc = small_sweep();
    doc["teacher"]["corruption"] = 0.25;
    doc["observation"] = {{"mode", "full"}};
    const ExperimentConfig c = parse_config(doc);
    CHECK(config_to_json(parse_config(config_to_json(c))) == config_to_json(c));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(parse_config(json::object()), ConfigError);
    CHECK_THROWS_AS(parse_config({{"methods", {"bogus"}}}), ConfigError);
    CHECK_THROWS_AS(parse_config({{"methods", {"n_distill"}}, {"stpes", 5}}), ConfigError);
    CHECK_THROWS_AS(parse_config({{"methods", {"n_distill"}}, {"steps", "many"}}), ConfigError);
    CHECK_THROWS_AS(parse_config({{"methods", {"n_distill"}}, {"world", {{"kind", "maze"}}}}), ConfigError);
    CHECK_THROWS_AS(parse_config({{"methods", {"n_distill"}}, {"run_seeds", {1, 1}}}), ConfigError);
    CHECK_THROWS_AS(parse_config({{"methods", {"n_distill", "n_distill"}}}), ConfigError);
    CHECK_THROWS_AS(parse_config({{"methods", {"n_distill"}}, {"teacher", {{"corruption", 2}}}}), ConfigError);
    CHECK_THROWS_AS(parse_config({{"methods", {"n_distill"}}, {"world", {{"gen", {{"p_plus10", 0}}}}}}),
                    ConfigError);
    CHECK_THROWS_AS(parse_config({{"methods", {"n_distill"}}, {"world", {{"kind", "corridor"}}}}),
                    ConfigError);
  }
  SUBCASE("overrides") {
    json doc = small_sweep();
    apply_override(doc, "teacher.temperature=1.5");
    apply_override(doc, "world.kind=corridor");
    apply_override(doc, "methods=[\"n_distill\"]");
    CHECK(doc["teacher"]["temperature"] == 1.5);
    CHECK(doc["world"]["kind"] == "corridor");
    CHECK(doc["methods"] == json::array({"n_distill"}));
    CHECK_THROWS_AS(apply_override(doc, "no_equals_sign"), ConfigError);
  }
}

TEST_CASE("sweeps with zero steps only evaluate the initial policy") {
  json doc = small_sweep();
  doc["steps"] = 0;
  const SweepResult r = run_sweep(parse_config(doc), 1);
  CHECK(r.failures() == 0);
  for (const auto& run : r.runs) {
    REQUIRE(run.rows.size() == 1);
    CHECK(run.rows[0].step == 0);
  }
}

TEST_CASE("sweeps are deterministic and independent of parallelism") {
  const ExperimentConfig c = parse_config(small_sweep());
  const SweepResult a = run_sweep(c, 1);
  const SweepResult b = run_sweep(c, 1);
  const SweepResult p = run_sweep(c, 3);
  CHECK(a.failures() == 0);
  CHECK(a.runs.size() == 3 * 2 * 2);
  CHECK(format_csv(a.rows()) == format_csv(b.rows()));
  CHECK(format_csv(sorted(a.rows())) == format_csv(sorted(p.rows())));
  for (const auto& run : a.runs) {
    std::vector<long> steps;
    for (const auto& r : run.rows) steps.push_back(r.step);
    CHECK(steps == std::vector<long>{0, 50, 100, 150, 200});
    for (const auto& r : run.rows) {
      CHECK(r.xent_student >= 0.0);
      CHECK(r.xent_teacher >= 0.0);
      CHECK(r.xent_uniform >= 0.0);
    }
  }
}

TEST_CASE("a failing run is recorded without stopping the sweep") {
  json doc = small_sweep();
  doc["methods"] = {"on_policy_distill", "teacher_v_reward"};  // no critic for Q-learning teachers
  const SweepResult r = run_sweep(parse_config(doc), 2);
  CHECK(r.failures() == 3 * 2);
  for (const auto& run : r.runs) {
    if (run.method == "teacher_v_reward") {
      REQUIRE(run.error);
      CHECK(run.error->find("MissingTeacherValue") != std::string::npos);
    } else {
      CHECK_FALSE(run.error);
      CHECK(run.rows.size() == 5);
    }
  }
}

TEST_CASE("sweep outputs on disk") {
  const auto dir = std::filesystem::temp_directory_path() / "pdistill_harness_test";
  std::filesystem::remove_all(dir);
  const ExperimentConfig c = parse_config(small_sweep());
  const SweepResult r = run_sweep(c, 1);
  write_sweep_outputs(dir, c, r);
  CHECK(std::filesystem::exists(dir / "merged.csv"));
  CHECK(std::filesystem::exists(dir / "summary.json"));
  std::size_t shards = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir / "runs")) shards += e.is_regular_file();
  CHECK(shards == r.runs.size());
  CHECK(parse_csv(slurp(dir / "merged.csv")).size() == r.rows().size());
  const json summary = json::parse(slurp(dir / "summary.json"));
  CHECK(summary["methods"].contains("teacher_distill"));
  CHECK(summary["teachers"].size() == 3);
  CHECK(summary["failures"].empty());
  CHECK(summary["config"] == config_to_json(c));
  std::filesystem::remove_all(dir);
}

TEST_CASE("summaries tolerate a single run") {
  const json s = summarize({row(1, 0, "m", 0, 1.0), row(1, 0, "m", 5, 2.0)});
  CHECK(s["methods"]["m"]["runs"] == 1);
  CHECK(s["methods"]["m"]["final"]["ret_student"]["mean"] == 2.0);
}

TEST_CASE("no-op actions leave the teacher's return unchanged") {
  json doc = small_sweep();
  doc["world"]["count"] = 1;
  const ExperimentConfig four = parse_config(doc);
  doc["action_count"] = 400;
  const ExperimentConfig many = parse_config(doc);
  const WorldInstance w4 = make_world(four, 0);
  const WorldInstance w400 = make_world(many, 0);
  CHECK(w4.mdp_seed == w400.mdp_seed);
  CHECK(w400.env->action_count() == 400);
  CHECK(w400.teacher_env->action_count() == 4);
  const PreparedTeacher t4 = prepare_teacher(four, w4);
  const PreparedTeacher t400 = prepare_teacher(many, w400);
  CHECK(t400.bundle.policy.action_count() == 400);
  CHECK(t4.return_mean == t400.return_mean);

  // Same teacher evaluated in the padded world with the shared stream.
  Rng a(9), b(9);
  const auto ctl4 = [&](StateId s) { return t4.bundle.policy.probabilities(w4.env->teacher_key(s)); };
  const auto ctl400 = [&](StateId s) { return t400.bundle.policy.probabilities(w400.env->teacher_key(s)); };
  CHECK(evaluate_return(*w4.env, ctl4, 200, a).mean == evaluate_return(*w400.env, ctl400, 200, b).mean);
}

TEST_CASE("cloning the teacher recovers its return") {
  json doc = {{"seed", 11},
              {"world", {{"count", 20}}},
              {"methods", {"teacher_distill"}},
              {"steps", 30000},
              {"eval_every", 30000},
              {"eval_episodes", 100}};
  const SweepResult r = run_sweep(parse_config(doc), 1);
  REQUIRE(r.failures() == 0);
  std::vector<double> student, teacher;
  for (const auto& run : r.runs) {
    student.push_back(run.rows.back().ret_student);
    teacher.push_back(run.rows.back().ret_teacher_ref);
  }
  const MeanEstimate s = mean_and_sem(student);
  const MeanEstimate t = mean_and_sem(teacher);
  INFO("student " << s.mean << " +- " << s.sem << ", teacher " << t.mean);
  CHECK(std::abs(s.mean - t.mean) <= 2 * s.sem);
}
