#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pdistill/distill.hpp"
#include "pdistill/mdp.hpp"
#include "pdistill/teacher.hpp"

namespace pdistill {

enum class WorldKind { Random, Corridor, Counterexample };

struct WorldConfig {
  WorldKind kind = WorldKind::Random;
  int count = 100;
  int width = 20;
  int height = 20;
  double eta = 0.1;
  double p_term = 0.01;
  GenParams gen;
  int half_length = 5;
};

enum class TeacherMethod {
  QLearning,
  ActorCritic,
  CorridorOptimal,
  CorridorAdversarial,
  Counterexample
};

struct TeacherConfig {
  TeacherMethod method = TeacherMethod::QLearning;
  double temperature = 0.0;
  double corruption = 0.0;
  // Monte Carlo episodes for the teacher critic; 0 keeps the recipe's own
  // critic (exact for the hand-built teachers, none for Q-learning).
  int value_episodes = 0;
  // Replace the critic by V = 0 everywhere.
  bool zero_value = false;
  QLearningParams q_learning;
  ActorCriticParams actor_critic;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  WorldConfig world;
  Observability observation;
  TeacherConfig teacher;
  std::vector<std::string> methods;
  long steps = 30000;
  long eval_every = 100;
  int eval_episodes = 30;
  int teacher_eval_episodes = 100;
  std::vector<std::uint64_t> run_seeds{0};
  double gamma = 0.99;
  double learning_rate = 0.1;
  int action_count = 4;  // total actions; those beyond the four moves are no-ops
  int max_episode_steps = kDefaultMaxEpisodeSteps;
};

// Throws ConfigError on unknown keys, wrong types, or invalid values.
ExperimentConfig parse_config(const nlohmann::json& doc);
nlohmann::json config_to_json(const ExperimentConfig& config);
// Sets a dotted path (e.g. "teacher.temperature") in a config document. The
// value is parsed as JSON when possible and kept as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

// One world of a sweep. `env` is what the student acts in; `teacher_env`
// is the four-action version the teacher is trained in.
struct WorldInstance {
  int index = 0;
  std::uint64_t mdp_seed = 0;
  std::shared_ptr<const Environment> env;
  std::shared_ptr<const Environment> teacher_env;
  std::optional<GridWorld> grid;
};

WorldInstance make_world(const ExperimentConfig& config, int index);

struct PreparedTeacher {
  TeacherBundle bundle;       // padded to the student action count
  double return_mean = 0.0;   // reference return of the teacher in use
  double return_sem = 0.0;
  double clean_return_mean = 0.0;  // same before corruption
  std::size_t corrupted_keys = 0;
  std::size_t visited_keys = 0;
};

PreparedTeacher prepare_teacher(const ExperimentConfig& config, const WorldInstance& world);

// One CSV row. Column order is fixed by kCsvHeader.
struct EvalRow {
  std::uint64_t mdp_seed = 0;
  std::uint64_t run_seed = 0;
  std::string method;
  long step = 0;
  double ret_student = 0.0;
  double ret_teacher_ref = 0.0;
  double xent_student = 0.0;
  double xent_teacher = 0.0;
  double xent_uniform = 0.0;
};

inline constexpr const char* kCsvHeader =
    "mdp_seed,run_seed,method,step,ret_student,ret_teacher_ref,xent_student,xent_teacher,"
    "xent_uniform";

struct RunRecord {
  int mdp_index = 0;
  std::uint64_t mdp_seed = 0;
  std::uint64_t run_seed = 0;
  std::string method;
  std::vector<EvalRow> rows;
  std::optional<std::string> error;
};

struct EvalPoint {
  double ret_student = 0.0;
  double xent_student = 0.0;
  double xent_teacher = 0.0;
  double xent_uniform = 0.0;
};

// Frozen-student evaluation: mean return and mean episodic sum of
// H(pi || pi_theta) under student, teacher and uniform sampling.
EvalPoint evaluate_student(const Environment& env, const PolicyTable& student,
                           const TeacherBundle& teacher, int episodes, Rng& rng, int max_steps);

// Trains one student and evaluates it on the configured cadence.
RunRecord run_single(const ExperimentConfig& config, const WorldInstance& world,
                     const PreparedTeacher& teacher, const std::string& method,
                     std::uint64_t run_seed);

struct TeacherSummary {
  int mdp_index = 0;
  std::uint64_t mdp_seed = 0;
  double return_mean = 0.0;
  double return_sem = 0.0;
  double clean_return_mean = 0.0;
  std::size_t corrupted_keys = 0;
  std::size_t visited_keys = 0;
  std::optional<std::string> error;
};

struct SweepResult {
  std::vector<RunRecord> runs;  // ordered by (mdp index, method, run seed)
  std::vector<TeacherSummary> teachers;
  std::size_t failures() const;
  std::vector<EvalRow> rows() const;
};

SweepResult run_sweep(const ExperimentConfig& config, int parallelism);

std::string format_csv(const std::vector<EvalRow>& rows);
std::vector<EvalRow> parse_csv(const std::string& text);

// Writes runs/<mdp_seed>_<method>_<run_seed>.csv shards, merged.csv and
// summary.json under out_dir.
void write_sweep_outputs(const std::filesystem::path& out_dir, const ExperimentConfig& config,
                         const SweepResult& result);

struct AggregateCurve {
  std::vector<long> steps;
  std::vector<double> mean;
  std::vector<double> half_width;  // 1.96 * SEM
  std::size_t runs = 0;
};

enum class Metric { RetStudent, RetTeacherRef, XentStudent, XentTeacher, XentUniform };
Metric metric_from_name(const std::string& name);
const char* metric_name(Metric metric);
double metric_value(const EvalRow& row, Metric metric);

// Groups rows by the listed fields (any of "method", "mdp_seed",
// "run_seed"), then averages each step over the runs of a group. Throws
// InsufficientRuns when a group has fewer than two runs.
std::map<std::string, AggregateCurve> aggregate(const std::vector<EvalRow>& rows, Metric metric,
                                                const std::vector<std::string>& group_keys = {
                                                    "method"});

// Ratio of trapezoid areas (a over b) after subtracting the mean of the two
// initial values. Throws DegenerateCurve when an area is not positive.
double area_speedup(const std::vector<long>& steps, const std::vector<double>& a,
                    const std::vector<double>& b);

// Summary document built from rows alone: per-method curves of every metric
// and final-step statistics.
nlohmann::json summarize(const std::vector<EvalRow>& rows);

}  // namespace pdistill
