#include "pdistill/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "pdistill/errors.hpp"

namespace pdistill {

namespace {

// Strict reader over one JSON object: typed getters with defaults, and a
// final check that every key was understood.
class Reader {
 public:
  Reader(const nlohmann::json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
    if (!doc_.is_object()) fail("", "must be an object");
  }

  bool has(const char* key) const { return doc_.contains(key); }

  double number(const char* key, double fallback) {
    if (!take(key)) return fallback;
    const auto& v = doc_.at(key);
    if (!v.is_number()) fail(key, "must be a number");
    return v.get<double>();
  }

  long integer(const char* key, long fallback) {
    if (!take(key)) return fallback;
    const auto& v = doc_.at(key);
    if (!v.is_number_integer()) fail(key, "must be an integer");
    return v.get<long>();
  }

  std::uint64_t unsigned_integer(const nlohmann::json& v, const std::string& where) {
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0))
      fail(where, "must be a non-negative integer");
    return v.get<std::uint64_t>();
  }

  std::uint64_t seed(const char* key, std::uint64_t fallback) {
    if (!take(key)) return fallback;
    return unsigned_integer(doc_.at(key), key);
  }

  bool boolean(const char* key, bool fallback) {
    if (!take(key)) return fallback;
    const auto& v = doc_.at(key);
    if (!v.is_boolean()) fail(key, "must be true or false");
    return v.get<bool>();
  }

  std::string text(const char* key, const std::string& fallback) {
    if (!take(key)) return fallback;
    const auto& v = doc_.at(key);
    if (!v.is_string()) fail(key, "must be a string");
    return v.get<std::string>();
  }

  std::optional<Reader> object(const char* key) {
    if (!take(key)) return std::nullopt;
    return Reader(doc_.at(key), join(key));
  }

  const nlohmann::json* raw(const char* key) {
    if (!take(key)) return nullptr;
    return &doc_.at(key);
  }

  void finish() const {
    for (const auto& [k, _] : doc_.items())
      if (!seen_.contains(k)) throw ConfigError("unknown config key '" + join(k) + "'");
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ConfigError("config value '" + join(key) + "' " + what);
  }

 private:
  bool take(const char* key) {
    seen_.insert(key);
    return doc_.contains(key) && !doc_.at(key).is_null();
  }
  std::string join(const std::string& key) const {
    if (path_.empty()) return key;
    if (key.empty()) return path_;
    return path_ + "." + key;
  }

  const nlohmann::json& doc_;
  std::string path_;
  std::set<std::string> seen_;
};

const std::map<std::string, WorldKind> kWorldKinds = {
    {"random", WorldKind::Random},
    {"corridor", WorldKind::Corridor},
    {"counterexample", WorldKind::Counterexample},
};

const std::map<std::string, TeacherMethod> kTeacherMethods = {
    {"q_learning", TeacherMethod::QLearning},
    {"actor_critic", TeacherMethod::ActorCritic},
    {"corridor_optimal", TeacherMethod::CorridorOptimal},
    {"corridor_adversarial", TeacherMethod::CorridorAdversarial},
    {"counterexample", TeacherMethod::Counterexample},
};

template <class Enum>
Enum lookup(const std::map<std::string, Enum>& table, const std::string& name,
            const std::string& what) {
  const auto it = table.find(name);
  if (it == table.end()) throw ConfigError("unknown " + what + " '" + name + "'");
  return it->second;
}

template <class Enum>
std::string name_of(const std::map<std::string, Enum>& table, Enum value) {
  for (const auto& [k, v] : table)
    if (v == value) return k;
  return "";
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

int to_int(long v, const std::string& what) {
  require(v >= std::numeric_limits<int>::min() && v <= std::numeric_limits<int>::max(),
          what + " is out of range");
  return static_cast<int>(v);
}

}  // namespace

ExperimentConfig parse_config(const nlohmann::json& doc) {
  ExperimentConfig c;
  Reader top(doc, "");
  c.seed = top.seed("seed", c.seed);

  if (auto w = top.object("world")) {
    c.world.kind = lookup(kWorldKinds, w->text("kind", "random"), "world kind");
    c.world.count = to_int(w->integer("count", c.world.count), "world.count");
    c.world.width = to_int(w->integer("width", c.world.width), "world.width");
    c.world.height = to_int(w->integer("height", c.world.height), "world.height");
    c.world.eta = w->number("eta", c.world.eta);
    c.world.p_term = w->number("p_term", c.world.p_term);
    c.world.half_length = to_int(w->integer("half_length", c.world.half_length), "world.half_length");
    if (auto g = w->object("gen")) {
      GenParams& p = c.world.gen;
      p.p_w = g->number("p_w", p.p_w);
      p.p_plus10 = g->number("p_plus10", p.p_plus10);
      p.p_plus5 = g->number("p_plus5", p.p_plus5);
      p.p_minus1 = g->number("p_minus1", p.p_minus1);
      p.p_minus5 = g->number("p_minus5", p.p_minus5);
      p.p_minus10 = g->number("p_minus10", p.p_minus10);
      p.max_regeneration_attempts =
          to_int(g->integer("max_regeneration_attempts", p.max_regeneration_attempts),
                 "world.gen.max_regeneration_attempts");
      g->finish();
    }
    w->finish();
  }

  if (auto o = top.object("observation")) {
    const std::string mode = o->text("mode", "window");
    require(mode == "window" || mode == "full", "observation.mode must be 'window' or 'full'");
    c.observation.mode = mode == "full" ? ObservationMode::Full : ObservationMode::Window;
    c.observation.k = to_int(o->integer("k", c.observation.k), "observation.k");
    o->finish();
  }

  if (auto t = top.object("teacher")) {
    TeacherConfig& tc = c.teacher;
    tc.method = lookup(kTeacherMethods, t->text("method", "q_learning"), "teacher method");
    tc.temperature = t->number("temperature", tc.temperature);
    tc.corruption = t->number("corruption", tc.corruption);
    tc.value_episodes = to_int(t->integer("value_episodes", tc.value_episodes), "teacher.value_episodes");
    tc.zero_value = t->boolean("zero_value", tc.zero_value);
    if (auto q = t->object("q_learning")) {
      tc.q_learning.iterations = to_int(q->integer("iterations", tc.q_learning.iterations),
                                        "teacher.q_learning.iterations");
      tc.q_learning.lambda = q->number("lambda", tc.q_learning.lambda);
      tc.q_learning.gamma = q->number("gamma", tc.q_learning.gamma);
      tc.q_learning.epsilon = q->number("epsilon", tc.q_learning.epsilon);
      q->finish();
    }
    if (auto a = t->object("actor_critic")) {
      const std::string mode = a->text("mode", "monte_carlo");
      require(mode == "monte_carlo" || mode == "td1",
              "teacher.actor_critic.mode must be 'monte_carlo' or 'td1'");
      tc.actor_critic.mode = mode == "td1" ? CriticMode::TD1 : CriticMode::MonteCarlo;
      tc.actor_critic.episodes = to_int(a->integer("episodes", tc.actor_critic.episodes),
                                        "teacher.actor_critic.episodes");
      tc.actor_critic.learning_rate = a->number("learning_rate", tc.actor_critic.learning_rate);
      tc.actor_critic.gamma = a->number("gamma", tc.actor_critic.gamma);
      a->finish();
    }
    t->finish();
  }

  if (const auto* m = top.raw("methods")) {
    require(m->is_array(), "config value 'methods' must be a list of preset names");
    for (const auto& name : *m) {
      require(name.is_string(), "config value 'methods' must be a list of preset names");
      c.methods.push_back(name.get<std::string>());
    }
  }
  c.steps = top.integer("steps", c.steps);
  c.eval_every = top.integer("eval_every", c.eval_every);
  c.eval_episodes = to_int(top.integer("eval_episodes", c.eval_episodes), "eval_episodes");
  c.teacher_eval_episodes =
      to_int(top.integer("teacher_eval_episodes", c.teacher_eval_episodes), "teacher_eval_episodes");
  if (const auto* s = top.raw("run_seeds")) {
    require(s->is_array() && !s->empty(), "config value 'run_seeds' must be a non-empty list");
    c.run_seeds.clear();
    for (const auto& v : *s) c.run_seeds.push_back(top.unsigned_integer(v, "run_seeds"));
  }
  c.gamma = top.number("gamma", c.gamma);
  c.learning_rate = top.number("learning_rate", c.learning_rate);
  c.action_count = to_int(top.integer("action_count", c.action_count), "action_count");
  c.max_episode_steps = to_int(top.integer("max_episode_steps", c.max_episode_steps), "max_episode_steps");
  top.finish();

  // Semantic validation.
  require(!c.methods.empty(), "config needs at least one method");
  for (const auto& m : c.methods) preset(m);
  require(std::set<std::string>(c.methods.begin(), c.methods.end()).size() == c.methods.size(),
          "methods must be distinct");
  require(std::set<std::uint64_t>(c.run_seeds.begin(), c.run_seeds.end()).size() == c.run_seeds.size(),
          "run_seeds must be distinct");
  require(c.world.count >= 1, "world.count must be positive");
  require(c.steps >= 0, "steps must be non-negative");
  require(c.eval_every >= 1, "eval_every must be positive");
  require(c.eval_episodes >= 1, "eval_episodes must be positive");
  require(c.teacher_eval_episodes >= 1, "teacher_eval_episodes must be positive");
  require(c.gamma > 0.0 && c.gamma <= 1.0, "gamma must lie in (0, 1]");
  require(c.learning_rate > 0.0, "learning_rate must be positive");
  require(c.max_episode_steps >= 1, "max_episode_steps must be positive");
  require(c.world.eta >= 0.0 && c.world.eta <= 1.0, "world.eta must lie in [0, 1]");
  require(c.world.p_term >= 0.0 && c.world.p_term <= 1.0, "world.p_term must lie in [0, 1]");
  require(c.observation.k >= 0, "observation.k must be non-negative");
  require(c.teacher.temperature >= 0.0, "teacher.temperature must be non-negative");
  require(c.teacher.corruption >= 0.0 && c.teacher.corruption <= 1.0,
          "teacher.corruption must lie in [0, 1]");
  require(c.teacher.value_episodes >= 0, "teacher.value_episodes must be non-negative");
  require(c.teacher.q_learning.iterations >= 0, "teacher.q_learning.iterations must be non-negative");
  require(c.teacher.actor_critic.episodes >= 0, "teacher.actor_critic.episodes must be non-negative");
  switch (c.world.kind) {
    case WorldKind::Random:
      require(c.world.width >= 2 && c.world.height >= 2, "world width and height must be at least 2");
      require(c.action_count >= kMoveActions, "action_count must be at least 4 on grid worlds");
      try {
        c.world.gen.validate();
      } catch (const InvalidParams& e) {
        throw ConfigError(std::string("world.gen: ") + e.what());
      }
      require(c.teacher.method == TeacherMethod::QLearning ||
                  c.teacher.method == TeacherMethod::ActorCritic,
              "grid worlds need a q_learning or actor_critic teacher");
      break;
    case WorldKind::Corridor:
      require(c.world.half_length >= 1, "world.half_length must be positive");
      require(c.action_count == 2, "corridor worlds have exactly 2 actions");
      require(c.teacher.method != TeacherMethod::Counterexample,
              "the counterexample teacher needs the counterexample world");
      break;
    case WorldKind::Counterexample:
      require(c.action_count == 2, "the counterexample world has exactly 2 actions");
      require(c.teacher.method == TeacherMethod::Counterexample,
              "the counterexample world needs the counterexample teacher");
      break;
  }
  if (c.teacher.method == TeacherMethod::CorridorOptimal ||
      c.teacher.method == TeacherMethod::CorridorAdversarial)
    require(c.world.kind == WorldKind::Corridor, "corridor teachers need the corridor world");
  return c;
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
  const GenParams& g = c.world.gen;
  return {
      {"seed", c.seed},
      {"world",
       {{"kind", name_of(kWorldKinds, c.world.kind)},
        {"count", c.world.count},
        {"width", c.world.width},
        {"height", c.world.height},
        {"eta", c.world.eta},
        {"p_term", c.world.p_term},
        {"half_length", c.world.half_length},
        {"gen",
         {{"p_w", g.p_w},
          {"p_plus10", g.p_plus10},
          {"p_plus5", g.p_plus5},
          {"p_minus1", g.p_minus1},
          {"p_minus5", g.p_minus5},
          {"p_minus10", g.p_minus10},
          {"max_regeneration_attempts", g.max_regeneration_attempts}}}}},
      {"observation",
       {{"mode", c.observation.mode == ObservationMode::Full ? "full" : "window"},
        {"k", c.observation.k}}},
      {"teacher",
       {{"method", name_of(kTeacherMethods, c.teacher.method)},
        {"temperature", c.teacher.temperature},
        {"corruption", c.teacher.corruption},
        {"value_episodes", c.teacher.value_episodes},
        {"zero_value", c.teacher.zero_value},
        {"q_learning",
         {{"iterations", c.teacher.q_learning.iterations},
          {"lambda", c.teacher.q_learning.lambda},
          {"gamma", c.teacher.q_learning.gamma},
          {"epsilon", c.teacher.q_learning.epsilon}}},
        {"actor_critic",
         {{"mode", c.teacher.actor_critic.mode == CriticMode::TD1 ? "td1" : "monte_carlo"},
          {"episodes", c.teacher.actor_critic.episodes},
          {"learning_rate", c.teacher.actor_critic.learning_rate},
          {"gamma", c.teacher.actor_critic.gamma}}}}},
      {"methods", c.methods},
      {"steps", c.steps},
      {"eval_every", c.eval_every},
      {"eval_episodes", c.eval_episodes},
      {"teacher_eval_episodes", c.teacher_eval_episodes},
      {"run_seeds", c.run_seeds},
      {"gamma", c.gamma},
      {"learning_rate", c.learning_rate},
      {"action_count", c.action_count},
      {"max_episode_steps", c.max_episode_steps},
  };
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "' must look like key.path=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  nlohmann::json* node = &doc;
  std::stringstream parts(path);
  std::string part;
  std::vector<std::string> keys;
  while (std::getline(parts, part, '.')) {
    if (part.empty()) throw ConfigError("override '" + assignment + "' has an empty key");
    keys.push_back(part);
  }
  for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
    if (!node->is_object()) throw ConfigError("override '" + assignment + "' crosses a non-object");
    node = &(*node)[keys[i]];
    if (node->is_null()) *node = nlohmann::json::object();
  }
  if (!node->is_object()) throw ConfigError("override '" + assignment + "' crosses a non-object");
  (*node)[keys.back()] = std::move(value);
}

WorldInstance make_world(const ExperimentConfig& config, int index) {
  WorldInstance w;
  w.index = index;
  switch (config.world.kind) {
    case WorldKind::Random: {
      w.mdp_seed = derive_seed({config.seed, stable_hash("mdp"), static_cast<std::uint64_t>(index)});
      GridWorld grid = generate_random_mdp(w.mdp_seed, config.world.gen, config.world.width,
                                           config.world.height, config.world.eta,
                                           config.world.p_term, config.observation);
      auto four = std::make_shared<const GridWorld>(grid);
      w.teacher_env = four;
      w.env = config.action_count > kMoveActions
                  ? std::make_shared<const GridWorld>(
                        grid.with_extra_actions(config.action_count - kMoveActions))
                  : four;
      w.grid = std::move(grid);
      break;
    }
    case WorldKind::Corridor:
      w.mdp_seed = static_cast<std::uint64_t>(index);
      w.env = std::make_shared<const CorridorWorld>(config.world.half_length, config.world.p_term,
                                                    config.world.eta);
      w.teacher_env = w.env;
      break;
    case WorldKind::Counterexample:
      w.mdp_seed = static_cast<std::uint64_t>(index);
      w.env = std::make_shared<const CounterexampleMdp>();
      w.teacher_env = w.env;
      break;
  }
  return w;
}

namespace {

DistributionTable distribution_of(const PolicyTable& policy) {
  DistributionTable out(policy.action_count());
  for (const auto& key : policy.keys()) {
    const auto p = policy.probabilities(key);
    out.set(key, std::vector<double>(p.begin(), p.end()));
  }
  return out;
}

MeanEstimate teacher_return(const Environment& env, const DistributionTable& policy, int episodes,
                            Rng& rng, int max_steps) {
  return evaluate_return(
      env, [&](StateId s) { return policy.probabilities(env.teacher_key(s)); }, episodes, rng,
      max_steps);
}

}  // namespace

PreparedTeacher prepare_teacher(const ExperimentConfig& config, const WorldInstance& world) {
  const TeacherConfig& tc = config.teacher;
  const Environment& env = *world.teacher_env;
  Rng rng(derive_seed({config.seed, stable_hash("teacher"), world.mdp_seed}));

  std::optional<TeacherBundle> bundle;
  switch (tc.method) {
    case TeacherMethod::QLearning: {
      QLearningParams params = tc.q_learning;
      params.max_episode_steps = config.max_episode_steps;
      const QTable q = train_q_learning(env, rng, params);
      bundle = TeacherBundle{extract_policy(q, tc.temperature), std::nullopt, {}, {}};
      bundle->provenance.method = "q_learning";
      break;
    }
    case TeacherMethod::ActorCritic: {
      ActorCriticParams params = tc.actor_critic;
      params.max_episode_steps = config.max_episode_steps;
      ActorCriticResult r = train_actor_critic(env, params, rng);
      bundle = TeacherBundle{distribution_of(r.policy), std::move(r.value), {}, {}};
      bundle->provenance.method = "actor_critic";
      break;
    }
    case TeacherMethod::CorridorOptimal:
    case TeacherMethod::CorridorAdversarial: {
      const auto* corridor = dynamic_cast<const CorridorWorld*>(&env);
      if (!corridor) throw InvalidParams("corridor teachers need a corridor world");
      bundle = tc.method == TeacherMethod::CorridorOptimal
                   ? make_optimal_corridor_teacher(*corridor, config.gamma)
                   : make_adversarial_corridor_teacher(*corridor, config.gamma);
      break;
    }
    case TeacherMethod::Counterexample:
      bundle = make_counterexample_teacher();
      break;
  }

  PreparedTeacher out{*bundle, 0.0, 0.0, 0.0, 0, 0};
  TeacherBundle& b = out.bundle;
  b.provenance.temperature = tc.temperature;
  b.provenance.corruption = tc.corruption;
  b.provenance.seed = world.mdp_seed;

  Rng eval_rng(derive_seed({config.seed, stable_hash("teacher-eval"), world.mdp_seed}));
  const MeanEstimate clean =
      teacher_return(env, b.policy, config.teacher_eval_episodes, eval_rng, config.max_episode_steps);
  out.clean_return_mean = clean.mean;

  if (tc.corruption > 0.0) {
    CorruptionReport report;
    b.policy = corrupt_teacher(b.policy, env, tc.corruption, rng, &report);
    out.corrupted_keys = report.corrupted.size();
    out.visited_keys = report.visited;
  }
  if (tc.value_episodes > 0) {
    b.value = estimate_value(b.policy, env, tc.value_episodes, config.gamma, rng,
                             config.max_episode_steps);
    b.provenance.value_episodes = tc.value_episodes;
  }
  if (tc.zero_value) b.value = ValueTable{};

  if (tc.corruption > 0.0) {
    const MeanEstimate used = teacher_return(env, b.policy, config.teacher_eval_episodes, eval_rng,
                                             config.max_episode_steps);
    out.return_mean = used.mean;
    out.return_sem = used.sem;
  } else {
    out.return_mean = clean.mean;
    out.return_sem = clean.sem;
  }
  if (world.env->action_count() > b.policy.action_count())
    b.policy = b.policy.with_action_count(world.env->action_count());
  return out;
}

EvalPoint evaluate_student(const Environment& env, const PolicyTable& student,
                           const TeacherBundle& teacher, int episodes, Rng& rng, int max_steps) {
  EvalPoint out;
  auto episode_xent = [&](const Trajectory& traj) {
    double sum = 0.0;
    for (const auto& t : traj.steps)
      sum += cross_entropy(teacher.policy.probabilities(env.teacher_key(t.state)),
                           student.probabilities(env.observe(t.state)), kTeacherProbFloor);
    return sum;
  };
  for (int e = 0; e < episodes; ++e) {
    const Trajectory traj = run_episode(env, Control::Student, student, &teacher, rng, max_steps);
    out.ret_student += traj.total_reward();
    out.xent_student += episode_xent(traj);
  }
  for (int e = 0; e < episodes; ++e)
    out.xent_teacher += episode_xent(run_episode(env, Control::Teacher, student, &teacher, rng, max_steps));
  for (int e = 0; e < episodes; ++e)
    out.xent_uniform += episode_xent(run_episode(env, Control::Uniform, student, &teacher, rng, max_steps));
  const double n = episodes;
  out.ret_student /= n;
  out.xent_student /= n;
  out.xent_teacher /= n;
  out.xent_uniform /= n;
  return out;
}

RunRecord run_single(const ExperimentConfig& config, const WorldInstance& world,
                     const PreparedTeacher& teacher, const std::string& method,
                     std::uint64_t run_seed) {
  RunRecord rec;
  rec.mdp_index = world.index;
  rec.mdp_seed = world.mdp_seed;
  rec.run_seed = run_seed;
  rec.method = method;
  try {
    MethodSpec spec = preset(method);
    spec.gamma = config.gamma;
    const Environment& env = *world.env;
    const std::uint64_t stream =
        derive_seed({config.seed, world.mdp_seed, stable_hash(method), run_seed});
    Rng rng(stream);
    DistillState state(env.action_count());

    auto evaluate = [&](long step) {
      Rng eval_rng(derive_seed({stream, stable_hash("eval"), static_cast<std::uint64_t>(step)}));
      const EvalPoint p = evaluate_student(env, state.student, teacher.bundle, config.eval_episodes,
                                           eval_rng, config.max_episode_steps);
      rec.rows.push_back({world.mdp_seed, run_seed, method, step, p.ret_student,
                          teacher.return_mean, p.xent_student, p.xent_teacher, p.xent_uniform});
    };

    evaluate(0);
    for (long step = 1; step <= config.steps; ++step) {
      distill_step(spec, env, state, &teacher.bundle, config.learning_rate, rng,
                   config.max_episode_steps);
      if (step % config.eval_every == 0 || step == config.steps) evaluate(step);
    }
  } catch (const std::exception& e) {
    rec.error = e.what();
  }
  return rec;
}

namespace {

// Runs fn(i) for i in [0, n) on at most `parallelism` threads. fn must not
// throw.
template <class Fn>
void parallel_for(std::size_t n, int parallelism, Fn&& fn) {
  const std::size_t workers =
      std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, parallelism)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace

std::size_t SweepResult::failures() const {
  std::size_t n = 0;
  for (const auto& r : runs) n += r.error.has_value();
  return n;
}

std::vector<EvalRow> SweepResult::rows() const {
  std::vector<EvalRow> out;
  for (const auto& r : runs) out.insert(out.end(), r.rows.begin(), r.rows.end());
  return out;
}

SweepResult run_sweep(const ExperimentConfig& config, int parallelism) {
  const auto count = static_cast<std::size_t>(config.world.count);
  std::vector<std::optional<WorldInstance>> worlds(count);
  std::vector<std::optional<PreparedTeacher>> teachers(count);
  SweepResult result;
  result.teachers.resize(count);

  parallel_for(count, parallelism, [&](std::size_t i) {
    TeacherSummary& summary = result.teachers[i];
    summary.mdp_index = static_cast<int>(i);
    try {
      worlds[i] = make_world(config, static_cast<int>(i));
      summary.mdp_seed = worlds[i]->mdp_seed;
      teachers[i] = prepare_teacher(config, *worlds[i]);
      summary.return_mean = teachers[i]->return_mean;
      summary.return_sem = teachers[i]->return_sem;
      summary.clean_return_mean = teachers[i]->clean_return_mean;
      summary.corrupted_keys = teachers[i]->corrupted_keys;
      summary.visited_keys = teachers[i]->visited_keys;
    } catch (const std::exception& e) {
      summary.error = e.what();
    }
  });

  struct Task {
    std::size_t world;
    std::string method;
    std::uint64_t run_seed;
  };
  std::vector<Task> tasks;
  for (std::size_t i = 0; i < count; ++i)
    for (const auto& m : config.methods)
      for (std::uint64_t s : config.run_seeds) tasks.push_back({i, m, s});

  result.runs.resize(tasks.size());
  parallel_for(tasks.size(), parallelism, [&](std::size_t k) {
    const Task& t = tasks[k];
    if (!teachers[t.world]) {
      RunRecord& rec = result.runs[k];
      rec.mdp_index = static_cast<int>(t.world);
      rec.mdp_seed = result.teachers[t.world].mdp_seed;
      rec.run_seed = t.run_seed;
      rec.method = t.method;
      rec.error = "world or teacher preparation failed: " +
                  result.teachers[t.world].error.value_or("unknown error");
      return;
    }
    result.runs[k] = run_single(config, *worlds[t.world], *teachers[t.world], t.method, t.run_seed);
  });
  return result;
}

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string format_csv(const std::vector<EvalRow>& rows) {
  std::string out = kCsvHeader;
  out += '\n';
  for (const auto& r : rows) {
    out += std::to_string(r.mdp_seed) + ',' + std::to_string(r.run_seed) + ',' + r.method + ',' +
           std::to_string(r.step) + ',' + format_double(r.ret_student) + ',' +
           format_double(r.ret_teacher_ref) + ',' + format_double(r.xent_student) + ',' +
           format_double(r.xent_teacher) + ',' + format_double(r.xent_uniform) + '\n';
  }
  return out;
}

std::vector<EvalRow> parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader)
    throw ConfigError("CSV header does not match the expected columns");
  std::vector<EvalRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) f.push_back(cell);
    if (f.size() != 9) throw ConfigError("CSV line " + std::to_string(line_no) + " has the wrong width");
    try {
      rows.push_back({std::stoull(f[0]), std::stoull(f[1]), f[2], std::stol(f[3]), std::stod(f[4]),
                      std::stod(f[5]), std::stod(f[6]), std::stod(f[7]), std::stod(f[8])});
    } catch (const std::logic_error&) {
      throw ConfigError("CSV line " + std::to_string(line_no) + " is not numeric where expected");
    }
  }
  return rows;
}

Metric metric_from_name(const std::string& name) {
  for (Metric m : {Metric::RetStudent, Metric::RetTeacherRef, Metric::XentStudent,
                   Metric::XentTeacher, Metric::XentUniform})
    if (name == metric_name(m)) return m;
  throw ConfigError("unknown metric '" + name + "'");
}

const char* metric_name(Metric metric) {
  switch (metric) {
    case Metric::RetStudent: return "ret_student";
    case Metric::RetTeacherRef: return "ret_teacher_ref";
    case Metric::XentStudent: return "xent_student";
    case Metric::XentTeacher: return "xent_teacher";
    case Metric::XentUniform: return "xent_uniform";
  }
  return "";
}

double metric_value(const EvalRow& row, Metric metric) {
  switch (metric) {
    case Metric::RetStudent: return row.ret_student;
    case Metric::RetTeacherRef: return row.ret_teacher_ref;
    case Metric::XentStudent: return row.xent_student;
    case Metric::XentTeacher: return row.xent_teacher;
    case Metric::XentUniform: return row.xent_uniform;
  }
  return 0.0;
}

namespace {

std::string group_label(const EvalRow& r, const std::vector<std::string>& keys) {
  std::string label;
  for (const auto& k : keys) {
    if (!label.empty()) label += '|';
    if (k == "method") label += r.method;
    else if (k == "mdp_seed") label += std::to_string(r.mdp_seed);
    else if (k == "run_seed") label += std::to_string(r.run_seed);
    else throw ConfigError("unknown group key '" + k + "'");
  }
  return label;
}

std::map<std::string, AggregateCurve> aggregate_impl(const std::vector<EvalRow>& rows,
                                                     Metric metric,
                                                     const std::vector<std::string>& keys,
                                                     std::size_t min_runs) {
  struct Group {
    std::set<std::tuple<std::uint64_t, std::uint64_t, std::string>> runs;
    std::map<long, std::vector<double>> values;
  };
  std::map<std::string, Group> groups;
  for (const auto& r : rows) {
    Group& g = groups[group_label(r, keys)];
    g.runs.emplace(r.mdp_seed, r.run_seed, r.method);
    g.values[r.step].push_back(metric_value(r, metric));
  }
  std::map<std::string, AggregateCurve> out;
  for (const auto& [label, g] : groups) {
    if (g.runs.size() < min_runs)
      throw InsufficientRuns("group '" + label + "' has " + std::to_string(g.runs.size()) +
                             " run(s); at least " + std::to_string(min_runs) + " are needed");
    AggregateCurve curve;
    curve.runs = g.runs.size();
    for (const auto& [step, values] : g.values) {
      const MeanEstimate m = mean_and_sem(values);
      curve.steps.push_back(step);
      curve.mean.push_back(m.mean);
      curve.half_width.push_back(1.96 * m.sem);
    }
    out.emplace(label, std::move(curve));
  }
  return out;
}

}  // namespace

std::map<std::string, AggregateCurve> aggregate(const std::vector<EvalRow>& rows, Metric metric,
                                                const std::vector<std::string>& group_keys) {
  return aggregate_impl(rows, metric, group_keys, 2);
}

double area_speedup(const std::vector<long>& steps, const std::vector<double>& a,
                    const std::vector<double>& b) {
  if (steps.size() < 2 || a.size() != steps.size() || b.size() != steps.size())
    throw DegenerateCurve("curves need a shared grid of at least two steps");
  const double baseline = 0.5 * (a[0] + b[0]);
  double area_a = 0.0;
  double area_b = 0.0;
  for (std::size_t i = 1; i < steps.size(); ++i) {
    const double dx = static_cast<double>(steps[i] - steps[i - 1]);
    area_a += 0.5 * dx * ((a[i - 1] - baseline) + (a[i] - baseline));
    area_b += 0.5 * dx * ((b[i - 1] - baseline) + (b[i] - baseline));
  }
  if (!(area_a > 0.0) || !(area_b > 0.0))
    throw DegenerateCurve("area after shifting is not positive");
  return area_a / area_b;
}

nlohmann::json summarize(const std::vector<EvalRow>& rows) {
  nlohmann::json methods = nlohmann::json::object();
  for (Metric m : {Metric::RetStudent, Metric::RetTeacherRef, Metric::XentStudent,
                   Metric::XentTeacher, Metric::XentUniform}) {
    for (const auto& [label, curve] : aggregate_impl(rows, m, {"method"}, 1)) {
      auto& entry = methods[label];
      entry["runs"] = curve.runs;
      entry["curves"][metric_name(m)] = {
          {"steps", curve.steps}, {"mean", curve.mean}, {"half_width", curve.half_width}};
      entry["final"][metric_name(m)] = {{"step", curve.steps.back()},
                                        {"mean", curve.mean.back()},
                                        {"half_width", curve.half_width.back()}};
    }
  }
  return {{"rows", rows.size()}, {"methods", std::move(methods)}};
}

void write_sweep_outputs(const std::filesystem::path& out_dir, const ExperimentConfig& config,
                         const SweepResult& result) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "runs");
  auto write = [](const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot write " + path.string());
    f << text;
  };
  for (const auto& run : result.runs) {
    const std::string name = std::to_string(run.mdp_seed) + "_" + run.method + "_" +
                             std::to_string(run.run_seed) + ".csv";
    write(out_dir / "runs" / name, format_csv(run.rows));
  }
  const std::vector<EvalRow> rows = result.rows();
  write(out_dir / "merged.csv", format_csv(rows));

  nlohmann::json summary = summarize(rows);
  summary["config"] = config_to_json(config);
  nlohmann::json teachers = nlohmann::json::array();
  for (const auto& t : result.teachers) {
    nlohmann::json e = {{"mdp_index", t.mdp_index},
                        {"mdp_seed", t.mdp_seed},
                        {"return_mean", t.return_mean},
                        {"return_sem", t.return_sem},
                        {"clean_return_mean", t.clean_return_mean},
                        {"corrupted_keys", t.corrupted_keys},
                        {"visited_keys", t.visited_keys}};
    e["error"] = t.error ? nlohmann::json(*t.error) : nlohmann::json(nullptr);
    teachers.push_back(std::move(e));
  }
  summary["teachers"] = std::move(teachers);
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& r : result.runs)
    if (r.error)
      failures.push_back({{"mdp_seed", r.mdp_seed},
                          {"method", r.method},
                          {"run_seed", r.run_seed},
                          {"error", *r.error}});
  summary["failures"] = std::move(failures);
  write(out_dir / "summary.json", summary.dump(2) + "\n");
}

}  // namespace pdistill
