#include <doctest.h>

#include <cmath>
#include <map>
#include <tuple>

#include "oracles.hpp"
#include "pdistill/distill.hpp"
#include "pdistill/errors.hpp"
#include "pdistill/verify.hpp"

using namespace pdistill;

namespace {

using Row = std::tuple<Control, StepLoss, IntrinsicReward, bool>;

// The method catalogue, restated independently of the library table.
const std::map<std::string, Row>& golden_presets() {
  using C = Control;
  using L = StepLoss;
  using R = IntrinsicReward;
  static const std::map<std::string, Row> rows{
      {"teacher_distill", {C::Teacher, L::XEntTeacherGivenStudent, R::None, false}},
      {"on_policy_distill", {C::Student, L::XEntTeacherGivenStudent, R::None, false}},
      {"on_policy_distill_r", {C::Student, L::XEntTeacherGivenStudent, R::None, true}},
      {"uniform_distill", {C::Uniform, L::XEntTeacherGivenStudent, R::None, false}},
      {"entropy_reg", {C::Student, L::None, R::LogTeacherProb, false}},
      {"entropy_reg_r", {C::Student, L::None, R::LogTeacherProb, true}},
      {"n_distill", {C::Student, L::XEntTeacherGivenStudent, R::NegNextXEnt, false}},
      {"n_distill_r", {C::Student, L::XEntTeacherGivenStudent, R::NegNextXEnt, true}},
      {"exp_entropy_reg", {C::Student, L::XEntStudentGivenTeacher, R::NextLogTeacherProb, false}},
      {"exp_entropy_reg_r", {C::Student, L::XEntStudentGivenTeacher, R::NextLogTeacherProb, true}},
      {"teacher_v_reward", {C::Student, L::None, R::TeacherVShaping, false}},
      {"td_teacher_bootstrap", {C::Student, L::None, R::TeacherVBootstrap, false}},
      {"gated_distill_r", {C::Student, L::GatedXEnt, R::None, true}},
      {"actor_critic", {C::Student, L::None, R::None, true}},
  };
  return rows;
}

// 3x3 world used for the sampled-versus-exact checks: a goal, a penalty
// and a wall around a central start.
GridWorld small_world() {
  std::vector<Cell> cells(9);
  cells[2] = {false, 10.0, true};
  cells[1].wall = true;
  cells[6] = {false, -1.0, false};
  return GridWorld(3, 3, cells, 0.1, 0.1, 0, {ObservationMode::Full, 0});
}

TeacherBundle dirac_teacher(const Environment& env, const std::vector<int>& actions) {
  DistributionTable d(env.action_count());
  for (StateId s = 0; s < env.state_count(); ++s) {
    if (!env.is_decision_state(s)) continue;
    std::vector<double> p(env.action_count(), 0.0);
    p[actions[s]] = 1.0;
    d.set(env.teacher_key(s), p);
  }
  TeacherBundle b{d, exact_state_values(env, d, 1.0), {}, {}};
  return b;
}

Vector sampled_update(const MethodSpec& spec, const Environment& env, const PolicyTable& student,
                      const TeacherBundle& teacher, const ParamLayout& layout, int episodes,
                      Rng& rng, Vector* sem = nullptr) {
  const int n = layout.size();
  Vector sum = Vector::Zero(n), sq = Vector::Zero(n);
  const ValueTable baseline;
  for (int i = 0; i < episodes; ++i) {
    UpdateAccumulator acc(env.action_count());
    const Trajectory traj = run_episode(env, spec.control, student, &teacher, rng);
    accumulate_episode_update(spec, env, student, baseline, &teacher, traj, acc);
    const Vector u = layout.project(acc);
    sum += u;
    sq += u.cwiseProduct(u);
  }
  const Vector mean = sum / episodes;
  if (sem) {
    const Vector var = (sq / episodes - mean.cwiseProduct(mean)) * (episodes / (episodes - 1.0));
    *sem = (var.cwiseMax(0.0) / episodes).cwiseSqrt();
  }
  return mean;
}

PolicyTable random_student(const Environment& env, const ParamLayout& layout, Rng& rng,
                           double scale = 1.0) {
  Vector theta(layout.size());
  for (int i = 0; i < theta.size(); ++i) theta[i] = scale * (2 * uniform01(rng) - 1);
  return layout.policy(theta, PolicyTable(env.action_count()));
}

// Lower-tail standard normal quantile by bisection on erfc.
double normal_quantile(double p) {
  double lo = -40.0, hi = 0.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (0.5 * std::erfc(-mid / std::sqrt(2.0)) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("presets reproduce the method catalogue") {
  const auto& golden = golden_presets();
  CHECK(preset_names().size() == golden.size());
  for (const auto& name : preset_names()) {
    INFO(name);
    REQUIRE(golden.contains(name));
    const MethodSpec spec = preset(name);
    const auto& [control, loss, intrinsic, env_reward] = golden.at(name);
    CHECK(spec.control == control);
    CHECK(spec.loss == loss);
    CHECK(spec.intrinsic == intrinsic);
    CHECK(spec.add_env_reward == env_reward);
    CHECK(spec.gamma == 0.99);
    CHECK(spec.matching == MatchingLoss::CrossEntropy);
  }
}

TEST_CASE("preset lookup errors and the overlap suffix") {
  CHECK_THROWS_AS(preset("policy_cloning"), ConfigError);
  const MethodSpec s = preset("on_policy_distill_r:overlap");
  CHECK(s.matching == MatchingLoss::Overlap);
  CHECK(s.add_env_reward);
  CHECK_THROWS_AS(preset("nope:overlap"), ConfigError);
}

TEST_CASE("value gate examples") {
  CHECK(gated_loss_coefficient(5.0, 3.0) == 1.0);
  CHECK(gated_loss_coefficient(3.0, 3.0) == 0.0);
  CHECK(gated_loss_coefficient(-1.0, 0.0) == 0.0);
}

TEST_CASE("shaping reward examples") {
  CHECK(shaping_reward(2.0, 2.0, 0.0) == 0.0);
  const double eps = 0.25;
  CHECK(shaping_reward(2.0 - eps, 2.0, 0.5) == doctest::Approx(-eps + 0.5));
  CHECK(shaping_reward(2.0 - eps, 2.0, 0.5) < 0.5);
}

TEST_CASE("shaping rewards telescope on every sampled episode") {
  const GridWorld g = generate_random_mdp(5, {}, 6, 6);
  Rng rng(1);
  const TeacherBundle teacher = random_teacher(g, rng);
  const PolicyTable student(4);
  for (int ep = 0; ep < 200; ++ep) {
    const Trajectory traj = run_episode(g, Control::Student, student, &teacher, rng);
    double shaped = 0.0, env = 0.0;
    for (const auto& t : traj.steps) {
      const double v_next = t.done ? 0.0 : teacher.value->value(g.teacher_key(t.next));
      shaped += shaping_reward(v_next, teacher.value->value(g.teacher_key(t.state)), t.reward);
      env += t.reward;
    }
    if (traj.truncated) continue;
    const double v0 = teacher.value->value(g.teacher_key(g.initial_state()));
    CHECK(std::abs(shaped - (env - v0)) <= 1e-12 * std::max(1.0, std::abs(env) + std::abs(v0)));
  }
}

TEST_CASE("episode sampling under the three controls") {
  SUBCASE("uniform control picks actions uniformly") {
    const GridWorld g = GridWorld::open(10, 10, 0.1, 0.01);
    const PolicyTable student(4);
    Rng rng(2);
    std::vector<double> counts(4, 0.0);
    long steps = 0;
    while (steps < 10000) {
      const Trajectory t = run_episode(g, Control::Uniform, student, nullptr, rng);
      for (const auto& s : t.steps) {
        counts[s.action] += 1;
        if (++steps == 10000) break;
      }
    }
    for (double c : counts) {
      // Binomial SEM of a frequency around 1/4.
      const double sem = std::sqrt(0.25 * 0.75 / 10000.0);
      CHECK(std::abs(c / 10000.0 - 0.25) <= 3 * sem);
    }
  }
  SUBCASE("forced termination gives single steps") {
    const GridWorld g = GridWorld::open(5, 5, 0.1, 1.0);
    const PolicyTable student(4);
    Rng rng(3);
    for (int i = 0; i < 50; ++i) CHECK(run_episode(g, Control::Student, student, nullptr, rng).size() == 1);
  }
  SUBCASE("student control follows the softmax (chi-square)") {
    const GridWorld g = GridWorld::open(5, 5, 0.1, 1.0);
    PolicyTable student(4);
    const ObservationKey& k = g.observe(g.initial_state());
    student.set_logits(k, std::vector<double>{0.5, -1.0, 1.2, 0.0});
    const auto p = student.probabilities(k);
    Rng rng(4);
    std::vector<double> counts(4, 0.0);
    const int n = 10000;
    for (int i = 0; i < n; ++i) counts[run_episode(g, Control::Student, student, nullptr, rng).steps[0].action] += 1;
    double chi2 = 0.0;
    for (int a = 0; a < 4; ++a) chi2 += std::pow(counts[a] - n * p[a], 2) / (n * p[a]);
    // 99th percentile of chi-square with 3 degrees of freedom.
    CHECK(chi2 < 11.345);
  }
}

TEST_CASE("cloning a teacher the student already matches gives no update") {
  const GridWorld g = small_world();
  Rng rng(5);
  const ParamLayout layout = ParamLayout::tabular(g);
  const PolicyTable student = random_student(g, layout, rng);
  DistributionTable d(4);
  for (StateId s = 0; s < g.state_count(); ++s) {
    if (!g.is_decision_state(s)) continue;
    const auto p = student.probabilities(g.observe(s));
    d.set(g.teacher_key(s), {p.begin(), p.end()});
  }
  const TeacherBundle teacher{d, std::nullopt, {}, {}};
  Vector sem;
  const Vector mean = sampled_update(preset("teacher_distill"), g, student, teacher, layout, 1000, rng, &sem);
  for (int i = 0; i < mean.size(); ++i) {
    CHECK(std::abs(mean[i]) <= 3 * sem[i] + 1e-14);
    CHECK(std::abs(mean[i]) < 1e-12);
  }
}

TEST_CASE("entropy-regularised samples point along the expected-entropy field") {
  // 2x2 world with a dirac teacher: sampled log-teacher-probability updates
  // should agree in direction with the exact expected-entropy update.
  std::vector<Cell> cells(4);
  cells[1] = {false, 10.0, true};
  const GridWorld g(2, 2, cells, 0.1, 0.2, 0, {ObservationMode::Full, 0});
  const auto opt = oracle::value_iteration(g, 1.0);
  std::vector<int> best(g.state_count(), 0);
  for (StateId s = 0; s < g.state_count(); ++s)
    best[s] = static_cast<int>(std::max_element(opt.q[s].begin(), opt.q[s].end()) - opt.q[s].begin());
  const TeacherBundle teacher = dirac_teacher(g, best);
  const ParamLayout layout = ParamLayout::tabular(g);
  MethodSpec entropy = preset("entropy_reg");
  MethodSpec expected = preset("exp_entropy_reg");
  entropy.gamma = expected.gamma = 1.0;

  Rng rng(6);
  int positive = 0;
  const int draws = 20;
  for (int i = 0; i < draws; ++i) {
    const PolicyTable student = random_student(g, layout, rng);
    const Vector exact = layout.project(exact_expected_update(expected, g, student, {}, &teacher));
    const Vector sampled = sampled_update(entropy, g, student, teacher, layout, 2000, rng);
    positive += sampled.dot(exact) > 0.0 ? 1 : 0;
  }
  CHECK(positive >= 19);
}

TEST_CASE("reward variants match their base methods without rewards") {
  const GridWorld g = GridWorld::open(4, 4, 0.1, 0.05);
  Rng trng(7);
  const TeacherBundle teacher = random_teacher(g, trng);
  const ParamLayout layout = ParamLayout::tabular(g);
  for (const auto& [base, with_r] : {std::pair{"on_policy_distill", "on_policy_distill_r"},
                                    std::pair{"n_distill", "n_distill_r"},
                                    std::pair{"entropy_reg", "entropy_reg_r"},
                                    std::pair{"exp_entropy_reg", "exp_entropy_reg_r"}}) {
    INFO(base);
    Rng seed_a(8), seed_b(8), seed_c(9);
    const PolicyTable student = random_student(g, layout, seed_c);
    Vector sem_a, sem_b;
    const Vector a = sampled_update(preset(base), g, student, teacher, layout, 2000, seed_a, &sem_a);
    const Vector b = sampled_update(preset(with_r), g, student, teacher, layout, 2000, seed_b, &sem_b);
    for (int i = 0; i < a.size(); ++i)
      CHECK(std::abs(a[i] - b[i]) <= 3 * std::sqrt(sem_a[i] * sem_a[i] + sem_b[i] * sem_b[i]) + 1e-12);
  }
}

TEST_CASE("sampled updates agree with the exact expected update for every preset") {
  const GridWorld g = small_world();
  Rng rng(10);
  const TeacherBundle teacher = random_teacher(g, rng);
  const ParamLayout layout = ParamLayout::tabular(g);
  const PolicyTable student = random_student(g, layout, rng);
  // Several hundred coordinates are compared at once. The per-coordinate
  // bound is Bonferroni-scaled so the whole family keeps the false-alarm
  // rate of one two-sided 3 SEM check (0.27%).
  const double comparisons = static_cast<double>(preset_names().size()) * layout.size();
  const double z = -normal_quantile(0.0027 / (2.0 * comparisons));
  for (const auto& name : preset_names()) {
    INFO(name);
    const MethodSpec spec = preset(name);
    const Vector exact = layout.project(exact_expected_update(spec, g, student, {}, &teacher));
    Vector sem;
    const Vector mean = sampled_update(spec, g, student, teacher, layout, 100000, rng, &sem);
    for (int i = 0; i < mean.size(); ++i) {
      INFO("coordinate " << i << " exact " << exact[i] << " sampled " << mean[i] << " sem " << sem[i]);
      CHECK(std::abs(mean[i] - exact[i]) <= z * sem[i] + 1e-12);
    }
  }
}

TEST_CASE("teacher-value methods require a critic") {
  const GridWorld g = small_world();
  const TeacherBundle no_value{DistributionTable(4), std::nullopt, {}, {}};
  DistillState state(4);
  Rng rng(11);
  for (const char* name : {"teacher_v_reward", "td_teacher_bootstrap", "gated_distill_r"}) {
    INFO(name);
    CHECK_THROWS_AS(distill_step(preset(name), g, state, &no_value, 0.1, rng), MissingTeacherValue);
  }
  CHECK_THROWS_AS(td_teacher_bootstrap_step(g, state, no_value, 0.1, 0.99, rng), MissingTeacherValue);
}

TEST_CASE("bootstrap target ignores the value of a terminal successor") {
  const CorridorWorld c(1, 0.0);
  TeacherBundle teacher = make_optimal_corridor_teacher(c);
  teacher.value->set(c.teacher_key(c.state_at(1)), 5.0);  // must not leak in
  const PolicyTable student(2);
  Trajectory traj;
  traj.steps.push_back({c.initial_state(), 1, 1.0, c.state_at(1), true});
  UpdateAccumulator acc(2);
  accumulate_episode_update(preset("td_teacher_bootstrap"), c, student, {}, &teacher, traj, acc);
  const auto g = acc.pending_logits().at(c.observe(c.initial_state()));
  CHECK(g[0] == doctest::Approx(-0.5));
  CHECK(g[1] == doctest::Approx(0.5));
}

TEST_CASE("bootstrapping from a zero critic is myopic") {
  const CorridorWorld c(3);
  TeacherBundle zero = make_optimal_corridor_teacher(c);
  for (const auto& k : zero.value->keys()) zero.value->set(k, 0.0);
  DistillState state(2);
  Rng rng(12);
  for (int i = 0; i < 5000; ++i) td_teacher_bootstrap_step(c, state, zero, 0.1, 0.99, rng);
  CHECK(state.student.probabilities(c.observe(c.state_at(2)))[1] > 0.9);
  for (int x = -1; x <= 1; ++x) CHECK(state.student.probabilities(c.observe(c.state_at(x)))[1] < 0.75);
}

TEST_CASE("bootstrapping from the optimal critic solves the corridor") {
  const CorridorWorld c(3);
  const TeacherBundle good = make_optimal_corridor_teacher(c);
  DistillState state(2);
  Rng rng(13);
  for (int i = 0; i < 5000; ++i) td_teacher_bootstrap_step(c, state, good, 0.1, 0.99, rng);
  Rng eval(14);
  const MeanEstimate ret = evaluate_return(
      c, [&](StateId s) { return state.student.probabilities(c.observe(s)); }, 1000, eval);
  CHECK(ret.mean >= 0.9);
}

TEST_CASE("distill steps count and respect frozen coordinates") {
  const GridWorld g = small_world();
  Rng rng(15);
  const TeacherBundle teacher = random_teacher(g, rng);
  DistillState state(4);
  const ObservationKey& start = g.observe(g.initial_state());
  state.free_coordinates = std::vector<std::pair<ObservationKey, int>>{{start, 0}};
  for (int i = 0; i < 20; ++i) distill_step(preset("on_policy_distill"), g, state, &teacher, 0.1, rng);
  CHECK(state.step == 20);
  const auto l = state.student.logits(start);
  CHECK(l[0] != 0.0);
  for (int a = 1; a < 4; ++a) CHECK(l[a] == 0.0);
  for (const auto& k : state.student.keys()) {
    if (k == start) continue;
    for (double x : state.student.logits(k)) CHECK(x == 0.0);
  }
}

TEST_CASE("matching loss values") {
  const std::vector<double> teacher{0.7, 0.2, 0.1};
  const std::vector<double> student{0.2, 0.5, 0.3};
  const double tgs = cross_entropy(teacher, student);
  CHECK(matching_loss(preset("on_policy_distill"), teacher, student, 1.0) == doctest::Approx(tgs));
  CHECK(matching_loss(preset("on_policy_distill"), teacher, student, 2.0) == doctest::Approx(2 * tgs));
  CHECK(matching_loss(preset("exp_entropy_reg"), teacher, student, 1.0) ==
        doctest::Approx(cross_entropy(student, teacher)));
  CHECK(matching_loss(preset("on_policy_distill:overlap"), teacher, student, 1.0) ==
        doctest::Approx(-(0.7 * 0.2 + 0.2 * 0.5 + 0.1 * 0.3)));
  CHECK(matching_loss(preset("on_policy_distill"), teacher, student, 0.0) == 0.0);
}
