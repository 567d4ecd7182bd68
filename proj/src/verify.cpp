#include "pdistill/verify.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "pdistill/errors.hpp"

namespace pdistill {

namespace {

constexpr double kMassTolerance = 1e-10;

struct DecisionIndex {
  std::vector<StateId> states;
  std::vector<int> index;

  explicit DecisionIndex(const Environment& env) : index(env.state_count(), -1) {
    for (StateId s = 0; s < env.state_count(); ++s) {
      if (!env.is_decision_state(s)) continue;
      index[s] = static_cast<int>(states.size());
      states.push_back(s);
    }
  }
  int size() const { return static_cast<int>(states.size()); }
};

using ControlFn = std::function<std::span<const double>(StateId)>;

Eigen::MatrixXd transition_matrix(const Environment& env, const DecisionIndex& idx,
                                  const ControlFn& control) {
  const int n = idx.size();
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    const auto q = control(idx.states[i]);
    for (int a = 0; a < env.action_count(); ++a) {
      if (q[a] == 0.0) continue;
      for (const Outcome& o : env.outcomes(idx.states[i], a))
        if (!o.done) p(i, idx.index[o.next]) += q[a] * o.probability;
    }
  }
  return p;
}

Vector solve_checked(const Eigen::MatrixXd& a, const Vector& b) {
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
  if (!lu.isInvertible()) throw HorizonUnbounded("episodes do not terminate");
  return lu.solve(b);
}

Vector occupancy_impl(const Environment& env, const DecisionIndex& idx, const ControlFn& control,
                      const Eigen::MatrixXd& p) {
  const int n = idx.size();
  Vector mu = Vector::Zero(n);
  mu[idx.index[env.initial_state()]] = 1.0;
  const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n) - p.transpose();
  const Vector d = solve_checked(a, mu);
  // Every episode has to end: the expected number of terminations is one.
  double ended = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto q = control(idx.states[i]);
    for (int act = 0; act < env.action_count(); ++act) {
      if (q[act] == 0.0) continue;
      for (const Outcome& o : env.outcomes(idx.states[i], act))
        if (o.done) ended += d[i] * q[act] * o.probability;
    }
  }
  if (std::abs(ended - 1.0) > kMassTolerance || !d.allFinite())
    throw HorizonUnbounded("termination mass differs from one");
  return d;
}

double log_floor(double p) { return std::log(std::max(p, kTeacherProbFloor)); }

}  // namespace

ParamLayout ParamLayout::tabular(const Environment& env) {
  std::set<ObservationKey> keys;
  for (StateId s = 0; s < env.state_count(); ++s)
    if (env.is_decision_state(s)) keys.insert(env.observe(s));
  ParamLayout out;
  for (const auto& k : keys)
    for (int a = 0; a < env.action_count(); ++a) out.coordinates.emplace_back(k, a);
  return out;
}

ParamLayout ParamLayout::counterexample() {
  return {{{CounterexampleMdp::root_key(), 1}, {CounterexampleMdp::branch_key(), 0}}};
}

PolicyTable ParamLayout::policy(const Vector& theta, const PolicyTable& base) const {
  if (theta.size() != size()) throw InvalidParams("parameter vector does not match the layout");
  PolicyTable out = base;
  for (int i = 0; i < size(); ++i) {
    const auto& [key, action] = coordinates[i];
    const auto current = out.logits(key);
    std::vector<double> logits(current.begin(), current.end());
    logits[action] = theta[i];
    out.set_logits(key, logits);
  }
  return out;
}

Vector ParamLayout::project(const UpdateAccumulator& acc) const {
  Vector out = Vector::Zero(size());
  for (int i = 0; i < size(); ++i) {
    const auto& [key, action] = coordinates[i];
    const auto it = acc.pending_logits().find(key);
    if (it != acc.pending_logits().end()) out[i] = it->second[action];
  }
  return out;
}

Vector occupancy(const Environment& env, const ControlFn& control) {
  const DecisionIndex idx(env);
  return occupancy_impl(env, idx, control, transition_matrix(env, idx, control));
}

UpdateAccumulator exact_expected_update(const MethodSpec& spec, const Environment& env,
                                        const PolicyTable& student, const ValueTable& baseline,
                                        const TeacherBundle* teacher) {
  if (spec.needs_teacher() && teacher == nullptr)
    throw InvalidParams("method '" + spec.name + "' requires a teacher");
  if (spec.needs_teacher_value() && !(teacher && teacher->value))
    throw MissingTeacherValue("method '" + spec.name + "' needs the teacher's critic");

  const DecisionIndex idx(env);
  const int n = idx.size();
  const int actions = env.action_count();
  const ControlFn control = [&](StateId s) {
    return control_probabilities(spec.control, env, s, student, teacher);
  };
  const Eigen::MatrixXd p = transition_matrix(env, idx, control);
  const Vector d = occupancy_impl(env, idx, control, p);

  auto weight = [&](StateId s) { return teacher ? teacher->weight(env.teacher_key(s)) : 1.0; };
  auto teacher_probs = [&](StateId s) { return teacher->policy.probabilities(env.teacher_key(s)); };
  auto v_teacher = [&](StateId s) { return teacher->value->value(env.teacher_key(s)); };

  UpdateAccumulator acc(actions);

  if (spec.uses_rewards()) {
    std::vector<double> step_loss(n, 0.0);
    if (spec.intrinsic == IntrinsicReward::NegNextXEnt) {
      for (int i = 0; i < n; ++i) {
        const StateId s = idx.states[i];
        step_loss[i] = matching_loss(spec, teacher_probs(s),
                                     student.probabilities(env.observe(s)), weight(s));
      }
    }
    // Expected next-step log teacher probability under the control.
    std::vector<double> next_log_teacher(n, 0.0);
    if (spec.intrinsic == IntrinsicReward::NextLogTeacherProb) {
      for (int i = 0; i < n; ++i) {
        const StateId s = idx.states[i];
        const auto q = control(s);
        const auto pi = teacher_probs(s);
        double e = 0.0;
        for (int a = 0; a < actions; ++a) e += q[a] * log_floor(pi[a]);
        next_log_teacher[i] = weight(s) * e;
      }
    }

    // rho(s, a): expected one-step r_hat.
    Eigen::MatrixXd rho = Eigen::MatrixXd::Zero(n, actions);
    for (int i = 0; i < n; ++i) {
      const StateId s = idx.states[i];
      for (int a = 0; a < actions; ++a) {
        double r = 0.0;
        if (spec.intrinsic == IntrinsicReward::LogTeacherProb)
          r += weight(s) * log_floor(teacher_probs(s)[a]);
        for (const Outcome& o : env.outcomes(s, a)) {
          double branch = spec.add_env_reward ? o.reward : 0.0;
          const int j = o.done ? -1 : idx.index[o.next];
          switch (spec.intrinsic) {
            case IntrinsicReward::NegNextXEnt:
              if (j >= 0) branch -= step_loss[j];
              break;
            case IntrinsicReward::NextLogTeacherProb:
              if (j >= 0) branch += next_log_teacher[j];
              break;
            case IntrinsicReward::TeacherVShaping:
              branch += shaping_reward(j >= 0 ? v_teacher(o.next) : 0.0, v_teacher(s), o.reward);
              break;
            case IntrinsicReward::TeacherVBootstrap:
              branch += o.reward + (j >= 0 ? spec.gamma * v_teacher(o.next) : 0.0);
              break;
            default:
              break;
          }
          r += o.probability * branch;
        }
        rho(i, a) = r;
      }
    }

    Eigen::MatrixXd q_hat = rho;
    if (spec.intrinsic != IntrinsicReward::TeacherVBootstrap) {
      Vector rho_q = Vector::Zero(n);
      for (int i = 0; i < n; ++i) {
        const auto q = control(idx.states[i]);
        for (int a = 0; a < actions; ++a) rho_q[i] += q[a] * rho(i, a);
      }
      const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n) - spec.gamma * p;
      const Vector v_hat = solve_checked(a, rho_q);
      for (int i = 0; i < n; ++i) {
        const StateId s = idx.states[i];
        for (int act = 0; act < actions; ++act)
          for (const Outcome& o : env.outcomes(s, act))
            if (!o.done) q_hat(i, act) += spec.gamma * o.probability * v_hat[idx.index[o.next]];
      }
    }

    for (int i = 0; i < n; ++i) {
      const StateId s = idx.states[i];
      const auto q = control(s);
      for (int a = 0; a < actions; ++a) {
        if (q[a] == 0.0 || d[i] == 0.0) continue;
        accumulate_logprob_gradient(acc, student, env.observe(s), a, d[i] * q[a] * q_hat(i, a));
      }
    }
  }

  if (spec.loss != StepLoss::None) {
    for (int i = 0; i < n; ++i) {
      const StateId s = idx.states[i];
      if (d[i] == 0.0) continue;
      const ObservationKey& key = env.observe(s);
      double w = weight(s);
      if (spec.loss == StepLoss::GatedXEnt)
        w *= gated_loss_coefficient(v_teacher(s), baseline.value(key));
      if (w == 0.0) continue;
      const auto target = teacher_probs(s);
      const double c = d[i] * w;
      if (spec.loss == StepLoss::XEntStudentGivenTeacher) {
        accumulate_cross_entropy_gradient(acc, target, student, key,
                                          XentDirection::StudentGivenTeacher, -c, kTeacherProbFloor);
      } else if (spec.matching == MatchingLoss::Overlap) {
        accumulate_overlap_gradient(acc, target, student, key, c);
      } else {
        accumulate_cross_entropy_gradient(acc, target, student, key,
                                          XentDirection::TeacherGivenStudent, -c);
      }
    }
  }
  return acc;
}

ExactDynamics::ExactDynamics(const Environment& env, MethodSpec spec,
                             const TeacherBundle* teacher, ParamLayout layout, PolicyTable base,
                             ValueTable baseline)
    : env_(&env),
      spec_(std::move(spec)),
      teacher_(teacher),
      layout_(std::move(layout)),
      base_(std::move(base)),
      baseline_(std::move(baseline)) {}

Vector ExactDynamics::field(const Vector& theta) const {
  const PolicyTable student = policy(theta);
  return layout_.project(exact_expected_update(spec_, *env_, student, baseline_, teacher_));
}

VectorField ExactDynamics::as_field() const {
  return [this](const Vector& theta) { return field(theta); };
}

namespace {

template <class PerState>
double expected_sum(const Environment& env, const PolicyTable& student, PerState&& per_state) {
  const DecisionIndex idx(env);
  const ControlFn control = [&](StateId s) { return student.probabilities(env.observe(s)); };
  const Vector d = occupancy_impl(env, idx, control, transition_matrix(env, idx, control));
  double total = 0.0;
  for (int i = 0; i < idx.size(); ++i) total += d[i] * per_state(idx.states[i]);
  return total;
}

}  // namespace

double expected_return(const Environment& env, const PolicyTable& student) {
  return expected_sum(env, student, [&](StateId s) {
    const auto pi = student.probabilities(env.observe(s));
    double r = 0.0;
    for (int a = 0; a < env.action_count(); ++a)
      for (const Outcome& o : env.outcomes(s, a)) r += pi[a] * o.probability * o.reward;
    return r;
  });
}

double expected_matching_loss(const MethodSpec& spec, const Environment& env,
                              const PolicyTable& student, const TeacherBundle& teacher) {
  return expected_sum(env, student, [&](StateId s) {
    return matching_loss(spec, teacher.policy.probabilities(env.teacher_key(s)),
                         student.probabilities(env.observe(s)),
                         teacher.weight(env.teacher_key(s)));
  });
}

double expected_neg_log_teacher(const Environment& env, const PolicyTable& student,
                                const TeacherBundle& teacher) {
  return expected_sum(env, student, [&](StateId s) {
    const auto pi = student.probabilities(env.observe(s));
    const auto target = teacher.policy.probabilities(env.teacher_key(s));
    double e = 0.0;
    for (int a = 0; a < env.action_count(); ++a) e -= pi[a] * log_floor(target[a]);
    return teacher.weight(env.teacher_key(s)) * e;
  });
}

Eigen::MatrixXd numeric_jacobian(const VectorField& g, const Vector& theta, double h) {
  const int n = static_cast<int>(theta.size());
  Eigen::MatrixXd j(n, n);
  for (int c = 0; c < n; ++c) {
    Vector plus = theta;
    Vector minus = theta;
    plus[c] += h;
    minus[c] -= h;
    j.col(c) = (g(plus) - g(minus)) / (2.0 * h);
  }
  return j;
}

double jacobian_symmetry_defect(const VectorField& g, const Vector& theta, double h) {
  const Eigen::MatrixXd j = numeric_jacobian(g, theta, h);
  return (j - j.transpose()).cwiseAbs().maxCoeff();
}

Vector numeric_gradient(const ScalarFunction& f, const Vector& theta, double h) {
  Vector out(theta.size());
  for (int i = 0; i < theta.size(); ++i) {
    Vector plus = theta;
    Vector minus = theta;
    plus[i] += h;
    minus[i] -= h;
    out[i] = (f(plus) - f(minus)) / (2.0 * h);
  }
  return out;
}

double gradient_match(const VectorField& g, const ScalarFunction& loss, const Vector& theta,
                      double h) {
  return (g(theta) + numeric_gradient(loss, theta, h)).cwiseAbs().maxCoeff();
}

double first_integral(double x, double y) {
  return std::exp(x) + std::exp(-x) + std::exp(y) + std::exp(-y);
}

Vector counterexample_closed_form(const Vector& theta) {
  const double ex = std::exp(theta[0]);
  const double ey = std::exp(theta[1]);
  Vector out(2);
  out[0] = ex * (ey - 1.0) / ((1.0 + ex) * (1.0 + ex) * (1.0 + ey));
  out[1] = ey * (1.0 - ex) / ((1.0 + ex) * (1.0 + ey) * (1.0 + ey));
  return out;
}

namespace {

Vector rk4_step(const VectorField& g, const Vector& y, double h) {
  const Vector k1 = g(y);
  const Vector k2 = g(y + 0.5 * h * k1);
  const Vector k3 = g(y + 0.5 * h * k2);
  const Vector k4 = g(y + h * k3);
  return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace

IntegrationPath integrate(const VectorField& g, const Vector& theta0, double step_size,
                          long n_steps, Integrator integrator, long record_every) {
  if (record_every < 1) throw InvalidParams("record_every must be positive");
  IntegrationPath path;
  auto record = [&](const Vector& y) {
    path.theta.push_back(y);
    if (y.size() == 2) path.first_integral.push_back(first_integral(y[0], y[1]));
  };
  Vector y = theta0;
  record(y);
  for (long i = 1; i <= n_steps; ++i) {
    y = integrator == Integrator::RK4 ? rk4_step(g, y, step_size) : Vector(y + step_size * g(y));
    if (i % record_every == 0 || i == n_steps) record(y);
  }
  return path;
}

StationaryResult integrate_until_stationary(const VectorField& g, const Vector& theta0,
                                            double tolerance, double max_time,
                                            double local_error, const ScalarFunction& objective) {
  StationaryResult out;
  Vector y = theta0;
  double h = 1e-3;
  if (objective) out.objective.push_back(objective(y));
  out.field_norm = g(y).norm();
  while (out.field_norm >= tolerance && out.time < max_time) {
    const Vector full = rk4_step(g, y, h);
    const Vector half = rk4_step(g, rk4_step(g, y, 0.5 * h), 0.5 * h);
    const double err = (half - full).cwiseAbs().maxCoeff() / 15.0;
    const double factor = err == 0.0 ? 4.0 : 0.9 * std::pow(local_error / err, 0.2);
    if (err <= local_error) {
      y = half + (half - full) / 15.0;
      out.time += h;
      ++out.steps;
      out.field_norm = g(y).norm();
      if (objective) out.objective.push_back(objective(y));
      h *= std::min(4.0, factor);
    } else {
      h *= std::max(0.1, factor);
    }
    if (!y.allFinite()) break;
  }
  out.theta = y;
  out.converged = out.field_norm < tolerance;
  return out;
}

ExactDynamics counterexample_dynamics(const CounterexampleMdp& mdp, const TeacherBundle& teacher,
                                      const MethodSpec& spec) {
  MethodSpec theory = spec;
  theory.gamma = 1.0;
  return ExactDynamics(mdp, theory, &teacher, ParamLayout::counterexample(), PolicyTable(2));
}

GridWorld three_state_world() {
  std::vector<Cell> cells(3);
  cells[2].reward = 1.0;
  return GridWorld(3, 1, cells, 0.1, 0.1, 0, Observability{ObservationMode::Full, 0});
}

TeacherBundle random_teacher(const Environment& env, Rng& rng) {
  DistributionTable policy(env.action_count());
  for (StateId s = 0; s < env.state_count(); ++s) {
    if (!env.is_decision_state(s)) continue;
    std::vector<double> logits(env.action_count());
    for (double& l : logits) l = 4.0 * uniform01(rng) - 2.0;
    policy.set(env.teacher_key(s), softmax(logits));
  }
  TeacherBundle b{policy, std::nullopt, {}, {}};
  b.value = exact_state_values(env, policy, 1.0);
  b.provenance.method = "random";
  return b;
}

namespace {

double directed_cross_entropy(std::span<const double> p, std::span<const double> q,
                              XentDirection direction) {
  return direction == XentDirection::TeacherGivenStudent ? cross_entropy(p, q, kTeacherProbFloor)
                                                         : cross_entropy(q, p, kTeacherProbFloor);
}

}  // namespace

std::vector<double> cross_entropy_minimizer(std::span<const double> p, XentDirection direction,
                                            int iterations) {
  const std::size_t n = p.size();
  std::vector<double> logits(n, 0.0);
  std::vector<double> q = softmax(logits);
  double f = directed_cross_entropy(p, q, direction);
  double step = 1.0;
  for (int it = 0; it < iterations; ++it) {
    std::vector<double> grad(n);
    if (direction == XentDirection::TeacherGivenStudent) {
      for (std::size_t a = 0; a < n; ++a) grad[a] = q[a] - p[a];
    } else {
      double mean = 0.0;
      for (std::size_t a = 0; a < n; ++a) mean -= q[a] * std::log(std::max(p[a], kTeacherProbFloor));
      for (std::size_t a = 0; a < n; ++a)
        grad[a] = q[a] * (-std::log(std::max(p[a], kTeacherProbFloor)) - mean);
    }
    double norm2 = 0.0;
    for (double gi : grad) norm2 += gi * gi;
    if (norm2 < 1e-30) break;
    // Backtracking with an optimistic restart so steps can grow on flat
    // stretches of the landscape.
    step *= 2.0;
    bool accepted = false;
    for (int tries = 0; tries < 60; ++tries) {
      std::vector<double> trial(n);
      for (std::size_t a = 0; a < n; ++a) trial[a] = logits[a] - step * grad[a];
      const std::vector<double> tq = softmax(trial);
      const double tf = directed_cross_entropy(p, tq, direction);
      if (tf <= f - 1e-4 * step * norm2) {
        logits = trial;
        q = tq;
        f = tf;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
  }
  return q;
}

double total_variation(std::span<const double> a, std::span<const double> b) {
  double tv = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) tv += std::abs(a[i] - b[i]);
  return 0.5 * tv;
}

const std::vector<std::pair<std::string, bool>>& gradient_field_expectations() {
  static const std::vector<std::pair<std::string, bool>> rows = {
      {"teacher_distill", true}, {"on_policy_distill", false}, {"entropy_reg", true},
      {"n_distill", true},       {"exp_entropy_reg", true},    {"teacher_v_reward", true},
  };
  return rows;
}

namespace {

Vector random_theta(int n, Rng& rng) {
  Vector out(n);
  for (int i = 0; i < n; ++i) out[i] = 4.0 * uniform01(rng) - 2.0;
  return out;
}

}  // namespace

nlohmann::json verify_report(const VerifyOptions& options) {
  Rng rng(derive_seed({options.seed, stable_hash("verify")}));
  nlohmann::json report;
  bool all_pass = true;

  const CounterexampleMdp tree;
  const TeacherBundle tree_teacher = make_counterexample_teacher();
  const GridWorld small = three_state_world();
  const TeacherBundle small_teacher = random_teacher(small, rng);

  struct World {
    const char* name;
    const Environment* env;
    const TeacherBundle* teacher;
    ParamLayout layout;
  };
  const World worlds[] = {
      {"counterexample", &tree, &tree_teacher, ParamLayout::counterexample()},
      {"three_state", &small, &small_teacher, ParamLayout::tabular(small)},
  };

  nlohmann::json classification = nlohmann::json::array();
  for (const auto& w : worlds) {
    std::vector<Vector> thetas;
    for (int i = 0; i < options.random_thetas; ++i)
      thetas.push_back(random_theta(w.layout.size(), rng));
    for (const auto& [name, is_gradient] : gradient_field_expectations()) {
      MethodSpec spec = preset(name);
      spec.gamma = 1.0;
      const ExactDynamics dyn(*w.env, spec, w.teacher, w.layout, PolicyTable(w.env->action_count()));
      std::vector<double> defects;
      for (const auto& t : thetas) defects.push_back(jacobian_symmetry_defect(dyn.as_field(), t));
      const double max_d = *std::max_element(defects.begin(), defects.end());
      const double min_d = *std::min_element(defects.begin(), defects.end());
      const bool pass = is_gradient ? max_d < 1e-6 : min_d > 1e-3;
      all_pass = all_pass && pass;
      classification.push_back({{"world", w.name},
                                {"method", name},
                                {"expected_gradient", is_gradient},
                                {"max_defect", max_d},
                                {"min_defect", min_d},
                                {"defects", defects},
                                {"pass", pass}});
    }
  }
  report["classification"] = classification;

  // Gradient matches on the two-parameter tree.
  {
    auto dyn = [&](const char* name) {
      return counterexample_dynamics(tree, tree_teacher, preset(name));
    };
    const ExactDynamics n_distill = dyn("n_distill");
    const ExactDynamics on_policy = dyn("on_policy_distill");
    const ExactDynamics ent = dyn("entropy_reg");
    const ExactDynamics exp_ent = dyn("exp_entropy_reg");
    const ScalarFunction xent_loss = [&](const Vector& t) {
      return expected_matching_loss(n_distill.spec(), tree, n_distill.policy(t), tree_teacher);
    };
    const ScalarFunction log_loss = [&](const Vector& t) {
      return expected_neg_log_teacher(tree, ent.policy(t), tree_teacher);
    };
    double n_dev = 0.0;
    double ent_dev = 0.0;
    double exp_dev = 0.0;
    double ent_vs_exp = 0.0;
    int on_policy_mismatch = 0;
    for (int i = 0; i < options.random_thetas; ++i) {
      const Vector t = random_theta(2, rng);
      n_dev = std::max(n_dev, gradient_match(n_distill.as_field(), xent_loss, t));
      ent_dev = std::max(ent_dev, gradient_match(ent.as_field(), log_loss, t));
      exp_dev = std::max(exp_dev, gradient_match(exp_ent.as_field(), log_loss, t));
      ent_vs_exp = std::max(ent_vs_exp, (ent.field(t) - exp_ent.field(t)).cwiseAbs().maxCoeff());
      on_policy_mismatch += gradient_match(on_policy.as_field(), xent_loss, t) > 1e-3;
    }
    const bool pass = n_dev < 1e-5 && ent_dev < 1e-5 && exp_dev < 1e-5 && ent_vs_exp < 1e-8 &&
                      on_policy_mismatch * 10 >= 9 * options.random_thetas;
    all_pass = all_pass && pass;
    report["gradient_match"] = {{"n_distill", n_dev},
                                {"entropy_reg", ent_dev},
                                {"exp_entropy_reg", exp_dev},
                                {"entropy_reg_vs_exp_entropy_reg", ent_vs_exp},
                                {"on_policy_distill_mismatches", on_policy_mismatch},
                                {"pass", pass}};
  }

  // Oscillation and convergence of the corrected flow.
  {
    Vector theta0(2);
    theta0 << 1.0, 1.0;
    const ExactDynamics on_policy = counterexample_dynamics(tree, tree_teacher,
                                                            preset("on_policy_distill_r:overlap"));
    const IntegrationPath path = integrate(on_policy.as_field(), theta0, options.ode_step_size,
                                           options.ode_steps, Integrator::RK4);
    double drift = 0.0;
    double min_norm = INFINITY;
    for (std::size_t i = 0; i < path.theta.size(); ++i) {
      drift = std::max(drift, std::abs(path.first_integral[i] - path.first_integral[0]));
      min_norm = std::min(min_norm, path.theta[i].norm());
    }
    const ExactDynamics n_distill = counterexample_dynamics(tree, tree_teacher,
                                                            preset("n_distill_r:overlap"));
    const ScalarFunction combined = [&](const Vector& t) {
      const PolicyTable pi = n_distill.policy(t);
      return expected_return(tree, pi) -
             expected_matching_loss(n_distill.spec(), tree, pi, tree_teacher);
    };
    const StationaryResult flow =
        integrate_until_stationary(n_distill.as_field(), theta0, 1e-6, 1e12, 1e-10, combined);
    bool monotone = true;
    for (std::size_t i = 1; i < flow.objective.size(); ++i)
      monotone = monotone && flow.objective[i] >= flow.objective[i - 1] - 1e-12;
    const bool pass = drift < 1e-4 && min_norm > 0.5 && flow.converged && monotone;
    all_pass = all_pass && pass;
    report["oscillation"] = {{"on_policy_first_integral_drift", drift},
                             {"on_policy_min_theta_norm", min_norm},
                             {"n_distill_field_norm", flow.field_norm},
                             {"n_distill_theta", {flow.theta[0], flow.theta[1]}},
                             {"n_distill_time", flow.time},
                             {"n_distill_objective_monotone", monotone},
                             {"pass", pass}};
  }

  report["pass"] = all_pass;
  return report;
}

}  // namespace pdistill
