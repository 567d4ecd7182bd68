#include "pdistill/distill.hpp"

#include <cmath>
#include <limits>
#include <map>

#include "pdistill/errors.hpp"

namespace pdistill {

namespace {

struct PresetRow {
  const char* name;
  Control control;
  StepLoss loss;
  IntrinsicReward intrinsic;
  bool add_env_reward;
};

constexpr PresetRow kPresets[] = {
    {"teacher_distill", Control::Teacher, StepLoss::XEntTeacherGivenStudent, IntrinsicReward::None, false},
    {"on_policy_distill", Control::Student, StepLoss::XEntTeacherGivenStudent, IntrinsicReward::None, false},
    {"on_policy_distill_r", Control::Student, StepLoss::XEntTeacherGivenStudent, IntrinsicReward::None, true},
    {"uniform_distill", Control::Uniform, StepLoss::XEntTeacherGivenStudent, IntrinsicReward::None, false},
    {"entropy_reg", Control::Student, StepLoss::None, IntrinsicReward::LogTeacherProb, false},
    {"entropy_reg_r", Control::Student, StepLoss::None, IntrinsicReward::LogTeacherProb, true},
    {"n_distill", Control::Student, StepLoss::XEntTeacherGivenStudent, IntrinsicReward::NegNextXEnt, false},
    {"n_distill_r", Control::Student, StepLoss::XEntTeacherGivenStudent, IntrinsicReward::NegNextXEnt, true},
    {"exp_entropy_reg", Control::Student, StepLoss::XEntStudentGivenTeacher, IntrinsicReward::NextLogTeacherProb, false},
    {"exp_entropy_reg_r", Control::Student, StepLoss::XEntStudentGivenTeacher, IntrinsicReward::NextLogTeacherProb, true},
    {"teacher_v_reward", Control::Student, StepLoss::None, IntrinsicReward::TeacherVShaping, false},
    {"td_teacher_bootstrap", Control::Student, StepLoss::None, IntrinsicReward::TeacherVBootstrap, false},
    {"gated_distill_r", Control::Student, StepLoss::GatedXEnt, IntrinsicReward::None, true},
    {"actor_critic", Control::Student, StepLoss::None, IntrinsicReward::None, true},
};

constexpr std::string_view kOverlapSuffix = ":overlap";

double log_teacher(std::span<const double> teacher, int action) {
  return std::log(std::max(teacher[action], kTeacherProbFloor));
}

}  // namespace

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& row : kPresets) out.emplace_back(row.name);
    return out;
  }();
  return names;
}

MethodSpec preset(std::string_view name) {
  MatchingLoss matching = MatchingLoss::CrossEntropy;
  std::string_view base = name;
  if (base.ends_with(kOverlapSuffix)) {
    base.remove_suffix(kOverlapSuffix.size());
    matching = MatchingLoss::Overlap;
  }
  for (const auto& row : kPresets) {
    if (base == row.name) {
      MethodSpec spec;
      spec.name = std::string(name);
      spec.control = row.control;
      spec.loss = row.loss;
      spec.intrinsic = row.intrinsic;
      spec.add_env_reward = row.add_env_reward;
      spec.matching = matching;
      return spec;
    }
  }
  throw ConfigError("unknown method preset '" + std::string(name) + "'");
}

double matching_loss(const MethodSpec& spec, std::span<const double> teacher,
                     std::span<const double> student, double weight) {
  if (weight == 0.0) return 0.0;
  if (spec.loss == StepLoss::XEntStudentGivenTeacher)
    return weight * cross_entropy(student, teacher, kTeacherProbFloor);
  if (spec.matching == MatchingLoss::Overlap) {
    double overlap = 0.0;
    for (std::size_t a = 0; a < teacher.size(); ++a) overlap += teacher[a] * student[a];
    return -weight * overlap;
  }
  // A softmax probability can underflow to exactly zero once logits drift
  // far apart. The smallest normal double keeps the loss finite without
  // changing it anywhere else.
  return weight * cross_entropy(teacher, student, std::numeric_limits<double>::min());
}

std::span<const double> control_probabilities(Control control, const Environment& env,
                                              StateId s, const PolicyTable& student,
                                              const TeacherBundle* teacher) {
  switch (control) {
    case Control::Teacher:
      return teacher->policy.probabilities(env.teacher_key(s));
    case Control::Student:
      return student.probabilities(env.observe(s));
    case Control::Uniform:
      break;
  }
  // Unseen keys of a fresh table are uniform.
  static thread_local std::map<int, PolicyTable> uniform;
  auto it = uniform.try_emplace(env.action_count(), env.action_count()).first;
  return it->second.probabilities(ObservationKey());
}

Trajectory run_episode(const Environment& env, Control control, const PolicyTable& student,
                       const TeacherBundle* teacher, Rng& rng, int max_steps) {
  if (control == Control::Teacher && teacher == nullptr)
    throw InvalidParams("teacher control requires a teacher");
  return sample_episode(
      env, [&](StateId s) { return control_probabilities(control, env, s, student, teacher); },
      rng, max_steps);
}

StepMetrics accumulate_episode_update(const MethodSpec& spec, const Environment& env,
                                      const PolicyTable& student, const ValueTable& baseline,
                                      const TeacherBundle* teacher, const Trajectory& traj,
                                      UpdateAccumulator& acc) {
  if (spec.needs_teacher() && teacher == nullptr)
    throw InvalidParams("method '" + spec.name + "' requires a teacher");
  if (spec.needs_teacher_value() && !(teacher && teacher->value))
    throw MissingTeacherValue("method '" + spec.name + "' needs the teacher's critic");

  const std::size_t n = traj.size();
  StepMetrics metrics;
  metrics.length = n;
  if (n == 0) return metrics;

  const ValueTable* teacher_value = teacher && teacher->value ? &*teacher->value : nullptr;
  auto teacher_probs = [&](StateId s) { return teacher->policy.probabilities(env.teacher_key(s)); };
  auto weight = [&](StateId s) { return teacher ? teacher->weight(env.teacher_key(s)) : 1.0; };
  auto v_teacher = [&](StateId s) { return teacher_value->value(env.teacher_key(s)); };

  // Per-step matching loss l(s_t), needed for the loss term and for the
  // next-step correction.
  std::vector<double> step_loss(n, 0.0);
  const bool has_matching = spec.loss != StepLoss::None ||
                            spec.intrinsic == IntrinsicReward::NegNextXEnt;
  if (has_matching) {
    for (std::size_t t = 0; t < n; ++t) {
      const StateId s = traj.steps[t].state;
      step_loss[t] = matching_loss(spec, teacher_probs(s), student.probabilities(env.observe(s)),
                                   weight(s));
    }
  }

  std::vector<double> intrinsic(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    const Transition& tr = traj.steps[t];
    const bool has_next = !tr.done && t + 1 < n;
    double r = 0.0;
    switch (spec.intrinsic) {
      case IntrinsicReward::None:
        break;
      case IntrinsicReward::LogTeacherProb:
        r = weight(tr.state) * log_teacher(teacher_probs(tr.state), tr.action);
        break;
      case IntrinsicReward::NegNextXEnt:
        r = has_next ? -step_loss[t + 1] : 0.0;
        break;
      case IntrinsicReward::NextLogTeacherProb:
        if (has_next) {
          const Transition& nx = traj.steps[t + 1];
          r = weight(nx.state) * log_teacher(teacher_probs(nx.state), nx.action);
        }
        break;
      case IntrinsicReward::TeacherVShaping:
        r = shaping_reward(tr.done ? 0.0 : v_teacher(tr.next), v_teacher(tr.state), tr.reward);
        break;
      case IntrinsicReward::TeacherVBootstrap:
        r = tr.reward + (tr.done ? 0.0 : spec.gamma * v_teacher(tr.next));
        break;
    }
    metrics.mean_abs_intrinsic += std::abs(r);
    if (spec.add_env_reward) r += tr.reward;
    intrinsic[t] = r;
    metrics.episode_return += tr.reward;
  }
  metrics.mean_abs_intrinsic /= static_cast<double>(n);

  double to_go = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const Transition& tr = traj.steps[t];
    const ObservationKey& key = env.observe(tr.state);

    if (spec.uses_rewards()) {
      to_go = spec.intrinsic == IntrinsicReward::TeacherVBootstrap
                  ? intrinsic[t]
                  : intrinsic[t] + spec.gamma * to_go;
      const double advantage = to_go - baseline.value(key);
      accumulate_logprob_gradient(acc, student, key, tr.action, advantage);
      acc.add_value_sample(key, advantage);
    }

    if (spec.loss == StepLoss::None) continue;
    double w = weight(tr.state);
    if (spec.loss == StepLoss::GatedXEnt)
      w *= gated_loss_coefficient(v_teacher(tr.state), baseline.value(key));
    if (w == 0.0) continue;
    metrics.loss += spec.loss == StepLoss::GatedXEnt ? w * step_loss[t] / weight(tr.state)
                                                     : step_loss[t];
    const auto target = teacher_probs(tr.state);
    if (spec.loss == StepLoss::XEntStudentGivenTeacher) {
      accumulate_cross_entropy_gradient(acc, target, student, key,
                                        XentDirection::StudentGivenTeacher, -w, kTeacherProbFloor);
    } else if (spec.matching == MatchingLoss::Overlap) {
      accumulate_overlap_gradient(acc, target, student, key, w);
    } else {
      accumulate_cross_entropy_gradient(acc, target, student, key,
                                        XentDirection::TeacherGivenStudent, -w);
    }
  }
  if (spec.loss == StepLoss::None && has_matching) {
    for (double l : step_loss) metrics.loss += l;
  }
  return metrics;
}

StepMetrics distill_step(const MethodSpec& spec, const Environment& env, DistillState& state,
                         const TeacherBundle* teacher, double learning_rate, Rng& rng,
                         int max_steps) {
  const Trajectory traj = run_episode(env, spec.control, state.student, teacher, rng, max_steps);
  UpdateAccumulator acc(env.action_count());
  const StepMetrics metrics =
      accumulate_episode_update(spec, env, state.student, state.baseline, teacher, traj, acc);
  if (state.free_coordinates) {
    UpdateAccumulator::LogitMap kept;
    for (const auto& [key, action] : *state.free_coordinates) {
      const auto it = acc.pending_logits().find(key);
      if (it == acc.pending_logits().end()) continue;
      auto& slot = kept.try_emplace(key, std::vector<double>(env.action_count(), 0.0)).first->second;
      slot[action] = it->second[action];
    }
    acc.pending_logits() = std::move(kept);
  }
  apply(acc, state.student, learning_rate);
  apply(acc, state.baseline, learning_rate);
  ++state.step;
  return metrics;
}

StepMetrics td_teacher_bootstrap_step(const Environment& env, DistillState& state,
                                      const TeacherBundle& teacher, double learning_rate,
                                      double gamma, Rng& rng, int max_steps) {
  MethodSpec spec = preset("td_teacher_bootstrap");
  spec.gamma = gamma;
  return distill_step(spec, env, state, &teacher, learning_rate, rng, max_steps);
}

}  // namespace pdistill
