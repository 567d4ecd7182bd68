#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pdistill/episode.hpp"
#include "pdistill/tabular.hpp"
#include "pdistill/teacher.hpp"

namespace pdistill {

enum class Control { Teacher, Student, Uniform };

enum class StepLoss {
  None,
  XEntTeacherGivenStudent,  // H(pi || pi_theta)
  XEntStudentGivenTeacher,  // H(pi_theta || pi)
  GatedXEnt,                // H(pi || pi_theta) [V_pi - V_theta > 0]
};

enum class IntrinsicReward {
  None,
  LogTeacherProb,      // log pi(a_t | s_t)
  NegNextXEnt,         // -l(s_{t+1})
  NextLogTeacherProb,  // log pi(a_{t+1} | s_{t+1})
  TeacherVShaping,     // r_t + V_pi(s_{t+1}) - V_pi(s_t)
  TeacherVBootstrap,   // r_t + gamma V_pi(s_{t+1}), not accumulated over time
};

// The per-step matching term used wherever H(pi || pi_theta) appears.
// Overlap replaces it with -sum_a pi(a) pi_theta(a).
enum class MatchingLoss { CrossEntropy, Overlap };

struct MethodSpec {
  std::string name;
  Control control = Control::Student;
  StepLoss loss = StepLoss::None;
  IntrinsicReward intrinsic = IntrinsicReward::None;
  bool add_env_reward = false;
  double gamma = 0.99;
  MatchingLoss matching = MatchingLoss::CrossEntropy;

  bool uses_rewards() const { return intrinsic != IntrinsicReward::None || add_env_reward; }
  bool needs_teacher_value() const {
    return loss == StepLoss::GatedXEnt || intrinsic == IntrinsicReward::TeacherVShaping ||
           intrinsic == IntrinsicReward::TeacherVBootstrap;
  }
  bool needs_teacher() const {
    return loss != StepLoss::None || (intrinsic != IntrinsicReward::None) ||
           control == Control::Teacher;
  }
};

// Canonical preset names, in a fixed order.
const std::vector<std::string>& preset_names();
// Throws ConfigError for unknown names.
MethodSpec preset(std::string_view name);

struct DistillState {
  explicit DistillState(int action_count) : student(action_count) {}

  PolicyTable student;
  ValueTable baseline;
  long step = 0;
  // When set, only these (key, action) logits are trainable; the rest stay
  // at their current values.
  std::optional<std::vector<std::pair<ObservationKey, int>>> free_coordinates;
};

struct StepMetrics {
  double loss = 0.0;                // sum over the episode of the per-step loss
  double mean_abs_intrinsic = 0.0;  // mean |r_hat_t|
  double episode_return = 0.0;
  std::size_t length = 0;
};

// Probabilities the control policy acts with in state s.
std::span<const double> control_probabilities(Control control, const Environment& env,
                                              StateId s, const PolicyTable& student,
                                              const TeacherBundle* teacher);

Trajectory run_episode(const Environment& env, Control control, const PolicyTable& student,
                       const TeacherBundle* teacher, Rng& rng,
                       int max_steps = kDefaultMaxEpisodeSteps);

// Accumulates the update direction (ascent convention: theta += lr * pending)
// for one trajectory without applying it. Baseline targets go to the value
// slots of the accumulator.
StepMetrics accumulate_episode_update(const MethodSpec& spec, const Environment& env,
                                      const PolicyTable& student, const ValueTable& baseline,
                                      const TeacherBundle* teacher, const Trajectory& traj,
                                      UpdateAccumulator& acc);

// Samples one episode under spec.control and applies its update.
StepMetrics distill_step(const MethodSpec& spec, const Environment& env, DistillState& state,
                         const TeacherBundle* teacher, double learning_rate, Rng& rng,
                         int max_steps = kDefaultMaxEpisodeSteps);

StepMetrics td_teacher_bootstrap_step(const Environment& env, DistillState& state,
                                      const TeacherBundle& teacher, double learning_rate,
                                      double gamma, Rng& rng,
                                      int max_steps = kDefaultMaxEpisodeSteps);

// [V_pi - V_student > 0]
inline double gated_loss_coefficient(double v_teacher, double v_student) {
  return v_teacher > v_student ? 1.0 : 0.0;
}

inline double shaping_reward(double v_next, double v_current, double r_env) {
  return v_next - v_current + r_env;
}

// Per-step matching loss value for the teacher/student pair at a state,
// already multiplied by the teacher weight.
double matching_loss(const MethodSpec& spec, std::span<const double> teacher,
                     std::span<const double> student, double weight);

}  // namespace pdistill
