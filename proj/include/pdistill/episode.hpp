#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "pdistill/environment.hpp"

namespace pdistill {

struct Transition {
  StateId state;
  int action;
  double reward;
  StateId next;
  bool done;
};

// One episode. `truncated` is set when the step cap cut it short.
struct Trajectory {
  std::vector<Transition> steps;
  bool truncated = false;

  double total_reward() const {
    double r = 0.0;
    for (const auto& t : steps) r += t.reward;
    return r;
  }
  std::size_t size() const { return steps.size(); }
};

inline constexpr int kDefaultMaxEpisodeSteps = 10000;

// `control(state)` returns the action distribution to sample from.
template <class Control>
Trajectory sample_episode(const Environment& env, Control&& control, Rng& rng,
                          int max_steps = kDefaultMaxEpisodeSteps) {
  Trajectory traj;
  StateId s = env.initial_state();
  for (int t = 0; t < max_steps; ++t) {
    const std::span<const double> probs = control(s);
    const int a = sample_index(probs, rng);
    const StepResult r = env.step(s, a, rng);
    traj.steps.push_back({s, a, r.reward, r.next, r.done});
    if (r.done) return traj;
    s = r.next;
  }
  traj.truncated = true;
  return traj;
}

struct MeanEstimate {
  double mean = 0.0;
  double sem = 0.0;
  std::size_t count = 0;
};

inline MeanEstimate mean_and_sem(std::span<const double> xs) {
  MeanEstimate m;
  m.count = xs.size();
  if (xs.empty()) return m;
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return m;
  double ss = 0.0;
  for (double x : xs) ss += (x - m.mean) * (x - m.mean);
  m.sem = std::sqrt(ss / static_cast<double>(xs.size() - 1) / static_cast<double>(xs.size()));
  return m;
}

// Undiscounted episode return under `control`, averaged over episodes.
template <class Control>
MeanEstimate evaluate_return(const Environment& env, Control&& control, int episodes, Rng& rng,
                             int max_steps = kDefaultMaxEpisodeSteps) {
  std::vector<double> returns;
  returns.reserve(episodes);
  for (int i = 0; i < episodes; ++i)
    returns.push_back(sample_episode(env, control, rng, max_steps).total_reward());
  return mean_and_sem(returns);
}

}  // namespace pdistill
