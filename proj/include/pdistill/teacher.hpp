#pragma once

#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "pdistill/environment.hpp"
#include "pdistill/episode.hpp"
#include "pdistill/mdp.hpp"
#include "pdistill/tabular.hpp"

namespace pdistill {

// Frozen state-conditional action distributions keyed by teacher key.
// Unseen keys fall back to a fixed distribution (uniform by default).
class DistributionTable {
 public:
  explicit DistributionTable(int action_count);
  explicit DistributionTable(std::vector<double> fallback);

  int action_count() const { return static_cast<int>(fallback_.size()); }
  std::span<const double> probabilities(const ObservationKey& key) const;
  std::span<const double> fallback() const { return fallback_; }
  void set(const ObservationKey& key, std::vector<double> probs);
  bool contains(const ObservationKey& key) const { return table_.contains(key); }
  std::size_t size() const { return table_.size(); }
  std::vector<ObservationKey> keys() const;

  // Appends zero-probability actions up to `total`.
  DistributionTable with_action_count(int total) const;

  nlohmann::json to_json() const;
  static DistributionTable from_json(const nlohmann::json& doc);

  friend bool operator==(const DistributionTable& a, const DistributionTable& b) {
    return a.fallback_ == b.fallback_ && a.table_ == b.table_;
  }

 private:
  std::vector<double> fallback_;
  std::unordered_map<ObservationKey, std::vector<double>, ObservationKeyHash> table_;
};

struct Provenance {
  std::string method;
  double temperature = 0.0;
  double corruption = 0.0;
  std::string swap_rule = "uniform_other";
  int value_episodes = 0;
  std::optional<std::uint64_t> seed;
};

struct TeacherBundle {
  DistributionTable policy;
  std::optional<ValueTable> value;
  // Per-key multiplier on every teacher-derived loss and intrinsic reward.
  // Keys absent from the map use weight 1.
  std::unordered_map<ObservationKey, double, ObservationKeyHash> weights;
  Provenance provenance;

  double weight(const ObservationKey& key) const {
    const auto it = weights.find(key);
    return it == weights.end() ? 1.0 : it->second;
  }

  nlohmann::json to_json() const;
  static TeacherBundle from_json(const nlohmann::json& doc);
};

struct QLearningParams {
  int iterations = 30000;  // environment steps
  double lambda = 0.01;
  double gamma = 0.99;
  double epsilon = 0.1;
  int max_episode_steps = kDefaultMaxEpisodeSteps;
};

QTable train_q_learning(const Environment& env, Rng& rng, const QLearningParams& params = {});

// T == 0: uniform over the argmax set. T > 0: Boltzmann.
std::vector<double> boltzmann(std::span<const double> q, double temperature);
DistributionTable extract_policy(const QTable& q, double temperature);

enum class CriticMode { MonteCarlo, TD1 };

struct ActorCriticParams {
  CriticMode mode = CriticMode::MonteCarlo;
  double gamma = 0.99;
  double learning_rate = 0.1;
  int episodes = 30000;
  int max_episode_steps = kDefaultMaxEpisodeSteps;
};

struct ActorCriticResult {
  PolicyTable policy;
  ValueTable value;
};

ActorCriticResult train_actor_critic(const Environment& env, const ActorCriticParams& params,
                                     Rng& rng);

// Teacher keys visited by rollouts of `policy`: at least `min_episodes`
// episodes, then batches of 100 until the set grows by less than 1%.
std::vector<ObservationKey> collect_visited_keys(const DistributionTable& policy,
                                                 const Environment& env, Rng& rng,
                                                 int min_episodes = 1000,
                                                 int max_steps = kDefaultMaxEpisodeSteps);

struct CorruptionReport {
  std::size_t visited = 0;
  std::vector<ObservationKey> corrupted;
};

// Swaps the mass of the most probable action with a uniformly chosen less
// probable action at floor(fraction * |visited|) uniformly chosen keys.
DistributionTable corrupt_teacher(const DistributionTable& policy, const Environment& env,
                                  double fraction, Rng& rng, CorruptionReport* report = nullptr);

// Every-visit Monte Carlo estimate of discounted return-to-go.
ValueTable estimate_value(const DistributionTable& policy, const Environment& env,
                          int n_trajectories, double gamma, Rng& rng,
                          int max_steps = kDefaultMaxEpisodeSteps);

// Exact policy evaluation by a linear solve over decision states. States
// sharing a teacher key are averaged.
ValueTable exact_state_values(const Environment& env, const DistributionTable& policy,
                              double gamma);

TeacherBundle make_optimal_corridor_teacher(const CorridorWorld& world, double gamma = 0.99);
// Always-left policy carrying the optimal policy's critic.
TeacherBundle make_adversarial_corridor_teacher(const CorridorWorld& world, double gamma = 0.99);
TeacherBundle make_adversarial_corridor_teacher(int half_length);

// Teacher for the two-decision tree: prefers R in s_R with weight 4 and
// gives no signal elsewhere; carries its exact undiscounted critic.
TeacherBundle make_counterexample_teacher();

}  // namespace pdistill
