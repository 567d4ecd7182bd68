#include "pdistill/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <Eigen/Dense>

#include "pdistill/errors.hpp"

namespace pdistill {

DistributionTable::DistributionTable(int action_count)
    : fallback_(action_count, 1.0 / action_count) {}

DistributionTable::DistributionTable(std::vector<double> fallback)
    : fallback_(std::move(fallback)) {}

std::span<const double> DistributionTable::probabilities(const ObservationKey& key) const {
  const auto it = table_.find(key);
  return it == table_.end() ? std::span<const double>(fallback_) : it->second;
}

void DistributionTable::set(const ObservationKey& key, std::vector<double> probs) {
  if (probs.size() != fallback_.size()) throw InvalidParams("distribution size mismatch");
  table_[key] = std::move(probs);
}

std::vector<ObservationKey> DistributionTable::keys() const {
  std::vector<ObservationKey> out;
  for (const auto& [k, _] : table_) out.push_back(k);
  std::sort(out.begin(), out.end());
  return out;
}

DistributionTable DistributionTable::with_action_count(int total) const {
  if (total < action_count()) throw InvalidParams("cannot shrink the action set");
  auto pad = [total](std::vector<double> v) {
    v.resize(total, 0.0);
    return v;
  };
  DistributionTable out(pad(fallback_));
  for (const auto& [k, v] : table_) out.table_[k] = pad(v);
  return out;
}

nlohmann::json DistributionTable::to_json() const {
  nlohmann::json table = nlohmann::json::object();
  for (const auto& k : keys()) table[k.text()] = table_.at(k);
  return {{"fallback", fallback_}, {"table", std::move(table)}};
}

DistributionTable DistributionTable::from_json(const nlohmann::json& doc) {
  DistributionTable out(doc.at("fallback").get<std::vector<double>>());
  for (const auto& [k, v] : doc.at("table").items())
    out.set(ObservationKey(k), v.get<std::vector<double>>());
  return out;
}

nlohmann::json TeacherBundle::to_json() const {
  nlohmann::json weights_doc = nlohmann::json::object();
  for (const auto& [k, w] : weights) weights_doc[k.text()] = w;
  nlohmann::json prov = {{"method", provenance.method},
                         {"temperature", provenance.temperature},
                         {"corruption", provenance.corruption},
                         {"swap_rule", provenance.swap_rule},
                         {"value_episodes", provenance.value_episodes}};
  prov["seed"] = provenance.seed ? nlohmann::json(*provenance.seed) : nlohmann::json(nullptr);
  return {{"policy", policy.to_json()},
          {"value", value ? value->to_json() : nlohmann::json(nullptr)},
          {"weights", std::move(weights_doc)},
          {"provenance", std::move(prov)}};
}

TeacherBundle TeacherBundle::from_json(const nlohmann::json& doc) {
  TeacherBundle b{DistributionTable::from_json(doc.at("policy")), std::nullopt, {}, {}};
  if (!doc.at("value").is_null()) b.value = ValueTable::from_json(doc.at("value"));
  const nlohmann::json weights = doc.value("weights", nlohmann::json::object());
  for (const auto& [k, w] : weights.items())
    b.weights[ObservationKey(k)] = w.get<double>();
  const auto& p = doc.at("provenance");
  b.provenance.method = p.value("method", "");
  b.provenance.temperature = p.value("temperature", 0.0);
  b.provenance.corruption = p.value("corruption", 0.0);
  b.provenance.swap_rule = p.value("swap_rule", "uniform_other");
  b.provenance.value_episodes = p.value("value_episodes", 0);
  if (p.contains("seed") && !p.at("seed").is_null())
    b.provenance.seed = p.at("seed").get<std::uint64_t>();
  return b;
}

namespace {

int greedy_action(std::span<const double> q, Rng& rng) {
  const double best = *std::max_element(q.begin(), q.end());
  int ties = 0;
  for (double v : q) ties += v == best;
  int pick = uniform_int(rng, ties);
  for (std::size_t a = 0; a < q.size(); ++a) {
    if (q[a] == best && pick-- == 0) return static_cast<int>(a);
  }
  return 0;
}

}  // namespace

QTable train_q_learning(const Environment& env, Rng& rng, const QLearningParams& params) {
  QTable q(env.action_count());
  StateId s = env.initial_state();
  int episode_steps = 0;
  for (int it = 0; it < params.iterations; ++it) {
    const ObservationKey& key = env.teacher_key(s);
    const int a = uniform01(rng) < params.epsilon ? uniform_int(rng, env.action_count())
                                                  : greedy_action(q.values(key), rng);
    const StepResult r = env.step(s, a, rng);
    double target = r.reward;
    if (!r.done) {
      const auto next = q.values(env.teacher_key(r.next));
      target += params.gamma * *std::max_element(next.begin(), next.end());
    }
    auto& row = q.mutable_values(key);
    row[a] = (1.0 - params.lambda) * row[a] + params.lambda * target;
    ++episode_steps;
    if (r.done || episode_steps >= params.max_episode_steps) {
      s = env.initial_state();
      episode_steps = 0;
    } else {
      s = r.next;
    }
  }
  return q;
}

std::vector<double> boltzmann(std::span<const double> q, double temperature) {
  const std::size_t n = q.size();
  std::vector<double> out(n, 0.0);
  const double best = *std::max_element(q.begin(), q.end());
  if (temperature <= 0.0) {
    double ties = 0.0;
    for (double v : q) ties += v == best;
    for (std::size_t a = 0; a < n; ++a) out[a] = q[a] == best ? 1.0 / ties : 0.0;
    return out;
  }
  double z = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    out[a] = std::exp((q[a] - best) / temperature);
    z += out[a];
  }
  for (double& v : out) v /= z;
  return out;
}

DistributionTable extract_policy(const QTable& q, double temperature) {
  DistributionTable out(q.action_count());
  for (const auto& key : q.keys()) out.set(key, boltzmann(q.values(key), temperature));
  return out;
}

ActorCriticResult train_actor_critic(const Environment& env, const ActorCriticParams& params,
                                     Rng& rng) {
  ActorCriticResult out{PolicyTable(env.action_count()), ValueTable{}};
  UpdateAccumulator acc(env.action_count());
  for (int ep = 0; ep < params.episodes; ++ep) {
    const Trajectory traj = sample_episode(
        env, [&](StateId s) { return out.policy.probabilities(env.observe(s)); }, rng,
        params.max_episode_steps);
    double ret = 0.0;
    for (std::size_t i = traj.size(); i-- > 0;) {
      const Transition& t = traj.steps[i];
      const ObservationKey& key = env.observe(t.state);
      ret = t.reward + params.gamma * ret;
      double target = ret;
      if (params.mode == CriticMode::TD1) {
        target = t.reward;
        if (!t.done) target += params.gamma * out.value.value(env.observe(t.next));
      }
      const double advantage = target - out.value.value(key);
      accumulate_logprob_gradient(acc, out.policy, key, t.action, advantage);
      acc.add_value_sample(key, advantage);
    }
    apply(acc, out.policy, params.learning_rate);
    apply(acc, out.value, params.learning_rate);
  }
  return out;
}

std::vector<ObservationKey> collect_visited_keys(const DistributionTable& policy,
                                                 const Environment& env, Rng& rng,
                                                 int min_episodes, int max_steps) {
  std::unordered_map<ObservationKey, char, ObservationKeyHash> seen;
  auto control = [&](StateId s) { return policy.probabilities(env.teacher_key(s)); };
  auto batch = [&](int episodes) {
    for (int i = 0; i < episodes; ++i) {
      const Trajectory traj = sample_episode(env, control, rng, max_steps);
      for (const auto& t : traj.steps) seen.emplace(env.teacher_key(t.state), 1);
    }
  };
  batch(min_episodes);
  // Bounded so pathological worlds cannot loop forever.
  for (int round = 0; round < 1000; ++round) {
    const std::size_t before = seen.size();
    batch(100);
    if (static_cast<double>(seen.size() - before) < 0.01 * static_cast<double>(before)) break;
  }
  std::vector<ObservationKey> keys;
  keys.reserve(seen.size());
  for (const auto& [k, _] : seen) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  return keys;
}

DistributionTable corrupt_teacher(const DistributionTable& policy, const Environment& env,
                                  double fraction, Rng& rng, CorruptionReport* report) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw InvalidParams("fraction must lie in [0, 1]");
  DistributionTable out = policy;
  std::vector<ObservationKey> visited = collect_visited_keys(policy, env, rng);
  const auto count = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(visited.size())));
  // Partial Fisher-Yates over the sorted key list.
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(uniform_int(rng, static_cast<int>(visited.size() - i)));
    std::swap(visited[i], visited[j]);
  }
  if (report) {
    report->visited = visited.size();
    report->corrupted.assign(visited.begin(), visited.begin() + static_cast<std::ptrdiff_t>(count));
  }
  for (std::size_t i = 0; i < count; ++i) {
    const auto current = policy.probabilities(visited[i]);
    std::vector<double> probs(current.begin(), current.end());
    const int best = static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
    std::vector<int> others;
    for (int a = 0; a < static_cast<int>(probs.size()); ++a)
      if (probs[a] < probs[best]) others.push_back(a);
    if (others.empty()) continue;
    const int swap_with = others[uniform_int(rng, static_cast<int>(others.size()))];
    std::swap(probs[best], probs[swap_with]);
    out.set(visited[i], std::move(probs));
  }
  return out;
}

ValueTable estimate_value(const DistributionTable& policy, const Environment& env,
                          int n_trajectories, double gamma, Rng& rng, int max_steps) {
  if (n_trajectories < 1) throw InvalidParams("need at least one trajectory");
  std::unordered_map<ObservationKey, std::pair<double, int>, ObservationKeyHash> sums;
  auto control = [&](StateId s) { return policy.probabilities(env.teacher_key(s)); };
  for (int i = 0; i < n_trajectories; ++i) {
    const Trajectory traj = sample_episode(env, control, rng, max_steps);
    double ret = 0.0;
    for (std::size_t t = traj.size(); t-- > 0;) {
      ret = traj.steps[t].reward + gamma * ret;
      auto& [sum, n] = sums[env.teacher_key(traj.steps[t].state)];
      sum += ret;
      ++n;
    }
  }
  ValueTable out;
  for (const auto& [k, sn] : sums) out.set(k, sn.first / sn.second);
  return out;
}

ValueTable exact_state_values(const Environment& env, const DistributionTable& policy,
                              double gamma) {
  std::vector<StateId> states;
  std::vector<int> index(env.state_count(), -1);
  for (StateId s = 0; s < env.state_count(); ++s) {
    if (!env.is_decision_state(s)) continue;
    index[s] = static_cast<int>(states.size());
    states.push_back(s);
  }
  const int n = static_cast<int>(states.size());
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    const auto probs = policy.probabilities(env.teacher_key(states[i]));
    for (int act = 0; act < env.action_count(); ++act) {
      if (probs[act] == 0.0) continue;
      for (const Outcome& o : env.outcomes(states[i], act)) {
        const double p = probs[act] * o.probability;
        b[i] += p * o.reward;
        if (!o.done) a(i, index[o.next]) -= gamma * p;
      }
    }
  }
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
  if (!lu.isInvertible()) throw HorizonUnbounded("policy never terminates");
  const Eigen::VectorXd v = lu.solve(b);

  std::map<ObservationKey, std::pair<double, int>> sums;
  for (int i = 0; i < n; ++i) {
    auto& [sum, count] = sums[env.teacher_key(states[i])];
    sum += v[i];
    ++count;
  }
  ValueTable out;
  for (const auto& [k, sc] : sums) out.set(k, sc.first / sc.second);
  return out;
}

namespace {

TeacherBundle corridor_teacher(const CorridorWorld& world, int action, double gamma,
                               const char* method) {
  DistributionTable right({0.0, 1.0});
  DistributionTable chosen(action == 1 ? std::vector<double>{0.0, 1.0}
                                       : std::vector<double>{1.0, 0.0});
  TeacherBundle b{chosen, exact_state_values(world, right, gamma), {}, {}};
  b.provenance.method = method;
  return b;
}

}  // namespace

TeacherBundle make_optimal_corridor_teacher(const CorridorWorld& world, double gamma) {
  return corridor_teacher(world, 1, gamma, "corridor_optimal");
}

TeacherBundle make_adversarial_corridor_teacher(const CorridorWorld& world, double gamma) {
  return corridor_teacher(world, 0, gamma, "corridor_adversarial");
}

TeacherBundle make_adversarial_corridor_teacher(int half_length) {
  return make_adversarial_corridor_teacher(CorridorWorld(half_length));
}

TeacherBundle make_counterexample_teacher() {
  const CounterexampleMdp mdp;
  DistributionTable policy(2);
  policy.set(mdp.teacher_key(CounterexampleMdp::SR), {0.0, 1.0});
  TeacherBundle b{policy, std::nullopt, {}, {}};
  b.weights[mdp.teacher_key(CounterexampleMdp::S0)] = 0.0;
  b.weights[mdp.teacher_key(CounterexampleMdp::SL)] = 0.0;
  b.weights[mdp.teacher_key(CounterexampleMdp::SR)] = 4.0;
  b.value = exact_state_values(mdp, policy, 1.0);
  b.provenance.method = "counterexample";
  return b;
}

}  // namespace pdistill
