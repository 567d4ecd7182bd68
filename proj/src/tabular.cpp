#include "pdistill/tabular.hpp"

#include <algorithm>
#include <cmath>

#include "pdistill/errors.hpp"

namespace pdistill {

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

double cross_entropy(std::span<const double> p, std::span<const double> q, double floor) {
  double h = 0.0;
  for (std::size_t a = 0; a < p.size(); ++a) {
    if (p[a] == 0.0) continue;
    double qa = q[a];
    if (floor > 0.0) {
      qa = std::max(qa, floor);
    } else if (qa <= 0.0) {
      throw DegenerateTeacher("zero probability inside log");
    }
    h -= p[a] * std::log(qa);
  }
  return h;
}

PolicyTable::PolicyTable(int action_count)
    : action_count_(action_count),
      zeros_(action_count, 0.0),
      uniform_(action_count, 1.0 / action_count) {
  if (action_count < 1) throw InvalidParams("action count must be positive");
}

PolicyTable::Entry& PolicyTable::entry(const ObservationKey& key) {
  auto [it, inserted] = entries_.try_emplace(key);
  if (inserted) it->second.logits.assign(action_count_, 0.0);
  it->second.stale = true;
  return it->second;
}

std::span<const double> PolicyTable::probabilities(const ObservationKey& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return uniform_;
  const Entry& e = it->second;
  if (e.stale) {
    e.probs = softmax(e.logits);
    e.stale = false;
  }
  return e.probs;
}

std::span<const double> PolicyTable::logits(const ObservationKey& key) const {
  const auto it = entries_.find(key);
  return it == entries_.end() ? std::span<const double>(zeros_) : it->second.logits;
}

void PolicyTable::set_logits(const ObservationKey& key, std::span<const double> logits) {
  if (static_cast<int>(logits.size()) != action_count_) throw InvalidParams("logit size mismatch");
  Entry& e = entry(key);
  std::copy(logits.begin(), logits.end(), e.logits.begin());
}

void PolicyTable::add_logits(const ObservationKey& key, std::span<const double> delta,
                             double scale) {
  Entry& e = entry(key);
  for (int a = 0; a < action_count_; ++a) e.logits[a] += scale * delta[a];
}

std::vector<ObservationKey> PolicyTable::keys() const {
  std::vector<ObservationKey> out;
  out.reserve(entries_.size());
  for (const auto& [k, _] : entries_) out.push_back(k);
  std::sort(out.begin(), out.end());
  return out;
}

nlohmann::json PolicyTable::to_json() const {
  nlohmann::json logits = nlohmann::json::object();
  for (const auto& k : keys()) logits[k.text()] = entries_.at(k).logits;
  return {{"action_count", action_count_}, {"logits", std::move(logits)}};
}

PolicyTable PolicyTable::from_json(const nlohmann::json& doc) {
  PolicyTable table(doc.at("action_count").get<int>());
  for (const auto& [k, v] : doc.at("logits").items())
    table.set_logits(ObservationKey(k), v.get<std::vector<double>>());
  return table;
}

double ValueTable::value(const ObservationKey& key) const {
  const auto it = values_.find(key);
  return it == values_.end() ? 0.0 : it->second;
}

std::vector<ObservationKey> ValueTable::keys() const {
  std::vector<ObservationKey> out;
  for (const auto& [k, _] : values_) out.push_back(k);
  std::sort(out.begin(), out.end());
  return out;
}

nlohmann::json ValueTable::to_json() const {
  nlohmann::json doc = nlohmann::json::object();
  for (const auto& k : keys()) doc[k.text()] = values_.at(k);
  return doc;
}

ValueTable ValueTable::from_json(const nlohmann::json& doc) {
  ValueTable table;
  for (const auto& [k, v] : doc.items()) table.set(ObservationKey(k), v.get<double>());
  return table;
}

QTable::QTable(int action_count) : action_count_(action_count), zeros_(action_count, 0.0) {}

std::span<const double> QTable::values(const ObservationKey& key) const {
  const auto it = q_.find(key);
  return it == q_.end() ? std::span<const double>(zeros_) : it->second;
}

std::vector<double>& QTable::mutable_values(const ObservationKey& key) {
  auto [it, inserted] = q_.try_emplace(key);
  if (inserted) it->second.assign(action_count_, 0.0);
  return it->second;
}

std::vector<ObservationKey> QTable::keys() const {
  std::vector<ObservationKey> out;
  for (const auto& [k, _] : q_) out.push_back(k);
  std::sort(out.begin(), out.end());
  return out;
}

nlohmann::json QTable::to_json() const {
  nlohmann::json q = nlohmann::json::object();
  for (const auto& k : keys()) q[k.text()] = q_.at(k);
  return {{"action_count", action_count_}, {"q", std::move(q)}};
}

QTable QTable::from_json(const nlohmann::json& doc) {
  QTable table(doc.at("action_count").get<int>());
  for (const auto& [k, v] : doc.at("q").items())
    table.mutable_values(ObservationKey(k)) = v.get<std::vector<double>>();
  return table;
}

std::vector<double>& UpdateAccumulator::logits_at(const ObservationKey& key) {
  auto [it, inserted] = logits_.try_emplace(key);
  if (inserted) it->second.assign(action_count_, 0.0);
  return it->second;
}

void accumulate_logprob_gradient(UpdateAccumulator& acc, const PolicyTable& policy,
                                 const ObservationKey& key, int action, double coefficient) {
  if (action < 0 || action >= policy.action_count()) throw InvalidParams("action out of range");
  if (coefficient == 0.0) return;
  const auto probs = policy.probabilities(key);
  auto& slot = acc.logits_at(key);
  for (int b = 0; b < policy.action_count(); ++b) slot[b] -= coefficient * probs[b];
  slot[action] += coefficient;
}

void accumulate_cross_entropy_gradient(UpdateAccumulator& acc, std::span<const double> teacher,
                                       const PolicyTable& policy, const ObservationKey& key,
                                       XentDirection direction, double coefficient,
                                       double log_floor) {
  if (coefficient == 0.0) return;
  const auto probs = policy.probabilities(key);
  const int n = policy.action_count();
  auto& slot = acc.logits_at(key);
  if (direction == XentDirection::TeacherGivenStudent) {
    for (int b = 0; b < n; ++b) slot[b] += coefficient * (probs[b] - teacher[b]);
    return;
  }
  // d/dtheta_b sum_a pi_theta(a) c_a = pi_theta(b) (c_b - E_pi_theta[c]),
  // with c_a = -log pi(a).
  std::vector<double> cost(n);
  double mean = 0.0;
  for (int a = 0; a < n; ++a) {
    double p = teacher[a];
    if (log_floor > 0.0) {
      p = std::max(p, log_floor);
    } else if (p <= 0.0) {
      throw DegenerateTeacher("teacher assigns zero probability; clamp required");
    }
    cost[a] = -std::log(p);
    mean += probs[a] * cost[a];
  }
  for (int b = 0; b < n; ++b) slot[b] += coefficient * probs[b] * (cost[b] - mean);
}

void accumulate_overlap_gradient(UpdateAccumulator& acc, std::span<const double> teacher,
                                 const PolicyTable& policy, const ObservationKey& key,
                                 double coefficient) {
  if (coefficient == 0.0) return;
  const auto probs = policy.probabilities(key);
  const int n = policy.action_count();
  double overlap = 0.0;
  for (int a = 0; a < n; ++a) overlap += teacher[a] * probs[a];
  auto& slot = acc.logits_at(key);
  for (int b = 0; b < n; ++b) slot[b] += coefficient * probs[b] * (teacher[b] - overlap);
}

void apply(UpdateAccumulator& acc, PolicyTable& policy, double learning_rate) {
  for (const auto& [key, delta] : acc.logits_) policy.add_logits(key, delta, learning_rate);
  acc.logits_.clear();
}

void apply(UpdateAccumulator& acc, ValueTable& values, double learning_rate) {
  for (const auto& [key, delta] : acc.values_) values.add(key, learning_rate * delta);
  acc.values_.clear();
  acc.value_samples_.clear();
}

}  // namespace pdistill
