#pragma once

#include <span>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "pdistill/environment.hpp"

namespace pdistill {

// Floor applied to teacher probabilities before taking their log.
inline constexpr double kTeacherProbFloor = 1e-8;

std::vector<double> softmax(std::span<const double> logits);

// -sum_a p(a) log q(a). With floor > 0, q is clamped below at floor; with
// floor == 0 a zero q(a) under positive p(a) throws DegenerateTeacher.
double cross_entropy(std::span<const double> p, std::span<const double> q, double floor = 0.0);

// Softmax policy over per-observation logits. Unseen observations have zero
// logits. Probabilities are cached per key and refreshed after writes; the
// table is single-writer and its reads are not thread-safe.
class PolicyTable {
 public:
  explicit PolicyTable(int action_count);

  int action_count() const { return action_count_; }
  std::size_t size() const { return entries_.size(); }
  bool contains(const ObservationKey& key) const { return entries_.contains(key); }

  std::span<const double> probabilities(const ObservationKey& key) const;
  std::span<const double> logits(const ObservationKey& key) const;

  void set_logits(const ObservationKey& key, std::span<const double> logits);
  void add_logits(const ObservationKey& key, std::span<const double> delta, double scale);

  std::vector<ObservationKey> keys() const;  // sorted

  nlohmann::json to_json() const;
  static PolicyTable from_json(const nlohmann::json& doc);

 private:
  struct Entry {
    std::vector<double> logits;
    mutable std::vector<double> probs;
    mutable bool stale = true;
  };
  Entry& entry(const ObservationKey& key);

  int action_count_;
  std::unordered_map<ObservationKey, Entry, ObservationKeyHash> entries_;
  std::vector<double> zeros_;
  std::vector<double> uniform_;
};

class ValueTable {
 public:
  double value(const ObservationKey& key) const;
  bool contains(const ObservationKey& key) const { return values_.contains(key); }
  void set(const ObservationKey& key, double v) { values_[key] = v; }
  void add(const ObservationKey& key, double delta) { values_[key] += delta; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }
  std::vector<ObservationKey> keys() const;

  nlohmann::json to_json() const;
  static ValueTable from_json(const nlohmann::json& doc);

 private:
  std::unordered_map<ObservationKey, double, ObservationKeyHash> values_;
};

class QTable {
 public:
  explicit QTable(int action_count);

  int action_count() const { return action_count_; }
  std::span<const double> values(const ObservationKey& key) const;
  std::vector<double>& mutable_values(const ObservationKey& key);
  std::size_t size() const { return q_.size(); }
  std::vector<ObservationKey> keys() const;

  nlohmann::json to_json() const;
  static QTable from_json(const nlohmann::json& doc);

 private:
  int action_count_;
  std::unordered_map<ObservationKey, std::vector<double>, ObservationKeyHash> q_;
  std::vector<double> zeros_;
};

// Pending additive parameter changes, applied once with a learning rate.
class UpdateAccumulator {
 public:
  using LogitMap = std::unordered_map<ObservationKey, std::vector<double>, ObservationKeyHash>;
  using ValueMap = std::unordered_map<ObservationKey, double, ObservationKeyHash>;

  explicit UpdateAccumulator(int action_count) : action_count_(action_count) {}

  int action_count() const { return action_count_; }
  std::vector<double>& logits_at(const ObservationKey& key);
  void add_value(const ObservationKey& key, double delta) { values_[key] += delta; }
  // Pending value change as the running mean of the samples recorded for
  // the key, so that revisiting a key within one update does not multiply
  // the effective step size.
  void add_value_sample(const ObservationKey& key, double delta) {
    const double n = ++value_samples_[key];
    double& v = values_[key];
    v += (delta - v) / n;
  }

  const LogitMap& pending_logits() const { return logits_; }
  LogitMap& pending_logits() { return logits_; }
  const ValueMap& pending_values() const { return values_; }

  bool empty() const { return logits_.empty() && values_.empty(); }
  void clear() {
    logits_.clear();
    values_.clear();
    value_samples_.clear();
  }

 private:
  friend void apply(UpdateAccumulator&, PolicyTable&, double);
  friend void apply(UpdateAccumulator&, ValueTable&, double);

  int action_count_;
  LogitMap logits_;
  ValueMap values_;
  std::unordered_map<ObservationKey, int, ObservationKeyHash> value_samples_;
};

// coefficient * d/dtheta log pi_theta(action | key) = coefficient * (onehot - pi).
void accumulate_logprob_gradient(UpdateAccumulator& acc, const PolicyTable& policy,
                                 const ObservationKey& key, int action, double coefficient);

enum class XentDirection { TeacherGivenStudent, StudentGivenTeacher };

// coefficient * gradient of the per-step cross entropy.
//   TeacherGivenStudent: H(pi || pi_theta), gradient pi_theta - pi.
//   StudentGivenTeacher: H(pi_theta || pi), through the softmax Jacobian.
// log_floor > 0 clamps teacher probabilities; 0 rejects zeros.
void accumulate_cross_entropy_gradient(UpdateAccumulator& acc, std::span<const double> teacher,
                                       const PolicyTable& policy, const ObservationKey& key,
                                       XentDirection direction, double coefficient,
                                       double log_floor = 0.0);

// coefficient * gradient of sum_a pi(a) pi_theta(a).
void accumulate_overlap_gradient(UpdateAccumulator& acc, std::span<const double> teacher,
                                 const PolicyTable& policy, const ObservationKey& key,
                                 double coefficient);

// theta += lr * pending; clears the applied part of the accumulator.
void apply(UpdateAccumulator& acc, PolicyTable& policy, double learning_rate);
void apply(UpdateAccumulator& acc, ValueTable& values, double learning_rate);

}  // namespace pdistill
