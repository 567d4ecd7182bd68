#pragma once

#include <compare>
#include <cstddef>
#include <string>
#include <vector>

#include "pdistill/random.hpp"

namespace pdistill {

using StateId = int;

// Canonical, content-derived observation encoding. The hash is computed once
// from the text with a process-independent function.
class ObservationKey {
 public:
  ObservationKey() : hash_(stable_hash("")) {}
  explicit ObservationKey(std::string text)
      : text_(std::move(text)), hash_(stable_hash(text_)) {}

  const std::string& text() const { return text_; }
  std::size_t hash() const { return static_cast<std::size_t>(hash_); }

  friend bool operator==(const ObservationKey& a, const ObservationKey& b) {
    return a.hash_ == b.hash_ && a.text_ == b.text_;
  }
  friend std::strong_ordering operator<=>(const ObservationKey& a,
                                          const ObservationKey& b) {
    return a.text_ <=> b.text_;
  }

 private:
  std::string text_;
  std::uint64_t hash_;
};

struct ObservationKeyHash {
  std::size_t operator()(const ObservationKey& k) const { return k.hash(); }
};

// One branch of the one-step dynamics. `done` marks that the episode ends on
// arrival (terminal cell or the random-termination coin).
struct Outcome {
  StateId next;
  double reward;
  double probability;
  bool done;
};

struct StepResult {
  StateId next;
  double reward;
  bool done;
};

// Finite episodic MDP as seen by the learners. States are dense ids in
// [0, state_count()); only decision states may be acted in.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual int action_count() const = 0;
  virtual int state_count() const = 0;
  virtual StateId initial_state() const = 0;
  virtual bool is_decision_state(StateId s) const = 0;
  virtual std::vector<Outcome> outcomes(StateId s, int action) const = 0;

  // Student-facing observation.
  virtual const ObservationKey& observe(StateId s) const = 0;
  // Key under which teacher policies and critics are stored. Equal to the
  // observation unless the teacher can tell apart states the student cannot.
  virtual const ObservationKey& teacher_key(StateId s) const { return observe(s); }

  virtual StepResult step(StateId s, int action, Rng& rng) const {
    const auto branches = outcomes(s, action);
    double u = uniform01(rng);
    for (const auto& b : branches) {
      if (u < b.probability) return {b.next, b.reward, b.done};
      u -= b.probability;
    }
    const auto& b = branches.back();
    return {b.next, b.reward, b.done};
  }
};

}  // namespace pdistill
