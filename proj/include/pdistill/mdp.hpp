#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pdistill/environment.hpp"

namespace pdistill {

// Grid actions. Indices >= kMoveActions are no-ops that leave the agent in
// place.
enum class Move : int { Left = 0, Right = 1, Up = 2, Down = 3 };
inline constexpr int kMoveActions = 4;

// Column x grows to the right, row grows downwards (row 0 is the top edge).
struct Coord {
  int x = 0;
  int row = 0;
  friend bool operator==(const Coord&, const Coord&) = default;
};

struct Cell {
  bool wall = false;
  double reward = 0.0;
  bool terminal = false;
  friend bool operator==(const Cell&, const Cell&) = default;
};

enum class ObservationMode { Full, Window };

struct Observability {
  ObservationMode mode = ObservationMode::Window;
  int k = 4;  // window is (2k+1) x (2k+1)
};

struct TransitionDistribution {
  std::vector<std::pair<Coord, double>> moves;  // merged by destination
  double termination = 0.0;                     // applied after the move
};

class GridWorld final : public Environment {
 public:
  GridWorld(int width, int height, std::vector<Cell> cells, double eta = 0.1,
            double p_term = 0.01, int extra_actions = 0, Observability obs = {});

  // Wall-free, reward-free grid.
  static GridWorld open(int width, int height, double eta = 0.1, double p_term = 0.01);

  int width() const { return width_; }
  int height() const { return height_; }
  double eta() const { return eta_; }
  double p_term() const { return p_term_; }
  int extra_actions() const { return extra_actions_; }
  const Observability& observability() const { return obs_; }
  const std::vector<Cell>& cells() const { return cells_; }

  bool in_bounds(Coord c) const;
  // Out-of-grid coordinates read as walls.
  Cell cell(Coord c) const;
  Coord initial_cell() const { return initial_; }
  StateId id(Coord c) const { return c.row * width_ + c.x; }
  Coord coord(StateId s) const { return {s % width_, s / width_}; }

  // z(s, a): the intended neighbour, or s itself when that is a wall.
  Coord resolve(Coord c, Move m) const;
  TransitionDistribution transition_distribution(Coord c, int action) const;

  ObservationKey window_key(Coord c, int k) const;

  GridWorld with_observability(Observability obs) const;
  GridWorld with_extra_actions(int extra) const;
  GridWorld with_dynamics(double eta, double p_term) const;

  // Generation provenance (set by generate_random_mdp).
  std::optional<std::uint64_t> seed;

  int action_count() const override { return kMoveActions + extra_actions_; }
  int state_count() const override { return width_ * height_; }
  StateId initial_state() const override { return id(initial_); }
  bool is_decision_state(StateId s) const override;
  std::vector<Outcome> outcomes(StateId s, int action) const override;
  StepResult step(StateId s, int action, Rng& rng) const override;
  const ObservationKey& observe(StateId s) const override { return keys_[s]; }

  friend bool operator==(const GridWorld& a, const GridWorld& b);

 private:
  void check_decision_state(Coord c) const;

  int width_;
  int height_;
  std::vector<Cell> cells_;
  double eta_;
  double p_term_;
  int extra_actions_;
  Observability obs_;
  Coord initial_;
  std::vector<ObservationKey> keys_;
};

struct GenParams {
  double p_w = 0.1;
  double p_plus10 = 0.01;
  double p_plus5 = 0.02;
  double p_minus1 = 0.1;
  double p_minus5 = 0.01;
  double p_minus10 = 0.01;
  int max_regeneration_attempts = 1000;

  void validate() const;
};

// Deterministic in (seed, params, width, height). Throws InvalidParams or
// GenerationExhausted.
GridWorld generate_random_mdp(std::uint64_t seed, const GenParams& params, int width,
                              int height, double eta = 0.1, double p_term = 0.01,
                              Observability obs = {});

// BFS from the initial cell; terminals other than +10 goals block the path.
bool path_exists(const GridWorld& world);

std::string to_ascii(const GridWorld& world);
nlohmann::json to_json(const GridWorld& world);
GridWorld grid_world_from_json(const nlohmann::json& doc);

// Corridor s_{-T} .. s_{+T}; the ends are terminal with rewards -1 (left)
// and +1 (right). Actions: 0 = left, 1 = right.
class CorridorWorld final : public Environment {
 public:
  explicit CorridorWorld(int half_length, double p_term = 0.01, double eta = 0.0);

  int half_length() const { return half_length_; }
  // State id for position in [-T, T].
  StateId state_at(int position) const { return position + half_length_; }

  int action_count() const override { return 2; }
  int state_count() const override { return 2 * half_length_ + 1; }
  StateId initial_state() const override { return half_length_; }
  bool is_decision_state(StateId s) const override;
  std::vector<Outcome> outcomes(StateId s, int action) const override;
  const ObservationKey& observe(StateId s) const override { return keys_[s]; }

 private:
  int half_length_;
  double p_term_;
  double eta_;
  std::vector<ObservationKey> keys_;
};

// The seven-state two-decision tree with a policy that shares one parameter
// between s_L and s_R. Action 0 picks the first child (L), action 1 the
// second (R). The student sees s_L and s_R as the same observation; the
// teacher key distinguishes them.
class CounterexampleMdp final : public Environment {
 public:
  enum State : StateId { S0 = 0, SL, SR, SLL, SLR, SRL, SRR, kCount };

  CounterexampleMdp();

  static const ObservationKey& root_key();
  static const ObservationKey& branch_key();

  int action_count() const override { return 2; }
  int state_count() const override { return kCount; }
  StateId initial_state() const override { return S0; }
  bool is_decision_state(StateId s) const override { return s <= SR; }
  std::vector<Outcome> outcomes(StateId s, int action) const override;
  const ObservationKey& observe(StateId s) const override { return observed_[s]; }
  const ObservationKey& teacher_key(StateId s) const override { return named_[s]; }

 private:
  std::array<ObservationKey, kCount> observed_;
  std::array<ObservationKey, kCount> named_;
};

}  // namespace pdistill
