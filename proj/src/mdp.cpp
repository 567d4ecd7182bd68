#include "pdistill/mdp.hpp"

#include <cmath>
#include <cstdio>
#include <deque>

#include "pdistill/errors.hpp"

namespace pdistill {

namespace {

std::string format_reward(double r) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", r);
  return buf;
}

std::string cell_token(const Cell& c) {
  if (c.wall) return "#";
  std::string t = format_reward(c.reward);
  if (c.terminal) t += "T";
  return t;
}

Cell cell_from_token(const std::string& token) {
  if (token == "#") return {true, 0.0, false};
  if (token == "." || token.empty()) return {};
  Cell c;
  std::string body = token;
  if (body.back() == 'T') {
    c.terminal = true;
    body.pop_back();
  }
  c.reward = std::stod(body);
  return c;
}

constexpr std::array<Coord, 4> kOffsets = {{{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};

void check_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0))
    throw InvalidParams(std::string(name) + " must lie in [0, 1]");
}

}  // namespace

GridWorld::GridWorld(int width, int height, std::vector<Cell> cells, double eta,
                     double p_term, int extra_actions, Observability obs)
    : width_(width),
      height_(height),
      cells_(std::move(cells)),
      eta_(eta),
      p_term_(p_term),
      extra_actions_(extra_actions),
      obs_(obs) {
  if (width_ < 1 || height_ < 1) throw InvalidParams("grid dimensions must be positive");
  if (static_cast<int>(cells_.size()) != width_ * height_)
    throw InvalidParams("cell count does not match grid dimensions");
  check_probability(eta_, "eta");
  check_probability(p_term_, "p_term");
  if (extra_actions_ < 0) throw InvalidParams("extra_actions must be non-negative");
  if (obs_.mode == ObservationMode::Window && obs_.k < 0)
    throw InvalidParams("window radius must be non-negative");

  initial_ = {(width_ + 1) / 2 - 1, height_ - (height_ + 1) / 2};
  const Cell& start = cells_[id(initial_)];
  if (start.wall || start.terminal) throw InvalidParams("initial cell must be free and non-terminal");

  keys_.resize(cells_.size());
  for (StateId s = 0; s < state_count(); ++s) {
    if (cells_[s].wall) continue;
    keys_[s] = obs_.mode == ObservationMode::Full ? ObservationKey("s:" + std::to_string(s))
                                                  : window_key(coord(s), obs_.k);
  }
}

GridWorld GridWorld::open(int width, int height, double eta, double p_term) {
  return GridWorld(width, height, std::vector<Cell>(static_cast<std::size_t>(width) * height),
                   eta, p_term);
}

bool GridWorld::in_bounds(Coord c) const {
  return c.x >= 0 && c.x < width_ && c.row >= 0 && c.row < height_;
}

Cell GridWorld::cell(Coord c) const {
  if (!in_bounds(c)) return {true, 0.0, false};
  return cells_[id(c)];
}

Coord GridWorld::resolve(Coord c, Move m) const {
  const Coord off = kOffsets[static_cast<int>(m)];
  const Coord dest{c.x + off.x, c.row + off.row};
  return cell(dest).wall ? c : dest;
}

void GridWorld::check_decision_state(Coord c) const {
  const Cell here = cell(c);
  if (here.wall) throw InvalidState("state is a wall");
  if (here.terminal) throw InvalidState("state is terminal");
}

bool GridWorld::is_decision_state(StateId s) const {
  const Cell& c = cells_[s];
  return !c.wall && !c.terminal;
}

TransitionDistribution GridWorld::transition_distribution(Coord c, int action) const {
  check_decision_state(c);
  if (action < 0 || action >= action_count()) throw InvalidParams("action out of range");
  TransitionDistribution dist;
  dist.termination = p_term_;
  auto add = [&](Coord dest, double p) {
    if (p <= 0.0) return;
    for (auto& [where, prob] : dist.moves) {
      if (where == dest) {
        prob += p;
        return;
      }
    }
    dist.moves.emplace_back(dest, p);
  };
  if (action >= kMoveActions) {
    add(c, 1.0);
    return dist;
  }
  add(resolve(c, static_cast<Move>(action)), 1.0 - eta_);
  for (int m = 0; m < kMoveActions; ++m) add(resolve(c, static_cast<Move>(m)), eta_ / 4.0);
  return dist;
}

std::vector<Outcome> GridWorld::outcomes(StateId s, int action) const {
  const Coord here = coord(s);
  const auto dist = transition_distribution(here, action);
  std::vector<Outcome> out;
  out.reserve(dist.moves.size() * 2);
  for (const auto& [dest, p] : dist.moves) {
    const Cell& c = cells_[id(dest)];
    const double reward = action >= kMoveActions ? 0.0 : c.reward;
    if (c.terminal) {
      out.push_back({id(dest), reward, p, true});
      continue;
    }
    if (p_term_ < 1.0) out.push_back({id(dest), reward, p * (1.0 - p_term_), false});
    if (p_term_ > 0.0) out.push_back({id(dest), reward, p * p_term_, true});
  }
  return out;
}

StepResult GridWorld::step(StateId s, int action, Rng& rng) const {
  const Coord here = coord(s);
  check_decision_state(here);
  if (action < 0 || action >= action_count()) throw InvalidParams("action out of range");
  if (action >= kMoveActions) {
    const bool done = p_term_ > 0.0 && uniform01(rng) < p_term_;
    return {s, 0.0, done};
  }
  int direction = action;
  if (eta_ > 0.0 && uniform01(rng) >= 1.0 - eta_) direction = uniform_int(rng, kMoveActions);
  const Coord dest = resolve(here, static_cast<Move>(direction));
  const Cell& c = cells_[id(dest)];
  bool done = c.terminal;
  if (!done && p_term_ > 0.0) done = uniform01(rng) < p_term_;
  return {id(dest), c.reward, done};
}

ObservationKey GridWorld::window_key(Coord c, int k) const {
  std::string text = "w" + std::to_string(k) + ":";
  for (int dx = -k; dx <= k; ++dx) {
    for (int dr = -k; dr <= k; ++dr) {
      text += cell_token(cell({c.x + dx, c.row + dr}));
      text += ',';
    }
  }
  return ObservationKey(std::move(text));
}

GridWorld GridWorld::with_observability(Observability obs) const {
  GridWorld g(width_, height_, cells_, eta_, p_term_, extra_actions_, obs);
  g.seed = seed;
  return g;
}

GridWorld GridWorld::with_extra_actions(int extra) const {
  GridWorld g(width_, height_, cells_, eta_, p_term_, extra, obs_);
  g.seed = seed;
  return g;
}

GridWorld GridWorld::with_dynamics(double eta, double p_term) const {
  GridWorld g(width_, height_, cells_, eta, p_term, extra_actions_, obs_);
  g.seed = seed;
  return g;
}

bool operator==(const GridWorld& a, const GridWorld& b) {
  return a.width_ == b.width_ && a.height_ == b.height_ && a.cells_ == b.cells_ &&
         a.eta_ == b.eta_ && a.p_term_ == b.p_term_ && a.extra_actions_ == b.extra_actions_;
}

void GenParams::validate() const {
  const double ps[] = {p_w, p_plus10, p_plus5, p_minus1, p_minus5, p_minus10};
  double total = 0.0;
  for (double p : ps) {
    check_probability(p, "generation probability");
    total += p;
  }
  if (total > 1.0 + 1e-12) throw InvalidParams("generation probabilities sum above 1");
  if (p_plus10 <= 0.0) throw InvalidParams("p_plus10 must be positive so a goal can be placed");
  if (max_regeneration_attempts < 1) throw InvalidParams("max_regeneration_attempts must be >= 1");
}

GridWorld generate_random_mdp(std::uint64_t seed, const GenParams& params, int width,
                              int height, double eta, double p_term, Observability obs) {
  params.validate();
  if (width < 2 || height < 2) throw InvalidParams("width and height must be >= 2");

  // Modifications in the order they are attempted; the first success wins.
  const std::array<std::pair<double, Cell>, 6> mods = {{
      {params.p_w, {true, 0.0, false}},
      {params.p_plus10, {false, 10.0, true}},
      {params.p_plus5, {false, 5.0, true}},
      {params.p_minus1, {false, -1.0, false}},
      {params.p_minus5, {false, -5.0, true}},
      {params.p_minus10, {false, -10.0, true}},
  }};

  Rng rng(seed);
  const Coord start{(width + 1) / 2 - 1, height - (height + 1) / 2};
  for (int attempt = 0; attempt < params.max_regeneration_attempts; ++attempt) {
    std::vector<Cell> cells(static_cast<std::size_t>(width) * height);
    for (int row = 0; row < height; ++row) {
      for (int x = 0; x < width; ++x) {
        if (x == start.x && row == start.row) continue;
        for (const auto& [p, cell] : mods) {
          if (uniform01(rng) < p) {
            cells[static_cast<std::size_t>(row) * width + x] = cell;
            break;
          }
        }
      }
    }
    GridWorld world(width, height, std::move(cells), eta, p_term, 0, obs);
    if (path_exists(world)) {
      world.seed = seed;
      return world;
    }
  }
  throw GenerationExhausted("no solvable grid after " +
                            std::to_string(params.max_regeneration_attempts) + " attempts");
}

bool path_exists(const GridWorld& world) {
  std::vector<char> seen(world.state_count(), 0);
  std::deque<Coord> frontier{world.initial_cell()};
  seen[world.id(world.initial_cell())] = 1;
  while (!frontier.empty()) {
    const Coord c = frontier.front();
    frontier.pop_front();
    const Cell here = world.cell(c);
    if (here.terminal) {
      if (here.reward == 10.0) return true;
      continue;
    }
    for (const Coord off : kOffsets) {
      const Coord n{c.x + off.x, c.row + off.row};
      if (world.cell(n).wall || seen[world.id(n)]) continue;
      seen[world.id(n)] = 1;
      frontier.push_back(n);
    }
  }
  return false;
}

std::string to_ascii(const GridWorld& world) {
  std::string out;
  for (int row = 0; row < world.height(); ++row) {
    for (int x = 0; x < world.width(); ++x) {
      const Coord c{x, row};
      const Cell cell = world.cell(c);
      std::string token;
      if (cell.wall) {
        token = "#";
      } else if (c == world.initial_cell()) {
        token = "S";
      } else if (cell.reward != 0.0 || cell.terminal) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%+g", cell.reward);
        token = buf;
        if (cell.terminal) token += "*";
      } else {
        token = ".";
      }
      char buf[16];
      std::snprintf(buf, sizeof buf, "%5s", token.c_str());
      out += buf;
    }
    out += '\n';
  }
  return out;
}

nlohmann::json to_json(const GridWorld& world) {
  nlohmann::json rows = nlohmann::json::array();
  for (int row = 0; row < world.height(); ++row) {
    nlohmann::json r = nlohmann::json::array();
    for (int x = 0; x < world.width(); ++x) {
      const Cell c = world.cell({x, row});
      r.push_back(!c.wall && !c.terminal && c.reward == 0.0 ? std::string(".") : cell_token(c));
    }
    rows.push_back(std::move(r));
  }
  nlohmann::json doc = {
      {"width", world.width()},
      {"height", world.height()},
      {"eta", world.eta()},
      {"p_term", world.p_term()},
      {"extra_actions", world.extra_actions()},
      {"observation",
       {{"mode", world.observability().mode == ObservationMode::Full ? "full" : "window"},
        {"k", world.observability().k}}},
      {"cells", std::move(rows)},
  };
  doc["seed"] = world.seed ? nlohmann::json(*world.seed) : nlohmann::json(nullptr);
  return doc;
}

GridWorld grid_world_from_json(const nlohmann::json& doc) {
  const int width = doc.at("width").get<int>();
  const int height = doc.at("height").get<int>();
  const auto& rows = doc.at("cells");
  if (static_cast<int>(rows.size()) != height) throw InvalidParams("row count mismatch");
  std::vector<Cell> cells;
  cells.reserve(static_cast<std::size_t>(width) * height);
  for (const auto& r : rows) {
    if (static_cast<int>(r.size()) != width) throw InvalidParams("column count mismatch");
    for (const auto& token : r) cells.push_back(cell_from_token(token.get<std::string>()));
  }
  Observability obs;
  if (doc.contains("observation")) {
    const auto& o = doc.at("observation");
    obs.mode = o.value("mode", "window") == "full" ? ObservationMode::Full : ObservationMode::Window;
    obs.k = o.value("k", 4);
  }
  GridWorld world(width, height, std::move(cells), doc.value("eta", 0.1),
                  doc.value("p_term", 0.01), doc.value("extra_actions", 0), obs);
  if (doc.contains("seed") && !doc.at("seed").is_null())
    world.seed = doc.at("seed").get<std::uint64_t>();
  return world;
}

CorridorWorld::CorridorWorld(int half_length, double p_term, double eta)
    : half_length_(half_length), p_term_(p_term), eta_(eta) {
  if (half_length_ < 1) throw InvalidParams("corridor half length must be positive");
  check_probability(p_term_, "p_term");
  check_probability(eta_, "eta");
  for (int i = 0; i < state_count(); ++i)
    keys_.emplace_back("c:" + std::to_string(i - half_length_));
}

bool CorridorWorld::is_decision_state(StateId s) const {
  return s > 0 && s < state_count() - 1;
}

std::vector<Outcome> CorridorWorld::outcomes(StateId s, int action) const {
  if (!is_decision_state(s)) throw InvalidState("corridor end is terminal");
  if (action < 0 || action > 1) throw InvalidParams("corridor has two actions");
  std::vector<Outcome> out;
  auto add = [&](StateId dest, double p) {
    if (p <= 0.0) return;
    const bool terminal = !is_decision_state(dest);
    const double reward = dest == 0 ? -1.0 : (dest == state_count() - 1 ? 1.0 : 0.0);
    if (terminal) {
      out.push_back({dest, reward, p, true});
      return;
    }
    if (p_term_ < 1.0) out.push_back({dest, reward, p * (1.0 - p_term_), false});
    if (p_term_ > 0.0) out.push_back({dest, reward, p * p_term_, true});
  };
  const StateId intended = action == 0 ? s - 1 : s + 1;
  const StateId other = action == 0 ? s + 1 : s - 1;
  add(intended, 1.0 - eta_ / 2.0);
  add(other, eta_ / 2.0);
  return out;
}

CounterexampleMdp::CounterexampleMdp() {
  static const char* names[kCount] = {"s0", "sL", "sR", "sLL", "sLR", "sRL", "sRR"};
  for (int s = 0; s < kCount; ++s) {
    named_[s] = ObservationKey(names[s]);
    observed_[s] = named_[s];
  }
  observed_[S0] = root_key();
  observed_[SL] = branch_key();
  observed_[SR] = branch_key();
}

const ObservationKey& CounterexampleMdp::root_key() {
  static const ObservationKey key("root");
  return key;
}

const ObservationKey& CounterexampleMdp::branch_key() {
  static const ObservationKey key("branch");
  return key;
}

std::vector<Outcome> CounterexampleMdp::outcomes(StateId s, int action) const {
  if (!is_decision_state(s)) throw InvalidState("leaf states end the episode");
  if (action < 0 || action > 1) throw InvalidParams("counterexample has two actions");
  switch (s) {
    case S0:
      return {{action == 0 ? SL : SR, 0.0, 1.0, false}};
    case SL:
      return {{action == 0 ? SLL : SLR, action == 0 ? -1.0 : -2.0, 1.0, true}};
    default:
      return {{action == 0 ? SRL : SRR, action == 0 ? 0.0 : -3.0, 1.0, true}};
  }
}

}  // namespace pdistill
