#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "dgmarl/commgraph.hpp"
#include "dgmarl/diffcore/dense.hpp"
#include "dgmarl/rng.hpp"

namespace dgmarl {

struct EnvConfig {
  /// "spread" or "chain".
  std::string kind = "spread";
  std::size_t n_agents = 4;
  Real arena = 8.0;
  std::size_t max_steps = 50;
  Real r_obs = 4.0;
  Real r_comm = 4.0;
  std::size_t k_obs = 3;
  Real move = 0.5;
  Real cover_radius = 0.5;
  Real coverage_bonus = 1.0;
  std::size_t reset_retries = 100;

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("env." + m); };
    if (kind != "spread" && kind != "chain") fail("kind must be 'spread' or 'chain', got '" + kind + "'");
    if (n_agents < 2) fail("n_agents must be at least 2");
    if (!(arena > 0.0)) fail("arena must be positive");
    if (max_steps == 0) fail("max_steps must be positive");
    if (!(r_obs > 0.0)) fail("r_obs must be positive");
    if (!(r_comm > 0.0)) fail("r_comm must be positive");
    if (k_obs == 0) fail("k_obs must be positive");
    if (!(move > 0.0)) fail("move must be positive");
    if (!(cover_radius > 0.0)) fail("cover_radius must be positive");
    if (reset_retries == 0) fail("reset_retries must be positive");
  }
};

struct StepResult {
  std::vector<DenseVector> obs;
  /// Exact mean of `rewards`.
  Real team_reward = 0.0;
  bool done = false;
  bool success = false;
  std::vector<Real> rewards;
};

/// A cooperative task with local observations and a per-step communication
/// graph. Instances are single-owner.
class Environment {
 public:
  virtual ~Environment() = default;
  virtual std::size_t num_agents() const = 0;
  virtual std::size_t obs_dim() const = 0;
  virtual std::size_t num_actions() const = 0;
  virtual std::size_t max_steps() const = 0;
  virtual std::vector<DenseVector> reset(std::uint64_t seed) = 0;
  virtual StepResult step(std::span<const std::size_t> actions) = 0;
  virtual const CommGraph& graph() const = 0;
  virtual DenseVector local_observation(AgentId i) const = 0;
  virtual std::size_t elapsed() const = 0;
  /// Actions of a hand-written policy with full state access, if the task has one.
  virtual std::vector<std::size_t> scripted_actions() const { throw UsageError("no scripted policy for this env"); }
  /// Full state for trajectory dumps.
  virtual nlohmann::json state_json() const = 0;
};

/// Average of the per-agent rewards; the single shared team reward.
inline Real team_average(const std::vector<Real>& r) {
  Real s = 0.0;
  for (Real v : r) s += v;
  return s / static_cast<Real>(r.size());
}

namespace detail {

/// Coverage bookkeeping shared by the arena tasks. Points are 2-D; the 1-D
/// task keeps y = 0.
class CoverageTask : public Environment {
 public:
  explicit CoverageTask(EnvConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  std::size_t num_agents() const override { return cfg_.n_agents; }
  std::size_t max_steps() const override { return cfg_.max_steps; }
  const CommGraph& graph() const override { return graph_; }
  std::size_t elapsed() const override { return t_; }
  const std::vector<Point2>& agent_positions() const { return agents_; }
  const std::vector<Point2>& landmark_positions() const { return landmarks_; }
  const EnvConfig& config() const { return cfg_; }

  /// Places agents and landmarks directly (tests and scripted scenarios).
  std::vector<DenseVector> set_state(std::vector<Point2> agents, std::vector<Point2> landmarks) {
    if (agents.size() != cfg_.n_agents || landmarks.size() != cfg_.n_agents) {
      throw ConfigError("set_state: need one agent and one landmark position per agent");
    }
    agents_ = std::move(agents);
    landmarks_ = std::move(landmarks);
    t_ = 0;
    ever_covered_.assign(cfg_.n_agents, 0);
    mark_initial_coverage();
    graph_ = build_graph();
    return all_observations();
  }

  StepResult step(std::span<const std::size_t> actions) override {
    if (actions.size() != cfg_.n_agents) {
      throw UsageError("step: expected " + std::to_string(cfg_.n_agents) + " actions, got " +
                       std::to_string(actions.size()));
    }
    for (std::size_t i = 0; i < actions.size(); ++i) {
      if (actions[i] >= num_actions()) {
        throw UsageError("step: invalid action " + std::to_string(actions[i]) + " for agent " + std::to_string(i));
      }
    }
    for (std::size_t i = 0; i < actions.size(); ++i) agents_[i] = apply(agents_[i], actions[i]);
    ++t_;
    graph_ = build_graph();

    StepResult r;
    r.rewards.assign(cfg_.n_agents, 0.0);
    const auto covering = coverers();
    bool all = true;
    for (std::size_t l = 0; l < landmarks_.size(); ++l) {
      if (covering[l].empty()) {
        all = false;
        continue;
      }
      if (!ever_covered_[l]) {
        ever_covered_[l] = 1;
        for (AgentId i : covering[l]) r.rewards[i] += cfg_.coverage_bonus;
      }
    }
    for (AgentId i = 0; i < cfg_.n_agents; ++i) r.rewards[i] -= nearest_open_landmark(i, covering) / cfg_.arena;
    r.team_reward = team_average(r.rewards);
    r.success = all;
    r.done = all || t_ >= cfg_.max_steps;
    r.obs = all_observations();
    return r;
  }

  nlohmann::json state_json() const override {
    nlohmann::json j;
    j["t"] = t_;
    auto pts = [](const std::vector<Point2>& ps) {
      nlohmann::json a = nlohmann::json::array();
      for (const auto& p : ps) a.push_back({p.x, p.y});
      return a;
    };
    j["agents"] = pts(agents_);
    j["landmarks"] = pts(landmarks_);
    nlohmann::json e = nlohmann::json::array();
    for (auto [a, b] : graph_.edges()) e.push_back({a, b});
    j["edges"] = e;
    return j;
  }

  /// Greedy assignment: repeatedly pair the closest free agent and free
  /// landmark, then step along the axis with the larger remaining gap.
  std::vector<std::size_t> scripted_actions() const override {
    const std::size_t n = cfg_.n_agents;
    std::vector<std::size_t> target(n, n);
    std::vector<bool> agent_free(n, true), lm_free(n, true);
    for (std::size_t round = 0; round < n; ++round) {
      Real best = 1e300;
      std::size_t bi = 0, bl = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (!agent_free[i]) continue;
        for (std::size_t l = 0; l < n; ++l) {
          if (!lm_free[l]) continue;
          const Real d = distance(agents_[i], landmarks_[l]);
          if (d < best) {
            best = d;
            bi = i;
            bl = l;
          }
        }
      }
      agent_free[bi] = false;
      lm_free[bl] = false;
      target[bi] = bl;
    }
    std::vector<std::size_t> acts(n, 0);
    for (std::size_t i = 0; i < n; ++i) acts[i] = move_toward(agents_[i], landmarks_[target[i]]);
    return acts;
  }

 protected:
  virtual Point2 apply(Point2 p, std::size_t action) const = 0;
  virtual CommGraph build_graph() const = 0;
  virtual std::size_t move_toward(Point2 from, Point2 to) const = 0;

  Real clip(Real v) const { return std::clamp(v, 0.0, cfg_.arena); }

  /// Agents within cover_radius of each landmark.
  std::vector<std::vector<AgentId>> coverers() const {
    std::vector<std::vector<AgentId>> c(landmarks_.size());
    for (std::size_t l = 0; l < landmarks_.size(); ++l)
      for (AgentId i = 0; i < agents_.size(); ++i)
        if (distance(agents_[i], landmarks_[l]) <= cfg_.cover_radius) c[l].push_back(i);
    return c;
  }

  /// Distance from agent i to the nearest landmark not held by another agent.
  /// A covered landmark is held by its closest coverer (ties to the lower
  /// id); the distance to a landmark i itself covers counts as 0.
  Real nearest_open_landmark(AgentId i, const std::vector<std::vector<AgentId>>& covering) const {
    Real best = -1.0;
    for (std::size_t l = 0; l < landmarks_.size(); ++l) {
      const Real di = distance(agents_[i], landmarks_[l]);
      const bool other = std::any_of(covering[l].begin(), covering[l].end(), [&](AgentId a) {
        const Real da = distance(agents_[a], landmarks_[l]);
        return a != i && (da < di || (da == di && a < i));
      });
      if (other) continue;
      const Real d = di <= cfg_.cover_radius ? 0.0 : di;
      if (best < 0.0 || d < best) best = d;
    }
    return best < 0.0 ? 0.0 : best;
  }

  void mark_initial_coverage() {
    const auto c = coverers();
    for (std::size_t l = 0; l < c.size(); ++l) ever_covered_[l] = c[l].empty() ? 0 : 1;
  }

  /// Relative offsets of the k nearest points within r_obs, nearest first,
  /// written as `dims` coordinates each, zero-padded.
  void write_nearest(std::vector<Real>& out, Point2 self, const std::vector<Point2>& pts, std::size_t skip,
                     std::size_t dims) const {
    std::vector<std::pair<Real, std::size_t>> near;
    for (std::size_t k = 0; k < pts.size(); ++k) {
      if (k == skip) continue;
      const Real d = distance(self, pts[k]);
      if (d <= cfg_.r_obs) near.emplace_back(d, k);
    }
    std::sort(near.begin(), near.end());
    for (std::size_t s = 0; s < cfg_.k_obs; ++s) {
      if (s < near.size()) {
        const Point2 p = pts[near[s].second];
        out.push_back(p.x - self.x);
        if (dims == 2) out.push_back(p.y - self.y);
      } else {
        for (std::size_t c = 0; c < dims; ++c) out.push_back(0.0);
      }
    }
  }

  std::vector<DenseVector> all_observations() const {
    std::vector<DenseVector> obs;
    for (AgentId i = 0; i < cfg_.n_agents; ++i) obs.push_back(local_observation(i));
    return obs;
  }

  EnvConfig cfg_;
  std::vector<Point2> agents_;
  std::vector<Point2> landmarks_;
  std::vector<std::uint8_t> ever_covered_;
  CommGraph graph_;
  std::size_t t_ = 0;
};

}  // namespace detail

/// n agents cover n landmarks in an L x L arena; the graph links agents
/// within r_comm and is rebuilt every step.
class SpreadWorld : public detail::CoverageTask {
 public:
  enum Action : std::size_t { Stay = 0, Up = 1, Down = 2, Left = 3, Right = 4 };

  explicit SpreadWorld(EnvConfig cfg) : CoverageTask(std::move(cfg)) {}

  std::size_t obs_dim() const override { return 2 + 4 * cfg_.k_obs; }
  std::size_t num_actions() const override { return 5; }

  std::vector<DenseVector> reset(std::uint64_t seed) override {
    Rng rng = make_rng(seed, 0x5350524541ULL);
    std::string last;
    for (std::size_t attempt = 0; attempt < cfg_.reset_retries; ++attempt) {
      std::vector<Point2> a(cfg_.n_agents), l(cfg_.n_agents);
      for (auto& p : a) p = {uniform(rng, 0, cfg_.arena), uniform(rng, 0, cfg_.arena)};
      for (auto& p : l) p = {uniform(rng, 0, cfg_.arena), uniform(rng, 0, cfg_.arena)};
      const CommGraph g = radius_graph(a, cfg_.r_comm);
      if (g.is_connected()) return set_state(std::move(a), std::move(l));
      last = g.describe_components();
    }
    throw AssumptionError("SpreadWorld: no connected communication graph after " +
                          std::to_string(cfg_.reset_retries) + " placements (n=" + std::to_string(cfg_.n_agents) +
                          ", r_comm=" + std::to_string(cfg_.r_comm) + "); last draw had " + last);
  }

  /// [x/L, y/L, k nearest landmarks (dx, dy), k nearest agents (dx, dy)].
  DenseVector local_observation(AgentId i) const override {
    if (i >= cfg_.n_agents) throw UsageError("local_observation: agent id out of range");
    std::vector<Real> o{agents_[i].x / cfg_.arena, agents_[i].y / cfg_.arena};
    write_nearest(o, agents_[i], landmarks_, static_cast<std::size_t>(-1), 2);
    write_nearest(o, agents_[i], agents_, i, 2);
    return DenseVector(std::move(o));
  }

 protected:
  Point2 apply(Point2 p, std::size_t a) const override {
    switch (a) {
      case Up: p.y += cfg_.move; break;
      case Down: p.y -= cfg_.move; break;
      case Left: p.x -= cfg_.move; break;
      case Right: p.x += cfg_.move; break;
      default: break;
    }
    return {clip(p.x), clip(p.y)};
  }
  CommGraph build_graph() const override { return radius_graph(agents_, cfg_.r_comm); }
  std::size_t move_toward(Point2 from, Point2 to) const override {
    const Real dx = to.x - from.x, dy = to.y - from.y;
    const Real tol = cfg_.move / 2.0;
    if (std::abs(dx) <= tol && std::abs(dy) <= tol) return Stay;
    if (std::abs(dx) >= std::abs(dy)) return dx > 0 ? Right : Left;
    return dy > 0 ? Up : Down;
  }
};

/// n agents on a segment [0, L] cover evenly spaced slots; the graph is the
/// fixed index chain 0 - 1 - ... - n-1.
class ChainWorld : public detail::CoverageTask {
 public:
  enum Action : std::size_t { Stay = 0, Left = 1, Right = 2 };

  explicit ChainWorld(EnvConfig cfg) : CoverageTask(std::move(cfg)), chain_(CommGraph::chain(cfg_.n_agents)) {}

  std::size_t obs_dim() const override { return 1 + 2 * cfg_.k_obs; }
  std::size_t num_actions() const override { return 3; }

  std::vector<DenseVector> reset(std::uint64_t seed) override {
    Rng rng = make_rng(seed, 0x434841494eULL);
    std::vector<Point2> a(cfg_.n_agents), l(cfg_.n_agents);
    for (auto& p : a) p = {uniform(rng, 0, cfg_.arena), 0.0};
    for (std::size_t k = 0; k < l.size(); ++k) {
      l[k] = {(static_cast<Real>(k) + 0.5) * cfg_.arena / static_cast<Real>(cfg_.n_agents), 0.0};
    }
    return set_state(std::move(a), std::move(l));
  }

  DenseVector local_observation(AgentId i) const override {
    if (i >= cfg_.n_agents) throw UsageError("local_observation: agent id out of range");
    std::vector<Real> o{agents_[i].x / cfg_.arena};
    write_nearest(o, agents_[i], landmarks_, static_cast<std::size_t>(-1), 1);
    write_nearest(o, agents_[i], agents_, i, 1);
    return DenseVector(std::move(o));
  }

 protected:
  Point2 apply(Point2 p, std::size_t a) const override {
    if (a == Left) p.x -= cfg_.move;
    if (a == Right) p.x += cfg_.move;
    return {clip(p.x), 0.0};
  }
  CommGraph build_graph() const override { return chain_; }
  std::size_t move_toward(Point2 from, Point2 to) const override {
    const Real dx = to.x - from.x;
    if (std::abs(dx) <= cfg_.move / 2.0) return Stay;
    return dx > 0 ? Right : Left;
  }

 private:
  CommGraph chain_;
};

inline std::unique_ptr<Environment> make_env(const EnvConfig& cfg) {
  cfg.validate();
  if (cfg.kind == "chain") return std::make_unique<ChainWorld>(cfg);
  return std::make_unique<SpreadWorld>(cfg);
}

/// One JSON object per line: state after the step plus actions and rewards.
inline void write_trajectory_line(std::ostream& os, const Environment& env, std::span<const std::size_t> actions,
                                  const StepResult& r) {
  nlohmann::json j = env.state_json();
  j["actions"] = std::vector<std::size_t>(actions.begin(), actions.end());
  j["rewards"] = r.rewards;
  j["team_reward"] = r.team_reward;
  j["done"] = r.done;
  j["success"] = r.success;
  os << j.dump() << "\n";
}

}  // namespace dgmarl
