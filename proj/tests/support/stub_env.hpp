#pragma once

#include <cmath>
#include <vector>

#include "dgmarl/envs.hpp"

namespace stub {

using namespace dgmarl;

/// Dynamics that ignore actions: a fixed chain graph, a fixed reward schedule
/// and per-agent observation streams drawn from (episode seed, step, agent,
/// salt). Changing one agent's salt changes only that agent's observations.
class StubEnv : public Environment {
 public:
  StubEnv(std::size_t n, std::size_t obs_dim, std::vector<std::uint64_t> salts, std::size_t episode_len = 10,
          CommGraph graph = {})
      : n_(n), p_(obs_dim), salts_(std::move(salts)), len_(episode_len),
        graph_(graph.size() == n ? std::move(graph) : CommGraph::chain(n)) {
    salts_.resize(n_, 0);
  }

  std::size_t num_agents() const override { return n_; }
  std::size_t obs_dim() const override { return p_; }
  std::size_t num_actions() const override { return 3; }
  std::size_t max_steps() const override { return len_; }
  std::size_t elapsed() const override { return t_; }
  const CommGraph& graph() const override { return graph_; }

  std::vector<DenseVector> reset(std::uint64_t seed) override {
    seed_ = seed;
    t_ = 0;
    return all();
  }

  StepResult step(std::span<const std::size_t> actions) override {
    if (actions.size() != n_) throw UsageError("stub: wrong action count");
    ++t_;
    StepResult r;
    for (std::size_t i = 0; i < n_; ++i) r.rewards.push_back(std::sin(0.7 * static_cast<double>(t_ + 3 * i)));
    r.team_reward = team_average(r.rewards);
    r.done = t_ >= len_;
    r.obs = all();
    return r;
  }

  DenseVector local_observation(AgentId i) const override {
    Rng rng = make_rng(seed_, t_, i, salts_[i]);
    DenseVector o(p_);
    for (std::size_t k = 0; k < p_; ++k) o[k] = uniform(rng, -1, 1);
    return o;
  }

  nlohmann::json state_json() const override { return {{"t", t_}}; }

 private:
  std::vector<DenseVector> all() const {
    std::vector<DenseVector> o;
    for (AgentId i = 0; i < n_; ++i) o.push_back(local_observation(i));
    return o;
  }

  std::size_t n_, p_;
  std::vector<std::uint64_t> salts_;
  std::size_t len_;
  CommGraph graph_;
  std::uint64_t seed_ = 0;
  std::size_t t_ = 0;
};

}  // namespace stub
