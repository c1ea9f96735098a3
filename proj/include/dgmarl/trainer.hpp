#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "dgmarl/agent.hpp"
#include "dgmarl/checkpoint.hpp"
#include "dgmarl/commgraph.hpp"
#include "dgmarl/dgat.hpp"
#include "dgmarl/envs.hpp"

namespace dgmarl {

enum class TrainMode { Distributed, CtdeReference, Independent };

inline TrainMode parse_mode(const std::string& s) {
  if (s == "distributed") return TrainMode::Distributed;
  if (s == "ctde_reference") return TrainMode::CtdeReference;
  if (s == "independent") return TrainMode::Independent;
  throw ConfigError("train.mode must be distributed, ctde_reference or independent, got '" + s + "'");
}

inline std::string mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::Distributed: return "distributed";
    case TrainMode::CtdeReference: return "ctde_reference";
    case TrainMode::Independent: return "independent";
  }
  return "?";
}

struct TrainConfig {
  TrainMode mode = TrainMode::Distributed;
  std::size_t hops = 2;
  Aggregation aggregation = Aggregation::Attention;
  Normalization normalization = Normalization::Softmax;
  bool shared_layers = false;
  std::size_t feature_dim = 16;
  std::size_t attn_dim = 16;
  std::size_t hidden = 64;
  PpoConfig ppo;
  EnvConfig env;
  std::size_t total_steps = 200000;
  /// Parallel environment instances and steps collected from each per iteration.
  std::size_t rollout_envs = 8;
  std::size_t rollout_length = 50;
  /// Greedy evaluation every this many iterations (0 = only at the end).
  std::size_t eval_interval = 10;
  std::size_t eval_episodes = 100;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  bool record_wall_time = false;

  /// Hop budget actually used: independent agents never communicate.
  std::size_t effective_hops() const { return mode == TrainMode::Independent ? 0 : hops; }
  bool uses_consensus() const { return mode != TrainMode::Independent && ppo.consensus_alpha > 0.0; }
  bool uses_averaging() const { return mode != TrainMode::Independent; }

  void validate() const {
    ppo.validate();
    env.validate();
    if (feature_dim == 0 || attn_dim == 0 || hidden == 0) throw ConfigError("model dims must be positive");
    if (rollout_envs == 0) throw ConfigError("train.rollout_envs must be positive");
    if (rollout_length == 0) throw ConfigError("train.rollout_length must be positive");
    if (threads == 0) throw ConfigError("train.threads must be positive");
  }
};

struct MetricsRow {
  std::size_t step = 0;
  std::size_t iteration = 0;
  Real mean_return = std::nan("");
  Real success_rate = std::nan("");
  Real consensus_loss = 0.0;
  Real attention_entropy = 0.0;
  Real avg_node_degree = std::nan("");
  std::uint64_t msgs_sent = 0;
  std::uint64_t scalars_sent = 0;
  std::uint64_t param_scalars_averaged = 0;
  std::int64_t wall_ms = 0;
};

inline const char* metrics_header() {
  return "step,iteration,mean_return,success_rate,consensus_loss,attention_entropy,avg_node_degree,msgs_sent,"
         "scalars_sent,param_scalars_averaged,wall_ms";
}

inline std::string format_real(Real v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline void write_metrics_row(std::ostream& os, const MetricsRow& r) {
  os << r.step << "," << r.iteration << "," << format_real(r.mean_return) << "," << format_real(r.success_rate) << ","
     << format_real(r.consensus_loss) << "," << format_real(r.attention_entropy) << ","
     << format_real(r.avg_node_degree) << "," << r.msgs_sent << "," << r.scalars_sent << ","
     << r.param_scalars_averaged << "," << r.wall_ms << "\n";
}

struct EvalReport {
  std::size_t episodes = 0;
  Real success_rate = 0.0;
  Real mean_return = 0.0;
  Real mean_node_degree = 0.0;
};

/// Runs `fn(k)` for k in [0, n) on up to `threads` workers. Work items must be
/// independent; results are identical for any thread count.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t k = 0; k < n; ++k) fn(k);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t k = w; k < n; k += threads) fn(k);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

using EnvFactory = std::function<std::unique_ptr<Environment>(std::size_t instance)>;

/// Joint decision for a batch of environment states.
struct JointDecision {
  std::vector<std::vector<ActResult>> per_agent;  // [agent][sample]
  std::vector<DenseMatrix> o_hat;                 // [agent] B x d
  std::vector<std::vector<DenseMatrix>> messages;  // [k][agent] B x d, k = 0..K
  Real attention_entropy = 0.0;
};

/// The set of agents plus everything Algorithm-level training needs.
class Trainer {
 public:
  explicit Trainer(TrainConfig cfg, EnvFactory factory = {}) : cfg_(std::move(cfg)), factory_(std::move(factory)) {
    cfg_.validate();
    if (!factory_) {
      const EnvConfig ec = cfg_.env;
      factory_ = [ec](std::size_t) { return make_env(ec); };
    }
    for (std::size_t e = 0; e < cfg_.rollout_envs; ++e) envs_.push_back(factory_(e));
    n_ = envs_[0]->num_agents();
    obs_dim_ = envs_[0]->obs_dim();
    num_actions_ = envs_[0]->num_actions();

    AgentConfig ac;
    ac.obs_dim = obs_dim_;
    ac.num_actions = num_actions_;
    ac.feature_dim = cfg_.feature_dim;
    ac.attn_dim = cfg_.attn_dim;
    ac.hops = cfg_.effective_hops();
    ac.shared_layers = cfg_.shared_layers;
    ac.hidden = cfg_.hidden;
    ac.critic_input_dim = cfg_.mode == TrainMode::CtdeReference ? n_ * obs_dim_ : 0;
    for (AgentId i = 0; i < n_; ++i) {
      Rng init = make_rng(cfg_.seed, 0x1417, i);
      agents_.push_back(std::make_unique<Agent>(i, ac, cfg_.ppo, init));
    }
    dgat_opt_.hops = cfg_.effective_hops();
    dgat_opt_.aggregation = cfg_.aggregation;
    dgat_opt_.normalization = cfg_.normalization;

    act_rngs_.resize(cfg_.rollout_envs);
    for (std::size_t e = 0; e < cfg_.rollout_envs; ++e)
      for (AgentId i = 0; i < n_; ++i) act_rngs_[e].push_back(make_rng(cfg_.seed, 0xAC7, e, i));
    episodes_.assign(cfg_.rollout_envs, 0);
    current_obs_.resize(cfg_.rollout_envs);
    episode_return_.assign(cfg_.rollout_envs, 0.0);
    for (std::size_t e = 0; e < cfg_.rollout_envs; ++e) reset_env(e);
  }

  const TrainConfig& config() const noexcept { return cfg_; }
  std::size_t num_agents() const noexcept { return n_; }
  std::vector<std::unique_ptr<Agent>>& agents() noexcept { return agents_; }
  Agent& agent(AgentId i) { return *agents_.at(i); }
  const DgatOptions& dgat_options() const noexcept { return dgat_opt_; }
  std::size_t env_steps() const noexcept { return steps_; }
  std::size_t iterations() const noexcept { return iteration_; }
  std::uint64_t msgs_sent() const noexcept { return msgs_; }
  std::uint64_t scalars_sent() const noexcept { return msgs_ * cfg_.feature_dim; }
  std::uint64_t param_scalars_averaged() const noexcept { return param_scalars_; }
  const std::vector<RolloutBuffer>& buffers() const noexcept { return buffers_; }
  const std::vector<CommGraph>& rollout_graphs() const noexcept { return graphs_; }

  std::vector<DgatStack*> stacks() {
    std::vector<DgatStack*> s;
    for (auto& a : agents_) s.push_back(&a->dgat());
    return s;
  }

  /// Forward every agent on B environment states. obs[i] is B x p; samples
  /// whose rngs are null act greedily.
  JointDecision decide(const std::vector<DenseMatrix>& obs, const std::vector<const CommGraph*>& graphs,
                       const std::vector<std::vector<Rng*>>* rngs, bool greedy) {
    std::vector<Tape> tapes(n_);
    std::vector<Tape*> tp;
    std::vector<const DenseMatrix*> op;
    for (AgentId i = 0; i < n_; ++i) {
      tp.push_back(&tapes[i]);
      op.push_back(&obs[i]);
    }
    auto st = stacks();
    MultihopResult r = multihop_forward(st, tp, op, graphs, dgat_opt_);
    JointDecision d;
    d.per_agent.resize(n_);
    d.o_hat.resize(n_);
    const DenseMatrix joint = cfg_.mode == TrainMode::CtdeReference ? joint_obs(obs) : DenseMatrix();
    d.messages = std::move(r.messages);
    for (AgentId i = 0; i < n_; ++i) {
      d.o_hat[i] = d.messages.back()[i];
      if (dgat_opt_.hops > 0) d.attention_entropy += attention_entropy(tapes[i], r, i, dgat_opt_.hops - 1);
    }
    if (n_ > 0) d.attention_entropy /= static_cast<Real>(n_);
    parallel_for(n_, cfg_.threads, [&](std::size_t i) {
      const DenseMatrix o_tilde = concat_cols(obs[i], d.o_hat[i]);
      std::vector<Rng*> rr(graphs.size(), nullptr);
      if (rngs) rr = (*rngs)[i];
      d.per_agent[i] = act_batch(agents_[i]->nets(), o_tilde, joint.size() ? joint : o_tilde, rr, greedy);
    });
    return d;
  }

  /// Collects rollout_length steps from each environment instance into fresh
  /// per-agent buffers, auto-resetting finished episodes.
  void collect_rollout() {
    const std::size_t E = cfg_.rollout_envs, T = cfg_.rollout_length;
    buffers_.clear();
    for (AgentId i = 0; i < n_; ++i) buffers_.emplace_back(E, T, obs_dim_, cfg_.feature_dim);
    graphs_.assign(E * T, CommGraph());
    message_store_.assign(dgat_opt_.hops + 1, std::vector<DenseMatrix>(n_, DenseMatrix(E * T, cfg_.feature_dim)));
    ep_returns_.clear();
    ep_success_.clear();
    ep_degree_.clear();
    std::vector<std::vector<Rng*>> rngs(n_, std::vector<Rng*>(E));
    for (std::size_t e = 0; e < E; ++e)
      for (AgentId i = 0; i < n_; ++i) rngs[i][e] = &act_rngs_[e][i];

    for (std::size_t t = 0; t < T; ++t) {
      std::vector<DenseMatrix> obs = gather_current_obs();
      std::vector<const CommGraph*> graphs;
      for (auto& env : envs_) graphs.push_back(&env->graph());
      JointDecision d = decide(obs, graphs, &rngs, false);
      for (std::size_t e = 0; e < E; ++e) {
        graphs_[e * T + t] = envs_[e]->graph();
        for (std::size_t k = 0; k <= dgat_opt_.hops; ++k)
          for (AgentId i = 0; i < n_; ++i) {
            auto src = d.messages[k][i].row_span(e);
            std::copy(src.begin(), src.end(), message_store_[k][i].row_span(e * T + t).begin());
          }
        msgs_ += static_cast<std::uint64_t>(dgat_opt_.hops) * closed_degree_sum(envs_[e]->graph());
        std::vector<std::size_t> actions(n_);
        for (AgentId i = 0; i < n_; ++i) actions[i] = d.per_agent[i][e].action;
        StepResult sr = envs_[e]->step(actions);
        ++steps_;
        episode_return_[e] += sr.team_reward;
        for (AgentId i = 0; i < n_; ++i) {
          const ActResult& ar = d.per_agent[i][e];
          buffers_[i].record(e, t, obs[i].row_span(e), d.o_hat[i].row_span(e), ar.action, ar.log_prob, ar.value,
                             sr.team_reward, sr.done);
        }
        if (sr.done) {
          ep_returns_.push_back(episode_return_[e]);
          ep_success_.push_back(sr.success ? 1.0 : 0.0);
          ep_degree_.push_back(average_node_degree(envs_[e]->graph()));
          reset_env(e);
        } else {
          current_obs_[e] = std::move(sr.obs);
        }
      }
    }
    // Bootstrap unfinished segments with the critic's value of the current state.
    std::vector<DenseMatrix> obs = gather_current_obs();
    std::vector<const CommGraph*> graphs;
    for (auto& env : envs_) graphs.push_back(&env->graph());
    JointDecision d = decide(obs, graphs, nullptr, true);
    for (AgentId i = 0; i < n_; ++i)
      for (std::size_t e = 0; e < E; ++e) {
        const bool ended = buffers_[i].dones()[buffers_[i].index(e, T - 1)] != 0;
        buffers_[i].set_bootstrap(e, ended ? 0.0 : d.per_agent[i][e].value);
      }
  }

  /// GAE, then PPO epochs per agent. Each agent recomputes only its own
  /// D-GAT forward; neighbor features and consensus targets are the messages
  /// it received during collection. Agents update independently and finish
  /// with one neighbor-averaging round over D-GAT parameters.
  LossReport train_iteration() {
    if (buffers_.empty()) throw UsageError("train_iteration: collect a rollout first");
    if (message_store_.size() != dgat_opt_.hops + 1) throw UsageError("train_iteration: rollout has no stored messages");
    std::vector<LossReport> reps(n_);
    std::vector<Real> entropy(n_, 0.0);
    parallel_for(n_, cfg_.threads, [&](std::size_t i) {
      RolloutBuffer& buf = buffers_[i];
      buf.compute_gae(cfg_.ppo.gamma, cfg_.ppo.lambda);
      std::size_t forwards = 0;
      // Every agent draws the same minibatch schedule from the shared seed.
      Rng shuffle_rng = make_rng(cfg_.seed, 0x5A3D, iteration_);
      for (std::size_t ep = 0; ep < cfg_.ppo.epochs; ++ep) {
        for (const auto& rows : minibatch_indices(buf.size(), cfg_.ppo.num_minibatches, shuffle_rng)) {
          StepBatch mb = make_step_batch(buf, rows, nullptr);
          if (cfg_.mode == TrainMode::CtdeReference) mb.critic_input = joint_rows(rows);
          std::vector<const CommGraph*> graphs;
          for (auto r : rows) graphs.push_back(&graphs_[r]);
          std::vector<std::vector<DenseMatrix>> received(message_store_.size());
          for (std::size_t k = 0; k < message_store_.size(); ++k)
            for (AgentId j = 0; j < n_; ++j) received[k].push_back(gather_rows(message_store_[k][j], rows));
          Tape t;
          LocalForward f = local_forward(agents_[i]->dgat(), t, i, mb.obs, graphs, received, dgat_opt_);
          Var cons;
          if (cfg_.uses_consensus()) {
            cons = consensus_loss_term(t, f.output(), stored_targets(received.back(), f.index), f.index,
                                       cfg_.ppo.consensus_alpha);
          }
          reps[i].accumulate(local_step(*agents_[i], t, f.output(), mb, cfg_.ppo, cons));
          if (dgat_opt_.hops > 0) entropy[i] += attention_entropy(t.value(f.alpha.back()), f.index);
          ++forwards;
        }
      }
      if (forwards > 0) entropy[i] /= static_cast<Real>(forwards);
    });
    LossReport total;
    update_entropy_ = 0.0;
    for (AgentId i = 0; i < n_; ++i) {
      total.accumulate(reps[i]);
      update_entropy_ += entropy[i] / static_cast<Real>(n_);
    }
    if (cfg_.uses_averaging()) average_parameters(graphs_[cfg_.rollout_length - 1]);
    ++iteration_;
    return total.mean();
  }

  /// One D-SGD mixing round on `g`; counts sum_i |N^i| |psi^i| scalars.
  void average_parameters(const CommGraph& g) {
    auto st = stacks();
    dsgd_average(st, consensus_weights(g));
    for (AgentId i = 0; i < n_; ++i) {
      param_scalars_ += g.neighbors(i).size() * agents_[i]->dgat().num_scalars();
    }
  }

  /// Replaces the collected rollout, e.g. with synthetic data. graphs[k] is
  /// the topology of buffer row k; the stored messages are regenerated by a
  /// forward pass of the current agents.
  void load_rollout(std::vector<RolloutBuffer> buffers, std::vector<CommGraph> graphs) {
    if (buffers.size() != n_) throw UsageError("load_rollout: one buffer per agent required");
    for (const auto& b : buffers) {
      if (b.size() != graphs.size() || b.length() != cfg_.rollout_length) {
        throw UsageError("load_rollout: buffers must hold rollout_length steps per segment, one graph per row");
      }
    }
    buffers_ = std::move(buffers);
    graphs_ = std::move(graphs);
    std::vector<Tape> tapes(n_);
    std::vector<Tape*> tp;
    std::vector<const DenseMatrix*> op;
    std::vector<const CommGraph*> gp;
    for (AgentId i = 0; i < n_; ++i) {
      tp.push_back(&tapes[i]);
      op.push_back(&buffers_[i].obs());
    }
    for (const auto& g : graphs_) gp.push_back(&g);
    auto st = stacks();
    message_store_ = multihop_forward(st, tp, op, gp, dgat_opt_).messages;
  }

  /// collect_rollout + train_iteration, summarized as a metrics row.
  MetricsRow iterate() {
    const auto t0 = std::chrono::steady_clock::now();
    collect_rollout();
    LossReport loss = train_iteration();
    MetricsRow row;
    row.step = steps_;
    row.iteration = iteration_;
    if (!ep_returns_.empty()) {
      row.mean_return = mean_of(ep_returns_);
      row.success_rate = mean_of(ep_success_);
      row.avg_node_degree = mean_of(ep_degree_);
    }
    row.consensus_loss = loss.consensus / std::max<Real>(1.0, static_cast<Real>(n_));
    row.attention_entropy = update_entropy_;
    row.msgs_sent = msgs_;
    row.scalars_sent = scalars_sent();
    row.param_scalars_averaged = param_scalars_;
    if (cfg_.record_wall_time) {
      row.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
    }
    return row;
  }

  /// Greedy episodes on fresh environment instances, all run in lock step.
  EvalReport evaluate(std::size_t episodes, std::uint64_t seed) {
    EvalReport rep;
    rep.episodes = episodes;
    if (episodes == 0) return rep;
    std::vector<std::unique_ptr<Environment>> envs;
    std::vector<std::vector<DenseVector>> obs(episodes);
    for (std::size_t e = 0; e < episodes; ++e) {
      envs.push_back(factory_(e));
      obs[e] = envs[e]->reset(stream_seed(seed, 0xE7A1, e));
    }
    std::vector<bool> active(episodes, true);
    std::vector<Real> ret(episodes, 0.0);
    std::size_t remaining = episodes, wins = 0;
    Real degree = 0.0;
    while (remaining > 0) {
      std::vector<std::size_t> live;
      for (std::size_t e = 0; e < episodes; ++e)
        if (active[e]) live.push_back(e);
      std::vector<DenseMatrix> block(n_, DenseMatrix(live.size(), obs_dim_));
      std::vector<const CommGraph*> graphs;
      for (std::size_t b = 0; b < live.size(); ++b) {
        graphs.push_back(&envs[live[b]]->graph());
        for (AgentId i = 0; i < n_; ++i) {
          auto src = obs[live[b]][i].span();
          std::copy(src.begin(), src.end(), block[i].row_span(b).begin());
        }
      }
      JointDecision d = decide(block, graphs, nullptr, true);
      for (std::size_t b = 0; b < live.size(); ++b) {
        const std::size_t e = live[b];
        std::vector<std::size_t> actions(n_);
        for (AgentId i = 0; i < n_; ++i) actions[i] = d.per_agent[i][b].action;
        StepResult sr = envs[e]->step(actions);
        ret[e] += sr.team_reward;
        obs[e] = std::move(sr.obs);
        if (sr.done) {
          active[e] = false;
          --remaining;
          wins += sr.success ? 1 : 0;
          degree += average_node_degree(envs[e]->graph());
        }
      }
    }
    const Real k = static_cast<Real>(episodes);
    rep.success_rate = static_cast<Real>(wins) / k;
    rep.mean_return = mean_of(ret);
    rep.mean_node_degree = degree / k;
    return rep;
  }

  nlohmann::json checkpoint_meta() const {
    nlohmann::json m;
    m["mode"] = mode_name(cfg_.mode);
    m["hops"] = cfg_.effective_hops();
    m["obs_dim"] = obs_dim_;
    m["num_actions"] = num_actions_;
    m["feature_dim"] = cfg_.feature_dim;
    m["env_steps"] = steps_;
    m["iteration"] = iteration_;
    m["seed"] = cfg_.seed;
    return m;
  }

  /// sum_i |N^i| with self-loops: feature vectors delivered per hop.
  static std::uint64_t closed_degree_sum(const CommGraph& g) {
    std::uint64_t s = 0;
    for (AgentId i = 0; i < g.size(); ++i) s += g.neighbors(i).size();
    return s;
  }

 private:
  static Real mean_of(const std::vector<Real>& v) {
    Real s = 0.0;
    for (Real x : v) s += x;
    return v.empty() ? std::nan("") : s / static_cast<Real>(v.size());
  }

  static DenseMatrix concat_cols(const DenseMatrix& a, const DenseMatrix& b) {
    DenseMatrix out(a.rows(), a.cols() + b.cols());
    for (std::size_t r = 0; r < a.rows(); ++r) {
      auto dst = out.row_span(r);
      auto x = a.row_span(r), y = b.row_span(r);
      std::copy(x.begin(), x.end(), dst.begin());
      std::copy(y.begin(), y.end(), dst.begin() + static_cast<std::ptrdiff_t>(a.cols()));
    }
    return out;
  }

  DenseMatrix joint_obs(const std::vector<DenseMatrix>& obs) const {
    DenseMatrix out(obs[0].rows(), n_ * obs_dim_);
    for (std::size_t r = 0; r < out.rows(); ++r)
      for (AgentId i = 0; i < n_; ++i) {
        auto src = obs[i].row_span(r);
        std::copy(src.begin(), src.end(), out.row_span(r).begin() + static_cast<std::ptrdiff_t>(i * obs_dim_));
      }
    return out;
  }

  DenseMatrix joint_rows(std::span<const std::uint32_t> rows) const {
    std::vector<DenseMatrix> parts;
    for (AgentId i = 0; i < n_; ++i) parts.push_back(gather_rows(buffers_[i].obs(), rows));
    return joint_obs(parts);
  }

  std::vector<DenseMatrix> gather_current_obs() const {
    std::vector<DenseMatrix> obs(n_, DenseMatrix(cfg_.rollout_envs, obs_dim_));
    for (std::size_t e = 0; e < cfg_.rollout_envs; ++e)
      for (AgentId i = 0; i < n_; ++i) {
        auto src = current_obs_[e][i].span();
        std::copy(src.begin(), src.end(), obs[i].row_span(e).begin());
      }
    return obs;
  }

  void reset_env(std::size_t e) {
    current_obs_[e] = envs_[e]->reset(stream_seed(cfg_.seed, 0xE4, e, episodes_[e]++));
    episode_return_[e] = 0.0;
  }

  TrainConfig cfg_;
  EnvFactory factory_;
  std::vector<std::unique_ptr<Environment>> envs_;
  std::size_t n_ = 0, obs_dim_ = 0, num_actions_ = 0;
  std::vector<std::unique_ptr<Agent>> agents_;
  DgatOptions dgat_opt_;
  std::vector<std::vector<Rng>> act_rngs_;
  std::vector<std::uint64_t> episodes_;
  std::vector<std::vector<DenseVector>> current_obs_;
  std::vector<Real> episode_return_;
  std::vector<RolloutBuffer> buffers_;
  std::vector<CommGraph> graphs_;
  std::vector<std::vector<DenseMatrix>> message_store_;  // [k][agent] rows aligned with buffers
  std::vector<Real> ep_returns_, ep_success_, ep_degree_;
  Real update_entropy_ = 0.0;
  std::size_t steps_ = 0;
  std::size_t iteration_ = 0;
  std::uint64_t msgs_ = 0;
  std::uint64_t param_scalars_ = 0;
};

/// Episodes of an arbitrary joint policy (scripted, random) on fresh envs.
inline EvalReport evaluate_policy(const EnvFactory& factory, std::size_t episodes, std::uint64_t seed,
                                  const std::function<std::vector<std::size_t>(const Environment&)>& policy) {
  EvalReport rep;
  rep.episodes = episodes;
  if (episodes == 0) return rep;
  std::size_t wins = 0;
  Real ret = 0.0, degree = 0.0;
  for (std::size_t e = 0; e < episodes; ++e) {
    auto env = factory(e);
    env->reset(stream_seed(seed, 0xE7A1, e));
    for (;;) {
      StepResult sr = env->step(policy(*env));
      ret += sr.team_reward;
      if (sr.done) {
        wins += sr.success ? 1 : 0;
        degree += average_node_degree(env->graph());
        break;
      }
    }
  }
  const Real k = static_cast<Real>(episodes);
  rep.success_rate = static_cast<Real>(wins) / k;
  rep.mean_return = ret / k;
  rep.mean_node_degree = degree / k;
  return rep;
}

struct RunResult {
  std::vector<MetricsRow> metrics;
  std::vector<std::pair<std::size_t, EvalReport>> evals;  // (env step, report)
  EvalReport final_eval;
};

struct RunOutputs {
  std::optional<std::filesystem::path> dir;  // metrics.csv, eval.csv, ckpt/
  std::function<void(const MetricsRow&)> on_row;
  /// Merged into ckpt/meta.json (the CLI stores the resolved config here).
  nlohmann::json extra_meta = nlohmann::json::object();
};

inline void write_eval_header(std::ostream& os) { os << "step,iteration,success_rate,mean_return,avg_node_degree\n"; }
inline void write_eval_row(std::ostream& os, std::size_t step, std::size_t it, const EvalReport& r) {
  os << step << "," << it << "," << format_real(r.success_rate) << "," << format_real(r.mean_return) << ","
     << format_real(r.mean_node_degree) << "\n";
}

/// Alternates collection and updates until total_steps env steps, evaluating
/// greedily every eval_interval iterations and at the end.
inline RunResult run(Trainer& tr, const RunOutputs& out = {}) {
  const TrainConfig& cfg = tr.config();
  RunResult res;
  auto meta = [&] {
    nlohmann::json m = tr.checkpoint_meta();
    m.update(out.extra_meta);
    return m;
  };
  std::ofstream metrics, evals;
  if (out.dir) {
    std::filesystem::create_directories(*out.dir);
    metrics.open(*out.dir / "metrics.csv");
    evals.open(*out.dir / "eval.csv");
    if (!metrics || !evals) throw ConfigError("cannot write run outputs under " + out.dir->string());
    metrics << metrics_header() << "\n";
    write_eval_header(evals);
    save_checkpoint(*out.dir / "ckpt", tr.agents(), meta());
  }
  const std::uint64_t eval_seed = stream_seed(cfg.seed, 0xE5A1);
  while (tr.env_steps() < cfg.total_steps) {
    MetricsRow row = tr.iterate();
    res.metrics.push_back(row);
    if (out.on_row) out.on_row(row);
    if (metrics.is_open()) {
      write_metrics_row(metrics, row);
      metrics.flush();
    }
    const bool last = tr.env_steps() >= cfg.total_steps;
    if (cfg.eval_episodes > 0 && (last || (cfg.eval_interval > 0 && tr.iterations() % cfg.eval_interval == 0))) {
      EvalReport ev = tr.evaluate(cfg.eval_episodes, eval_seed);
      res.evals.emplace_back(tr.env_steps(), ev);
      if (evals.is_open()) {
        write_eval_row(evals, tr.env_steps(), tr.iterations(), ev);
        evals.flush();
      }
      if (last) res.final_eval = ev;
    }
  }
  if (out.dir) save_checkpoint(*out.dir / "ckpt", tr.agents(), meta());
  return res;
}

}  // namespace dgmarl
