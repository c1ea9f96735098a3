#pragma once

#include <cmath>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dgmarl/commgraph.hpp"
#include "dgmarl/dgat.hpp"
#include "dgmarl/diffcore.hpp"
#include "dgmarl/rng.hpp"

namespace dgmarl {

struct PpoConfig {
  Real clip = 0.2;
  Real gamma = 0.98;
  Real lambda = 0.95;
  std::size_t epochs = 5;
  std::size_t num_minibatches = 4;
  Real entropy_coef = 0.001;
  bool huber = true;
  Real huber_delta = 10.0;
  Real value_coef = 1.0;
  Real consensus_alpha = 20.0;
  Real lr = 5e-4;
  Real adam_eps = 1e-5;
  Real max_grad_norm = 10.0;

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("ppo." + m); };
    if (!(clip > 0.0 && clip < 1.0)) fail("clip must lie in (0, 1)");
    if (!(gamma >= 0.0 && gamma < 1.0)) fail("gamma must lie in [0, 1)");
    if (!(lambda >= 0.0 && lambda <= 1.0)) fail("lambda must lie in [0, 1]");
    if (epochs == 0) fail("epochs must be positive");
    if (num_minibatches == 0) fail("num_minibatches must be positive");
    if (entropy_coef < 0.0) fail("entropy_coef must be non-negative");
    if (!(huber_delta > 0.0)) fail("huber_delta must be positive");
    if (consensus_alpha < 0.0) fail("consensus_alpha must be non-negative");
    if (lr < 0.0) fail("lr must be non-negative");
  }

  AdamConfig adam() const {
    AdamConfig a;
    a.lr = lr;
    a.eps = adam_eps;
    a.max_grad_norm = max_grad_norm;
    return a;
  }
};

/// Policy and value MLPs on the augmented observation [o || o_hat].
class AgentNets {
 public:
  AgentNets() = default;
  /// critic_input_dim = 0 means the critic reads the same input as the policy.
  AgentNets(AgentId id, std::size_t obs_dim, std::size_t feature_dim, std::size_t num_actions, std::size_t hidden,
            Rng& rng, std::size_t critic_input_dim = 0)
      : obs_dim_(obs_dim), feature_dim_(feature_dim) {
    if (num_actions < 2) throw ConfigError("AgentNets: need at least two actions");
    if (hidden == 0) throw ConfigError("AgentNets: hidden size must be positive");
    const std::string pre = "agent" + std::to_string(id);
    const std::size_t in = obs_dim + feature_dim;
    policy_ = Mlp(pre + ".policy", {in, hidden, hidden, num_actions}, rng, 0.01);
    value_ = Mlp(pre + ".value", {critic_input_dim ? critic_input_dim : in, hidden, hidden, 1}, rng);
  }
  AgentNets(const AgentNets&) = delete;
  AgentNets& operator=(const AgentNets&) = delete;
  AgentNets(AgentNets&&) = default;
  AgentNets& operator=(AgentNets&&) = default;

  std::size_t obs_dim() const noexcept { return obs_dim_; }
  std::size_t feature_dim() const noexcept { return feature_dim_; }
  std::size_t input_dim() const { return policy_.in_dim(); }
  std::size_t critic_input_dim() const { return value_.in_dim(); }
  std::size_t num_actions() const { return policy_.out_dim(); }

  Var logits(Tape& t, Var o_tilde) { return policy_.forward(t, o_tilde); }
  Var value(Tape& t, Var critic_in) { return value_.forward(t, critic_in); }

  Mlp& policy() noexcept { return policy_; }
  Mlp& value_net() noexcept { return value_; }
  const Mlp& policy() const noexcept { return policy_; }
  const Mlp& value_net() const noexcept { return value_; }

  std::vector<Parameter*> parameters() {
    auto out = policy_.parameters();
    for (auto* p : value_.parameters()) out.push_back(p);
    return out;
  }

 private:
  std::size_t obs_dim_ = 0;
  std::size_t feature_dim_ = 0;
  Mlp policy_;
  Mlp value_;
};

struct ActResult {
  std::size_t action = 0;
  Real log_prob = 0.0;
  Real value = 0.0;
};

/// Samples (or takes the argmax of) softmax(logits) row by row; one rng per row.
inline std::vector<ActResult> act_batch(AgentNets& nets, const DenseMatrix& o_tilde, const DenseMatrix& critic_in,
                                        std::span<Rng* const> rngs, bool greedy = false) {
  if (o_tilde.cols() != nets.input_dim()) {
    throw ConfigError("act: input dim " + std::to_string(o_tilde.cols()) + " but policy expects " +
                      std::to_string(nets.input_dim()));
  }
  if (critic_in.cols() != nets.critic_input_dim() || critic_in.rows() != o_tilde.rows()) {
    throw ConfigError("act: critic input has shape " + critic_in.shape_str());
  }
  if (!greedy && rngs.size() != o_tilde.rows()) throw ConfigError("act: one rng per row required");
  Tape t;
  Var lp = t.log_softmax_rows(nets.logits(t, t.constant(o_tilde)));
  Var v = nets.value(t, t.constant(critic_in));
  const std::size_t a = nets.num_actions();
  auto lpv = t.value(lp);
  auto vv = t.value(v);
  std::vector<ActResult> out(o_tilde.rows());
  std::vector<Real> probs(a);
  for (std::size_t r = 0; r < o_tilde.rows(); ++r) {
    const Real* row = lpv.data() + r * a;
    std::size_t pick = 0;
    if (greedy) {
      for (std::size_t k = 1; k < a; ++k)
        if (row[k] > row[pick]) pick = k;
    } else {
      for (std::size_t k = 0; k < a; ++k) probs[k] = std::exp(row[k]);
      pick = sample_categorical(probs, *rngs[r]);
    }
    out[r] = ActResult{pick, row[pick], vv[r]};
  }
  return out;
}

inline ActResult act(AgentNets& nets, const DenseVector& o_tilde, const DenseVector& critic_in, Rng& rng,
                     bool greedy = false) {
  Rng* r[1] = {&rng};
  return act_batch(nets, DenseMatrix::row(o_tilde), DenseMatrix::row(critic_in), r, greedy)[0];
}

inline ActResult act(AgentNets& nets, const DenseVector& o_tilde, Rng& rng, bool greedy = false) {
  return act(nets, o_tilde, o_tilde, rng, greedy);
}

/// Action probabilities softmax(logits) for one augmented observation.
inline std::vector<Real> action_probabilities(AgentNets& nets, const DenseVector& o_tilde) {
  Tape t;
  auto s = t.value(t.softmax_rows(nets.logits(t, t.constant(o_tilde))));
  return {s.begin(), s.end()};
}

struct GaeResult {
  std::vector<Real> advantages;
  std::vector<Real> returns;
};

/// delta_t = R_t + gamma V_{t+1} (1 - done_t) - V_t and
/// A_t = delta_t + gamma lambda (1 - done_t) A_{t+1}; V_T is `bootstrap`.
inline GaeResult gae(std::span<const Real> rewards, std::span<const Real> values, std::span<const std::uint8_t> dones,
                     Real bootstrap, Real gamma, Real lambda) {
  const std::size_t n = rewards.size();
  if (n == 0) throw UsageError("gae: empty trajectory");
  if (values.size() != n || dones.size() != n) throw UsageError("gae: rewards, values and dones differ in length");
  GaeResult r{std::vector<Real>(n), std::vector<Real>(n)};
  Real next_adv = 0.0;
  Real next_value = bootstrap;
  for (std::size_t k = n; k-- > 0;) {
    const Real live = dones[k] ? 0.0 : 1.0;
    const Real delta = rewards[k] + gamma * next_value * live - values[k];
    next_adv = delta + gamma * lambda * live * next_adv;
    r.advantages[k] = next_adv;
    r.returns[k] = next_adv + values[k];
    next_value = values[k];
  }
  return r;
}

/// (a - mean) / (std + 1e-8) with the population std.
inline std::vector<Real> normalize_advantages(std::span<const Real> adv) {
  if (adv.empty()) return {};
  const Real n = static_cast<Real>(adv.size());
  const Real mean = std::accumulate(adv.begin(), adv.end(), 0.0) / n;
  Real var = 0.0;
  for (Real a : adv) var += (a - mean) * (a - mean);
  const Real sd = std::sqrt(var / n);
  std::vector<Real> out(adv.size());
  for (std::size_t k = 0; k < adv.size(); ++k) out[k] = (adv[k] - mean) / (sd + 1e-8);
  return out;
}

/// One agent's trajectories: `segments` parallel environment streams of
/// `length` steps each, stored segment-major (index = segment * length + t).
class RolloutBuffer {
 public:
  RolloutBuffer() = default;
  RolloutBuffer(std::size_t segments, std::size_t length, std::size_t obs_dim, std::size_t feature_dim)
      : segments_(segments),
        length_(length),
        obs_(segments * length, obs_dim),
        o_hat_(segments * length, feature_dim),
        actions_(segments * length, 0),
        log_probs_(segments * length, 0.0),
        values_(segments * length, 0.0),
        rewards_(segments * length, 0.0),
        dones_(segments * length, 0),
        bootstrap_(segments, 0.0) {}

  std::size_t size() const noexcept { return segments_ * length_; }
  std::size_t segments() const noexcept { return segments_; }
  std::size_t length() const noexcept { return length_; }
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  std::size_t index(std::size_t segment, std::size_t t) const { return segment * length_ + t; }

  void record(std::size_t segment, std::size_t t, std::span<const Real> obs, std::span<const Real> o_hat,
              std::size_t action, Real log_prob, Real value, Real reward, bool done) {
    const std::size_t k = index(segment, t);
    std::copy(obs.begin(), obs.end(), obs_.row_span(k).begin());
    std::copy(o_hat.begin(), o_hat.end(), o_hat_.row_span(k).begin());
    actions_[k] = static_cast<std::uint32_t>(action);
    log_probs_[k] = log_prob;
    values_[k] = value;
    rewards_[k] = reward;
    dones_[k] = done ? 1 : 0;
  }
  void set_bootstrap(std::size_t segment, Real v) { bootstrap_.at(segment) = v; }

  /// Runs GAE over every segment and stores advantages and return targets.
  void compute_gae(Real gamma, Real lambda) {
    if (size() == 0) throw UsageError("gae: empty buffer");
    advantages_.assign(size(), 0.0);
    returns_.assign(size(), 0.0);
    for (std::size_t s = 0; s < segments_; ++s) {
      const std::size_t b = s * length_;
      auto r = gae(std::span(rewards_).subspan(b, length_), std::span(values_).subspan(b, length_),
                   std::span(dones_).subspan(b, length_), bootstrap_[s], gamma, lambda);
      std::copy(r.advantages.begin(), r.advantages.end(), advantages_.begin() + static_cast<std::ptrdiff_t>(b));
      std::copy(r.returns.begin(), r.returns.end(), returns_.begin() + static_cast<std::ptrdiff_t>(b));
    }
  }

  const DenseMatrix& obs() const noexcept { return obs_; }
  const DenseMatrix& o_hat() const noexcept { return o_hat_; }
  const std::vector<std::uint32_t>& actions() const noexcept { return actions_; }
  const std::vector<Real>& log_probs() const noexcept { return log_probs_; }
  const std::vector<Real>& values() const noexcept { return values_; }
  const std::vector<Real>& rewards() const noexcept { return rewards_; }
  const std::vector<std::uint8_t>& dones() const noexcept { return dones_; }
  const std::vector<Real>& advantages() const noexcept { return advantages_; }
  const std::vector<Real>& returns() const noexcept { return returns_; }

 private:
  std::size_t segments_ = 0;
  std::size_t length_ = 0;
  DenseMatrix obs_;
  DenseMatrix o_hat_;
  std::vector<std::uint32_t> actions_;
  std::vector<Real> log_probs_;
  std::vector<Real> values_;
  std::vector<Real> rewards_;
  std::vector<std::uint8_t> dones_;
  std::vector<Real> bootstrap_;
  std::vector<Real> advantages_;
  std::vector<Real> returns_;
};

/// Per-minibatch policy targets; advantages are normalized by the caller.
struct PolicyBatch {
  std::vector<std::uint32_t> actions;
  std::vector<Real> old_log_probs;
  std::vector<Real> advantages;
};

struct PolicyLossParts {
  Var loss;
  Real mean_entropy = 0.0;
  Real clip_fraction = 0.0;
};

/// -mean[min(r A, clip(r, 1-eps, 1+eps) A)] - c_ent * mean entropy with
/// r = exp(log pi_new - log pi_old).
inline PolicyLossParts ppo_policy_loss(Tape& t, Var logits, const PolicyBatch& mb, const PpoConfig& cfg) {
  const std::size_t b = t.rows(logits);
  if (mb.actions.size() != b || mb.old_log_probs.size() != b || mb.advantages.size() != b) {
    throw ConfigError("ppo_policy_loss: minibatch fields must have one entry per row");
  }
  Var lp = t.log_softmax_rows(logits);
  Var lpa = t.gather_cols(lp, mb.actions);
  Var ratio = t.exp(t.sub(lpa, t.constant(mb.old_log_probs, b, 1)));
  auto rv = t.value(ratio);
  PolicyLossParts out;
  std::size_t clipped = 0;
  for (std::size_t k = 0; k < b; ++k) {
    if (!std::isfinite(rv[k])) {
      std::ostringstream os;
      os << "ppo_policy_loss: non-finite ratio at row " << k << " (new log-prob " << t.value(lpa)[k]
         << ", old log-prob " << mb.old_log_probs[k] << ", action " << mb.actions[k] << ")";
      throw NumericError(os.str());
    }
    if (rv[k] < 1.0 - cfg.clip || rv[k] > 1.0 + cfg.clip) ++clipped;
  }
  out.clip_fraction = static_cast<Real>(clipped) / static_cast<Real>(b);
  Var adv = t.constant(mb.advantages, b, 1);
  Var surr = t.minimum(t.mul(ratio, adv), t.mul(t.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip), adv));
  Var entropy = t.scale(t.row_sum(t.mul(t.exp(lp), lp)), -1.0);
  Var mean_ent = t.mean(entropy);
  out.mean_entropy = t.scalar(mean_ent);
  out.loss = t.sub(t.scale(t.mean(surr), -1.0), t.scale(mean_ent, cfg.entropy_coef));
  return out;
}

/// Mean Huber (or squared) residual between V and the return targets.
inline Var critic_loss(Tape& t, Var values, std::span<const Real> targets, const PpoConfig& cfg) {
  if (t.rows(values) != targets.size() || t.cols(values) != 1) {
    throw ConfigError("critic_loss: values must be B x 1 matching the targets");
  }
  Var res = t.sub(values, t.constant(targets, targets.size(), 1));
  return t.mean(cfg.huber ? t.huber(res, cfg.huber_delta) : t.mul(res, res));
}

struct AgentConfig {
  std::size_t obs_dim = 0;
  std::size_t num_actions = 0;
  std::size_t feature_dim = 32;
  std::size_t attn_dim = 32;
  std::size_t hops = 1;
  bool shared_layers = false;
  std::size_t hidden = 64;
  /// 0: critic reads [o || o_hat]; otherwise the critic input width.
  std::size_t critic_input_dim = 0;
};

/// Everything agent i owns: D-GAT stack, policy/value nets and one optimizer
/// over all three. Never copied or moved once built (the optimizer holds
/// pointers into the parameters).
class Agent {
 public:
  Agent(AgentId id, const AgentConfig& cfg, const PpoConfig& ppo, Rng& rng)
      : id_(id),
        dgat_(id, cfg.obs_dim, cfg.feature_dim, cfg.attn_dim, cfg.hops, cfg.shared_layers, rng),
        nets_(id, cfg.obs_dim, cfg.feature_dim, cfg.num_actions, cfg.hidden, rng, cfg.critic_input_dim),
        opt_(ppo.adam()) {
    for (auto* p : nets_.parameters()) opt_.add(*p);
    for (auto* p : dgat_.parameters()) opt_.add(*p);
  }
  Agent(const Agent&) = delete;
  Agent& operator=(const Agent&) = delete;

  AgentId id() const noexcept { return id_; }
  DgatStack& dgat() noexcept { return dgat_; }
  const DgatStack& dgat() const noexcept { return dgat_; }
  AgentNets& nets() noexcept { return nets_; }
  const AgentNets& nets() const noexcept { return nets_; }
  AdamState& optimizer() noexcept { return opt_; }

  /// theta, phi, then psi.
  std::vector<Parameter*> parameters() {
    auto out = nets_.parameters();
    for (auto* p : dgat_.parameters()) out.push_back(p);
    return out;
  }

 private:
  AgentId id_;
  DgatStack dgat_;
  AgentNets nets_;
  AdamState opt_;
};

struct LossReport {
  Real policy = 0.0;
  Real critic = 0.0;
  Real consensus = 0.0;
  Real entropy = 0.0;
  Real clip_fraction = 0.0;
  Real grad_norm = 0.0;
  std::size_t steps = 0;

  void accumulate(const LossReport& o) {
    policy += o.policy;
    critic += o.critic;
    consensus += o.consensus;
    entropy += o.entropy;
    clip_fraction += o.clip_fraction;
    grad_norm += o.grad_norm;
    steps += o.steps;
  }
  /// Per-step means of an accumulated report.
  LossReport mean() const {
    LossReport r = *this;
    if (steps == 0) return r;
    const Real k = static_cast<Real>(steps);
    r.policy /= k;
    r.critic /= k;
    r.consensus /= k;
    r.entropy /= k;
    r.clip_fraction /= k;
    r.grad_norm /= k;
    return r;
  }
};

/// Minibatch data for one agent's update step.
struct StepBatch {
  PolicyBatch policy;        // advantages already normalized
  std::vector<Real> returns;
  DenseMatrix obs;           // B x p
  DenseMatrix critic_input;  // B x c when the critic reads its own input; empty otherwise
};

/// One combined step L_ppo + value_coef L_critic (+ L_consensus) for an agent
/// whose o_hat for the minibatch is already on tape `t`. The optimizer step
/// covers theta, phi and psi together.
inline LossReport local_step(Agent& a, Tape& t, Var o_hat, const StepBatch& mb, const PpoConfig& cfg,
                             Var consensus = {}) {
  Var obs = t.constant(mb.obs);
  Var o_tilde = t.concat_cols(obs, o_hat);
  PolicyLossParts pl = ppo_policy_loss(t, a.nets().logits(t, o_tilde), mb.policy, cfg);
  Var critic_in = mb.critic_input.size() ? t.constant(mb.critic_input) : o_tilde;
  Var vl = critic_loss(t, a.nets().value(t, critic_in), mb.returns, cfg);
  Var total = t.add(pl.loss, t.scale(vl, cfg.value_coef));
  LossReport rep;
  if (consensus.valid()) {
    total = t.add(total, consensus);
    rep.consensus = t.scalar(consensus);
  }
  if (!std::isfinite(t.scalar(total))) throw NumericError("agent " + std::to_string(a.id()) + ": non-finite loss");
  a.optimizer().zero_grad();
  t.backward(total);
  a.optimizer().step();
  rep.policy = t.scalar(pl.loss);
  rep.critic = t.scalar(vl);
  rep.entropy = pl.mean_entropy;
  rep.clip_fraction = pl.clip_fraction;
  rep.grad_norm = a.optimizer().last_grad_norm();
  rep.steps = 1;
  return rep;
}

/// Split [0, n) into `parts` contiguous chunks of a permutation; sizes differ
/// by at most one.
inline std::vector<std::vector<std::uint32_t>> minibatch_indices(std::size_t n, std::size_t parts, Rng& rng) {
  std::vector<std::uint32_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0u);
  shuffle(std::span(perm), rng);
  parts = std::max<std::size_t>(1, std::min(parts, n));
  std::vector<std::vector<std::uint32_t>> out(parts);
  for (std::size_t p = 0, begin = 0; p < parts; ++p) {
    const std::size_t len = n / parts + (p < n % parts ? 1 : 0);
    out[p].assign(perm.begin() + static_cast<std::ptrdiff_t>(begin),
                  perm.begin() + static_cast<std::ptrdiff_t>(begin + len));
    begin += len;
  }
  return out;
}

inline DenseMatrix gather_rows(const DenseMatrix& m, std::span<const std::uint32_t> rows) {
  DenseMatrix out(rows.size(), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto src = m.row_span(rows[r]);
    std::copy(src.begin(), src.end(), out.row_span(r).begin());
  }
  return out;
}

/// Builds a minibatch from a buffer whose GAE has been computed.
inline StepBatch make_step_batch(const RolloutBuffer& buf, std::span<const std::uint32_t> rows,
                                 const DenseMatrix* critic_inputs = nullptr) {
  StepBatch mb;
  std::vector<Real> adv;
  for (std::uint32_t k : rows) {
    mb.policy.actions.push_back(buf.actions()[k]);
    mb.policy.old_log_probs.push_back(buf.log_probs()[k]);
    adv.push_back(buf.advantages()[k]);
    mb.returns.push_back(buf.returns()[k]);
  }
  mb.policy.advantages = normalize_advantages(adv);
  mb.obs = gather_rows(buf.obs(), rows);
  if (critic_inputs != nullptr) mb.critic_input = gather_rows(*critic_inputs, rows);
  return mb;
}

/// PPO epochs over the agent's own buffer with no neighbors: its D-GAT runs on
/// the single-node graph {i}. Used for communication-free agents and for
/// exercising the update in isolation.
inline LossReport local_update(Agent& a, RolloutBuffer& buf, const PpoConfig& cfg, Rng& rng,
                               const DenseMatrix* critic_inputs = nullptr) {
  buf.compute_gae(cfg.gamma, cfg.lambda);
  LossReport total;
  const CommGraph solo(1);
  DgatOptions opt;
  opt.hops = a.dgat().hops();
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    for (const auto& rows : minibatch_indices(buf.size(), cfg.num_minibatches, rng)) {
      StepBatch mb = make_step_batch(buf, rows, critic_inputs);
      std::vector<const CommGraph*> graphs(rows.size(), &solo);
      Tape t;
      Tape* tp[1] = {&t};
      DgatStack* sp[1] = {&a.dgat()};
      const DenseMatrix* op[1] = {&mb.obs};
      MultihopResult r = multihop_forward(sp, tp, op, graphs, opt);
      total.accumulate(local_step(a, t, r.h[0].back(), mb, cfg));
    }
  }
  return total.mean();
}

}  // namespace dgmarl
