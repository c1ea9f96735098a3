#include <gtest/gtest.h>

#include <memory>

#include "dgmarl/agent.hpp"
#include "support/oracles.hpp"

using namespace dgmarl;

namespace {

AgentConfig small_config(std::size_t obs = 4, std::size_t actions = 3) {
  AgentConfig c;
  c.obs_dim = obs;
  c.num_actions = actions;
  c.feature_dim = 3;
  c.attn_dim = 3;
  c.hops = 1;
  c.hidden = 8;
  return c;
}

void zero_policy_head(AgentNets& nets) {
  auto ps = nets.policy().parameters();
  ps[ps.size() - 2]->value().fill(0.0);
  ps[ps.size() - 1]->value().fill(0.0);
}

RolloutBuffer synthetic_buffer(std::size_t segments, std::size_t len, std::size_t obs, std::size_t feat,
                               std::size_t actions, Rng& rng) {
  RolloutBuffer buf(segments, len, obs, feat);
  std::vector<Real> o(obs), h(feat, 0.0);
  for (std::size_t s = 0; s < segments; ++s)
    for (std::size_t t = 0; t < len; ++t) {
      for (Real& v : o) v = uniform(rng, -1, 1);
      const std::size_t a = static_cast<std::size_t>(uniform01(rng) * actions);
      buf.record(s, t, o, h, a, std::log(1.0 / actions), uniform(rng, -1, 1), uniform(rng, -1, 1), t + 1 == len);
    }
  return buf;
}

}  // namespace

TEST(Act, UniformLogits) {
  Rng rng = make_rng(1);
  AgentNets nets(0, 3, 2, 4, 8, rng);
  zero_policy_head(nets);
  DenseVector x{0.1, 0.2, 0.3, 0.4, 0.5};
  for (Real p : action_probabilities(nets, x)) EXPECT_DOUBLE_EQ(p, 0.25);
  auto r = act(nets, x, rng);
  EXPECT_NEAR(r.log_prob, std::log(0.25), 1e-15);
  EXPECT_LT(r.action, 4u);
}

TEST(Act, DegenerateLogitPicksThatAction) {
  Rng rng = make_rng(2);
  AgentNets nets(0, 2, 1, 3, 4, rng);
  zero_policy_head(nets);
  nets.policy().parameters().back()->value()(0, 2) = 1e6;
  DenseVector x{0.3, -0.3, 0.1};
  for (int k = 0; k < 100; ++k) {
    auto r = act(nets, x, rng);
    EXPECT_EQ(r.action, 2u);
    EXPECT_NEAR(r.log_prob, 0.0, 1e-12);
  }
  EXPECT_EQ(act(nets, x, rng, true).action, 2u);
}

TEST(Act, EmpiricalFrequenciesMatchSoftmax) {
  Rng rng = make_rng(3);
  AgentNets nets(0, 2, 2, 5, 8, rng);
  zero_policy_head(nets);
  auto& b = nets.policy().parameters().back()->value();
  b = DenseMatrix{{0.5, -1.0, 1.2, 0.0, 0.3}};
  DenseVector x{0.1, 0.2, -0.3, 0.4};
  auto probs = action_probabilities(nets, x);
  const int samples = 100000;
  std::vector<double> counts(5, 0.0);
  // Batched draws with independent per-row streams.
  const std::size_t batch = 1000;
  DenseMatrix rows(batch, 4);
  for (std::size_t r = 0; r < batch; ++r)
    for (std::size_t c = 0; c < 4; ++c) rows(r, c) = x[c];
  std::vector<Rng> streams;
  for (std::size_t r = 0; r < batch; ++r) streams.push_back(make_rng(4, r));
  std::vector<Rng*> ptrs;
  for (auto& s : streams) ptrs.push_back(&s);
  for (int rep = 0; rep < samples / static_cast<int>(batch); ++rep)
    for (const auto& a : act_batch(nets, rows, rows, ptrs)) counts[a.action] += 1.0;
  double chi2 = 0.0;
  for (std::size_t k = 0; k < 5; ++k) {
    const double expected = probs[k] * samples;
    EXPECT_NEAR(counts[k] / samples, probs[k], 0.01);
    chi2 += (counts[k] - expected) * (counts[k] - expected) / expected;
  }
  // 4 degrees of freedom: P(chi2 > 13.28) = 0.01.
  EXPECT_LT(chi2, 13.28);
}

TEST(Act, InputDimMismatchIsConfigError) {
  Rng rng = make_rng(5);
  AgentNets nets(0, 3, 2, 4, 8, rng);
  EXPECT_THROW(act(nets, DenseVector(4), rng), ConfigError);
}

TEST(Gae, LambdaZeroIsTdResidual) {
  std::vector<Real> r{1.0, -0.5, 2.0}, v{0.3, 0.1, -0.2};
  std::vector<std::uint8_t> d{0, 0, 0};
  auto g = gae(r, v, d, 0.7, 0.9, 0.0);
  EXPECT_DOUBLE_EQ(g.advantages[0], 1.0 + 0.9 * 0.1 - 0.3);
  EXPECT_DOUBLE_EQ(g.advantages[1], -0.5 + 0.9 * -0.2 - 0.1);
  EXPECT_DOUBLE_EQ(g.advantages[2], 2.0 + 0.9 * 0.7 + 0.2);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(g.returns[k], g.advantages[k] + v[k]);
}

TEST(Gae, UndiscountedReturnToGo) {
  std::vector<Real> r{1, 2, 3, 4}, v(4, 0.0);
  std::vector<std::uint8_t> d{0, 0, 0, 1};
  // gamma must be < 1 in the config, but the estimator itself accepts 1.
  auto g = gae(r, v, d, 123.0, 1.0, 1.0);
  EXPECT_EQ(g.advantages, (std::vector<Real>{10, 9, 7, 4}));
}

TEST(Gae, EmptyIsUsageError) {
  EXPECT_THROW(gae({}, {}, {}, 0.0, 0.9, 0.9), UsageError);
  RolloutBuffer empty;
  EXPECT_THROW(empty.compute_gae(0.9, 0.9), UsageError);
}

TEST(Gae, MatchesBruteForceOracle) {
  Rng rng = make_rng(6);
  for (int ep = 0; ep < 1000; ++ep) {
    const std::size_t len = 1 + static_cast<std::size_t>(uniform01(rng) * 10);
    const Real gamma = uniform01(rng), lambda = uniform01(rng);
    std::vector<Real> r(len), v(len);
    std::vector<std::uint8_t> d(len);
    std::vector<bool> db(len);
    for (std::size_t t = 0; t < len; ++t) {
      r[t] = uniform(rng, -2, 2);
      v[t] = uniform(rng, -2, 2);
      d[t] = uniform01(rng) < 0.2;
      db[t] = d[t];
    }
    const Real boot = uniform(rng, -2, 2);
    auto g = gae(r, v, d, boot, gamma, lambda);
    std::vector<Real> vals = v;
    vals.push_back(boot);
    auto ref = oracle::gae_bruteforce(r, vals, db, gamma, lambda);
    for (std::size_t t = 0; t < len; ++t) ASSERT_NEAR(g.advantages[t], ref[t], 1e-12);
  }
}

TEST(PpoPolicyLoss, UnitRatio) {
  PpoConfig cfg;
  Tape t;
  DenseMatrix logits{{0.1, 0.5, -0.2}, {1.0, 0.0, 0.3}};
  Var l = t.constant(logits);
  Var lp = t.log_softmax_rows(l);
  auto lpv = t.value(lp);
  PolicyBatch mb{{2, 0}, {lpv[2], lpv[3]}, {0.7, -1.3}};
  auto parts = ppo_policy_loss(t, l, mb, cfg);
  EXPECT_NEAR(t.scalar(parts.loss), -(0.7 - 1.3) / 2.0 - cfg.entropy_coef * parts.mean_entropy, 1e-14);
  EXPECT_EQ(parts.clip_fraction, 0.0);
}

namespace {

// One-row loss with a chosen ratio r = exp(new - old) for action 0 of logits z.
Real one_row_loss(Real ratio, Real adv, Real eps, Real* grad = nullptr) {
  Parameter z("z", 1, 2);
  z.value() = DenseMatrix{{0.3, -0.4}};
  Tape probe;
  const Real lp0 = probe.value(probe.log_softmax_rows(probe.param(z)))[0];
  PpoConfig cfg;
  cfg.clip = eps;
  cfg.entropy_coef = 0.0;
  PolicyBatch mb{{0}, {lp0 - std::log(ratio)}, {adv}};
  Tape t;
  Var loss = ppo_policy_loss(t, t.param(z), mb, cfg).loss;
  if (grad) {
    z.zero_grad();
    t.backward(loss);
    *grad = std::abs(z.grad()(0, 0)) + std::abs(z.grad()(0, 1));
  }
  return t.scalar(loss);
}

}  // namespace

TEST(PpoPolicyLoss, ClipCases) {
  Real g = -1.0;
  // r = 2, A = 1: min(2, 1.05) = 1.05.
  EXPECT_NEAR(one_row_loss(2.0, 1.0, 0.05, &g), -1.05, 1e-12);
  EXPECT_EQ(g, 0.0);
  // r = 0.5, A = -1: min(-0.5, -0.95) = -0.95.
  EXPECT_NEAR(one_row_loss(0.5, -1.0, 0.05, &g), 0.95, 1e-12);
  EXPECT_EQ(g, 0.0);
  // Unclipped branch selected: r = 2, A = -1 gives min(-2, -1.05) = -2 with gradient.
  EXPECT_NEAR(one_row_loss(2.0, -1.0, 0.05, &g), 2.0, 1e-12);
  EXPECT_GT(g, 0.0);
}

TEST(PpoPolicyLoss, ClippedRegionHasZeroFiniteDifferenceGradient) {
  Rng rng = make_rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const Real eps = uniform(rng, 0.05, 0.3);
    const bool high = trial % 2 == 0;
    const Real ratio = high ? uniform(rng, 1.0 + eps + 0.05, 3.0) : uniform(rng, 0.1, 1.0 - eps - 0.05);
    const Real adv = high ? uniform(rng, 0.1, 2.0) : -uniform(rng, 0.1, 2.0);
    Real g = -1.0;
    const Real base = one_row_loss(ratio, adv, eps, &g);
    EXPECT_EQ(g, 0.0);
    // Nudging the ratio within the clipped region leaves the loss unchanged.
    EXPECT_NEAR(one_row_loss(ratio * (1.0 + 1e-5), adv, eps), base, 1e-15);
  }
}

TEST(PpoPolicyLoss, NonFiniteRatioIsNumericError) {
  Tape t;
  Var l = t.constant(DenseMatrix{{0.0, 0.0}});
  PolicyBatch mb{{0}, {-1e6}, {1.0}};
  EXPECT_THROW(ppo_policy_loss(t, l, mb, PpoConfig{}), NumericError);
}

TEST(PpoPolicyLoss, GradientMatchesFiniteDifferences) {
  Rng rng = make_rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = 1 + trial % 6, in = 2 + trial % 4, actions = 2 + trial % 4;
    AgentNets nets(0, in, 0 + 1, actions, 6, rng);
    DenseMatrix x(b, in + 1);
    for (Real& v : x.span()) v = uniform(rng, -1, 1);
    PpoConfig cfg;
    cfg.clip = 0.2;
    cfg.entropy_coef = 0.01;
    PolicyBatch mb;
    for (std::size_t r = 0; r < b; ++r) {
      mb.actions.push_back(static_cast<std::uint32_t>(uniform01(rng) * actions));
      // Old log-probs around the current ones so both branches occur; values
      // stay away from the clip kinks so central differences are valid.
      mb.old_log_probs.push_back(std::log(1.0 / actions) + uniform(rng, -0.1, 0.1));
      mb.advantages.push_back(uniform(rng, -2, 2));
    }
    auto params = nets.policy().parameters();
    auto build = [&](Tape& t) { return ppo_policy_loss(t, nets.logits(t, t.constant(x)), mb, cfg).loss; };
    auto rep = check_gradients(
        params,
        [&] {
          Tape t;
          return t.scalar(build(t));
        },
        [&] {
          for (auto* p : params) p->zero_grad();
          Tape t;
          t.backward(build(t));
        });
    EXPECT_LT(rep.max_rel_error, 1e-4) << rep.worst_param;
  }
}

TEST(CriticLoss, Examples) {
  PpoConfig sq;
  sq.huber = false;
  Tape t;
  EXPECT_EQ(t.scalar(critic_loss(t, t.constant(DenseMatrix{{0.4}, {-1.0}}), std::vector<Real>{0.4, -1.0}, sq)), 0.0);
  EXPECT_EQ(t.scalar(critic_loss(t, t.constant(DenseMatrix{{0.0}}), std::vector<Real>{1.0}, sq)), 1.0);
  PpoConfig hub;
  EXPECT_DOUBLE_EQ(t.scalar(critic_loss(t, t.constant(DenseMatrix{{0.0}}), std::vector<Real>{20.0}, hub)), 150.0);
}

TEST(CriticLoss, GradientMatchesFiniteDifferences) {
  Rng rng = make_rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = 1 + trial % 5, in = 2 + trial % 5;
    AgentNets nets(0, in, 1, 2, 6, rng);
    DenseMatrix x(b, in + 1);
    for (Real& v : x.span()) v = uniform(rng, -1, 1);
    std::vector<Real> targets(b);
    for (Real& v : targets) v = uniform(rng, -25, 25);
    PpoConfig cfg;
    cfg.huber = trial % 2 == 0;
    auto params = nets.value_net().parameters();
    auto build = [&](Tape& t) { return critic_loss(t, nets.value(t, t.constant(x)), targets, cfg); };
    auto rep = check_gradients(
        params,
        [&] {
          Tape t;
          return t.scalar(build(t));
        },
        [&] {
          for (auto* p : params) p->zero_grad();
          Tape t;
          t.backward(build(t));
        });
    EXPECT_LT(rep.max_rel_error, 1e-4) << rep.worst_param;
  }
}

TEST(PpoConfig, Validation) {
  PpoConfig c;
  EXPECT_NO_THROW(c.validate());
  c.clip = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = PpoConfig{};
  c.gamma = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = PpoConfig{};
  c.lambda = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(LocalUpdate, ZeroLearningRateLeavesParametersUnchanged) {
  Rng rng = make_rng(11);
  PpoConfig cfg;
  cfg.lr = 0.0;
  cfg.epochs = 2;
  Agent a(0, small_config(), cfg, rng);
  std::vector<DenseMatrix> before;
  for (auto* p : a.parameters()) before.push_back(p->value());
  auto buf = synthetic_buffer(2, 8, 4, 3, 3, rng);
  LossReport rep = local_update(a, buf, cfg, rng);
  auto ps = a.parameters();
  for (std::size_t k = 0; k < ps.size(); ++k) EXPECT_EQ(ps[k]->value(), before[k]);
  EXPECT_EQ(rep.steps, 2u * cfg.num_minibatches);
  EXPECT_TRUE(std::isfinite(rep.policy));
  EXPECT_GT(rep.critic, 0.0);
  EXPECT_GT(rep.entropy, 0.0);
}

TEST(LocalUpdate, OnlyEntropyDrivesUpdateWithoutSignal) {
  Rng rng = make_rng(12);
  PpoConfig cfg;
  cfg.epochs = 1;
  cfg.num_minibatches = 1;
  cfg.consensus_alpha = 0.0;
  Agent a(0, small_config(), cfg, rng);
  // Critic fit exactly: zero value head, zero rewards, zero values -> zero
  // advantages and zero return targets.
  auto vps = a.nets().value_net().parameters();
  vps[vps.size() - 2]->value().fill(0.0);
  vps[vps.size() - 1]->value().fill(0.0);
  RolloutBuffer buf(1, 6, 4, 3);
  std::vector<Real> o(4), h(3, 0.0);
  for (std::size_t t = 0; t < 6; ++t) {
    for (Real& v : o) v = uniform(rng, -1, 1);
    buf.record(0, t, o, h, t % 3, std::log(1.0 / 3.0), 0.0, 0.0, t == 5);
  }
  buf.compute_gae(cfg.gamma, cfg.lambda);
  StepBatch mb = make_step_batch(buf, std::vector<std::uint32_t>{0, 1, 2, 3, 4, 5});
  for (Real adv : mb.policy.advantages) EXPECT_EQ(adv, 0.0);
  Tape t;
  Var o_hat = a.dgat().encode(t, t.constant(mb.obs));
  Var logits = a.nets().logits(t, t.concat_cols(t.constant(mb.obs), o_hat));
  auto parts = ppo_policy_loss(t, logits, mb.policy, cfg);
  for (auto* p : a.parameters()) p->zero_grad();
  t.backward(parts.loss);
  // The surrogate vanishes, so the policy gradient is exactly the entropy gradient.
  std::vector<DenseMatrix> g_total;
  for (auto* p : a.nets().policy().parameters()) g_total.push_back(p->grad());
  Tape u;
  Var o_hat2 = a.dgat().encode(u, u.constant(mb.obs));
  Var lp = u.log_softmax_rows(a.nets().logits(u, u.concat_cols(u.constant(mb.obs), o_hat2)));
  Var ent = u.mean(u.scale(u.row_sum(u.mul(u.exp(lp), lp)), -1.0));
  for (auto* p : a.parameters()) p->zero_grad();
  u.backward(u.scale(ent, -cfg.entropy_coef));
  auto pps = a.nets().policy().parameters();
  Real norm = 0.0;
  for (std::size_t k = 0; k < pps.size(); ++k)
    for (std::size_t e = 0; e < pps[k]->size(); ++e) {
      EXPECT_NEAR(g_total[k].data()[e], pps[k]->grad().data()[e], 1e-15);
      norm += std::abs(pps[k]->grad().data()[e]);
    }
  EXPECT_GT(norm, 0.0);
  for (auto* p : vps) EXPECT_EQ(p->grad(), DenseMatrix(p->value().rows(), p->value().cols()));
}

TEST(LocalUpdate, LossDecreasesOnFrozenMinibatch) {
  Rng rng = make_rng(13);
  PpoConfig cfg;
  cfg.lr = 3e-3;
  Agent a(0, small_config(), cfg, rng);
  auto buf = synthetic_buffer(1, 32, 4, 3, 3, rng);
  buf.compute_gae(cfg.gamma, cfg.lambda);
  std::vector<std::uint32_t> all(32);
  std::iota(all.begin(), all.end(), 0u);
  StepBatch mb = make_step_batch(buf, all);
  auto total_loss = [&](bool step) {
    Tape t;
    Var o_hat = a.dgat().encode(t, t.constant(mb.obs));
    if (step) return local_step(a, t, o_hat, mb, cfg).critic;
    Var o_tilde = t.concat_cols(t.constant(mb.obs), o_hat);
    return t.scalar(ppo_policy_loss(t, a.nets().logits(t, o_tilde), mb.policy, cfg).loss) +
           t.scalar(critic_loss(t, a.nets().value(t, o_tilde), mb.returns, cfg));
  };
  const Real start = total_loss(false);
  for (int e = 0; e < 10; ++e) total_loss(true);
  EXPECT_LT(total_loss(false), start);
}

TEST(LocalUpdate, TouchesOnlyItsOwnParameters) {
  Rng rng = make_rng(14);
  PpoConfig cfg;
  cfg.epochs = 1;
  auto a = std::make_unique<Agent>(0, small_config(), cfg, rng);
  auto b = std::make_unique<Agent>(1, small_config(), cfg, rng);
  std::vector<DenseMatrix> before;
  for (auto* p : b->parameters()) before.push_back(p->value());
  auto buf = synthetic_buffer(1, 8, 4, 3, 3, rng);
  local_update(*a, buf, cfg, rng);
  auto ps = b->parameters();
  for (std::size_t k = 0; k < ps.size(); ++k) EXPECT_EQ(ps[k]->value(), before[k]);
}

TEST(Minibatches, PartitionThePermutation) {
  Rng rng = make_rng(15);
  auto mbs = minibatch_indices(10, 3, rng);
  ASSERT_EQ(mbs.size(), 3u);
  std::vector<int> seen(10, 0);
  for (const auto& m : mbs) {
    EXPECT_GE(m.size(), 3u);
    for (auto k : m) ++seen[k];
  }
  for (int s : seen) EXPECT_EQ(s, 1);
}

TEST(RolloutBuffer, GaeRespectsSegments) {
  RolloutBuffer buf(2, 3, 1, 1);
  std::vector<Real> o{0.0}, h{0.0};
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t t = 0; t < 3; ++t) buf.record(s, t, o, h, 0, 0.0, 0.0, 1.0, false);
  buf.set_bootstrap(0, 10.0);
  buf.set_bootstrap(1, 0.0);
  buf.compute_gae(0.5, 1.0);
  EXPECT_DOUBLE_EQ(buf.advantages()[2], 1.0 + 0.5 * 10.0);
  EXPECT_DOUBLE_EQ(buf.advantages()[5], 1.0);
  EXPECT_DOUBLE_EQ(buf.advantages()[3], 1.0 + 0.5 + 0.25);
}
