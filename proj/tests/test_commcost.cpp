#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "dgmarl/commcost.hpp"
#include "dgmarl/rng.hpp"
#include "support/oracles.hpp"

using namespace dgmarl;

namespace {

CommGraph random_connected(std::size_t n, Rng& rng) {
  for (;;) {
    std::vector<std::pair<AgentId, AgentId>> e;
    for (AgentId i = 0; i < n; ++i)
      for (AgentId j = i + 1; j < n; ++j)
        if (uniform01(rng) < 0.35) e.emplace_back(i, j);
    CommGraph g(n, e);
    if (g.is_connected()) return g;
  }
}

std::vector<std::vector<bool>> adjacency(const CommGraph& g) {
  std::vector<std::vector<bool>> a(g.size(), std::vector<bool>(g.size(), false));
  for (auto [i, j] : g.edges()) a[i][j] = a[j][i] = true;
  return a;
}

CostParams line(std::size_t n, Real spacing, Real alpha) {
  SweepPreset s;
  s.spacing = spacing;
  s.path_loss = alpha;
  return line_params(s, n, 1);
}

}  // namespace

TEST(CtdeCost, Examples) {
  EXPECT_EQ(ctde_train_cost(homogeneous_params(CommGraph(4), 3, 1, 0, 0, 1)), 16.0);
  EXPECT_EQ(ctde_train_cost(homogeneous_params(CommGraph(1), 5, 2, 0, 0, 1)), 7.0);
  const Real a = ctde_train_cost(homogeneous_params(CommGraph(7), 3, 2, 0, 0, 1));
  const Real b = ctde_train_cost(homogeneous_params(CommGraph(14), 3, 2, 0, 0, 1));
  EXPECT_EQ(b, 2.0 * a);
}

TEST(CtdeMultihopCost, Examples) {
  CostParams p = homogeneous_params(CommGraph::chain(4), 1, 0, 0, 0, 1);
  p.center_hops = worst_case_line_hops(4);
  EXPECT_EQ(ctde_multihop_cost(p), 6.0);
  p = homogeneous_params(CommGraph(5), 3, 2, 0, 0, 1);
  p.center_hops.assign(5, 1);
  EXPECT_EQ(ctde_multihop_cost(p), ctde_train_cost(p));
  p.center_hops.clear();
  EXPECT_THROW(ctde_multihop_cost(p), ConfigError);

  std::vector<double> ns, cs;
  for (std::size_t n = 10; n <= 100; n += 5) {
    CostParams q = homogeneous_params(CommGraph::chain(n), 2, 1, 0, 0, 1);
    q.center_hops = worst_case_line_hops(n);
    ns.push_back(static_cast<double>(n));
    cs.push_back(ctde_multihop_cost(q));
    EXPECT_EQ(cs.back(), 3.0 * static_cast<double>(n * (n - 1) / 2));
  }
  EXPECT_NEAR(oracle::fit_slope(ns, cs), 2.0, 0.05);
}

TEST(DgCost, Examples) {
  EXPECT_EQ(dg_mp_cost(homogeneous_params(CommGraph(3), 1, 1, 8, 0, 1)), 24.0);
  EXPECT_EQ(dg_mp_cost(homogeneous_params(CommGraph::ring(5), 1, 1, 8, 0, 0)), 0.0);
  EXPECT_EQ(dg_mp_cost(homogeneous_params(CommGraph::ring(8), 1, 1, 16, 0, 4)), 1536.0);
  EXPECT_EQ(dg_param_cost(homogeneous_params(CommGraph::complete(3), 1, 1, 0, 10, 1)), 90.0);
  EXPECT_EQ(dg_param_cost(homogeneous_params(CommGraph::complete(3), 1, 1, 0, 0, 1)), 0.0);
  const CostParams p = homogeneous_params(CommGraph::ring(6), 1, 1, 5, 7, 3);
  EXPECT_EQ(dg_total_cost(p), dg_mp_cost(p) + dg_param_cost(p));
  EXPECT_EQ(dg_total_cost(homogeneous_params(CommGraph::ring(6), 1, 1, 5, 0, 0)), 0.0);
  const CostParams q = homogeneous_params(CommGraph::ring(6), 1, 1, 5, 21, 3);
  EXPECT_EQ(dg_param_cost(q), 3.0 * dg_param_cost(p));
}

TEST(CostOracle, ClosedFormsMatchEventCounts) {
  Rng rng = make_rng(101);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(uniform01(rng) * 12);
    const CommGraph g = random_connected(n, rng);
    const auto adj = adjacency(g);
    std::vector<std::int64_t> obs(n), act(n);
    CostParams p = homogeneous_params(g, 0, 0, 1 + trial % 9, trial % 13, trial % 4);
    for (std::size_t i = 0; i < n; ++i) {
      obs[i] = 1 + static_cast<std::int64_t>(uniform01(rng) * 20);
      act[i] = 1 + static_cast<std::int64_t>(uniform01(rng) * 5);
      p.obs_sizes[i] = static_cast<std::size_t>(obs[i]);
      p.action_sizes[i] = static_cast<std::size_t>(act[i]);
    }
    const std::size_t center = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n));
    p.center_hops = g.hop_distances(center);

    EXPECT_EQ(static_cast<std::int64_t>(ctde_train_cost(p)), oracle::sim_ctde(obs, act));
    EXPECT_EQ(static_cast<std::int64_t>(ctde_multihop_cost(p)), oracle::sim_ctde_multihop(adj, center, obs, act));
    const auto feat = static_cast<std::int64_t>(p.feature_size), psi = static_cast<std::int64_t>(p.psi_size);
    const auto hops = static_cast<std::int64_t>(p.hops);
    EXPECT_EQ(static_cast<std::int64_t>(dg_mp_cost(p)), oracle::sim_dg_messages(adj, hops, feat));
    EXPECT_EQ(static_cast<std::int64_t>(dg_param_cost(p)), oracle::sim_dg_params(adj, psi));
    EXPECT_EQ(static_cast<std::int64_t>(dg_total_cost(p)),
              oracle::sim_dg_messages(adj, hops, feat) + oracle::sim_dg_params(adj, psi));
  }
}

TEST(CostHomogeneity, DegreeOneInSizes) {
  Rng rng = make_rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const CommGraph g = random_connected(2 + trial % 8, rng);
    CostParams p = homogeneous_params(g, 3, 2, 5, 11, 2);
    p.center_hops = g.hop_distances(0);
    CostParams q = homogeneous_params(g, 9, 6, 15, 33, 2);
    q.center_hops = p.center_hops;
    EXPECT_EQ(ctde_train_cost(q), 3.0 * ctde_train_cost(p));
    EXPECT_EQ(ctde_multihop_cost(q), 3.0 * ctde_multihop_cost(p));
    EXPECT_EQ(dg_total_cost(q), 3.0 * dg_total_cost(p));
  }
}

TEST(Energy, TxExamples) {
  EXPECT_EQ(tx_energy(8, 2, 2), 32.0);
  for (Real a : {2.0, 2.7, 4.0}) EXPECT_EQ(tx_energy(13, 1, a), 13.0);
  EXPECT_EQ(tx_energy(13, 0, 3), 0.0);
  EXPECT_THROW(tx_energy(1, 1, 1.5), ConfigError);
  EXPECT_THROW(tx_energy(1, 1, 4.5), ConfigError);
  EXPECT_THROW(tx_energy(-1, 1, 2), ConfigError);
}

TEST(Energy, CtdeExamples) {
  CostParams p = homogeneous_params(CommGraph(2), 1, 1, 1, 1, 1);
  p.agent_bits = {1, 1};
  p.center_distances = {0, 0};
  EXPECT_EQ(ctde_energy(p), 0.0);
  p.center_distances = {1, 2};
  EXPECT_EQ(ctde_energy(p), 5.0);
  p.center_distances.clear();
  EXPECT_THROW(ctde_energy(p), ConfigError);
}

TEST(Energy, DgExamples) {
  CostParams p = homogeneous_params(CommGraph(3), 1, 1, 1, 1, 1);
  p.distances = DenseMatrix(3, 3, 1.0);
  EXPECT_EQ(dg_energy(p), 0.0);

  const Real r = 1.5;
  CostParams e = homogeneous_params(CommGraph::chain(2), 1, 1, 1, 1, 1);
  e.distances = DenseMatrix{{0, r}, {r, 0}};
  e.comm_radius = r;
  e.path_loss = 3.0;
  EXPECT_DOUBLE_EQ(dg_energy(e), 2.0 * std::pow(r, 3.0));
  e.count_edges_once = true;
  EXPECT_DOUBLE_EQ(dg_energy(e), std::pow(r, 3.0));
  e.comm_radius = 1.0;
  EXPECT_THROW(dg_energy(e), ConfigError);
  e.distances.reset();
  EXPECT_THROW(dg_energy(e), ConfigError);
}

TEST(Energy, PermutationInvariant) {
  Rng rng = make_rng(19);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 2 + trial % 9;
    const CommGraph g = random_connected(n, rng);
    std::vector<Point2> pts(n);
    for (auto& q : pts) q = {uniform(rng, 0, 5), uniform(rng, 0, 5)};
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    shuffle(std::span<std::size_t>(perm), rng);

    auto build = [&](bool permuted) {
      std::vector<std::pair<AgentId, AgentId>> e;
      for (auto [a, b] : g.edges()) e.emplace_back(permuted ? perm[a] : a, permuted ? perm[b] : b);
      CostParams p = homogeneous_params(CommGraph(n, e), 1, 1, 1, 1, 1);
      DenseMatrix d(n, n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t a = permuted ? perm[i] : i, b = permuted ? perm[j] : j;
          d(a, b) = distance(pts[i], pts[j]);
        }
      p.distances = d;
      p.message_bits = 7;
      p.path_loss = 2.5;
      return dg_energy(p);
    };
    EXPECT_NEAR(build(true), build(false), 1e-9 * std::max(1.0, build(false)));
  }
}

TEST(Energy, ScalingSlopes) {
  std::vector<double> ns, es;
  for (std::size_t n = 8; n <= 128; n += 8) {
    ns.push_back(static_cast<double>(n));
    es.push_back(dg_energy(line(n, 1.3, 3.0)));
  }
  EXPECT_NEAR(oracle::fit_slope(ns, es), 1.0, 0.05);
  for (Real alpha : {2.0, 4.0}) {
    std::vector<double> ds, cs;
    for (Real diam = 1.0; diam <= 64.0; diam *= 2.0) {
      ds.push_back(diam);
      cs.push_back(ctde_energy(line(10, diam / 9.0, alpha)));
    }
    EXPECT_NEAR(oracle::fit_slope(ds, cs), alpha, 0.1);
  }
}

TEST(Sweep, SmallestCaseAndShape) {
  SweepPreset s;
  s.n_min = 2;
  s.n_max = 2;
  auto rows = cost_sweep(s);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[2].method, "dg");
  EXPECT_EQ(rows[2].hops, 1u);
  for (const auto& r : rows) EXPECT_GT(r.cost, 0.0);
  std::ostringstream os;
  write_sweep_csv(os, rows);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "method,N,K,cost,energy");
  s.n_min = 1;
  EXPECT_THROW(cost_sweep(s), ConfigError);
}

TEST(Sweep, SlopesOrderingAndMonotone) {
  const auto rows = cost_sweep(SweepPreset{});
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> curves;
  for (const auto& r : rows) {
    curves[r.method].first.push_back(static_cast<double>(r.n));
    curves[r.method].second.push_back(r.cost);
  }
  EXPECT_NEAR(oracle::fit_slope(curves["ctde"].first, curves["ctde"].second), 1.0, 0.05);
  EXPECT_NEAR(oracle::fit_slope(curves["ctde_multihop"].first, curves["ctde_multihop"].second), 2.0, 0.05);
  EXPECT_NEAR(oracle::fit_slope(curves["dg"].first, curves["dg"].second), 2.0, 0.05);
  for (auto& [name, c] : curves) {
    for (std::size_t k = 1; k < c.second.size(); ++k) EXPECT_GT(c.second[k], c.second[k - 1]) << name;
  }
  for (std::size_t k = 0; k < curves["dg"].second.size(); ++k) {
    EXPECT_LT(curves["dg"].second[k], curves["ctde_multihop"].second[k]);
  }
  EXPECT_NEAR(loglog_slope(curves["dg"].first, curves["dg"].second),
              oracle::fit_slope(curves["dg"].first, curves["dg"].second), 1e-9);
}
