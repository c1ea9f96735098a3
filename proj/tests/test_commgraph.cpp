#include <gtest/gtest.h>

#include <sstream>

#include "dgmarl/commgraph.hpp"
#include "dgmarl/rng.hpp"
#include "support/oracles.hpp"

using namespace dgmarl;

namespace {

std::vector<std::vector<bool>> adjacency(const CommGraph& g) {
  std::vector<std::vector<bool>> a(g.size(), std::vector<bool>(g.size(), false));
  for (auto [i, j] : g.edges()) a[i][j] = a[j][i] = true;
  return a;
}

CommGraph random_graph(std::size_t n, double p, Rng& rng) {
  std::vector<std::pair<AgentId, AgentId>> e;
  for (AgentId i = 0; i < n; ++i)
    for (AgentId j = i + 1; j < n; ++j)
      if (uniform01(rng) < p) e.emplace_back(i, j);
  return CommGraph(n, e);
}

}  // namespace

TEST(Neighbors, Examples) {
  EXPECT_EQ(CommGraph::ring(4).neighbors(0), (std::vector<AgentId>{0, 1, 3}));
  EXPECT_EQ(neighbors(CommGraph::complete(3), 2), (std::vector<AgentId>{0, 1, 2}));
  EXPECT_EQ(CommGraph(3).neighbors(1), (std::vector<AgentId>{1}));
  EXPECT_THROW(CommGraph(3).neighbors(3), UsageError);
}

TEST(Neighbors, SymmetricAndContainSelf) {
  Rng rng = make_rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    CommGraph g = random_graph(1 + trial % 12, 0.3, rng);
    for (AgentId i = 0; i < g.size(); ++i) {
      const auto& nb = g.neighbors(i);
      EXPECT_TRUE(std::find(nb.begin(), nb.end(), i) != nb.end());
      EXPECT_TRUE(std::is_sorted(nb.begin(), nb.end()));
      for (AgentId j = 0; j < g.size(); ++j) EXPECT_EQ(g.has_edge(i, j), g.has_edge(j, i));
    }
  }
}

TEST(Connectivity, Examples) {
  EXPECT_TRUE(is_connected(CommGraph::chain(5)));
  EXPECT_FALSE(is_connected(CommGraph(4, {{0, 1}, {2, 3}})));
  EXPECT_TRUE(is_connected(CommGraph(1)));
  EXPECT_EQ(CommGraph(4, {{0, 1}, {2, 3}}).describe_components(), "2 components: {0,1} {2,3}");
}

TEST(Connectivity, AgreesWithBfsOracle) {
  Rng rng = make_rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    CommGraph g = random_graph(2 + trial % 10, 0.25, rng);
    auto d = oracle::bfs(adjacency(g), 0);
    const bool expect = std::none_of(d.begin(), d.end(), [](int x) { return x < 0; });
    EXPECT_EQ(g.is_connected(), expect);
    auto hd = g.hop_distances(0);
    for (std::size_t v = 0; v < g.size(); ++v) {
      if (d[v] < 0) {
        EXPECT_EQ(hd[v], SIZE_MAX);
      } else {
        EXPECT_EQ(hd[v], static_cast<std::size_t>(d[v]));
      }
    }
  }
}

TEST(ConsensusWeights, Examples) {
  auto w = consensus_weights(CommGraph::complete(4));
  for (AgentId i = 0; i < 4; ++i)
    for (AgentId j = 0; j < 4; ++j) EXPECT_EQ(w(i, j), 0.25);
  auto c = consensus_weights(CommGraph::chain(3));
  for (AgentId j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(c(1, j), 1.0 / 3.0);
  EXPECT_EQ(c(0, 0), 0.5);
  EXPECT_EQ(c(0, 1), 0.5);
  EXPECT_EQ(c(0, 2), 0.0);
  auto iso = consensus_weights(CommGraph(2));
  EXPECT_EQ(iso(1, 1), 1.0);
  EXPECT_EQ(iso(1, 0), 0.0);
}

TEST(ConsensusWeights, RowsSumToOne) {
  Rng rng = make_rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    CommGraph g = random_graph(1 + trial % 16, 0.4, rng);
    auto w = consensus_weights(g);
    for (AgentId i = 0; i < g.size(); ++i) {
      Real s = 0.0;
      for (AgentId j = 0; j < g.size(); ++j) s += w(i, j);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(RadiusGraph, Examples) {
  EXPECT_TRUE(radius_graph({{0, 0}, {1, 0}}, 2.0).has_edge(0, 1));
  EXPECT_FALSE(radius_graph({{0, 0}, {3, 0}}, 2.0).has_edge(0, 1));
  EXPECT_EQ(radius_graph({{0, 0}, {1, 0}, {2, 0}}, 1.5), CommGraph::chain(3));
  EXPECT_THROW(radius_graph({{0, 0}}, 0.0), ConfigError);
}

TEST(RadiusGraph, Symmetric) {
  Rng rng = make_rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Point2> pts(8);
    for (auto& p : pts) p = {uniform(rng, 0, 5), uniform(rng, 0, 5)};
    CommGraph g = radius_graph(pts, 2.0);
    for (AgentId i = 0; i < 8; ++i)
      for (AgentId j = 0; j < 8; ++j) {
        EXPECT_EQ(g.has_edge(i, j), g.has_edge(j, i));
        if (i != j) {
          EXPECT_EQ(g.has_edge(i, j), distance(pts[i], pts[j]) <= 2.0);
        }
      }
  }
}

TEST(AverageNodeDegree, Examples) {
  EXPECT_EQ(average_node_degree(CommGraph::complete(5)), 4.0);
  EXPECT_EQ(average_node_degree(CommGraph::ring(6)), 2.0);
  EXPECT_DOUBLE_EQ(average_node_degree(CommGraph::chain(3)), 4.0 / 3.0);
}

TEST(Gossip, Examples) {
  Rng rng = make_rng(30);
  CommGraph g = random_graph(7, 0.4, rng);
  auto same = gossip_average(std::vector<Real>(7, 2.5), g, 13);
  for (Real v : same) EXPECT_EQ(v, 2.5);
  auto one = gossip_average({0.0, 1.0}, CommGraph::complete(2), 1);
  EXPECT_EQ(one, (std::vector<Real>{0.5, 0.5}));
  std::vector<Real> x(8);
  for (Real& v : x) v = uniform(rng, -3, 3);
  auto ring = gossip_average(x, CommGraph::ring(8), 500);
  auto ref = oracle::power_iterate(adjacency(CommGraph::ring(8)), x, 500);
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_NEAR(ring[i], ring[0], 1e-6);
    EXPECT_NEAR(ring[i], ref[i], 1e-12);
  }
}

TEST(Gossip, SpreadNonIncreasingAndConverges) {
  Rng rng = make_rng(31);
  int checked = 0;
  for (int trial = 0; trial < 60; ++trial) {
    CommGraph g = random_graph(2 + trial % 15, 0.35, rng);
    if (!g.is_connected()) continue;
    ++checked;
    std::vector<Real> x(g.size());
    for (Real& v : x) v = uniform(rng, -1, 1);
    Real prev = spread(x);
    std::size_t rounds = 0;
    while (spread(x) >= 1e-6) {
      x = gossip_round(x, g);
      EXPECT_LE(spread(x), prev + 1e-15);
      prev = spread(x);
      ASSERT_LT(++rounds, 20000u);
    }
  }
  EXPECT_GT(checked, 10);
}

TEST(Gossip, RegularGraphLimitIsArithmeticMean) {
  Rng rng = make_rng(32);
  for (std::size_t n : {3u, 6u, 9u, 16u}) {
    std::vector<Real> x(n);
    for (Real& v : x) v = uniform(rng, -5, 5);
    const Real mean = exact_mean(x);
    auto y = gossip_average(x, CommGraph::ring(n), 5000);
    for (Real v : y) EXPECT_NEAR(v, mean, 1e-9);
  }
  EXPECT_THROW(exact_mean({}), UsageError);
}

TEST(EdgeList, RoundTripAndErrors) {
  CommGraph g(5, {{0, 1}, {1, 4}, {2, 3}});
  std::stringstream ss;
  write_edge_list(ss, g);
  EXPECT_EQ(ss.str(), "5\n0 1\n1 4\n2 3\n");
  EXPECT_EQ(read_edge_list(ss), g);
  std::stringstream bad("3\n0 1\n1 7\n");
  try {
    read_edge_list(bad);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}
