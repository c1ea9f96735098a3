#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numeric>
#include <ostream>
#include <queue>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dgmarl/diffcore/dense.hpp"
#include "dgmarl/errors.hpp"

namespace dgmarl {

using AgentId = std::uint32_t;

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

inline double distance(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

/// Undirected communication topology over n agents. Self-edges are never stored;
/// every neighborhood N^i implicitly contains i. Immutable once built.
class CommGraph {
 public:
  CommGraph() = default;
  explicit CommGraph(std::size_t n) : n_(n), adj_(n * n, 0), nbrs_(n) { rebuild(); }
  CommGraph(std::size_t n, const std::vector<std::pair<AgentId, AgentId>>& edges) : n_(n), adj_(n * n, 0), nbrs_(n) {
    for (auto [i, j] : edges) {
      if (i >= n || j >= n) throw UsageError("CommGraph: edge (" + std::to_string(i) + "," + std::to_string(j) +
                                             ") out of range for n=" + std::to_string(n));
      if (i == j) continue;
      adj_[i * n + j] = 1;
      adj_[j * n + i] = 1;
    }
    rebuild();
  }

  static CommGraph complete(std::size_t n) {
    std::vector<std::pair<AgentId, AgentId>> e;
    for (AgentId i = 0; i < n; ++i)
      for (AgentId j = i + 1; j < n; ++j) e.emplace_back(i, j);
    return CommGraph(n, e);
  }
  static CommGraph chain(std::size_t n) {
    std::vector<std::pair<AgentId, AgentId>> e;
    for (AgentId i = 0; i + 1 < n; ++i) e.emplace_back(i, i + 1);
    return CommGraph(n, e);
  }
  static CommGraph ring(std::size_t n) {
    std::vector<std::pair<AgentId, AgentId>> e;
    for (AgentId i = 0; i < n; ++i) e.emplace_back(i, static_cast<AgentId>((i + 1) % n));
    return CommGraph(n, e);
  }

  std::size_t size() const noexcept { return n_; }

  bool has_edge(AgentId i, AgentId j) const {
    check(i);
    check(j);
    return adj_[i * n_ + j] != 0;
  }

  /// N^i including i, ascending.
  const std::vector<AgentId>& neighbors(AgentId i) const {
    check(i);
    return nbrs_[i];
  }

  /// Degree excluding the implicit self-loop.
  std::size_t degree(AgentId i) const { return neighbors(i).size() - 1; }

  std::vector<std::pair<AgentId, AgentId>> edges() const {
    std::vector<std::pair<AgentId, AgentId>> e;
    for (AgentId i = 0; i < n_; ++i)
      for (AgentId j = i + 1; j < n_; ++j)
        if (adj_[i * n_ + j]) e.emplace_back(i, j);
    return e;
  }

  /// Hop distances from `src` (SIZE_MAX for unreachable nodes).
  std::vector<std::size_t> hop_distances(AgentId src) const {
    check(src);
    std::vector<std::size_t> dist(n_, SIZE_MAX);
    std::queue<AgentId> q;
    dist[src] = 0;
    q.push(src);
    while (!q.empty()) {
      AgentId u = q.front();
      q.pop();
      for (AgentId v : nbrs_[u]) {
        if (dist[v] == SIZE_MAX) {
          dist[v] = dist[u] + 1;
          q.push(v);
        }
      }
    }
    return dist;
  }

  /// Connected components as ascending id lists, ordered by smallest member.
  std::vector<std::vector<AgentId>> components() const {
    std::vector<std::vector<AgentId>> out;
    std::vector<bool> seen(n_, false);
    for (AgentId s = 0; s < n_; ++s) {
      if (seen[s]) continue;
      std::vector<AgentId> comp;
      auto d = hop_distances(s);
      for (AgentId v = 0; v < n_; ++v) {
        if (d[v] != SIZE_MAX) {
          seen[v] = true;
          comp.push_back(v);
        }
      }
      out.push_back(std::move(comp));
    }
    return out;
  }

  bool is_connected() const {
    if (n_ == 0) throw UsageError("is_connected: empty graph");
    auto d = hop_distances(0);
    return std::none_of(d.begin(), d.end(), [](std::size_t x) { return x == SIZE_MAX; });
  }

  std::string describe_components() const {
    std::ostringstream os;
    auto comps = components();
    os << comps.size() << " components:";
    for (const auto& c : comps) {
      os << " {";
      for (std::size_t k = 0; k < c.size(); ++k) os << (k ? "," : "") << c[k];
      os << "}";
    }
    return os.str();
  }

  friend bool operator==(const CommGraph& a, const CommGraph& b) { return a.n_ == b.n_ && a.adj_ == b.adj_; }

 private:
  void check(AgentId i) const {
    if (i >= n_) throw UsageError("agent id " + std::to_string(i) + " out of range for n=" + std::to_string(n_));
  }
  void rebuild() {
    for (AgentId i = 0; i < n_; ++i) {
      nbrs_[i].clear();
      for (AgentId j = 0; j < n_; ++j)
        if (j == i || adj_[i * n_ + j]) nbrs_[i].push_back(j);
    }
  }

  std::size_t n_ = 0;
  std::vector<std::uint8_t> adj_;
  std::vector<std::vector<AgentId>> nbrs_;
};

inline const std::vector<AgentId>& neighbors(const CommGraph& g, AgentId i) { return g.neighbors(i); }
inline bool is_connected(const CommGraph& g) { return g.is_connected(); }

/// Row-stochastic mixing matrix c(i,j) = 1/|N^i| for j in N^i, else 0.
struct ConsensusWeights {
  DenseMatrix c;
  Real operator()(AgentId i, AgentId j) const { return c(i, j); }
  std::size_t size() const { return c.rows(); }
};

inline ConsensusWeights consensus_weights(const CommGraph& g) {
  const std::size_t n = g.size();
  ConsensusWeights w{DenseMatrix(n, n)};
  for (AgentId i = 0; i < n; ++i) {
    const auto& nb = g.neighbors(i);
    const Real v = 1.0 / static_cast<Real>(nb.size());
    for (AgentId j : nb) w.c(i, j) = v;
  }
  return w;
}

/// Edge (i, j) iff Euclidean distance <= range.
inline CommGraph radius_graph(const std::vector<Point2>& pts, double range) {
  if (!(range > 0.0)) throw ConfigError("radius_graph: range must be positive");
  std::vector<std::pair<AgentId, AgentId>> e;
  for (AgentId i = 0; i < pts.size(); ++i)
    for (AgentId j = i + 1; j < pts.size(); ++j)
      if (distance(pts[i], pts[j]) <= range) e.emplace_back(i, j);
  return CommGraph(pts.size(), e);
}

/// Mean over agents of the degree excluding self.
inline double average_node_degree(const CommGraph& g) {
  if (g.size() == 0) return 0.0;
  double s = 0.0;
  for (AgentId i = 0; i < g.size(); ++i) s += static_cast<double>(g.degree(i));
  return s / static_cast<double>(g.size());
}

/// One gossip round x <- C x.
inline std::vector<Real> gossip_round(const std::vector<Real>& x, const CommGraph& g) {
  if (x.size() != g.size()) throw ConfigError("gossip: one value per agent required");
  std::vector<Real> y(x.size(), 0.0);
  for (AgentId i = 0; i < g.size(); ++i) {
    const auto& nb = g.neighbors(i);
    Real s = 0.0;
    for (AgentId j : nb) s += x[j];
    y[i] = s / static_cast<Real>(nb.size());
  }
  return y;
}

inline std::vector<Real> gossip_average(std::vector<Real> values, const CommGraph& g, std::size_t rounds) {
  for (std::size_t r = 0; r < rounds; ++r) values = gossip_round(values, g);
  return values;
}

/// The exact team mean a simulator can hand out directly.
inline Real exact_mean(const std::vector<Real>& values) {
  if (values.empty()) throw UsageError("exact_mean: no values");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<Real>(values.size());
}

inline Real spread(const std::vector<Real>& v) {
  if (v.empty()) return 0.0;
  auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return *hi - *lo;
}

// Edge-list text format: first line n, then one "i j" pair per line.

inline void write_edge_list(std::ostream& os, const CommGraph& g) {
  os << g.size() << "\n";
  for (auto [i, j] : g.edges()) os << i << " " << j << "\n";
}

inline CommGraph read_edge_list(std::istream& is) {
  std::string line;
  std::size_t n = 0;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    if (!(ls >> n)) throw ConfigError("edge list line " + std::to_string(lineno) + ": expected agent count");
    break;
  }
  if (lineno == 0) throw ConfigError("edge list: empty input");
  std::vector<std::pair<AgentId, AgentId>> edges;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    long long i = -1, j = -1;
    if (!(ls >> i >> j) || i < 0 || j < 0 || static_cast<std::size_t>(i) >= n || static_cast<std::size_t>(j) >= n) {
      throw ConfigError("edge list line " + std::to_string(lineno) + ": expected 'i j' with ids < " +
                        std::to_string(n));
    }
    edges.emplace_back(static_cast<AgentId>(i), static_cast<AgentId>(j));
  }
  return CommGraph(n, edges);
}

}  // namespace dgmarl
