#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dgmarl/commgraph.hpp"
#include "dgmarl/diffcore/dense.hpp"
#include "dgmarl/errors.hpp"

namespace dgmarl {

/// Sizes, topology and geometry feeding the cost and energy formulas. Sizes
/// are scalar counts; `neighborhoods` are inclusive (self first or anywhere).
struct CostParams {
  std::vector<std::size_t> obs_sizes;
  std::vector<std::size_t> action_sizes;
  std::size_t feature_size = 0;
  std::size_t psi_size = 0;
  std::size_t hops = 1;
  std::vector<std::vector<AgentId>> neighborhoods;
  /// Hop distance from each agent to the central controller.
  std::vector<std::size_t> center_hops;
  /// Bits per transmitted message, per agent (CTDE) and for D-GAT messages.
  std::vector<Real> agent_bits;
  Real message_bits = 1.0;
  /// Pairwise distances (N x N) and distance of each agent to the controller.
  std::optional<DenseMatrix> distances;
  std::vector<Real> center_distances;
  Real path_loss = 2.0;
  std::optional<Real> comm_radius;
  /// Count each undirected edge once in dg_energy instead of once per direction.
  bool count_edges_once = false;

  std::size_t num_agents() const { return obs_sizes.size(); }
  std::size_t degree(AgentId i) const { return neighborhoods.at(i).size(); }

  void validate() const {
    if (obs_sizes.empty()) throw ConfigError("cost: need at least one agent");
    if (action_sizes.size() != obs_sizes.size()) throw ConfigError("cost: action_sizes must have one entry per agent");
    if (path_loss < 2.0 || path_loss > 4.0) {
      throw ConfigError("cost: path-loss exponent must lie in [2, 4], got " + std::to_string(path_loss));
    }
  }
};

/// Homogeneous sizes over a graph: every agent observes |O|, acts with |A|.
inline CostParams homogeneous_params(const CommGraph& g, std::size_t obs, std::size_t act, std::size_t feature,
                                     std::size_t psi, std::size_t hops) {
  CostParams p;
  p.obs_sizes.assign(g.size(), obs);
  p.action_sizes.assign(g.size(), act);
  p.feature_size = feature;
  p.psi_size = psi;
  p.hops = hops;
  for (AgentId i = 0; i < g.size(); ++i) p.neighborhoods.push_back(g.neighbors(i));
  return p;
}

/// Worst-case 1-D relay: agent i is i hops from a controller at node 0.
inline std::vector<std::size_t> worst_case_line_hops(std::size_t n) {
  std::vector<std::size_t> k(n);
  for (std::size_t i = 0; i < n; ++i) k[i] = i;
  return k;
}

/// Scalars sent to the controller when every agent reaches it directly.
inline Real ctde_train_cost(const CostParams& p) {
  p.validate();
  Real c = 0.0;
  for (std::size_t i = 0; i < p.num_agents(); ++i) c += static_cast<Real>(p.obs_sizes[i] + p.action_sizes[i]);
  return c;
}

/// Scalars carried over all links when each agent's data is relayed K^i hops.
inline Real ctde_multihop_cost(const CostParams& p) {
  p.validate();
  if (p.center_hops.size() != p.num_agents()) throw ConfigError("cost: center_hops must have one entry per agent");
  Real c = 0.0;
  for (std::size_t i = 0; i < p.num_agents(); ++i) {
    c += static_cast<Real>(p.center_hops[i] * (p.obs_sizes[i] + p.action_sizes[i]));
  }
  return c;
}

inline Real sum_degrees(const CostParams& p) {
  if (p.neighborhoods.size() != p.num_agents()) throw ConfigError("cost: neighborhoods must have one entry per agent");
  Real s = 0.0;
  for (const auto& nb : p.neighborhoods) s += static_cast<Real>(nb.size());
  return s;
}

/// D-GAT message passing: K rounds, each agent receives |h| from every
/// member of its inclusive neighborhood.
inline Real dg_mp_cost(const CostParams& p) {
  p.validate();
  return static_cast<Real>(p.hops) * sum_degrees(p) * static_cast<Real>(p.feature_size);
}

/// One round of neighbor parameter averaging over the D-GAT weights.
inline Real dg_param_cost(const CostParams& p) {
  p.validate();
  return sum_degrees(p) * static_cast<Real>(p.psi_size);
}

inline Real dg_total_cost(const CostParams& p) { return dg_mp_cost(p) + dg_param_cost(p); }

/// Energy to send `bits` over distance `d` with path-loss exponent `alpha`.
inline Real tx_energy(Real bits, Real d, Real alpha) {
  if (alpha < 2.0 || alpha > 4.0) {
    throw ConfigError("tx_energy: path-loss exponent must lie in [2, 4], got " + std::to_string(alpha));
  }
  if (bits < 0.0 || d < 0.0) throw ConfigError("tx_energy: bits and distance must be non-negative");
  return bits * std::pow(d, alpha);
}

inline Real ctde_energy(const CostParams& p) {
  p.validate();
  if (p.center_distances.size() != p.num_agents()) {
    throw ConfigError("ctde_energy: need one distance to the controller per agent");
  }
  if (p.agent_bits.size() != p.num_agents()) throw ConfigError("ctde_energy: need one bit size per agent");
  Real e = 0.0;
  for (std::size_t i = 0; i < p.num_agents(); ++i) e += tx_energy(p.agent_bits[i], p.center_distances[i], p.path_loss);
  return e;
}

/// Energy of one communication round; self-messages are free.
inline Real dg_energy(const CostParams& p) {
  p.validate();
  if (!p.distances) throw ConfigError("dg_energy: pairwise distances missing");
  const DenseMatrix& d = *p.distances;
  if (d.rows() != p.num_agents() || d.cols() != p.num_agents()) {
    throw ConfigError("dg_energy: distance matrix must be N x N");
  }
  if (p.neighborhoods.size() != p.num_agents()) throw ConfigError("cost: neighborhoods must have one entry per agent");
  Real e = 0.0;
  for (AgentId i = 0; i < p.num_agents(); ++i) {
    for (AgentId j : p.neighborhoods[i]) {
      if (j == i) continue;
      if (j >= p.num_agents()) throw ConfigError("dg_energy: neighbor id out of range");
      if (p.count_edges_once && j < i) continue;
      if (p.comm_radius && d(i, j) > *p.comm_radius) {
        throw ConfigError("dg_energy: neighbors " + std::to_string(i) + " and " + std::to_string(j) + " are " +
                          std::to_string(d(i, j)) + " apart, beyond comm radius " + std::to_string(*p.comm_radius));
      }
      e += tx_energy(p.message_bits, d(i, j), p.path_loss);
    }
  }
  return e;
}

/// Preset for the team-size sweep. Agents sit on a line with fixed spacing,
/// linked as a chain; the controller sits at agent 0.
struct SweepPreset {
  std::size_t obs_size = 60;
  std::size_t action_size = 4;
  std::size_t feature_size = 8;
  std::size_t psi_size = 4;
  std::size_t n_min = 8;
  std::size_t n_max = 128;
  std::size_t n_step = 2;
  Real bits_per_scalar = 32.0;
  Real spacing = 1.0;
  Real path_loss = 2.0;

  void validate() const {
    if (n_min < 2 || n_max < n_min || n_step == 0) throw ConfigError("cost: need 2 <= n_min <= n_max and n_step > 0");
    if (obs_size + action_size == 0) throw ConfigError("cost: obs_size + action_size must be positive");
    if (!(spacing > 0.0)) throw ConfigError("cost: spacing must be positive");
    if (path_loss < 2.0 || path_loss > 4.0) throw ConfigError("cost: path_loss must lie in [2, 4]");
  }
};

struct SweepRow {
  std::string method;
  std::size_t n = 0;
  std::size_t hops = 0;
  Real cost = 0.0;
  Real energy = 0.0;
};

/// Line layout of `n` agents used by the sweep.
inline CostParams line_params(const SweepPreset& s, std::size_t n, std::size_t hops) {
  CostParams p = homogeneous_params(CommGraph::chain(n), s.obs_size, s.action_size, s.feature_size, s.psi_size, hops);
  p.center_hops = worst_case_line_hops(n);
  p.agent_bits.assign(n, s.bits_per_scalar * static_cast<Real>(s.obs_size + s.action_size));
  p.message_bits = s.bits_per_scalar * static_cast<Real>(s.feature_size);
  p.path_loss = s.path_loss;
  DenseMatrix d(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    p.center_distances.push_back(s.spacing * static_cast<Real>(i));
    for (std::size_t j = 0; j < n; ++j) {
      d(i, j) = s.spacing * std::abs(static_cast<Real>(i) - static_cast<Real>(j));
    }
  }
  p.distances = std::move(d);
  p.comm_radius = s.spacing;
  return p;
}

/// Rows for single-hop CTDE, worst-case multi-hop CTDE and D-GAT with a hop
/// budget of N/2 (at least 1). Energies: direct uplink; relayed uplink over
/// `spacing`-long links; one D-GAT round.
inline std::vector<SweepRow> cost_sweep(const SweepPreset& s) {
  s.validate();
  std::vector<SweepRow> rows;
  for (std::size_t n = s.n_min; n <= s.n_max; n += s.n_step) {
    const std::size_t k = std::max<std::size_t>(1, n / 2);
    const CostParams p = line_params(s, n, k);
    Real relay = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      relay += static_cast<Real>(p.center_hops[i]) * tx_energy(p.agent_bits[i], s.spacing, s.path_loss);
    }
    rows.push_back({"ctde", n, 1, ctde_train_cost(p), ctde_energy(p)});
    rows.push_back({"ctde_multihop", n, n - 1, ctde_multihop_cost(p), relay});
    rows.push_back({"dg", n, k, dg_total_cost(p), dg_energy(p)});
  }
  return rows;
}

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << "method,N,K,cost,energy\n";
  const auto prec = os.precision(17);
  for (const auto& r : rows) os << r.method << "," << r.n << "," << r.hops << "," << r.cost << "," << r.energy << "\n";
  os.precision(prec);
}

/// Least-squares slope of log(y) against log(x).
inline Real loglog_slope(const std::vector<Real>& x, const std::vector<Real>& y) {
  if (x.size() != y.size() || x.size() < 2) throw UsageError("loglog_slope: need at least two paired points");
  Real mx = 0.0, my = 0.0;
  const auto n = static_cast<Real>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw UsageError("loglog_slope: values must be positive");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= n;
  my /= n;
  Real sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Real dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

}  // namespace dgmarl
