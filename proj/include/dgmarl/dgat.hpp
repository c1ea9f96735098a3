#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "dgmarl/commgraph.hpp"
#include "dgmarl/diffcore.hpp"
#include "dgmarl/rng.hpp"

namespace dgmarl {

enum class Normalization { Softmax, Softplus };
enum class Aggregation { Attention, Mean };

/// How neighbor features enter an agent's tape.
enum class MessageMode {
  /// Neighbor features arrive as received constants; each agent differentiates
  /// only its own computation. This is what a deployed agent can do.
  Received,
  /// All agents share one tape and neighbor features stay connected, giving the
  /// exact gradient of the joint forward. Used for verification.
  Connected,
};

struct DgatOptions {
  std::size_t hops = 1;
  Normalization normalization = Normalization::Softmax;
  Aggregation aggregation = Aggregation::Attention;
  Real leaky_slope = 0.2;
};

/// psi^i_k = {W (d' x 2d), q (1 x d')}.
struct DgatLayerParams {
  Parameter w;
  Parameter q;
};

/// One agent's encoder plus its per-hop attention layers.
class DgatStack {
 public:
  DgatStack() = default;
  DgatStack(AgentId id, std::size_t obs_dim, std::size_t feature_dim, std::size_t attn_dim, std::size_t hops,
            bool shared_layers, Rng& rng)
      : id_(id), hops_(hops), shared_(shared_layers) {
    if (feature_dim == 0 || attn_dim == 0 || obs_dim == 0) throw ConfigError("DgatStack: zero dimension");
    const std::string pre = "agent" + std::to_string(id) + ".dgat";
    enc_w_ = Parameter(pre + ".enc.w", feature_dim, obs_dim);
    enc_b_ = Parameter(pre + ".enc.b", 1, feature_dim);
    init_uniform(enc_w_, rng);
    const std::size_t stored = hops == 0 ? 0 : (shared_layers ? 1 : hops);
    layers_.reserve(stored);
    for (std::size_t k = 0; k < stored; ++k) {
      DgatLayerParams l{Parameter(pre + ".hop" + std::to_string(k) + ".w", attn_dim, 2 * feature_dim),
                        Parameter(pre + ".hop" + std::to_string(k) + ".q", 1, attn_dim)};
      init_uniform(l.w, rng);
      init_uniform(l.q, rng);
      layers_.push_back(std::move(l));
    }
  }
  DgatStack(const DgatStack&) = delete;
  DgatStack& operator=(const DgatStack&) = delete;
  DgatStack(DgatStack&&) = default;
  DgatStack& operator=(DgatStack&&) = default;

  AgentId agent_id() const noexcept { return id_; }
  std::size_t hops() const noexcept { return hops_; }
  bool shared_layers() const noexcept { return shared_; }
  std::size_t obs_dim() const { return enc_w_.value().cols(); }
  std::size_t feature_dim() const { return enc_w_.value().rows(); }
  std::size_t attn_dim() const { return layers_.empty() ? 0 : layers_[0].w.value().rows(); }
  std::size_t stored_layers() const noexcept { return layers_.size(); }

  DgatLayerParams& layer(std::size_t k) {
    if (k >= hops_) throw UsageError("DgatStack: hop " + std::to_string(k) + " >= K=" + std::to_string(hops_));
    return layers_[shared_ ? 0 : k];
  }
  const DgatLayerParams& layer(std::size_t k) const { return const_cast<DgatStack*>(this)->layer(k); }
  Parameter& encoder_weight() noexcept { return enc_w_; }
  Parameter& encoder_bias() noexcept { return enc_b_; }

  /// Encoder first, then (W, q) per stored layer.
  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out{&enc_w_, &enc_b_};
    for (auto& l : layers_) {
      out.push_back(&l.w);
      out.push_back(&l.q);
    }
    return out;
  }
  std::vector<const Parameter*> parameters() const {
    std::vector<const Parameter*> out{&enc_w_, &enc_b_};
    for (const auto& l : layers_) {
      out.push_back(&l.w);
      out.push_back(&l.q);
    }
    return out;
  }

  /// |psi|: scalar count of everything that gets averaged.
  std::size_t num_scalars() const {
    std::size_t s = 0;
    for (const Parameter* p : parameters()) s += p->size();
    return s;
  }

  /// h_0 = W_enc o + b_enc for a B x p observation block.
  Var encode(Tape& t, Var obs) {
    if (t.cols(obs) != obs_dim()) {
      throw ConfigError("encode: observation dim " + std::to_string(t.cols(obs)) + " but agent " +
                        std::to_string(id_) + " expects " + std::to_string(obs_dim()));
    }
    return t.linear(obs, t.param(enc_w_), t.param(enc_b_));
  }

 private:
  AgentId id_ = 0;
  std::size_t hops_ = 0;
  bool shared_ = false;
  Parameter enc_w_;
  Parameter enc_b_;
  std::vector<DgatLayerParams> layers_;
};

/// Neighborhood layout of one agent over a batch of per-sample graphs. Pair p
/// (sample b, neighbor j) occupies rows offsets[b]..offsets[b+1] in ascending j.
struct HopIndex {
  std::vector<std::uint32_t> offsets;
  std::vector<std::uint32_t> pair_sample;
  std::vector<AgentId> pair_source;
  /// Received-mode rows into [self block; received block].
  std::vector<std::uint32_t> pair_row;
  /// (sample, source) of each received-block row.
  std::vector<std::uint32_t> recv_sample;
  std::vector<AgentId> recv_source;

  std::size_t batch() const { return offsets.size() - 1; }
  std::size_t pairs() const { return pair_sample.size(); }
};

inline HopIndex build_hop_index(AgentId i, std::span<const CommGraph* const> graphs) {
  HopIndex idx;
  const auto batch = static_cast<std::uint32_t>(graphs.size());
  idx.offsets.push_back(0);
  for (std::uint32_t b = 0; b < batch; ++b) {
    for (AgentId j : graphs[b]->neighbors(i)) {
      idx.pair_sample.push_back(b);
      idx.pair_source.push_back(j);
      if (j == i) {
        idx.pair_row.push_back(b);
      } else {
        idx.pair_row.push_back(batch + static_cast<std::uint32_t>(idx.recv_sample.size()));
        idx.recv_sample.push_back(b);
        idx.recv_source.push_back(j);
      }
    }
    idx.offsets.push_back(static_cast<std::uint32_t>(idx.pair_sample.size()));
  }
  return idx;
}

struct HopResult {
  Var features;  // B x d, tanh(sum_j alpha_ij h_j)
  Var alpha;     // P x 1
};

/// One D-GAT hop for agent i over a batch. `self` is B x d; `pool` holds every
/// candidate neighbor feature row and `pool_rows[p]` selects pair p's row.
inline HopResult hop_forward(Tape& t, DgatLayerParams& layer, Var self, Var pool,
                             std::span<const std::uint32_t> pool_rows, const HopIndex& idx, const DgatOptions& opt) {
  Var nb = t.gather_rows(pool, pool_rows);
  Var alpha;
  if (opt.aggregation == Aggregation::Mean) {
    std::vector<Real> w(idx.pairs());
    for (std::size_t b = 0; b < idx.batch(); ++b) {
      const Real v = 1.0 / static_cast<Real>(idx.offsets[b + 1] - idx.offsets[b]);
      for (auto p = idx.offsets[b]; p < idx.offsets[b + 1]; ++p) w[p] = v;
    }
    alpha = t.constant(w, w.size(), 1);
  } else {
    Var query = t.gather_rows(self, idx.pair_sample);
    Var z = t.linear(t.concat_cols(query, nb), t.param(layer.w));
    Var e = t.linear(t.leaky_relu(z, opt.leaky_slope), t.param(layer.q));
    alpha = opt.normalization == Normalization::Softmax ? t.segment_softmax(e, idx.offsets)
                                                        : t.segment_normalize(t.softplus(e), idx.offsets);
  }
  Var agg = t.segment_weighted_sum(alpha, nb, idx.offsets);
  return {t.tanh(agg), alpha};
}

/// Result of a K-hop forward over a batch. Vars live on each agent's tape.
struct MultihopResult {
  std::vector<std::vector<Var>> h;        // [agent][k], k = 0..K
  std::vector<std::vector<Var>> alpha;    // [agent][k], k = 0..K-1
  std::vector<std::vector<DenseMatrix>> messages;  // [k][agent] values of h
  std::vector<HopIndex> index;            // per agent

  /// Inferred-global feature values o_hat (B x d) of agent i.
  const DenseMatrix& output(AgentId i) const { return messages.back()[i]; }
};

/// Synchronous K-hop message passing: every agent's hop k+1 reads all agents'
/// hop-k outputs. obs[i] is B x p_i, graphs[b] is the topology of sample b.
/// In Received mode tapes[i] is agent i's own tape; in Connected mode every
/// entry must point to one shared tape.
inline MultihopResult multihop_forward(std::span<DgatStack* const> stacks, std::span<Tape* const> tapes,
                                       std::span<const DenseMatrix* const> obs,
                                       std::span<const CommGraph* const> graphs, const DgatOptions& opt,
                                       MessageMode mode = MessageMode::Received) {
  const std::size_t n = stacks.size();
  if (tapes.size() != n || obs.size() != n) throw ConfigError("multihop_forward: one tape and obs block per agent");
  if (graphs.empty()) throw UsageError("multihop_forward: empty batch");
  for (const CommGraph* g : graphs) {
    if (g->size() != n) {
      throw ConfigError("multihop_forward: graph has " + std::to_string(g->size()) + " agents, expected " +
                        std::to_string(n));
    }
  }
  const std::size_t batch = graphs.size();
  const std::size_t d = stacks[0]->feature_dim();
  for (std::size_t i = 0; i < n; ++i) {
    if (stacks[i]->feature_dim() != d) throw ConfigError("multihop_forward: agents disagree on feature dim");
    if (obs[i]->rows() != batch) throw ConfigError("multihop_forward: observation rows != batch size");
    if (stacks[i]->hops() < opt.hops) throw ConfigError("multihop_forward: stack has fewer hops than requested");
  }

  MultihopResult res;
  res.h.assign(n, {});
  res.alpha.assign(n, {});
  res.messages.assign(opt.hops + 1, std::vector<DenseMatrix>(n));
  res.index.reserve(n);
  for (AgentId i = 0; i < n; ++i) res.index.push_back(build_hop_index(i, graphs));

  for (AgentId i = 0; i < n; ++i) {
    Var h0 = stacks[i]->encode(*tapes[i], tapes[i]->constant(*obs[i]));
    res.h[i].push_back(h0);
    res.messages[0][i] = tapes[i]->matrix(h0);
  }

  for (std::size_t k = 0; k < opt.hops; ++k) {
    if (mode == MessageMode::Connected) {
      Tape& t = *tapes[0];
      std::vector<Var> parts;
      for (AgentId j = 0; j < n; ++j) parts.push_back(res.h[j][k]);
      Var pool = t.stack_rows(parts);
      for (AgentId i = 0; i < n; ++i) {
        const HopIndex& idx = res.index[i];
        std::vector<std::uint32_t> rows(idx.pairs());
        for (std::size_t p = 0; p < idx.pairs(); ++p) {
          rows[p] = static_cast<std::uint32_t>(idx.pair_source[p] * batch + idx.pair_sample[p]);
        }
        HopResult hr = hop_forward(t, stacks[i]->layer(k), res.h[i][k], pool, rows, idx, opt);
        res.h[i].push_back(hr.features);
        res.alpha[i].push_back(hr.alpha);
      }
    } else {
      for (AgentId i = 0; i < n; ++i) {
        Tape& t = *tapes[i];
        const HopIndex& idx = res.index[i];
        Var pool = res.h[i][k];
        if (!idx.recv_sample.empty()) {
          DenseMatrix recv(idx.recv_sample.size(), d);
          for (std::size_t r = 0; r < idx.recv_sample.size(); ++r) {
            auto src = res.messages[k][idx.recv_source[r]].row_span(idx.recv_sample[r]);
            std::copy(src.begin(), src.end(), recv.row_span(r).begin());
          }
          const Var parts[2] = {res.h[i][k], t.constant(recv)};
          pool = t.stack_rows(parts);
        }
        HopResult hr = hop_forward(t, stacks[i]->layer(k), res.h[i][k], pool, idx.pair_row, idx, opt);
        res.h[i].push_back(hr.features);
        res.alpha[i].push_back(hr.alpha);
      }
    }
    for (AgentId i = 0; i < n; ++i) res.messages[k + 1][i] = tapes[i]->matrix(res.h[i][k + 1]);
  }
  return res;
}

/// Agent i's own forward on its tape.
struct LocalForward {
  std::vector<Var> h;      // k = 0..K
  std::vector<Var> alpha;  // k = 0..K-1
  HopIndex index;
  Var output() const { return h.back(); }
};

/// Agent i recomputes its own K-hop features while every neighbor feature is
/// taken from `received[k][j]` (B x d, rows aligned with the batch): the
/// messages i stored when it originally heard them. Nothing outside i's
/// neighborhood is read.
inline LocalForward local_forward(DgatStack& stack, Tape& t, AgentId i, const DenseMatrix& obs,
                                  std::span<const CommGraph* const> graphs,
                                  const std::vector<std::vector<DenseMatrix>>& received, const DgatOptions& opt) {
  if (graphs.empty()) throw UsageError("local_forward: empty batch");
  if (obs.rows() != graphs.size()) throw ConfigError("local_forward: observation rows != batch size");
  if (received.size() < opt.hops) throw ConfigError("local_forward: need received messages for every hop");
  if (stack.hops() < opt.hops) throw ConfigError("local_forward: stack has fewer hops than requested");
  const std::size_t d = stack.feature_dim();
  LocalForward f;
  f.index = build_hop_index(i, graphs);
  const HopIndex& idx = f.index;
  f.h.push_back(stack.encode(t, t.constant(obs)));
  for (std::size_t k = 0; k < opt.hops; ++k) {
    Var pool = f.h[k];
    if (!idx.recv_sample.empty()) {
      DenseMatrix recv(idx.recv_sample.size(), d);
      for (std::size_t r = 0; r < idx.recv_sample.size(); ++r) {
        const DenseMatrix& src_m = received[k].at(idx.recv_source[r]);
        if (src_m.cols() != d || src_m.rows() != graphs.size()) {
          throw ConfigError("local_forward: received block has shape " + src_m.shape_str());
        }
        auto src = src_m.row_span(idx.recv_sample[r]);
        std::copy(src.begin(), src.end(), recv.row_span(r).begin());
      }
      const Var parts[2] = {f.h[k], t.constant(recv)};
      pool = t.stack_rows(parts);
    }
    HopResult hr = hop_forward(t, stack.layer(k), f.h[k], pool, idx.pair_row, idx, opt);
    f.h.push_back(hr.features);
    f.alpha.push_back(hr.alpha);
  }
  return f;
}

/// Consensus targets for agent i's pairs from stored neighbor outputs
/// `outputs[j]` (B x d). The self pair targets i's own stored output.
inline DenseMatrix stored_targets(const std::vector<DenseMatrix>& outputs, const HopIndex& idx) {
  const std::size_t d = outputs.at(0).cols();
  DenseMatrix m(idx.pairs(), d);
  for (std::size_t p = 0; p < idx.pairs(); ++p) {
    auto src = outputs.at(idx.pair_source[p]).row_span(idx.pair_sample[p]);
    std::copy(src.begin(), src.end(), m.row_span(p).begin());
  }
  return m;
}

/// Mean Shannon entropy of attention rows laid out by `idx`.
inline Real attention_entropy(std::span<const Real> a, const HopIndex& idx) {
  Real total = 0.0;
  for (std::size_t b = 0; b < idx.batch(); ++b) {
    for (auto p = idx.offsets[b]; p < idx.offsets[b + 1]; ++p) {
      if (a[p] > 0.0) total -= a[p] * std::log(a[p]);
    }
  }
  return total / static_cast<Real>(idx.batch());
}

/// Mean Shannon entropy of the attention rows of agent i at hop k.
inline Real attention_entropy(const Tape& t, const MultihopResult& r, AgentId i, std::size_t k) {
  return attention_entropy(t.value(r.alpha[i][k]), r.index[i]);
}

/// alpha * mean_b (1/|N^i_b|) sum_{j in N^i_b} MSE(out_i[b], targets[p]) where
/// targets holds the neighbor outputs for each pair as constants.
inline Var consensus_loss_term(Tape& t, Var out_i, const DenseMatrix& targets, const HopIndex& idx, Real alpha) {
  if (targets.rows() != idx.pairs() || targets.cols() != t.cols(out_i)) {
    throw ConfigError("consensus_loss_term: targets must be pairs x d");
  }
  const std::size_t batch = idx.batch(), d = t.cols(out_i);
  std::vector<Real> w(idx.pairs());
  for (std::size_t b = 0; b < batch; ++b) {
    const auto deg = idx.offsets[b + 1] - idx.offsets[b];
    for (auto p = idx.offsets[b]; p < idx.offsets[b + 1]; ++p) {
      w[p] = alpha / (static_cast<Real>(batch) * static_cast<Real>(deg) * static_cast<Real>(d));
    }
  }
  Var diff = t.sub(t.gather_rows(out_i, idx.pair_sample), t.constant(targets));
  return t.sum(t.row_scale(t.mul(diff, diff), t.constant(w, w.size(), 1)));
}

/// Neighbor outputs laid out per pair of agent i's hop index.
inline DenseMatrix consensus_targets(const MultihopResult& r, AgentId i) {
  const HopIndex& idx = r.index[i];
  const auto& outs = r.messages.back();
  const std::size_t d = outs[i].cols();
  DenseMatrix m(idx.pairs(), d);
  for (std::size_t p = 0; p < idx.pairs(); ++p) {
    auto src = outs[idx.pair_source[p]].row_span(idx.pair_sample[p]);
    std::copy(src.begin(), src.end(), m.row_span(p).begin());
  }
  return m;
}

// ---- value-level API over a single graph --------------------------------

/// Per-agent feature vectors at one hop.
struct HopMessages {
  std::vector<DenseVector> h;
};

inline DenseVector encode(const DenseVector& o, DgatStack& stack) {
  Tape t;
  Var h = stack.encode(t, t.constant(o));
  auto s = t.value(h);
  return DenseVector(std::vector<Real>(s.begin(), s.end()));
}

/// e = q^T LeakyReLU(W [h_i || h_j]) with agent i's hop-k parameters.
inline Real attention_score(DgatStack& stack, std::size_t k, const DenseVector& h_i, const DenseVector& h_j,
                            Real slope = 0.2) {
  if (h_i.dim() != stack.feature_dim() || h_j.dim() != stack.feature_dim()) {
    throw ConfigError("attention_score: feature dims must equal d");
  }
  Tape t;
  DgatLayerParams& l = stack.layer(k);
  Var z = t.linear(t.concat_cols(t.constant(h_i), t.constant(h_j)), t.param(l.w));
  return t.scalar(t.linear(t.leaky_relu(z, slope), t.param(l.q)));
}

/// Synchronous hop k for every agent on one graph.
inline HopMessages layer_forward(std::span<DgatStack* const> stacks, std::size_t k, const HopMessages& in,
                                 const CommGraph& g, const DgatOptions& opt = {}) {
  const std::size_t n = stacks.size();
  if (in.h.size() != n || g.size() != n) throw ConfigError("layer_forward: messages must cover every agent");
  const CommGraph* graphs[1] = {&g};
  HopMessages out;
  for (AgentId i = 0; i < n; ++i) {
    Tape t;
    HopIndex idx = build_hop_index(i, graphs);
    std::vector<Var> rows;
    rows.push_back(t.constant(in.h[i]));
    for (AgentId j : idx.recv_source) rows.push_back(t.constant(in.h[j]));
    Var pool = t.stack_rows(rows);
    HopResult hr = hop_forward(t, stacks[i]->layer(k), rows[0], pool, idx.pair_row, idx, opt);
    auto s = t.value(hr.features);
    out.h.emplace_back(std::vector<Real>(s.begin(), s.end()));
  }
  return out;
}

/// o_hat for every agent on one graph; K = 0 returns the encoded features.
inline std::vector<DenseVector> multihop_forward(std::span<DgatStack* const> stacks,
                                                 const std::vector<DenseVector>& obs, const CommGraph& g,
                                                 const DgatOptions& opt = {}) {
  const std::size_t n = stacks.size();
  if (obs.size() != n) throw ConfigError("multihop_forward: one observation per agent required");
  std::vector<Tape> tapes(n);
  std::vector<Tape*> tp;
  std::vector<DenseMatrix> ob;
  std::vector<const DenseMatrix*> op;
  for (std::size_t i = 0; i < n; ++i) {
    tp.push_back(&tapes[i]);
    ob.push_back(DenseMatrix::row(obs[i]));
  }
  for (auto& m : ob) op.push_back(&m);
  const CommGraph* graphs[1] = {&g};
  MultihopResult r = multihop_forward(stacks, tp, op, graphs, opt);
  std::vector<DenseVector> out;
  for (AgentId i = 0; i < n; ++i) out.push_back(r.output(i).row_vector(0));
  return out;
}

inline Real mse(const DenseVector& a, const DenseVector& b) {
  if (a.dim() != b.dim() || a.dim() == 0) throw ConfigError("mse: dimension mismatch");
  Real s = 0.0;
  for (std::size_t c = 0; c < a.dim(); ++c) s += (a[c] - b[c]) * (a[c] - b[c]);
  return s / static_cast<Real>(a.dim());
}

/// L^i = alpha (1/|N^i|) sum_{j in N^i} MSE(o_hat^i, o_hat^j).
inline std::vector<Real> consensus_loss(const std::vector<DenseVector>& outputs, const CommGraph& g, Real alpha) {
  if (alpha < 0.0) throw ConfigError("consensus_loss: alpha must be non-negative");
  if (outputs.size() != g.size()) throw ConfigError("consensus_loss: one output per agent required");
  std::vector<Real> out(g.size(), 0.0);
  for (AgentId i = 0; i < g.size(); ++i) {
    const auto& nb = g.neighbors(i);
    Real s = 0.0;
    for (AgentId j : nb) s += mse(outputs[i], outputs[j]);
    out[i] = alpha * s / static_cast<Real>(nb.size());
  }
  return out;
}

/// psi^i <- sum_j c(i,j) psi^j over the D-GAT parameters only. Every hop layer
/// must have identical shapes across agents; encoders are mixed only between
/// agents whose observation dims agree, otherwise they stay local.
inline void dsgd_average(std::span<DgatStack* const> stacks, const ConsensusWeights& weights) {
  const std::size_t n = stacks.size();
  if (weights.size() != n) throw ConfigError("dsgd_average: weights do not match agent count");
  if (n == 0) return;
  std::vector<std::vector<Parameter*>> params(n);
  for (std::size_t i = 0; i < n; ++i) params[i] = stacks[i]->parameters();
  for (std::size_t i = 1; i < n; ++i) {
    if (params[i].size() != params[0].size()) throw ConfigError("dsgd_average: agents have different layer counts");
    for (std::size_t k = 2; k < params[i].size(); ++k) {
      if (params[i][k]->value().rows() != params[0][k]->value().rows() ||
          params[i][k]->value().cols() != params[0][k]->value().cols()) {
        throw ConfigError("dsgd_average: parameter '" + params[i][k]->name() + "' has shape " +
                          params[i][k]->value().shape_str() + ", expected " + params[0][k]->value().shape_str());
      }
    }
  }
  // Snapshot the half-step parameters so every agent mixes the same values.
  std::vector<std::vector<DenseMatrix>> half(n);
  for (std::size_t i = 0; i < n; ++i)
    for (Parameter* p : params[i]) half[i].push_back(p->value());

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < params[i].size(); ++k) {
      DenseMatrix& dst = params[i][k]->value();
      if (k < 2) {
        bool same = true;
        for (std::size_t j = 0; j < n; ++j) {
          if (weights(i, j) != 0.0 && (half[j][k].rows() != dst.rows() || half[j][k].cols() != dst.cols())) same = false;
        }
        if (!same) continue;
      }
      // theta_i + sum_j c_ij (theta_j - theta_i): rows of c sum to one, and
      // identical parameters stay bit-identical.
      const Real* own = half[i][k].data();
      std::vector<Real> acc(own, own + dst.size());
      for (std::size_t j = 0; j < n; ++j) {
        const Real c = weights(i, j);
        if (c == 0.0 || j == i) continue;
        const Real* src = half[j][k].data();
        for (std::size_t e = 0; e < acc.size(); ++e) acc[e] += c * (src[e] - own[e]);
      }
      std::copy(acc.begin(), acc.end(), dst.data());
    }
  }
}

}  // namespace dgmarl
