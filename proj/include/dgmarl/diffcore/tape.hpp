#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "dgmarl/diffcore/dense.hpp"
#include "dgmarl/errors.hpp"

namespace dgmarl {

/// Handle to a node recorded on a Tape. Every value is a rows x cols matrix;
/// vectors are 1 x n rows and scalars are 1 x 1.
struct Var {
  std::uint32_t id = std::numeric_limits<std::uint32_t>::max();
  bool valid() const noexcept { return id != std::numeric_limits<std::uint32_t>::max(); }
};

/// Reverse-mode gradient tape over small dense matrices.
///
/// Values live in one flat arena; parameters are referenced in place and their
/// gradients are accumulated straight into Parameter::grad(). clear() keeps the
/// arena capacity so a tape can be reused across minibatches without
/// reallocating. A tape is single-owner and must not be shared across threads.
class Tape {
 public:
  enum class Op : std::uint8_t {
    Constant,
    Param,
    Linear,
    Add,
    Sub,
    Mul,
    Scale,
    Exp,
    Tanh,
    LeakyRelu,
    Softplus,
    ConcatCols,
    StackRows,
    GatherRows,
    GatherCols,
    SoftmaxRows,
    LogSoftmaxRows,
    RowSum,
    RowScale,
    SegmentSoftmax,
    SegmentNormalize,
    SegmentWeightedSum,
    Clamp,
    Minimum,
    Huber,
    Sum,
    Mean,
  };

  void clear() {
    nodes_.clear();
    vals_.clear();
    grads_.clear();
    ints_.clear();
    visits_ = 0;
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  std::size_t rows(Var v) const { return node(v).rows; }
  std::size_t cols(Var v) const { return node(v).cols; }

  const Real* value_ptr(Var v) const {
    const Node& n = node(v);
    return n.param != nullptr ? n.param->value().data() : vals_.data() + n.off;
  }
  std::span<const Real> value(Var v) const {
    const Node& n = node(v);
    return {value_ptr(v), static_cast<std::size_t>(n.rows) * n.cols};
  }
  Real scalar(Var v) const {
    if (node(v).rows * node(v).cols != 1) throw UsageError("Tape::scalar: value is not 1x1");
    return value_ptr(v)[0];
  }
  DenseMatrix matrix(Var v) const {
    auto s = value(v);
    return DenseMatrix(node(v).rows, node(v).cols, std::vector<Real>(s.begin(), s.end()));
  }
  /// Gradient of the last backward() w.r.t. an intermediate node.
  std::span<const Real> grad(Var v) const {
    const Node& n = node(v);
    if (n.param != nullptr) return n.param->grad().span();
    if (grads_.size() < vals_.size()) throw UsageError("Tape::grad: backward() has not run");
    return {grads_.data() + n.off, static_cast<std::size_t>(n.rows) * n.cols};
  }
  bool needs_grad(Var v) const { return node(v).needs_grad; }
  std::size_t last_backward_visits() const noexcept { return visits_; }

  // ---- leaves ------------------------------------------------------------

  Var constant(std::span<const Real> values, std::size_t rows, std::size_t cols) {
    if (values.size() != rows * cols) {
      throw ConfigError("Tape::constant: " + std::to_string(values.size()) + " values for " +
                        std::to_string(rows) + "x" + std::to_string(cols));
    }
    Var out = push(Op::Constant, rows, cols, false);
    std::copy(values.begin(), values.end(), vals_.begin() + static_cast<std::ptrdiff_t>(node(out).off));
    return out;
  }
  Var constant(const DenseMatrix& m) { return constant(m.span(), m.rows(), m.cols()); }
  Var constant(const DenseVector& v) { return constant(v.span(), 1, v.dim()); }
  Var scalar_constant(Real x) { return constant(std::span<const Real>(&x, 1), 1, 1); }

  /// Copy of a node's current value with no gradient path.
  Var detach(Var v) {
    auto s = value(v);
    std::vector<Real> copy(s.begin(), s.end());
    return constant(copy, rows(v), cols(v));
  }

  Var param(Parameter& p) {
    Node n;
    n.op = Op::Param;
    n.rows = static_cast<std::uint32_t>(p.value().rows());
    n.cols = static_cast<std::uint32_t>(p.value().cols());
    n.needs_grad = true;
    n.param = &p;
    nodes_.push_back(n);
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  // ---- dense algebra -----------------------------------------------------

  /// y = x W^T + b, row-wise. x: B x n, W: m x n, b: 1 x m (optional).
  Var linear(Var x, Var w, Var b = {}) {
    const Node& nx = node(x);
    const Node& nw = node(w);
    if (nx.cols != nw.cols) {
      throw ConfigError("linear: input dim " + std::to_string(nx.cols) + " does not match weight cols " +
                        std::to_string(nw.cols));
    }
    if (b.valid() && (node(b).rows * node(b).cols != nw.rows)) {
      throw ConfigError("linear: bias dim " + std::to_string(node(b).rows * node(b).cols) +
                        " does not match weight rows " + std::to_string(nw.rows));
    }
    const std::size_t batch = nx.rows, in = nx.cols, out_dim = nw.rows;
    Var out = push(Op::Linear, batch, out_dim, any_grad({x, w, b}), x, w, b);
    const Real* xv = value_ptr(x);
    const Real* wv = value_ptr(w);
    const Real* bv = b.valid() ? value_ptr(b) : nullptr;
    Real* y = mut_val(out);
    for (std::size_t r = 0; r < batch; ++r) {
      const Real* xr = xv + r * in;
      for (std::size_t o = 0; o < out_dim; ++o) {
        const Real* wr = wv + o * in;
        Real s = bv ? bv[o] : 0.0;
        for (std::size_t c = 0; c < in; ++c) s += xr[c] * wr[c];
        y[r * out_dim + o] = s;
      }
    }
    return out;
  }

  Var add(Var a, Var b) { return binary(Op::Add, a, b); }
  Var sub(Var a, Var b) { return binary(Op::Sub, a, b); }
  Var mul(Var a, Var b) { return binary(Op::Mul, a, b); }

  Var scale(Var a, Real s) {
    Var out = push(Op::Scale, rows(a), cols(a), node(a).needs_grad, a);
    node_mut(out).a0 = s;
    unary_map(a, out, [s](Real x) { return s * x; });
    return out;
  }

  Var exp(Var a) {
    Var out = push(Op::Exp, rows(a), cols(a), node(a).needs_grad, a);
    unary_map(a, out, [](Real x) { return std::exp(x); });
    return out;
  }
  Var tanh(Var a) {
    Var out = push(Op::Tanh, rows(a), cols(a), node(a).needs_grad, a);
    unary_map(a, out, [](Real x) { return std::tanh(x); });
    return out;
  }
  Var leaky_relu(Var a, Real slope = 0.2) {
    Var out = push(Op::LeakyRelu, rows(a), cols(a), node(a).needs_grad, a);
    node_mut(out).a0 = slope;
    unary_map(a, out, [slope](Real x) { return x > 0.0 ? x : slope * x; });
    return out;
  }
  Var softplus(Var a) {
    Var out = push(Op::Softplus, rows(a), cols(a), node(a).needs_grad, a);
    unary_map(a, out, [](Real x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); });
    return out;
  }
  Var clamp(Var a, Real lo, Real hi) {
    Var out = push(Op::Clamp, rows(a), cols(a), node(a).needs_grad, a);
    node_mut(out).a0 = lo;
    node_mut(out).a1 = hi;
    unary_map(a, out, [lo, hi](Real x) { return std::clamp(x, lo, hi); });
    return out;
  }
  /// Elementwise Huber loss of the residual: 0.5 x^2 inside |x| <= delta, linear outside.
  Var huber(Var a, Real delta) {
    Var out = push(Op::Huber, rows(a), cols(a), node(a).needs_grad, a);
    node_mut(out).a0 = delta;
    unary_map(a, out, [delta](Real x) {
      const Real ax = std::abs(x);
      return ax <= delta ? 0.5 * x * x : delta * (ax - 0.5 * delta);
    });
    return out;
  }
  /// Elementwise minimum; ties route the gradient to `a`.
  Var minimum(Var a, Var b) { return binary(Op::Minimum, a, b); }

  Var concat_cols(Var a, Var b) {
    if (rows(a) != rows(b)) throw ConfigError("concat_cols: row mismatch");
    const std::size_t r = rows(a), ca = cols(a), cb = cols(b);
    Var out = push(Op::ConcatCols, r, ca + cb, any_grad({a, b}), a, b);
    const Real* av = value_ptr(a);
    const Real* bv = value_ptr(b);
    Real* y = mut_val(out);
    for (std::size_t i = 0; i < r; ++i) {
      std::copy(av + i * ca, av + (i + 1) * ca, y + i * (ca + cb));
      std::copy(bv + i * cb, bv + (i + 1) * cb, y + i * (ca + cb) + ca);
    }
    return out;
  }

  Var stack_rows(std::span<const Var> parts) {
    if (parts.empty()) throw UsageError("stack_rows: no inputs");
    const std::size_t c = cols(parts[0]);
    std::size_t total = 0;
    bool ng = false;
    for (Var p : parts) {
      if (cols(p) != c) throw ConfigError("stack_rows: column mismatch");
      total += rows(p);
      ng = ng || node(p).needs_grad;
    }
    Var out = push(Op::StackRows, total, c, ng);
    Node& n = node_mut(out);
    n.ioff = ints_.size();
    n.icount = parts.size();
    for (Var p : parts) ints_.push_back(p.id);
    Real* y = mut_val(out);
    for (Var p : parts) {
      auto s = value(p);
      y = std::copy(s.begin(), s.end(), y);
    }
    return out;
  }

  /// out[r] = src[idx[r]].
  Var gather_rows(Var src, std::span<const std::uint32_t> idx) {
    const std::size_t c = cols(src);
    for (auto i : idx) {
      if (i >= rows(src)) throw UsageError("gather_rows: index out of range");
    }
    Var out = push(Op::GatherRows, idx.size(), c, node(src).needs_grad, src);
    store_ints(out, idx);
    const Real* sv = value_ptr(src);
    Real* y = mut_val(out);
    for (std::size_t r = 0; r < idx.size(); ++r) std::copy(sv + idx[r] * c, sv + (idx[r] + 1) * c, y + r * c);
    return out;
  }

  /// out[r] = src[r, idx[r]], a B x 1 column.
  Var gather_cols(Var src, std::span<const std::uint32_t> idx) {
    if (idx.size() != rows(src)) throw ConfigError("gather_cols: one index per row required");
    const std::size_t c = cols(src);
    for (auto i : idx) {
      if (i >= c) throw UsageError("gather_cols: index out of range");
    }
    Var out = push(Op::GatherCols, idx.size(), 1, node(src).needs_grad, src);
    store_ints(out, idx);
    const Real* sv = value_ptr(src);
    Real* y = mut_val(out);
    for (std::size_t r = 0; r < idx.size(); ++r) y[r] = sv[r * c + idx[r]];
    return out;
  }

  /// Numerically stabilized softmax of each row (max subtracted first).
  Var softmax_rows(Var a) {
    Var out = push(Op::SoftmaxRows, rows(a), cols(a), node(a).needs_grad, a);
    const std::size_t c = cols(a);
    const Real* x = value_ptr(a);
    Real* y = mut_val(out);
    for (std::size_t r = 0; r < rows(a); ++r) softmax_span(x + r * c, y + r * c, c);
    return out;
  }

  Var log_softmax_rows(Var a) {
    Var out = push(Op::LogSoftmaxRows, rows(a), cols(a), node(a).needs_grad, a);
    const std::size_t c = cols(a);
    const Real* x = value_ptr(a);
    Real* y = mut_val(out);
    for (std::size_t r = 0; r < rows(a); ++r) {
      const Real* xr = x + r * c;
      const Real mx = *std::max_element(xr, xr + c);
      Real s = 0.0;
      for (std::size_t j = 0; j < c; ++j) s += std::exp(xr[j] - mx);
      const Real lse = mx + std::log(s);
      for (std::size_t j = 0; j < c; ++j) y[r * c + j] = xr[j] - lse;
    }
    return out;
  }

  /// B x C -> B x 1.
  Var row_sum(Var a) {
    Var out = push(Op::RowSum, rows(a), 1, node(a).needs_grad, a);
    const std::size_t c = cols(a);
    const Real* x = value_ptr(a);
    Real* y = mut_val(out);
    for (std::size_t r = 0; r < rows(a); ++r) {
      Real s = 0.0;
      for (std::size_t j = 0; j < c; ++j) s += x[r * c + j];
      y[r] = s;
    }
    return out;
  }

  /// out[r, c] = a[r, c] * w[r] for a B x 1 column w.
  Var row_scale(Var a, Var w) {
    if (rows(w) != rows(a) || cols(w) != 1) throw ConfigError("row_scale: weight must be a B x 1 column");
    Var out = push(Op::RowScale, rows(a), cols(a), any_grad({a, w}), a, w);
    const std::size_t c = cols(a);
    const Real* x = value_ptr(a);
    const Real* wv = value_ptr(w);
    Real* y = mut_val(out);
    for (std::size_t r = 0; r < rows(a); ++r) {
      for (std::size_t j = 0; j < c; ++j) y[r * c + j] = x[r * c + j] * wv[r];
    }
    return out;
  }

  /// Softmax over contiguous segments of a P x 1 column; offsets has B+1 entries.
  Var segment_softmax(Var e, std::span<const std::uint32_t> offsets) {
    check_segments(e, offsets);
    Var out = push(Op::SegmentSoftmax, rows(e), 1, node(e).needs_grad, e);
    store_ints(out, offsets);
    const Real* x = value_ptr(e);
    Real* y = mut_val(out);
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
      softmax_span(x + offsets[s], y + offsets[s], offsets[s + 1] - offsets[s]);
    }
    return out;
  }

  /// x / sum(x) within each segment (inputs must be positive).
  Var segment_normalize(Var e, std::span<const std::uint32_t> offsets) {
    check_segments(e, offsets);
    Var out = push(Op::SegmentNormalize, rows(e), 1, node(e).needs_grad, e);
    store_ints(out, offsets);
    const Real* x = value_ptr(e);
    Real* y = mut_val(out);
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
      Real sum = 0.0;
      for (auto p = offsets[s]; p < offsets[s + 1]; ++p) sum += x[p];
      for (auto p = offsets[s]; p < offsets[s + 1]; ++p) y[p] = x[p] / sum;
    }
    return out;
  }

  /// out[b] = sum_{p in segment b} alpha[p] * h[p]. alpha: P x 1, h: P x d -> B x d.
  Var segment_weighted_sum(Var alpha, Var h, std::span<const std::uint32_t> offsets) {
    check_segments(alpha, offsets);
    if (rows(h) != rows(alpha)) throw ConfigError("segment_weighted_sum: row mismatch");
    const std::size_t segs = offsets.size() - 1, d = cols(h);
    Var out = push(Op::SegmentWeightedSum, segs, d, any_grad({alpha, h}), alpha, h);
    store_ints(out, offsets);
    const Real* av = value_ptr(alpha);
    const Real* hv = value_ptr(h);
    Real* y = mut_val(out);
    for (std::size_t s = 0; s < segs; ++s) {
      for (auto p = offsets[s]; p < offsets[s + 1]; ++p) {
        for (std::size_t c = 0; c < d; ++c) y[s * d + c] += av[p] * hv[p * d + c];
      }
    }
    return out;
  }

  Var sum(Var a) {
    Var out = push(Op::Sum, 1, 1, node(a).needs_grad, a);
    Real s = 0.0;
    for (Real x : value(a)) s += x;
    mut_val(out)[0] = s;
    return out;
  }
  Var mean(Var a) {
    const std::size_t n = rows(a) * cols(a);
    if (n == 0) throw UsageError("mean: empty input");
    Var out = push(Op::Mean, 1, 1, node(a).needs_grad, a);
    Real s = 0.0;
    for (Real x : value(a)) s += x;
    mut_val(out)[0] = s / static_cast<Real>(n);
    return out;
  }

  // ---- reverse pass ------------------------------------------------------

  /// Reverse-mode sweep from a 1x1 output. Parameter gradients are added to
  /// Parameter::grad(); callers zero them between steps.
  void backward(Var out) {
    const Node& no = node(out);
    if (no.rows * no.cols != 1) {
      throw UsageError("backward: output must be a scalar, got " + std::to_string(no.rows) + "x" +
                       std::to_string(no.cols));
    }
    grads_.assign(vals_.size(), 0.0);
    if (!no.needs_grad) {
      visits_ = 0;
      return;
    }
    grad_mut(out)[0] += 1.0;
    visits_ = 0;
    for (std::size_t i = out.id + 1; i-- > 0;) {
      ++visits_;
      const Node& n = nodes_[i];
      if (!n.needs_grad) continue;
      backprop(Var{static_cast<std::uint32_t>(i)});
    }
  }

 private:
  struct Node {
    Op op = Op::Constant;
    bool needs_grad = false;
    std::uint32_t rows = 0, cols = 0;
    std::size_t off = 0;
    Var in0{}, in1{}, in2{};
    std::size_t ioff = 0, icount = 0;
    Real a0 = 0.0, a1 = 0.0;
    Parameter* param = nullptr;
  };

  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) throw UsageError("Tape: invalid variable handle");
    return nodes_[v.id];
  }
  Node& node_mut(Var v) { return nodes_[v.id]; }

  Real* mut_val(Var v) { return vals_.data() + nodes_[v.id].off; }
  Real* grad_mut(Var v) {
    Node& n = nodes_[v.id];
    return n.param != nullptr ? n.param->grad().data() : grads_.data() + n.off;
  }

  bool any_grad(std::initializer_list<Var> vs) const {
    for (Var v : vs) {
      if (v.valid() && node(v).needs_grad) return true;
    }
    return false;
  }

  Var push(Op op, std::size_t r, std::size_t c, bool ng, Var a = {}, Var b = {}, Var d = {}) {
    Node n;
    n.op = op;
    n.rows = static_cast<std::uint32_t>(r);
    n.cols = static_cast<std::uint32_t>(c);
    n.needs_grad = ng;
    n.off = vals_.size();
    n.in0 = a;
    n.in1 = b;
    n.in2 = d;
    vals_.resize(vals_.size() + r * c, 0.0);
    nodes_.push_back(n);
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  void store_ints(Var v, std::span<const std::uint32_t> xs) {
    Node& n = node_mut(v);
    n.ioff = ints_.size();
    n.icount = xs.size();
    ints_.insert(ints_.end(), xs.begin(), xs.end());
  }

  void check_segments(Var e, std::span<const std::uint32_t> offsets) const {
    if (cols(e) != 1) throw ConfigError("segment op: scores must be a P x 1 column");
    if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != rows(e)) {
      throw ConfigError("segment op: offsets must span [0, P]");
    }
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
      if (offsets[s + 1] <= offsets[s]) throw ConfigError("segment op: empty segment");
    }
  }

  template <class F>
  void unary_map(Var a, Var out, F f) {
    const Real* x = value_ptr(a);
    Real* y = mut_val(out);
    const std::size_t n = rows(a) * cols(a);
    for (std::size_t i = 0; i < n; ++i) y[i] = f(x[i]);
  }

  Var binary(Op op, Var a, Var b) {
    if (rows(a) != rows(b) || cols(a) != cols(b)) {
      throw ConfigError("elementwise op: shape mismatch " + std::to_string(rows(a)) + "x" + std::to_string(cols(a)) +
                        " vs " + std::to_string(rows(b)) + "x" + std::to_string(cols(b)));
    }
    Var out = push(op, rows(a), cols(a), any_grad({a, b}), a, b);
    const Real* x = value_ptr(a);
    const Real* z = value_ptr(b);
    Real* y = mut_val(out);
    const std::size_t n = rows(a) * cols(a);
    switch (op) {
      case Op::Add:
        for (std::size_t i = 0; i < n; ++i) y[i] = x[i] + z[i];
        break;
      case Op::Sub:
        for (std::size_t i = 0; i < n; ++i) y[i] = x[i] - z[i];
        break;
      case Op::Mul:
        for (std::size_t i = 0; i < n; ++i) y[i] = x[i] * z[i];
        break;
      case Op::Minimum:
        for (std::size_t i = 0; i < n; ++i) y[i] = x[i] <= z[i] ? x[i] : z[i];
        break;
      default:
        break;
    }
    return out;
  }

  static void softmax_span(const Real* x, Real* y, std::size_t n) {
    const Real mx = *std::max_element(x, x + n);
    Real s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      s += y[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[j] /= s;
  }

  bool wants(Var v) const { return v.valid() && nodes_[v.id].needs_grad; }

  void backprop(Var v) {
    const Node n = nodes_[v.id];
    const std::size_t count = static_cast<std::size_t>(n.rows) * n.cols;
    if (n.op == Op::Constant || n.op == Op::Param) return;
    const Real* g = grads_.data() + n.off;
    const Real* y = vals_.data() + n.off;
    switch (n.op) {
      case Op::Linear: {
        const std::size_t batch = n.rows, out_dim = n.cols, in = cols(n.in0);
        const Real* xv = value_ptr(n.in0);
        const Real* wv = value_ptr(n.in1);
        if (wants(n.in0)) {
          Real* gx = grad_mut(n.in0);
          for (std::size_t r = 0; r < batch; ++r) {
            for (std::size_t o = 0; o < out_dim; ++o) {
              const Real go = g[r * out_dim + o];
              if (go == 0.0) continue;
              const Real* wr = wv + o * in;
              for (std::size_t c = 0; c < in; ++c) gx[r * in + c] += go * wr[c];
            }
          }
        }
        if (wants(n.in1)) {
          Real* gw = grad_mut(n.in1);
          for (std::size_t r = 0; r < batch; ++r) {
            const Real* xr = xv + r * in;
            for (std::size_t o = 0; o < out_dim; ++o) {
              const Real go = g[r * out_dim + o];
              if (go == 0.0) continue;
              Real* gwr = gw + o * in;
              for (std::size_t c = 0; c < in; ++c) gwr[c] += go * xr[c];
            }
          }
        }
        if (wants(n.in2)) {
          Real* gb = grad_mut(n.in2);
          for (std::size_t r = 0; r < batch; ++r) {
            for (std::size_t o = 0; o < out_dim; ++o) gb[o] += g[r * out_dim + o];
          }
        }
        break;
      }
      case Op::Add:
        if (wants(n.in0)) axpy(grad_mut(n.in0), g, count, 1.0);
        if (wants(n.in1)) axpy(grad_mut(n.in1), g, count, 1.0);
        break;
      case Op::Sub:
        if (wants(n.in0)) axpy(grad_mut(n.in0), g, count, 1.0);
        if (wants(n.in1)) axpy(grad_mut(n.in1), g, count, -1.0);
        break;
      case Op::Mul: {
        const Real* av = value_ptr(n.in0);
        const Real* bv = value_ptr(n.in1);
        if (wants(n.in0)) {
          Real* ga = grad_mut(n.in0);
          for (std::size_t i = 0; i < count; ++i) ga[i] += g[i] * bv[i];
        }
        if (wants(n.in1)) {
          Real* gb = grad_mut(n.in1);
          for (std::size_t i = 0; i < count; ++i) gb[i] += g[i] * av[i];
        }
        break;
      }
      case Op::Minimum: {
        const Real* av = value_ptr(n.in0);
        const Real* bv = value_ptr(n.in1);
        for (std::size_t i = 0; i < count; ++i) {
          if (av[i] <= bv[i]) {
            if (wants(n.in0)) grad_mut(n.in0)[i] += g[i];
          } else if (wants(n.in1)) {
            grad_mut(n.in1)[i] += g[i];
          }
        }
        break;
      }
      case Op::Scale:
        axpy(grad_mut(n.in0), g, count, n.a0);
        break;
      case Op::Exp: {
        Real* ga = grad_mut(n.in0);
        for (std::size_t i = 0; i < count; ++i) ga[i] += g[i] * y[i];
        break;
      }
      case Op::Tanh: {
        Real* ga = grad_mut(n.in0);
        for (std::size_t i = 0; i < count; ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
        break;
      }
      case Op::LeakyRelu: {
        const Real* x = value_ptr(n.in0);
        Real* ga = grad_mut(n.in0);
        for (std::size_t i = 0; i < count; ++i) ga[i] += g[i] * (x[i] > 0.0 ? 1.0 : n.a0);
        break;
      }
      case Op::Softplus: {
        const Real* x = value_ptr(n.in0);
        Real* ga = grad_mut(n.in0);
        for (std::size_t i = 0; i < count; ++i) ga[i] += g[i] / (1.0 + std::exp(-x[i]));
        break;
      }
      case Op::Clamp: {
        const Real* x = value_ptr(n.in0);
        Real* ga = grad_mut(n.in0);
        for (std::size_t i = 0; i < count; ++i) {
          if (x[i] >= n.a0 && x[i] <= n.a1) ga[i] += g[i];
        }
        break;
      }
      case Op::Huber: {
        const Real* x = value_ptr(n.in0);
        Real* ga = grad_mut(n.in0);
        const Real delta = n.a0;
        for (std::size_t i = 0; i < count; ++i) {
          const Real d = std::abs(x[i]) <= delta ? x[i] : (x[i] > 0.0 ? delta : -delta);
          ga[i] += g[i] * d;
        }
        break;
      }
      case Op::ConcatCols: {
        const std::size_t ca = cols(n.in0), cb = cols(n.in1), c = ca + cb;
        for (std::size_t r = 0; r < n.rows; ++r) {
          if (wants(n.in0)) axpy(grad_mut(n.in0) + r * ca, g + r * c, ca, 1.0);
          if (wants(n.in1)) axpy(grad_mut(n.in1) + r * cb, g + r * c + ca, cb, 1.0);
        }
        break;
      }
      case Op::StackRows: {
        std::size_t at = 0;
        for (std::size_t k = 0; k < n.icount; ++k) {
          Var part{ints_[n.ioff + k]};
          const std::size_t len = rows(part) * cols(part);
          if (wants(part)) axpy(grad_mut(part), g + at, len, 1.0);
          at += len;
        }
        break;
      }
      case Op::GatherRows: {
        const std::size_t c = n.cols;
        Real* gs = grad_mut(n.in0);
        for (std::size_t r = 0; r < n.icount; ++r) axpy(gs + ints_[n.ioff + r] * c, g + r * c, c, 1.0);
        break;
      }
      case Op::GatherCols: {
        const std::size_t c = cols(n.in0);
        Real* gs = grad_mut(n.in0);
        for (std::size_t r = 0; r < n.icount; ++r) gs[r * c + ints_[n.ioff + r]] += g[r];
        break;
      }
      case Op::SoftmaxRows: {
        const std::size_t c = n.cols;
        Real* ga = grad_mut(n.in0);
        for (std::size_t r = 0; r < n.rows; ++r) softmax_back(y + r * c, g + r * c, ga + r * c, c);
        break;
      }
      case Op::LogSoftmaxRows: {
        const std::size_t c = n.cols;
        Real* ga = grad_mut(n.in0);
        for (std::size_t r = 0; r < n.rows; ++r) {
          Real gs = 0.0;
          for (std::size_t j = 0; j < c; ++j) gs += g[r * c + j];
          for (std::size_t j = 0; j < c; ++j) ga[r * c + j] += g[r * c + j] - std::exp(y[r * c + j]) * gs;
        }
        break;
      }
      case Op::RowSum: {
        const std::size_t c = cols(n.in0);
        Real* ga = grad_mut(n.in0);
        for (std::size_t r = 0; r < n.rows; ++r) {
          for (std::size_t j = 0; j < c; ++j) ga[r * c + j] += g[r];
        }
        break;
      }
      case Op::RowScale: {
        const std::size_t c = n.cols;
        const Real* x = value_ptr(n.in0);
        const Real* w = value_ptr(n.in1);
        for (std::size_t r = 0; r < n.rows; ++r) {
          if (wants(n.in0)) axpy(grad_mut(n.in0) + r * c, g + r * c, c, w[r]);
          if (wants(n.in1)) {
            Real s = 0.0;
            for (std::size_t j = 0; j < c; ++j) s += g[r * c + j] * x[r * c + j];
            grad_mut(n.in1)[r] += s;
          }
        }
        break;
      }
      case Op::SegmentSoftmax: {
        Real* ga = grad_mut(n.in0);
        for (std::size_t s = 0; s + 1 < n.icount; ++s) {
          const auto b = ints_[n.ioff + s], e = ints_[n.ioff + s + 1];
          softmax_back(y + b, g + b, ga + b, e - b);
        }
        break;
      }
      case Op::SegmentNormalize: {
        const Real* x = value_ptr(n.in0);
        Real* ga = grad_mut(n.in0);
        for (std::size_t s = 0; s + 1 < n.icount; ++s) {
          const auto b = ints_[n.ioff + s], e = ints_[n.ioff + s + 1];
          Real sum = 0.0, gy = 0.0;
          for (auto p = b; p < e; ++p) {
            sum += x[p];
            gy += g[p] * y[p];
          }
          for (auto p = b; p < e; ++p) ga[p] += (g[p] - gy) / sum;
        }
        break;
      }
      case Op::SegmentWeightedSum: {
        const std::size_t d = n.cols;
        const Real* av = value_ptr(n.in0);
        const Real* hv = value_ptr(n.in1);
        for (std::size_t s = 0; s + 1 < n.icount; ++s) {
          const auto b = ints_[n.ioff + s], e = ints_[n.ioff + s + 1];
          const Real* gs = g + s * d;
          for (auto p = b; p < e; ++p) {
            if (wants(n.in0)) {
              Real acc = 0.0;
              for (std::size_t c = 0; c < d; ++c) acc += gs[c] * hv[p * d + c];
              grad_mut(n.in0)[p] += acc;
            }
            if (wants(n.in1)) axpy(grad_mut(n.in1) + p * d, gs, d, av[p]);
          }
        }
        break;
      }
      case Op::Sum: {
        const std::size_t len = rows(n.in0) * cols(n.in0);
        Real* ga = grad_mut(n.in0);
        for (std::size_t i = 0; i < len; ++i) ga[i] += g[0];
        break;
      }
      case Op::Mean: {
        const std::size_t len = rows(n.in0) * cols(n.in0);
        Real* ga = grad_mut(n.in0);
        const Real s = g[0] / static_cast<Real>(len);
        for (std::size_t i = 0; i < len; ++i) ga[i] += s;
        break;
      }
      case Op::Constant:
      case Op::Param:
        break;
    }
  }

  static void axpy(Real* dst, const Real* src, std::size_t n, Real a) {
    for (std::size_t i = 0; i < n; ++i) dst[i] += a * src[i];
  }

  static void softmax_back(const Real* y, const Real* g, Real* ga, std::size_t n) {
    Real dot = 0.0;
    for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
    for (std::size_t j = 0; j < n; ++j) ga[j] += y[j] * (g[j] - dot);
  }

  std::vector<Node> nodes_;
  std::vector<Real> vals_;
  std::vector<Real> grads_;
  std::vector<std::uint32_t> ints_;
  std::size_t visits_ = 0;
};

}  // namespace dgmarl
