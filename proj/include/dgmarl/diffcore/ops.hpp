#pragma once

#include "dgmarl/diffcore/tape.hpp"

namespace dgmarl {

// Value-level conveniences over single vectors. Training code records the same
// primitives on a Tape instead.

inline DenseVector linear(const DenseVector& x, const DenseMatrix& w, const DenseVector& b) {
  if (w.cols() != x.dim()) {
    throw ConfigError("linear: W is " + w.shape_str() + " but x has dim " + std::to_string(x.dim()));
  }
  if (b.dim() != w.rows()) {
    throw ConfigError("linear: W is " + w.shape_str() + " but b has dim " + std::to_string(b.dim()));
  }
  Tape t;
  Var y = t.linear(t.constant(x), t.constant(w), t.constant(b));
  auto s = t.value(y);
  return DenseVector(std::vector<Real>(s.begin(), s.end()));
}

inline DenseVector leaky_relu(const DenseVector& x, Real slope = 0.2) {
  if (!(slope > 0.0 && slope < 1.0)) throw ConfigError("leaky_relu: slope must lie in (0, 1)");
  DenseVector y(x.dim());
  for (std::size_t i = 0; i < x.dim(); ++i) y[i] = x[i] > 0.0 ? x[i] : slope * x[i];
  return y;
}

inline DenseVector softmax(const DenseVector& scores) {
  if (scores.dim() == 0) throw UsageError("softmax: empty input");
  Tape t;
  Var y = t.softmax_rows(t.constant(scores));
  auto s = t.value(y);
  return DenseVector(std::vector<Real>(s.begin(), s.end()));
}

}  // namespace dgmarl
