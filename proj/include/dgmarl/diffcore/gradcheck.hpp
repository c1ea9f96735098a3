#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dgmarl/diffcore/dense.hpp"

namespace dgmarl {

struct GradCheckReport {
  /// Largest per-tensor relative error ||analytic - numeric|| / max(||analytic||, ||numeric||).
  Real max_rel_error = 0.0;
  std::string worst_param;
  std::size_t entries_checked = 0;
};

/// Central finite differences against the analytic gradients left in
/// Parameter::grad() by `analytic` (which must zero and recompute them).
/// `loss` evaluates the scalar objective at the current parameter values.
/// Tensors whose analytic and numeric gradients both have norm below
/// `abs_floor` count as exact matches.
inline GradCheckReport check_gradients(std::span<Parameter* const> params, const std::function<Real()>& loss,
                                       const std::function<void()>& analytic, Real step = 1e-5,
                                       Real abs_floor = 1e-9) {
  analytic();
  std::vector<DenseMatrix> grads;
  grads.reserve(params.size());
  for (Parameter* p : params) grads.push_back(p->grad());

  GradCheckReport rep;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    Real diff_sq = 0.0, a_sq = 0.0, n_sq = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      Real& x = p.value().data()[i];
      const Real orig = x;
      x = orig + step;
      const Real up = loss();
      x = orig - step;
      const Real down = loss();
      x = orig;
      const Real numeric = (up - down) / (2.0 * step);
      const Real a = grads[k].data()[i];
      diff_sq += (a - numeric) * (a - numeric);
      a_sq += a * a;
      n_sq += numeric * numeric;
      ++rep.entries_checked;
    }
    const Real denom = std::max(std::sqrt(a_sq), std::sqrt(n_sq));
    const Real rel = denom < abs_floor ? 0.0 : std::sqrt(diff_sq) / denom;
    if (rel >= rep.max_rel_error) {
      rep.max_rel_error = rel;
      rep.worst_param = p.name();
    }
  }
  return rep;
}

}  // namespace dgmarl
