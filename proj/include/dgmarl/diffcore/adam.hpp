#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dgmarl/diffcore/dense.hpp"
#include "dgmarl/errors.hpp"

namespace dgmarl {

struct AdamConfig {
  Real lr = 5e-4;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-5;
  /// Global-norm clip over every parameter handled by one optimizer; <= 0 disables.
  Real max_grad_norm = 10.0;
};

/// Moment buffers and step counter for one agent's parameter set.
class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(AdamConfig cfg) : cfg_(cfg) {}

  /// Registers a parameter; a positive `lr` overrides the base learning rate for it.
  void add(Parameter& p, Real lr = -1.0) {
    slots_.push_back(Slot{&p, DenseMatrix(p.value().rows(), p.value().cols()),
                          DenseMatrix(p.value().rows(), p.value().cols()), lr > 0.0 ? lr : cfg_.lr});
  }

  const AdamConfig& config() const noexcept { return cfg_; }
  void set_lr(Real lr) {
    cfg_.lr = lr;
    for (auto& s : slots_) s.lr = lr;
  }
  long step_count() const noexcept { return t_; }
  std::size_t num_params() const noexcept { return slots_.size(); }
  Real last_grad_norm() const noexcept { return last_norm_; }
  const DenseMatrix& first_moment(std::size_t i) const { return slots_.at(i).m; }
  const DenseMatrix& second_moment(std::size_t i) const { return slots_.at(i).v; }

  /// Global 2-norm of the registered gradients.
  Real grad_norm() const {
    Real sq = 0.0;
    for (const auto& s : slots_) {
      for (Real g : s.param->grad().span()) sq += g * g;
    }
    return std::sqrt(sq);
  }

  /// Clips the gradients in place to the configured global norm and returns the
  /// pre-clip norm.
  Real clip_gradients() {
    for (const auto& s : slots_) {
      if (!s.param->grad().all_finite()) {
        throw NumericError("non-finite gradient in parameter '" + s.param->name() + "'");
      }
    }
    const Real norm = grad_norm();
    if (cfg_.max_grad_norm > 0.0 && norm > cfg_.max_grad_norm) {
      const Real k = cfg_.max_grad_norm / norm;
      for (auto& s : slots_) {
        for (Real& g : s.param->grad().span()) g *= k;
      }
    }
    return norm;
  }

  /// Clip then one bias-corrected Adam update of every registered parameter.
  void step() {
    last_norm_ = clip_gradients();
    ++t_;
    const Real bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<Real>(t_));
    const Real bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<Real>(t_));
    for (auto& s : slots_) {
      Real* p = s.param->value().data();
      const Real* g = s.param->grad().data();
      Real* m = s.m.data();
      Real* v = s.v.data();
      const std::size_t n = s.param->size();
      for (std::size_t i = 0; i < n; ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const Real mhat = m[i] / bc1;
        const Real vhat = v[i] / bc2;
        p[i] -= s.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  void zero_grad() {
    for (auto& s : slots_) s.param->zero_grad();
  }

 private:
  struct Slot {
    Parameter* param;
    DenseMatrix m;
    DenseMatrix v;
    Real lr;
  };
  AdamConfig cfg_{};
  std::vector<Slot> slots_;
  long t_ = 0;
  Real last_norm_ = 0.0;
};

}  // namespace dgmarl
