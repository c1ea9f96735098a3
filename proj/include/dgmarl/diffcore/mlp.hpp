#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dgmarl/diffcore/tape.hpp"
#include "dgmarl/rng.hpp"

namespace dgmarl {

/// Fills a weight matrix from U(-b, b), b = gain * sqrt(3 / fan_in) (unit-variance
/// preactivations for unit-variance inputs).
inline void init_uniform(Parameter& w, Rng& rng, Real gain = 1.0) {
  const Real bound = gain * std::sqrt(3.0 / static_cast<Real>(w.value().cols()));
  for (Real& x : w.value().span()) x = uniform(rng, -bound, bound);
}

/// Fully connected network with tanh hidden activations and a linear head.
class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::string& name, const std::vector<std::size_t>& sizes, Rng& rng, Real out_gain = 1.0) {
    if (sizes.size() < 2) throw ConfigError("Mlp '" + name + "': need at least input and output sizes");
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      weights_.emplace_back(name + ".w" + std::to_string(l), sizes[l + 1], sizes[l]);
      biases_.emplace_back(name + ".b" + std::to_string(l), 1, sizes[l + 1]);
      init_uniform(weights_.back(), rng, l + 2 == sizes.size() ? out_gain : 1.0);
    }
  }

  std::size_t in_dim() const { return weights_.front().value().cols(); }
  std::size_t out_dim() const { return weights_.back().value().rows(); }
  std::size_t num_layers() const { return weights_.size(); }

  /// x: B x in_dim -> B x out_dim.
  Var forward(Tape& t, Var x) {
    Var h = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      h = t.linear(h, t.param(weights_[l]), t.param(biases_[l]));
      if (l + 1 < weights_.size()) h = t.tanh(h);
    }
    return h;
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      out.push_back(&weights_[l]);
      out.push_back(&biases_[l]);
    }
    return out;
  }
  std::vector<const Parameter*> parameters() const {
    std::vector<const Parameter*> out;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      out.push_back(&weights_[l]);
      out.push_back(&biases_[l]);
    }
    return out;
  }

 private:
  std::vector<Parameter> weights_;
  std::vector<Parameter> biases_;
};

}  // namespace dgmarl
