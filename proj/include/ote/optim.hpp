#pragma once

#include <cmath>

#include "ote/errors.hpp"
#include "ote/tensor.hpp"

namespace ote {

/// Root-mean-square gradient scaling:
///   v <- alpha * v + (1 - alpha) * g^2
///   w <- w - lr * g / (sqrt(v) + eps)
template <class T>
class RmsProp {
 public:
  double alpha = 0.99;
  double eps = 1e-8;

  RmsProp() = default;
  explicit RmsProp(const ParameterSet<T>& layout) : sq_(layout.zeros_like()) {}

  /// Per-parameter running mean of squared gradients (checkpointed).
  ParameterSet<T>& state() noexcept { return sq_; }
  const ParameterSet<T>& state() const noexcept { return sq_; }

  void step(ParameterSet<T>& params, const ParameterSet<T>& grads, double lr) {
    if (!params.same_layout(grads) || !params.same_layout(sq_))
      throw ShapeMismatch("RmsProp::step: parameter layout mismatch");
    const T a = static_cast<T>(alpha), one_minus_a = static_cast<T>(1.0 - alpha);
    const T e = static_cast<T>(eps), r = static_cast<T>(lr);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& w = params[i].data;
      auto& v = sq_[i].data;
      const auto& g = grads[i].data;
      for (std::size_t j = 0; j < w.size(); ++j) {
        v[j] = a * v[j] + one_minus_a * g[j] * g[j];
        w[j] -= r * g[j] / (std::sqrt(v[j]) + e);
      }
    }
  }

 private:
  ParameterSet<T> sq_;
};

}  // namespace ote
