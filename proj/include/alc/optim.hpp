#pragma once

#include <span>

#include "alc/tensor.hpp"

namespace alc::nn {

/// One SGD-with-momentum update per element: v <- mu*v - lr*g; p <- p + v.
/// With mu = 0 this is plain SGD.
inline void sgd_momentum_step(std::span<Parameter* const> params, double lr, double momentum) {
  for (Parameter* p : params) {
    auto& v = p->velocity.values;
    const auto& g = p->grad.values;
    auto& w = p->value.values;
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = momentum * v[i] - lr * g[i];
      w[i] += v[i];
    }
  }
}

inline void zero_grads(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

}  // namespace alc::nn
