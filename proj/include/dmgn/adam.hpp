#pragma once

#include "dmgn/tensor.hpp"

namespace dmgn {

// First/second moment buffers plus the step counter for one parameter tensor.
template <typename T>
struct AdamState {
  std::vector<T> m;
  std::vector<T> v;
  long t = 0;
};

// Standard bias-corrected Adam update, in place on `param`.
template <typename T>
void adam_step(Tensor<T>& param, const T* grad, AdamState<T>& state, T lr, T beta1 = T(0.9),
               T beta2 = T(0.999), T eps = T(1e-8)) {
  const size_t n = static_cast<size_t>(param.numel());
  if (state.m.empty()) {
    state.m.assign(n, T(0));
    state.v.assign(n, T(0));
  }
  if (state.m.size() != n || state.v.size() != n)
    throw ShapeError("adam_step: state size " + std::to_string(state.m.size()) +
                     " vs param size " + std::to_string(n));
  if (state.t < 0) throw ShapeError("adam_step: negative step count");
  state.t += 1;
  const T bc1 = T(1) - std::pow(beta1, static_cast<T>(state.t));
  const T bc2 = T(1) - std::pow(beta2, static_cast<T>(state.t));
  T* p = param.data();
  for (size_t i = 0; i < n; ++i) {
    const T g = grad[i];
    state.m[i] = beta1 * state.m[i] + (T(1) - beta1) * g;
    state.v[i] = beta2 * state.v[i] + (T(1) - beta2) * g * g;
    const T mhat = state.m[i] / bc1;
    const T vhat = state.v[i] / bc2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

}  // namespace dmgn
