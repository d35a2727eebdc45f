#pragma once

#include "dmgn/ops.hpp"

namespace dmgn {

// Central finite difference of f at one coordinate of `point`.
// f must be deterministic; run this in 64-bit mode.
template <typename T, typename F>
T central_diff(F&& f, const Tensor<T>& point, int index, T eps) {
  Tensor<T> p = point.clone();
  p[index] = point[index] + eps;
  Tensor<T> hi = f(p);
  p[index] = point[index] - eps;
  Tensor<T> lo = f(p);
  T num = hi.value() - lo.value();
  if (!std::isfinite(num)) throw NumericFault("finite_diff_check: f non-finite at perturbed point");
  return num / (T(2) * eps);
}

template <typename T>
inline T rel_err(T a, T b) {
  T denom = std::max(std::max(std::abs(a), std::abs(b)), T(1e-8));
  return std::abs(a - b) / denom;
}

// Compares reverse-mode gradients of a tensor-to-scalar function against
// central differences over every coordinate of `point`, returning the max of
// |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8).
//
// Coordinates flagged in `skip` are excluded; callers use this for inputs
// sitting within eps of a relu/abs kink, where the two-sided difference
// straddles the subgradient ambiguity.
template <typename T, typename F>
T finite_diff_check(F&& f, const Tensor<T>& point, T eps, const std::vector<bool>& skip = {}) {
  Tape<T> tape;
  Tensor<T> p = point.clone();
  tape.watch(p);
  Tensor<T> loss = f(p);
  if (loss.numel() != 1) throw ShapeError("finite_diff_check: f must return a scalar");
  tape.backward(loss);
  std::vector<T> g_ad(p.grad(), p.grad() + p.numel());

  T worst = T(0);
  for (int i = 0; i < point.numel(); ++i) {
    if (!skip.empty() && skip[static_cast<size_t>(i)]) continue;
    T g_fd = central_diff(f, point, i, eps);
    worst = std::max(worst, rel_err(g_ad[static_cast<size_t>(i)], g_fd));
  }
  return worst;
}

}  // namespace dmgn
