#pragma once

#include <cmath>
#include <span>

#include "dmgn/tensor.hpp"

// Differentiable primitives. Shape rules:
//
//   conv2d             x[N,Ci,H,W] * w[Co,Ci,kh,kw] + b[Co] -> [N,Co,Ho,Wo],
//                      Ho = (H + 2*pad - kh)/stride + 1 (zero padding)
//   dense              x[N,K] * w[M,K] + b[M] -> [N,M]
//   relu/tanh/sigmoid/abs/scale   same shape
//   add/sub/mul        both operands same shape
//   concat_channels    [N,Ci,H,W]... -> [N,sum Ci,H,W]
//   global_avg_pool    [N,C,H,W] -> [N,C]
//   mean_all           any -> [1]
//   upsample_nearest2  [N,C,H,W] -> [N,C,2H,2W]
//   repeat_channels    [N,1,H,W] -> [N,C,H,W]
//   channel_scale      x[N,C,H,W] * s[C] or s[N,C] -> [N,C,H,W]
//   reshape            numel preserved
//
// Every op appends a node to the inputs' tape when any input is tracked and
// checks its output for NaN/Inf. relu and abs use the zero subgradient at
// their kinks.

namespace dmgn {

namespace detail {

template <typename T>
inline Tape<T>* result_tape(std::initializer_list<const Tensor<T>*> inputs) {
  Tape<T>* tape = nullptr;
  for (const Tensor<T>* t : inputs) {
    if (!t->tracked()) continue;
    if (!tape)
      tape = t->tape();
    else if (tape != t->tape())
      throw NumericFault("op mixes tensors from different tapes");
  }
  return tape;
}

template <typename T>
inline std::vector<int> parent_ids(std::initializer_list<const Tensor<T>*> inputs) {
  std::vector<int> ids;
  for (const Tensor<T>* t : inputs)
    if (t->tracked()) ids.push_back(t->node());
  return ids;
}

// Binds `out` to the tape and records its backward closure. `make_backward`
// receives the output gradient buffer and returns the closure.
template <typename T, typename F>
inline void track(Tensor<T>& out, Tape<T>* tape, std::vector<int> parents, F&& make_backward) {
  out.bind(tape);
  auto fn = make_backward(out.shared_grad());
  int node = tape->record(std::move(parents), std::move(fn));
  out.bind(tape, node);
}

// Valid output range [lo, hi] for one kernel tap: in = out*stride + k - pad
// must land inside [0, extent).
inline void tap_range(int extent, int out_extent, int stride, int pad, int k, int& lo, int& hi) {
  lo = (k >= pad) ? 0 : (pad - k + stride - 1) / stride;
  int top = extent - 1 - k + pad;
  hi = (top < 0) ? -1 : std::min(out_extent - 1, top / stride);
}

// Eight parallel accumulator chains; a plain serial sum is FP-latency bound
// and dominates the backward pass otherwise. Fixed summation order.
template <typename T>
inline T unrolled_dot(const T* a, const T* b, int n, int stride_b) {
  T s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0, s6 = 0, s7 = 0;
  int i = 0;
  if (stride_b == 1) {
    for (; i + 8 <= n; i += 8) {
      s0 += a[i] * b[i];
      s1 += a[i + 1] * b[i + 1];
      s2 += a[i + 2] * b[i + 2];
      s3 += a[i + 3] * b[i + 3];
      s4 += a[i + 4] * b[i + 4];
      s5 += a[i + 5] * b[i + 5];
      s6 += a[i + 6] * b[i + 6];
      s7 += a[i + 7] * b[i + 7];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
  } else {
    for (; i + 4 <= n; i += 4) {
      s0 += a[i] * b[i * stride_b];
      s1 += a[i + 1] * b[(i + 1) * stride_b];
      s2 += a[i + 2] * b[(i + 2) * stride_b];
      s3 += a[i + 3] * b[(i + 3) * stride_b];
    }
    for (; i < n; ++i) s0 += a[i] * b[i * stride_b];
  }
  return ((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7));
}

template <typename T>
inline T unrolled_sum(const T* a, int n) {
  T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i];
    s1 += a[i + 1];
    s2 += a[i + 2];
    s3 += a[i + 3];
  }
  for (; i < n; ++i) s0 += a[i];
  return (s0 + s1) + (s2 + s3);
}

template <typename T>
inline void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": operand shapes " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride = 1,
                 int pad = 0) {
  if (x.rank() != 4)
    throw ShapeError("conv2d: input must be N,C,H,W, got " + shape_str(x.shape()));
  if (w.rank() != 4)
    throw ShapeError("conv2d: kernel must be Co,Ci,kh,kw, got " + shape_str(w.shape()));
  const int N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  if (w.dim(1) != Ci)
    throw ShapeError("conv2d: kernel wants " + std::to_string(w.dim(1)) +
                     " input channels, input has " + std::to_string(Ci));
  if (b.rank() != 1 || b.dim(0) != Co)
    throw ShapeError("conv2d: bias must be [" + std::to_string(Co) + "], got " +
                     shape_str(b.shape()));
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (pad < 0) throw ShapeError("conv2d: pad must be >= 0");
  if (H + 2 * pad < KH || W + 2 * pad < KW)
    throw ShapeError("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                     shape_str(x.shape()) + " with pad " + std::to_string(pad));
  const int Ho = (H + 2 * pad - KH) / stride + 1;
  const int Wo = (W + 2 * pad - KW) / stride + 1;

  Tensor<T> out(Shape{N, Co, Ho, Wo});
  {
    const T* xp = x.data();
    const T* wp = w.data();
    const T* bp = b.data();
    T* op = out.data();
    for (int n = 0; n < N; ++n)
      for (int co = 0; co < Co; ++co) {
        T* plane = op + (static_cast<size_t>(n) * Co + co) * Ho * Wo;
        std::fill(plane, plane + static_cast<size_t>(Ho) * Wo, bp[co]);
      }
    for (int n = 0; n < N; ++n)
      for (int co = 0; co < Co; ++co)
        for (int ci = 0; ci < Ci; ++ci)
          for (int kh = 0; kh < KH; ++kh) {
            int oh_lo, oh_hi;
            detail::tap_range(H, Ho, stride, pad, kh, oh_lo, oh_hi);
            for (int kw = 0; kw < KW; ++kw) {
              int ow_lo, ow_hi;
              detail::tap_range(W, Wo, stride, pad, kw, ow_lo, ow_hi);
              if (oh_hi < oh_lo || ow_hi < ow_lo) continue;
              const T a = wp[((static_cast<size_t>(co) * Ci + ci) * KH + kh) * KW + kw];
              const int cnt = ow_hi - ow_lo + 1;
              for (int oh = oh_lo; oh <= oh_hi; ++oh) {
                const int ih = oh * stride + kh - pad;
                const T* xrow = xp + ((static_cast<size_t>(n) * Ci + ci) * H + ih) * W +
                                (ow_lo * stride + kw - pad);
                T* orow = op + ((static_cast<size_t>(n) * Co + co) * Ho + oh) * Wo + ow_lo;
                if (stride == 1)
                  for (int i = 0; i < cnt; ++i) orow[i] += a * xrow[i];
                else
                  for (int i = 0; i < cnt; ++i) orow[i] += a * xrow[i * stride];
              }
            }
          }
  }
  check_finite(out, "conv2d");

  Tape<T>* tape = detail::result_tape<T>({&x, &w, &b});
  if (!tape) return out;
  auto xd = x.shared_data(), xg = x.shared_grad();
  auto wd = w.shared_data(), wg = w.shared_grad();
  auto bg = b.shared_grad();
  detail::track(out, tape, detail::parent_ids<T>({&x, &w, &b}),
                [=](std::shared_ptr<std::vector<T>> og) -> std::function<void()> {
    return [=]() {
      const T* g = og->data();
      if (bg) {
        T* db = bg->data();
        for (int n = 0; n < N; ++n)
          for (int co = 0; co < Co; ++co)
            db[co] += detail::unrolled_sum(g + (static_cast<size_t>(n) * Co + co) * Ho * Wo,
                                           Ho * Wo);
      }
      if (!wg && !xg) return;
      for (int n = 0; n < N; ++n)
        for (int co = 0; co < Co; ++co)
          for (int ci = 0; ci < Ci; ++ci)
            for (int kh = 0; kh < KH; ++kh) {
              int oh_lo, oh_hi;
              detail::tap_range(H, Ho, stride, pad, kh, oh_lo, oh_hi);
              for (int kw = 0; kw < KW; ++kw) {
                int ow_lo, ow_hi;
                detail::tap_range(W, Wo, stride, pad, kw, ow_lo, ow_hi);
                if (oh_hi < oh_lo || ow_hi < ow_lo) continue;
                const int cnt = ow_hi - ow_lo + 1;
                const size_t widx = ((static_cast<size_t>(co) * Ci + ci) * KH + kh) * KW + kw;
                if (wg) {
                  const T* xb = xd->data();
                  T acc = T(0);
                  for (int oh = oh_lo; oh <= oh_hi; ++oh) {
                    const int ih = oh * stride + kh - pad;
                    const T* xrow = xb + ((static_cast<size_t>(n) * Ci + ci) * H + ih) * W +
                                    (ow_lo * stride + kw - pad);
                    const T* grow = g + ((static_cast<size_t>(n) * Co + co) * Ho + oh) * Wo + ow_lo;
                    acc += detail::unrolled_dot(grow, xrow, cnt, stride);
                  }
                  (*wg)[widx] += acc;
                }
                if (xg) {
                  const T a = (*wd)[widx];
                  T* dxb = xg->data();
                  for (int oh = oh_lo; oh <= oh_hi; ++oh) {
                    const int ih = oh * stride + kh - pad;
                    T* dxrow = dxb + ((static_cast<size_t>(n) * Ci + ci) * H + ih) * W +
                               (ow_lo * stride + kw - pad);
                    const T* grow = g + ((static_cast<size_t>(n) * Co + co) * Ho + oh) * Wo + ow_lo;
                    if (stride == 1)
                      for (int i = 0; i < cnt; ++i) dxrow[i] += a * grow[i];
                    else
                      for (int i = 0; i < cnt; ++i) dxrow[i * stride] += a * grow[i];
                  }
                }
              }
            }
    };
  });
  return out;
}

// ---------------------------------------------------------------------------
// Dense

template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.rank() != 2) throw ShapeError("dense: input must be [N,K], got " + shape_str(x.shape()));
  if (w.rank() != 2) throw ShapeError("dense: weight must be [M,K], got " + shape_str(w.shape()));
  const int N = x.dim(0), K = x.dim(1), M = w.dim(0);
  if (w.dim(1) != K)
    throw ShapeError("dense: weight K=" + std::to_string(w.dim(1)) + " vs input K=" +
                     std::to_string(K));
  if (b.rank() != 1 || b.dim(0) != M)
    throw ShapeError("dense: bias must be [" + std::to_string(M) + "], got " + shape_str(b.shape()));

  Tensor<T> out(Shape{N, M});
  {
    const T* xp = x.data();
    const T* wp = w.data();
    const T* bp = b.data();
    T* op = out.data();
    for (int n = 0; n < N; ++n)
      for (int m = 0; m < M; ++m) {
        T s = bp[m];
        const T* xrow = xp + static_cast<size_t>(n) * K;
        const T* wrow = wp + static_cast<size_t>(m) * K;
        for (int k = 0; k < K; ++k) s += xrow[k] * wrow[k];
        op[static_cast<size_t>(n) * M + m] = s;
      }
  }
  check_finite(out, "dense");

  Tape<T>* tape = detail::result_tape<T>({&x, &w, &b});
  if (!tape) return out;
  auto xd = x.shared_data(), xg = x.shared_grad();
  auto wd = w.shared_data(), wg = w.shared_grad();
  auto bg = b.shared_grad();
  detail::track(out, tape, detail::parent_ids<T>({&x, &w, &b}),
                [=](std::shared_ptr<std::vector<T>> og) -> std::function<void()> {
    return [=]() {
      const T* g = og->data();
      for (int n = 0; n < N; ++n)
        for (int m = 0; m < M; ++m) {
          const T gv = g[static_cast<size_t>(n) * M + m];
          if (bg) (*bg)[static_cast<size_t>(m)] += gv;
          if (xg) {
            T* dx = xg->data() + static_cast<size_t>(n) * K;
            const T* wrow = wd->data() + static_cast<size_t>(m) * K;
            for (int k = 0; k < K; ++k) dx[k] += gv * wrow[k];
          }
          if (wg) {
            T* dw = wg->data() + static_cast<size_t>(m) * K;
            const T* xrow = xd->data() + static_cast<size_t>(n) * K;
            for (int k = 0; k < K; ++k) dw[k] += gv * xrow[k];
          }
        }
    };
  });
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise unaries

namespace detail {

// forward: fwd(x_i) -> y_i; backward factor: dfac(x_i, y_i) so dx += g * dfac.
template <typename T, typename Fwd, typename Dfac>
Tensor<T> unary_op(const Tensor<T>& x, const char* name, Fwd fwd, Dfac dfac) {
  Tensor<T> out(x.shape());
  const T* xp = x.data();
  T* op = out.data();
  const int n = x.numel();
  for (int i = 0; i < n; ++i) op[i] = fwd(xp[i]);
  check_finite(out, name);

  Tape<T>* tape = result_tape<T>({&x});
  if (!tape) return out;
  auto xd = x.shared_data();
  auto xg = x.shared_grad();
  auto od = out.shared_data();
  track(out, tape, parent_ids<T>({&x}),
        [=](std::shared_ptr<std::vector<T>> og) -> std::function<void()> {
    return [=]() {
      const T* g = og->data();
      const T* xv = xd->data();
      const T* yv = od->data();
      T* dx = xg->data();
      for (int i = 0; i < n; ++i) dx[i] += g[i] * dfac(xv[i], yv[i]);
    };
  });
  return out;
}

}  // namespace detail

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary_op(
      x, "relu", [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> tanh_op(const Tensor<T>& x) {
  return detail::unary_op(
      x, "tanh", [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary_op(
      x, "sigmoid",
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> abs_op(const Tensor<T>& x) {
  return detail::unary_op(
      x, "abs", [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T k) {
  return detail::unary_op(
      x, "scale", [k](T v) { return k * v; }, [k](T, T) { return k; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return scale(x, T(-1));
}

// ---------------------------------------------------------------------------
// Elementwise binaries

namespace detail {

template <typename T, typename Fwd, typename DxF, typename DyF>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, const char* name, Fwd fwd, DxF dfa,
                    DyF dfb) {
  require_same_shape(a, b, name);
  Tensor<T> out(a.shape());
  const T* ap = a.data();
  const T* bp = b.data();
  T* op = out.data();
  const int n = a.numel();
  for (int i = 0; i < n; ++i) op[i] = fwd(ap[i], bp[i]);
  check_finite(out, name);

  Tape<T>* tape = result_tape<T>({&a, &b});
  if (!tape) return out;
  auto ad = a.shared_data(), ag = a.shared_grad();
  auto bd = b.shared_data(), bg = b.shared_grad();
  track(out, tape, parent_ids<T>({&a, &b}),
        [=](std::shared_ptr<std::vector<T>> og) -> std::function<void()> {
    return [=]() {
      const T* g = og->data();
      const T* av = ad->data();
      const T* bv = bd->data();
      if (ag) {
        T* da = ag->data();
        for (int i = 0; i < n; ++i) da[i] += g[i] * dfa(av[i], bv[i]);
      }
      if (bg) {
        T* db = bg->data();
        for (int i = 0; i < n; ++i) db[i] += g[i] * dfb(av[i], bv[i]);
      }
    };
  });
  return out;
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
      [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

// ---------------------------------------------------------------------------
// Structure ops

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  const int N = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
  int Ctot = 0;
  for (const auto& x : xs) {
    if (x.rank() != 4) throw ShapeError("concat_channels: inputs must be N,C,H,W");
    if (x.dim(0) != N || x.dim(2) != H || x.dim(3) != W)
      throw ShapeError("concat_channels: mismatched input " + shape_str(x.shape()) + " vs " +
                       shape_str(xs[0].shape()));
    Ctot += x.dim(1);
  }
  Tensor<T> out(Shape{N, Ctot, H, W});
  T* op = out.data();
  const size_t hw = static_cast<size_t>(H) * W;
  int coff = 0;
  for (const auto& x : xs) {
    const int C = x.dim(1);
    const T* xp = x.data();
    for (int n = 0; n < N; ++n)
      std::copy(xp + static_cast<size_t>(n) * C * hw, xp + static_cast<size_t>(n + 1) * C * hw,
                op + (static_cast<size_t>(n) * Ctot + coff) * hw);
    coff += C;
  }
  check_finite(out, "concat_channels");

  Tape<T>* tape = nullptr;
  for (const auto& x : xs) {
    if (!x.tracked()) continue;
    if (!tape)
      tape = x.tape();
    else if (tape != x.tape())
      throw NumericFault("op mixes tensors from different tapes");
  }
  if (!tape) return out;
  struct Part {
    std::shared_ptr<std::vector<T>> grad;
    int C;
    int off;
  };
  auto parts = std::make_shared<std::vector<Part>>();
  std::vector<int> parents;
  coff = 0;
  for (const auto& x : xs) {
    parts->push_back(Part{x.shared_grad(), x.dim(1), coff});
    if (x.tracked()) parents.push_back(x.node());
    coff += x.dim(1);
  }
  detail::track(out, tape, std::move(parents),
                [=](std::shared_ptr<std::vector<T>> og) -> std::function<void()> {
    return [=]() {
      const T* g = og->data();
      for (const Part& p : *parts) {
        if (!p.grad) continue;
        T* dx = p.grad->data();
        for (int n = 0; n < N; ++n) {
          const T* gsrc = g + (static_cast<size_t>(n) * Ctot + p.off) * hw;
          T* dst = dx + static_cast<size_t>(n) * p.C * hw;
          for (size_t i = 0; i < static_cast<size_t>(p.C) * hw; ++i) dst[i] += gsrc[i];
        }
      }
    };
  });
  return out;
}

template <typename T>
Tensor<T> concat_channels(std::initializer_list<Tensor<T>> xs) {
  std::vector<Tensor<T>> v(xs);
  return concat_channels(std::span<const Tensor<T>>(v.data(), v.size()));
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("global_avg_pool: input must be N,C,H,W");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const T inv = T(1) / static_cast<T>(H * W);
  Tensor<T> out(Shape{N, C});
  const T* xp = x.data();
  T* op = out.data();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* plane = xp + (static_cast<size_t>(n) * C + c) * H * W;
      T s = T(0);
      for (int i = 0; i < H * W; ++i) s += plane[i];
      op[static_cast<size_t>(n) * C + c] = s * inv;
    }
  check_finite(out, "global_avg_pool");

  Tape<T>* tape = detail::result_tape<T>({&x});
  if (!tape) return out;
  auto xg = x.shared_grad();
  detail::track(out, tape, detail::parent_ids<T>({&x}),
                [=](std::shared_ptr<std::vector<T>> og) -> std::function<void()> {
    return [=]() {
      const T* g = og->data();
      T* dx = xg->data();
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const T gv = g[static_cast<size_t>(n) * C + c] * inv;
          T* plane = dx + (static_cast<size_t>(n) * C + c) * H * W;
          for (int i = 0; i < H * W; ++i) plane[i] += gv;
        }
    };
  });
  return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  const int n = x.numel();
  const T inv = T(1) / static_cast<T>(n);
  Tensor<T> out(Shape{1});
  const T* xp = x.data();
  T s = T(0);
  for (int i = 0; i < n; ++i) s += xp[i];
  out[0] = s * inv;
  check_finite(out, "mean_all");

  Tape<T>* tape = detail::result_tape<T>({&x});
  if (!tape) return out;
  auto xg = x.shared_grad();
  detail::track(out, tape, detail::parent_ids<T>({&x}),
                [=](std::shared_ptr<std::vector<T>> og) -> std::function<void()> {
    return [=]() {
      const T gv = (*og)[0] * inv;
      T* dx = xg->data();
      for (int i = 0; i < n; ++i) dx[i] += gv;
    };
  });
  return out;
}

template <typename T>
Tensor<T> upsample_nearest2(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("upsample_nearest2: input must be N,C,H,W");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<T> out(Shape{N, C, 2 * H, 2 * W});
  const T* xp = x.data();
  T* op = out.data();
  for (int nc = 0; nc < N * C; ++nc) {
    const T* src = xp + static_cast<size_t>(nc) * H * W;
    T* dst = op + static_cast<size_t>(nc) * 4 * H * W;
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) {
        const T v = src[static_cast<size_t>(h) * W + w];
        T* d = dst + (static_cast<size_t>(2 * h) * 2 * W + 2 * w);
        d[0] = v;
        d[1] = v;
        d[2 * W] = v;
        d[2 * W + 1] = v;
      }
  }
  check_finite(out, "upsample_nearest2");

  Tape<T>* tape = detail::result_tape<T>({&x});
  if (!tape) return out;
  auto xg = x.shared_grad();
  detail::track(out, tape, detail::parent_ids<T>({&x}),
                [=](std::shared_ptr<std::vector<T>> og) -> std::function<void()> {
    return [=]() {
      const T* g = og->data();
      T* dx = xg->data();
      for (int nc = 0; nc < N * C; ++nc) {
        T* dst = dx + static_cast<size_t>(nc) * H * W;
        const T* src = g + static_cast<size_t>(nc) * 4 * H * W;
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w) {
            const T* s = src + (static_cast<size_t>(2 * h) * 2 * W + 2 * w);
            dst[static_cast<size_t>(h) * W + w] += s[0] + s[1] + s[2 * W] + s[2 * W + 1];
          }
      }
    };
  });
  return out;
}

template <typename T>
Tensor<T> repeat_channels(const Tensor<T>& x, int C) {
  if (x.rank() != 4 || x.dim(1) != 1)
    throw ShapeError("repeat_channels: input must be N,1,H,W, got " + shape_str(x.shape()));
  if (C < 1) throw ShapeError("repeat_channels: C must be >= 1");
  const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
  const size_t hw = static_cast<size_t>(H) * W;
  Tensor<T> out(Shape{N, C, H, W});
  const T* xp = x.data();
  T* op = out.data();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      std::copy(xp + n * hw, xp + (n + 1) * hw, op + (static_cast<size_t>(n) * C + c) * hw);
  check_finite(out, "repeat_channels");

  Tape<T>* tape = detail::result_tape<T>({&x});
  if (!tape) return out;
  auto xg = x.shared_grad();
  detail::track(out, tape, detail::parent_ids<T>({&x}),
                [=](std::shared_ptr<std::vector<T>> og) -> std::function<void()> {
    return [=]() {
      const T* g = og->data();
      T* dx = xg->data();
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const T* src = g + (static_cast<size_t>(n) * C + c) * hw;
          for (size_t i = 0; i < hw; ++i) dx[n * hw + i] += src[i];
        }
    };
  });
  return out;
}

// s may be [C] (shared over batch, e.g. a learned per-channel weight) or
// [N,C] (per-sample, e.g. a squeeze-excite gate).
template <typename T>
Tensor<T> channel_scale(const Tensor<T>& x, const Tensor<T>& s) {
  if (x.rank() != 4) throw ShapeError("channel_scale: input must be N,C,H,W");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const bool per_sample = s.rank() == 2;
  if (per_sample) {
    if (s.dim(0) != N || s.dim(1) != C)
      throw ShapeError("channel_scale: scale " + shape_str(s.shape()) + " vs input " +
                       shape_str(x.shape()));
  } else if (s.rank() != 1 || s.dim(0) != C) {
    throw ShapeError("channel_scale: scale must be [C] or [N,C], got " + shape_str(s.shape()));
  }
  const size_t hw = static_cast<size_t>(H) * W;
  Tensor<T> out(x.shape());
  const T* xp = x.data();
  const T* sp = s.data();
  T* op = out.data();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T sv = per_sample ? sp[static_cast<size_t>(n) * C + c] : sp[c];
      const T* src = xp + (static_cast<size_t>(n) * C + c) * hw;
      T* dst = op + (static_cast<size_t>(n) * C + c) * hw;
      for (size_t i = 0; i < hw; ++i) dst[i] = src[i] * sv;
    }
  check_finite(out, "channel_scale");

  Tape<T>* tape = detail::result_tape<T>({&x, &s});
  if (!tape) return out;
  auto xd = x.shared_data(), xg = x.shared_grad();
  auto sd = s.shared_data(), sg = s.shared_grad();
  detail::track(out, tape, detail::parent_ids<T>({&x, &s}),
                [=](std::shared_ptr<std::vector<T>> og) -> std::function<void()> {
    return [=]() {
      const T* g = og->data();
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const size_t base = (static_cast<size_t>(n) * C + c) * hw;
          const T sv = per_sample ? (*sd)[static_cast<size_t>(n) * C + c] : (*sd)[c];
          if (xg) {
            T* dx = xg->data() + base;
            const T* gp = g + base;
            for (size_t i = 0; i < hw; ++i) dx[i] += gp[i] * sv;
          }
          if (sg) {
            const T* xv = xd->data() + base;
            const T* gp = g + base;
            T acc = T(0);
            for (size_t i = 0; i < hw; ++i) acc += gp[i] * xv[i];
            (*sg)[per_sample ? static_cast<size_t>(n) * C + c : static_cast<size_t>(c)] += acc;
          }
        }
    };
  });
  return out;
}

// Shares the value buffer; only the gradient buffer is separate.
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  Tensor<T> out = x.with_shape(std::move(shape));
  Tape<T>* tape = detail::result_tape<T>({&x});
  if (!tape) return out;
  auto xg = x.shared_grad();
  const int n = x.numel();
  detail::track(out, tape, detail::parent_ids<T>({&x}),
                [=](std::shared_ptr<std::vector<T>> og) -> std::function<void()> {
    return [=]() {
      const T* g = og->data();
      T* dx = xg->data();
      for (int i = 0; i < n; ++i) dx[i] += g[i];
    };
  });
  return out;
}

template <typename T>
Tensor<T> detach(const Tensor<T>& x) {
  return x.detached();
}

}  // namespace dmgn
