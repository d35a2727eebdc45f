#include <gtest/gtest.h>

#include <cstring>

#include "dmgn/adam.hpp"
#include "dmgn/gradcheck.hpp"
#include "dmgn/ops.hpp"
#include "oracles.hpp"

using namespace dmgn;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, T lo = T(-1), T hi = T(1)) {
  Tensor<T> t(std::move(shape));
  for (int i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

// Pushes values away from zero so relu/abs kinks stay clear of the probe.
template <typename T>
void avoid_kinks(Tensor<T>& t, T margin) {
  for (int i = 0; i < t.numel(); ++i) {
    if (std::abs(t[i]) < margin) t[i] = t[i] < T(0) ? -margin : margin;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Forward examples

TEST(Primitives, Conv2dAllOnesSumsToNine) {
  auto x = Tensor<float>::full({1, 1, 3, 3}, 1.0f);
  auto w = Tensor<float>::full({1, 1, 3, 3}, 1.0f);
  auto b = Tensor<float>::full({1}, 0.0f);
  auto y = conv2d(x, w, b, 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_FLOAT_EQ(y[0], 9.0f);
}

TEST(Primitives, ActivationsAtZero) {
  auto x = Tensor<float>::full({3}, 0.0f);
  EXPECT_FLOAT_EQ(sigmoid(x)[0], 0.5f);
  EXPECT_FLOAT_EQ(tanh_op(x)[1], 0.0f);
}

TEST(Primitives, Conv2dMatchesNaiveOracle) {
  Rng rng(11);
  auto x = random_tensor<float>({1, 2, 4, 4}, rng);
  auto w = random_tensor<float>({3, 2, 3, 3}, rng);
  auto b = random_tensor<float>({3}, rng);
  auto got = conv2d(x, w, b, 2, 1);
  auto want = oracle::conv2d(x, w, b, 2, 1);
  ASSERT_EQ(got.shape(), want.shape());
  for (int i = 0; i < got.numel(); ++i) EXPECT_NEAR(got[i], want[i], 1e-6f);
}

TEST(Primitives, Conv2dShapeErrorsNameOffendingDims) {
  auto x = Tensor<float>::full({1, 2, 4, 4}, 0.0f);
  auto w = Tensor<float>::full({3, 5, 3, 3}, 0.0f);
  auto b = Tensor<float>::full({3}, 0.0f);
  try {
    conv2d(x, w, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("conv2d"), std::string::npos);
  }
}

TEST(Primitives, NonFiniteOutputIsNumericFault) {
  auto x = Tensor<float>::full({2}, 1e30f);
  EXPECT_THROW(mul(x, x), NumericFault);
}

TEST(Primitives, MixedTapesRejected) {
  Tape<float> t1, t2;
  auto a = Tensor<float>::full({2}, 1.0f);
  auto b = Tensor<float>::full({2}, 2.0f);
  t1.watch(a);
  t2.watch(b);
  EXPECT_THROW(add(a, b), NumericFault);
}

// ---------------------------------------------------------------------------
// Backward examples

TEST(Backward, MeanOfSquare) {
  Tape<double> tape;
  auto x = Tensor<double>::full({1}, 3.0);
  tape.watch(x);
  auto loss = mean_all(mul(x, x));
  tape.backward(loss);
  EXPECT_NEAR(x.grad()[0], 6.0, 1e-12);
}

TEST(Backward, SumSigmoidAtZero) {
  Tape<double> tape;
  auto x = Tensor<double>::full({5}, 0.0);
  tape.watch(x);
  auto loss = scale(mean_all(sigmoid(x)), 5.0);  // sum = mean * numel
  tape.backward(loss);
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(x.grad()[i], 0.25, 1e-12);
}

TEST(Backward, UnreachedLeafKeepsZeroGrad) {
  Tape<double> tape;
  auto x = Tensor<double>::full({2}, 1.0);
  auto unused = Tensor<double>::full({2}, 1.0);
  tape.watch(x);
  tape.watch(unused);
  auto loss = mean_all(x);
  tape.backward(loss);
  EXPECT_EQ(unused.grad()[0], 0.0);
  EXPECT_EQ(unused.grad()[1], 0.0);
}

TEST(Backward, SecondBackwardThrows) {
  Tape<double> tape;
  auto x = Tensor<double>::full({2}, 1.0);
  tape.watch(x);
  auto loss = mean_all(x);
  tape.backward(loss);
  EXPECT_THROW(tape.backward(loss), NumericFault);
}

TEST(Backward, NonScalarLossThrows) {
  Tape<double> tape;
  auto x = Tensor<double>::full({2}, 1.0);
  tape.watch(x);
  auto y = relu(x);
  EXPECT_THROW(tape.backward(y), ShapeError);
}

TEST(Backward, TwoLayerConvNetMatchesFiniteDifferences) {
  Rng rng(23);
  auto w1 = random_tensor<double>({3, 2, 3, 3}, rng, -0.5, 0.5);
  auto b1 = random_tensor<double>({3}, rng, -0.1, 0.1);
  auto w2 = random_tensor<double>({2, 3, 3, 3}, rng, -0.5, 0.5);
  auto b2 = random_tensor<double>({2}, rng, -0.1, 0.1);
  auto x0 = random_tensor<double>({1, 2, 6, 6}, rng);

  auto net = [&](const Tensor<double>& x) {
    return mean_all(conv2d(relu(conv2d(x, w1, b1, 1, 1)), w2, b2, 1, 1));
  };
  EXPECT_LT(finite_diff_check(net, x0, 1e-4), 1e-5);

  auto by_w1 = [&](const Tensor<double>& w) {
    return mean_all(conv2d(relu(conv2d(x0, w, b1, 1, 1)), w2, b2, 1, 1));
  };
  EXPECT_LT(finite_diff_check(by_w1, w1, 1e-4), 1e-5);
}

TEST(Backward, LinearityOfGradients) {
  Rng rng(31);
  auto x0 = random_tensor<double>({2, 3, 4, 4}, rng);
  const double a = 0.7, b = -1.3;

  auto grad_of = [&](auto fn) {
    Tape<double> tape;
    auto x = x0.clone();
    tape.watch(x);
    auto loss = fn(x);
    tape.backward(loss);
    return std::vector<double>(x.grad(), x.grad() + x.numel());
  };

  auto f = [](const Tensor<double>& x) { return mean_all(mul(x, x)); };
  auto g = [](const Tensor<double>& x) { return mean_all(tanh_op(x)); };
  auto combo = [&](const Tensor<double>& x) { return add(scale(f(x), a), scale(g(x), b)); };

  auto gf = grad_of(f), gg = grad_of(g), gc = grad_of(combo);
  for (int i = 0; i < x0.numel(); ++i)
    EXPECT_NEAR(gc[static_cast<size_t>(i)],
                a * gf[static_cast<size_t>(i)] + b * gg[static_cast<size_t>(i)], 1e-10);
}

// ---------------------------------------------------------------------------
// Per-primitive gradient checks (64-bit, random smooth points)

TEST(Gradcheck, EveryPrimitive) {
  Rng rng(47);
  const double eps = 1e-5;
  const double tol = 1e-5;

  auto x4 = random_tensor<double>({2, 3, 4, 4}, rng);
  auto y4 = random_tensor<double>({2, 3, 4, 4}, rng);
  avoid_kinks(x4, 0.05);

  auto w = random_tensor<double>({4, 3, 3, 3}, rng, -0.5, 0.5);
  auto cb = random_tensor<double>({4}, rng, -0.2, 0.2);

  // conv2d: input, kernel, bias
  EXPECT_LT(finite_diff_check(
                [&](const Tensor<double>& v) { return mean_all(conv2d(v, w, cb, 1, 1)); }, x4, eps),
            tol);
  EXPECT_LT(finite_diff_check(
                [&](const Tensor<double>& v) { return mean_all(conv2d(x4, v, cb, 2, 1)); }, w, eps),
            tol);
  EXPECT_LT(finite_diff_check(
                [&](const Tensor<double>& v) { return mean_all(conv2d(x4, w, v, 1, 0)); }, cb, eps),
            tol);

  // dense: input, weight, bias
  auto xd = random_tensor<double>({3, 5}, rng);
  auto wd = random_tensor<double>({4, 5}, rng);
  auto bd = random_tensor<double>({4}, rng);
  EXPECT_LT(finite_diff_check(
                [&](const Tensor<double>& v) { return mean_all(dense(v, wd, bd)); }, xd, eps),
            tol);
  EXPECT_LT(finite_diff_check(
                [&](const Tensor<double>& v) { return mean_all(dense(xd, v, bd)); }, wd, eps),
            tol);
  EXPECT_LT(finite_diff_check(
                [&](const Tensor<double>& v) { return mean_all(dense(xd, wd, v)); }, bd, eps),
            tol);

  // unaries
  EXPECT_LT(finite_diff_check([](const Tensor<double>& v) { return mean_all(relu(v)); }, x4, eps),
            tol);
  EXPECT_LT(
      finite_diff_check([](const Tensor<double>& v) { return mean_all(tanh_op(v)); }, x4, eps),
      tol);
  EXPECT_LT(
      finite_diff_check([](const Tensor<double>& v) { return mean_all(sigmoid(v)); }, x4, eps),
      tol);
  EXPECT_LT(
      finite_diff_check([](const Tensor<double>& v) { return mean_all(abs_op(v)); }, x4, eps),
      tol);
  EXPECT_LT(
      finite_diff_check([](const Tensor<double>& v) { return mean_all(scale(v, -2.5)); }, x4, eps),
      tol);

  // binaries, both arguments
  EXPECT_LT(
      finite_diff_check([&](const Tensor<double>& v) { return mean_all(add(v, y4)); }, x4, eps),
      tol);
  EXPECT_LT(
      finite_diff_check([&](const Tensor<double>& v) { return mean_all(sub(y4, v)); }, x4, eps),
      tol);
  EXPECT_LT(
      finite_diff_check([&](const Tensor<double>& v) { return mean_all(mul(v, y4)); }, x4, eps),
      tol);
  EXPECT_LT(
      finite_diff_check([&](const Tensor<double>& v) { return mean_all(mul(y4, v)); }, x4, eps),
      tol);

  // structure ops
  EXPECT_LT(finite_diff_check(
                [&](const Tensor<double>& v) {
                  return mean_all(mul(concat_channels({v, y4}), concat_channels({y4, v})));
                },
                x4, eps),
            tol);
  EXPECT_LT(finite_diff_check(
                [](const Tensor<double>& v) { return mean_all(global_avg_pool(mul(v, v))); }, x4,
                eps),
            tol);
  EXPECT_LT(finite_diff_check(
                [](const Tensor<double>& v) { return mean_all(upsample_nearest2(mul(v, v))); }, x4,
                eps),
            tol);
  auto x1 = random_tensor<double>({2, 1, 4, 4}, rng);
  EXPECT_LT(finite_diff_check(
                [](const Tensor<double>& v) { return mean_all(repeat_channels(mul(v, v), 3)); },
                x1, eps),
            tol);
  auto sc = random_tensor<double>({3}, rng, 0.2, 1.0);
  EXPECT_LT(finite_diff_check(
                [&](const Tensor<double>& v) { return mean_all(channel_scale(v, sc)); }, x4, eps),
            tol);
  EXPECT_LT(finite_diff_check(
                [&](const Tensor<double>& v) { return mean_all(channel_scale(x4, v)); }, sc, eps),
            tol);
  auto sc2 = random_tensor<double>({2, 3}, rng, 0.2, 1.0);
  EXPECT_LT(finite_diff_check(
                [&](const Tensor<double>& v) { return mean_all(channel_scale(x4, v)); }, sc2, eps),
            tol);
  EXPECT_LT(finite_diff_check(
                [](const Tensor<double>& v) {
                  return mean_all(mul(reshape(v, {2, 48}), reshape(v, {2, 48})));
                },
                x4, eps),
            tol);
}

// ---------------------------------------------------------------------------
// finite_diff_check contract

TEST(Gradcheck, ConstantGradientIsExact) {
  Rng rng(3);
  auto x = random_tensor<double>({4, 4}, rng);
  EXPECT_LT(finite_diff_check([](const Tensor<double>& v) { return mean_all(v); }, x, 1e-5),
            1e-10);
}

TEST(Gradcheck, ReluSmoothRegion) {
  Rng rng(5);
  auto x = random_tensor<double>({3, 3}, rng);
  avoid_kinks(x, 0.1);
  EXPECT_LT(
      finite_diff_check([](const Tensor<double>& v) { return mean_all(relu(v)); }, x, 1e-5), 1e-7);
}

TEST(Gradcheck, ReluKinkCoordinatesSkipped) {
  auto x = Tensor<double>::from({4}, {0.5, 0.0, -0.7, 1.2});
  const double eps = 1e-5;
  std::vector<bool> skip(4, false);
  for (int i = 0; i < 4; ++i) skip[static_cast<size_t>(i)] = std::abs(x[i]) <= eps;
  EXPECT_TRUE(skip[1]);
  auto f = [](const Tensor<double>& v) { return mean_all(relu(v)); };
  EXPECT_LT(finite_diff_check(f, x, eps, skip), 1e-7);
}

// ---------------------------------------------------------------------------
// Shape algebra property test

TEST(Properties, ShapeAlgebraOverRandomCases) {
  Rng rng(101);
  int cases = 0;
  while (cases < 1000) {
    const int N = rng.uniform_int(1, 3), Ci = rng.uniform_int(1, 5);
    const int H = rng.uniform_int(1, 9), W = rng.uniform_int(1, 9);
    const int Co = rng.uniform_int(1, 5);
    const int k = rng.uniform_int(1, 5), s = rng.uniform_int(1, 3), p = rng.uniform_int(0, 2);
    Tensor<float> x({N, Ci, H, W});

    if (H + 2 * p >= k && W + 2 * p >= k) {
      auto y = conv2d(x, Tensor<float>({Co, Ci, k, k}), Tensor<float>({Co}), s, p);
      ASSERT_EQ(y.shape(),
                (Shape{N, Co, (H + 2 * p - k) / s + 1, (W + 2 * p - k) / s + 1}));
      ++cases;
    }
    ASSERT_EQ(relu(x).shape(), x.shape());
    ASSERT_EQ(add(x, x).shape(), x.shape());
    ASSERT_EQ(concat_channels({x, x}).shape(), (Shape{N, 2 * Ci, H, W}));
    ASSERT_EQ(global_avg_pool(x).shape(), (Shape{N, Ci}));
    ASSERT_EQ(mean_all(x).shape(), (Shape{1}));
    ASSERT_EQ(upsample_nearest2(x).shape(), (Shape{N, Ci, 2 * H, 2 * W}));
    ASSERT_EQ(channel_scale(x, Tensor<float>({Ci})).shape(), x.shape());
    ASSERT_EQ(reshape(x, {N * Ci * H * W}).shape(), (Shape{N * Ci * H * W}));
    const int M = rng.uniform_int(1, 6), K = rng.uniform_int(1, 6);
    ASSERT_EQ(dense(Tensor<float>({N, K}), Tensor<float>({M, K}), Tensor<float>({M})).shape(),
              (Shape{N, M}));
    cases += 9;
  }
  SUCCEED() << cases << " cases";
}

TEST(Properties, ForwardIsDeterministic) {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor<float>({1, 3, 8, 8}, rng);
    auto w = random_tensor<float>({4, 3, 3, 3}, rng);
    auto b = random_tensor<float>({4}, rng);
    return sigmoid(conv2d(x, w, b, 1, 1));
  };
  auto a = run(9), b = run(9);
  ASSERT_EQ(a.numel(), b.numel());
  EXPECT_EQ(std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<size_t>(a.numel())), 0);
}

// ---------------------------------------------------------------------------
// Adam

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  auto p = Tensor<float>::from({3}, {1.0f, -2.0f, 0.5f});
  std::vector<float> g(3, 0.0f);
  AdamState<float> st;
  adam_step(p, g.data(), st, 1e-3f);
  EXPECT_FLOAT_EQ(p[0], 1.0f);
  EXPECT_FLOAT_EQ(p[1], -2.0f);
  EXPECT_FLOAT_EQ(p[2], 0.5f);
  EXPECT_EQ(st.t, 1);
}

TEST(Adam, FirstStepMovesByLrTimesSign) {
  auto p = Tensor<double>::from({2}, {1.0, 1.0});
  std::vector<double> g = {0.37, -0.001};
  AdamState<double> st;
  const double lr = 1e-3;
  adam_step(p, g.data(), st, lr, 0.9, 0.999, 1e-12);
  EXPECT_NEAR(p[0], 1.0 - lr, 1e-9);
  EXPECT_NEAR(p[1], 1.0 + lr, 1e-9);
}

TEST(Adam, TwoStepsMatchScalarRecurrence) {
  auto p = Tensor<double>::from({1}, {0.3});
  std::vector<double> g = {0.1};
  AdamState<double> st;
  adam_step(p, g.data(), st, 1e-3, 0.9, 0.999, 1e-8);
  adam_step(p, g.data(), st, 1e-3, 0.9, 0.999, 1e-8);
  EXPECT_NEAR(p[0], oracle::adam_two_steps(0.3, 0.1, 1e-3, 0.9, 0.999, 1e-8), 1e-12);
  EXPECT_EQ(st.t, 2);
}

TEST(Adam, StateShapeMismatchThrows) {
  auto p = Tensor<float>::from({2}, {1.0f, 2.0f});
  std::vector<float> g = {0.1f, 0.1f};
  AdamState<float> st;
  st.m.assign(3, 0.0f);
  st.v.assign(3, 0.0f);
  EXPECT_THROW(adam_step(p, g.data(), st, 1e-3f), ShapeError);
}
