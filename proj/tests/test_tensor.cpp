#include <gtest/gtest.h>

#include <cmath>

#include "statalign/grad_check.hpp"
#include "statalign/ops.hpp"
#include "statalign/rng.hpp"
#include "statalign/tensor.hpp"

using namespace statalign;

namespace {

Tensor<double> random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(std::move(shape));
    for (size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.next_real(lo, hi);
    return t;
}

// Direct six-nested-loop convolution, independent of the im2col path.
Tensor<double> conv2d_naive(const Tensor<double>& in, const Tensor<double>& w, const Tensor<double>& b,
                            int stride, int pad) {
    const int N = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
    const int O = w.dim(0), k = w.dim(2);
    const int OH = (H + 2 * pad - k) / stride + 1;
    const int OW = (W + 2 * pad - k) / stride + 1;
    Tensor<double> out({N, O, OH, OW});
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o)
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    double acc = b.data()[o];
                    for (int c = 0; c < C; ++c)
                        for (int dy = 0; dy < k; ++dy)
                            for (int dx = 0; dx < k; ++dx) {
                                int iy = oy * stride + dy - pad;
                                int ix = ox * stride + dx - pad;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += in.data()[((n * C + c) * H + iy) * W + ix] *
                                       w.data()[((o * C + c) * k + dy) * k + dx];
                            }
                    out.data()[((n * O + o) * OH + oy) * OW + ox] = acc;
                }
    return out;
}

}  // namespace

TEST(Tensor, ShapeDataInvariant) {
    EXPECT_THROW(Tensor<double>::from_data({2, 3}, {1.0, 2.0}), TensorError);
    Tensor<double> t({2, 3}, 0.5, true);
    EXPECT_EQ(t.size(), 6u);
    EXPECT_NO_THROW(t.grad());
    Tensor<double> u({2, 2});
    EXPECT_THROW(u.grad(), TensorError);
}

TEST(Tensor, TapeClearDropsRecordedOps) {
    Tape<double> tape;
    Tensor<double> x({4}, 1.0, true);
    Tensor<double> y = relu(x, &tape);
    Tensor<double> s = sum(y, &tape);
    EXPECT_EQ(tape.size(), 2u);
    tape.clear();
    EXPECT_EQ(tape.size(), 0u);
    (void)s;
}

TEST(Conv2d, OnesKernelSumsWindow) {
    Tensor<double> in({1, 1, 3, 3}, 1.0);
    Tensor<double> w({1, 1, 3, 3}, 1.0);
    Tensor<double> b({1}, 0.0);
    Tensor<double> out = conv2d(in, w, b, 1, 0, nullptr);
    ASSERT_EQ(out.shape(), (std::vector<int>{1, 1, 1, 1}));
    EXPECT_DOUBLE_EQ(out.item(), 9.0);
}

TEST(Conv2d, ZeroWeightGivesZeroOutputAndZeroInputGrad) {
    Rng rng(7);
    Tensor<double> in = random_tensor({2, 2, 4, 4}, rng);
    in.set_requires_grad(true);
    Tensor<double> w({3, 2, 3, 3}, 0.0);
    Tensor<double> b({3}, 0.0);
    Tape<double> tape;
    Tensor<double> out = conv2d(in, w, b, 1, 1, &tape);
    for (size_t i = 0; i < out.size(); ++i) EXPECT_DOUBLE_EQ(out.data()[i], 0.0);
    Tensor<double> loss = sum(out, &tape);
    tape.backward(loss);
    for (size_t i = 0; i < in.size(); ++i) EXPECT_DOUBLE_EQ(in.grad()[i], 0.0);
}

TEST(Conv2d, MatchesNaiveOracle) {
    Rng rng(11);
    Tensor<double> in = random_tensor({2, 3, 8, 8}, rng);
    Tensor<double> w = random_tensor({4, 3, 3, 3}, rng);
    Tensor<double> b = random_tensor({4}, rng);
    Tensor<double> fast = conv2d(in, w, b, 1, 0, nullptr);
    Tensor<double> slow = conv2d_naive(in, w, b, 1, 0);
    ASSERT_EQ(fast.shape(), slow.shape());
    for (size_t i = 0; i < fast.size(); ++i) EXPECT_NEAR(fast.data()[i], slow.data()[i], 1e-10);

    // strided + padded variant against the same oracle
    Tensor<double> fast2 = conv2d(in, w, b, 2, 1, nullptr);
    Tensor<double> slow2 = conv2d_naive(in, w, b, 2, 1);
    ASSERT_EQ(fast2.shape(), slow2.shape());
    for (size_t i = 0; i < fast2.size(); ++i) EXPECT_NEAR(fast2.data()[i], slow2.data()[i], 1e-10);
}

TEST(Conv2d, ShapeErrors) {
    Tensor<double> in({1, 2, 4, 4});
    Tensor<double> w({1, 3, 3, 3});
    Tensor<double> b({1});
    EXPECT_THROW(conv2d(in, w, b, 1, 0, nullptr), TensorError);
    Tensor<double> w2({1, 2, 7, 7});
    EXPECT_THROW(conv2d(in, w2, b, 1, 0, nullptr), TensorError);
}

TEST(Conv2d, DeterministicForward) {
    Rng rng(3);
    Tensor<double> in = random_tensor({1, 3, 6, 6}, rng);
    Tensor<double> w = random_tensor({2, 3, 3, 3}, rng);
    Tensor<double> b = random_tensor({2}, rng);
    Tensor<double> a = conv2d(in, w, b, 1, 1, nullptr);
    Tensor<double> c = conv2d(in, w, b, 1, 1, nullptr);
    for (size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.data()[i], c.data()[i]);
}

TEST(Relu, Basic) {
    Tensor<double> x = Tensor<double>::from_data({3}, {-1.0, 0.0, 2.0});
    Tensor<double> y = relu(x, nullptr);
    EXPECT_DOUBLE_EQ(y.data()[0], 0.0);
    EXPECT_DOUBLE_EQ(y.data()[1], 0.0);
    EXPECT_DOUBLE_EQ(y.data()[2], 2.0);
}

TEST(SoftmaxCrossEntropy, UniformLogitsGiveLogC) {
    Tensor<double> z({1, 10}, 0.3);
    Tensor<double> loss = softmax_cross_entropy(z, {4}, nullptr);
    EXPECT_NEAR(loss.item(), std::log(10.0), 1e-12);
}

TEST(SoftmaxCrossEntropy, LabelOutOfRangeThrows) {
    Tensor<double> z({1, 10}, 0.0);
    EXPECT_THROW(softmax_cross_entropy(z, {10}, nullptr), TensorError);
    EXPECT_THROW(softmax_cross_entropy(z, {-1}, nullptr), TensorError);
}

TEST(Maxpool, RoutesGradToArgmaxOnly) {
    Tensor<double> x = Tensor<double>::from_data({1, 1, 2, 2}, {0.1, 0.9, 0.4, 0.2});
    x.set_requires_grad(true);
    Tape<double> tape;
    Tensor<double> y = maxpool2d(x, &tape);
    EXPECT_DOUBLE_EQ(y.item(), 0.9);
    Tensor<double> loss = sum(y, &tape);
    tape.backward(loss);
    EXPECT_DOUBLE_EQ(x.grad()[0], 0.0);
    EXPECT_DOUBLE_EQ(x.grad()[1], 1.0);
    EXPECT_DOUBLE_EQ(x.grad()[2], 0.0);
    EXPECT_DOUBLE_EQ(x.grad()[3], 0.0);
}

TEST(Maxpool, BackwardMatchesFiniteDifferences) {
    // distinct values so the max is differentiable at the evaluation point
    Rng rng(21);
    Tensor<double> x({1, 2, 4, 4});
    for (size_t i = 0; i < x.size(); ++i) x.data()[i] = 0.05 * static_cast<double>(i) + rng.next_real(0.0, 0.01);
    double err = grad_check(
        [](Tensor<double>& t, Tape<double>* tape) { return sum(maxpool2d(t, tape), tape); }, x, 1e-4);
    EXPECT_LE(err, 1e-6);
}

TEST(GradCheck, SumOfSquares) {
    Tensor<double> x = Tensor<double>::from_data({2}, {1.0, 2.0});
    double err = grad_check(
        [](Tensor<double>& t, Tape<double>* tape) { return sum(mul(t, t, tape), tape); }, x, 1e-5);
    EXPECT_LT(err, 1e-8);

    // the analytic side should be exactly (2, 4)
    x.set_requires_grad(true);
    Tape<double> tape;
    Tensor<double> loss = sum(mul(x, x, &tape), &tape);
    tape.backward(loss);
    EXPECT_NEAR(x.grad()[0], 2.0, 1e-12);
    EXPECT_NEAR(x.grad()[1], 4.0, 1e-12);
}

TEST(GradCheck, ConstantFunctionHasZeroError) {
    Tensor<double> x = Tensor<double>::from_data({3}, {0.3, -0.2, 0.9});
    double err = grad_check(
        [](Tensor<double>& t, Tape<double>* tape) { return sum(scale(t, 0.0, tape), tape); }, x, 1e-5);
    EXPECT_DOUBLE_EQ(err, 0.0);
}

TEST(GradCheck, NonFiniteThrows) {
    Tensor<double> x = Tensor<double>::from_data({1}, {std::numeric_limits<double>::infinity()});
    EXPECT_THROW(relu(x, nullptr), TensorError);
}

// Backward of each primitive vs central differences on several shapes.

TEST(FiniteDiff, Conv2dInputWeightBias) {
    Rng rng(31);
    const std::vector<std::vector<int>> shapes = {{1, 1, 5, 5}, {2, 3, 6, 6}, {1, 2, 8, 8}};
    const std::vector<std::pair<int, int>> sp = {{1, 0}, {1, 1}, {2, 1}};
    for (size_t s = 0; s < shapes.size(); ++s) {
        Tensor<double> in = random_tensor(shapes[s], rng);
        Tensor<double> w = random_tensor({2, shapes[s][1], 3, 3}, rng);
        Tensor<double> b = random_tensor({2}, rng);
        auto [stride, pad] = sp[s];
        double e_in = grad_check(
            [&](Tensor<double>& t, Tape<double>* tape) { return sum(conv2d(t, w, b, stride, pad, tape), tape); },
            in);
        double e_w = grad_check(
            [&](Tensor<double>& t, Tape<double>* tape) { return sum(conv2d(in, t, b, stride, pad, tape), tape); },
            w);
        double e_b = grad_check(
            [&](Tensor<double>& t, Tape<double>* tape) { return sum(conv2d(in, w, t, stride, pad, tape), tape); },
            b);
        EXPECT_LE(e_in, 1e-4);
        EXPECT_LE(e_w, 1e-4);
        EXPECT_LE(e_b, 1e-4);
    }
}

TEST(FiniteDiff, ReluLinearFlattenAddMul) {
    Rng rng(37);
    for (auto shape : {std::vector<int>{2, 6}, {1, 12}, {3, 4}}) {
        Tensor<double> x = random_tensor(shape, rng);
        // shift away from the relu kink
        for (size_t i = 0; i < x.size(); ++i)
            if (std::abs(x.data()[i]) < 1e-3) x.data()[i] += 0.01;
        double e = grad_check(
            [](Tensor<double>& t, Tape<double>* tape) { return sum(relu(t, tape), tape); }, x);
        EXPECT_LE(e, 1e-4);
    }
    Tensor<double> x = random_tensor({3, 5}, rng);
    Tensor<double> w = random_tensor({4, 5}, rng);
    Tensor<double> b = random_tensor({4}, rng);
    auto sq = [](Tensor<double>& t, Tape<double>* tape) { return t; };
    (void)sq;
    EXPECT_LE(grad_check([&](Tensor<double>& t, Tape<double>* tape) {
                  return sum(mul(linear(t, w, b, tape), linear(t, w, b, tape), tape), tape);
              }, x),
              1e-4);
    EXPECT_LE(grad_check([&](Tensor<double>& t, Tape<double>* tape) {
                  return sum(mul(linear(x, t, b, tape), linear(x, t, b, tape), tape), tape);
              }, w),
              1e-4);
    EXPECT_LE(grad_check([&](Tensor<double>& t, Tape<double>* tape) { return sum(linear(x, w, t, tape), tape); }, b),
              1e-4);

    Tensor<double> img = random_tensor({2, 2, 3, 3}, rng);
    EXPECT_LE(grad_check([](Tensor<double>& t, Tape<double>* tape) {
                  auto f = flatten(t, tape);
                  return sum(mul(f, f, tape), tape);
              }, img),
              1e-4);

    Tensor<double> a = random_tensor({2, 4}, rng);
    Tensor<double> bb = random_tensor({2, 4}, rng);
    EXPECT_LE(grad_check([&](Tensor<double>& t, Tape<double>* tape) {
                  return sum(mul(add(t, bb, tape), add(t, bb, tape), tape), tape);
              }, a),
              1e-4);
}

TEST(FiniteDiff, BatchnormTrainAndInference) {
    Rng rng(41);
    for (auto shape : {std::vector<int>{2, 3, 4, 4}, {4, 2, 3, 3}, {1, 4, 2, 2}}) {
        const int C = shape[1];
        Tensor<double> x = random_tensor(shape, rng);
        Tensor<double> gamma = random_tensor({C}, rng, 0.5, 1.5);
        Tensor<double> beta = random_tensor({C}, rng);
        Tensor<double> rm = random_tensor({C}, rng, -0.2, 0.2);
        Tensor<double> rv = random_tensor({C}, rng, 0.5, 1.5);
        for (bool training : {true, false}) {
            auto run = [&](Tensor<double>& t, Tape<double>* tape) {
                Tensor<double> m = rm.clone(), v = rv.clone();  // keep running stats fixed across evals
                auto y = batchnorm2d(t, gamma, beta, m, v, training, tape);
                return sum(mul(y, y, tape), tape);
            };
            EXPECT_LE(grad_check(run, x, 3e-4), 1e-4) << "training=" << training;
            auto run_g = [&](Tensor<double>& t, Tape<double>* tape) {
                Tensor<double> m = rm.clone(), v = rv.clone();
                auto y = batchnorm2d(x, t, beta, m, v, training, tape);
                return sum(mul(y, y, tape), tape);
            };
            EXPECT_LE(grad_check(run_g, gamma, 3e-4), 1e-4);
            auto run_b = [&](Tensor<double>& t, Tape<double>* tape) {
                Tensor<double> m = rm.clone(), v = rv.clone();
                auto y = batchnorm2d(x, gamma, t, m, v, training, tape);
                return sum(y, tape);
            };
            EXPECT_LE(grad_check(run_b, beta, 3e-4), 1e-4);
        }
    }
}

TEST(FiniteDiff, SoftmaxCrossEntropyAndConcat) {
    Rng rng(43);
    for (auto shape : {std::vector<int>{1, 10}, {4, 6}, {2, 3}}) {
        Tensor<double> z = random_tensor(shape, rng);
        std::vector<int> labels(shape[0]);
        for (int i = 0; i < shape[0]; ++i) labels[i] = static_cast<int>(rng.next_below(shape[1]));
        EXPECT_LE(grad_check([&](Tensor<double>& t, Tape<double>* tape) {
                      return softmax_cross_entropy(t, labels, tape);
                  }, z),
                  1e-4);
    }
    Tensor<double> a = random_tensor({1, 2, 3, 3}, rng);
    Tensor<double> b = random_tensor({1, 3, 3, 3}, rng);
    EXPECT_LE(grad_check([&](Tensor<double>& t, Tape<double>* tape) {
                  auto c = concat_channels<double>({t, b}, tape);
                  return sum(mul(c, c, tape), tape);
              }, a),
              1e-4);
}

TEST(Batchnorm, RunningStatsUpdate) {
    // one training step: running = 0.9*running + 0.1*batch_stat
    Tensor<double> x = Tensor<double>::from_data({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
    Tensor<double> gamma({1}, 1.0), beta({1}, 0.0);
    Tensor<double> rm({1}, 0.0), rv({1}, 1.0);
    batchnorm2d(x, gamma, beta, rm, rv, true, nullptr);
    EXPECT_NEAR(rm.data()[0], 0.1 * 2.5, 1e-12);
    double var_biased = (2.25 + 0.25 + 0.25 + 2.25) / 4.0;   // 1.25
    double var_unbiased = var_biased * 4.0 / 3.0;
    EXPECT_NEAR(rv.data()[0], 0.9 * 1.0 + 0.1 * var_unbiased, 1e-12);

    // inference normalizes with the (updated) running buffers
    Tensor<double> y = batchnorm2d(x, gamma, beta, rm, rv, false, nullptr);
    double is = 1.0 / std::sqrt(rv.data()[0] + 1e-5);
    EXPECT_NEAR(y.data()[0], (1.0 - rm.data()[0]) * is, 1e-10);
}

TEST(Composition, TwoLayerChainRuleHandOracle) {
    // y = relu(W x + b), L = sum(y^2) with x=(1,-1): dL/dx = (6, 3) by hand
    Tensor<double> x = Tensor<double>::from_data({1, 2}, {1.0, -1.0});
    x.set_requires_grad(true);
    Tensor<double> w = Tensor<double>::from_data({2, 2}, {2.0, 1.0, 0.0, 3.0});
    Tensor<double> b = Tensor<double>::from_data({2}, {0.5, -0.25});
    Tape<double> tape;
    Tensor<double> y = relu(linear(x, w, b, &tape), &tape);
    Tensor<double> loss = sum(mul(y, y, &tape), &tape);
    EXPECT_NEAR(loss.item(), 2.25, 1e-12);
    tape.backward(loss);
    EXPECT_NEAR(x.grad()[0], 6.0, 1e-12);
    EXPECT_NEAR(x.grad()[1], 3.0, 1e-12);
}
