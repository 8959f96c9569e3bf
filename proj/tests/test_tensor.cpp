#include <cmath>
#include <functional>

#include <gtest/gtest.h>

#include "diffood/adam.hpp"
#include "diffood/gradcheck.hpp"
#include "diffood/ops.hpp"
#include "diffood/tensor.hpp"
#include "test_util.hpp"

using namespace diffood;
using testutil::random_tensor;

TEST(Tensor, ConstructionChecksDataLength) {
    EXPECT_THROW(Tensor({2, 3}, std::vector<float>(5)), ShapeError);
    const Tensor t({2, 3}, std::vector<float>(6, 1.0f), true);
    EXPECT_EQ(t.numel(), 6u);
    EXPECT_EQ(t.grad().size(), 6u);
    EXPECT_TRUE(Tensor({2}, {1.0f, 2.0f}).grad().empty());
}

TEST(Ops, SoftmaxOfEqualLogitsIsUniform) {
    const auto p = ops::softmax(Tensor({2}, {1.0f, 1.0f}), 0);
    EXPECT_FLOAT_EQ(p.data()[0], 0.5f);
    EXPECT_FLOAT_EQ(p.data()[1], 0.5f);
}

TEST(Ops, SoftmaxIsShiftInvariantAndNormalized) {
    const auto x = random_tensor<float>({4, 7}, 3, 2.0, false);
    std::vector<float> shifted(x.data().begin(), x.data().end());
    for (auto& v : shifted) v += 37.5f;
    for (std::size_t axis : {0u, 1u}) {
        const auto a = ops::softmax(x, axis);
        const auto b = ops::softmax(Tensor({4, 7}, shifted), axis);
        for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-6);
        if (axis == 1) {
            for (std::size_t r = 0; r < 4; ++r) {
                double s = 0.0;
                for (std::size_t c = 0; c < 7; ++c) s += a.data()[r * 7 + c];
                EXPECT_NEAR(s, 1.0, 1e-6);
            }
        }
    }
}

TEST(Ops, CrossEntropyOfUniformLogitsIsLogV) {
    for (std::size_t v : {2u, 5u, 50u}) {
        const Tensor logits = Tensor::full({3, v}, 0.7f);
        const std::vector<std::int32_t> targets = {0, std::int32_t(v - 1), 1};
        EXPECT_NEAR(ops::cross_entropy(logits, targets).item(), std::log(double(v)), 1e-6);
    }
}

TEST(Ops, CrossEntropyMatchesLoop) {
    const auto logits = random_tensor<double>({4, 7}, 5, 1.5, false);
    const std::vector<std::int32_t> targets = {0, 3, 6, 2};
    double expect = 0.0;
    for (std::size_t r = 0; r < 4; ++r) {
        double z = 0.0;
        for (std::size_t c = 0; c < 7; ++c) z += std::exp(logits.data()[r * 7 + c]);
        expect += std::log(z) - logits.data()[r * 7 + std::size_t(targets[r])];
    }
    EXPECT_NEAR(ops::cross_entropy(logits, targets).item(), expect / 4.0, 1e-12);
}

TEST(Ops, MatmulMatchesLoop) {
    const auto a = random_tensor<double>({3, 4}, 1, 1.0, false);
    const auto b = random_tensor<double>({4, 5}, 2, 1.0, false);
    const auto c = ops::matmul(a, b);
    ASSERT_EQ(c.shape(), (Shape{3, 5}));
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 5; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < 4; ++k) s += a.data()[i * 4 + k] * b.data()[k * 5 + j];
            EXPECT_NEAR(c.data()[i * 5 + j], s, 1e-12);
        }
    }
}

TEST(Ops, LayerNormHasZeroMeanUnitVariance) {
    const auto x = random_tensor<double>({3, 8}, 4, 3.0, false);
    const auto y = ops::layer_norm(x, Tensor64::full({8}, 1.0), Tensor64::zeros({8}), 0.0);
    for (std::size_t r = 0; r < 3; ++r) {
        double m = 0.0, v = 0.0;
        for (std::size_t c = 0; c < 8; ++c) m += y.data()[r * 8 + c];
        m /= 8;
        for (std::size_t c = 0; c < 8; ++c) v += std::pow(y.data()[r * 8 + c] - m, 2);
        EXPECT_NEAR(m, 0.0, 1e-12);
        EXPECT_NEAR(v / 8, 1.0, 1e-9);
    }
}

TEST(Ops, GeluReferenceValues) {
    const auto y = ops::gelu(Tensor64({3}, {0.0, 1.0, -1.0}));
    EXPECT_DOUBLE_EQ(y.data()[0], 0.0);
    EXPECT_NEAR(y.data()[1], 0.8413447460685429, 1e-12);
    EXPECT_NEAR(y.data()[2], -0.15865525393145707, 1e-12);
}

TEST(Ops, TransposeReshapeConcat) {
    const Tensor64 a({2, 3}, {1, 2, 3, 4, 5, 6});
    const auto t = ops::transpose(a, 0, 1);
    EXPECT_EQ(t.shape(), (Shape{3, 2}));
    EXPECT_EQ(std::vector<double>(t.data().begin(), t.data().end()), (std::vector<double>{1, 4, 2, 5, 3, 6}));
    EXPECT_EQ(ops::reshape(a, {3, 2}).shape(), (Shape{3, 2}));
    EXPECT_THROW(ops::reshape(a, {4, 2}), ShapeError);
    const auto c = ops::concat<double>({a, a}, 1);
    EXPECT_EQ(c.shape(), (Shape{2, 6}));
    EXPECT_DOUBLE_EQ(c.data()[3], 1.0);
}

TEST(Ops, ShapeErrorNamesOpAndShapes) {
    try {
        ops::add(Tensor::zeros({2, 3}), Tensor::zeros({4}));
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        EXPECT_EQ(e.op(), "add");
        EXPECT_EQ(e.lhs(), (Shape{2, 3}));
        EXPECT_EQ(e.rhs(), (Shape{4}));
        EXPECT_NE(std::string(e.what()).find("[2, 3]"), std::string::npos);
    }
    EXPECT_THROW(ops::matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2})), ShapeError);
    const std::vector<std::int32_t> bad = {5};
    EXPECT_THROW(ops::embedding(Tensor::zeros({3, 2}), bad), ShapeError);
}

TEST(Ops, NonFiniteOutputIsAnError) {
    const Tensor big({1}, {3e38f});
    EXPECT_THROW(ops::add(big, big), NumericError);
}

TEST(Backward, SumGivesOnes) {
    auto x = random_tensor<float>({3, 4}, 1);
    ops::sum(x).backward();
    for (float g : x.grad()) EXPECT_EQ(g, 1.0f);
}

TEST(Backward, SquareGivesTwoX) {
    auto x = Tensor64::scalar(3.0, true);
    ops::mul(x, x).backward();
    EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Backward, NonScalarLossIsAnError) {
    auto x = random_tensor<float>({2}, 1);
    EXPECT_THROW(ops::scale(x, 2.0).backward(), ShapeError);
}

TEST(Backward, AccumulatesUntilReset) {
    auto x = random_tensor<double>({4, 7}, 9);
    const std::vector<std::int32_t> targets = {1, 2, 3, 4};
    const auto loss = ops::cross_entropy(ops::scale(x, 1.5), targets);
    loss.backward();
    const std::vector<double> first(x.grad().begin(), x.grad().end());
    loss.backward();
    for (std::size_t i = 0; i < first.size(); ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 * first[i]);
    x.zero_grad();
    loss.backward();
    for (std::size_t i = 0; i < first.size(); ++i) EXPECT_EQ(x.grad()[i], first[i]);
}

TEST(Backward, NoGradGuardSkipsRecording) {
    auto x = random_tensor<float>({2}, 1);
    NoGradGuard guard;
    EXPECT_FALSE(ops::scale(x, 2.0).requires_grad());
}

TEST(GradCheck, SumIsExact) {
    const auto f = [](const Tensor64& v) { return ops::sum(v); };
    // Integer inputs and a dyadic step keep every difference exactly representable.
    const Tensor64 ints({2, 3}, {1, -2, 3, 4, 0, 7}, true);
    EXPECT_EQ(finite_diff_check<double>(f, ints, 0.25), 0.0);
    EXPECT_LT(finite_diff_check<double>(f, random_tensor<double>({3, 5}, 2), 1e-3), 1e-11);
}

TEST(GradCheck, SquareAtThree) {
    const auto x = Tensor64::scalar(3.0, true);
    EXPECT_LT(finite_diff_check<double>([](const Tensor64& v) { return ops::mul(v, v); }, x, 1e-3), 1e-6);
}

TEST(GradCheck, CrossEntropyOfSoftmaxChain) {
    const auto x = random_tensor<double>({4, 7}, 11);
    const std::vector<std::int32_t> targets = {6, 0, 3, 3};
    const auto f = [&](const Tensor64& v) { return ops::cross_entropy(ops::softmax(v, 1), targets); };
    EXPECT_LT(finite_diff_check<double>(f, x, 1e-3), 1e-3);
}

TEST(GradCheck, RestoresInput) {
    const auto x = random_tensor<double>({2, 2}, 3);
    const std::vector<double> before(x.data().begin(), x.data().end());
    finite_diff_check<double>([](const Tensor64& v) { return ops::sum(ops::gelu(v)); }, x, 1e-3);
    EXPECT_EQ(std::vector<double>(x.data().begin(), x.data().end()), before);
}

TEST(Adam, ZeroGradIsIdentity) {
    std::vector<Tensor> params = {random_tensor<float>({3, 3}, 1), random_tensor<float>({4}, 2)};
    std::vector<std::vector<float>> before;
    for (const auto& p : params) before.emplace_back(p.data().begin(), p.data().end());
    auto state = adam_init(params, {.lr = 0.1});
    adam_step(params, state);
    adam_step(params, state);
    EXPECT_EQ(state.step_count, 2u);
    for (std::size_t i = 0; i < params.size(); ++i) {
        EXPECT_EQ(std::vector<float>(params[i].data().begin(), params[i].data().end()), before[i]);
    }
}

TEST(Adam, FirstStepIsSignTimesLr) {
    std::vector<Tensor> params = {Tensor({2}, {1.0f, 1.0f}, true)};
    params[0].grad_mut()[0] = 0.37f;
    params[0].grad_mut()[1] = -12.0f;
    auto state = adam_init(params, {.lr = 0.01, .eps = 0.0});
    adam_step(params, state);
    EXPECT_NEAR(params[0].data()[0], 0.99, 1e-6);
    EXPECT_NEAR(params[0].data()[1], 1.01, 1e-6);
}

TEST(Adam, TwoStepTraceOnSquare) {
    // f(w) = w^2 from w0 = 1, lr 0.1, hand-rolled recurrences.
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 0.1;
    double w = 1.0, m = 0.0, v = 0.0;
    std::vector<double> trace;
    for (int t = 1; t <= 2; ++t) {
        const double g = 2.0 * w;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        w -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
        trace.push_back(w);
    }
    std::vector<Tensor> params = {Tensor::scalar(1.0f, true)};
    auto state = adam_init(params, {.lr = lr});
    for (int t = 0; t < 2; ++t) {
        params[0].zero_grad();
        ops::mul(params[0], params[0]).backward();
        adam_step(params, state);
        EXPECT_NEAR(params[0].item(), trace[std::size_t(t)], 1e-6);
    }
    EXPECT_EQ(state.step_count, 2u);
}

TEST(Adam, ShapeMismatchIsAnError) {
    std::vector<Tensor> params = {random_tensor<float>({3}, 1)};
    auto state = adam_init(params);
    std::vector<Tensor> other = {random_tensor<float>({4}, 1)};
    EXPECT_THROW(adam_step(other, state), ShapeError);
}
