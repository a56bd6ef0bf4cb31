#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "catnet/autodiff.hpp"
#include "catnet/gradcheck.hpp"

using namespace catnet;
using namespace catnet::ad;

namespace {

Tensor<double> randn(Shape s, std::mt19937& rng, double scale = 1.0) {
    std::normal_distribution<double> nd(0.0, scale);
    Tensor<double> t(std::move(s));
    for (auto& v : t.data) v = nd(rng);
    return t;
}

/// Uniform values with |x| in [margin, 1], random sign: keeps relu away from its kink.
Tensor<double> away_from_zero(Shape s, std::mt19937& rng, double margin = 0.1) {
    std::uniform_real_distribution<double> mag(margin, 1.0);
    std::bernoulli_distribution sign(0.5);
    Tensor<double> t(std::move(s));
    for (auto& v : t.data) v = sign(rng) ? mag(rng) : -mag(rng);
    return t;
}

/// Weighted sum with fixed pseudo-random weights, so every output coordinate
/// receives a distinct upstream gradient.
Var<double> probe(Graph<double>& g, Var<double> y, unsigned seed = 99) {
    std::mt19937 rng(seed);
    Tensor<double> w = randn(y.shape(), rng);
    return sum(mul(y, g.constant(w)));
}

constexpr double kTol = 1e-4;

}  // namespace

TEST(Linear, IdentityWeightsPassThrough) {
    Graph<double> g;
    Tensor<double> x(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
    Tensor<double> I(Shape{3, 3});
    for (int i = 0; i < 3; ++i) I.at2(i, i) = 1.0;
    auto y = linear(g.constant(x), g.constant(I), g.constant(Tensor<double>(Shape{3})));
    EXPECT_EQ(y.value().data, x.data);
}

TEST(Linear, SmallProduct) {
    Graph<double> g;
    auto y = linear(g.constant(Tensor<double>(Shape{1, 2}, {1, 2})), g.constant(Tensor<double>(Shape{2, 1}, {1, 1})));
    ASSERT_EQ(y.shape(), (Shape{1, 1}));
    EXPECT_DOUBLE_EQ(y.value()[0], 3.0);
}

TEST(Linear, ShapeMismatchReportsBothShapes) {
    Graph<double> g;
    try {
        linear(g.constant(Tensor<double>(Shape{2, 3})), g.constant(Tensor<double>(Shape{4, 2})));
        FAIL() << "expected rejection";
    } catch (const std::invalid_argument& e) {
        std::string msg = e.what();
        EXPECT_NE(msg.find("[2 x 3]"), std::string::npos);
        EXPECT_NE(msg.find("[4 x 2]"), std::string::npos);
    }
}

TEST(Linear, GradientsMatchFiniteDifferences) {
    std::mt19937 rng(1);
    double err = grad_check(
        [](Graph<double>& g, const std::vector<Var<double>>& p) { return probe(g, linear(p[0], p[1], p[2])); },
        {randn({3, 4}, rng), randn({4, 2}, rng), randn({2}, rng)});
    EXPECT_LT(err, 1e-6);
}

TEST(Activation, ClosedFormPoints) {
    Graph<double> g;
    auto x = g.variable(Tensor<double>(Shape{2}, {0.0, -3.0}));
    auto s = activation(x, "sigmoid");
    EXPECT_DOUBLE_EQ(s.value()[0], 0.5);
    auto r = activation(x, "relu");
    EXPECT_DOUBLE_EQ(r.value()[1], 0.0);
    g.backward(sum(r));
    EXPECT_DOUBLE_EQ(x.grad()[1], 0.0);
}

TEST(Activation, UnknownKindRejected) {
    Graph<double> g;
    EXPECT_THROW(activation(g.constant(Tensor<double>(Shape{1})), "gelu"), std::invalid_argument);
}

TEST(Activation, GradientsMatchFiniteDifferences) {
    std::mt19937 rng(2);
    for (auto kind : {Activation::relu, Activation::sigmoid, Activation::tanh}) {
        double err = grad_check(
            [kind](Graph<double>& g, const std::vector<Var<double>>& p) { return probe(g, activation(p[0], kind)); },
            {away_from_zero({4, 5}, rng)});
        EXPECT_LT(err, kind == Activation::relu ? 1e-6 : kTol);
    }
}

TEST(Softmax, UniformAndClosedForm) {
    Graph<double> g;
    auto u = softmax(g.constant(Tensor<double>(Shape{1, 4}, {2, 2, 2, 2})));
    for (double v : u.value().data) EXPECT_DOUBLE_EQ(v, 0.25);
    auto p = softmax(g.constant(Tensor<double>(Shape{1, 2}, {0.0, std::log(3.0)})));
    EXPECT_NEAR(p.value()[0], 0.25, 1e-15);
    EXPECT_NEAR(p.value()[1], 0.75, 1e-15);
}

TEST(Softmax, RowsSumToOneAndStableForLargeLogits) {
    std::mt19937 rng(3);
    Graph<double> g;
    auto x = randn({6, 7}, rng, 50.0);
    x.data[0] = 1e4;
    auto y = softmax(g.constant(x));
    for (std::size_t r = 0; r < 6; ++r) {
        double s = 0;
        for (std::size_t k = 0; k < 7; ++k) s += y.value().at2(r, k);
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
    EXPECT_TRUE(y.value().all_finite());
}

TEST(Softmax, GradientsMatchFiniteDifferences) {
    std::mt19937 rng(4);
    double err = grad_check(
        [](Graph<double>& g, const std::vector<Var<double>>& p) { return probe(g, softmax(p[0])); },
        {randn({3, 5}, rng)});
    EXPECT_LT(err, kTol);
}

TEST(LayerNorm, ConstantRowAndUnitRow) {
    Graph<double> g;
    auto gain = g.constant(Tensor<double>(Shape{2}, {1, 1}));
    auto bias = g.constant(Tensor<double>(Shape{2}, {0.5, 0.5}));
    auto c = layer_norm(g.constant(Tensor<double>(Shape{1, 2}, {3, 3})), gain, bias);
    EXPECT_DOUBLE_EQ(c.value()[0], 0.5);
    EXPECT_DOUBLE_EQ(c.value()[1], 0.5);
    auto zero_bias = g.constant(Tensor<double>(Shape{2}));
    auto u = layer_norm(g.constant(Tensor<double>(Shape{1, 2}, {1, -1})), gain, zero_bias);
    const double expect = 1.0 / std::sqrt(1.0 + 1e-5);
    EXPECT_NEAR(u.value()[0], expect, 1e-15);
    EXPECT_NEAR(u.value()[1], -expect, 1e-15);
}

TEST(LayerNorm, RowsAreStandardisedBeforeAffine) {
    std::mt19937 rng(5);
    Graph<double> g;
    auto x = randn({4, 9}, rng, 3.0);
    Tensor<double> ones(Shape{9}, 1.0);
    auto y = layer_norm(g.constant(x), g.constant(ones), g.constant(Tensor<double>(Shape{9})));
    for (std::size_t r = 0; r < 4; ++r) {
        double m = 0;
        for (std::size_t f = 0; f < 9; ++f) m += y.value().at2(r, f);
        EXPECT_LT(std::abs(m / 9), 1e-10);
    }
}

TEST(LayerNorm, SingleFeatureRejected) {
    Graph<double> g;
    auto one = g.constant(Tensor<double>(Shape{1}, {1}));
    EXPECT_THROW(layer_norm(g.constant(Tensor<double>(Shape{3, 1})), one, one), std::invalid_argument);
}

TEST(LayerNorm, GradientsMatchFiniteDifferences) {
    std::mt19937 rng(6);
    double err = grad_check(
        [](Graph<double>& g, const std::vector<Var<double>>& p) { return probe(g, layer_norm(p[0], p[1], p[2])); },
        {randn({3, 6}, rng), randn({6}, rng), randn({6}, rng)});
    EXPECT_LT(err, kTol);
}

TEST(PoolTime, MaxWindows) {
    Graph<double> g;
    auto y = pool_time(g.constant(Tensor<double>(Shape{4, 1}, {1, 3, 2, 5})), Pool::max, 2, 2);
    EXPECT_EQ(y.value().values(), (std::vector<double>{3, 5}));
}

TEST(PoolTime, HalvesTheTrialLength) {
    Graph<double> g;
    auto y = pool_time(g.constant(Tensor<double>(Shape{2, 499, 3})), Pool::max, 2, 2);
    EXPECT_EQ(y.shape(), (Shape{2, 249, 3}));
}

TEST(PoolTime, AvgSpreadsGradientEvenly) {
    Graph<double> g;
    auto x = g.variable(Tensor<double>(Shape{4, 1}, {1, 2, 3, 4}));
    g.backward(sum(pool_time(x, Pool::avg, 2, 2)));
    for (double v : x.grad().data) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(PoolTime, MaxTieGoesToFirstIndex) {
    Graph<double> g;
    auto x = g.variable(Tensor<double>(Shape{2, 1}, {7, 7}));
    g.backward(sum(pool_time(x, Pool::max, 2, 2)));
    EXPECT_EQ(x.grad().values(), (std::vector<double>{1, 0}));
}

TEST(PoolTime, KernelLongerThanSequenceRejected) {
    Graph<double> g;
    EXPECT_THROW(pool_time(g.constant(Tensor<double>(Shape{2, 1})), Pool::max, 3, 1), std::invalid_argument);
}

TEST(PoolTime, GradientsMatchFiniteDifferences) {
    // Distinct values spaced >= 0.05 apart keep every window's argmax stable under eps.
    std::mt19937 rng(7);
    Tensor<double> x(Shape{2, 8, 3});
    for (std::size_t i = 0; i < x.size(); ++i) x.data[i] = 0.05 * static_cast<double>(i);
    std::shuffle(x.data.begin(), x.data.end(), rng);
    for (auto kind : {Pool::max, Pool::avg}) {
        double err = grad_check(
            [kind](Graph<double>& g, const std::vector<Var<double>>& p) {
                return probe(g, pool_time(p[0], kind, 3, 2));
            },
            {x});
        EXPECT_LT(err, kTol);
    }
}

TEST(Structural, ConcatSliceIdentities) {
    Graph<double> g;
    auto c = concat<double>({g.constant(Tensor<double>(Shape{1}, {1})), g.constant(Tensor<double>(Shape{1}, {2}))});
    EXPECT_EQ(c.value().values(), (std::vector<double>{1, 2}));
    auto a = g.constant(Tensor<double>(Shape{3}, {1.5, -2, 4}));
    EXPECT_EQ(add(a, g.constant(Tensor<double>(Shape{3}))).value().data, a.value().data);
    EXPECT_EQ(mul(a, g.constant(Tensor<double>(Shape{3}, 1.0))).value().data, a.value().data);
    EXPECT_EQ(slice_last(c, 1, 2).value().values(), (std::vector<double>{2}));
    EXPECT_THROW(add(a, c), std::invalid_argument);
}

TEST(Structural, CompositeGradientsMatchFiniteDifferences) {
    std::mt19937 rng(8);
    double err = grad_check(
        [](Graph<double>& g, const std::vector<Var<double>>& p) {
            auto ab = concat<double>({p[0], p[1]});                   // [3 x 5]
            auto left = slice_last(ab, 1, 4);                         // [3 x 3]
            auto prod = mul(left, reshape(p[2], Shape{3, 3}));        // [3 x 3]
            auto mixed = sub(scale(prod, 0.7), tanh(left));
            auto gated = gate_time(reshape(mixed, Shape{1, 3, 3}), p[3]);
            return probe(g, gated);
        },
        {randn({3, 2}, rng), randn({3, 3}, rng), randn({9}, rng), randn({1, 3}, rng)});
    EXPECT_LT(err, kTol);
}

TEST(Backward, SumAndSquare) {
    {
        Graph<double> g;
        auto x = g.variable(Tensor<double>(Shape{5}, {1, 2, 3, 4, 5}));
        g.backward(sum(x));
        for (double v : x.grad().data) EXPECT_EQ(v, 1.0);
    }
    {
        Graph<double> g;
        auto x = g.variable(Tensor<double>::scalar(3.0));
        g.backward(mul(x, x));
        EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
    }
}

TEST(Backward, NonScalarLossRejected) {
    Graph<double> g;
    auto x = g.variable(Tensor<double>(Shape{2}));
    EXPECT_THROW(g.backward(x), std::invalid_argument);
}

TEST(Backward, UnreachableLeafHoldsZero) {
    Graph<double> g;
    auto x = g.variable(Tensor<double>(Shape{2}, {1, 2}));
    auto unused = g.variable(Tensor<double>(Shape{3}, {1, 2, 3}));
    g.backward(sum(x));
    for (double v : unused.grad().data) EXPECT_EQ(v, 0.0);
}

TEST(Backward, ParameterGradientsAccumulate) {
    Parameter<double> p("w", Tensor<double>(Shape{2}, {1, 2}));
    for (int i = 0; i < 2; ++i) {
        Graph<double> g;
        auto w = g.param(p);
        g.backward(sum(add(w, g.param(p))));  // same leaf used twice
    }
    EXPECT_EQ(p.grad, (Buffer<double>{4, 4}));
}

TEST(Backward, DeterministicAndInputsUntouched) {
    std::mt19937 rng(9);
    auto x0 = randn({2, 5, 4}, rng);
    auto wx = randn({4, 8}, rng), wh = randn({2, 8}, rng), b = randn({8}, rng);
    auto run = [&] {
        Graph<double> g;
        std::vector<Var<double>> v{g.variable(x0), g.variable(wx), g.variable(wh), g.variable(b)};
        auto y = lstm(v[0], v[1], v[2], v[3]);
        g.backward(probe(g, softmax(y)));
        EXPECT_EQ(v[0].value().data, x0.data);
        std::vector<double> all;
        for (auto& l : v) {
            auto gr = l.grad();
            all.insert(all.end(), gr.data.begin(), gr.data.end());
        }
        return all;
    };
    auto a = run(), c = run();
    EXPECT_EQ(a, c);
}

TEST(Lstm, ZeroWeightsGiveZeroOutput) {
    std::mt19937 rng(10);
    Graph<double> g;
    auto y = lstm(g.constant(randn({3, 7, 4}, rng)), g.constant(Tensor<double>(Shape{4, 12})),
                  g.constant(Tensor<double>(Shape{3, 12})), g.constant(Tensor<double>(Shape{12})));
    for (double v : y.value().data) EXPECT_EQ(v, 0.0);
}

TEST(Lstm, ReverseEqualsForwardOnReversedInput) {
    std::mt19937 rng(11);
    const std::size_t T = 6, D = 3, H = 2;
    auto x = randn({T, D}, rng);
    Tensor<double> xr(Shape{T, D});
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t d = 0; d < D; ++d) xr.at2(t, d) = x.at2(T - 1 - t, d);
    auto wx = randn({D, 4 * H}, rng), wh = randn({H, 4 * H}, rng), b = randn({4 * H}, rng);
    Graph<double> g;
    auto fw = lstm(g.constant(xr), g.constant(wx), g.constant(wh), g.constant(b), false);
    auto bw = lstm(g.constant(x), g.constant(wx), g.constant(wh), g.constant(b), true);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t h = 0; h < H; ++h) EXPECT_NEAR(bw.value().at2(t, h), fw.value().at2(T - 1 - t, h), 1e-14);
}

TEST(Lstm, GradientsMatchFiniteDifferences) {
    std::mt19937 rng(12);
    for (bool rev : {false, true}) {
        double err = grad_check(
            [rev](Graph<double>& g, const std::vector<Var<double>>& p) {
                return probe(g, lstm(p[0], p[1], p[2], p[3], rev));
            },
            {randn({2, 6, 4}, rng), randn({4, 12}, rng, 0.5), randn({3, 12}, rng, 0.5), randn({12}, rng, 0.5)});
        EXPECT_LT(err, 1e-3);
    }
}

TEST(Attention, SingleKeyReturnsItsValue) {
    std::mt19937 rng(13);
    Graph<double> g;
    auto q = randn({1, 3, 4}, rng), k = randn({1, 1, 4}, rng), v = randn({1, 1, 4}, rng);
    Tensor<double> w;
    auto o = attention(g.constant(q), g.constant(k), g.constant(v), 2, &w);
    for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(o.value().data[t * 4 + j], v.data[j], 1e-15);
    for (double a : w.data) EXPECT_DOUBLE_EQ(a, 1.0);
}

TEST(Attention, GradientsMatchFiniteDifferences) {
    std::mt19937 rng(14);
    double err = grad_check(
        [](Graph<double>& g, const std::vector<Var<double>>& p) { return probe(g, attention(p[0], p[1], p[2], 2)); },
        {randn({2, 5, 6}, rng), randn({2, 4, 6}, rng), randn({2, 4, 6}, rng)});
    EXPECT_LT(err, kTol);
}

TEST(GradientReversal, ForwardIdentityBackwardNegated) {
    std::mt19937 rng(15);
    auto x0 = randn({3, 4}, rng);
    Graph<double> g;
    auto x = g.variable(x0);
    auto r = gradient_reversal(x, 1.0);
    EXPECT_EQ(r.value().data, x0.data);
    g.backward(sum(scale(r, 2.0)));
    for (double v : x.grad().data) EXPECT_EQ(v, -2.0);
}

TEST(GradCheck, ZeroFunctionIsExact) {
    std::mt19937 rng(16);
    double err = grad_check(
        [](Graph<double>&, const std::vector<Var<double>>& p) { return scale(sum(p[0]), 0.0); },
        {randn({4, 4}, rng)});
    EXPECT_EQ(err, 0.0);
}

TEST(GradCheck, ReluAwayFromKink) {
    std::mt19937 rng(17);
    double err = grad_check([](Graph<double>& g, const std::vector<Var<double>>& p) { return probe(g, relu(p[0])); },
                            {away_from_zero({6, 6}, rng)});
    EXPECT_LT(err, 1e-6);
}

TEST(GradCheck, RejectsBadEpsAndNonFinite) {
    auto f = [](Graph<double>&, const std::vector<Var<double>>& p) { return sum(p[0]); };
    EXPECT_THROW(grad_check(f, {Tensor<double>(Shape{2})}, {.eps = 1e-2}), std::invalid_argument);
    auto bad = [](Graph<double>&, const std::vector<Var<double>>& p) {
        return sum(scale(p[0], std::numeric_limits<double>::infinity()));
    };
    EXPECT_THROW(grad_check(bad, {Tensor<double>(Shape{2}, 1.0)}), std::runtime_error);
}

TEST(Dropout, InvertedScalingAndEvalIdentity) {
    std::mt19937 rng(18);
    Graph<double> g;
    auto x = g.constant(Tensor<double>(Shape{1000}, 1.0));
    auto off = dropout(x, 0.4, rng, false);
    EXPECT_EQ(off.node(), x.node());
    auto on = dropout(x, 0.4, rng, true);
    for (double v : on.value().data) EXPECT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.6) < 1e-12);
}
