#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mtsnet/gradcheck.hpp"
#include "mtsnet/nn_ops.hpp"
#include "oracles.hpp"

using namespace mtsnet;
using namespace mtsnet::nn;

namespace {

using oracle::conv;

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST(ConvGeometry, OutputExtent) {
    EXPECT_EQ(conv_out_extent(128, 3, 2, 1), 64u);
    EXPECT_EQ(conv_out_extent(12, 3, 1, 1), 12u);
    EXPECT_THROW(conv_out_extent(2, 5, 1, 0), ShapeError);
    EXPECT_EQ(same_padding({3, 7, 7}), (Extent3{1, 3, 3}));
    EXPECT_EQ(same_padding({2, 1, 4}), (Extent3{0, 0, 0}));
}

TEST(Conv3d, IdentityKernel) {
    Tensor x({1, 1, 2, 3, 3}, NormalInit{0, 1, 1});
    Tensor y = conv3d(x, Tensor({1, 1, 1, 1, 1}, 1.0f), Tensor({1}, 0.0f), {});
    EXPECT_TRUE(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
}

TEST(Conv3d, AveragingConstantInterior) {
    Tensor x({1, 1, 2, 5, 5}, 3.0f);
    Tensor y = conv3d(x, Tensor({1, 1, 1, 3, 3}, 1.0f / 9), Tensor(), {{1, 1, 1}, {0, 1, 1}});
    ASSERT_EQ(y.shape(), x.shape());
    for (std::size_t l = 0; l < 2; ++l)
        for (std::size_t h = 1; h < 4; ++h)
            for (std::size_t w = 1; w < 4; ++w) EXPECT_NEAR(y.at({0, 0, l, h, w}), 3.0f, 1e-6);
    EXPECT_NEAR(y.at({0, 0, 0, 0, 0}), 3.0f * 4 / 9, 1e-6);
}

TEST(Conv3d, ChannelMismatchThrows) {
    EXPECT_THROW(conv3d(Tensor({1, 2, 3, 3, 3}), Tensor({1, 3, 1, 1, 1}), Tensor(), {}), ShapeError);
    EXPECT_THROW(conv3d(Tensor({1, 1, 1, 2, 2}), Tensor({1, 1, 1, 3, 3}), Tensor(), {}), ShapeError);
}

TEST(Conv3d, MatchesBruteForceOnSmallInput) {
    Tensor64 x({1, 1, 2, 4, 4}, NormalInit{0, 1, 11});
    Tensor64 w({1, 1, 1, 3, 3}, NormalInit{0, 1, 12});
    ConvOptions o{{1, 1, 1}, {0, 1, 1}};
    EXPECT_LT(max_abs_diff(conv3d(x, w, Tensor64(), o).data(), conv(x, w, Tensor64(), o).data()), 1e-12);
    Tensor xf = convert<float>(x), wf = convert<float>(w);
    Tensor64 yf = convert<double>(conv3d(xf, wf, Tensor(), o));
    EXPECT_LT(max_abs_diff(yf.data(), conv(x, w, Tensor64(), o).data()), 1e-5);
}

TEST(Conv3d, MatchesBruteForceOnRandomGeometry) {
    std::mt19937_64 rng(2024);
    auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
    for (int trial = 0; trial < 100; ++trial) {
        const Extent3 k{pick(1, 3), pick(1, 3), pick(1, 3)};
        const Extent3 s{pick(1, 2), pick(1, 2), pick(1, 2)};
        const Extent3 p{pick(0, k.t / 2 + 1), pick(0, k.h / 2 + 1), pick(0, k.w / 2 + 1)};
        const std::size_t cin = pick(1, 4), cout = pick(1, 4);
        const Shape xs{pick(1, 2), cin, pick(k.t, 4), pick(k.h, 4), pick(k.w, 4)};
        Tensor x(xs, NormalInit{0, 1, rng()});
        Tensor w({cout, cin, k.t, k.h, k.w}, NormalInit{0, 1, rng()});
        Tensor b({cout}, NormalInit{0, 1, rng()});
        ConvOptions o{s, p};
        Tensor64 expected = conv(convert<double>(x), convert<double>(w), convert<double>(b), o);
        Tensor64 got = convert<double>(conv3d(x, w, b, o));
        ASSERT_EQ(got.shape(), expected.shape());
        EXPECT_LT(max_abs_diff(got.data(), expected.data()), 1e-5) << "trial " << trial;
    }
}

TEST(Conv3d, PointwiseSpatialPathMatchesOracle) {
    // kh = kw = 1 with unit spatial stride takes the per-tap GEMM path.
    for (std::size_t st : {1u, 2u}) {
        Tensor64 x({2, 3, 5, 3, 4}, NormalInit{0, 1, 1});
        Tensor64 w({4, 3, 3, 1, 1}, NormalInit{0, 1, 2});
        Tensor64 b({4}, NormalInit{0, 1, 3});
        ConvOptions o{{st, 1, 1}, {1, 0, 0}};
        EXPECT_LT(max_abs_diff(conv3d(x, w, b, o).data(), conv(x, w, b, o).data()), 1e-12);
    }
}

TEST(Conv3d, FactoredDeltaPairIsIdentity) {
    const std::size_t c = 3;
    Tensor x({1, c, 4, 5, 5}, NormalInit{0, 1, 4});
    Tensor ws({c, c, 1, 3, 3}, 0.0f), wt({c, c, 3, 1, 1}, 0.0f);
    for (std::size_t i = 0; i < c; ++i) {
        ws.mutable_data()[(i * c + i) * 9 + 4] = 1.0f;  // centre tap
        wt.mutable_data()[(i * c + i) * 3 + 1] = 1.0f;
    }
    Tensor y = conv3d(conv3d(x, ws, Tensor(), {{1, 1, 1}, {0, 1, 1}}), wt, Tensor(), {{1, 1, 1}, {1, 0, 0}});
    EXPECT_TRUE(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
}

TEST(BatchNorm, AlreadyNormalizedPassesThrough) {
    Tensor x({2, 1, 1, 1, 2}, std::vector<float>{1, -1, 1, -1});
    auto st = BatchNormState<float>::make(1);
    Tensor y = batchnorm3d(x, st, true);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y.data()[i], x.data()[i], 1e-4);
}

TEST(BatchNorm, TrainModeStandardizesPerChannel) {
    Tensor x({3, 2, 2, 3, 3}, NormalInit{4, 3, 5});
    auto st = BatchNormState<float>::make(2);
    Tensor y = batchnorm3d(x, st, true);
    for (std::size_t c = 0; c < 2; ++c) {
        double s = 0, sq = 0;
        std::size_t n = 0;
        for (std::size_t b = 0; b < 3; ++b)
            for (std::size_t i = 0; i < 18; ++i) {
                const double v = y.data()[(b * 2 + c) * 18 + i];
                s += v;
                sq += v * v;
                ++n;
            }
        EXPECT_LT(std::abs(s / n), 1e-5);
        EXPECT_NEAR(sq / n, 1.0, 1e-3);
    }
}

TEST(BatchNorm, RunningStatisticsUseMomentumAndUnbiasedVariance) {
    Tensor x({2, 1, 1, 1, 2}, std::vector<float>{1, 2, 3, 4});
    auto st = BatchNormState<float>::make(1);
    batchnorm3d(x, st, true);
    EXPECT_NEAR(st.running_mean.item(), 0.1 * 2.5, 1e-6);
    EXPECT_NEAR(st.running_var.item(), 0.9 + 0.1 * (5.0 / 3.0), 1e-6);
}

TEST(BatchNorm, EvalModeAffine) {
    Tensor x({1, 1, 1, 1, 3}, std::vector<float>{-1, 0, 2});
    auto st = BatchNormState<float>::make(1);
    st.gamma = Tensor({1}, 2.0f);
    st.beta = Tensor({1}, 1.0f);
    Tensor y = batchnorm3d(x, st, false);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(y.data()[i], 2 * x.data()[i] + 1, 1e-4);
    EXPECT_EQ(st.running_mean.item(), 0.0f);
}

TEST(BatchNorm, ChannelMismatchThrows) {
    auto st = BatchNormState<float>::make(3);
    EXPECT_THROW(batchnorm3d(Tensor({1, 2, 1, 2, 2}), st, true), ShapeError);
}

TEST(Softmax, ClosedForms) {
    Tensor u = softmax(Tensor({4}, 0.0f), 0);
    for (float v : u.data()) EXPECT_FLOAT_EQ(v, 0.25f);
    Tensor big = softmax(Tensor({2}, 1000.0f), 0);
    EXPECT_FLOAT_EQ(big.at({0}), 0.5f);
    Tensor l = softmax(Tensor({3}, std::vector<float>{0, std::log(2.0f), std::log(3.0f)}), 0);
    EXPECT_NEAR(l.at({0}), 1.0 / 6, 1e-6);
    EXPECT_NEAR(l.at({1}), 2.0 / 6, 1e-6);
    EXPECT_NEAR(l.at({2}), 3.0 / 6, 1e-6);
}

TEST(Softmax, ShiftInvariantAndNormalizedAlongInnerAxis) {
    Tensor x({3, 5, 2}, NormalInit{0, 3, 6});
    Tensor shifted = add(x, Tensor({1}, 7.5f));
    Tensor a = softmax(x, 1), b = softmax(shifted, 1);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-6);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t k = 0; k < 2; ++k) {
            double s = 0;
            for (std::size_t j = 0; j < 5; ++j) s += a.at({i, j, k});
            EXPECT_NEAR(s, 1.0, 1e-5);
        }
    EXPECT_THROW(softmax(x, 3), ShapeError);
}

TEST(GlobalAvgPool, Means) {
    Tensor c = global_avg_pool(Tensor({1, 2, 2, 2, 2}, 1.5f));
    EXPECT_EQ(c.shape(), (Shape{1, 2}));
    EXPECT_FLOAT_EQ(c.at({0, 1}), 1.5f);
    EXPECT_FLOAT_EQ(global_avg_pool(Tensor({1, 1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4})).item(), 2.5f);
    EXPECT_EQ(global_avg_pool(Tensor({2, 512, 3, 4, 4})).shape(), (Shape{2, 512}));
}

TEST(Linear, HandCases) {
    Tensor x({2, 2}, std::vector<float>{1, 2, 3, 4});
    Tensor y = linear(x, Tensor({2, 2}, std::vector<float>{1, 0, 0, 1}), Tensor({2}, 0.0f));
    EXPECT_TRUE(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
    Tensor z = linear(Tensor({1, 2}, std::vector<float>{1, 2}), Tensor({2, 1}, 1.0f), Tensor({1}, 0.5f));
    EXPECT_FLOAT_EQ(z.item(), 3.5f);
    EXPECT_THROW(linear(x, Tensor({3, 1}), Tensor({1})), ShapeError);
}

class RegisteredGradient : public ::testing::TestWithParam<std::string> {};

TEST_P(RegisteredGradient, PassesTwentyTrials) {
    const auto s = gradcheck::run(GetParam(), 20, 1e-3, 77);
    EXPECT_EQ(s.passed, s.trials) << "worst rel error " << s.worst_rel_error;
    EXPECT_EQ(s.trials, 20u);
}

INSTANTIATE_TEST_SUITE_P(CoreOps, RegisteredGradient, ::testing::Values("conv3d", "batchnorm", "linear", "softmax"));

TEST(Gradcheck, ZeroToleranceFails) {
    const auto s = gradcheck::run("conv3d", 3, 0.0, 1);
    EXPECT_EQ(s.passed, 0u);
}

TEST(Gradcheck, UnknownOpThrows) { EXPECT_THROW(gradcheck::run("nope", 1, 1e-3, 1), ConfigError); }

TEST(Conv3d, SinglePrecisionGradientsTrackDoublePath) {
    Tensor64 x({2, 2, 3, 4, 4}, NormalInit{0, 1, 1});
    Tensor64 w({3, 2, 3, 3, 3}, NormalInit{0, 0.3, 2});
    ConvOptions o{{1, 2, 2}, {1, 1, 1}};
    Tensor64 r({2, 3, 3, 2, 2}, NormalInit{0, 1, 3});
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    backward(sum(mul(conv3d(x, w, Tensor64(), o), r)));
    Tensor xf = convert<float>(x), wf = convert<float>(w);
    xf.set_requires_grad(true);
    wf.set_requires_grad(true);
    backward(sum(mul(conv3d(xf, wf, Tensor(), o), convert<float>(r))));
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(xf.grad()[i], x.grad()[i], 1e-4);
    for (std::size_t i = 0; i < w.numel(); ++i) EXPECT_NEAR(wf.grad()[i], w.grad()[i], 1e-4);
}
