#include <gtest/gtest.h>

#include <cmath>

#include "dsslab/analysis.hpp"
#include "dsslab/network.hpp"
#include "test_util.hpp"

using dsslab::amplification_ratio;
using dsslab::build_histogram;
using dsslab::direction_drift;
using dsslab::GradRecorder;
using dsslab::GradStatsRecord;
using dsslab::LayerSpec;
using dsslab::Network;
using dsslab::svd_spectrum_report;
using dsslab::Tensor;
using testutil::random_tensor;

TEST(BuildHistogram, EmptyInputGivesZeroCounts) {
    auto h = build_histogram({}, 4, -1.0, 1.0);
    ASSERT_EQ(h.counts.size(), 4u);
    for (long c : h.counts) EXPECT_EQ(c, 0);
}

TEST(BuildHistogram, IdenticalValuesSingleBin) {
    auto h = build_histogram(std::vector<double>(17, 0.3), 10, -1.0, 1.0);
    long total = 0;
    int nonzero = 0;
    for (long c : h.counts) {
        total += c;
        if (c > 0) ++nonzero;
    }
    EXPECT_EQ(total, 17);
    EXPECT_EQ(nonzero, 1);
}

TEST(BuildHistogram, HandBinning) {
    auto h = build_histogram({-1.0, 0.0, 1.0}, 3, -1.5, 1.5);
    ASSERT_EQ(h.counts.size(), 3u);
    EXPECT_EQ(h.counts[0], 1);
    EXPECT_EQ(h.counts[1], 1);
    EXPECT_EQ(h.counts[2], 1);
}

TEST(BuildHistogram, OutOfRangeClippedIntoEndBins) {
    auto h = build_histogram({-5.0, 5.0, 0.0}, 2, -1.0, 1.0);
    EXPECT_EQ(h.counts[0], 1);
    EXPECT_EQ(h.counts[1], 2);  // 0.0 lands in the upper half bin
}

TEST(BuildHistogram, UniformSamplesWithinBinomialBound) {
    dsslab::Rng rng(71);
    std::vector<double> vals(1000);
    for (double& v : vals) v = rng.uniform(-1.0, 1.0);
    auto h = build_histogram(vals, 10, -1.0, 1.0);
    // per-bin count ~ Binomial(1000, 0.1): mean 100, sigma ~ 9.49, 5 sigma band
    const double sigma = std::sqrt(1000 * 0.1 * 0.9);
    long total = 0;
    for (long c : h.counts) {
        total += c;
        EXPECT_NEAR(static_cast<double>(c), 100.0, 5.0 * sigma);
    }
    EXPECT_EQ(total, 1000);
}

TEST(BuildHistogram, CountConservationProperty) {
    dsslab::Rng rng(72);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t n = rng.below(300);
        std::vector<double> vals(n);
        for (double& v : vals) v = rng.normal() * 3.0;
        auto h = build_histogram(vals, 1 + static_cast<int>(rng.below(30)), -2.0, 2.0);
        long total = 0;
        for (long c : h.counts) total += c;
        EXPECT_EQ(static_cast<std::size_t>(total), n);
    }
}

TEST(BuildHistogram, InvalidRangeRejected) {
    EXPECT_THROW(build_histogram({1.0}, 4, 1.0, 1.0), std::invalid_argument);
    EXPECT_THROW(build_histogram({1.0}, 0, 0.0, 1.0), std::invalid_argument);
}

namespace {

Network tiny_backbone(dsslab::Rng& rng) {
    std::vector<LayerSpec> specs = {LayerSpec::conv2d("conv1", 1, 2, 3, 1, 1),
                                    LayerSpec::relu("r1"), LayerSpec::flatten("flat"),
                                    LayerSpec::linear("fc", 2 * 4 * 4, 3)};
    return Network(specs, rng);
}

}  // namespace

TEST(GradRecorder, RecordsOnePerWeightBearingLayer) {
    dsslab::Rng rng(73);
    Network net = tiny_backbone(rng);
    Tensor x = random_tensor({2, 1, 4, 4}, rng);
    Tensor out = net.forward(x, true);
    net.backward(random_tensor(out.shape(), rng));

    GradRecorder rec(60);
    rec.record(net, 0);
    EXPECT_EQ(rec.records().size(), 2u);  // conv1 and fc
    EXPECT_EQ(rec.records()[0].layer, "conv1");
    EXPECT_EQ(rec.records()[1].layer, "fc");
    for (const auto& r : rec.records()) {
        long total = 0;
        for (long c : r.counts) total += c;
        EXPECT_EQ(static_cast<std::size_t>(total), net.main_weights()[r.layer == "conv1" ? 0 : 1]
                                                       .second->grad.size());
    }
}

TEST(GradRecorder, BeforeAnyBackwardIsStateError) {
    dsslab::Rng rng(74);
    Network net = tiny_backbone(rng);
    GradRecorder rec(60);
    EXPECT_THROW(rec.record(net, 0), dsslab::StateError);
}

TEST(GradRecorder, ZeroGradientsDegenerate) {
    dsslab::Rng rng(75);
    Network net = tiny_backbone(rng);
    Tensor x = random_tensor({2, 1, 4, 4}, rng);
    Tensor out = net.forward(x, true);
    net.backward(Tensor(out.shape()));  // zero grad out -> zero grads

    GradRecorder rec(61);  // odd bin count: one bin straddles zero
    rec.record(net, 0);
    for (const auto& r : rec.records()) {
        EXPECT_DOUBLE_EQ(r.stddev, 0.0);
        long total = 0;
        long middle = r.counts[r.counts.size() / 2];
        for (long c : r.counts) total += c;
        EXPECT_EQ(middle, total);  // all mass in the zero-containing bin
    }
}

namespace {

std::vector<GradStatsRecord> fake_stream(const std::vector<double>& stds, const std::string& layer) {
    std::vector<GradStatsRecord> out;
    for (std::size_t i = 0; i < stds.size(); ++i) {
        GradStatsRecord r;
        r.layer = layer;
        r.step = static_cast<int>(i);
        r.stddev = stds[i];
        out.push_back(r);
    }
    return out;
}

}  // namespace

TEST(AmplificationRatio, IdenticalStreamsGiveOne) {
    auto a = fake_stream({0.1, 0.2, 0.3}, "conv1");
    EXPECT_DOUBLE_EQ(amplification_ratio(a, a, "conv1"), 1.0);
}

TEST(AmplificationRatio, ScaledStreamGivesScale) {
    auto base = fake_stream({0.1, 0.2, 0.3}, "conv1");
    auto dss = fake_stream({0.2, 0.4, 0.6}, "conv1");
    EXPECT_NEAR(amplification_ratio(dss, base, "conv1"), 2.0, 1e-12);
}

TEST(AmplificationRatio, ZeroBaselineUndefined) {
    auto base = fake_stream({0.0, 0.0}, "conv1");
    auto dss = fake_stream({0.1, 0.1}, "conv1");
    EXPECT_THROW(amplification_ratio(dss, base, "conv1"), dsslab::UndefinedRatioError);
}

TEST(AmplificationRatio, MismatchedStepsRejected) {
    auto base = fake_stream({0.1, 0.2}, "conv1");
    auto dss = fake_stream({0.1}, "conv1");
    EXPECT_THROW(amplification_ratio(dss, base, "conv1"), std::invalid_argument);
    EXPECT_THROW(amplification_ratio(dss, base, "missing"), std::invalid_argument);
}

TEST(DirectionDrift, ConstantSnapshots) {
    std::vector<Tensor> snaps(3, Tensor({2}, {1, 2}));
    auto t = direction_drift(snaps);
    for (double c : t.cosine_to_init) EXPECT_DOUBLE_EQ(c, 1.0);
    for (double a : t.step_angle) EXPECT_DOUBLE_EQ(a, 0.0);
}

TEST(DirectionDrift, OrthogonalPair) {
    auto t = direction_drift({Tensor({2}, {1, 0}), Tensor({2}, {0, 1})});
    EXPECT_NEAR(t.cosine_to_init[1], 0.0, 1e-15);
    EXPECT_NEAR(t.step_angle[0], M_PI / 2, 1e-12);
}

TEST(DirectionDrift, ScaleInvariance) {
    auto scaled = direction_drift({Tensor({2}, {1, 0}), Tensor({2}, {2, 0}), Tensor({2}, {3, 0})});
    auto constant =
        direction_drift({Tensor({2}, {1, 0}), Tensor({2}, {1, 0}), Tensor({2}, {1, 0})});
    for (std::size_t i = 0; i < 3; ++i)
        EXPECT_NEAR(scaled.cosine_to_init[i], constant.cosine_to_init[i], 1e-12);
    for (std::size_t i = 0; i < 2; ++i)
        EXPECT_NEAR(scaled.step_angle[i], constant.step_angle[i], 1e-12);
}

TEST(DirectionDrift, RandomScalingProperty) {
    dsslab::Rng rng(76);
    std::vector<Tensor> snaps;
    for (int i = 0; i < 6; ++i) snaps.push_back(random_tensor({3, 3}, rng));
    auto base = direction_drift(snaps);
    std::vector<Tensor> scaled = snaps;
    for (auto& s : scaled) s *= std::exp(rng.uniform(-2.0, 2.0));
    auto t = direction_drift(scaled);
    for (std::size_t i = 0; i < base.cosine_to_init.size(); ++i)
        EXPECT_NEAR(t.cosine_to_init[i], base.cosine_to_init[i], 1e-12);
    for (std::size_t i = 0; i < base.step_angle.size(); ++i)
        EXPECT_NEAR(t.step_angle[i], base.step_angle[i], 1e-12);
}

TEST(DirectionDrift, Rejections) {
    EXPECT_THROW(direction_drift({Tensor({2}, {1, 0})}), std::invalid_argument);
    EXPECT_THROW(direction_drift({Tensor({2}, {1, 0}), Tensor({2})}), dsslab::NumericError);
    EXPECT_THROW(direction_drift({Tensor({2}, {1, 0}), Tensor({3}, {1, 0, 0})}),
                 std::invalid_argument);
}

TEST(SvdSpectrum, IdentityWeight) {
    auto sigma = svd_spectrum_report(Tensor({2, 2}, {1, 0, 0, 1}), 2, 2);
    ASSERT_EQ(sigma.size(), 2u);
    EXPECT_NEAR(sigma[0], 1.0, 1e-12);
    EXPECT_NEAR(sigma[1], 1.0, 1e-12);
}

TEST(SvdSpectrum, RankOneOuterProduct) {
    Tensor u({3}, {1, 2, 2}), v({2}, {3, 4});
    Tensor w({6});
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 2; ++j)
            w[static_cast<std::size_t>(i * 2 + j)] = u[static_cast<std::size_t>(i)] * v[static_cast<std::size_t>(j)];
    auto sigma = svd_spectrum_report(w, 3, 2);
    EXPECT_NEAR(sigma[0], 15.0, 1e-9);
    EXPECT_NEAR(sigma[1], 0.0, 1e-9);
}

TEST(SvdSpectrum, SigmaSquaresSumToSquaredNorm) {
    dsslab::Rng rng(77);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor w = random_tensor({4, 6}, rng);
        auto sigma = svd_spectrum_report(w, 4, 6);
        double sum2 = 0.0;
        for (double s : sigma) sum2 += s * s;
        const double n2 = dsslab::inner_product(w, w);
        EXPECT_NEAR(sum2, n2, 1e-10 * std::max(1.0, n2));
    }
}

TEST(SvdSpectrum, OneByOneWeightGivesAbsoluteValue) {
    auto sigma = svd_spectrum_report(Tensor({1}, {-3.5}), 1, 1);
    ASSERT_EQ(sigma.size(), 1u);
    EXPECT_DOUBLE_EQ(sigma[0], 3.5);
}

TEST(SvdSpectrum, IncompatibleReshapeRejected) {
    EXPECT_THROW(svd_spectrum_report(Tensor({6}), 2, 2), std::invalid_argument);
    EXPECT_THROW(svd_spectrum_report(Tensor({17, 2}), 17, 2), std::invalid_argument);
}
