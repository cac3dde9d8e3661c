#include <gtest/gtest.h>

#include <cmath>

#include "dsslab/synthetic.hpp"
#include "test_util.hpp"

using dsslab::Domain;
using dsslab::generate_domains;
using dsslab::ShiftSpec;
using dsslab::SyntheticDomainSpec;

namespace {

SyntheticDomainSpec small_spec() {
    SyntheticDomainSpec spec;
    spec.num_classes = 4;
    spec.samples_per_class = 6;
    spec.seed = 99;
    return spec;
}

}  // namespace

TEST(GenerateDomains, NullShiftGivesIdenticalDomains) {
    SyntheticDomainSpec spec = small_spec();
    auto [source, target] = generate_domains(spec);
    ASSERT_EQ(source.size(), target.size());
    for (std::size_t i = 0; i < source.size(); ++i) {
        EXPECT_TRUE(source[i].image == target[i].image);
        EXPECT_EQ(source[i].label, target[i].label);
    }
}

TEST(GenerateDomains, SameSeedIsBitIdentical) {
    SyntheticDomainSpec spec = small_spec();
    spec.shift = ShiftSpec{0.2, 1.3, 0.1, 0.4};
    auto [s1, t1] = generate_domains(spec);
    auto [s2, t2] = generate_domains(spec);
    ASSERT_EQ(s1.size(), s2.size());
    for (std::size_t i = 0; i < s1.size(); ++i) {
        EXPECT_TRUE(s1[i].image == s2[i].image);
        EXPECT_TRUE(t1[i].image == t2[i].image);
    }
}

TEST(GenerateDomains, ShiftMovesPixelsButNotLabels) {
    SyntheticDomainSpec spec = small_spec();
    spec.shift.noise_std = 0.2;
    spec.shift.brightness_offset = 0.3;
    auto [source, target] = generate_domains(spec);
    double diff_sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < source.size(); ++i) {
        EXPECT_EQ(source[i].label, target[i].label);
        for (std::size_t p = 0; p < source[i].image.size(); ++p) {
            diff_sum += std::abs(target[i].image[p] - source[i].image[p]);
            ++n;
        }
    }
    EXPECT_GT(diff_sum / static_cast<double>(n), 0.1);
}

TEST(GenerateDomains, LabelMarginalsBalanced) {
    SyntheticDomainSpec spec = small_spec();
    auto [source, target] = generate_domains(spec);
    std::vector<int> counts_s(4, 0), counts_t(4, 0);
    for (const auto& s : source) ++counts_s[static_cast<std::size_t>(*s.label)];
    for (const auto& t : target) ++counts_t[static_cast<std::size_t>(*t.label)];
    for (int c = 0; c < 4; ++c) {
        EXPECT_EQ(counts_s[static_cast<std::size_t>(c)], spec.samples_per_class);
        EXPECT_EQ(counts_t[static_cast<std::size_t>(c)], spec.samples_per_class);
    }
}

TEST(GenerateDomains, DomainsTagged) {
    auto [source, target] = generate_domains(small_spec());
    for (const auto& s : source) EXPECT_EQ(s.domain, Domain::source);
    for (const auto& t : target) EXPECT_EQ(t.domain, Domain::target);
}

TEST(GenerateDomains, HueRotationPreservesGrayAxis) {
    // The rotation axis is (1,1,1): a gray image stays put under pure hue shift.
    SyntheticDomainSpec spec = small_spec();
    spec.shift.hue_rotation = 1.2;
    auto [source, target] = generate_domains(spec);
    const std::size_t plane = static_cast<std::size_t>(spec.height) * spec.width;
    for (std::size_t i = 0; i < source.size(); ++i)
        for (std::size_t p = 0; p < plane; ++p) {
            const double sum_s = source[i].image[p] + source[i].image[plane + p] +
                                 source[i].image[2 * plane + p];
            const double sum_t = target[i].image[p] + target[i].image[plane + p] +
                                 target[i].image[2 * plane + p];
            ASSERT_NEAR(sum_s, sum_t, 1e-9);
        }
}

TEST(SyntheticDomainSpec, ValidationRejectsBadShift) {
    SyntheticDomainSpec spec = small_spec();
    spec.shift.contrast_scale = 0.0;
    EXPECT_THROW(spec.validate(), std::invalid_argument);
    spec = small_spec();
    spec.shift.noise_std = -0.1;
    EXPECT_THROW(spec.validate(), std::invalid_argument);
    spec = small_spec();
    spec.samples_per_class = 0;
    EXPECT_THROW(spec.validate(), std::invalid_argument);
}
