#include <gtest/gtest.h>

#include <map>
#include <set>

#include "sslpdl/sampling.hpp"
#include "test_support.hpp"

using namespace sslpdl;

namespace {

// In-memory manifest with per-entry rain-pixel counts out of 1000.
struct FakeSet {
    DatasetManifest m;
    std::map<std::string, std::size_t> rain;

    void add(const std::string& id, std::size_t r) {
        m.entries.push_back({id, id + ".f", id + ".t", "2020-07-01T00:00", "train", std::nullopt});
        rain[id] = r;
    }

    CountFn counter() const {
        return [this](const ManifestEntry& e) {
            std::string base = e.sample_id.substr(0, e.sample_id.find('~'));
            return PixelCounts{1000, rain.at(base)};
        };
    }
};

FakeSet mixed(std::size_t rainy, std::size_t dry) {
    FakeSet s;
    for (std::size_t i = 0; i < rainy; ++i) s.add("r" + std::to_string(i), 100 + (10 * i) % 500);
    for (std::size_t i = 0; i < dry; ++i) s.add("d" + std::to_string(i), i % 5);
    return s;
}

std::size_t count_rainy(const FakeSet& s, const DatasetManifest& m) {
    std::size_t n = 0;
    for (const auto& e : m.entries) n += s.counter()(e).rain_fraction() >= 0.01;
    return n;
}

} // namespace

TEST(RainyDays, FractionIsHonoured) {
    const auto s = mixed(50, 50);
    const auto out = sample_rainy_days(s.m, s.counter(), 0.8, RainyRule{}, 11);
    EXPECT_EQ(out.size(), 100u);
    EXPECT_EQ(count_rainy(s, out), 80u);
    std::set<std::string> ids;
    for (const auto& e : out.entries) ids.insert(e.sample_id);
    EXPECT_EQ(ids.size(), 100u);
}

TEST(RainyDays, ZeroFractionKeepsDryOnly) {
    const auto s = mixed(30, 10);
    const auto out = sample_rainy_days(s.m, s.counter(), 0.0, RainyRule{}, 1);
    EXPECT_EQ(out.size(), 40u);
    EXPECT_EQ(count_rainy(s, out), 0u);
}

TEST(RainyDays, Deterministic) {
    const auto s = mixed(40, 60);
    EXPECT_EQ(sample_rainy_days(s.m, s.counter(), 0.5, RainyRule{}, 5),
              sample_rainy_days(s.m, s.counter(), 0.5, RainyRule{}, 5));
}

TEST(RainyDays, EmptyStratumThrows) {
    const auto s = mixed(10, 0);
    EXPECT_THROW(sample_rainy_days(s.m, s.counter(), 0.5, RainyRule{}, 1), SamplingError);
    EXPECT_THROW(sample_rainy_days(s.m, s.counter(), 1.5, RainyRule{}, 1), ArgumentError);
}

TEST(Resample, UnderReachesTarget) {
    const auto s = mixed(40, 60);
    const double before = no_rain_fraction(s.m, s.counter());
    ASSERT_GT(before, 0.82);
    const auto out = resample_pixel_ratio(s.m, s.counter(), 0.8, ResampleMode::under, 3);
    const double f = no_rain_fraction(out, s.counter());
    EXPECT_GE(f, 0.78);
    EXPECT_LE(f, 0.82);
    EXPECT_LT(out.size(), s.m.size());
}

TEST(Resample, OverOnlyAppends) {
    const auto s = mixed(40, 60);
    const auto out = resample_pixel_ratio(s.m, s.counter(), 0.7, ResampleMode::over, 3);
    ASSERT_GT(out.size(), s.m.size());
    for (std::size_t i = 0; i < s.m.size(); ++i) EXPECT_EQ(out.entries[i], s.m.entries[i]);
    for (std::size_t i = s.m.size(); i < out.size(); ++i) {
        ASSERT_TRUE(out.entries[i].augment.has_value());
        EXPECT_EQ(out.entries[i].sample_id[0], 'r');
    }
    EXPECT_NEAR(no_rain_fraction(out, s.counter()), 0.7, 0.02);
}

TEST(Resample, AtTargetUnchanged) {
    const auto s = mixed(40, 60);
    const double f = no_rain_fraction(s.m, s.counter());
    EXPECT_EQ(resample_pixel_ratio(s.m, s.counter(), f, ResampleMode::under, 1), s.m);
    EXPECT_EQ(resample_pixel_ratio(s.m, s.counter(), f, ResampleMode::over, 1), s.m);
}

TEST(Resample, UnreachableReportsAchieved) {
    const auto s = mixed(0, 20);
    try {
        resample_pixel_ratio(s.m, s.counter(), 0.2, ResampleMode::under, 1);
        FAIL() << "expected SamplingError";
    } catch (const SamplingError& e) {
        EXPECT_NE(std::string(e.what()).find("achieved"), std::string::npos);
    }
}

namespace {
Sample make_sample(unsigned seed) {
    return {testing_support::random_grid(3, 12, 10, seed), testing_support::random_rain(12, 10, seed + 1)};
}
} // namespace

TEST(Augment, FlipIsInvolution) {
    const auto s = make_sample(1);
    for (auto op : {AugmentOp::flip_h, AugmentOp::flip_v}) {
        const auto once = augment(s, op, 4);
        EXPECT_NE(once, s);
        EXPECT_EQ(augment(once, op, 9), s);
    }
}

TEST(Augment, FlipMovesTruthWithForecast) {
    const auto s = make_sample(2);
    const auto f = augment(s, AugmentOp::flip_h, 0);
    const std::size_t w = 10;
    for (std::size_t r = 0; r < 12; ++r)
        for (std::size_t c = 0; c < w; ++c) {
            EXPECT_EQ(f.truth.gamma[r * w + c], s.truth.gamma[r * w + (w - 1 - c)]);
            EXPECT_EQ(f.forecast.at(2, r, c), s.forecast.at(2, r, w - 1 - c));
        }
}

TEST(Augment, MixupLambdaOneIsIdentity) {
    const auto a = make_sample(3), b = make_sample(4);
    AugmentParams p;
    p.mixup_lambda = 1.0;
    EXPECT_EQ(augment(a, AugmentOp::mixup, 1, &b, p), a);
    EXPECT_THROW(augment(a, AugmentOp::mixup, 1), ArgumentError);
}

TEST(Augment, NoiseLeavesTruthAlone) {
    const auto s = make_sample(5);
    AugmentParams zero;
    zero.noise_sigma = 0;
    EXPECT_EQ(augment(s, AugmentOp::gaussian_noise, 1, nullptr, zero), s);
    const auto n = augment(s, AugmentOp::gaussian_noise, 1);
    EXPECT_EQ(n.truth, s.truth);
    EXPECT_NE(n.forecast, s.forecast);
}

TEST(Augment, ResizeUnitFactorIsIdentityAndRangeChecked) {
    const auto s = make_sample(6);
    AugmentParams p;
    p.resize_factor = 1.0;
    const auto r = augment(s, AugmentOp::resize, 1, nullptr, p);
    for (std::size_t i = 0; i < s.truth.size(); ++i) EXPECT_FLOAT_EQ(r.truth.gamma[i], s.truth.gamma[i]);
    p.resize_factor = 2.0;
    EXPECT_THROW(augment(s, AugmentOp::resize, 1, nullptr, p), ArgumentError);
}
