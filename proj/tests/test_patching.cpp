#include <gtest/gtest.h>

#include <set>

#include "sslpdl/patching.hpp"
#include "test_support.hpp"

using namespace sslpdl;
using testing_support::random_grid;

TEST(Patch, Arithmetic) {
    PatchConfig c{2, 16};
    EXPECT_EQ(c.token_dim(), 512u);
    EXPECT_EQ(c.n_tokens(16, 224, 128), 896u);
    EXPECT_THROW(c.n_tokens(3, 224, 128), ArgumentError);
    EXPECT_THROW(c.n_tokens(16, 100, 128), ArgumentError);
}

TEST(Patch, RoundTripIsBitExact) {
    const PatchConfig c{2, 4};
    const auto x = random_grid(4, 8, 12, 3);
    const auto t = tokenize(x, c);
    EXPECT_EQ(t.n_tokens, 2u * 2 * 3);
    EXPECT_EQ(detokenize(t, c, 4, 8, 12), x);
}

TEST(Patch, TokenOrderIsGroupRowCol) {
    const PatchConfig c{1, 2};
    GridField x(2, 4, 4);
    for (std::size_t i = 0; i < x.values.size(); ++i) x.values[i] = static_cast<float>(i);
    const auto t = tokenize(x, c);
    EXPECT_EQ(t.row(0)[0], x.at(0, 0, 0));
    EXPECT_EQ(t.row(1)[0], x.at(0, 0, 2));
    EXPECT_EQ(t.row(2)[0], x.at(0, 2, 0));
    EXPECT_EQ(t.row(4)[0], x.at(1, 0, 0));
    EXPECT_EQ(t.row(0)[3], x.at(0, 1, 1));
    EXPECT_EQ(c.token_of(1, 3, 3, 4, 4), 7u);
}

TEST(Patch, SingleTokenDegenerate) {
    const PatchConfig c{3, 8};
    const auto x = random_grid(3, 8, 8, 1);
    const auto t = tokenize(x, c);
    EXPECT_EQ(t.n_tokens, 1u);
    EXPECT_EQ(t.dim, 3u * 8 * 8);
    EXPECT_TRUE(std::equal(t.data.begin(), t.data.end(), x.values.begin()));
}

TEST(Patch, DetokenizeShapeMismatch) {
    const PatchConfig c{2, 4};
    const auto t = tokenize(random_grid(2, 8, 8, 1), c);
    EXPECT_THROW(detokenize(t, c, 2, 8, 12), ArgumentError);
    EXPECT_THROW(detokenize(t, PatchConfig{2, 2}, 2, 8, 8), ArgumentError);
}

TEST(Patch, ZeroTokensGiveZeroField) {
    const PatchConfig c{2, 4};
    TokenMatrix<float> t{c.n_tokens(2, 8, 8), c.token_dim(), std::vector<float>(2 * 8 * 8, 0.0f)};
    for (float v : detokenize(t, c, 2, 8, 8).values) EXPECT_EQ(v, 0.0f);
}

TEST(Mask, CountsAndDeterminism) {
    EXPECT_EQ(make_mask(896, 0.75, 1).indices.size(), 672u);
    EXPECT_TRUE(make_mask(896, 0.0, 1).indices.empty());
    EXPECT_EQ(make_mask(896, 1.0, 1).indices.size(), 896u);
    EXPECT_EQ(make_mask(50, 0.3, 9), make_mask(50, 0.3, 9));
    EXPECT_NE(make_mask(50, 0.3, 9), make_mask(50, 0.3, 10));
    EXPECT_THROW(make_mask(10, 1.1, 0), ArgumentError);
    const auto m = make_mask(100, 0.4, 2);
    EXPECT_TRUE(std::is_sorted(m.indices.begin(), m.indices.end()));
    EXPECT_EQ(std::set<std::size_t>(m.indices.begin(), m.indices.end()).size(), m.indices.size());
    EXPECT_LT(m.indices.back(), 100u);
}

TEST(Mask, IsRoughlyUniform) {
    std::vector<int> hits(20, 0);
    for (std::uint64_t s = 0; s < 2000; ++s)
        for (auto i : make_mask(20, 0.25, s).indices) ++hits[i];
    for (int h : hits) EXPECT_NEAR(h, 500, 100);
}

TEST(Mask, ApplyTouchesOnlyMaskedPatches) {
    const PatchConfig c{2, 4};
    auto x = random_grid(4, 8, 8, 5);
    for (auto& v : x.values)
        if (v == 0.0f) v = 1.0f;
    const std::size_t n = c.n_tokens(4, 8, 8);
    for (double rho : {0.0, 0.3, 0.5, 1.0}) {
        const auto m = make_mask(n, rho, 7);
        const auto flags = m.as_flags();
        const auto y = apply_mask(x, m, c);
        std::size_t changed = 0;
        for (std::size_t v = 0; v < 4; ++v)
            for (std::size_t r = 0; r < 8; ++r)
                for (std::size_t col = 0; col < 8; ++col) {
                    const bool masked = flags[c.token_of(v, r, col, 8, 8)];
                    if (masked) EXPECT_EQ(y.at(v, r, col), 0.0f);
                    else EXPECT_EQ(y.at(v, r, col), x.at(v, r, col));
                    changed += y.at(v, r, col) != x.at(v, r, col);
                }
        EXPECT_EQ(changed, m.indices.size() * c.token_dim());
    }
    EXPECT_THROW(apply_mask(x, make_mask(n + 1, 0.5, 1), c), ArgumentError);
}
