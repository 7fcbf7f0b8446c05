#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include <json.hpp>

#include "sslpdl/error.hpp"
#include "sslpdl/grid.hpp"
#include "sslpdl/random.hpp"

namespace sslpdl {

// Non-overlapping q x p x p patches over a (n, h, w) field.
struct PatchConfig {
    std::size_t q = 2; // channels per patch
    std::size_t p = 16; // spatial side

    std::size_t token_dim() const noexcept { return q * p * p; }
    bool operator==(const PatchConfig&) const = default;

    std::size_t n_tokens(std::size_t n, std::size_t h, std::size_t w) const {
        check(n, h, w);
        return (n * h * w) / token_dim();
    }

    void check(std::size_t n, std::size_t h, std::size_t w) const {
        if (q == 0 || p == 0) throw ArgumentError("patch: q and p must be positive");
        if (n % q != 0) throw ArgumentError("patch: q must divide the variable count");
        if (h % p != 0 || w % p != 0) throw ArgumentError("patch: p must divide height and width");
    }

    // Token holding element (v, r, c).
    std::size_t token_of(std::size_t v, std::size_t r, std::size_t c, std::size_t h, std::size_t w) const {
        return ((v / q) * (h / p) + r / p) * (w / p) + c / p;
    }
};

inline void to_json(nlohmann::json& j, const PatchConfig& c) { j = {{"q", c.q}, {"p", c.p}}; }
inline void from_json(const nlohmann::json& j, PatchConfig& c) {
    PatchConfig d;
    c.q = j.value("q", d.q);
    c.p = j.value("p", d.p);
}

// Row-major (n_tokens x dim) token matrix.
template <class T>
struct TokenMatrix {
    std::size_t n_tokens = 0;
    std::size_t dim = 0;
    std::vector<T> data;

    std::span<T> row(std::size_t t) { return {data.data() + t * dim, dim}; }
    std::span<const T> row(std::size_t t) const { return {data.data() + t * dim, dim}; }
    bool operator==(const TokenMatrix&) const = default;
};

namespace detail {

// Calls fn(token, offset_in_token, flat_field_index) for every element.
// Token order: (channel group, patch row, patch col); in-token order: (channel, row, col).
template <class Fn>
inline void for_each_patch_element(const PatchConfig& cfg, std::size_t n, std::size_t h, std::size_t w, Fn&& fn) {
    const std::size_t q = cfg.q, p = cfg.p, gh = h / p, gw = w / p;
    std::size_t t = 0;
    for (std::size_t g = 0; g < n / q; ++g)
        for (std::size_t i = 0; i < gh; ++i)
            for (std::size_t j = 0; j < gw; ++j, ++t) {
                std::size_t k = 0;
                for (std::size_t dv = 0; dv < q; ++dv)
                    for (std::size_t dr = 0; dr < p; ++dr) {
                        const std::size_t base = ((g * q + dv) * h + i * p + dr) * w + j * p;
                        for (std::size_t dc = 0; dc < p; ++dc, ++k) fn(t, k, base + dc);
                    }
            }
}

} // namespace detail

template <class T, class U>
inline TokenMatrix<T> tokenize_values(std::span<const U> values, std::size_t n, std::size_t h, std::size_t w,
                                      const PatchConfig& cfg) {
    if (values.size() != n * h * w) throw ArgumentError("tokenize: value count does not match shape");
    TokenMatrix<T> tm{cfg.n_tokens(n, h, w), cfg.token_dim(), {}};
    tm.data.resize(values.size());
    detail::for_each_patch_element(cfg, n, h, w, [&](std::size_t t, std::size_t k, std::size_t idx) {
        tm.data[t * tm.dim + k] = static_cast<T>(values[idx]);
    });
    return tm;
}

template <class T, class U>
inline void detokenize_values(const TokenMatrix<U>& tokens, const PatchConfig& cfg, std::size_t n, std::size_t h,
                              std::size_t w, std::span<T> out) {
    if (tokens.dim != cfg.token_dim() || tokens.n_tokens != cfg.n_tokens(n, h, w) ||
        tokens.data.size() != tokens.n_tokens * tokens.dim || out.size() != n * h * w)
        throw ArgumentError("detokenize: token matrix does not match (n, h, w, patch)");
    detail::for_each_patch_element(cfg, n, h, w, [&](std::size_t t, std::size_t k, std::size_t idx) {
        out[idx] = static_cast<T>(tokens.data[t * tokens.dim + k]);
    });
}

inline TokenMatrix<float> tokenize(const GridField& x, const PatchConfig& cfg) {
    return tokenize_values<float>(std::span<const float>(x.values), x.n_vars, x.height, x.width, cfg);
}

inline GridField detokenize(const TokenMatrix<float>& tokens, const PatchConfig& cfg, std::size_t n, std::size_t h,
                            std::size_t w) {
    GridField out(n, h, w);
    detokenize_values<float>(tokens, cfg, n, h, w, std::span<float>(out.values));
    return out;
}

struct MaskSet {
    std::size_t total = 0;
    double ratio = 0.0;
    std::uint64_t seed = 0;
    std::vector<std::size_t> indices; // sorted, unique

    bool operator==(const MaskSet&) const = default;

    std::vector<bool> as_flags() const {
        std::vector<bool> f(total, false);
        for (auto i : indices) f[i] = true;
        return f;
    }
};

inline std::size_t masked_count(std::size_t n_tokens, double ratio) {
    return static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n_tokens)));
}

// Uniform sample without replacement of round(ratio * n) token indices.
inline MaskSet make_mask(std::size_t n_tokens, double ratio, std::uint64_t seed) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw ArgumentError("mask: ratio outside [0, 1]");
    MaskSet m{n_tokens, ratio, seed, {}};
    const std::size_t k = masked_count(n_tokens, ratio);
    std::vector<std::size_t> pool(n_tokens);
    std::iota(pool.begin(), pool.end(), 0);
    auto eng = keyed_engine(seed, n_tokens, Stream::mask);
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n_tokens - 1);
        std::swap(pool[i], pool[pick(eng)]);
    }
    m.indices.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(m.indices.begin(), m.indices.end());
    return m;
}

inline constexpr float kMaskFill = 0.0f;

// Masked patches are replaced by the fill value 0 in input space.
template <class T>
inline void apply_mask_values(std::span<T> values, std::size_t n, std::size_t h, std::size_t w, const MaskSet& mask,
                              const PatchConfig& cfg) {
    if (mask.total != cfg.n_tokens(n, h, w)) throw ArgumentError("apply_mask: mask built for a different token count");
    if (mask.indices.empty()) return;
    const auto flags = mask.as_flags();
    detail::for_each_patch_element(cfg, n, h, w, [&](std::size_t t, std::size_t, std::size_t idx) {
        if (flags[t]) values[idx] = static_cast<T>(kMaskFill);
    });
}

inline GridField apply_mask(const GridField& x, const MaskSet& mask, const PatchConfig& cfg) {
    GridField out = x;
    apply_mask_values<float>(std::span<float>(out.values), x.n_vars, x.height, x.width, mask, cfg);
    return out;
}

} // namespace sslpdl
