#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>

#include "sslpdl/error.hpp"
#include "sslpdl/grid.hpp"
#include "sslpdl/manifest.hpp"
#include "sslpdl/random.hpp"
#include "sslpdl/synth.hpp"

namespace sslpdl {

// Forecast input paired with its truth rainfall.
struct Sample {
    GridField forecast;
    RainField truth;
    bool operator==(const Sample&) const = default;
};

struct AugmentParams {
    double resize_min = 0.75;
    double resize_max = 1.25;
    double noise_sigma = 0.1;   // forecast channels only
    double mixup_alpha = 0.2;   // lambda ~ Beta(a, a)
    std::optional<double> resize_factor; // overrides the seeded draw
    std::optional<double> mixup_lambda;  // overrides the seeded draw
};

namespace detail {

template <class Fn>
inline void remap_planes(Sample& s, Fn&& src_index) {
    const std::size_t h = s.truth.height, w = s.truth.width;
    auto remap = [&](std::span<float> plane) {
        std::vector<float> copy(plane.begin(), plane.end());
        for (std::size_t r = 0; r < h; ++r)
            for (std::size_t c = 0; c < w; ++c) plane[r * w + c] = copy[src_index(r, c)];
    };
    for (std::size_t v = 0; v < s.forecast.n_vars; ++v) remap(s.forecast.channel(v));
    remap(s.truth.gamma);
}

// Bilinear zoom about the grid centre; samples falling outside read as 0.
inline void zoom_plane(std::span<float> plane, std::size_t h, std::size_t w, double factor) {
    std::vector<float> src(plane.begin(), plane.end());
    const double cy = (static_cast<double>(h) - 1) / 2, cx = (static_cast<double>(w) - 1) / 2;
    auto sample = [&](long r, long c) -> double {
        if (r < 0 || c < 0 || r >= static_cast<long>(h) || c >= static_cast<long>(w)) return 0.0;
        return src[r * w + c];
    };
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
            const double y = (r - cy) / factor + cy, x = (c - cx) / factor + cx;
            const double y0 = std::floor(y), x0 = std::floor(x);
            const double fy = y - y0, fx = x - x0;
            const long iy = static_cast<long>(y0), ix = static_cast<long>(x0);
            const double v = (1 - fy) * ((1 - fx) * sample(iy, ix) + fx * sample(iy, ix + 1)) +
                             fy * ((1 - fx) * sample(iy + 1, ix) + fx * sample(iy + 1, ix + 1));
            plane[r * w + c] = static_cast<float>(v);
        }
}

inline double draw_beta(std::mt19937_64& eng, double a) {
    std::gamma_distribution<double> g(a, 1.0);
    const double x = g(eng), y = g(eng);
    return (x + y) > 0 ? x / (x + y) : 0.5;
}

} // namespace detail

// Geometric ops move forecast channels and truth together; noise touches the
// forecast only. Resize zooms by a factor in [resize_min, resize_max] and keeps
// the grid size, cropping or zero-padding about the centre.
inline Sample augment(const Sample& in, AugmentOp op, std::uint64_t seed, const Sample* partner = nullptr,
                      const AugmentParams& params = {}) {
    if (in.forecast.height != in.truth.height || in.forecast.width != in.truth.width)
        throw ArgumentError("augment: forecast and truth grids differ");
    Sample s = in;
    const std::size_t h = s.truth.height, w = s.truth.width;
    auto eng = keyed_engine(seed, 0, Stream::augment, static_cast<std::uint64_t>(op));
    switch (op) {
    case AugmentOp::flip_h:
        detail::remap_planes(s, [&](std::size_t r, std::size_t c) { return r * w + (w - 1 - c); });
        break;
    case AugmentOp::flip_v:
        detail::remap_planes(s, [&](std::size_t r, std::size_t c) { return (h - 1 - r) * w + c; });
        break;
    case AugmentOp::resize: {
        double f = params.resize_factor.value_or(
            std::uniform_real_distribution<double>(params.resize_min, params.resize_max)(eng));
        if (!(f >= params.resize_min && f <= params.resize_max))
            throw ArgumentError("augment: resize factor outside [0.75, 1.25]");
        for (std::size_t v = 0; v < s.forecast.n_vars; ++v) detail::zoom_plane(s.forecast.channel(v), h, w, f);
        detail::zoom_plane(s.truth.gamma, h, w, f);
        for (auto& g : s.truth.gamma) g = clip_rain(g);
        break;
    }
    case AugmentOp::mixup: {
        if (!partner) throw ArgumentError("augment: mixup requires a partner sample");
        if (partner->forecast.size() != s.forecast.size() || partner->truth.size() != s.truth.size())
            throw ArgumentError("augment: mixup partner shape mismatch");
        const double lam = params.mixup_lambda.value_or(detail::draw_beta(eng, params.mixup_alpha));
        const float a = static_cast<float>(lam), b = static_cast<float>(1.0 - lam);
        for (std::size_t i = 0; i < s.forecast.size(); ++i)
            s.forecast.values[i] = a * s.forecast.values[i] + b * partner->forecast.values[i];
        for (std::size_t i = 0; i < s.truth.size(); ++i)
            s.truth.gamma[i] = clip_rain(a * s.truth.gamma[i] + b * partner->truth.gamma[i]);
        break;
    }
    case AugmentOp::gaussian_noise: {
        if (params.noise_sigma == 0) break;
        std::normal_distribution<double> nd(0.0, params.noise_sigma);
        for (auto& x : s.forecast.values) x = static_cast<float>(x + nd(eng));
        break;
    }
    }
    return s;
}

} // namespace sslpdl
