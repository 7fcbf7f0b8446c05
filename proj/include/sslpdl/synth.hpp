#pragma once

// Synthetic stand-in for NWP forecasts + QPE truth. Truth rainfall is a sum of
// anisotropic Gaussian cells with Pareto-distributed peaks. The forecast carries
// three learnable defects: spatial displacement, damped extremes and additive
// smooth noise. Covariate channels track the undisplaced truth.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "sslpdl/error.hpp"
#include "sslpdl/grid.hpp"
#include "sslpdl/manifest.hpp"
#include "sslpdl/random.hpp"

namespace sslpdl {

inline constexpr float kRainCeiling = 100.0f;
inline constexpr float kHeavyRain = 10.0f;

struct RainField {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> gamma; // mm/h, each in [0, 100)

    RainField() = default;
    RainField(std::size_t h, std::size_t w) : height(h), width(w), gamma(h * w, 0.0f) {}

    std::size_t size() const noexcept { return gamma.size(); }
    float& at(std::size_t r, std::size_t c) { return gamma[r * width + c]; }
    float at(std::size_t r, std::size_t c) const { return gamma[r * width + c]; }
    bool operator==(const RainField&) const = default;
};

inline void validate(const RainField& f) {
    if (f.gamma.size() != f.height * f.width) throw ValidationError("rain: value count does not match h*w");
    for (float g : f.gamma)
        if (!std::isfinite(g) || g < 0.0f || g >= kRainCeiling)
            throw ValidationError("rain: value outside [0, 100)");
}

inline GridField to_grid(const RainField& r) {
    GridField g(1, r.height, r.width, {"rain"});
    g.values = r.gamma;
    return g;
}

inline RainField to_rain(const GridField& g) {
    if (g.n_vars != 1) throw FormatError("rain: truth file must hold exactly one variable");
    RainField r(g.height, g.width);
    r.gamma = g.values;
    validate(r);
    return r;
}

// Largest float below 100, the top of the admissible rain domain.
inline float clip_rain(float x) {
    static const float top = std::nextafter(kRainCeiling, 0.0f);
    return std::clamp(x, 0.0f, top);
}

struct ForecastBias {
    double shift_rows = 4.0;
    double shift_cols = 3.0;
    double extreme_damping = 0.5; // excess above 10 mm is multiplied by (1 - damping)
    double noise_std = 0.15;      // mm/h, smooth additive noise on the rain channel
};

struct SynthConfig {
    std::size_t height = 96;
    std::size_t width = 64;
    std::size_t n_vars = 8;
    std::uint64_t seed = 2024;
    double rain_blob_rate = 1.1;  // expected rain cells per field
    double intensity_tail = 1.0;  // Pareto shape of cell peak intensity
    double peak_min = 1.5;        // Pareto scale (mm/h)
    double cell_sigma_min = 4.0;  // px
    double cell_sigma_max = 9.0;  // px
    double covariate_correlation = 0.6;
    ForecastBias bias;

    void validate() const {
        if (height == 0 || width == 0) throw ConfigError("synth: grid must be non-empty");
        if (n_vars == 0) throw ConfigError("synth: need at least the rain channel");
        if (rain_blob_rate < 0) throw ConfigError("synth: rain_blob_rate must be >= 0");
        if (intensity_tail <= 0 || peak_min <= 0) throw ConfigError("synth: intensity parameters must be > 0");
        if (cell_sigma_min <= 0 || cell_sigma_max < cell_sigma_min) throw ConfigError("synth: bad cell sigma range");
        if (!(bias.extreme_damping >= 0 && bias.extreme_damping <= 1))
            throw ConfigError("synth: extreme_damping must lie in [0,1]");
        if (!(bias.noise_std >= 0)) throw ConfigError("synth: noise_std must be >= 0");
        if (!(covariate_correlation >= -1 && covariate_correlation <= 1))
            throw ConfigError("synth: covariate_correlation must lie in [-1,1]");
    }
};

inline void to_json(nlohmann::json& j, const SynthConfig& c) {
    j = {{"height", c.height},
         {"width", c.width},
         {"n_vars", c.n_vars},
         {"seed", c.seed},
         {"rain_blob_rate", c.rain_blob_rate},
         {"intensity_tail", c.intensity_tail},
         {"peak_min", c.peak_min},
         {"cell_sigma_min", c.cell_sigma_min},
         {"cell_sigma_max", c.cell_sigma_max},
         {"covariate_correlation", c.covariate_correlation},
         {"bias",
          {{"shift_rows", c.bias.shift_rows},
           {"shift_cols", c.bias.shift_cols},
           {"extreme_damping", c.bias.extreme_damping},
           {"noise_std", c.bias.noise_std}}}};
}

inline void from_json(const nlohmann::json& j, SynthConfig& c) {
    SynthConfig d;
    c.height = j.value("height", d.height);
    c.width = j.value("width", d.width);
    c.n_vars = j.value("n_vars", d.n_vars);
    c.seed = j.value("seed", d.seed);
    c.rain_blob_rate = j.value("rain_blob_rate", d.rain_blob_rate);
    c.intensity_tail = j.value("intensity_tail", d.intensity_tail);
    c.peak_min = j.value("peak_min", d.peak_min);
    c.cell_sigma_min = j.value("cell_sigma_min", d.cell_sigma_min);
    c.cell_sigma_max = j.value("cell_sigma_max", d.cell_sigma_max);
    c.covariate_correlation = j.value("covariate_correlation", d.covariate_correlation);
    if (j.contains("bias")) {
        const auto& b = j["bias"];
        c.bias.shift_rows = b.value("shift_rows", d.bias.shift_rows);
        c.bias.shift_cols = b.value("shift_cols", d.bias.shift_cols);
        c.bias.extreme_damping = b.value("extreme_damping", d.bias.extreme_damping);
        c.bias.noise_std = b.value("noise_std", d.bias.noise_std);
    }
}

// Variable names; the first n entries of the surface + 850/500/100 hPa list.
inline std::vector<std::string> synth_var_names(std::size_t n) {
    static const std::vector<std::string> base = {"rain", "RH850", "T2",   "SLP",  "RH500", "U850",
                                                  "V850", "T850",  "Z500", "U10",  "V10",   "Z850",
                                                  "U500", "V500",  "T500", "Z100"};
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(i < base.size() ? base[i] : "cov" + std::to_string(i));
    return out;
}

namespace detail {

// Unit-variance lattice noise bilinearly interpolated onto the grid.
inline std::vector<float> smooth_noise(std::mt19937_64& eng, std::size_t h, std::size_t w, double cell = 8.0) {
    const std::size_t lh = static_cast<std::size_t>(std::ceil(h / cell)) + 2;
    const std::size_t lw = static_cast<std::size_t>(std::ceil(w / cell)) + 2;
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> lattice(lh * lw);
    for (auto& x : lattice) x = nd(eng);
    std::vector<float> out(h * w);
    for (std::size_t r = 0; r < h; ++r) {
        const double y = r / cell;
        const auto y0 = static_cast<std::size_t>(y);
        const double fy = y - y0;
        for (std::size_t c = 0; c < w; ++c) {
            const double x = c / cell;
            const auto x0 = static_cast<std::size_t>(x);
            const double fx = x - x0;
            const double v = (1 - fy) * ((1 - fx) * lattice[y0 * lw + x0] + fx * lattice[y0 * lw + x0 + 1]) +
                             fy * ((1 - fx) * lattice[(y0 + 1) * lw + x0] + fx * lattice[(y0 + 1) * lw + x0 + 1]);
            out[r * w + c] = static_cast<float>(v);
        }
    }
    return out;
}

inline std::vector<float> box_blur(const std::vector<float>& in, std::size_t h, std::size_t w, int radius) {
    std::vector<float> tmp(in.size()), out(in.size());
    const int H = static_cast<int>(h), W = static_cast<int>(w);
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            double s = 0;
            int n = 0;
            for (int k = std::max(0, c - radius); k <= std::min(W - 1, c + radius); ++k, ++n) s += in[r * W + k];
            tmp[r * W + c] = static_cast<float>(s / n);
        }
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            double s = 0;
            int n = 0;
            for (int k = std::max(0, r - radius); k <= std::min(H - 1, r + radius); ++k, ++n) s += tmp[k * W + c];
            out[r * W + c] = static_cast<float>(s / n);
        }
    return out;
}

// Nearest-integer displacement with zero fill from outside the domain.
inline std::vector<float> shift_field(const std::vector<float>& in, std::size_t h, std::size_t w, double dr,
                                      double dc) {
    const long sr = std::lround(dr), sc = std::lround(dc);
    std::vector<float> out(in.size(), 0.0f);
    for (long r = 0; r < static_cast<long>(h); ++r) {
        const long src_r = r - sr;
        if (src_r < 0 || src_r >= static_cast<long>(h)) continue;
        for (long c = 0; c < static_cast<long>(w); ++c) {
            const long src_c = c - sc;
            if (src_c < 0 || src_c >= static_cast<long>(w)) continue;
            out[r * w + c] = in[src_r * w + src_c];
        }
    }
    return out;
}

struct CovariateSpec {
    double offset;
    double scale;
    double sign; // direction of the correlation with rain
    double weight;
};

inline CovariateSpec covariate_spec(const std::string& name) {
    if (name.rfind("RH", 0) == 0) return {70.0, 15.0, +1.0, 1.0};
    if (name == "T2") return {295.0, 3.0, -1.0, 0.7};
    if (name.rfind("T", 0) == 0) return {280.0, 3.0, -1.0, 0.5};
    if (name == "SLP") return {1005.0, 4.0, -1.0, 0.8};
    if (name.rfind("Z", 0) == 0) return {5600.0, 40.0, -1.0, 0.4};
    if (name.rfind("U", 0) == 0 || name.rfind("V", 0) == 0) return {2.0, 5.0, +1.0, 0.5};
    return {0.0, 1.0, +1.0, 0.5};
}

} // namespace detail

inline RainField gen_truth(const SynthConfig& cfg, std::uint64_t sample_index) {
    cfg.validate();
    RainField out(cfg.height, cfg.width);
    if (cfg.rain_blob_rate == 0) return out;
    auto eng = keyed_engine(cfg.seed, sample_index, Stream::truth);
    std::poisson_distribution<int> n_cells(cfg.rain_blob_rate);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double H = static_cast<double>(cfg.height), W = static_cast<double>(cfg.width);
    const int k = n_cells(eng);
    std::vector<double> acc(out.size(), 0.0);
    for (int i = 0; i < k; ++i) {
        const double r0 = -8.0 + u01(eng) * (H + 16.0);
        const double c0 = -8.0 + u01(eng) * (W + 16.0);
        const double sr = cfg.cell_sigma_min + u01(eng) * (cfg.cell_sigma_max - cfg.cell_sigma_min);
        const double sc = cfg.cell_sigma_min + u01(eng) * (cfg.cell_sigma_max - cfg.cell_sigma_min);
        const double u = std::max(u01(eng), 1e-12);
        const double peak = cfg.peak_min * std::pow(u, -1.0 / cfg.intensity_tail);
        for (std::size_t r = 0; r < cfg.height; ++r) {
            const double dy = (r - r0) / sr;
            for (std::size_t c = 0; c < cfg.width; ++c) {
                const double dx = (c - c0) / sc;
                acc[r * cfg.width + c] += peak * std::exp(-0.5 * (dy * dy + dx * dx));
            }
        }
    }
    for (std::size_t i = 0; i < acc.size(); ++i) out.gamma[i] = clip_rain(static_cast<float>(acc[i]));
    return out;
}

inline GridField gen_forecast(const RainField& truth, const SynthConfig& cfg, std::uint64_t sample_index) {
    cfg.validate();
    validate(truth);
    const std::size_t h = truth.height, w = truth.width;
    GridField out(cfg.n_vars, h, w, synth_var_names(cfg.n_vars));

    // Rain channel: displaced truth + smooth noise. Only pixels that are heavy in
    // the displaced truth may stay heavy, and their excess over 10 mm is damped.
    const auto shifted = detail::shift_field(truth.gamma, h, w, cfg.bias.shift_rows, cfg.bias.shift_cols);
    auto eng = keyed_engine(cfg.seed, sample_index, Stream::forecast_noise);
    std::vector<float> noise(h * w, 0.0f);
    if (cfg.bias.noise_std > 0) noise = detail::smooth_noise(eng, h, w);
    static const float below_heavy = std::nextafter(kHeavyRain, 0.0f);
    auto rain = out.channel(0);
    for (std::size_t i = 0; i < h * w; ++i) {
        float v = shifted[i] + static_cast<float>(cfg.bias.noise_std) * noise[i];
        if (shifted[i] >= kHeavyRain) {
            if (v >= kHeavyRain && cfg.bias.extreme_damping > 0)
                v = kHeavyRain + (v - kHeavyRain) * static_cast<float>(1.0 - cfg.bias.extreme_damping);
        } else {
            v = std::min(v, below_heavy);
        }
        rain[i] = clip_rain(v);
    }

    // Covariates follow the undisplaced truth through a smoothed log-rain signal.
    if (cfg.n_vars > 1) {
        std::vector<float> logr(h * w);
        for (std::size_t i = 0; i < h * w; ++i) logr[i] = std::log1p(truth.gamma[i]);
        const auto signal = detail::box_blur(logr, h, w, 2);
        auto ceng = keyed_engine(cfg.seed, sample_index, Stream::covariates);
        for (std::size_t v = 1; v < cfg.n_vars; ++v) {
            const auto spec = detail::covariate_spec(out.var_names[v]);
            const double a = std::clamp(cfg.covariate_correlation * spec.weight, -1.0, 1.0);
            const double b = std::sqrt(1.0 - a * a);
            const auto nz = detail::smooth_noise(ceng, h, w, 12.0);
            auto ch = out.channel(v);
            for (std::size_t i = 0; i < h * w; ++i)
                ch[i] = static_cast<float>(spec.offset +
                                           spec.scale * (spec.sign * a * 2.0 * signal[i] + b * nz[i]));
        }
    }
    return out;
}

struct SplitCounts {
    std::size_t train = 0;
    std::size_t val = 0;
    std::size_t test = 0;
    std::size_t total() const noexcept { return train + val + test; }
};

inline std::string sample_id(std::uint64_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%06llu", static_cast<unsigned long long>(index));
    return buf;
}

// Synthetic valid times walk day by day through June-September, one season per year.
inline std::string synth_timestamp(std::uint64_t index) {
    using namespace std::chrono;
    constexpr unsigned season_days = 122;
    const int year = 2020 + static_cast<int>(index / season_days);
    const sys_days day = sys_days(std::chrono::year(year) / June / 1) + days(index % season_days);
    const year_month_day ymd(day);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02u:00", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<unsigned>((index * 7) % 24));
    return buf;
}

// Writes <id>_fcst.sslg / <id>_truth.sslg pairs plus manifest.json under out_dir.
// Sample indices: train first, then val, then test.
inline DatasetManifest gen_dataset(const SynthConfig& cfg, const SplitCounts& counts, const std::string& out_dir) {
    cfg.validate();
    if (counts.total() == 0) throw ConfigError("gen_dataset: counts must be > 0");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory", out_dir);
    DatasetManifest m;
    std::uint64_t index = 0;
    auto emit = [&](std::size_t n, const char* split) {
        for (std::size_t i = 0; i < n; ++i, ++index) {
            const auto id = sample_id(index);
            const auto truth = gen_truth(cfg, index);
            const auto fc = gen_forecast(truth, cfg, index);
            const auto fpath = (std::filesystem::path(out_dir) / (id + "_fcst.sslg")).string();
            const auto tpath = (std::filesystem::path(out_dir) / (id + "_truth.sslg")).string();
            write_grid(fc, fpath);
            write_grid(to_grid(truth), tpath);
            m.entries.push_back({id, fpath, tpath, synth_timestamp(index), split, std::nullopt});
        }
    };
    emit(counts.train, "train");
    emit(counts.val, "val");
    emit(counts.test, "test");
    // The on-disk manifest keeps paths relative so the directory can move.
    DatasetManifest rel = m;
    for (auto& e : rel.entries) {
        e.forecast_path = std::filesystem::path(e.forecast_path).filename().string();
        e.truth_path = std::filesystem::path(e.truth_path).filename().string();
    }
    write_manifest(rel, (std::filesystem::path(out_dir) / "manifest.json").string());
    return m;
}

} // namespace sslpdl
