#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "sslpdl/augment.hpp"
#include "sslpdl/error.hpp"
#include "sslpdl/manifest.hpp"
#include "sslpdl/random.hpp"

namespace sslpdl {

struct PixelCounts {
    std::size_t total = 0;
    std::size_t rain = 0; // pixels >= tau_0
    std::size_t no_rain() const noexcept { return total - rain; }
    double rain_fraction() const noexcept { return total ? static_cast<double>(rain) / total : 0.0; }
};

inline PixelCounts count_pixels(const RainField& f, double tau0) {
    PixelCounts pc{f.size(), 0};
    for (float g : f.gamma)
        if (g >= tau0) ++pc.rain;
    return pc;
}

// Materializes an entry, applying its augmentation tag (mixup partners resolve in `m`).
inline Sample load_sample(const ManifestEntry& e, const DatasetManifest& m, const AugmentParams& params = {}) {
    Sample s{read_grid(e.forecast_path), to_rain(read_grid(e.truth_path))};
    if (s.forecast.height != s.truth.height || s.forecast.width != s.truth.width)
        throw ValidationError("sample " + e.sample_id + ": forecast and truth grids differ");
    if (!e.augment) return s;
    if (e.augment->op == AugmentOp::mixup) {
        const auto& pe = m.find(e.augment->partner_id);
        Sample partner{read_grid(pe.forecast_path), to_rain(read_grid(pe.truth_path))};
        return augment(s, e.augment->op, e.augment->seed, &partner, params);
    }
    return augment(s, e.augment->op, e.augment->seed, nullptr, params);
}

using CountFn = std::function<PixelCounts(const ManifestEntry&)>;

// Counts from files on disk, after augmentation.
inline CountFn file_counter(const DatasetManifest& m, double tau0) {
    return [m, tau0](const ManifestEntry& e) { return count_pixels(load_sample(e, m).truth, tau0); };
}

struct RainyRule {
    double tau0 = 0.1;
    double min_frac = 0.01; // rainy iff at least this fraction of pixels >= tau0
};

inline double no_rain_fraction(const DatasetManifest& m, const CountFn& counts) {
    std::size_t nr = 0, tot = 0;
    for (const auto& e : m.entries) {
        const auto pc = counts(e);
        nr += pc.no_rain();
        tot += pc.total;
    }
    return tot ? static_cast<double>(nr) / tot : 0.0;
}

// Redraws the manifest so a `rainy_fraction` share of its entries are rainy.
// Output size equals the input size unless `total` is given. A stratum that
// runs out is topped up by drawing with replacement; repeats get "~r<k>" ids.
inline DatasetManifest sample_rainy_days(const DatasetManifest& m, const CountFn& counts, double rainy_fraction,
                                         const RainyRule& rule, std::uint64_t seed, std::size_t total = 0) {
    if (!(rainy_fraction >= 0 && rainy_fraction <= 1)) throw ArgumentError("sampling: rainy_fraction outside [0,1]");
    if (total == 0) total = m.size();
    std::vector<std::size_t> rainy, dry;
    for (std::size_t i = 0; i < m.size(); ++i) {
        const auto pc = counts(m.entries[i]);
        (pc.rain_fraction() >= rule.min_frac ? rainy : dry).push_back(i);
    }
    const auto want_rainy = static_cast<std::size_t>(std::llround(rainy_fraction * static_cast<double>(total)));
    const std::size_t want_dry = total - want_rainy;
    if ((want_rainy > 0 && rainy.empty()) || (want_dry > 0 && dry.empty()))
        throw SamplingError("sampling: a requested stratum is empty");

    auto eng = keyed_engine(seed, 0, Stream::sampling);
    std::vector<std::pair<std::size_t, std::size_t>> picks; // (entry index, repeat number)
    auto draw = [&](std::vector<std::size_t> pool, std::size_t want) {
        std::shuffle(pool.begin(), pool.end(), eng);
        std::vector<std::size_t> times(m.size(), 0);
        for (std::size_t k = 0; k < want; ++k) {
            const std::size_t idx = k < pool.size()
                                        ? pool[k]
                                        : pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(eng)];
            picks.emplace_back(idx, times[idx]++);
        }
    };
    draw(rainy, want_rainy);
    draw(dry, want_dry);
    std::sort(picks.begin(), picks.end());
    DatasetManifest out;
    for (auto [idx, rep] : picks) {
        auto e = m.entries[idx];
        if (rep > 0) e.sample_id += "~r" + std::to_string(rep);
        out.entries.push_back(std::move(e));
    }
    return out;
}

enum class ResampleMode { under, over };

inline ResampleMode parse_resample_mode(const std::string& s) {
    if (s == "under") return ResampleMode::under;
    if (s == "over") return ResampleMode::over;
    throw ConfigError("unknown resample mode: " + s);
}

inline constexpr double kResampleTolerance = 0.02;

// Moves the pixel-level no-rain fraction towards `target`. Under-sampling
// drops whole samples; over-sampling appends augmented copies (flip, resize,
// mixup, noise in rotation) of the samples pulling in the right direction.
// Stops once no further step brings the fraction closer to the target.
inline DatasetManifest resample_pixel_ratio(const DatasetManifest& m, const CountFn& counts, double target,
                                            ResampleMode mode, std::uint64_t seed) {
    if (!(target >= 0 && target <= 1)) throw ArgumentError("resample: target outside [0,1]");
    if (m.empty()) throw SamplingError("resample: empty manifest");
    std::vector<PixelCounts> pcs;
    std::size_t nr = 0, tot = 0;
    for (const auto& e : m.entries) {
        pcs.push_back(counts(e));
        nr += pcs.back().no_rain();
        tot += pcs.back().total;
    }
    auto frac = [](std::size_t a, std::size_t b) { return b ? static_cast<double>(a) / b : 0.0; };
    double f = frac(nr, tot);
    const bool reduce = f > target; // need fewer no-rain pixels
    auto sample_frac = [&](std::size_t i) { return frac(pcs[i].no_rain(), pcs[i].total); };

    // Candidates ordered by how hard they pull the fraction in the needed direction.
    std::vector<std::size_t> order(m.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return reduce ? sample_frac(a) < sample_frac(b) : sample_frac(a) > sample_frac(b);
    });

    DatasetManifest out;
    if (mode == ResampleMode::under) {
        // Drop from the far end of the order: samples that push away from the target.
        std::vector<bool> keep(m.size(), true);
        std::size_t kept = m.size();
        for (auto it = order.rbegin(); it != order.rend() && kept > 1; ++it) {
            const std::size_t i = *it;
            const double nf = frac(nr - pcs[i].no_rain(), tot - pcs[i].total);
            if (std::abs(nf - target) >= std::abs(f - target)) break;
            keep[i] = false;
            --kept;
            nr -= pcs[i].no_rain();
            tot -= pcs[i].total;
            f = nf;
        }
        for (std::size_t i = 0; i < m.size(); ++i)
            if (keep[i]) out.entries.push_back(m.entries[i]);
    } else {
        out = m;
        static constexpr AugmentOp ops[] = {AugmentOp::flip_h, AugmentOp::flip_v, AugmentOp::resize, AugmentOp::mixup,
                                            AugmentOp::gaussian_noise};
        const std::size_t cap = 20 * m.size();
        // Pull only with samples strictly on the target's far side.
        std::vector<std::size_t> pullers;
        for (auto i : order)
            if (reduce ? sample_frac(i) < target : sample_frac(i) > target) pullers.push_back(i);
        for (std::size_t k = 0; k < cap && !pullers.empty(); ++k) {
            const std::size_t i = pullers[k % pullers.size()];
            const AugmentOp op = ops[k % 5];
            ManifestEntry e = m.entries[i];
            e.augment = AugmentTag{op, hash_key({seed, k, i}), ""};
            if (op == AugmentOp::mixup) e.augment->partner_id = m.entries[pullers[(k + 1) % pullers.size()]].sample_id;
            e.sample_id = m.entries[i].sample_id + "~" + to_string(op) + std::to_string(k);
            const auto pc = counts(e);
            const double nf = frac(nr + pc.no_rain(), tot + pc.total);
            if (std::abs(nf - target) >= std::abs(f - target)) break;
            nr += pc.no_rain();
            tot += pc.total;
            f = nf;
            out.entries.push_back(std::move(e));
        }
    }
    if (std::abs(f - target) > kResampleTolerance)
        throw SamplingError("resample: target no-rain fraction unreachable, achieved " + std::to_string(f), f);
    return out;
}

} // namespace sslpdl
