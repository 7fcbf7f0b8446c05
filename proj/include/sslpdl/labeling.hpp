#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sslpdl/error.hpp"
#include "sslpdl/synth.hpp"

namespace sslpdl {

// Where the leftover mass of an interior bin goes in a density label.
enum class PdlComplement {
    adjacent,    // (1-alpha)(1-rho) moves to the next class up
    renormalize, // Algorithm entries as printed, rescaled to sum to one
};

enum class LabelKind {
    one_hot,
    density, // probabilistic density label
    smooth,  // classic uniform label smoothing, (1-alpha) y + alpha/N
};

inline LabelKind parse_label_kind(const std::string& s) {
    if (s == "onehot" || s == "one_hot") return LabelKind::one_hot;
    if (s == "pdl" || s == "density") return LabelKind::density;
    if (s == "smooth") return LabelKind::smooth;
    throw ConfigError("unknown label kind: " + s);
}

inline std::string to_string(LabelKind k) {
    switch (k) {
    case LabelKind::one_hot: return "onehot";
    case LabelKind::density: return "pdl";
    case LabelKind::smooth: return "smooth";
    }
    return "?";
}

struct LabelConfig {
    std::vector<double> thresholds{0.1, 10.0}; // mm, strictly ascending inside (0, 100)
    double alpha = 0.0;
    PdlComplement complement = PdlComplement::adjacent;

    std::size_t n_classes() const noexcept { return thresholds.size() + 1; }

    void validate() const {
        if (thresholds.empty()) throw ArgumentError("label: number of classes must be at least 2");
        for (std::size_t i = 0; i < thresholds.size(); ++i) {
            if (!(thresholds[i] > 0.0 && thresholds[i] < 100.0))
                throw ArgumentError("label: thresholds must lie in (0, 100)");
            if (i && !(thresholds[i] > thresholds[i - 1]))
                throw ArgumentError("label: thresholds must be strictly ascending");
        }
        if (!(alpha >= 0.0 && alpha < 1.0)) throw ArgumentError("label: alpha must lie in [0, 1)");
    }

    // Lower edge of class i's bin (0 for the first class).
    double lower_edge(std::size_t i) const { return i == 0 ? 0.0 : thresholds.at(i - 1); }
};

inline void to_json(nlohmann::json& j, const LabelConfig& c) {
    j = {{"thresholds", c.thresholds},
         {"alpha", c.alpha},
         {"pdl_complement", c.complement == PdlComplement::adjacent ? "adjacent" : "renormalize"}};
}

inline void from_json(const nlohmann::json& j, LabelConfig& c) {
    LabelConfig d;
    c.thresholds = j.value("thresholds", d.thresholds);
    c.alpha = j.value("alpha", d.alpha);
    const auto comp = j.value("pdl_complement", std::string("adjacent"));
    if (comp == "adjacent") c.complement = PdlComplement::adjacent;
    else if (comp == "renormalize") c.complement = PdlComplement::renormalize;
    else throw ConfigError("label: pdl_complement must be adjacent|renormalize");
}

// Bin index with half-open bins [tau_{i-1}, tau_i), lower edge inclusive.
inline std::size_t rain_class(double gamma, std::span<const double> thresholds) {
    return static_cast<std::size_t>(std::upper_bound(thresholds.begin(), thresholds.end(), gamma) -
                                    thresholds.begin());
}

namespace detail {
inline void check_gamma(double gamma) {
    if (!(gamma >= 0.0 && gamma < 100.0)) throw DomainError("label: rainfall outside [0, 100)");
}

inline void fill_one_hot(double gamma, const LabelConfig& cfg, std::span<double> y) {
    std::fill(y.begin(), y.end(), 0.0);
    y[rain_class(gamma, cfg.thresholds)] = 1.0;
}

inline void fill_pdl(double gamma, const LabelConfig& cfg, std::span<double> y) {
    const std::size_t n = cfg.n_classes();
    const double a = cfg.alpha;
    const double floor = a / static_cast<double>(n);
    std::fill(y.begin(), y.end(), floor);
    const std::size_t i = rain_class(gamma, cfg.thresholds);
    if (i == n - 1) {
        y[i] = (1.0 - a) + floor;
        return;
    }
    const double hi = cfg.thresholds[i];
    const double lo = cfg.lower_edge(i);
    const double rho = (hi - gamma) / (hi - lo);
    y[i] = (1.0 - a) * rho + floor;
    if (cfg.complement == PdlComplement::adjacent) {
        y[i + 1] = (1.0 - a) * (1.0 - rho) + floor;
    } else {
        double s = 0.0;
        for (double v : y) s += v;
        for (double& v : y) v /= s;
    }
}

inline void fill_smooth(double gamma, const LabelConfig& cfg, std::span<double> y) {
    fill_one_hot(gamma, cfg, y);
    const double floor = cfg.alpha / static_cast<double>(y.size());
    for (double& v : y) v = (1.0 - cfg.alpha) * v + floor;
}

} // namespace detail

inline std::vector<double> one_hot(double gamma, const LabelConfig& cfg) {
    cfg.validate();
    detail::check_gamma(gamma);
    std::vector<double> y(cfg.n_classes());
    detail::fill_one_hot(gamma, cfg, y);
    return y;
}

// Probabilistic density label. Inside bin i < N-1 the bin class receives
// (1-a) rho + a/N with rho = (tau_i - gamma) / (tau_i - tau_{i-1}), tau_{-1} = 0;
// the top bin receives (1-a) + a/N; every other class a/N.
inline std::vector<double> pdl(double gamma, const LabelConfig& cfg) {
    cfg.validate();
    detail::check_gamma(gamma);
    std::vector<double> y(cfg.n_classes());
    detail::fill_pdl(gamma, cfg, y);
    return y;
}

inline std::vector<double> smooth_label(double gamma, const LabelConfig& cfg) {
    cfg.validate();
    detail::check_gamma(gamma);
    std::vector<double> y(cfg.n_classes());
    detail::fill_smooth(gamma, cfg, y);
    return y;
}

// c x h x w per-pixel class distributions, (class, row, col) order.
struct LabelTensor {
    std::size_t n_classes = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    LabelKind kind = LabelKind::one_hot;
    std::vector<double> probs;

    std::size_t plane() const noexcept { return height * width; }
    double at(std::size_t c, std::size_t pix) const { return probs[c * plane() + pix]; }
};

inline LabelTensor label_field(const RainField& field, const LabelConfig& cfg, LabelKind kind) {
    cfg.validate();
    validate(field);
    LabelTensor t{cfg.n_classes(), field.height, field.width, kind, {}};
    t.probs.assign(t.n_classes * t.plane(), 0.0);
    std::vector<double> y(t.n_classes);
    for (std::size_t p = 0; p < field.size(); ++p) {
        const double g = field.gamma[p];
        switch (kind) {
        case LabelKind::one_hot: detail::fill_one_hot(g, cfg, y); break;
        case LabelKind::density: detail::fill_pdl(g, cfg, y); break;
        case LabelKind::smooth: detail::fill_smooth(g, cfg, y); break;
        }
        for (std::size_t c = 0; c < t.n_classes; ++c) t.probs[c * t.plane() + p] = y[c];
    }
    return t;
}

// Argmax class per pixel of the one-hot binning.
inline std::vector<int> class_field(const RainField& field, const LabelConfig& cfg) {
    std::vector<int> out(field.size());
    for (std::size_t p = 0; p < field.size(); ++p)
        out[p] = static_cast<int>(rain_class(field.gamma[p], cfg.thresholds));
    return out;
}

// Per-class expected mass fraction over all pixels of all tensors.
inline std::vector<double> proportions(std::span<const LabelTensor> labels) {
    if (labels.empty()) throw ArgumentError("proportions: empty label set");
    const std::size_t c = labels.front().n_classes;
    std::vector<long double> mass(c, 0.0L);
    long double pixels = 0;
    for (const auto& t : labels) {
        if (t.n_classes != c) throw ArgumentError("proportions: inconsistent class counts");
        for (std::size_t k = 0; k < c; ++k)
            for (std::size_t p = 0; p < t.plane(); ++p) mass[k] += t.probs[k * t.plane() + p];
        pixels += t.plane();
    }
    std::vector<double> out(c, 0.0);
    if (pixels > 0)
        for (std::size_t k = 0; k < c; ++k) out[k] = static_cast<double>(mass[k] / pixels);
    return out;
}

inline void write_proportions_csv(std::span<const double> one_hot_frac, std::span<const double> density_frac,
                                  const std::string& path) {
    if (one_hot_frac.size() != density_frac.size()) throw ArgumentError("proportions: column length mismatch");
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing", path);
    out << "class,one_hot_frac,density_frac\n";
    out.precision(10);
    for (std::size_t k = 0; k < one_hot_frac.size(); ++k)
        out << k << ',' << one_hot_frac[k] << ',' << density_frac[k] << '\n';
}

} // namespace sslpdl
