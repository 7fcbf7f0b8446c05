#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sslpdl/error.hpp"
#include "sslpdl/labeling.hpp"
#include "sslpdl/nn/tensor.hpp"
#include "sslpdl/patching.hpp"

namespace sslpdl {

struct LossConfig {
    double beta = 0.25;                // weight of the one-hot target in the mixture
    std::vector<double> class_weights; // empty -> all ones
    bool inverse_frequency = false;    // weights derived from training proportions

    void validate(std::size_t n_classes) const {
        if (!(beta >= 0.0 && beta <= 1.0)) throw ArgumentError("loss: beta must lie in [0, 1]");
        if (class_weights.empty()) return;
        if (class_weights.size() != n_classes) throw ArgumentError("loss: need one class weight per class");
        bool any = false;
        for (double w : class_weights) {
            if (!std::isfinite(w) || w < 0) throw ArgumentError("loss: class weights must be finite and >= 0");
            any = any || w > 0;
        }
        if (!any) throw ArgumentError("loss: class weights must not all be zero");
    }

    std::vector<double> weights(std::size_t n_classes) const {
        return class_weights.empty() ? std::vector<double>(n_classes, 1.0) : class_weights;
    }
};

inline void to_json(nlohmann::json& j, const LossConfig& c) {
    j = {{"beta", c.beta}};
    if (c.inverse_frequency)
        j["class_weights"] = "inverse_frequency";
    else if (!c.class_weights.empty())
        j["class_weights"] = c.class_weights;
}

inline void from_json(const nlohmann::json& j, LossConfig& c) {
    c = LossConfig{};
    c.beta = j.value("beta", c.beta);
    if (j.contains("class_weights")) {
        const auto& w = j.at("class_weights");
        if (w.is_string()) {
            if (w.get<std::string>() != "inverse_frequency")
                throw ConfigError("loss: class_weights must be a list or \"inverse_frequency\"");
            c.inverse_frequency = true;
        } else {
            c.class_weights = w.get<std::vector<double>>();
        }
    }
}

// w_i proportional to 1 / frequency, rescaled to mean 1. Unseen classes get
// the weight of a class at frequency `floor`.
inline std::vector<double> inverse_frequency_weights(std::span<const double> freq, double floor = 1e-4) {
    if (freq.empty()) throw ArgumentError("inverse_frequency_weights: no classes");
    std::vector<double> w(freq.size());
    double sum = 0;
    for (std::size_t i = 0; i < freq.size(); ++i) {
        w[i] = 1.0 / std::max(freq[i], floor);
        sum += w[i];
    }
    for (auto& x : w) x *= static_cast<double>(freq.size()) / sum;
    return w;
}

// ---------------------------------------------------------------------------
// masked reconstruction loss: (1/|M|) sum over masked patches of the squared L2 error

template <class T>
inline T rec_loss_values(std::span<const T> pred, std::span<const T> target, std::size_t n, std::size_t h,
                         std::size_t w, const MaskSet& mask, const PatchConfig& cfg, T* grad = nullptr) {
    if (pred.size() != target.size() || pred.size() != n * h * w) throw ArgumentError("rec_loss: shape mismatch");
    if (mask.total != cfg.n_tokens(n, h, w)) throw ArgumentError("rec_loss: mask built for a different token count");
    if (grad) std::fill(grad, grad + pred.size(), T(0));
    if (mask.indices.empty()) return T(0);
    const auto flags = mask.as_flags();
    const T inv = T(1) / static_cast<T>(mask.indices.size());
    T sum = 0;
    detail::for_each_patch_element(cfg, n, h, w, [&](std::size_t t, std::size_t, std::size_t idx) {
        if (!flags[t]) return;
        const T d = pred[idx] - target[idx];
        sum += d * d;
        if (grad) grad[idx] = T(2) * d * inv;
    });
    return sum * inv;
}

inline double rec_loss(const GridField& pred, const GridField& target, const MaskSet& mask, const PatchConfig& cfg) {
    if (pred.n_vars != target.n_vars || pred.height != target.height || pred.width != target.width)
        throw ArgumentError("rec_loss: shape mismatch");
    std::vector<double> a(pred.values.begin(), pred.values.end()), b(target.values.begin(), target.values.end());
    return rec_loss_values<double>(a, b, pred.n_vars, pred.height, pred.width, mask, cfg);
}

template <class T>
inline T rec_loss(const nn::Tensor<T>& pred, const nn::Tensor<T>& target, const MaskSet& mask, const PatchConfig& cfg,
                  nn::Tensor<T>* grad = nullptr) {
    if (!pred.same_shape(target)) throw ArgumentError("rec_loss: shape mismatch");
    if (grad) *grad = nn::Tensor<T>(pred.c, pred.h, pred.w);
    return rec_loss_values<T>(pred.data, target.data, pred.c, pred.h, pred.w, mask, cfg,
                              grad ? grad->data.data() : nullptr);
}

// ---------------------------------------------------------------------------
// mixed weighted cross-entropy, pixel mean:
//   -(1/P) sum_p sum_i w_i (beta y_i + (1 - beta) y*_i) log softmax(z)_i

// Logits and targets are (class, pixel) planar arrays of c * P values.
template <class T>
inline T seg_loss_values(std::span<const T> logits, std::span<const double> onehot, std::span<const double> density,
                         std::size_t c, double beta, std::span<const double> weights, T* grad = nullptr) {
    if (c == 0 || logits.size() % c != 0) throw ArgumentError("seg_loss: logits size not a multiple of classes");
    const std::size_t P = logits.size() / c;
    if (onehot.size() != logits.size() || density.size() != logits.size() || weights.size() != c)
        throw ArgumentError("seg_loss: shape mismatch between logits, labels and weights");
    const T b = static_cast<T>(beta), nb = static_cast<T>(1.0 - beta), invP = T(1) / static_cast<T>(P);
    std::vector<T> lsm(c), tgt(c);
    T total = 0;
    for (std::size_t p = 0; p < P; ++p) {
        T mx = logits[p];
        for (std::size_t i = 0; i < c; ++i) {
            const T z = logits[i * P + p];
            if (!std::isfinite(z)) throw NumericError("seg_loss: non-finite logit");
            mx = std::max(mx, z);
        }
        T se = 0;
        for (std::size_t i = 0; i < c; ++i) se += std::exp(logits[i * P + p] - mx);
        const T lse = mx + std::log(se);
        T wt = 0, px = 0;
        for (std::size_t i = 0; i < c; ++i) {
            lsm[i] = logits[i * P + p] - lse;
            tgt[i] = static_cast<T>(weights[i]) *
                     (b * static_cast<T>(onehot[i * P + p]) + nb * static_cast<T>(density[i * P + p]));
            wt += tgt[i];
            px -= tgt[i] * lsm[i];
        }
        total += px;
        if (grad)
            for (std::size_t i = 0; i < c; ++i) grad[i * P + p] = (std::exp(lsm[i]) * wt - tgt[i]) * invP;
    }
    return total * invP;
}

template <class T>
inline T seg_loss(const nn::Tensor<T>& logits, const LabelTensor& y, const LabelTensor& ystar, const LossConfig& cfg,
                  nn::Tensor<T>* grad = nullptr) {
    if (y.n_classes != logits.c || ystar.n_classes != logits.c || y.height != logits.h || y.width != logits.w ||
        ystar.height != logits.h || ystar.width != logits.w)
        throw ArgumentError("seg_loss: labels do not match the logits shape");
    cfg.validate(logits.c);
    const auto w = cfg.weights(logits.c);
    if (grad) *grad = nn::Tensor<T>(logits.c, logits.h, logits.w);
    return seg_loss_values<T>(logits.data, y.probs, ystar.probs, logits.c, cfg.beta, w,
                              grad ? grad->data.data() : nullptr);
}

} // namespace sslpdl
