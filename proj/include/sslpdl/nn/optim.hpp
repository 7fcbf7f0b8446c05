#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "sslpdl/error.hpp"
#include "sslpdl/nn/tensor.hpp"

namespace sslpdl::nn {

enum class OptimKind { adam, sgd };

struct OptimConfig {
    OptimKind kind = OptimKind::adam;
    double lr = 2e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double momentum = 0.0; // sgd only

    void validate() const {
        if (!(lr >= 0 && std::isfinite(lr))) throw ArgumentError("optim: lr must be finite and >= 0");
        if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ArgumentError("optim: betas must lie in [0,1)");
        if (!(eps > 0)) throw ArgumentError("optim: eps must be positive");
        if (!(momentum >= 0 && momentum < 1)) throw ArgumentError("optim: momentum must lie in [0,1)");
    }
};

inline void to_json(nlohmann::json& j, const OptimConfig& c) {
    j = {{"kind", c.kind == OptimKind::adam ? "adam" : "sgd"},
         {"lr", c.lr},
         {"beta1", c.beta1},
         {"beta2", c.beta2},
         {"eps", c.eps},
         {"momentum", c.momentum}};
}

inline void from_json(const nlohmann::json& j, OptimConfig& c) {
    OptimConfig d;
    const auto kind = j.value("kind", std::string("adam"));
    if (kind == "adam") c.kind = OptimKind::adam;
    else if (kind == "sgd") c.kind = OptimKind::sgd;
    else throw ConfigError("optim: kind must be adam|sgd");
    c.lr = j.value("lr", d.lr);
    c.beta1 = j.value("beta1", d.beta1);
    c.beta2 = j.value("beta2", d.beta2);
    c.eps = j.value("eps", d.eps);
    c.momentum = j.value("momentum", d.momentum);
}

template <class T>
struct TrainState {
    ParamStore<T> params;
    std::vector<std::vector<T>> m; // first moments (sgd: velocity)
    std::vector<std::vector<T>> v; // second moments
    std::uint64_t step = 0;
    std::uint64_t epoch = 0;
    std::uint64_t seed = 0;

    TrainState() = default;
    TrainState(ParamStore<T> p, std::uint64_t seed_) : params(std::move(p)), seed(seed_) { reset_moments(); }

    void reset_moments() {
        m.clear();
        v.clear();
        for (const auto& x : params.values) {
            m.emplace_back(x.size(), T(0));
            v.emplace_back(x.size(), T(0));
        }
    }
};

// One optimizer update from accumulated gradients; frozen parameters stay put.
template <class T>
inline void apply_update(TrainState<T>& st, const Grads<T>& g, const OptimConfig& cfg) {
    ++st.step;
    const T lr = static_cast<T>(cfg.lr);
    if (cfg.kind == OptimKind::sgd) {
        const T mu = static_cast<T>(cfg.momentum);
        for (std::size_t i = 0; i < st.params.size(); ++i) {
            if (!st.params.trainable[i]) continue;
            auto& p = st.params.values[i];
            auto& vel = st.m[i];
            const auto& gi = g.values[i];
            for (std::size_t k = 0; k < p.size(); ++k) {
                vel[k] = mu * vel[k] + gi[k];
                p[k] -= lr * vel[k];
            }
        }
        return;
    }
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2), eps = static_cast<T>(cfg.eps);
    const T c1 = T(1) - static_cast<T>(std::pow(cfg.beta1, static_cast<double>(st.step)));
    const T c2 = T(1) - static_cast<T>(std::pow(cfg.beta2, static_cast<double>(st.step)));
    for (std::size_t i = 0; i < st.params.size(); ++i) {
        if (!st.params.trainable[i]) continue;
        auto& p = st.params.values[i];
        auto& m = st.m[i];
        auto& v = st.v[i];
        const auto& gi = g.values[i];
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = b1 * m[k] + (T(1) - b1) * gi[k];
            v[k] = b2 * v[k] + (T(1) - b2) * gi[k] * gi[k];
            p[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
        }
    }
}

// loss_fn(params, grads) fills grads (pre-zeroed) and returns the batch loss.
template <class T, class LossFn>
inline T train_step(TrainState<T>& st, LossFn&& loss_fn, const OptimConfig& cfg) {
    Grads<T> g(st.params);
    const T loss = loss_fn(static_cast<const ParamStore<T>&>(st.params), g);
    if (!std::isfinite(static_cast<double>(loss)))
        throw NumericError("training: non-finite loss", static_cast<long long>(st.step));
    for (const auto& gv : g.values)
        for (T x : gv)
            if (!std::isfinite(static_cast<double>(x)))
                throw NumericError("training: non-finite gradient", static_cast<long long>(st.step));
    apply_update(st, g, cfg);
    return loss;
}

} // namespace sslpdl::nn
