#pragma once

// Pre-training, fine-tuning and evaluation loops over an in-memory dataset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sslpdl/augment.hpp"
#include "sslpdl/error.hpp"
#include "sslpdl/grid.hpp"
#include "sslpdl/labeling.hpp"
#include "sslpdl/manifest.hpp"
#include "sslpdl/nn/checkpoint.hpp"
#include "sslpdl/nn/model.hpp"
#include "sslpdl/nn/optim.hpp"
#include "sslpdl/objectives.hpp"
#include "sslpdl/patching.hpp"
#include "sslpdl/pipeline/config.hpp"
#include "sslpdl/sampling.hpp"
#include "sslpdl/verify.hpp"

namespace sslpdl {

// ---------------------------------------------------------------------------
// data

template <class T>
struct Dataset {
    std::vector<std::string> ids;
    std::vector<nn::Tensor<T>> x; // z-scored forecast fields
    std::vector<RainField> truth;
    std::vector<LabelTensor> onehot;
    std::vector<LabelTensor> target; // y* of the configured kind

    std::size_t size() const noexcept { return x.size(); }
};

inline nlohmann::json norm_to_json(const std::vector<NormStats>& s) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& n : s) a.push_back({{"group", n.group_key}, {"mean", n.mean}, {"std", n.std}});
    return a;
}

inline std::vector<NormStats> norm_from_json(const nlohmann::json& a) {
    std::vector<NormStats> out;
    for (const auto& n : a) out.push_back({n.at("group"), n.at("mean"), n.at("std")});
    return out;
}

// Split of the configured manifest, after the winter filter; checks files exist.
inline DatasetManifest split_manifest(const ExperimentConfig& cfg, const std::string& split) {
    auto m = read_manifest(cfg.manifest_path());
    if (cfg.data.winter_exclusion) m = m.without_winter();
    m = m.split(split);
    const auto missing = missing_files(m);
    if (!missing.empty()) {
        std::string msg = "missing data files:";
        for (const auto& p : missing) msg += "\n  " + p;
        throw IoError(msg, cfg.manifest_path());
    }
    return m;
}

// Training split with rainy-day sampling and pixel-ratio resampling applied.
inline DatasetManifest training_manifest(const ExperimentConfig& cfg) {
    auto m = split_manifest(cfg, "train");
    if (m.empty()) throw ArgumentError("training manifest is empty");
    const auto counts = file_counter(m, cfg.sampling.rule.tau0);
    if (cfg.sampling.rainy_fraction)
        m = sample_rainy_days(m, counts, *cfg.sampling.rainy_fraction, cfg.sampling.rule,
                              hash_key({cfg.seed, 0x5a11}));
    if (cfg.sampling.resample) {
        const auto c2 = file_counter(m, cfg.sampling.rule.tau0);
        m = resample_pixel_ratio(m, c2, cfg.sampling.target_no_rain, *cfg.sampling.resample,
                                 hash_key({cfg.seed, 0x4e5a}));
    }
    return m;
}

inline std::vector<Sample> load_samples(const DatasetManifest& m) {
    std::vector<Sample> out;
    out.reserve(m.size());
    for (const auto& e : m.entries) out.push_back(load_sample(e, m));
    return out;
}

// z-score statistics per variable, fitted on a seeded subset of the samples.
inline std::vector<NormStats> fit_norm(const std::vector<Sample>& samples, double fraction, std::uint64_t seed) {
    if (samples.empty()) throw ArgumentError("normalization: no samples");
    std::vector<std::size_t> idx(samples.size());
    std::iota(idx.begin(), idx.end(), 0);
    const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fraction * samples.size())));
    if (k < samples.size()) {
        auto eng = keyed_engine(seed, samples.size(), Stream::sampling, 0x4e);
        std::shuffle(idx.begin(), idx.end(), eng);
        idx.resize(k);
        std::sort(idx.begin(), idx.end());
    }
    std::vector<GridField> sub;
    for (auto i : idx) sub.push_back(samples[i].forecast);
    return zscore_fit(sub, grouping_by_name(sub.front()));
}

template <class T>
inline Dataset<T> build_dataset(const DatasetManifest& m, const std::vector<Sample>& samples,
                                const std::vector<NormStats>& norm, const ExperimentConfig& cfg) {
    Dataset<T> d;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        if (s.forecast.n_vars != cfg.arch.n_vars || s.forecast.height != cfg.arch.height ||
            s.forecast.width != cfg.arch.width)
            throw ConfigError("data grid " + std::to_string(s.forecast.n_vars) + "x" +
                              std::to_string(s.forecast.height) + "x" + std::to_string(s.forecast.width) +
                              " does not match the arch config");
        d.ids.push_back(m.entries[i].sample_id);
        d.x.push_back(nn::to_tensor<T>(zscore_apply(s.forecast, norm, grouping_by_name(s.forecast))));
        d.truth.push_back(s.truth);
        d.onehot.push_back(label_field(s.truth, cfg.label, LabelKind::one_hot));
        d.target.push_back(cfg.label_kind == LabelKind::one_hot ? d.onehot.back()
                                                                 : label_field(s.truth, cfg.label, cfg.label_kind));
    }
    return d;
}

// ---------------------------------------------------------------------------
// reports

struct RunReport {
    std::string stage;
    std::vector<double> epoch_losses;
    std::optional<EvalReport> metrics;
    double wall_seconds = 0;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::uint64_t steps = 0;
    std::vector<std::string> warnings;
};

inline nlohmann::json report_json(const RunReport& r, bool include_timing = true) {
    nlohmann::json j = {{"stage", r.stage},
                        {"epoch_losses", r.epoch_losses},
                        {"config_hash", r.config_hash},
                        {"seed", r.seed},
                        {"steps", r.steps},
                        {"warnings", r.warnings}};
    if (include_timing) j["wall_seconds"] = r.wall_seconds;
    if (r.metrics) j["metrics"] = report_json(*r.metrics);
    return j;
}

// ---------------------------------------------------------------------------
// training loop

enum class StageTag : std::uint64_t { pretrain = 1, finetune = 2 };

template <class T>
using SampleLossFn = std::function<T(const nn::ParamStore<T>&, nn::Grads<T>&, std::size_t sample, std::uint64_t mask_seed)>;

// Runs `epochs` more epochs from the state's current epoch. Shuffles and
// masks derive from (seed, epoch, position), so resuming from a saved state
// reproduces an uninterrupted run exactly.
template <class T>
inline void run_epochs(nn::TrainState<T>& st, std::size_t n_samples, std::size_t epochs, std::size_t batch,
                       const nn::OptimConfig& opt, StageTag tag, const SampleLossFn<T>& f,
                       std::vector<double>& epoch_losses) {
    if (n_samples == 0) throw ArgumentError("training: no samples");
    for (std::size_t e = 0; e < epochs; ++e) {
        const std::uint64_t epoch = st.epoch;
        std::vector<std::size_t> order(n_samples);
        std::iota(order.begin(), order.end(), 0);
        auto eng = keyed_engine(st.seed, epoch, Stream::shuffle, static_cast<std::uint64_t>(tag));
        std::shuffle(order.begin(), order.end(), eng);
        double sum = 0;
        for (std::size_t b0 = 0; b0 < n_samples; b0 += batch) {
            const std::size_t b1 = std::min(n_samples, b0 + batch);
            const T loss = nn::train_step(
                st,
                [&](const nn::ParamStore<T>& p, nn::Grads<T>& g) {
                    T total = 0;
                    for (std::size_t k = b0; k < b1; ++k)
                        total += f(p, g, order[k], hash_key({st.seed, epoch, order[k], static_cast<std::uint64_t>(tag)}));
                    const T inv = T(1) / static_cast<T>(b1 - b0);
                    g.scale(inv);
                    return total * inv;
                },
                opt);
            sum += static_cast<double>(loss) * static_cast<double>(b1 - b0);
        }
        epoch_losses.push_back(sum / static_cast<double>(n_samples));
        ++st.epoch;
    }
}

template <class T>
inline T pretrain_sample_loss(const nn::TinyNet<T>& net, const nn::ParamStore<T>& p, nn::Grads<T>& g,
                              const nn::Tensor<T>& x, double ratio, std::uint64_t mask_seed) {
    const auto& pc = net.arch().patch;
    const auto mask = make_mask(pc.n_tokens(x.c, x.h, x.w), ratio, mask_seed);
    nn::Tensor<T> xm = x;
    apply_mask_values<T>(std::span<T>(xm.data), x.c, x.h, x.w, mask, pc);
    nn::EncodeCache<T> ec;
    nn::DecodeCache<T> dc;
    const auto z = net.encode(p, xm, &ec);
    const auto xr = net.decode_rec(p, z, &dc);
    nn::Tensor<T> d;
    const T loss = rec_loss(xr, x, mask, pc, &d);
    if (mask.indices.empty()) return loss; // nothing to reconstruct
    const auto dz = net.decode_backward(p, nn::Head::rec, dc, d, g);
    net.encode_backward(p, ec, dz, g);
    return loss;
}

template <class T>
inline T finetune_sample_loss(const nn::TinyNet<T>& net, const nn::ParamStore<T>& p, nn::Grads<T>& g,
                              const nn::Tensor<T>& x, const LabelTensor& y, const LabelTensor& ystar,
                              const LossConfig& loss_cfg, double ratio, std::uint64_t mask_seed) {
    const auto& pc = net.arch().patch;
    nn::Tensor<T> xm = x;
    if (ratio > 0) {
        const auto mask = make_mask(pc.n_tokens(x.c, x.h, x.w), ratio, mask_seed);
        apply_mask_values<T>(std::span<T>(xm.data), x.c, x.h, x.w, mask, pc);
    }
    nn::EncodeCache<T> ec;
    nn::DecodeCache<T> dc;
    const auto z = net.encode(p, xm, &ec);
    const auto logits = net.decode_seg(p, z, &dc);
    nn::Tensor<T> d;
    const T loss = seg_loss(logits, y, ystar, loss_cfg, &d);
    const auto dz = net.decode_backward(p, nn::Head::seg, dc, d, g);
    net.encode_backward(p, ec, dz, g);
    return loss;
}

// ---------------------------------------------------------------------------
// stages

template <class T>
struct TrainedModel {
    nn::TrainState<T> state;
    std::vector<NormStats> norm;
    RunReport report;
    LossConfig loss; // resolved (inverse-frequency weights filled in)
};

inline nlohmann::json checkpoint_meta(const ExperimentConfig& cfg, const std::vector<NormStats>& norm,
                                      const std::string& stage, const LossConfig* loss = nullptr) {
    nlohmann::json j = {{"config", cfg}, {"norm", norm_to_json(norm)}, {"stage", stage}};
    if (loss) j["resolved_loss"] = *loss;
    return j;
}

template <class T>
inline void apply_freezes(const nn::TinyNet<T>& net, nn::ParamStore<T>& p, const ExperimentConfig& cfg, bool finetune) {
    if (cfg.freeze_offsets) net.freeze_offsets(p);
    if (finetune && cfg.finetune.freeze_encoder) {
        net.set_trainable(p, "enc.", false);
        net.set_trainable(p, "embed.", false);
    }
}

// Self-supervised masked reconstruction on the training split. Passing a
// state resumes it for `epochs` more epochs (default: the configured count).
template <class T>
inline TrainedModel<T> pretrain(const ExperimentConfig& cfg, const Dataset<T>& data, std::vector<NormStats> norm,
                                std::optional<nn::TrainState<T>> resume = std::nullopt,
                                std::optional<std::size_t> epochs = std::nullopt) {
    const auto t0 = std::chrono::steady_clock::now();
    nn::TinyNet<T> net(cfg.arch);
    TrainedModel<T> out{resume ? std::move(*resume) : nn::TrainState<T>(net.init_params(cfg.seed), cfg.seed),
                        std::move(norm), {}, cfg.loss};
    net.check(out.state.params);
    apply_freezes(net, out.state.params, cfg, false);
    auto& rep = out.report;
    rep.stage = "pretrain";
    rep.seed = cfg.seed;
    rep.config_hash = hex(config_hash(cfg));
    if (cfg.pretrain.mask_ratio == 0 || masked_count(cfg.arch.patch.n_tokens(cfg.arch.n_vars, cfg.arch.height,
                                                                              cfg.arch.width),
                                                     cfg.pretrain.mask_ratio) == 0)
        rep.warnings.push_back("pretrain mask ratio masks no tokens: reconstruction loss is identically 0");
    SampleLossFn<T> f = [&](const nn::ParamStore<T>& p, nn::Grads<T>& g, std::size_t i, std::uint64_t ms) {
        return pretrain_sample_loss(net, p, g, data.x[i], cfg.pretrain.mask_ratio, ms);
    };
    run_epochs(out.state, data.size(), epochs.value_or(cfg.pretrain.epochs), cfg.pretrain.batch, cfg.optim,
               StageTag::pretrain, f, rep.epoch_losses);
    rep.steps = out.state.step;
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

// Class weights resolved against the training labels.
template <class T>
inline LossConfig resolve_loss(const ExperimentConfig& cfg, const Dataset<T>& data) {
    LossConfig l = cfg.loss;
    if (l.inverse_frequency) {
        l.class_weights = inverse_frequency_weights(proportions(data.onehot));
        l.inverse_frequency = false;
    }
    return l;
}

// Copies encoder and embedding parameters from a pre-trained state.
template <class T>
inline void transfer_encoder(const nn::ParamStore<T>& from, nn::ParamStore<T>& to) {
    for (std::size_t i = 0; i < to.size(); ++i) {
        const auto& name = to.info[i].name;
        if (name.rfind("enc.", 0) == 0 || name.rfind("embed.", 0) == 0) {
            const auto j = from.index_of(name);
            if (from.values[j].size() != to.values[i].size())
                throw CheckpointError("checkpoint: parameter " + name + " has a different shape");
            to.values[i] = from.values[j];
        }
    }
}

// Segmentation fine-tuning; `init` holds pre-trained parameters or is empty for scratch.
template <class T>
inline TrainedModel<T> finetune(const ExperimentConfig& cfg, const Dataset<T>& data, std::vector<NormStats> norm,
                                const nn::ParamStore<T>* init, std::optional<nn::TrainState<T>> resume = std::nullopt,
                                std::optional<std::size_t> epochs = std::nullopt) {
    const auto t0 = std::chrono::steady_clock::now();
    nn::TinyNet<T> net(cfg.arch);
    nn::TrainState<T> st;
    if (resume) {
        st = std::move(*resume);
        net.check(st.params);
    } else {
        auto p = net.init_params(hash_key({cfg.seed, static_cast<std::uint64_t>(StageTag::finetune)}));
        if (init) {
            net.check(*init);
            transfer_encoder(*init, p);
        }
        st = nn::TrainState<T>(std::move(p), cfg.seed);
    }
    apply_freezes(net, st.params, cfg, true);
    TrainedModel<T> out{std::move(st), std::move(norm), {}, resolve_loss(cfg, data)};
    auto& rep = out.report;
    rep.stage = "finetune";
    rep.seed = cfg.seed;
    rep.config_hash = hex(config_hash(cfg));
    SampleLossFn<T> f = [&](const nn::ParamStore<T>& p, nn::Grads<T>& g, std::size_t i, std::uint64_t ms) {
        return finetune_sample_loss(net, p, g, data.x[i], data.onehot[i], data.target[i], out.loss,
                                    cfg.finetune.mask_ratio, ms);
    };
    run_epochs(out.state, data.size(), epochs.value_or(cfg.finetune.epochs), cfg.finetune.batch, cfg.optim,
               StageTag::finetune, f, rep.epoch_losses);
    rep.steps = out.state.step;
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

// Per-pixel argmax (lowest index wins ties).
template <class T>
inline std::vector<int> argmax_classes(const nn::Tensor<T>& logits) {
    std::vector<int> out(logits.plane(), 0);
    for (std::size_t p = 0; p < logits.plane(); ++p) {
        T best = logits.data[p];
        for (std::size_t k = 1; k < logits.c; ++k)
            if (logits.data[k * logits.plane() + p] > best) {
                best = logits.data[k * logits.plane() + p];
                out[p] = static_cast<int>(k);
            }
    }
    return out;
}

// Unmasked inference on every sample; the model is not modified.
template <class T>
inline EvalReport evaluate(const ExperimentConfig& cfg, const nn::ParamStore<T>& params, const Dataset<T>& data) {
    if (data.size() == 0) throw ArgumentError("evaluate: empty dataset");
    nn::TinyNet<T> net(cfg.arch);
    net.check(params);
    Evaluator ev(cfg.label, cfg.eval.csi_mode, cfg.eval.absent_class);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto cls = argmax_classes(net.predict_logits(params, data.x[i]));
        ev.add(cls, data.truth[i]);
    }
    return ev.report();
}

// ---------------------------------------------------------------------------
// end-to-end helpers used by the CLI and the ablation harness

template <class T>
struct PreparedData {
    std::vector<NormStats> norm;
    Dataset<T> train;
    Dataset<T> test;
};

// Loads train (with sampling) and test splits; `norm` overrides fitting.
template <class T>
inline PreparedData<T> prepare_data(const ExperimentConfig& cfg, const std::vector<NormStats>* norm = nullptr,
                                    const std::string& eval_split = "test") {
    PreparedData<T> d;
    const auto tm = training_manifest(cfg);
    const auto ts = load_samples(tm);
    d.norm = norm ? *norm : fit_norm(ts, cfg.data.norm_sample_fraction, cfg.seed);
    d.train = build_dataset<T>(tm, ts, d.norm, cfg);
    const auto em = split_manifest(cfg, eval_split);
    if (!em.empty()) d.test = build_dataset<T>(em, load_samples(em), d.norm, cfg);
    return d;
}

} // namespace sslpdl
