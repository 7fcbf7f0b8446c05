#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include <json.hpp>

#include "sslpdl/error.hpp"
#include "sslpdl/labeling.hpp"
#include "sslpdl/nn/model.hpp"
#include "sslpdl/nn/optim.hpp"
#include "sslpdl/objectives.hpp"
#include "sslpdl/random.hpp"
#include "sslpdl/sampling.hpp"
#include "sslpdl/synth.hpp"
#include "sslpdl/verify.hpp"

namespace sslpdl {

struct DataConfig {
    std::string manifest;          // empty -> <gen.out_dir>/manifest.json
    bool winter_exclusion = true;
    double norm_sample_fraction = 1.0; // share of training samples used to fit z-score stats
};

struct GenConfig {
    std::string out_dir = "data";
    SplitCounts counts{200, 0, 50};
};

struct StageConfig {
    double mask_ratio = 0.0;
    std::size_t epochs = 20;
    std::size_t batch = 8;
};

struct FinetuneConfig : StageConfig {
    std::string init = "scratch"; // "scratch", "pretrained" (ablation) or a checkpoint path
    bool freeze_encoder = false;
};

struct SamplingConfig {
    std::optional<double> rainy_fraction; // rainy-day share of the training set
    RainyRule rule;
    std::optional<ResampleMode> resample; // pixel-level no-rain ratio adjustment
    double target_no_rain = 0.8;
};

struct EvalConfig {
    CsiMode csi_mode = CsiMode::pooled;
    AbsentClass absent_class = AbsentClass::count_as_one;
};

struct ExperimentConfig {
    std::uint64_t seed = 7;
    DataConfig data;
    SynthConfig synth;
    GenConfig gen;
    LabelConfig label;
    LabelKind label_kind = LabelKind::density; // kind of y* in the mixed loss
    LossConfig loss;
    nn::ArchConfig arch;
    bool freeze_offsets = false;
    nn::OptimConfig optim;
    StageConfig pretrain{0.75, 20, 8};
    FinetuneConfig finetune{{0.25, 20, 8}};
    SamplingConfig sampling;
    EvalConfig eval;

    std::string manifest_path() const {
        return data.manifest.empty() ? (std::filesystem::path(gen.out_dir) / "manifest.json").string() : data.manifest;
    }

    void validate() const {
        auto ratio = [](double r, const char* what) {
            if (!(r >= 0 && r <= 1)) throw ConfigError(std::string(what) + " must lie in [0, 1]");
        };
        ratio(pretrain.mask_ratio, "pretrain.mask_ratio");
        ratio(finetune.mask_ratio, "finetune.mask_ratio");
        ratio(data.norm_sample_fraction, "data.norm_sample_fraction");
        if (!(data.norm_sample_fraction > 0)) throw ConfigError("data.norm_sample_fraction must be > 0");
        if (pretrain.batch == 0 || finetune.batch == 0) throw ConfigError("batch sizes must be positive");
        if (sampling.rainy_fraction) ratio(*sampling.rainy_fraction, "sampling.rainy_fraction");
        ratio(sampling.target_no_rain, "sampling.resample.target_no_rain");
        label.validate();
        loss.validate(label.n_classes());
        arch.validate();
        optim.validate();
        if (arch.n_classes != label.n_classes())
            throw ConfigError("arch.n_classes must equal the number of label classes");
    }
};

// ---------------------------------------------------------------------------
// JSON

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    nlohmann::json arch = c.arch;
    arch.erase("patch");
    arch["freeze_offsets"] = c.freeze_offsets;
    nlohmann::json label = c.label;
    label["kind"] = to_string(c.label_kind);
    nlohmann::json sampling = {{"rainy_tau0", c.sampling.rule.tau0}, {"rainy_min_frac", c.sampling.rule.min_frac}};
    if (c.sampling.rainy_fraction) sampling["rainy_fraction"] = *c.sampling.rainy_fraction;
    if (c.sampling.resample)
        sampling["resample"] = {{"mode", *c.sampling.resample == ResampleMode::under ? "under" : "over"},
                                {"target_no_rain", c.sampling.target_no_rain}};
    j = {{"seed", c.seed},
         {"data",
          {{"manifest", c.data.manifest},
           {"winter_exclusion", c.data.winter_exclusion},
           {"norm_sample_fraction", c.data.norm_sample_fraction}}},
         {"synth", c.synth},
         {"gen",
          {{"out_dir", c.gen.out_dir},
           {"counts", {{"train", c.gen.counts.train}, {"val", c.gen.counts.val}, {"test", c.gen.counts.test}}}}},
         {"patch", c.arch.patch},
         {"label", label},
         {"loss", c.loss},
         {"arch", arch},
         {"optim", c.optim},
         {"pretrain",
          {{"mask_ratio", c.pretrain.mask_ratio}, {"epochs", c.pretrain.epochs}, {"batch", c.pretrain.batch}}},
         {"finetune",
          {{"mask_ratio", c.finetune.mask_ratio},
           {"epochs", c.finetune.epochs},
           {"batch", c.finetune.batch},
           {"init", c.finetune.init},
           {"freeze_encoder", c.finetune.freeze_encoder}}},
         {"sampling", sampling},
         {"eval",
          {{"csi_mode", c.eval.csi_mode == CsiMode::pooled ? "pooled" : "per_sample_mean"},
           {"absent_class_iou", c.eval.absent_class == AbsentClass::count_as_one ? "one" : "exclude"}}}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    c = ExperimentConfig{};
    c.seed = j.value("seed", c.seed);
    if (j.contains("data")) {
        const auto& d = j["data"];
        c.data.manifest = d.value("manifest", c.data.manifest);
        c.data.winter_exclusion = d.value("winter_exclusion", c.data.winter_exclusion);
        c.data.norm_sample_fraction = d.value("norm_sample_fraction", c.data.norm_sample_fraction);
    }
    if (j.contains("synth")) c.synth = j["synth"].get<SynthConfig>();
    if (j.contains("gen")) {
        const auto& g = j["gen"];
        c.gen.out_dir = g.value("out_dir", c.gen.out_dir);
        if (g.contains("counts")) {
            const auto& k = g["counts"];
            c.gen.counts.train = k.value("train", c.gen.counts.train);
            c.gen.counts.val = k.value("val", c.gen.counts.val);
            c.gen.counts.test = k.value("test", c.gen.counts.test);
        }
    }
    // grid shape follows the generator unless the arch says otherwise
    c.arch.n_vars = c.synth.n_vars;
    c.arch.height = c.synth.height;
    c.arch.width = c.synth.width;
    if (j.contains("arch")) {
        nlohmann::json a = j["arch"];
        for (const char* k : {"n_vars", "height", "width"})
            if (!a.contains(k)) a[k] = nlohmann::json(c.arch)[k];
        c.freeze_offsets = a.value("freeze_offsets", false);
        c.arch = a.get<nn::ArchConfig>();
    }
    if (j.contains("patch")) c.arch.patch = j["patch"].get<PatchConfig>();
    if (j.contains("label")) {
        c.label = j["label"].get<LabelConfig>();
        c.label_kind = parse_label_kind(j["label"].value("kind", to_string(c.label_kind)));
    }
    if (!j.contains("arch") || !j["arch"].contains("n_classes")) c.arch.n_classes = c.label.n_classes();
    if (j.contains("loss")) c.loss = j["loss"].get<LossConfig>();
    if (j.contains("optim")) c.optim = j["optim"].get<nn::OptimConfig>();
    auto stage = [](const nlohmann::json& s, StageConfig& st) {
        st.mask_ratio = s.value("mask_ratio", st.mask_ratio);
        st.epochs = s.value("epochs", st.epochs);
        st.batch = s.value("batch", st.batch);
    };
    if (j.contains("pretrain")) stage(j["pretrain"], c.pretrain);
    if (j.contains("finetune")) {
        stage(j["finetune"], c.finetune);
        c.finetune.init = j["finetune"].value("init", c.finetune.init);
        c.finetune.freeze_encoder = j["finetune"].value("freeze_encoder", c.finetune.freeze_encoder);
    }
    if (j.contains("sampling")) {
        const auto& s = j["sampling"];
        if (s.contains("rainy_fraction") && !s["rainy_fraction"].is_null())
            c.sampling.rainy_fraction = s["rainy_fraction"].get<double>();
        c.sampling.rule.tau0 = s.value("rainy_tau0", c.sampling.rule.tau0);
        c.sampling.rule.min_frac = s.value("rainy_min_frac", c.sampling.rule.min_frac);
        if (s.contains("resample") && !s["resample"].is_null()) {
            const auto& r = s["resample"];
            const auto mode = r.value("mode", std::string("none"));
            if (mode != "none") c.sampling.resample = parse_resample_mode(mode);
            c.sampling.target_no_rain = r.value("target_no_rain", c.sampling.target_no_rain);
        }
    }
    if (j.contains("eval")) {
        const auto& e = j["eval"];
        c.eval.csi_mode = parse_csi_mode(e.value("csi_mode", std::string("pooled")));
        const auto absent = e.value("absent_class_iou", std::string("one"));
        if (absent == "one") c.eval.absent_class = AbsentClass::count_as_one;
        else if (absent == "exclude") c.eval.absent_class = AbsentClass::exclude;
        else throw ConfigError("eval.absent_class_iou must be one|exclude");
    }
}

// Parses and validates; JSON type errors become ConfigError.
inline ExperimentConfig parse_config(const nlohmann::json& j) {
    ExperimentConfig c;
    try {
        c = j.get<ExperimentConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

// Relative data paths resolve against the config file's directory.
inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: " + std::string(e.what()) + " in " + path);
    }
    auto c = parse_config(j);
    const auto base = std::filesystem::path(path).parent_path();
    auto resolve = [&](std::string& p) {
        if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base / p).string();
    };
    resolve(c.gen.out_dir);
    resolve(c.data.manifest);
    if (c.finetune.init != "scratch" && c.finetune.init != "pretrained") resolve(c.finetune.init);
    return c;
}

// Stable under key reordering: nlohmann::json keeps object keys sorted.
inline std::uint64_t config_hash(const ExperimentConfig& c) { return fnv1a(nlohmann::json(c).dump()); }

inline std::string hex(std::uint64_t x) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
    return buf;
}

} // namespace sslpdl
