#pragma once

// Grid sweeps over experiment settings. Each cell overrides dotted config
// paths, runs (optional pre-training ->) fine-tuning -> evaluation with a
// seed derived from the cell, and yields one CSV row. A failing cell is
// recorded and the sweep continues.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "sslpdl/error.hpp"
#include "sslpdl/pipeline/config.hpp"
#include "sslpdl/pipeline/run.hpp"

namespace sslpdl {

struct SweepAxis {
    std::string key; // dotted config path
    std::vector<nlohmann::json> values;
};

struct Sweep {
    std::vector<SweepAxis> axes;
    std::vector<std::uint64_t> replicate_seeds; // empty -> the config seed only

    std::size_t cell_count() const {
        std::size_t n = 1;
        for (const auto& a : axes) n *= a.values.size();
        return n;
    }
};

// Short names for the paper's sweep axes.
inline std::string canonical_key(const std::string& k) {
    static const std::map<std::string, std::string> alias = {
        {"rho_pre", "pretrain.mask_ratio"}, {"rho_ft", "finetune.mask_ratio"},
        {"alpha", "label.alpha"},           {"beta", "loss.beta"},
        {"sampling", "sampling.resample.mode"}, {"labeling", "label.kind"},
        {"init", "finetune.init"},          {"freeze_offsets", "arch.freeze_offsets"}};
    auto it = alias.find(k);
    return it == alias.end() ? k : it->second;
}

// {"grid": {key: [values]} or [{"key": k, "values": [...]}], "seeds": [...]}.
// Object-form grids iterate keys in sorted order; the array form keeps the given order.
inline Sweep parse_sweep(const nlohmann::json& j) {
    Sweep s;
    try {
        const auto& g = j.at("grid");
        if (g.is_object()) {
            for (const auto& [k, v] : g.items()) s.axes.push_back({canonical_key(k), v.get<std::vector<nlohmann::json>>()});
        } else if (g.is_array()) {
            for (const auto& a : g)
                s.axes.push_back({canonical_key(a.at("key").get<std::string>()),
                                  a.at("values").get<std::vector<nlohmann::json>>()});
        } else {
            throw ConfigError("sweep: grid must be an object or an array");
        }
        if (j.contains("seeds")) s.replicate_seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("sweep: ") + e.what());
    }
    if (s.axes.empty()) throw ConfigError("sweep: grid is empty");
    for (const auto& a : s.axes)
        if (a.values.empty()) throw ConfigError("sweep: axis " + a.key + " has no values");
    return s;
}

inline Sweep load_sweep(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open sweep: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("sweep: " + std::string(e.what()));
    }
    return parse_sweep(j);
}

inline void set_path(nlohmann::json& j, const std::string& dotted, const nlohmann::json& value) {
    nlohmann::json* cur = &j;
    std::size_t start = 0;
    while (true) {
        const auto dot = dotted.find('.', start);
        const auto part = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (dot == std::string::npos) {
            (*cur)[part] = value;
            return;
        }
        if (!cur->contains(part) || !(*cur)[part].is_object()) (*cur)[part] = nlohmann::json::object();
        cur = &(*cur)[part];
        start = dot + 1;
    }
}

// Cell k of the cartesian product, last axis varying fastest.
inline nlohmann::json cell_params(const Sweep& s, std::size_t k) {
    nlohmann::json cell = nlohmann::json::object();
    std::vector<std::size_t> pick(s.axes.size());
    for (std::size_t a = s.axes.size(); a-- > 0;) {
        pick[a] = k % s.axes[a].values.size();
        k /= s.axes[a].values.size();
    }
    for (std::size_t a = 0; a < s.axes.size(); ++a) cell[s.axes[a].key] = s.axes[a].values[pick[a]];
    return cell;
}

inline std::uint64_t cell_seed(std::uint64_t base, const nlohmann::json& cell) {
    return hash_key({base, fnv1a(cell.dump())});
}

struct AblationRow {
    nlohmann::json cell;
    std::size_t replicate = 0;
    std::uint64_t seed = 0;
    std::vector<double> csi; // per configured threshold
    double miou = 0;
    double first_loss = 0, final_loss = 0;
    double runtime_s = 0;
    std::string status = "ok";
};

// Train/eval for one fully specified config. Returns metrics and the fine-tuning report.
template <class T>
inline RunReport run_cell(const ExperimentConfig& cfg) {
    auto data = prepare_data<T>(cfg);
    if (data.test.size() == 0) throw ArgumentError("ablate: test split is empty");
    std::optional<TrainedModel<T>> pre;
    const nn::ParamStore<T>* init = nullptr;
    if (cfg.finetune.init == "pretrained") {
        pre = pretrain<T>(cfg, data.train, data.norm);
        init = &pre->state.params;
    } else if (cfg.finetune.init != "scratch") {
        nn::TinyNet<T> net(cfg.arch);
        pre = TrainedModel<T>{nn::load_checkpoint(net, cfg.finetune.init), data.norm, {}, cfg.loss};
        init = &pre->state.params;
    }
    auto ft = finetune<T>(cfg, data.train, data.norm, init);
    ft.report.metrics = evaluate(cfg, ft.state.params, data.test);
    return ft.report;
}

using AblationProgress = std::function<void(std::size_t done, std::size_t total, const AblationRow&)>;

template <class T>
inline std::vector<AblationRow> ablate(const nlohmann::json& base_cfg, const Sweep& sweep,
                                       const AblationProgress& progress = {}) {
    const auto base = parse_config(base_cfg);
    const auto seeds = sweep.replicate_seeds.empty() ? std::vector<std::uint64_t>{base.seed} : sweep.replicate_seeds;
    std::vector<AblationRow> rows;
    const std::size_t total = sweep.cell_count() * seeds.size();
    for (std::size_t c = 0; c < sweep.cell_count(); ++c)
        for (std::size_t r = 0; r < seeds.size(); ++r) {
            AblationRow row;
            row.cell = cell_params(sweep, c);
            row.replicate = r;
            row.seed = cell_seed(seeds[r], row.cell);
            const auto t0 = std::chrono::steady_clock::now();
            try {
                nlohmann::json j = base_cfg;
                for (const auto& [k, v] : row.cell.items()) set_path(j, k, v);
                j["seed"] = row.seed;
                const auto cfg = parse_config(j);
                const auto rep = run_cell<T>(cfg);
                for (double tau : cfg.label.thresholds) row.csi.push_back(rep.metrics->csi_at(tau));
                row.miou = rep.metrics->miou;
                if (!rep.epoch_losses.empty()) {
                    row.first_loss = rep.epoch_losses.front();
                    row.final_loss = rep.epoch_losses.back();
                }
            } catch (const std::exception& e) {
                row.status = std::string("error: ") + e.what();
            }
            row.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            rows.push_back(row);
            if (progress) progress(rows.size(), total, rows.back());
        }
    return rows;
}

inline std::string format_number(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", x);
    return buf;
}

inline std::string csv_field(std::string s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch == '\n' ? ' ' : ch;
    }
    return out + "\"";
}

inline void write_ablation_csv(const std::vector<AblationRow>& rows, const Sweep& sweep,
                               const std::vector<double>& thresholds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing", path);
    for (const auto& a : sweep.axes) out << csv_field(a.key) << ',';
    out << "replicate,seed";
    for (double t : thresholds) out << ",csi_" << format_number(t);
    out << ",miou,first_loss,final_loss,runtime_s,status\n";
    for (const auto& r : rows) {
        for (const auto& a : sweep.axes) {
            const auto& v = r.cell.at(a.key);
            out << csv_field(v.is_string() ? v.get<std::string>() : v.dump()) << ',';
        }
        out << r.replicate << ',' << r.seed;
        const bool ok = r.status == "ok";
        for (std::size_t i = 0; i < thresholds.size(); ++i)
            out << ',' << (ok && i < r.csi.size() ? format_number(r.csi[i]) : "");
        if (ok)
            out << ',' << format_number(r.miou) << ',' << format_number(r.first_loss) << ','
                << format_number(r.final_loss);
        else
            out << ",,,";
        out << ',' << format_number(r.runtime_s) << ',' << csv_field(r.status) << '\n';
    }
}

} // namespace sslpdl
