#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sslpdl/error.hpp"
#include "sslpdl/labeling.hpp"
#include "sslpdl/synth.hpp"

namespace sslpdl {

struct ContingencyTable {
    double threshold = 0.0;
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

    std::uint64_t total() const noexcept { return tp + fp + fn + tn; }
    bool operator==(const ContingencyTable&) const = default;
};

struct Scores {
    double csi = 0, precision = 0, recall = 0, f1 = 0;
};

inline double safe_ratio(double a, double b) { return b > 0 ? a / b : 0.0; }

inline Scores scores(const ContingencyTable& t) {
    Scores s;
    const double tp = static_cast<double>(t.tp), fp = static_cast<double>(t.fp), fn = static_cast<double>(t.fn);
    s.csi = safe_ratio(tp, tp + fp + fn);
    s.precision = safe_ratio(tp, tp + fp);
    s.recall = safe_ratio(tp, tp + fn);
    s.f1 = safe_ratio(2 * s.precision * s.recall, s.precision + s.recall);
    return s;
}

// Event iff value >= tau on both sides.
inline ContingencyTable contingency(std::span<const float> pred, std::span<const float> obs, double tau) {
    if (pred.size() != obs.size()) throw ArgumentError("contingency: field sizes differ");
    ContingencyTable t{tau};
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] >= tau, o = obs[i] >= tau;
        if (p && o) ++t.tp;
        else if (p) ++t.fp;
        else if (o) ++t.fn;
        else ++t.tn;
    }
    return t;
}

inline ContingencyTable contingency(const RainField& pred, const RainField& obs, double tau) {
    if (pred.height != obs.height || pred.width != obs.width) throw ArgumentError("contingency: shapes differ");
    return contingency(std::span<const float>(pred.gamma), std::span<const float>(obs.gamma), tau);
}

// Class predictions: class k is an event at tau iff its bin's lower edge >= tau.
inline ContingencyTable contingency(std::span<const int> pred_class, const RainField& obs, double tau,
                                    const LabelConfig& cfg) {
    if (pred_class.size() != obs.size()) throw ArgumentError("contingency: shapes differ");
    if (std::find(cfg.thresholds.begin(), cfg.thresholds.end(), tau) == cfg.thresholds.end())
        throw ArgumentError("contingency: threshold is not one of the configured class edges");
    const int nc = static_cast<int>(cfg.n_classes());
    ContingencyTable t{tau};
    for (std::size_t i = 0; i < pred_class.size(); ++i) {
        const int k = pred_class[i];
        if (k < 0 || k >= nc) throw ArgumentError("contingency: class index out of range");
        const bool p = cfg.lower_edge(static_cast<std::size_t>(k)) >= tau, o = obs.gamma[i] >= tau;
        if (p && o) ++t.tp;
        else if (p) ++t.fp;
        else if (o) ++t.fn;
        else ++t.tn;
    }
    return t;
}

inline ContingencyTable merge(const ContingencyTable& a, const ContingencyTable& b) {
    if (a.threshold != b.threshold) throw ArgumentError("merge: thresholds differ");
    return {a.threshold, a.tp + b.tp, a.fp + b.fp, a.fn + b.fn, a.tn + b.tn};
}

// ---------------------------------------------------------------------------

enum class AbsentClass { count_as_one, exclude };

struct ClassIoUTable {
    std::vector<std::uint64_t> intersection;
    std::vector<std::uint64_t> union_;

    explicit ClassIoUTable(std::size_t c = 0) : intersection(c, 0), union_(c, 0) {}
    std::size_t n_classes() const noexcept { return intersection.size(); }
    bool operator==(const ClassIoUTable&) const = default;

    std::vector<double> ious() const {
        std::vector<double> out(n_classes());
        for (std::size_t k = 0; k < n_classes(); ++k)
            out[k] = union_[k] ? static_cast<double>(intersection[k]) / static_cast<double>(union_[k]) : 1.0;
        return out;
    }

    double miou(AbsentClass mode = AbsentClass::count_as_one) const {
        double sum = 0;
        std::size_t n = 0;
        const auto iou = ious();
        for (std::size_t k = 0; k < n_classes(); ++k) {
            if (union_[k] == 0 && mode == AbsentClass::exclude) continue;
            sum += iou[k];
            ++n;
        }
        return n ? sum / static_cast<double>(n) : 0.0;
    }
};

inline ClassIoUTable iou_table(std::span<const int> pred, std::span<const int> obs, std::size_t c) {
    if (pred.size() != obs.size()) throw ArgumentError("miou: field sizes differ");
    ClassIoUTable t(c);
    const int nc = static_cast<int>(c);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const int a = pred[i], b = obs[i];
        if (a < 0 || a >= nc || b < 0 || b >= nc) throw ArgumentError("miou: class index out of range");
        if (a == b) {
            ++t.intersection[a];
            ++t.union_[a];
        } else {
            ++t.union_[a];
            ++t.union_[b];
        }
    }
    return t;
}

struct MiouResult {
    double miou = 0;
    std::vector<double> per_class;
};

inline MiouResult miou(std::span<const int> pred, std::span<const int> obs, std::size_t c,
                       AbsentClass mode = AbsentClass::count_as_one) {
    const auto t = iou_table(pred, obs, c);
    return {t.miou(mode), t.ious()};
}

inline ClassIoUTable merge(const ClassIoUTable& a, const ClassIoUTable& b) {
    if (a.n_classes() != b.n_classes()) throw ArgumentError("merge: class counts differ");
    ClassIoUTable out(a.n_classes());
    for (std::size_t k = 0; k < a.n_classes(); ++k) {
        out.intersection[k] = a.intersection[k] + b.intersection[k];
        out.union_[k] = a.union_[k] + b.union_[k];
    }
    return out;
}

// ---------------------------------------------------------------------------
// evaluation report

enum class CsiMode { pooled, per_sample_mean };

inline CsiMode parse_csi_mode(const std::string& s) {
    if (s == "pooled") return CsiMode::pooled;
    if (s == "per_sample_mean") return CsiMode::per_sample_mean;
    throw ConfigError("unknown csi mode: " + s);
}

struct ThresholdRow {
    double threshold = 0;
    Scores s;
    ContingencyTable table;
};

struct EvalReport {
    std::vector<ThresholdRow> rows;
    double miou = 0;
    std::vector<double> class_iou;

    double csi_at(double tau) const {
        for (const auto& r : rows)
            if (r.threshold == tau) return r.s.csi;
        throw ArgumentError("report: no row for threshold " + std::to_string(tau));
    }
};

// Streams per-sample tables; pooled scores come from merged counts,
// per-sample-mean scores average each sample's ratios.
class Evaluator {
public:
    Evaluator(LabelConfig cfg, CsiMode mode = CsiMode::pooled, AbsentClass absent = AbsentClass::count_as_one)
        : cfg_(std::move(cfg)), mode_(mode), absent_(absent), iou_(cfg_.n_classes()) {
        for (double t : cfg_.thresholds) pooled_.push_back({t});
        sums_.resize(cfg_.thresholds.size());
    }

    void add(std::span<const int> pred_class, const RainField& obs) {
        const auto obs_class = class_field(obs, cfg_);
        for (std::size_t i = 0; i < cfg_.thresholds.size(); ++i) {
            const auto t = contingency(pred_class, obs, cfg_.thresholds[i], cfg_);
            pooled_[i] = merge(pooled_[i], t);
            const auto s = scores(t);
            sums_[i].csi += s.csi;
            sums_[i].precision += s.precision;
            sums_[i].recall += s.recall;
            sums_[i].f1 += s.f1;
        }
        iou_ = merge(iou_, iou_table(pred_class, obs_class, cfg_.n_classes()));
        ++samples_;
    }

    EvalReport report() const {
        EvalReport r;
        for (std::size_t i = 0; i < pooled_.size(); ++i) {
            ThresholdRow row{pooled_[i].threshold, scores(pooled_[i]), pooled_[i]};
            if (mode_ == CsiMode::per_sample_mean && samples_) {
                const double n = static_cast<double>(samples_);
                row.s = {sums_[i].csi / n, sums_[i].precision / n, sums_[i].recall / n, sums_[i].f1 / n};
            }
            r.rows.push_back(row);
        }
        r.miou = iou_.miou(absent_);
        r.class_iou = iou_.ious();
        return r;
    }

    const ClassIoUTable& iou() const noexcept { return iou_; }

private:
    LabelConfig cfg_;
    CsiMode mode_;
    AbsentClass absent_;
    std::vector<ContingencyTable> pooled_;
    std::vector<Scores> sums_;
    ClassIoUTable iou_;
    std::size_t samples_ = 0;
};

inline nlohmann::json report_json(const EvalReport& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : r.rows)
        rows.push_back({{"threshold", row.threshold},
                        {"csi", row.s.csi},
                        {"f1", row.s.f1},
                        {"precision", row.s.precision},
                        {"recall", row.s.recall},
                        {"tp", row.table.tp},
                        {"fp", row.table.fp},
                        {"fn", row.table.fn},
                        {"tn", row.table.tn}});
    return {{"thresholds", rows}, {"miou", r.miou}, {"class_iou", r.class_iou}};
}

// CSV: one row per threshold, then a row "miou" carrying the mean IoU in the csi column.
inline void write_report_csv(const EvalReport& r, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing", path);
    out.precision(10);
    out << "threshold,csi,f1,precision,recall\n";
    for (const auto& row : r.rows)
        out << row.threshold << ',' << row.s.csi << ',' << row.s.f1 << ',' << row.s.precision << ',' << row.s.recall
            << '\n';
    out << "miou," << r.miou << ",,,\n";
}

inline void write_report_json(const EvalReport& r, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing", path);
    out << report_json(r).dump(2) << '\n';
}

} // namespace sslpdl
