// sslpdl command-line driver.
//
// Exit codes: 0 ok, 2 configuration/argument error, 3 data/I-O/checkpoint
// error, 4 numeric failure during training.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "sslpdl/sslpdl.hpp"

namespace fs = std::filesystem;
using namespace sslpdl;

namespace {

void write_json(const nlohmann::json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing", path);
    out << j.dump(2) << '\n';
}

std::string sibling(const std::string& path, const std::string& suffix) {
    fs::path p(path);
    return (p.parent_path() / (p.stem().string() + suffix)).string();
}

void print_losses(const RunReport& r) {
    for (std::size_t e = 0; e < r.epoch_losses.size(); ++e)
        std::cout << r.stage << " epoch " << e + 1 << " loss " << r.epoch_losses[e] << '\n';
    for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
}

void print_metrics(const EvalReport& r) {
    for (const auto& row : r.rows)
        std::cout << "tau " << row.threshold << "  csi " << row.s.csi << "  f1 " << row.s.f1 << "  precision "
                  << row.s.precision << "  recall " << row.s.recall << '\n';
    std::cout << "miou " << r.miou << '\n';
}

struct Options {
    std::string config, out, init = "scratch", model, split = "test", sweep, kind = "pdl", report, resume;
    int epochs = -1;
};

template <class T>
int cmd_pretrain(const Options& o) {
    const auto cfg = load_config(o.config);
    std::optional<nn::TrainState<T>> resume;
    std::vector<NormStats> norm;
    if (!o.resume.empty()) {
        nlohmann::json meta;
        resume = nn::load_checkpoint(nn::TinyNet<T>(cfg.arch), o.resume, &meta);
        norm = norm_from_json(meta.at("norm"));
    }
    auto data = prepare_data<T>(cfg, norm.empty() ? nullptr : &norm);
    std::optional<std::size_t> epochs;
    if (o.epochs >= 0) epochs = static_cast<std::size_t>(o.epochs);
    auto res = pretrain<T>(cfg, data.train, data.norm, std::move(resume), epochs);
    print_losses(res.report);
    nn::save_checkpoint(nn::TinyNet<T>(cfg.arch), res.state, o.out, checkpoint_meta(cfg, res.norm, "pretrain"));
    write_json(report_json(res.report), o.report.empty() ? sibling(o.out, ".report.json") : o.report);
    std::cout << "checkpoint " << o.out << '\n';
    return 0;
}

template <class T>
int cmd_finetune(const Options& o) {
    auto cfg = load_config(o.config);
    if (o.init != "scratch") cfg.finetune.init = o.init;
    std::optional<nn::TrainState<T>> init_state;
    std::vector<NormStats> norm;
    nn::TinyNet<T> net(cfg.arch);
    if (cfg.finetune.init != "scratch") {
        if (cfg.finetune.init == "pretrained")
            throw ConfigError("finetune: pass --init <checkpoint> to start from pre-trained weights");
        nlohmann::json meta;
        init_state = nn::load_checkpoint(net, cfg.finetune.init, &meta);
        norm = norm_from_json(meta.at("norm"));
    }
    auto data = prepare_data<T>(cfg, norm.empty() ? nullptr : &norm);
    std::optional<std::size_t> epochs;
    if (o.epochs >= 0) epochs = static_cast<std::size_t>(o.epochs);
    auto res = finetune<T>(cfg, data.train, data.norm, init_state ? &init_state->params : nullptr, std::nullopt, epochs);
    if (data.test.size()) res.report.metrics = evaluate(cfg, res.state.params, data.test);
    print_losses(res.report);
    if (res.report.metrics) print_metrics(*res.report.metrics);
    const std::string out = o.out.empty() ? "model.sslc" : o.out;
    nn::save_checkpoint(net, res.state, out, checkpoint_meta(cfg, res.norm, "finetune", &res.loss));
    write_json(report_json(res.report), o.report.empty() ? sibling(out, ".report.json") : o.report);
    std::cout << "model " << out << '\n';
    return 0;
}

template <class T>
int cmd_eval(const Options& o) {
    const auto ck = nn::read_checkpoint(o.model);
    if (!ck.meta.contains("config") || !ck.meta.contains("norm"))
        throw CheckpointError("checkpoint carries no experiment config: " + o.model);
    const auto cfg = parse_config(ck.meta.at("config"));
    const auto st = nn::restore_state(nn::TinyNet<T>(cfg.arch), ck);
    const auto norm = norm_from_json(ck.meta.at("norm"));
    const auto m = split_manifest(cfg, o.split);
    if (m.empty()) throw ArgumentError("eval: split '" + o.split + "' is empty");
    const auto data = build_dataset<T>(m, load_samples(m), norm, cfg);
    const auto rep = evaluate(cfg, st.params, data);
    print_metrics(rep);
    const std::string prefix = o.out.empty() ? sibling(o.model, "." + o.split) : o.out;
    write_report_csv(rep, prefix + ".csv");
    write_report_json(rep, prefix + ".json");
    std::cout << "report " << prefix << ".csv\n";
    return 0;
}

template <class T>
int cmd_ablate(const Options& o) {
    const auto base = load_config(o.config);
    const auto sweep = load_sweep(o.sweep);
    const auto rows = ablate<T>(nlohmann::json(base), sweep, [](std::size_t done, std::size_t total, const AblationRow& r) {
        std::cout << "[" << done << "/" << total << "] " << r.cell.dump() << " seed " << r.seed << " -> "
                  << r.status << '\n'
                  << std::flush;
    });
    write_ablation_csv(rows, sweep, base.label.thresholds, o.out);
    std::cout << "results " << o.out << '\n';
    return 0;
}

int cmd_gen(const Options& o) {
    const auto cfg = load_config(o.config);
    const auto m = gen_dataset(cfg.synth, cfg.gen.counts, cfg.gen.out_dir);
    std::cout << "generated " << m.size() << " samples, manifest "
              << (fs::path(cfg.gen.out_dir) / "manifest.json").string() << '\n';
    return 0;
}

int cmd_label(const Options& o) {
    const auto cfg = load_config(o.config);
    const auto kind = parse_label_kind(o.kind);
    const auto m = training_manifest(cfg);
    const std::string out_dir = o.out.empty() ? (fs::path(cfg.gen.out_dir) / ("labels_" + to_string(kind))).string() : o.out;
    fs::create_directories(out_dir);
    std::vector<LabelTensor> onehot, dens;
    for (const auto& e : m.entries) {
        const auto s = load_sample(e, m);
        onehot.push_back(label_field(s.truth, cfg.label, LabelKind::one_hot));
        dens.push_back(label_field(s.truth, cfg.label, LabelKind::density));
        const auto& t = kind == LabelKind::one_hot ? onehot.back()
                        : kind == LabelKind::density ? dens.back()
                                                     : label_field(s.truth, cfg.label, kind);
        GridField g(t.n_classes, t.height, t.width);
        for (std::size_t i = 0; i < t.probs.size(); ++i) g.values[i] = static_cast<float>(t.probs[i]);
        for (std::size_t k = 0; k < t.n_classes; ++k) g.var_names[k] = "class" + std::to_string(k);
        write_grid(g, (fs::path(out_dir) / (e.sample_id + ".sslg")).string());
    }
    const auto path = (fs::path(out_dir) / "proportions.csv").string();
    write_proportions_csv(proportions(onehot), proportions(dens), path);
    std::cout << "labelled " << m.size() << " samples into " << out_dir << ", proportions " << path << '\n';
    return 0;
}

template <class T>
int dispatch(const std::string& cmd, const Options& o) {
    if (cmd == "pretrain") return cmd_pretrain<T>(o);
    if (cmd == "finetune") return cmd_finetune<T>(o);
    if (cmd == "eval") return cmd_eval<T>(o);
    if (cmd == "ablate") return cmd_ablate<T>(o);
    if (cmd == "gen") return cmd_gen(o);
    return cmd_label(o);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Masked self-supervised pre-training and density-labelled rainfall segmentation"};
    app.require_subcommand(1);
    Options o;

    auto* gen = app.add_subcommand("gen", "generate the synthetic dataset");
    gen->add_option("--config", o.config, "experiment config")->required();

    auto* label = app.add_subcommand("label", "write label tensors and class proportions for the training split");
    label->add_option("--config", o.config, "experiment config")->required();
    label->add_option("--kind", o.kind, "onehot|pdl|smooth")->check(CLI::IsMember({"onehot", "pdl", "smooth"}));
    label->add_option("--out", o.out, "output directory");

    auto* pre = app.add_subcommand("pretrain", "masked reconstruction pre-training");
    pre->add_option("--config", o.config, "experiment config")->required();
    pre->add_option("--out", o.out, "checkpoint path")->required();
    pre->add_option("--resume", o.resume, "continue from this checkpoint");
    pre->add_option("--epochs", o.epochs, "epochs to run (default from config)");
    pre->add_option("--report", o.report, "run report JSON path");

    auto* ft = app.add_subcommand("finetune", "segmentation fine-tuning");
    ft->add_option("--config", o.config, "experiment config")->required();
    ft->add_option("--init", o.init, "pre-trained checkpoint or 'scratch'");
    ft->add_option("--out", o.out, "model checkpoint path (default model.sslc)");
    ft->add_option("--epochs", o.epochs, "epochs to run (default from config)");
    ft->add_option("--report", o.report, "run report JSON path");

    auto* ev = app.add_subcommand("eval", "evaluate a fine-tuned model");
    ev->add_option("--model", o.model, "model checkpoint")->required();
    ev->add_option("--split", o.split, "manifest split");
    ev->add_option("--out", o.out, "report path prefix (writes .csv and .json)");

    auto* ab = app.add_subcommand("ablate", "grid sweep");
    ab->add_option("--config", o.config, "base experiment config")->required();
    ab->add_option("--sweep", o.sweep, "sweep JSON")->required();
    ab->add_option("--out", o.out, "results CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    const std::string cmd = app.get_subcommands().front()->get_name();

    try {
        const char* prec = std::getenv("SSLPDL_PRECISION");
        const std::string precision = prec ? prec : "f32";
        if (precision == "f32") return dispatch<float>(cmd, o);
        if (precision == "f64") return dispatch<double>(cmd, o);
        throw ConfigError("SSLPDL_PRECISION must be f32 or f64, got '" + precision + "'");
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return 4;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
