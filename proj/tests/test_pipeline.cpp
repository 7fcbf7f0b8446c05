#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "sslpdl/sslpdl.hpp"
#include "test_support.hpp"

using namespace sslpdl;
using testing_support::TempDir;

namespace {

nlohmann::json tiny_config_json(const std::string& out_dir) {
    return {{"seed", 11},
            {"synth", {{"height", 32}, {"width", 32}, {"n_vars", 2}, {"rain_blob_rate", 2.0}}},
            {"gen", {{"out_dir", out_dir}, {"counts", {{"train", 8}, {"val", 0}, {"test", 4}}}}},
            {"arch", {{"widths", {4, 4, 6, 6}}, {"decoder_width", 4}}},
            {"patch", {{"q", 2}, {"p", 8}}},
            {"pretrain", {{"mask_ratio", 0.5}, {"epochs", 2}, {"batch", 4}}},
            {"finetune", {{"mask_ratio", 0.25}, {"epochs", 2}, {"batch", 4}}}};
}

class PipelineTest : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = new TempDir("pipeline");
        const auto cfg = parse_config(tiny_config_json(dir_->file("data")));
        gen_dataset(cfg.synth, cfg.gen.counts, cfg.gen.out_dir);
    }
    static void TearDownTestSuite() {
        delete dir_;
        dir_ = nullptr;
    }

    static nlohmann::json json() { return tiny_config_json(dir_->file("data")); }
    static ExperimentConfig config() { return parse_config(json()); }

    static TempDir* dir_;
};

TempDir* PipelineTest::dir_ = nullptr;

template <class T>
bool same_params(const nn::ParamStore<T>& a, const nn::ParamStore<T>& b) {
    return a.values == b.values;
}

} // namespace

TEST(PipelineConfig, DefaultsValidate) {
    const auto c = parse_config(nlohmann::json::object());
    EXPECT_EQ(c.arch.n_classes, c.label.n_classes());
    EXPECT_EQ(c.arch.n_vars, c.synth.n_vars);
    EXPECT_EQ(c.arch.height, c.synth.height);
    EXPECT_DOUBLE_EQ(c.pretrain.mask_ratio, 0.75);
    EXPECT_DOUBLE_EQ(c.finetune.mask_ratio, 0.25);
}

TEST(PipelineConfig, HashIgnoresKeyOrderButNotValues) {
    const auto a = parse_config(nlohmann::json::parse(R"({"seed": 3, "loss": {"beta": 0.5}})"));
    const auto b = parse_config(nlohmann::json::parse(R"({"loss": {"beta": 0.5}, "seed": 3})"));
    const auto c = parse_config(nlohmann::json::parse(R"({"loss": {"beta": 0.5}, "seed": 4})"));
    EXPECT_EQ(config_hash(a), config_hash(b));
    EXPECT_NE(config_hash(a), config_hash(c));
}

TEST(PipelineConfig, JsonRoundTrip) {
    const auto a = parse_config(tiny_config_json("somewhere"));
    const auto b = parse_config(nlohmann::json(a));
    EXPECT_EQ(nlohmann::json(a).dump(), nlohmann::json(b).dump());
    EXPECT_EQ(a.arch, b.arch);
}

TEST(PipelineConfig, InvalidValuesThrow) {
    EXPECT_THROW(parse_config({{"pretrain", {{"mask_ratio", 1.5}}}}), ConfigError);
    EXPECT_THROW(parse_config({{"finetune", {{"batch", 0}}}}), ConfigError);
    EXPECT_THROW(parse_config({{"arch", {{"n_classes", 5}}}}), ConfigError);
    EXPECT_THROW(parse_config({{"seed", "abc"}}), ConfigError);
    EXPECT_THROW(parse_config({{"eval", {{"absent_class_iou", "maybe"}}}}), ConfigError);
    EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}

TEST(PipelineConfig, LoadResolvesPathsAgainstConfigDir) {
    TempDir d("cfgload");
    std::ofstream(d.file("c.json")) << R"({"gen": {"out_dir": "gen_here"}})";
    const auto c = load_config(d.file("c.json"));
    EXPECT_EQ(std::filesystem::path(c.gen.out_dir), d.path() / "gen_here");
    EXPECT_EQ(std::filesystem::path(c.manifest_path()), d.path() / "gen_here" / "manifest.json");
}

TEST_F(PipelineTest, PrepareDataShapes) {
    const auto cfg = config();
    const auto d = prepare_data<double>(cfg);
    EXPECT_EQ(d.train.size(), 8u);
    EXPECT_EQ(d.test.size(), 4u);
    ASSERT_EQ(d.norm.size(), 2u);
    const auto& x = d.train.x.front();
    EXPECT_EQ(x.c, 2u);
    EXPECT_EQ(x.h, 32u);
    EXPECT_EQ(x.w, 32u);
    EXPECT_EQ(d.train.target.front().n_classes, 3u);
}

TEST_F(PipelineTest, GridMismatchIsConfigError) {
    auto j = json();
    j["arch"]["height"] = 64;
    EXPECT_THROW(prepare_data<double>(parse_config(j)), ConfigError);
}

TEST_F(PipelineTest, PretrainIsDeterministic) {
    const auto cfg = config();
    const auto d = prepare_data<double>(cfg);
    const auto a = pretrain<double>(cfg, d.train, d.norm);
    const auto b = pretrain<double>(cfg, d.train, d.norm);
    EXPECT_TRUE(same_params(a.state.params, b.state.params));
    EXPECT_EQ(a.report.epoch_losses, b.report.epoch_losses);
    EXPECT_EQ(a.report.epoch_losses.size(), 2u);
    EXPECT_EQ(a.report.steps, 4u);
    EXPECT_TRUE(a.report.warnings.empty());
    EXPECT_EQ(report_json(a.report, false).dump(), report_json(b.report, false).dump());
}

TEST_F(PipelineTest, SeedChangesTraining) {
    auto j = json();
    const auto d = prepare_data<double>(parse_config(j));
    const auto a = pretrain<double>(parse_config(j), d.train, d.norm);
    j["seed"] = 12;
    const auto b = pretrain<double>(parse_config(j), d.train, d.norm);
    EXPECT_FALSE(same_params(a.state.params, b.state.params));
}

TEST_F(PipelineTest, PretrainResumeIsBitExact) {
    const auto cfg = config();
    const auto d = prepare_data<double>(cfg);
    const auto full = pretrain<double>(cfg, d.train, d.norm);

    const auto half = pretrain<double>(cfg, d.train, d.norm, std::nullopt, 1);
    const auto path = dir_->file("half.sslc");
    nn::TinyNet<double> net(cfg.arch);
    nn::save_checkpoint(net, half.state, path, checkpoint_meta(cfg, half.norm, "pretrain"));
    nlohmann::json meta;
    auto st = nn::load_checkpoint(net, path, &meta);
    EXPECT_EQ(st.epoch, 1u);
    const auto rest = pretrain<double>(cfg, d.train, norm_from_json(meta.at("norm")), std::move(st), 1);
    EXPECT_TRUE(same_params(full.state.params, rest.state.params));
    EXPECT_EQ(full.state.m, rest.state.m);
    EXPECT_EQ(full.state.v, rest.state.v);
    ASSERT_EQ(rest.report.epoch_losses.size(), 1u);
    EXPECT_EQ(full.report.epoch_losses[1], rest.report.epoch_losses[0]);
}

TEST_F(PipelineTest, FinetuneResumeIsBitExact) {
    const auto cfg = config();
    const auto d = prepare_data<double>(cfg);
    const auto full = finetune<double>(cfg, d.train, d.norm, nullptr);
    auto half = finetune<double>(cfg, d.train, d.norm, nullptr, std::nullopt, 1);
    const auto rest = finetune<double>(cfg, d.train, d.norm, nullptr, std::move(half.state), 1);
    EXPECT_TRUE(same_params(full.state.params, rest.state.params));
    EXPECT_EQ(full.report.epoch_losses[1], rest.report.epoch_losses[0]);
}

TEST_F(PipelineTest, ZeroPretrainMaskWarns) {
    auto j = json();
    j["pretrain"]["mask_ratio"] = 0.0;
    const auto cfg = parse_config(j);
    const auto d = prepare_data<double>(cfg);
    const auto r = pretrain<double>(cfg, d.train, d.norm);
    ASSERT_EQ(r.report.warnings.size(), 1u);
    for (double l : r.report.epoch_losses) EXPECT_EQ(l, 0.0);
}

TEST_F(PipelineTest, FinetuneTransfersEncoderOnly) {
    const auto cfg = config();
    const auto d = prepare_data<double>(cfg);
    const auto pre = pretrain<double>(cfg, d.train, d.norm);
    const auto ft = finetune<double>(cfg, d.train, d.norm, &pre.state.params, std::nullopt, 0);
    const auto scratch = finetune<double>(cfg, d.train, d.norm, nullptr, std::nullopt, 0);
    for (std::size_t i = 0; i < ft.state.params.size(); ++i) {
        const auto& name = ft.state.params.info[i].name;
        const bool encoder = name.rfind("enc.", 0) == 0 || name.rfind("embed.", 0) == 0;
        if (encoder)
            EXPECT_EQ(ft.state.params.values[i], pre.state.params.values[pre.state.params.index_of(name)]) << name;
        else
            EXPECT_EQ(ft.state.params.values[i], scratch.state.params.values[i]) << name;
    }
}

TEST_F(PipelineTest, FreezeEncoderKeepsEncoderFixed) {
    auto j = json();
    j["finetune"]["freeze_encoder"] = true;
    const auto cfg = parse_config(j);
    const auto d = prepare_data<double>(cfg);
    const auto before = finetune<double>(cfg, d.train, d.norm, nullptr, std::nullopt, 0);
    const auto after = finetune<double>(cfg, d.train, d.norm, nullptr);
    bool head_moved = false;
    for (std::size_t i = 0; i < after.state.params.size(); ++i) {
        const auto& name = after.state.params.info[i].name;
        if (name.rfind("enc.", 0) == 0 || name.rfind("embed.", 0) == 0)
            EXPECT_EQ(after.state.params.values[i], before.state.params.values[i]) << name;
        else if (after.state.params.values[i] != before.state.params.values[i])
            head_moved = true;
    }
    EXPECT_TRUE(head_moved);
}

TEST_F(PipelineTest, ConstantNoRainPredictorScoresZeroCsi) {
    const auto cfg = config();
    const auto d = prepare_data<double>(cfg);
    nn::TinyNet<double> net(cfg.arch);
    auto p = net.init_params(1);
    for (const char* n : {"seg.out.w", "seg.out.b"}) {
        auto& v = p.values[p.index_of(n)];
        std::fill(v.begin(), v.end(), 0.0);
    }
    const auto rep = evaluate(cfg, p, d.test);
    for (const auto& row : rep.rows) {
        EXPECT_EQ(row.s.csi, 0.0) << row.threshold;
        EXPECT_EQ(row.s.recall, 0.0) << row.threshold;
    }
    EXPECT_LT(rep.miou, 1.0);
}

TEST_F(PipelineTest, EvaluateLeavesParamsAndIsRepeatable) {
    const auto cfg = config();
    const auto d = prepare_data<double>(cfg);
    const auto ft = finetune<double>(cfg, d.train, d.norm, nullptr);
    const auto copy = ft.state.params;
    const auto a = evaluate(cfg, ft.state.params, d.test);
    const auto b = evaluate(cfg, ft.state.params, d.test);
    EXPECT_TRUE(same_params(copy, ft.state.params));
    EXPECT_EQ(report_json(a).dump(), report_json(b).dump());
    EXPECT_GE(a.miou, 0.0);
    EXPECT_LE(a.miou, 1.0);
}

TEST_F(PipelineTest, InverseFrequencyResolvedFromTrainingLabels) {
    auto j = json();
    j["loss"] = {{"class_weights", "inverse_frequency"}};
    const auto cfg = parse_config(j);
    const auto d = prepare_data<double>(cfg);
    const auto l = resolve_loss(cfg, d.train);
    EXPECT_FALSE(l.inverse_frequency);
    ASSERT_EQ(l.class_weights.size(), 3u);
    double mean = 0;
    for (double w : l.class_weights) mean += w / 3.0;
    EXPECT_NEAR(mean, 1.0, 1e-9);
    const auto prop = proportions(d.train.onehot);
    for (std::size_t a = 0; a < 3; ++a)
        for (std::size_t b = 0; b < 3; ++b)
            if (prop[a] < prop[b]) EXPECT_GT(l.class_weights[a], l.class_weights[b]);
}

TEST_F(PipelineTest, MissingFileIsIoError) {
    TempDir d("missing");
    auto j = tiny_config_json(d.file("data"));
    const auto cfg = parse_config(j);
    gen_dataset(cfg.synth, cfg.gen.counts, cfg.gen.out_dir);
    std::filesystem::remove(d.file("data/s000003_truth.sslg"));
    EXPECT_THROW(prepare_data<double>(cfg), IoError);
    j["gen"]["out_dir"] = d.file("nowhere");
    EXPECT_THROW(prepare_data<double>(parse_config(j)), DataError);
}

TEST(Ablation, SetPathCreatesNestedObjects) {
    nlohmann::json j = {{"loss", {{"beta", 1.0}}}};
    set_path(j, "loss.beta", 0.25);
    set_path(j, "a.b.c", 3);
    set_path(j, "seed", 5);
    EXPECT_EQ(j["loss"]["beta"], 0.25);
    EXPECT_EQ(j["a"]["b"]["c"], 3);
    EXPECT_EQ(j["seed"], 5);
}

TEST(Ablation, ParseSweepForms) {
    const auto s = parse_sweep(nlohmann::json::parse(R"({"grid": {"beta": [0.25, 1], "rho_pre": [0, 0.5, 0.75]}, "seeds": [1, 2]})"));
    ASSERT_EQ(s.axes.size(), 2u);
    EXPECT_EQ(s.axes[0].key, "loss.beta");
    EXPECT_EQ(s.axes[1].key, "pretrain.mask_ratio");
    EXPECT_EQ(s.cell_count(), 6u);
    EXPECT_EQ(s.replicate_seeds, (std::vector<std::uint64_t>{1, 2}));
    const auto c = cell_params(s, 4);
    EXPECT_EQ(c["loss.beta"], 1);
    EXPECT_EQ(c["pretrain.mask_ratio"], 0.5);

    const auto a = parse_sweep(nlohmann::json::parse(R"({"grid": [{"key": "seed", "values": [1]}, {"key": "alpha", "values": [0, 0.1]}]})"));
    EXPECT_EQ(a.axes[0].key, "seed");
    EXPECT_EQ(a.axes[1].key, "label.alpha");

    EXPECT_THROW(parse_sweep(nlohmann::json::parse(R"({"grid": {}})")), ConfigError);
    EXPECT_THROW(parse_sweep(nlohmann::json::parse(R"({"grid": {"beta": []}})")), ConfigError);
    EXPECT_THROW(parse_sweep(nlohmann::json::parse(R"({"axes": 1})")), ConfigError);
}

TEST(Ablation, CellSeedsAreDistinctAndStable) {
    const nlohmann::json a = {{"loss.beta", 0.25}}, b = {{"loss.beta", 1.0}};
    EXPECT_EQ(cell_seed(1, a), cell_seed(1, a));
    EXPECT_NE(cell_seed(1, a), cell_seed(1, b));
    EXPECT_NE(cell_seed(1, a), cell_seed(2, a));
}

TEST_F(PipelineTest, AblateRowsAndCsv) {
    auto j = json();
    j["pretrain"]["epochs"] = 1;
    j["finetune"]["epochs"] = 1;
    const auto sweep = parse_sweep(nlohmann::json::parse(
        R"({"grid": [{"key": "beta", "values": [0.25, 7]}, {"key": "init", "values": ["scratch", "pretrained"]}], "seeds": [1, 2]})"));
    std::size_t calls = 0;
    const auto rows = ablate<double>(j, sweep, [&](std::size_t done, std::size_t total, const AblationRow&) {
        ++calls;
        EXPECT_EQ(done, calls);
        EXPECT_EQ(total, 8u);
    });
    ASSERT_EQ(rows.size(), 8u);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const bool bad_beta = rows[i].cell["loss.beta"] == 7;
        EXPECT_EQ(rows[i].status == "ok", !bad_beta) << rows[i].status;
        if (!bad_beta) EXPECT_EQ(rows[i].csi.size(), 2u);
    }
    EXPECT_NE(rows[0].seed, rows[1].seed);

    const auto path = dir_->file("ablate.csv");
    write_ablation_csv(rows, sweep, config().label.thresholds, path);
    std::ifstream in(path);
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(in, line)) lines.push_back(line);
    ASSERT_EQ(lines.size(), 9u);
    EXPECT_EQ(lines[0],
              "loss.beta,finetune.init,replicate,seed,csi_0.1,csi_10,miou,first_loss,final_loss,runtime_s,status");
    EXPECT_EQ(lines[1].rfind("0.25,scratch,0,", 0), 0u) << lines[1];
    EXPECT_NE(lines[1].find(",ok"), std::string::npos);
    EXPECT_NE(lines[8].find("error"), std::string::npos);

    const auto again = ablate<double>(j, sweep);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        EXPECT_EQ(rows[i].seed, again[i].seed);
        EXPECT_EQ(rows[i].csi, again[i].csi);
        EXPECT_EQ(rows[i].miou, again[i].miou);
    }
}
