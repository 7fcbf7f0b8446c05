#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "layer_checks.hpp"
#include "test_support.hpp"

using namespace sslpdl;
using namespace sslpdl::nn;
using layer_checks::random_tensor;
using layer_checks::small_arch;

namespace {

ParamStore<double> copy_by_name(const TinyNet<double>& to, const ParamStore<double>& from) {
    auto p = to.init_params(0);
    for (std::size_t i = 0; i < p.size(); ++i) p.values[i] = from.values[from.index_of(p.info[i].name)];
    return p;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

} // namespace

TEST(Init, DeterministicWithZeroOffsets) {
    TinyNet<double> net(ArchConfig{});
    const auto a = net.init_params(3), b = net.init_params(3), c = net.init_params(4);
    EXPECT_EQ(a.values, b.values);
    EXPECT_NE(a.values, c.values);
    bool saw_offset = false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a.info[i].kind == ParamKind::offset_weight || a.info[i].kind == ParamKind::offset_bias) {
            saw_offset = true;
            for (double v : a.values[i]) EXPECT_EQ(v, 0.0);
        }
    EXPECT_TRUE(saw_offset);
}

TEST(Init, DefaultParameterCount) {
    TinyNet<float> net(ArchConfig{});
    EXPECT_EQ(net.init_params(0).numel(), 204358u);
}

TEST(Init, WeightStdMatchesFanIn) {
    TinyNet<double> net(ArchConfig{});
    const auto probe = net.init_params(0);
    for (const char* name : {"enc.s1.agg.w", "enc.s3.ffn1.w", "seg.fuse.w"}) {
        const auto i = probe.index_of(name);
        double s2 = 0;
        std::size_t n = 0;
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            const auto p = net.init_params(seed);
            for (double v : p.values[i]) s2 += v * v, ++n;
        }
        const double target = 1.0 / std::sqrt(static_cast<double>(probe.info[i].fan_in));
        EXPECT_NEAR(std::sqrt(s2 / n), target, 0.2 * target) << name;
    }
}

TEST(Encode, PyramidStrides) {
    ArchConfig a;
    a.n_vars = 16;
    a.height = 224;
    a.width = 128;
    TinyNet<float> net(a);
    const auto z = net.encode(net.init_params(1), Tensor<float>(16, 224, 128));
    ASSERT_EQ(z.z.size(), 4u);
    EXPECT_EQ(z.z[0].h, 56u);
    EXPECT_EQ(z.z[0].w, 32u);
    EXPECT_EQ(z.z[3].h, 7u);
    EXPECT_EQ(z.z[3].w, 4u);
    EXPECT_EQ(z.z[3].c, 64u);
    EXPECT_THROW(net.encode(net.init_params(1), Tensor<float>(16, 96, 128)), ArgumentError);
}

TEST(Encode, BatchEquivariance) {
    const auto arch = small_arch();
    TinyNet<double> net(arch);
    const auto p = net.init_params(2);
    std::mt19937_64 eng(1);
    const auto x1 = random_tensor(2, 32, 32, eng), x2 = random_tensor(2, 32, 32, eng);
    const std::vector<Tensor<double>> batch{x1, x2}, swapped{x2, x1};
    std::vector<FeaturePyramid<double>> out, out_sw;
    for (const auto& x : batch) out.push_back(net.encode(p, x));
    for (const auto& x : swapped) out_sw.push_back(net.encode(p, x));
    EXPECT_EQ(out[0].z[3], out_sw[1].z[3]);
    EXPECT_EQ(out[1].z[3], out_sw[0].z[3]);
}

TEST(Encode, ZeroInputGivesChannelConstants) {
    const auto arch = small_arch();
    TinyNet<double> net(arch);
    auto p = net.init_params(5);
    std::fill(p.values[p.index_of("embed.pe")].begin(), p.values[p.index_of("embed.pe")].end(), 0.0);
    std::mt19937_64 eng(2);
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p.info[i].kind == ParamKind::bias) p.values[i] = layer_checks::uniform(p.values[i].size(), eng);
    const auto z = net.encode(p, Tensor<double>(2, 32, 32));
    for (const auto& t : z.z)
        for (std::size_t c = 0; c < t.c; ++c)
            for (std::size_t q = 1; q < t.plane(); ++q) EXPECT_NEAR(t.channel(c)[q], t.channel(c)[0], 1e-12);
}

TEST(Encode, TranslationCovariantWithoutPositionalEmbedding) {
    auto arch = small_arch();
    arch.height = arch.width = 64;
    arch.pos_embed = false;
    TinyNet<double> net(arch);
    ParamStore<double> p;
    layer_checks::randomize_all(net, p, 8);
    std::mt19937_64 eng(3);
    const auto x = random_tensor(2, 64, 64, eng);
    Tensor<double> xs(2, 64, 64);
    for (std::size_t k = 0; k < 2; ++k)
        for (std::size_t r = 0; r < 64; ++r)
            for (std::size_t c = 0; c < 64; ++c) xs.at(k, r, c) = x.at(k, r, std::min<std::size_t>(c + 4, 63));
    const auto z = net.encode(p, x).z[0], zs = net.encode(p, xs).z[0];
    for (std::size_t k = 0; k < z.c; ++k)
        for (std::size_t r = 3; r < z.h - 3; ++r)
            for (std::size_t c = 3; c < z.w - 4; ++c) EXPECT_NEAR(zs.at(k, r, c), z.at(k, r, c + 1), 1e-12);
}

TEST(Decode, ShapesAndSoftmax) {
    const auto arch = small_arch();
    TinyNet<double> net(arch);
    const auto p = net.init_params(1);
    std::mt19937_64 eng(4);
    const auto z = net.encode(p, random_tensor(2, 32, 32, eng));
    const auto rec = net.decode_rec(p, z);
    const auto seg = net.decode_seg(p, z);
    EXPECT_EQ(rec.c, 2u);
    EXPECT_EQ(rec.h, 32u);
    EXPECT_EQ(seg.c, 3u);
    EXPECT_EQ(seg.w, 32u);
    for (std::size_t q = 0; q < seg.plane(); ++q) {
        double mx = -1e300, s = 0;
        for (std::size_t c = 0; c < 3; ++c) mx = std::max(mx, seg.channel(c)[q]);
        double e[3];
        for (std::size_t c = 0; c < 3; ++c) s += e[c] = std::exp(seg.channel(c)[q] - mx);
        EXPECT_NEAR(e[0] / s + e[1] / s + e[2] / s, 1.0, 1e-12);
    }
}

TEST(Decode, HeadIsLinearInOutputWeights) {
    const auto arch = small_arch();
    TinyNet<double> net(arch);
    auto p = net.init_params(1);
    std::mt19937_64 eng(5);
    auto& b = p.values[p.index_of("rec.out.b")];
    b = layer_checks::uniform(b.size(), eng);
    const auto z = net.encode(p, random_tensor(2, 32, 32, eng));
    const auto y1 = net.decode_rec(p, z);
    auto bias_only = p;
    std::fill(bias_only.values[p.index_of("rec.out.w")].begin(), bias_only.values[p.index_of("rec.out.w")].end(), 0.0);
    const auto y0 = net.decode_rec(bias_only, z);
    for (auto& w : p.values[p.index_of("rec.out.w")]) w *= 2;
    const auto y2 = net.decode_rec(p, z);
    for (std::size_t i = 0; i < y1.size(); ++i)
        EXPECT_NEAR(y2.data[i] - y0.data[i], 2 * (y1.data[i] - y0.data[i]), 1e-12);
}

TEST(NetworkGradCheck, ReconstructionHead) {
    const auto r = layer_checks::rec_head(13);
    EXPECT_LT(r.max_rel_err, 1e-6) << "analytic " << r.worst_analytic << " numeric " << r.worst_numeric;
    EXPECT_LT(layer_checks::rec_loss(14).max_rel_err, 1e-6);
}

TEST(NetworkGradCheck, ReconstructionPath) {
    const auto r = layer_checks::network(Head::rec, {"rec.", "enc.", "embed."}, 11);
    EXPECT_LT(r.max_rel_err, 1e-4) << "analytic " << r.worst_analytic << " numeric " << r.worst_numeric;
    EXPECT_GE(r.checked, 100u);
}

TEST(NetworkGradCheck, SegmentationPath) {
    const auto r = layer_checks::network(Head::seg, {"seg.", "enc."}, 12);
    EXPECT_LT(r.max_rel_err, 1e-4) << "analytic " << r.worst_analytic << " numeric " << r.worst_numeric;
}

TEST(NetworkGradCheck, LinearTokenEmbedding) {
    auto arch = small_arch();
    arch.token_embed = TokenEmbed::linear;
    TinyNet<double> net(arch);
    auto p = net.init_params(3);
    std::mt19937_64 eng(6);
    const auto x = random_tensor(2, 32, 32, eng);
    const auto r = random_tensor(2, 32, 32, eng);
    auto loss = [&](Grads<double>* g) {
        EncodeCache<double> ec;
        DecodeCache<double> dc;
        const auto y = net.decode_rec(p, net.encode(p, x, &ec), &dc);
        if (g) net.encode_backward(p, ec, net.decode_backward(p, Head::rec, dc, r, *g), *g);
        return layer_checks::dot(r.data, y.data);
    };
    Grads<double> g(p);
    loss(&g);
    for (const char* name : {"embed.w", "embed.b", "embed.pe"}) {
        const auto i = p.index_of(name);
        const auto res = grad_check(p.values[i], g.values[i], [&] { return loss(nullptr); }, 40, 1e-5, 1);
        EXPECT_LT(res.max_rel_err, 1e-6) << name;
    }
}

TEST(OffsetDegeneracy, FrozenZeroOffsetsMatchPlainConvolutionNet) {
    for (const char* pattern : {"AABA", "AAAA"}) {
        auto a = small_arch();
        a.pattern = pattern;
        auto b = a;
        b.pattern = "BBBB";
        TinyNet<double> na(a), nb(b);
        auto pa = na.init_params(9);
        std::mt19937_64 eng(7);
        for (std::size_t i = 0; i < pa.size(); ++i)
            if (pa.info[i].kind == ParamKind::bias) pa.values[i] = layer_checks::uniform(pa.values[i].size(), eng);
        const auto pb = copy_by_name(nb, pa);
        const auto x = random_tensor(2, 32, 32, eng);
        const auto za = na.encode(pa, x), zb = nb.encode(pb, x);
        for (std::size_t l = 0; l < 4; ++l) EXPECT_LT(max_abs_diff(za.z[l], zb.z[l]), 1e-6);
    }
}

TEST(OffsetDegeneracy, FreezeKeepsOffsetsAtZero) {
    const auto arch = small_arch();
    TinyNet<double> net(arch);
    TrainState<double> st(net.init_params(1), 1);
    net.freeze_offsets(st.params);
    std::mt19937_64 eng(8);
    const auto x = random_tensor(2, 32, 32, eng);
    OptimConfig oc;
    const auto mask = make_mask(arch.patch.n_tokens(2, 32, 32), 0.5, 1);
    for (int k = 0; k < 3; ++k)
        train_step(st, [&](const ParamStore<double>& p, Grads<double>& g) {
            EncodeCache<double> ec;
            DecodeCache<double> dc;
            auto xm = x;
            apply_mask_values<double>(std::span<double>(xm.data), 2, 32, 32, mask, arch.patch);
            const auto y = net.decode_rec(p, net.encode(p, xm, &ec), &dc);
            Tensor<double> dy;
            const double l = rec_loss(y, x, mask, arch.patch, &dy);
            net.encode_backward(p, ec, net.decode_backward(p, Head::rec, dc, dy, g), g);
            return l;
        }, oc);
    for (std::size_t i = 0; i < st.params.size(); ++i)
        if (st.params.info[i].kind == ParamKind::offset_weight || st.params.info[i].kind == ParamKind::offset_bias)
            for (double v : st.params.values[i]) EXPECT_EQ(v, 0.0);
}

// ---------------------------------------------------------------------------
// optimizer

namespace {

ParamStore<double> scalar_store(double v) {
    ParamStore<double> p;
    p.add("p", {1}, ParamKind::weight);
    p.values[0][0] = v;
    return p;
}

auto half_square = [](const ParamStore<double>& p, Grads<double>& g) {
    g.values[0][0] = p.values[0][0];
    return 0.5 * p.values[0][0] * p.values[0][0];
};

} // namespace

TEST(Optim, AdamFirstStepMovesByLearningRate) {
    TrainState<double> st(scalar_store(1.0), 0);
    OptimConfig oc;
    oc.lr = 0.1;
    EXPECT_DOUBLE_EQ(train_step(st, half_square, oc), 0.5);
    EXPECT_NEAR(st.params.values[0][0], 0.9, 1e-6);
    EXPECT_EQ(st.step, 1u);
}

TEST(Optim, ZeroLearningRateLeavesParams) {
    TrainState<double> st(scalar_store(1.0), 0);
    OptimConfig oc;
    oc.lr = 0;
    train_step(st, half_square, oc);
    EXPECT_EQ(st.params.values[0][0], 1.0);
}

TEST(Optim, SgdMomentum) {
    TrainState<double> st(scalar_store(1.0), 0);
    OptimConfig oc;
    oc.kind = OptimKind::sgd;
    oc.lr = 0.1;
    oc.momentum = 0.5;
    train_step(st, half_square, oc);
    EXPECT_DOUBLE_EQ(st.params.values[0][0], 0.9);
    train_step(st, half_square, oc);
    EXPECT_DOUBLE_EQ(st.params.values[0][0], 0.9 - 0.1 * (0.5 * 1.0 + 0.9));
}

TEST(Optim, DeterministicAndFrozen) {
    TrainState<double> a(scalar_store(2.0), 0), b(scalar_store(2.0), 0);
    OptimConfig oc;
    for (int i = 0; i < 5; ++i) {
        train_step(a, half_square, oc);
        train_step(b, half_square, oc);
    }
    EXPECT_EQ(a.params.values, b.params.values);
    EXPECT_EQ(a.m, b.m);
    TrainState<double> f(scalar_store(2.0), 0);
    f.params.trainable[0] = false;
    train_step(f, half_square, oc);
    EXPECT_EQ(f.params.values[0][0], 2.0);
}

TEST(Optim, NonFiniteLossReportsStep) {
    TrainState<double> st(scalar_store(1.0), 0);
    OptimConfig oc;
    train_step(st, half_square, oc);
    try {
        train_step(st, [](const ParamStore<double>&, Grads<double>&) { return std::nan(""); }, oc);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find('1'), std::string::npos);
    }
}

// ---------------------------------------------------------------------------
// checkpoints

TEST(Checkpoint, RoundTripIsBitExact) {
    testing_support::TempDir dir("ckpt");
    const auto arch = small_arch();
    TinyNet<double> net(arch);
    TrainState<double> st(net.init_params(4), 4);
    std::mt19937_64 eng(1);
    for (auto& m : st.m) m = layer_checks::uniform(m.size(), eng);
    for (auto& v : st.v) v = layer_checks::uniform(v.size(), eng, 0, 1);
    st.step = 17;
    st.epoch = 3;
    save_checkpoint(net, st, dir.file("a.sslc"), {{"note", "x"}});
    nlohmann::json meta;
    const auto back = load_checkpoint(net, dir.file("a.sslc"), &meta);
    EXPECT_EQ(back.params.values, st.params.values);
    EXPECT_EQ(back.m, st.m);
    EXPECT_EQ(back.v, st.v);
    EXPECT_EQ(back.step, 17u);
    EXPECT_EQ(back.epoch, 3u);
    EXPECT_EQ(meta.at("note"), "x");
    save_checkpoint(net, back, dir.file("b.sslc"), {{"note", "x"}});
    EXPECT_EQ(sslpdl::detail::slurp(dir.file("a.sslc")), sslpdl::detail::slurp(dir.file("b.sslc")));
}

TEST(Checkpoint, MismatchedArchAndVersion) {
    testing_support::TempDir dir("ckpt_bad");
    const auto arch = small_arch();
    TinyNet<double> net(arch);
    TrainState<double> st(net.init_params(4), 4);
    save_checkpoint(net, st, dir.file("a.sslc"));
    auto other = arch;
    other.widths = {4, 4, 6, 8};
    EXPECT_THROW(load_checkpoint(TinyNet<double>(other), dir.file("a.sslc")), CheckpointError);
    auto buf = sslpdl::detail::slurp(dir.file("a.sslc"));
    buf[4] = 9;
    EXPECT_THROW(decode_checkpoint(buf), CheckpointError);
    buf = sslpdl::detail::slurp(dir.file("a.sslc"));
    buf.resize(buf.size() - 8);
    EXPECT_THROW(decode_checkpoint(buf), CheckpointError);
    EXPECT_THROW(read_checkpoint(dir.file("missing.sslc")), DataError);
}

TEST(Checkpoint, FloatStateSurvivesWidening) {
    testing_support::TempDir dir("ckpt_f32");
    TinyNet<float> net(small_arch());
    TrainState<float> st(net.init_params(2), 2);
    save_checkpoint(net, st, dir.file("f.sslc"));
    EXPECT_EQ(load_checkpoint(net, dir.file("f.sslc")).params.values, st.params.values);
}
