#pragma once

// Hierarchical encoder with offset-aggregation blocks plus two light fusion
// decoders (reconstruction and segmentation). The network object only holds
// the layout; parameters live in a ParamStore so the same net can drive
// several parameter sets.

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "sslpdl/error.hpp"
#include "sslpdl/nn/ops.hpp"
#include "sslpdl/nn/tensor.hpp"
#include "sslpdl/patching.hpp"
#include "sslpdl/random.hpp"

namespace sslpdl::nn {

enum class TokenEmbed { identity, linear };

inline std::string to_string(TokenEmbed e) { return e == TokenEmbed::identity ? "identity" : "linear"; }
inline TokenEmbed parse_token_embed(const std::string& s) {
    if (s == "identity") return TokenEmbed::identity;
    if (s == "linear") return TokenEmbed::linear;
    throw ConfigError("unknown token embedding: " + s);
}

inline constexpr std::size_t kStemStride = 4;

struct ArchConfig {
    std::size_t n_vars = 8;
    std::size_t height = 96;
    std::size_t width = 64;
    std::size_t n_classes = 3;
    std::vector<std::size_t> widths{16, 32, 48, 64};
    std::string pattern = "AABA"; // one block type per stage
    std::size_t decoder_width = 16;
    std::size_t kernel = 3;
    PatchConfig patch{2, 16};
    TokenEmbed token_embed = TokenEmbed::identity;
    bool pos_embed = true;

    std::size_t stages() const noexcept { return widths.size(); }
    std::size_t total_stride() const noexcept { return kStemStride << (stages() ? stages() - 1 : 0); }

    void validate() const {
        if (n_vars == 0 || n_classes < 2) throw ArgumentError("arch: need n_vars > 0 and n_classes >= 2");
        if (widths.empty()) throw ArgumentError("arch: at least one stage is required");
        for (auto c : widths)
            if (c == 0) throw ArgumentError("arch: stage widths must be positive");
        if (pattern.size() != widths.size()) throw ArgumentError("arch: pattern length must equal the stage count");
        for (char ch : pattern)
            if (ch != 'A' && ch != 'B') throw ArgumentError("arch: pattern may only contain 'A' and 'B'");
        if (decoder_width == 0) throw ArgumentError("arch: decoder_width must be positive");
        if (kernel % 2 == 0) throw ArgumentError("arch: kernel must be odd");
        if (height % total_stride() != 0 || width % total_stride() != 0)
            throw ArgumentError("arch: grid dims must be divisible by " + std::to_string(total_stride()));
        patch.check(n_vars, height, width);
    }

    bool operator==(const ArchConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ArchConfig& a) {
    j = {{"n_vars", a.n_vars},       {"height", a.height},
         {"width", a.width},         {"n_classes", a.n_classes},
         {"widths", a.widths},       {"pattern", a.pattern},
         {"decoder_width", a.decoder_width}, {"kernel", a.kernel},
         {"patch", a.patch},         {"token_embed", to_string(a.token_embed)},
         {"pos_embed", a.pos_embed}};
}

inline void from_json(const nlohmann::json& j, ArchConfig& a) {
    ArchConfig d;
    a.n_vars = j.value("n_vars", d.n_vars);
    a.height = j.value("height", d.height);
    a.width = j.value("width", d.width);
    a.n_classes = j.value("n_classes", d.n_classes);
    a.widths = j.value("widths", d.widths);
    a.pattern = j.value("pattern", d.pattern);
    a.decoder_width = j.value("decoder_width", d.decoder_width);
    a.kernel = j.value("kernel", d.kernel);
    a.patch = j.contains("patch") ? j.at("patch").get<PatchConfig>() : d.patch;
    a.token_embed = parse_token_embed(j.value("token_embed", to_string(d.token_embed)));
    a.pos_embed = j.value("pos_embed", d.pos_embed);
}

template <class T>
struct FeaturePyramid {
    std::vector<Tensor<T>> z; // z[l] has stride 4 * 2^l
};

enum class Head { rec, seg };

// ---------------------------------------------------------------------------
// layout

struct ConvRef {
    std::size_t w = 0, b = 0;
    ConvSpec spec;
};
struct NormRef {
    std::size_t g = 0, b = 0;
};
struct BlockRef {
    char type = 'A';
    NormRef ln1, ln2;
    ConvRef offset; // A blocks: predicts 2k^2 offset channels
    ConvRef agg;    // aggregation weights (offset-sampled for A, plain conv for B)
    ConvRef ffn1, ffn2;
};
struct StageRef {
    bool has_down = false;
    ConvRef down;
    NormRef down_norm;
    BlockRef block;
};
struct HeadRef {
    std::vector<ConvRef> lateral;
    ConvRef fuse;
    ConvRef out;
    std::size_t channels = 0;
};

// ---------------------------------------------------------------------------
// caches

template <class T>
struct BlockCache {
    NormCache<T> n1, n2;
    Tensor<T> u;
    ConvCache<T> c_off;
    Tensor<T> off;
    OffsetCache<T> oc;
    ConvCache<T> c_agg;
    Tensor<T> f1;
    ConvCache<T> c_f1, c_f2;
};

template <class T>
struct StageCache {
    ConvCache<T> down;
    NormCache<T> down_norm;
    BlockCache<T> block;
};

template <class T>
struct EncodeCache {
    std::vector<T> tokens; // pre-embedding tokens (linear embedding only)
    ConvCache<T> stem;
    NormCache<T> stem_norm;
    std::vector<StageCache<T>> stages;
};

template <class T>
struct DecodeCache {
    std::vector<ConvCache<T>> lateral;
    ConvCache<T> fuse;
    Tensor<T> fuse_pre;
    ConvCache<T> out;
};

inline constexpr double kPosEmbedStd = 0.02;

template <class T>
class TinyNet {
public:
    explicit TinyNet(ArchConfig arch) : arch_(std::move(arch)) {
        arch_.validate();
        build(layout_store_);
    }

    const ArchConfig& arch() const noexcept { return arch_; }
    const std::vector<ParamInfo>& param_info() const noexcept { return layout_store_.info; }

    // Fan-in-scaled uniform weights, zero biases and offsets, unit norm gains.
    ParamStore<T> init_params(std::uint64_t seed) const {
        ParamStore<T> p = layout_store_;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const auto& pi = p.info[i];
            auto& v = p.values[i];
            auto eng = keyed_engine(seed, i, Stream::init);
            switch (pi.kind) {
            case ParamKind::weight: {
                const double bound = std::sqrt(3.0 / static_cast<double>(pi.fan_in));
                std::uniform_real_distribution<double> u(-bound, bound);
                for (auto& x : v) x = static_cast<T>(u(eng));
                break;
            }
            case ParamKind::pos_embed: {
                const double bound = kPosEmbedStd * std::sqrt(3.0);
                std::uniform_real_distribution<double> u(-bound, bound);
                for (auto& x : v) x = static_cast<T>(u(eng));
                break;
            }
            case ParamKind::norm_gain:
                std::fill(v.begin(), v.end(), T(1));
                break;
            case ParamKind::bias:
            case ParamKind::norm_bias:
            case ParamKind::offset_weight:
            case ParamKind::offset_bias:
                std::fill(v.begin(), v.end(), T(0));
                break;
            }
        }
        return p;
    }

    // Throws if `p` was not laid out for this architecture.
    void check(const ParamStore<T>& p) const {
        if (p.size() != layout_store_.size()) throw ArgumentError("params: parameter count does not match arch");
        for (std::size_t i = 0; i < p.size(); ++i)
            if (p.info[i].name != layout_store_.info[i].name || p.info[i].shape != layout_store_.info[i].shape ||
                p.values[i].size() != layout_store_.values[i].size())
                throw ArgumentError("params: layout mismatch at " + layout_store_.info[i].name);
    }

    // Marks parameters whose name starts with `prefix` as (non-)trainable.
    void set_trainable(ParamStore<T>& p, const std::string& prefix, bool on) const {
        for (std::size_t i = 0; i < p.size(); ++i)
            if (p.info[i].name.rfind(prefix, 0) == 0) p.trainable[i] = on;
    }
    void freeze_offsets(ParamStore<T>& p) const {
        for (std::size_t i = 0; i < p.size(); ++i)
            if (p.info[i].kind == ParamKind::offset_weight || p.info[i].kind == ParamKind::offset_bias)
                p.trainable[i] = false;
    }

    // ------------------------------------------------------------------ forward

    FeaturePyramid<T> encode(const ParamStore<T>& p, const Tensor<T>& x, EncodeCache<T>* cache = nullptr) const {
        if (x.c != arch_.n_vars || x.h != arch_.height || x.w != arch_.width)
            throw ArgumentError("encode: input shape does not match arch");
        EncodeCache<T> local;
        EncodeCache<T>& cc = cache ? *cache : local;
        Tensor<T> x0 = embed(p, x, cc);
        Tensor<T> s = conv(p, stem_, x0, &cc.stem);
        s = layer_norm_forward(s, p.ptr(stem_norm_.g), p.ptr(stem_norm_.b), &cc.stem_norm);
        cc.stages.resize(stages_.size());
        FeaturePyramid<T> out;
        for (std::size_t l = 0; l < stages_.size(); ++l) {
            const auto& st = stages_[l];
            auto& sc = cc.stages[l];
            if (st.has_down) {
                s = conv(p, st.down, s, &sc.down);
                s = layer_norm_forward(s, p.ptr(st.down_norm.g), p.ptr(st.down_norm.b), &sc.down_norm);
            }
            s = block_forward(p, st.block, s, sc.block);
            out.z.push_back(s);
        }
        return out;
    }

    Tensor<T> decode(const ParamStore<T>& p, Head which, const FeaturePyramid<T>& zp,
                     DecodeCache<T>* cache = nullptr) const {
        const HeadRef& hd = which == Head::rec ? rec_ : seg_;
        if (zp.z.size() != stages_.size()) throw ArgumentError("decode: pyramid depth does not match arch");
        DecodeCache<T> local;
        DecodeCache<T>& cc = cache ? *cache : local;
        cc.lateral.resize(stages_.size());
        Tensor<T> acc;
        for (std::size_t l = stages_.size(); l-- > 0;) {
            Tensor<T> lat = conv(p, hd.lateral[l], zp.z[l], &cc.lateral[l]);
            if (l + 1 < stages_.size()) add_inplace(lat, upsample2_forward(acc));
            acc = std::move(lat);
        }
        cc.fuse_pre = conv(p, hd.fuse, acc, &cc.fuse);
        Tensor<T> f = gelu_forward(cc.fuse_pre);
        Tensor<T> o = conv(p, hd.out, f, &cc.out);
        return pixel_shuffle_forward(o, kStemStride);
    }

    Tensor<T> decode_rec(const ParamStore<T>& p, const FeaturePyramid<T>& z, DecodeCache<T>* c = nullptr) const {
        return decode(p, Head::rec, z, c);
    }
    Tensor<T> decode_seg(const ParamStore<T>& p, const FeaturePyramid<T>& z, DecodeCache<T>* c = nullptr) const {
        return decode(p, Head::seg, z, c);
    }

    // ----------------------------------------------------------------- backward

    // Accumulates head gradients into g and returns dL/dZ per stage.
    FeaturePyramid<T> decode_backward(const ParamStore<T>& p, Head which, const DecodeCache<T>& cc, const Tensor<T>& dy,
                                      Grads<T>& g) const {
        const HeadRef& hd = which == Head::rec ? rec_ : seg_;
        Tensor<T> d = pixel_shuffle_backward(dy, kStemStride);
        d = conv_back(p, hd.out, cc.out, d, g);
        d = gelu_backward(cc.fuse_pre, d);
        d = conv_back(p, hd.fuse, cc.fuse, d, g);
        FeaturePyramid<T> dz;
        dz.z.resize(stages_.size());
        for (std::size_t l = 0; l < stages_.size(); ++l) {
            dz.z[l] = conv_back(p, hd.lateral[l], cc.lateral[l], d, g);
            if (l + 1 < stages_.size()) d = upsample2_backward(d);
        }
        return dz;
    }

    // Accumulates encoder (and embedding) gradients into g.
    void encode_backward(const ParamStore<T>& p, const EncodeCache<T>& cc, const FeaturePyramid<T>& dz,
                         Grads<T>& g) const {
        Tensor<T> d;
        for (std::size_t l = stages_.size(); l-- > 0;) {
            const auto& st = stages_[l];
            const auto& sc = cc.stages[l];
            if (d.size() == 0)
                d = dz.z[l];
            else
                add_inplace(d, dz.z[l]);
            d = block_backward(p, st.block, sc.block, d, g);
            if (st.has_down) {
                d = layer_norm_backward(sc.down_norm, p.ptr(st.down_norm.g), d, g.ptr(st.down_norm.g),
                                        g.ptr(st.down_norm.b));
                d = conv_back(p, st.down, sc.down, d, g);
            }
        }
        d = layer_norm_backward(cc.stem_norm, p.ptr(stem_norm_.g), d, g.ptr(stem_norm_.g), g.ptr(stem_norm_.b));
        d = conv_back(p, stem_, cc.stem, d, g, embed_w_.has_value() || pe_.has_value());
        embed_backward(p, cc, d, g);
    }

    // Unmasked forward to segmentation logits.
    Tensor<T> predict_logits(const ParamStore<T>& p, const Tensor<T>& x) const {
        return decode_seg(p, encode(p, x));
    }

private:
    ArchConfig arch_;
    ParamStore<T> layout_store_;
    std::optional<std::size_t> embed_w_, embed_b_, pe_;
    ConvRef stem_;
    NormRef stem_norm_;
    std::vector<StageRef> stages_;
    HeadRef rec_, seg_;

    // --- layout construction

    ConvRef add_conv(ParamStore<T>& p, const std::string& name, ConvSpec s, bool offset = false) const {
        ConvRef r{0, 0, s};
        r.w = p.add(name + ".w", {s.cout, s.cin, s.k, s.k}, offset ? ParamKind::offset_weight : ParamKind::weight,
                    s.fan_in());
        r.b = p.add(name + ".b", {s.cout}, offset ? ParamKind::offset_bias : ParamKind::bias, s.fan_in());
        return r;
    }
    NormRef add_norm(ParamStore<T>& p, const std::string& name, std::size_t c) const {
        NormRef r;
        r.g = p.add(name + ".g", {c}, ParamKind::norm_gain);
        r.b = p.add(name + ".b", {c}, ParamKind::norm_bias);
        return r;
    }

    void build(ParamStore<T>& p) {
        const std::size_t n = arch_.n_vars, k = arch_.kernel, d = arch_.patch.token_dim();
        const std::size_t nt = arch_.patch.n_tokens(n, arch_.height, arch_.width);
        if (arch_.token_embed == TokenEmbed::linear) {
            embed_w_ = p.add("embed.w", {d, d}, ParamKind::weight, d);
            embed_b_ = p.add("embed.b", {d}, ParamKind::bias, d);
        }
        if (arch_.pos_embed) pe_ = p.add("embed.pe", {nt, d}, ParamKind::pos_embed);
        stem_ = add_conv(p, "enc.stem", {n, arch_.widths[0], kStemStride, kStemStride, 0});
        stem_norm_ = add_norm(p, "enc.stem_norm", arch_.widths[0]);
        for (std::size_t l = 0; l < arch_.stages(); ++l) {
            const std::string pre = "enc.s" + std::to_string(l);
            const std::size_t c = arch_.widths[l];
            StageRef st;
            if (l > 0) {
                st.has_down = true;
                st.down = add_conv(p, pre + ".down", {arch_.widths[l - 1], c, 2, 2, 0});
                st.down_norm = add_norm(p, pre + ".down_norm", c);
            }
            auto& b = st.block;
            b.type = arch_.pattern[l];
            b.ln1 = add_norm(p, pre + ".ln1", c);
            if (b.type == 'A') b.offset = add_conv(p, pre + ".offset", {c, 2 * k * k, k, 1, k / 2}, true);
            b.agg = add_conv(p, pre + ".agg", {c, c, k, 1, k / 2});
            b.ln2 = add_norm(p, pre + ".ln2", c);
            b.ffn1 = add_conv(p, pre + ".ffn1", {c, 2 * c, 1, 1, 0});
            b.ffn2 = add_conv(p, pre + ".ffn2", {2 * c, c, 1, 1, 0});
            stages_.push_back(st);
        }
        rec_ = add_head(p, "rec", n);
        seg_ = add_head(p, "seg", arch_.n_classes);
    }

    HeadRef add_head(ParamStore<T>& p, const std::string& pre, std::size_t out) const {
        HeadRef h;
        const std::size_t D = arch_.decoder_width, k = arch_.kernel;
        for (std::size_t l = 0; l < arch_.stages(); ++l)
            h.lateral.push_back(add_conv(p, pre + ".lat" + std::to_string(l), {arch_.widths[l], D, 1, 1, 0}));
        h.fuse = add_conv(p, pre + ".fuse", {D, D, k, 1, k / 2});
        h.out = add_conv(p, pre + ".out", {D, out * kStemStride * kStemStride, 1, 1, 0});
        h.channels = out;
        return h;
    }

    // --- layer helpers

    static Tensor<T> conv(const ParamStore<T>& p, const ConvRef& r, const Tensor<T>& x, ConvCache<T>* c) {
        return conv2d_forward(x, p.ptr(r.w), p.ptr(r.b), r.spec, c);
    }
    static Tensor<T> conv_back(const ParamStore<T>& p, const ConvRef& r, const ConvCache<T>& c, const Tensor<T>& dy,
                               Grads<T>& g, bool want_dx = true) {
        return conv2d_backward(c, p.ptr(r.w), r.spec, dy, g.ptr(r.w), g.ptr(r.b), want_dx);
    }

    Tensor<T> embed(const ParamStore<T>& p, const Tensor<T>& x, EncodeCache<T>& cc) const {
        if (!embed_w_ && !pe_) return x;
        const auto& pc = arch_.patch;
        const std::size_t n = x.c, h = x.h, w = x.w;
        auto tm = tokenize_values<T>(std::span<const T>(x.data), n, h, w, pc);
        if (embed_w_) {
            cc.tokens = tm.data;
            tm.data = linear_forward(cc.tokens, tm.n_tokens, tm.dim, p.ptr(*embed_w_), p.ptr(*embed_b_), tm.dim);
        }
        if (pe_) {
            const T* pe = p.ptr(*pe_);
            for (std::size_t i = 0; i < tm.data.size(); ++i) tm.data[i] += pe[i];
        }
        Tensor<T> out(n, h, w);
        detokenize_values<T>(tm, pc, n, h, w, std::span<T>(out.data));
        return out;
    }

    void embed_backward(const ParamStore<T>& p, const EncodeCache<T>& cc, const Tensor<T>& d, Grads<T>& g) const {
        if (!embed_w_ && !pe_) return;
        auto dt = tokenize_values<T>(std::span<const T>(d.data), d.c, d.h, d.w, arch_.patch);
        if (pe_) {
            T* gp = g.ptr(*pe_);
            for (std::size_t i = 0; i < dt.data.size(); ++i) gp[i] += dt.data[i];
        }
        if (embed_w_)
            linear_backward(cc.tokens, dt.n_tokens, dt.dim, p.ptr(*embed_w_), dt.dim, dt.data, g.ptr(*embed_w_),
                            g.ptr(*embed_b_));
    }

    Tensor<T> block_forward(const ParamStore<T>& p, const BlockRef& b, const Tensor<T>& x, BlockCache<T>& c) const {
        c.u = layer_norm_forward(x, p.ptr(b.ln1.g), p.ptr(b.ln1.b), &c.n1);
        Tensor<T> a;
        if (b.type == 'A') {
            c.off = conv(p, b.offset, c.u, &c.c_off);
            a = offset_aggregate_forward(c.u, c.off, p.ptr(b.agg.w), p.ptr(b.agg.b), b.agg.spec.cout, b.agg.spec.k,
                                         &c.oc);
        } else {
            a = conv(p, b.agg, c.u, &c.c_agg);
        }
        add_inplace(a, x); // x1 = x + agg(LN1(x))
        Tensor<T> v = layer_norm_forward(a, p.ptr(b.ln2.g), p.ptr(b.ln2.b), &c.n2);
        c.f1 = conv(p, b.ffn1, v, &c.c_f1);
        Tensor<T> f2 = conv(p, b.ffn2, gelu_forward(c.f1), &c.c_f2);
        add_inplace(f2, a);
        return f2;
    }

    Tensor<T> block_backward(const ParamStore<T>& p, const BlockRef& b, const BlockCache<T>& c, const Tensor<T>& dy,
                             Grads<T>& g) const {
        // through the feed-forward residual
        Tensor<T> d = conv_back(p, b.ffn2, c.c_f2, dy, g);
        d = gelu_backward(c.f1, d);
        d = conv_back(p, b.ffn1, c.c_f1, d, g);
        d = layer_norm_backward(c.n2, p.ptr(b.ln2.g), d, g.ptr(b.ln2.g), g.ptr(b.ln2.b));
        add_inplace(d, dy); // d = dL/dx1
        // through the aggregation residual
        Tensor<T> du;
        if (b.type == 'A') {
            auto og = offset_aggregate_backward(c.oc, c.u, p.ptr(b.agg.w), b.agg.spec.cout, b.agg.spec.k, d,
                                                g.ptr(b.agg.w), g.ptr(b.agg.b));
            du = std::move(og.dx);
            add_inplace(du, conv_back(p, b.offset, c.c_off, og.doffsets, g));
        } else {
            du = conv_back(p, b.agg, c.c_agg, d, g);
        }
        Tensor<T> dx = layer_norm_backward(c.n1, p.ptr(b.ln1.g), du, g.ptr(b.ln1.g), g.ptr(b.ln1.b));
        add_inplace(dx, d);
        return dx;
    }
};

// GridField -> tensor at precision T.
template <class T>
inline Tensor<T> to_tensor(const GridField& g) {
    Tensor<T> t(g.n_vars, g.height, g.width);
    for (std::size_t i = 0; i < g.values.size(); ++i) t.data[i] = static_cast<T>(g.values[i]);
    return t;
}

} // namespace sslpdl::nn
