#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sslpdl/error.hpp"

namespace sslpdl {

// n_vars x height x width field of atmospheric variables, stored (var, row, col).
struct GridField {
    std::size_t n_vars = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::string> var_names;
    std::vector<float> values;

    GridField() = default;
    GridField(std::size_t n, std::size_t h, std::size_t w, std::vector<std::string> names = {})
        : n_vars(n), height(h), width(w), var_names(std::move(names)), values(n * h * w, 0.0f) {
        if (var_names.empty()) {
            for (std::size_t v = 0; v < n; ++v) var_names.push_back("v" + std::to_string(v));
        }
    }

    std::size_t plane() const noexcept { return height * width; }
    std::size_t size() const noexcept { return values.size(); }

    float& at(std::size_t v, std::size_t r, std::size_t c) { return values[(v * height + r) * width + c]; }
    float at(std::size_t v, std::size_t r, std::size_t c) const { return values[(v * height + r) * width + c]; }

    std::span<float> channel(std::size_t v) { return {values.data() + v * plane(), plane()}; }
    std::span<const float> channel(std::size_t v) const { return {values.data() + v * plane(), plane()}; }

    bool operator==(const GridField&) const = default;
};

// Throws ValidationError when the field breaks its shape/finiteness invariants.
inline void validate(const GridField& f) {
    if (f.n_vars * f.height * f.width != f.values.size())
        throw ValidationError("grid: value count does not match n*h*w");
    if (f.var_names.size() != f.n_vars) throw ValidationError("grid: var_names length != n_vars");
    for (float x : f.values)
        if (!std::isfinite(x)) throw ValidationError("grid: non-finite value");
}

namespace detail {

template <class U>
inline void put_le(std::vector<char>& buf, U x) {
    static_assert(std::is_trivially_copyable_v<U>);
    if constexpr (std::endian::native == std::endian::big) {
        auto bytes = std::bit_cast<std::array<char, sizeof(U)>>(x);
        std::reverse(bytes.begin(), bytes.end());
        buf.insert(buf.end(), bytes.begin(), bytes.end());
    } else {
        const char* p = reinterpret_cast<const char*>(&x);
        buf.insert(buf.end(), p, p + sizeof(U));
    }
}

template <class U>
inline U get_le(const char* p) {
    U x;
    std::memcpy(&x, p, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) {
        auto bytes = std::bit_cast<std::array<char, sizeof(U)>>(x);
        std::reverse(bytes.begin(), bytes.end());
        x = std::bit_cast<U>(bytes);
    }
    return x;
}

inline std::vector<char> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading", path);
    return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void dump(const std::string& path, const std::vector<char>& buf) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing", path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed", path);
}

} // namespace detail

inline constexpr char kGridMagic[4] = {'S', 'S', 'L', 'G'};
inline constexpr std::uint32_t kGridVersion = 1;
inline constexpr std::size_t kGridHeaderBytes = 20;

// Layout: "SSLG" | u32 version | u32 n | u32 h | u32 w | n*h*w f32 | u32 len | names joined by '\n'.
// All integers and reals little-endian.
inline std::vector<char> encode_grid(const GridField& field) {
    validate(field);
    std::vector<char> buf;
    buf.reserve(kGridHeaderBytes + field.values.size() * 4 + 64);
    buf.insert(buf.end(), kGridMagic, kGridMagic + 4);
    detail::put_le<std::uint32_t>(buf, kGridVersion);
    detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(field.n_vars));
    detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(field.height));
    detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(field.width));
    for (float x : field.values) detail::put_le<float>(buf, x);
    std::string names;
    for (std::size_t i = 0; i < field.var_names.size(); ++i) {
        if (field.var_names[i].find('\n') != std::string::npos)
            throw ArgumentError("grid: variable names may not contain newlines");
        if (i) names.push_back('\n');
        names += field.var_names[i];
    }
    detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(names.size()));
    buf.insert(buf.end(), names.begin(), names.end());
    return buf;
}

inline GridField decode_grid(const std::vector<char>& buf, const std::string& origin = "<memory>") {
    if (buf.size() < 4 || std::memcmp(buf.data(), kGridMagic, 4) != 0)
        throw FormatError("grid: bad magic in " + origin);
    if (buf.size() < kGridHeaderBytes) throw CorruptionError("grid: truncated header in " + origin);
    const char* p = buf.data();
    auto version = detail::get_le<std::uint32_t>(p + 4);
    if (version != kGridVersion)
        throw FormatError("grid: unsupported version " + std::to_string(version) + " in " + origin);
    GridField f;
    f.n_vars = detail::get_le<std::uint32_t>(p + 8);
    f.height = detail::get_le<std::uint32_t>(p + 12);
    f.width = detail::get_le<std::uint32_t>(p + 16);
    const std::size_t count = f.n_vars * f.height * f.width;
    std::size_t off = kGridHeaderBytes;
    if (buf.size() < off + count * 4 + 4) throw CorruptionError("grid: truncated payload in " + origin);
    f.values.resize(count);
    for (std::size_t i = 0; i < count; ++i, off += 4) f.values[i] = detail::get_le<float>(p + off);
    auto len = detail::get_le<std::uint32_t>(p + off);
    off += 4;
    if (buf.size() < off + len) throw CorruptionError("grid: truncated name block in " + origin);
    std::string names(p + off, len);
    if (f.n_vars > 0) {
        std::size_t start = 0;
        for (;;) {
            auto nl = names.find('\n', start);
            f.var_names.push_back(names.substr(start, nl - start));
            if (nl == std::string::npos) break;
            start = nl + 1;
        }
    }
    if (f.var_names.size() != f.n_vars) throw CorruptionError("grid: name block does not match n in " + origin);
    for (float x : f.values)
        if (!std::isfinite(x)) throw ValidationError("grid: non-finite value in " + origin);
    return f;
}

inline void write_grid(const GridField& field, const std::string& path) {
    detail::dump(path, encode_grid(field));
}

inline GridField read_grid(const std::string& path) { return decode_grid(detail::slurp(path), path); }

// ---------------------------------------------------------------------------
// z-score normalization

struct NormStats {
    std::string group_key;
    double mean = 0.0;
    double std = 0.0;
};

// var index -> group key (variable name + level, e.g. "T850").
using Grouping = std::vector<std::string>;

inline Grouping grouping_by_name(const GridField& f) { return f.var_names; }

inline std::vector<NormStats> zscore_fit(std::span<const GridField> samples, const Grouping& grouping) {
    if (samples.empty()) throw ArgumentError("zscore_fit: empty sample set");
    const std::size_t n = samples.front().n_vars;
    if (grouping.size() != n) throw ArgumentError("zscore_fit: grouping must cover every variable");
    std::vector<std::string> order;
    std::map<std::string, std::pair<long double, std::size_t>> sums;
    for (const auto& key : grouping)
        if (!sums.count(key)) {
            sums[key] = {0.0L, 0};
            order.push_back(key);
        }
    for (const auto& s : samples) {
        if (s.n_vars != n) throw ArgumentError("zscore_fit: inconsistent variable counts");
        for (std::size_t v = 0; v < n; ++v) {
            auto& acc = sums[grouping[v]];
            for (float x : s.channel(v)) acc.first += x;
            acc.second += s.plane();
        }
    }
    std::map<std::string, double> means;
    for (auto& [k, acc] : sums) means[k] = acc.second ? static_cast<double>(acc.first / acc.second) : 0.0;
    std::map<std::string, long double> sq;
    for (const auto& s : samples)
        for (std::size_t v = 0; v < n; ++v) {
            const double m = means[grouping[v]];
            long double& a = sq[grouping[v]];
            for (float x : s.channel(v)) {
                const double d = x - m;
                a += d * d;
            }
        }
    std::vector<NormStats> out;
    for (const auto& k : order) {
        const auto cnt = sums[k].second;
        out.push_back({k, means[k], cnt ? std::sqrt(static_cast<double>(sq[k] / cnt)) : 0.0});
    }
    return out;
}

inline constexpr double kZeroVarianceStd = 1e-8;

inline GridField zscore_apply(const GridField& field, std::span<const NormStats> stats, const Grouping& grouping) {
    if (grouping.size() != field.n_vars) throw ArgumentError("zscore_apply: grouping must cover every variable");
    GridField out = field;
    for (std::size_t v = 0; v < field.n_vars; ++v) {
        auto it = std::find_if(stats.begin(), stats.end(), [&](const NormStats& s) { return s.group_key == grouping[v]; });
        if (it == stats.end()) throw ArgumentError("zscore_apply: missing stats for group " + grouping[v]);
        auto dst = out.channel(v);
        if (it->std < kZeroVarianceStd) {
            std::fill(dst.begin(), dst.end(), 0.0f);
            continue;
        }
        for (auto& x : dst) x = static_cast<float>((x - it->mean) / it->std);
    }
    return out;
}

// ---------------------------------------------------------------------------

inline GridField center_crop(const GridField& field, std::size_t target_h, std::size_t target_w) {
    if (target_h > field.height || target_w > field.width)
        throw ArgumentError("center_crop: target exceeds source dimensions");
    const std::size_t r0 = (field.height - target_h) / 2;
    const std::size_t c0 = (field.width - target_w) / 2;
    GridField out(field.n_vars, target_h, target_w, field.var_names);
    for (std::size_t v = 0; v < field.n_vars; ++v)
        for (std::size_t r = 0; r < target_h; ++r)
            std::copy_n(&field.values[(v * field.height + r + r0) * field.width + c0], target_w, &out.at(v, r, 0));
    return out;
}

} // namespace sslpdl
