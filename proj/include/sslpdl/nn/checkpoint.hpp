#pragma once

// SSLC checkpoint: "SSLC", u32 version, u64 header length, JSON header
// (arch, metadata, step/epoch/seed, parameter names and shapes), then the
// parameter arrays as little-endian f64 in declaration order, then the first
// and second optimizer moments in the same order.

#include <cstring>
#include <string>
#include <vector>

#include <json.hpp>

#include "sslpdl/error.hpp"
#include "sslpdl/grid.hpp"
#include "sslpdl/nn/model.hpp"
#include "sslpdl/nn/optim.hpp"

namespace sslpdl::nn {

inline constexpr char kCheckpointMagic[4] = {'S', 'S', 'L', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Precision-neutral contents of a checkpoint file.
struct Checkpoint {
    ArchConfig arch;
    nlohmann::json meta = nlohmann::json::object();
    std::uint64_t step = 0, epoch = 0, seed = 0;
    std::vector<ParamInfo> info;
    std::vector<std::vector<double>> params, m, v;
};

namespace detail {

inline void put_f64s(std::vector<char>& buf, const std::vector<double>& xs) {
    for (double x : xs) sslpdl::detail::put_le<double>(buf, x);
}

template <class T>
inline std::vector<std::vector<double>> widen(const std::vector<std::vector<T>>& src) {
    std::vector<std::vector<double>> out;
    for (const auto& a : src) out.emplace_back(a.begin(), a.end());
    return out;
}

template <class T>
inline std::vector<std::vector<T>> narrow(const std::vector<std::vector<double>>& src) {
    std::vector<std::vector<T>> out;
    for (const auto& a : src) {
        std::vector<T> b(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) b[i] = static_cast<T>(a[i]);
        out.push_back(std::move(b));
    }
    return out;
}

} // namespace detail

template <class T>
inline Checkpoint make_checkpoint(const ArchConfig& arch, const TrainState<T>& st,
                                  const nlohmann::json& meta = nlohmann::json::object()) {
    Checkpoint ck{arch, meta, st.step, st.epoch, st.seed, st.params.info, detail::widen(st.params.values),
                  detail::widen(st.m), detail::widen(st.v)};
    return ck;
}

inline std::vector<char> encode_checkpoint(const Checkpoint& ck) {
    nlohmann::json layout = nlohmann::json::array();
    for (const auto& pi : ck.info) layout.push_back({{"name", pi.name}, {"shape", pi.shape}});
    const nlohmann::json head = {{"arch", ck.arch}, {"meta", ck.meta},   {"step", ck.step},
                                 {"epoch", ck.epoch}, {"seed", ck.seed}, {"params", layout}};
    const std::string hs = head.dump();
    std::vector<char> buf(kCheckpointMagic, kCheckpointMagic + 4);
    sslpdl::detail::put_le<std::uint32_t>(buf, kCheckpointVersion);
    sslpdl::detail::put_le<std::uint64_t>(buf, hs.size());
    buf.insert(buf.end(), hs.begin(), hs.end());
    for (const auto* group : {&ck.params, &ck.m, &ck.v}) {
        if (group->size() != ck.info.size()) throw ArgumentError("checkpoint: moment arrays do not mirror params");
        for (const auto& a : *group) detail::put_f64s(buf, a);
    }
    return buf;
}

inline Checkpoint decode_checkpoint(const std::vector<char>& buf, const std::string& origin = "<memory>") {
    if (buf.size() < 16 || std::memcmp(buf.data(), kCheckpointMagic, 4) != 0)
        throw CheckpointError("checkpoint: bad magic in " + origin);
    const auto version = sslpdl::detail::get_le<std::uint32_t>(buf.data() + 4);
    if (version != kCheckpointVersion)
        throw CheckpointError("checkpoint: unsupported version " + std::to_string(version) + " in " + origin);
    const auto hlen = sslpdl::detail::get_le<std::uint64_t>(buf.data() + 8);
    if (buf.size() < 16 + hlen) throw CheckpointError("checkpoint: truncated header in " + origin);
    Checkpoint ck;
    try {
        const auto head = nlohmann::json::parse(buf.begin() + 16, buf.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
        ck.arch = head.at("arch").get<ArchConfig>();
        ck.meta = head.at("meta");
        ck.step = head.at("step").get<std::uint64_t>();
        ck.epoch = head.at("epoch").get<std::uint64_t>();
        ck.seed = head.at("seed").get<std::uint64_t>();
        for (const auto& p : head.at("params")) {
            ParamInfo pi;
            pi.name = p.at("name").get<std::string>();
            pi.shape = p.at("shape").get<std::vector<std::size_t>>();
            ck.info.push_back(std::move(pi));
        }
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("checkpoint: malformed header in " + origin + ": " + e.what());
    }
    std::size_t total = 0;
    for (const auto& pi : ck.info) total += pi.numel();
    if (buf.size() != 16 + hlen + 3 * total * 8) throw CheckpointError("checkpoint: payload size mismatch in " + origin);
    const char* cur = buf.data() + 16 + hlen;
    for (auto* group : {&ck.params, &ck.m, &ck.v})
        for (const auto& pi : ck.info) {
            std::vector<double> a(pi.numel());
            for (auto& x : a) {
                x = sslpdl::detail::get_le<double>(cur);
                cur += 8;
            }
            group->push_back(std::move(a));
        }
    return ck;
}

inline void write_checkpoint(const Checkpoint& ck, const std::string& path) {
    sslpdl::detail::dump(path, encode_checkpoint(ck));
}

inline Checkpoint read_checkpoint(const std::string& path) {
    return decode_checkpoint(sslpdl::detail::slurp(path), path);
}

template <class T>
inline void save_checkpoint(const TinyNet<T>& net, const TrainState<T>& st, const std::string& path,
                            const nlohmann::json& meta = nlohmann::json::object()) {
    write_checkpoint(make_checkpoint(net.arch(), st, meta), path);
}

// Restores a full training state; the checkpoint must match the net's layout.
template <class T>
inline TrainState<T> restore_state(const TinyNet<T>& net, const Checkpoint& ck) {
    if (!(ck.arch == net.arch())) throw CheckpointError("checkpoint: architecture does not match config");
    const auto& info = net.param_info();
    if (ck.info.size() != info.size()) throw CheckpointError("checkpoint: parameter count mismatch");
    for (std::size_t i = 0; i < info.size(); ++i)
        if (ck.info[i].name != info[i].name || ck.info[i].shape != info[i].shape)
            throw CheckpointError("checkpoint: parameter layout mismatch at " + info[i].name);
    TrainState<T> st;
    st.params = net.init_params(0);
    st.params.values = detail::narrow<T>(ck.params);
    st.m = detail::narrow<T>(ck.m);
    st.v = detail::narrow<T>(ck.v);
    st.step = ck.step;
    st.epoch = ck.epoch;
    st.seed = ck.seed;
    return st;
}

template <class T>
inline TrainState<T> load_checkpoint(const TinyNet<T>& net, const std::string& path, nlohmann::json* meta = nullptr) {
    const auto ck = read_checkpoint(path);
    if (meta) *meta = ck.meta;
    return restore_state(net, ck);
}

} // namespace sslpdl::nn
