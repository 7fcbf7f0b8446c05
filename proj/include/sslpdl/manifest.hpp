#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "sslpdl/error.hpp"

namespace sslpdl {

enum class AugmentOp { flip_h, flip_v, resize, mixup, gaussian_noise };

inline std::string to_string(AugmentOp op) {
    switch (op) {
    case AugmentOp::flip_h: return "flip_h";
    case AugmentOp::flip_v: return "flip_v";
    case AugmentOp::resize: return "resize";
    case AugmentOp::mixup: return "mixup";
    case AugmentOp::gaussian_noise: return "gaussian_noise";
    }
    return "?";
}

inline AugmentOp parse_augment_op(const std::string& s) {
    if (s == "flip_h") return AugmentOp::flip_h;
    if (s == "flip_v") return AugmentOp::flip_v;
    if (s == "resize") return AugmentOp::resize;
    if (s == "mixup") return AugmentOp::mixup;
    if (s == "gaussian_noise") return AugmentOp::gaussian_noise;
    throw ConfigError("unknown augmentation op: " + s);
}

// Marks an entry as a derived (augmented) copy of its source sample.
struct AugmentTag {
    AugmentOp op = AugmentOp::flip_h;
    std::uint64_t seed = 0;
    std::string partner_id; // mixup only
    bool operator==(const AugmentTag&) const = default;
};

struct ManifestEntry {
    std::string sample_id;
    std::string forecast_path;
    std::string truth_path;
    std::string timestamp; // ISO-8601, "YYYY-MM-DDTHH:MM"
    std::string split;     // train | val | test
    std::optional<AugmentTag> augment;

    bool operator==(const ManifestEntry&) const = default;

    // Month 1..12 parsed from the timestamp, 0 if unparseable.
    int month() const {
        if (timestamp.size() < 7) return 0;
        try {
            return std::stoi(timestamp.substr(5, 2));
        } catch (...) {
            return 0;
        }
    }
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;

    std::size_t size() const noexcept { return entries.size(); }
    bool empty() const noexcept { return entries.empty(); }
    bool operator==(const DatasetManifest&) const = default;

    DatasetManifest split(const std::string& tag) const {
        DatasetManifest out;
        for (const auto& e : entries)
            if (e.split == tag) out.entries.push_back(e);
        return out;
    }

    // Drops December-February samples.
    DatasetManifest without_winter() const {
        DatasetManifest out;
        for (const auto& e : entries) {
            const int m = e.month();
            if (m != 12 && m != 1 && m != 2) out.entries.push_back(e);
        }
        return out;
    }

    const ManifestEntry& find(const std::string& id) const {
        for (const auto& e : entries)
            if (e.sample_id == id) return e;
        throw ArgumentError("manifest: unknown sample id " + id);
    }
};

inline void to_json(nlohmann::json& j, const ManifestEntry& e) {
    j = nlohmann::json{{"sample_id", e.sample_id},
                       {"forecast", e.forecast_path},
                       {"truth", e.truth_path},
                       {"timestamp", e.timestamp},
                       {"split", e.split}};
    if (e.augment) {
        j["augment"] = {{"op", to_string(e.augment->op)}, {"seed", e.augment->seed}};
        if (!e.augment->partner_id.empty()) j["augment"]["partner"] = e.augment->partner_id;
    }
}

inline void from_json(const nlohmann::json& j, ManifestEntry& e) {
    e.sample_id = j.at("sample_id").get<std::string>();
    e.forecast_path = j.at("forecast").get<std::string>();
    e.truth_path = j.at("truth").get<std::string>();
    e.timestamp = j.value("timestamp", "");
    e.split = j.value("split", "train");
    if (j.contains("augment")) {
        const auto& a = j["augment"];
        e.augment = AugmentTag{parse_augment_op(a.at("op").get<std::string>()), a.value("seed", std::uint64_t{0}),
                               a.value("partner", "")};
    }
}

// Writes the manifest as a JSON array of entry records.
inline void write_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open manifest for writing", path);
    out << nlohmann::json(m.entries).dump(1) << '\n';
}

// Relative paths inside the manifest resolve against the manifest's directory.
inline DatasetManifest read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest", path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest: " + std::string(e.what()) + " in " + path);
    }
    if (!j.is_array()) throw FormatError("manifest: expected a JSON array in " + path);
    DatasetManifest m;
    const auto base = std::filesystem::path(path).parent_path();
    std::set<std::string> seen;
    try {
        for (const auto& rec : j) {
            auto e = rec.get<ManifestEntry>();
            for (auto* p : {&e.forecast_path, &e.truth_path})
                if (std::filesystem::path(*p).is_relative()) *p = (base / *p).string();
            if (!seen.insert(e.sample_id).second)
                throw FormatError("manifest: duplicate sample id " + e.sample_id);
            m.entries.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest: " + std::string(e.what()) + " in " + path);
    }
    return m;
}

// Lists entries whose files are missing; empty when everything resolves.
inline std::vector<std::string> missing_files(const DatasetManifest& m) {
    std::vector<std::string> out;
    for (const auto& e : m.entries)
        for (const auto* p : {&e.forecast_path, &e.truth_path})
            if (!std::filesystem::exists(*p)) out.push_back(*p);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

} // namespace sslpdl
