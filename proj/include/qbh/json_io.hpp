#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "qbh/alignment.hpp"
#include "qbh/error.hpp"
#include "qbh/synth.hpp"

// JSON records: group manifests, pipeline config files, synthetic ground truth.

namespace qbh {

using Json = nlohmann::json;

struct ManifestFragment {
    std::string source_id;
    Role role = Role::original;
    std::string title;
    std::string author;
    double start_s = 0.0;
    double end_s = 0.0;
    double correlation = 1.0;
    bool verified = false;

    bool operator==(const ManifestFragment&) const = default;
};

struct GroupManifest {
    std::string group_id;
    std::vector<ManifestFragment> fragments;

    bool operator==(const GroupManifest&) const = default;
};

struct SourceInfo {
    std::string title;
    std::string author;
};

/// The original fragment comes first with correlation 1; relevant matches are
/// marked verified, uncertain ones are left for a manual check.
inline GroupManifest make_manifest(const AlignedGroup& group, std::string group_id, const std::map<std::string, SourceInfo>& sources = {}) {
    const auto info = [&](const std::string& id) {
        const auto it = sources.find(id);
        return it == sources.end() ? SourceInfo{} : it->second;
    };
    GroupManifest m;
    m.group_id = std::move(group_id);
    const auto o = info(group.original.source_id);
    m.fragments.push_back({group.original.source_id, Role::original, o.title, o.author, group.original.start_s, group.original.end_s, 1.0, true});
    for (const auto& match : group.matches) {
        const auto s = info(match.fragment.source_id);
        m.fragments.push_back({match.fragment.source_id, match.fragment.role, s.title, s.author, match.fragment.start_s, match.fragment.end_s,
                               match.correlation, match.status == MatchStatus::relevant});
    }
    return m;
}

inline void to_json(Json& j, const ManifestFragment& f) {
    j = Json{{"source_id", f.source_id}, {"role", std::string(role_name(f.role))}, {"title", f.title}, {"author", f.author},
             {"start_s", f.start_s}, {"end_s", f.end_s}, {"correlation", f.correlation}, {"verified", f.verified}};
}

inline void from_json(const Json& j, ManifestFragment& f) {
    f.source_id = j.at("source_id").get<std::string>();
    f.role = parse_role(j.at("role").get<std::string>());
    f.title = j.value("title", "");
    f.author = j.value("author", "");
    f.start_s = j.at("start_s").get<double>();
    f.end_s = j.at("end_s").get<double>();
    f.correlation = j.at("correlation").get<double>();
    f.verified = j.at("verified").get<bool>();
}

inline void to_json(Json& j, const GroupManifest& m) { j = Json{{"group_id", m.group_id}, {"fragments", m.fragments}}; }

inline void from_json(const Json& j, GroupManifest& m) {
    m.group_id = j.at("group_id").get<std::string>();
    m.fragments = j.at("fragments").get<std::vector<ManifestFragment>>();
}

inline Json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open: " + path.string());
    try {
        return Json::parse(in);
    } catch (const Json::exception& e) {
        throw Error("malformed JSON in " + path.string() + ": " + e.what());
    }
}

inline void write_json(const Json& j, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write: " + path.string());
    out << j.dump(2) << '\n';
}

inline void save_manifest(const GroupManifest& m, const std::filesystem::path& path) { write_json(Json(m), path); }

inline GroupManifest load_manifest(const std::filesystem::path& path) {
    try {
        return read_json(path).get<GroupManifest>();
    } catch (const Json::exception& e) {
        throw Error("invalid manifest " + path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Pipeline config: the fields may sit at the top level or under "pipeline".
// Absent fields keep their defaults; unknown fields are rejected.

inline PipelineConfig pipeline_config_from_json(const Json& root) {
    const Json& j = root.contains("pipeline") ? root.at("pipeline") : root;
    if (!j.is_object()) throw Error("config must be a JSON object");
    static const std::set<std::string> known = {"d_min", "d_max", "pause_set", "db_set", "alpha_corr", "beta_rel", "beta_irrel"};
    for (const auto& [key, value] : j.items())
        if (!known.contains(key)) throw Error("unknown config field: " + key);
    PipelineConfig c;
    try {
        c.d_min = j.value("d_min", c.d_min);
        c.d_max = j.value("d_max", c.d_max);
        c.pause_set = j.value("pause_set", c.pause_set);
        c.db_set = j.value("db_set", c.db_set);
        c.alpha_corr = j.value("alpha_corr", c.alpha_corr);
        c.beta_rel = j.value("beta_rel", c.beta_rel);
        c.beta_irrel = j.value("beta_irrel", c.beta_irrel);
    } catch (const Json::exception& e) {
        throw Error(std::string("config field has the wrong type: ") + e.what());
    }
    c.validate();
    return c;
}

inline Json to_json(const PipelineConfig& c) {
    return Json{{"d_min", c.d_min},       {"d_max", c.d_max},       {"pause_set", c.pause_set}, {"db_set", c.db_set},
                {"alpha_corr", c.alpha_corr}, {"beta_rel", c.beta_rel}, {"beta_irrel", c.beta_irrel}};
}

inline PipelineConfig load_pipeline_config(const std::filesystem::path& path) { return pipeline_config_from_json(read_json(path)); }

// ---------------------------------------------------------------------------
// Synthetic ground truth.

struct CoverTruth {
    std::string file;
    synth::CoverTransform transform;
    synth::OffsetMap offset_map;
};

struct SongTruth {
    std::uint32_t song_id = 0;
    std::string file;
    std::vector<synth::Span> boundaries;
    std::vector<CoverTruth> covers;
};

inline Json to_json(const SongTruth& t) {
    Json j{{"song_id", t.song_id}, {"file", t.file}, {"boundaries", Json::array()}, {"covers", Json::array()}};
    for (const auto& b : t.boundaries) j["boundaries"].push_back({b.start_s, b.end_s});
    for (const auto& c : t.covers) {
        // JSON has no infinity; a noiseless cover stores null.
        const Json snr = std::isfinite(c.transform.snr_db) ? Json(c.transform.snr_db) : Json(nullptr);
        j["covers"].push_back({{"file", c.file},
                               {"transform",
                                {{"shift_semitones", c.transform.shift_semitones},
                                 {"stretch_rate", c.transform.stretch_rate},
                                 {"snr_db", snr},
                                 {"lead_silence_s", c.transform.lead_silence_s}}},
                               {"offset_map", {{"offset_s", c.offset_map.offset_s}, {"scale", c.offset_map.scale}}}});
    }
    return j;
}

inline SongTruth song_truth_from_json(const Json& j) {
    SongTruth t;
    t.song_id = j.at("song_id").get<std::uint32_t>();
    t.file = j.value("file", "");
    for (const auto& b : j.at("boundaries")) t.boundaries.push_back({b.at(0).get<double>(), b.at(1).get<double>()});
    for (const auto& c : j.at("covers")) {
        CoverTruth ct;
        ct.file = c.value("file", "");
        const auto& tr = c.at("transform");
        ct.transform.shift_semitones = tr.at("shift_semitones").get<double>();
        ct.transform.stretch_rate = tr.at("stretch_rate").get<double>();
        ct.transform.snr_db = tr.at("snr_db").is_null() ? std::numeric_limits<double>::infinity() : tr.at("snr_db").get<double>();
        ct.transform.lead_silence_s = tr.at("lead_silence_s").get<double>();
        ct.offset_map.offset_s = c.at("offset_map").at("offset_s").get<double>();
        ct.offset_map.scale = c.at("offset_map").at("scale").get<double>();
        t.covers.push_back(std::move(ct));
    }
    return t;
}

} // namespace qbh
