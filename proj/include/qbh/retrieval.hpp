#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "qbh/audio.hpp"
#include "qbh/binary_io.hpp"
#include "qbh/cqt.hpp"
#include "qbh/error.hpp"
#include "qbh/fingerprint.hpp"
#include "qbh/matching.hpp"
#include "qbh/metric_learning.hpp"
#include "qbh/parallel.hpp"

// Song database, coarse inverted-file index and two-step query search
// (nearest fingerprints, then Pearson reranking of the suggested alignments).

namespace qbh {

struct SongRecord {
    std::uint32_t song_id = 0;
    std::string title;
    double duration_s = 0.0;
    FingerprintSequence short_prints;
    FingerprintSequence long_prints;

    const FingerprintSequence& prints(Profile p) const {
        detail::require(p != Profile::custom, "songs store preset profiles only");
        return p == Profile::short_window ? short_prints : long_prints;
    }
    FingerprintSequence& prints(Profile p) {
        detail::require(p != Profile::custom, "songs store preset profiles only");
        return p == Profile::short_window ? short_prints : long_prints;
    }
};

/// Encodes a song at both window profiles from one feature matrix. A song
/// shorter than a profile's window gets an empty sequence for that profile.
inline SongRecord make_song_record(std::uint32_t id, std::string title, const Waveform& wave, const Encoder& encoder, unsigned threads = 1) {
    const Waveform w = wave.sample_rate == kEngineSampleRate ? wave : resample(wave, kEngineSampleRate);
    SongRecord rec;
    rec.song_id = id;
    rec.title = std::move(title);
    rec.duration_s = w.duration_s();
    const auto features = cqt(w);
    const std::string source = std::to_string(id);
    for (Profile p : {Profile::short_window, Profile::long_window}) {
        const auto config = EncoderConfig::for_profile(p);
        rec.prints(p).config = config;
        rec.prints(p).source_id = source;
        if (features.frames >= config.window_frames) rec.prints(p) = encode_sequence(features, config, encoder, source, threads);
    }
    return rec;
}

struct IndexEntry {
    Fingerprint fp;
    std::uint32_t song_id = 0;
    std::uint32_t offset = 0; // fingerprint step index within the song
};

struct Neighbor {
    std::uint32_t song_id = 0;
    std::uint32_t offset = 0;
    double dist2 = 0.0; // squared Euclidean distance

    bool operator==(const Neighbor&) const = default;
};

namespace detail {

inline double squared_distance(const Fingerprint& a, const Fingerprint& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < kFingerprintDim; ++i) {
        const double d = static_cast<double>(a.v[i]) - b.v[i];
        acc += d * d;
    }
    return acc;
}

inline bool neighbor_less(const Neighbor& a, const Neighbor& b) {
    if (a.dist2 != b.dist2) return a.dist2 < b.dist2;
    if (a.song_id != b.song_id) return a.song_id < b.song_id;
    return a.offset < b.offset;
}

inline std::vector<Neighbor> take_top(std::vector<Neighbor> all, std::size_t k) {
    k = std::min(k, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<long>(k), all.end(), neighbor_less);
    all.resize(k);
    return all;
}

} // namespace detail

/// Inverted file: k-means centroids and entries stored bucket by bucket.
struct CoarseIndex {
    Profile profile = Profile::short_window;
    std::vector<Fingerprint> centroids;
    std::vector<std::uint32_t> bucket_offsets; // nlist + 1 prefix offsets into entries
    std::vector<IndexEntry> entries;

    std::size_t nlist() const { return centroids.size(); }
    std::size_t size() const { return entries.size(); }
    bool empty() const { return entries.empty(); }
    std::span<const IndexEntry> bucket(std::size_t b) const {
        return {entries.data() + bucket_offsets[b], bucket_offsets[b + 1] - bucket_offsets[b]};
    }
    std::size_t default_nprobe() const { return std::max<std::size_t>(1, nlist() / 4); }
};

struct IndexOptions {
    std::size_t nlist = 0; // 0 picks round(sqrt(N))
    std::size_t iterations = 25;
    std::uint64_t seed = 0;
    unsigned threads = 1;
};

namespace detail {

inline std::size_t nearest_centroid(const Fingerprint& x, const std::vector<Fingerprint>& centroids) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.size(); ++c) {
        const double d = squared_distance(x, centroids[c]);
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

} // namespace detail

/// Seeded k-means over the entries (random distinct entries as initial
/// centroids, fixed iteration count, empty clusters keep their centroid),
/// then a counting sort into buckets that keeps (song, offset) order.
inline CoarseIndex build_coarse_index(std::vector<IndexEntry> entries, Profile profile, const IndexOptions& opts = {}) {
    if (entries.empty()) throw Error("empty database");
    const std::size_t n = entries.size();
    const std::size_t nlist = opts.nlist ? opts.nlist : std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n)))));
    detail::require(nlist <= n, "nlist must not exceed the entry count");

    std::stable_sort(entries.begin(), entries.end(), [](const IndexEntry& a, const IndexEntry& b) {
        return a.song_id != b.song_id ? a.song_id < b.song_id : a.offset < b.offset;
    });

    std::mt19937_64 rng(opts.seed);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = 0; i < nlist; ++i) std::swap(order[i], order[i + static_cast<std::size_t>(rng() % (n - i))]);
    std::vector<Fingerprint> centroids(nlist);
    for (std::size_t c = 0; c < nlist; ++c) centroids[c] = entries[order[c]].fp;

    std::vector<std::size_t> assign(n, 0);
    const auto assign_all = [&] {
        parallel_for(n, opts.threads, [&](std::size_t i) { assign[i] = detail::nearest_centroid(entries[i].fp, centroids); });
    };
    for (std::size_t it = 0; it < opts.iterations; ++it) {
        assign_all();
        std::vector<std::array<double, kFingerprintDim>> sums(nlist, std::array<double, kFingerprintDim>{});
        std::vector<std::size_t> counts(nlist, 0);
        for (std::size_t i = 0; i < n; ++i) {
            auto& s = sums[assign[i]];
            for (std::size_t d = 0; d < kFingerprintDim; ++d) s[d] += entries[i].fp.v[d];
            ++counts[assign[i]];
        }
        for (std::size_t c = 0; c < nlist; ++c) {
            if (counts[c] == 0) continue;
            for (std::size_t d = 0; d < kFingerprintDim; ++d) centroids[c].v[d] = static_cast<float>(sums[c][d] / static_cast<double>(counts[c]));
        }
    }
    assign_all();

    CoarseIndex index;
    index.profile = profile;
    index.centroids = std::move(centroids);
    index.bucket_offsets.assign(nlist + 1, 0);
    for (std::size_t i = 0; i < n; ++i) ++index.bucket_offsets[assign[i] + 1];
    for (std::size_t c = 0; c < nlist; ++c) index.bucket_offsets[c + 1] += index.bucket_offsets[c];
    std::vector<std::uint32_t> fill(index.bucket_offsets.begin(), index.bucket_offsets.end() - 1);
    index.entries.resize(n);
    for (std::size_t i = 0; i < n; ++i) index.entries[fill[assign[i]]++] = entries[i];
    return index;
}

inline std::vector<IndexEntry> collect_entries(std::span<const SongRecord> songs, Profile profile) {
    std::vector<IndexEntry> entries;
    for (const auto& s : songs) {
        const auto& seq = s.prints(profile);
        for (std::size_t j = 0; j < seq.size(); ++j) entries.push_back({seq[j], s.song_id, static_cast<std::uint32_t>(j)});
    }
    return entries;
}

inline CoarseIndex build_index(std::span<const SongRecord> songs, Profile profile, const IndexOptions& opts = {}) {
    if (songs.empty()) throw Error("empty database");
    return build_coarse_index(collect_entries(songs, profile), profile, opts);
}

/// Exhaustive scan; ties broken by (song_id, offset) ascending.
inline std::vector<Neighbor> exact_search(const CoarseIndex& index, const Fingerprint& query, std::size_t k) {
    detail::require(k >= 1, "k must be >= 1");
    std::vector<Neighbor> all;
    all.reserve(index.size());
    for (const auto& e : index.entries) all.push_back({e.song_id, e.offset, detail::squared_distance(query, e.fp)});
    return detail::take_top(std::move(all), k);
}

/// Scans the nprobe buckets whose centroids lie nearest the query.
inline std::vector<Neighbor> ann_search(const CoarseIndex& index, const Fingerprint& query, std::size_t k, std::size_t nprobe) {
    detail::require(k >= 1, "k must be >= 1");
    detail::require(nprobe >= 1 && nprobe <= index.nlist(), "nprobe must lie in [1, nlist]");
    std::vector<std::pair<double, std::size_t>> order(index.nlist());
    for (std::size_t c = 0; c < index.nlist(); ++c) order[c] = {detail::squared_distance(query, index.centroids[c]), c};
    std::partial_sort(order.begin(), order.begin() + static_cast<long>(nprobe), order.end());
    std::vector<Neighbor> hits;
    for (std::size_t p = 0; p < nprobe; ++p)
        for (const auto& e : index.bucket(order[p].second)) hits.push_back({e.song_id, e.offset, detail::squared_distance(query, e.fp)});
    return detail::take_top(std::move(hits), k);
}

// ---------------------------------------------------------------------------
// CHIX: magic, version u8, profile u8, dim u16, nlist u32, centroids
// (nlist x dim f32), bucket offsets ((nlist + 1) x u32), entries
// (dim f32 + song_id u32 + offset u32 each).

inline constexpr std::uint8_t kIndexFormatVersion = 1;

inline std::vector<char> serialize_index(const CoarseIndex& index) {
    io::Writer out;
    out.magic("CHIX");
    out.put<std::uint8_t>(kIndexFormatVersion);
    out.put<std::uint8_t>(static_cast<std::uint8_t>(index.profile));
    out.put<std::uint16_t>(static_cast<std::uint16_t>(kFingerprintDim));
    out.put<std::uint32_t>(static_cast<std::uint32_t>(index.nlist()));
    for (const auto& c : index.centroids) out.put_array(c.v.data(), kFingerprintDim);
    out.put_array(index.bucket_offsets.data(), index.bucket_offsets.size());
    for (const auto& e : index.entries) {
        out.put_array(e.fp.v.data(), kFingerprintDim);
        out.put<std::uint32_t>(e.song_id);
        out.put<std::uint32_t>(e.offset);
    }
    return out.bytes();
}

inline CoarseIndex deserialize_index(std::vector<char> bytes) {
    io::Reader in(std::move(bytes));
    in.expect_magic("CHIX");
    if (in.get<std::uint8_t>() != kIndexFormatVersion) throw Error("unsupported CHIX version");
    CoarseIndex index;
    const auto profile = in.get<std::uint8_t>();
    if (profile > static_cast<std::uint8_t>(Profile::custom)) throw Error("CHIX profile out of range");
    index.profile = static_cast<Profile>(profile);
    if (in.get<std::uint16_t>() != kFingerprintDim) throw Error("CHIX dimension mismatch");
    const std::size_t nlist = in.get<std::uint32_t>();
    if (nlist == 0) throw Error("CHIX index without buckets");
    index.centroids.resize(nlist);
    for (auto& c : index.centroids) in.get_array(c.v.data(), kFingerprintDim);
    index.bucket_offsets.resize(nlist + 1);
    in.get_array(index.bucket_offsets.data(), nlist + 1);
    if (index.bucket_offsets.front() != 0 || !std::is_sorted(index.bucket_offsets.begin(), index.bucket_offsets.end()))
        throw Error("CHIX bucket offsets corrupt");
    index.entries.resize(index.bucket_offsets.back());
    for (auto& e : index.entries) {
        in.get_array(e.fp.v.data(), kFingerprintDim);
        e.song_id = in.get<std::uint32_t>();
        e.offset = in.get<std::uint32_t>();
    }
    if (!in.at_end()) throw Error("trailing bytes in CHIX file");
    return index;
}

inline void save_index(const CoarseIndex& index, const std::string& path) {
    io::Writer w;
    const auto bytes = serialize_index(index);
    w.put_array(bytes.data(), bytes.size());
    w.save(path);
}

inline CoarseIndex load_index(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open: " + path);
    return deserialize_index({std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()});
}

// ---------------------------------------------------------------------------
// Database.

struct Database {
    std::vector<SongRecord> songs;
    std::optional<CoarseIndex> short_index;
    std::optional<CoarseIndex> long_index;
    std::string encoder_identity;

    const std::optional<CoarseIndex>& index(Profile p) const { return p == Profile::short_window ? short_index : long_index; }
    std::optional<CoarseIndex>& index(Profile p) { return p == Profile::short_window ? short_index : long_index; }
    bool has_profile(Profile p) const { return p != Profile::custom && index(p).has_value(); }

    std::unordered_map<std::uint32_t, std::size_t> positions() const {
        std::unordered_map<std::uint32_t, std::size_t> pos;
        for (std::size_t i = 0; i < songs.size(); ++i) pos.emplace(songs[i].song_id, i);
        return pos;
    }
};

struct DatabaseOptions {
    std::vector<Profile> profiles = {Profile::short_window, Profile::long_window};
    IndexOptions index;
};

inline Database build_database(std::vector<SongRecord> songs, std::string encoder_identity, const DatabaseOptions& opts = {}) {
    if (songs.empty()) throw Error("empty database");
    Database db;
    db.songs = std::move(songs);
    db.encoder_identity = std::move(encoder_identity);
    for (std::size_t i = 0; i < db.songs.size(); ++i)
        for (std::size_t j = 0; j < i; ++j)
            if (db.songs[i].song_id == db.songs[j].song_id) throw Error("duplicate song id " + std::to_string(db.songs[i].song_id));
    for (Profile p : opts.profiles) db.index(p) = build_index(db.songs, p, opts.index);
    return db;
}

/// Layout: <dir>/db.json, and per built profile <dir>/<profile>/index.chix,
/// <dir>/<profile>/songs.json and <dir>/<profile>/fp/<song_id>.chfp.
inline void save_database(const Database& db, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json meta;
    meta["format"] = "qbh-db";
    meta["version"] = 1;
    meta["encoder"] = db.encoder_identity;
    meta["profiles"] = nlohmann::json::array();
    for (Profile p : {Profile::short_window, Profile::long_window}) {
        if (!db.has_profile(p)) continue;
        const std::string name(profile_name(p));
        meta["profiles"].push_back(name);
        fs::create_directories(dir / name / "fp");
        save_index(*db.index(p), (dir / name / "index.chix").string());
        nlohmann::json registry = nlohmann::json::array();
        for (const auto& s : db.songs) {
            const std::string rel = "fp/" + std::to_string(s.song_id) + ".chfp";
            save_fingerprints(s.prints(p), (dir / name / rel).string());
            registry.push_back({{"song_id", s.song_id}, {"title", s.title}, {"duration_s", s.duration_s}, {"fingerprint_file", rel}});
        }
        std::ofstream(dir / name / "songs.json") << registry.dump(2) << '\n';
    }
    std::ofstream(dir / "db.json") << meta.dump(2) << '\n';
}

namespace detail {

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open: " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error("malformed JSON in " + path.string() + ": " + e.what());
    }
}

inline Profile parse_profile(std::string_view s) {
    if (s == "short") return Profile::short_window;
    if (s == "long") return Profile::long_window;
    throw Error("unknown profile: " + std::string(s));
}

} // namespace detail

inline Database load_database(const std::filesystem::path& dir) {
    const auto meta = detail::read_json_file(dir / "db.json");
    if (meta.value("format", "") != "qbh-db") throw Error("not a database directory: " + dir.string());
    Database db;
    db.encoder_identity = meta.value("encoder", "");
    bool first = true;
    for (const auto& pname : meta.at("profiles")) {
        const Profile p = detail::parse_profile(pname.get<std::string>());
        const auto base = dir / pname.get<std::string>();
        db.index(p) = load_index((base / "index.chix").string());
        const auto registry = detail::read_json_file(base / "songs.json");
        if (first) {
            for (const auto& r : registry) {
                SongRecord s;
                s.song_id = r.at("song_id").get<std::uint32_t>();
                s.title = r.at("title").get<std::string>();
                s.duration_s = r.at("duration_s").get<double>();
                db.songs.push_back(std::move(s));
            }
        }
        if (registry.size() != db.songs.size()) throw Error("song registries disagree between profiles");
        for (std::size_t i = 0; i < registry.size(); ++i) {
            if (registry[i].at("song_id").get<std::uint32_t>() != db.songs[i].song_id) throw Error("song registries disagree between profiles");
            db.songs[i].prints(p) = load_fingerprints((base / registry[i].at("fingerprint_file").get<std::string>()).string());
            db.songs[i].prints(p).config = EncoderConfig::for_profile(p);
        }
        first = false;
    }
    if (db.songs.empty()) throw Error("empty database");
    return db;
}

// ---------------------------------------------------------------------------
// Query.

inline constexpr double kFusedBoundarySeconds = 15.0;

/// Short windows for queries under 15 s, long windows otherwise.
inline Profile fused_profile(double duration_s) { return duration_s < kFusedBoundarySeconds ? Profile::short_window : Profile::long_window; }

struct QueryOptions {
    std::size_t top_k = 5000;
    std::size_t nprobe = 0;     // 0 = index default
    std::size_t n_results = 10; // 0 = every scored song
    int max_transpose = 2;      // query encoded at feature shifts -n..n semitones
    std::size_t slack = 2;      // extra offsets either side of each suggested alignment
    std::optional<Profile> profile; // overrides the fused rule
    unsigned threads = 1;
};

struct RankedSong {
    std::uint32_t song_id = 0;
    double score = 0.0;
    std::size_t offset = 0;
    int transpose = 0;

    bool operator==(const RankedSong&) const = default;
};

struct QueryResult {
    Profile profile = Profile::short_window;
    std::vector<RankedSong> ranking;
    double encode_s = 0.0;
    double ann_s = 0.0;
    double rerank_s = 0.0;
    std::size_t candidates = 0; // (song, offset, transpose) blocks scored by Pearson
};

struct EncodedQuery {
    Profile profile = Profile::short_window;
    std::vector<int> transpositions;
    std::vector<FingerprintSequence> sequences; // one per transposition
};

inline EncodedQuery encode_query(const Waveform& query, const Encoder& encoder, const QueryOptions& opts = {}) {
    detail::require(opts.max_transpose >= 0 && opts.max_transpose <= 4, "max_transpose must lie in [0, 4]");
    const Waveform w = query.sample_rate == kEngineSampleRate ? query : resample(query, kEngineSampleRate);
    EncodedQuery q;
    q.profile = opts.profile.value_or(fused_profile(w.duration_s()));
    const auto config = EncoderConfig::for_profile(q.profile);
    if (w.size() < CqtParams::kHop) throw Error("query too short");
    const auto features = cqt(w);
    if (features.frames < config.window_frames) throw Error("query too short");
    for (int t = -opts.max_transpose; t <= opts.max_transpose; ++t) {
        q.transpositions.push_back(t);
        const auto shifted = t == 0 ? features : augment_pitch_shift(features, static_cast<double>(t));
        q.sequences.push_back(encode_sequence(shifted, config, encoder, "query", opts.threads));
    }
    return q;
}

namespace detail {

inline void check_query_db(const Database& db, Profile profile) {
    if (db.songs.empty()) throw Error("empty database");
    if (!db.has_profile(profile)) throw Error("encoder profile mismatch: database has no " + std::string(profile_name(profile)) + " index");
}

inline std::vector<RankedSong> finish_ranking(std::vector<RankedSong> ranked, std::size_t n_results) {
    std::sort(ranked.begin(), ranked.end(), [](const RankedSong& a, const RankedSong& b) {
        return a.score != b.score ? a.score > b.score : a.song_id < b.song_id;
    });
    if (n_results && ranked.size() > n_results) ranked.resize(n_results);
    return ranked;
}

using Clock = std::chrono::steady_clock;
inline double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

} // namespace detail

/// Two-step search on an encoded query: every query fingerprint pulls its
/// top_k nearest entries; a hit on (song, j) from query window i proposes the
/// alignment j - i, widened by `slack`; proposals are rescored with Pearson
/// and each song keeps its best score.
inline QueryResult search_encoded(const Database& db, const EncodedQuery& q, const QueryOptions& opts = {}) {
    detail::check_query_db(db, q.profile);
    const auto& index = *db.index(q.profile);
    const std::size_t nprobe = opts.nprobe ? std::min(opts.nprobe, index.nlist()) : index.default_nprobe();
    QueryResult result;
    result.profile = q.profile;
    const std::size_t n_t = q.sequences.size();
    const std::size_t n_songs = db.songs.size();

    // ANN step: per transposition and song, a bitmap of proposed offsets.
    const auto positions = db.positions();
    auto t0 = detail::Clock::now();
    std::vector<std::vector<std::vector<char>>> proposals(n_t, std::vector<std::vector<char>>(n_songs));
    for (std::size_t t = 0; t < n_t; ++t) {
        const auto& seq = q.sequences[t];
        std::vector<std::vector<Neighbor>> hits(seq.size());
        parallel_for(seq.size(), opts.threads, [&](std::size_t i) { hits[i] = ann_search(index, seq[i], opts.top_k, nprobe); });
        for (std::size_t i = 0; i < seq.size(); ++i) {
            for (const auto& h : hits[i]) {
                const auto found = positions.find(h.song_id);
                if (found == positions.end()) continue;
                const std::size_t pos = found->second;
                const auto& song = db.songs[pos].prints(q.profile);
                if (song.size() < seq.size()) continue;
                const long last = static_cast<long>(song.size() - seq.size());
                auto& bits = proposals[t][pos];
                if (bits.empty()) bits.assign(static_cast<std::size_t>(last + 1), 0);
                const long centre = static_cast<long>(h.offset) - static_cast<long>(i);
                const long lo = std::clamp(centre - static_cast<long>(opts.slack), 0L, last);
                const long hi = std::clamp(centre + static_cast<long>(opts.slack), 0L, last);
                for (long o = lo; o <= hi; ++o) bits[static_cast<std::size_t>(o)] = 1;
            }
        }
    }
    result.ann_s = detail::seconds_since(t0);

    // Rerank step.
    t0 = detail::Clock::now();
    std::vector<RankedSong> best(n_songs);
    std::vector<char> scored(n_songs, 0);
    std::vector<std::size_t> evaluated(n_songs, 0);
    parallel_for(n_songs, opts.threads, [&](std::size_t s) {
        for (std::size_t t = 0; t < n_t; ++t) {
            const auto& bits = proposals[t][s];
            if (bits.empty()) continue;
            std::vector<std::size_t> offsets;
            for (std::size_t o = 0; o < bits.size(); ++o)
                if (bits[o]) offsets.push_back(o);
            evaluated[s] += offsets.size();
            const auto m = PearsonScorer(q.sequences[t], db.songs[s].prints(q.profile)).best_of(offsets);
            if (m.valid && (!scored[s] || m.score > best[s].score)) {
                best[s] = {db.songs[s].song_id, m.score, m.offset, q.transpositions[t]};
                scored[s] = 1;
            }
        }
    });
    std::vector<RankedSong> ranked;
    for (std::size_t s = 0; s < n_songs; ++s) {
        result.candidates += evaluated[s];
        if (scored[s]) ranked.push_back(best[s]);
    }
    result.ranking = detail::finish_ranking(std::move(ranked), opts.n_results);
    result.rerank_s = detail::seconds_since(t0);
    return result;
}

inline QueryResult query_song(const Database& db, const Waveform& query, const Encoder& encoder, const QueryOptions& opts = {}) {
    if (db.songs.empty()) throw Error("empty database");
    const auto t0 = detail::Clock::now();
    const auto q = encode_query(query, encoder, opts);
    const double encode_s = detail::seconds_since(t0);
    auto result = search_encoded(db, q, opts);
    result.encode_s = encode_s;
    return result;
}

/// Reference search: every offset of every song at every transposition.
inline QueryResult search_exhaustive(const Database& db, const EncodedQuery& q, std::size_t n_results = 0) {
    detail::check_query_db(db, q.profile);
    QueryResult result;
    result.profile = q.profile;
    const auto t0 = detail::Clock::now();
    std::vector<RankedSong> ranked;
    for (const auto& song : db.songs) {
        const auto& prints = song.prints(q.profile);
        std::optional<RankedSong> best;
        for (std::size_t t = 0; t < q.sequences.size(); ++t) {
            if (prints.size() < q.sequences[t].size()) continue;
            const PearsonScorer scorer(q.sequences[t], prints);
            result.candidates += scorer.offset_count();
            const auto m = scorer.best();
            if (m.valid && (!best || m.score > best->score)) best = RankedSong{song.song_id, m.score, m.offset, q.transpositions[t]};
        }
        if (best) ranked.push_back(*best);
    }
    result.ranking = detail::finish_ranking(std::move(ranked), n_results);
    result.rerank_s = detail::seconds_since(t0);
    return result;
}

// ---------------------------------------------------------------------------
// Evaluation and timing.

/// Fraction of queries whose true song ranks within the first n results.
inline double top_n_hit_rate(const std::map<std::string, std::vector<std::uint32_t>>& results, const std::map<std::string, std::uint32_t>& truth,
                             std::size_t n) {
    if (results.empty()) throw Error("no queries to evaluate");
    std::size_t hits = 0;
    for (const auto& [query, ranked] : results) {
        const auto it = truth.find(query);
        if (it == truth.end()) throw Error("missing truth entry for query " + query);
        const std::size_t limit = std::min(n, ranked.size());
        if (std::find(ranked.begin(), ranked.begin() + static_cast<long>(limit), it->second) != ranked.begin() + static_cast<long>(limit)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(results.size());
}

inline std::vector<std::uint32_t> ranked_ids(const QueryResult& r) {
    std::vector<std::uint32_t> ids;
    for (const auto& s : r.ranking) ids.push_back(s.song_id);
    return ids;
}

struct BenchRow {
    std::string step;
    double mean_s = 0.0;
    double std_s = 0.0;
};

struct BenchResult {
    std::vector<BenchRow> rows; // ann, rerank
    std::vector<double> ann_s, rerank_s, total_s;
    std::vector<std::size_t> candidates;
};

namespace detail {

inline BenchRow summarize(std::string step, const std::vector<double>& xs) {
    BenchRow row{std::move(step), 0.0, 0.0};
    if (xs.empty()) return row;
    for (double x : xs) row.mean_s += x;
    row.mean_s /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - row.mean_s) * (x - row.mean_s);
    row.std_s = std::sqrt(var / static_cast<double>(xs.size()));
    return row;
}

} // namespace detail

/// Times each query `repetitions` times; encoding happens once per query and
/// is excluded from the table.
inline BenchResult bench_query(const Database& db, const std::vector<Waveform>& queries, const Encoder& encoder, std::size_t repetitions,
                               const QueryOptions& opts = {}) {
    if (queries.empty()) throw Error("bench needs at least one query");
    detail::require(repetitions >= 1, "repetitions must be >= 1");
    BenchResult out;
    for (const auto& q : queries) {
        const auto encoded = encode_query(q, encoder, opts);
        for (std::size_t r = 0; r < repetitions; ++r) {
            const auto t0 = detail::Clock::now();
            const auto res = search_encoded(db, encoded, opts);
            out.total_s.push_back(detail::seconds_since(t0));
            out.ann_s.push_back(res.ann_s);
            out.rerank_s.push_back(res.rerank_s);
            out.candidates.push_back(res.candidates);
        }
    }
    out.rows = {detail::summarize("ann", out.ann_s), detail::summarize("rerank", out.rerank_s)};
    return out;
}

inline void write_bench_csv(const BenchResult& bench, std::ostream& os) {
    os << "step,mean_s,std_s\n";
    for (const auto& r : bench.rows) os << r.step << ',' << r.mean_s << ',' << r.std_s << '\n';
}

} // namespace qbh
