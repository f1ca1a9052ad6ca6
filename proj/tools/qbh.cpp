// qbh: command-line front end for synthesis, alignment, indexing and search.
//
// Exit codes: 0 success, 1 usage or I/O error, 2 success with an empty result.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qbh/qbh.hpp"

namespace fs = std::filesystem;
using namespace qbh;

namespace {

constexpr int kOk = 0;
constexpr int kFail = 1;
constexpr int kEmpty = 2;

struct Globals {
    std::string config_path;
    std::string profile = "fused";
    std::uint64_t seed = 0;
    bool seed_given = false;
    unsigned threads = 1;
    std::size_t top_k = 5000;
    std::size_t nprobe = 0;
};

std::optional<Profile> forced_profile(const std::string& name) {
    if (name == "short") return Profile::short_window;
    if (name == "long") return Profile::long_window;
    if (name == "fused") return std::nullopt;
    throw Error("unknown profile: " + name);
}

std::vector<Profile> index_profiles(const std::string& name) {
    if (name == "fused") return {Profile::short_window, Profile::long_window};
    return {*forced_profile(name)};
}

Waveform load_engine_audio(const std::string& path) {
    auto w = load_wav(path);
    return w.sample_rate == kEngineSampleRate ? w : resample(w, kEngineSampleRate);
}

std::vector<std::string> expand_wavs(const std::vector<std::string>& inputs) {
    std::vector<std::string> out;
    for (const auto& in : inputs) {
        if (fs::is_directory(in)) {
            std::vector<std::string> found;
            for (const auto& e : fs::directory_iterator(in))
                if (e.is_regular_file() && e.path().extension() == ".wav") found.push_back(e.path().string());
            std::sort(found.begin(), found.end());
            out.insert(out.end(), found.begin(), found.end());
        } else {
            out.push_back(in);
        }
    }
    return out;
}

std::string stem(const std::string& path) { return fs::path(path).stem().string(); }

std::string name_with_index(const std::string& prefix, std::size_t i, int width = 4) {
    std::ostringstream os;
    os << prefix << std::setw(width) << std::setfill('0') << i;
    return os.str();
}

// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string out = "synth_out";
    std::size_t songs = 10;
    std::size_t motifs = 3;
    double motif_s = 10.0;
    double gap_s = 2.0;
    std::size_t covers = 2;
    double cover_max_shift = 0.0;
    std::size_t queries = 10;
    double query_s = 10.0;
    double query_snr = 10.0;
};

int cmd_synth(const Globals& g, const SynthArgs& a) {
    detail::require(a.songs >= 1 && a.motifs >= 1, "synth needs at least one song and one motif");
    fs::create_directories(fs::path(a.out) / "songs");
    fs::create_directories(fs::path(a.out) / "covers");
    fs::create_directories(fs::path(a.out) / "queries");
    synth::CorpusSpec spec;
    spec.n_songs = a.songs;
    spec.motifs_per_song = a.motifs;
    spec.motif_duration_s = a.motif_s;
    spec.gap_s = a.gap_s;
    spec.seed = g.seed;

    std::mt19937_64 rng(g.seed ^ 0x5eed5eedULL);
    std::uniform_real_distribution<double> lead(1.0, 5.0), cover_rate(0.95, 1.05), query_rate(0.9, 1.1), unit(0.0, 1.0);
    std::uniform_int_distribution<int> cover_shift(-static_cast<int>(a.cover_max_shift), static_cast<int>(a.cover_max_shift));
    std::uniform_int_distribution<int> query_shift(-2, 2);

    Json truth = Json::array();
    std::vector<synth::SynthSong> songs;
    for (std::size_t i = 0; i < a.songs; ++i) {
        songs.push_back(synth::corpus_song(spec, i));
        const auto& song = songs.back();
        SongTruth t;
        t.song_id = static_cast<std::uint32_t>(i);
        t.file = "songs/" + name_with_index("song_", i) + ".wav";
        t.boundaries = song.boundaries;
        save_wav(song.wave, (fs::path(a.out) / t.file).string());
        for (std::size_t c = 0; c < a.covers; ++c) {
            synth::CoverTransform tr;
            tr.shift_semitones = cover_shift(rng);
            tr.stretch_rate = cover_rate(rng);
            tr.snr_db = 20.0;
            tr.lead_silence_s = lead(rng);
            const auto cover = synth::synth_cover(song.wave, tr, rng());
            CoverTruth ct{"covers/" + name_with_index("song_", i) + "_cover" + std::to_string(c) + ".wav", tr, cover.offset_map};
            save_wav(cover.wave, (fs::path(a.out) / ct.file).string());
            t.covers.push_back(ct);
        }
        truth.push_back(to_json(t));
    }
    write_json(truth, fs::path(a.out) / "truth.json");

    std::ofstream csv(fs::path(a.out) / "queries" / "truth.csv");
    csv << "query_path,song_id\n";
    for (std::size_t q = 0; q < a.queries; ++q) {
        const std::size_t sid = static_cast<std::size_t>(rng() % a.songs);
        const auto& wave = songs[sid].wave;
        const double room = std::max(0.0, wave.duration_s() - a.query_s);
        const double start = room * unit(rng);
        synth::CoverTransform tr;
        tr.shift_semitones = query_shift(rng);
        tr.stretch_rate = query_rate(rng);
        tr.snr_db = a.query_snr;
        const auto query = synth::synth_cover(slice(wave, start, start + a.query_s), tr, rng());
        const std::string file = name_with_index("q_", q) + ".wav";
        save_wav(query.wave, (fs::path(a.out) / "queries" / file).string());
        csv << file << ',' << sid << '\n';
    }
    std::cout << "songs=" << a.songs << " covers=" << a.songs * a.covers << " queries=" << a.queries << '\n';
    return kOk;
}

// ---------------------------------------------------------------------------

struct FeaturesArgs {
    std::string input;
    std::string out;
    std::string fingerprints;
};

int cmd_features(const Globals& g, const FeaturesArgs& a) {
    const auto w = load_engine_audio(a.input);
    const auto features = cqt(w);
    if (!a.out.empty()) save_features(features, a.out);
    std::cout << "bins=" << features.bins << " frames=" << features.frames << " frame_rate=" << features.frame_rate << '\n';
    if (!a.fingerprints.empty()) {
        const auto profile = forced_profile(g.profile).value_or(fused_profile(w.duration_s()));
        const BaselineEncoder encoder(g.seed);
        const auto seq = encode_sequence(features, EncoderConfig::for_profile(profile), encoder, stem(a.input), g.threads);
        save_fingerprints(seq, a.fingerprints);
        std::cout << "profile=" << profile_name(profile) << " fingerprints=" << seq.size() << '\n';
    }
    return kOk;
}

// ---------------------------------------------------------------------------

struct AlignArgs {
    std::string original;
    std::vector<std::string> covers;
    std::string out = "groups";
    std::string title;
    std::string author;
};

int cmd_align(const Globals& g, const AlignArgs& a) {
    const PipelineConfig config = g.config_path.empty() ? PipelineConfig{} : load_pipeline_config(g.config_path);
    if (a.covers.empty()) throw Error("align needs at least one cover");
    for (const auto& p : a.covers)
        if (!fs::is_regular_file(p)) throw Error("cover not found: " + p);
    const auto original = load_engine_audio(a.original);
    std::vector<Waveform> covers;
    AlignOptions opts;
    opts.original_id = stem(a.original);
    opts.threads = g.threads;
    for (const auto& p : a.covers) {
        covers.push_back(load_engine_audio(p));
        opts.cover_ids.push_back(stem(p));
    }
    const BaselineEncoder encoder(g.seed);
    const auto groups = extract_aligned_groups(original, covers, config, encoder, opts);

    std::map<std::string, SourceInfo> sources;
    sources[opts.original_id] = {a.title, a.author};
    fs::create_directories(a.out);
    std::size_t relevant = 0, uncertain = 0;
    for (std::size_t i = 0; i < groups.size(); ++i) {
        const std::string id = name_with_index("group_", i, 3);
        save_manifest(make_manifest(groups[i], id, sources), fs::path(a.out) / (id + ".json"));
        for (const auto& m : groups[i].matches) (m.status == MatchStatus::relevant ? relevant : uncertain)++;
    }
    std::cout << "groups=" << groups.size() << " relevant=" << relevant << " uncertain=" << uncertain << '\n';
    return groups.empty() ? kEmpty : kOk;
}

// ---------------------------------------------------------------------------

struct IndexArgs {
    std::vector<std::string> inputs;
    std::string out = "db";
    std::size_t nlist = 0;
};

int cmd_index(const Globals& g, const IndexArgs& a) {
    const auto files = expand_wavs(a.inputs);
    if (files.empty()) throw Error("empty database");
    const BaselineEncoder encoder(g.seed);
    std::vector<SongRecord> songs(files.size());
    parallel_for(files.size(), g.threads, [&](std::size_t i) {
        songs[i] = make_song_record(static_cast<std::uint32_t>(i), stem(files[i]), load_engine_audio(files[i]), encoder);
    });
    DatabaseOptions opts;
    opts.profiles = index_profiles(g.profile);
    opts.index.nlist = a.nlist;
    opts.index.seed = g.seed;
    opts.index.threads = g.threads;
    const auto db = build_database(std::move(songs), encoder.identity(), opts);
    save_database(db, a.out);
    std::cout << "songs=" << db.songs.size();
    for (Profile p : opts.profiles) std::cout << ' ' << profile_name(p) << "_entries=" << db.index(p)->size() << " nlist=" << db.index(p)->nlist();
    std::cout << '\n';
    return kOk;
}

// ---------------------------------------------------------------------------

struct QueryArgs {
    std::string db;
    std::string query;
    std::size_t results = 10;
    int transpose = 2;
};

BaselineEncoder encoder_for(const Database& db, const Globals& g) {
    const std::string prefix = "baseline-meanstd-v1:seed=";
    if (db.encoder_identity.rfind(prefix, 0) != 0) throw Error("database built with an unsupported encoder: " + db.encoder_identity);
    const std::uint64_t seed = std::stoull(db.encoder_identity.substr(prefix.size()));
    if (g.seed_given && g.seed != seed) throw Error("encoder mismatch: database seed " + std::to_string(seed) + ", requested " + std::to_string(g.seed));
    return BaselineEncoder(seed);
}

QueryOptions query_options(const Globals& g, std::size_t results, int transpose) {
    QueryOptions o;
    o.top_k = g.top_k;
    o.nprobe = g.nprobe;
    o.n_results = results;
    o.max_transpose = transpose;
    o.profile = forced_profile(g.profile);
    o.threads = g.threads;
    return o;
}

int cmd_query(const Globals& g, const QueryArgs& a) {
    const auto db = load_database(a.db);
    const auto encoder = encoder_for(db, g);
    const auto result = query_song(db, load_engine_audio(a.query), encoder, query_options(g, a.results, a.transpose));
    const auto pos = db.positions();
    std::cout << "rank,song_id,title,score\n";
    for (std::size_t r = 0; r < result.ranking.size(); ++r) {
        const auto& s = result.ranking[r];
        std::cout << r + 1 << ',' << s.song_id << ',' << db.songs[pos.at(s.song_id)].title << ',' << std::fixed << std::setprecision(6) << s.score
                  << '\n';
    }
    std::cerr << std::defaultfloat << "profile=" << profile_name(result.profile) << " encode_s=" << result.encode_s << " ann_s=" << result.ann_s
              << " rerank_s=" << result.rerank_s << " candidates=" << result.candidates << '\n';
    return result.ranking.empty() ? kEmpty : kOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string db;
    std::string truth;
    int transpose = 2;
};

std::vector<std::pair<std::string, std::uint32_t>> read_truth_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open: " + path);
    std::vector<std::pair<std::string, std::uint32_t>> rows;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (header) {
            header = false;
            if (line.rfind("query_path", 0) == 0) continue;
        }
        const auto comma = line.rfind(',');
        if (comma == std::string::npos) throw Error("malformed truth row: " + line);
        rows.emplace_back(line.substr(0, comma), static_cast<std::uint32_t>(std::stoul(line.substr(comma + 1))));
    }
    if (rows.empty()) throw Error("truth file lists no queries");
    return rows;
}

int cmd_eval(const Globals& g, const EvalArgs& a) {
    const auto db = load_database(a.db);
    const auto encoder = encoder_for(db, g);
    const auto rows = read_truth_csv(a.truth);
    const fs::path base = fs::path(a.truth).parent_path();
    std::map<std::string, std::vector<std::uint32_t>> results;
    std::map<std::string, std::uint32_t> truth;
    for (const auto& [rel, sid] : rows) {
        const fs::path p = fs::path(rel).is_absolute() ? fs::path(rel) : base / rel;
        const auto r = query_song(db, load_engine_audio(p.string()), encoder, query_options(g, 100, a.transpose));
        results[rel] = ranked_ids(r);
        truth[rel] = sid;
    }
    std::cout << "queries=" << rows.size() << '\n';
    for (std::size_t n : {1, 3, 5, 10, 100})
        std::cout << "Top-" << n << '=' << std::fixed << std::setprecision(4) << top_n_hit_rate(results, truth, n) << '\n';
    return kOk;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
    std::string db;
    std::vector<std::string> queries;
    std::size_t repetitions = 3;
    std::string out;
    int transpose = 2;
};

int cmd_bench(const Globals& g, const BenchArgs& a) {
    const auto db = load_database(a.db);
    const auto encoder = encoder_for(db, g);
    std::vector<Waveform> queries;
    for (const auto& f : expand_wavs(a.queries)) queries.push_back(load_engine_audio(f));
    const auto bench = bench_query(db, queries, encoder, a.repetitions, query_options(g, 10, a.transpose));
    write_bench_csv(bench, std::cout);
    if (!a.out.empty()) {
        std::ofstream out(a.out);
        if (!out) throw Error("cannot write: " + a.out);
        write_bench_csv(bench, out);
    }
    return kOk;
}

// ---------------------------------------------------------------------------

int cmd_selftest(const Globals& g) {
    int failures = 0;
    const auto check = [&](const std::string& name, bool ok) {
        std::cout << (ok ? "PASS " : "FAIL ") << name << '\n';
        failures += ok ? 0 : 1;
    };
    const BaselineEncoder encoder(g.seed);

    synth::CorpusSpec spec;
    spec.n_songs = 6;
    spec.seed = g.seed + 1;
    const auto songs = synth::generate_corpus(spec);

    synth::CoverTransform tr;
    tr.lead_silence_s = 3.0;
    tr.snr_db = 20.0;
    const auto cover = synth::synth_cover(songs[0].wave, tr, g.seed);
    const auto groups = extract_aligned_groups(songs[0].wave, {cover.wave}, PipelineConfig{}, encoder);
    check("align finds one group per motif", groups.size() == spec.motifs_per_song);
    bool offsets_ok = !groups.empty();
    for (const auto& grp : groups) {
        const double truth = cover.offset_map(grp.original.start_s);
        const bool hit = std::any_of(grp.matches.begin(), grp.matches.end(), [&](const Match& m) {
            return m.status == MatchStatus::relevant && std::abs(m.fragment.start_s - truth) <= 2 * EncoderConfig::short_profile().step_seconds();
        });
        offsets_ok = offsets_ok && hit;
    }
    check("align recovers cover offsets", offsets_ok);

    std::vector<SongRecord> records;
    for (std::size_t i = 0; i < songs.size(); ++i) records.push_back(make_song_record(static_cast<std::uint32_t>(i), "song", songs[i].wave, encoder));
    DatabaseOptions dopts;
    dopts.profiles = {Profile::short_window};
    const auto db = build_database(std::move(records), encoder.identity(), dopts);
    synth::CoverTransform qt;
    qt.shift_semitones = 1.0;
    qt.stretch_rate = 1.05;
    qt.snr_db = 10.0;
    const auto query = synth::synth_cover(slice(songs[3].wave, 5.0, 15.0), qt, g.seed + 7);
    const auto result = query_song(db, query.wave, encoder);
    check("query ranks the source song first", !result.ranking.empty() && result.ranking.front().song_id == 3);
    return failures == 0 ? kOk : kFail;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"qbh: aligned fragment extraction and fingerprint search for query-by-humming"};
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    app.add_option("--config", g.config_path, "pipeline config (JSON)");
    app.add_option("--profile", g.profile, "encoder profile")->check(CLI::IsMember({"short", "long", "fused"}));
    auto* seed_opt = app.add_option("--seed", g.seed, "random seed (synthesis, encoder, k-means)");
    app.add_option("--threads", g.threads, "worker thread cap")->check(CLI::Range(1u, 256u));
    app.add_option("--top-k", g.top_k, "nearest fingerprints per query window")->check(CLI::PositiveNumber);
    app.add_option("--nprobe", g.nprobe, "buckets scanned per search (0 = nlist/4)");

    SynthArgs synth_args;
    auto* synth_cmd = app.add_subcommand("synth", "write a synthetic corpus with covers, queries and ground truth");
    synth_cmd->add_option("--out", synth_args.out, "output directory");
    synth_cmd->add_option("--songs", synth_args.songs, "number of songs");
    synth_cmd->add_option("--motifs", synth_args.motifs, "motifs per song");
    synth_cmd->add_option("--motif-s", synth_args.motif_s, "motif duration in seconds");
    synth_cmd->add_option("--gap-s", synth_args.gap_s, "silence between motifs");
    synth_cmd->add_option("--covers", synth_args.covers, "covers per song");
    synth_cmd->add_option("--cover-max-shift", synth_args.cover_max_shift, "largest cover pitch shift in semitones")->check(CLI::Range(0.0, 4.0));
    synth_cmd->add_option("--queries", synth_args.queries, "number of queries");
    synth_cmd->add_option("--query-s", synth_args.query_s, "query duration in seconds");
    synth_cmd->add_option("--query-snr", synth_args.query_snr, "query SNR in dB");

    FeaturesArgs features_args;
    auto* features_cmd = app.add_subcommand("features", "compute the CQT (and optionally fingerprints) of a WAV file");
    features_cmd->add_option("input", features_args.input, "input WAV")->required();
    features_cmd->add_option("--out", features_args.out, "CHFM output file");
    features_cmd->add_option("--fingerprints", features_args.fingerprints, "CHFP output file");

    AlignArgs align_args;
    auto* align_cmd = app.add_subcommand("align", "extract aligned fragment groups from an original and its covers");
    align_cmd->add_option("--original", align_args.original, "original song WAV")->required();
    align_cmd->add_option("--covers", align_args.covers, "cover WAVs")->required();
    align_cmd->add_option("--out", align_args.out, "manifest directory");
    align_cmd->add_option("--title", align_args.title, "title of the original");
    align_cmd->add_option("--author", align_args.author, "author of the original");

    IndexArgs index_args;
    auto* index_cmd = app.add_subcommand("index", "fingerprint songs and build the search database");
    index_cmd->add_option("inputs", index_args.inputs, "song WAVs or directories")->required();
    index_cmd->add_option("--out", index_args.out, "database directory");
    index_cmd->add_option("--nlist", index_args.nlist, "coarse buckets (0 = sqrt of entries)");

    QueryArgs query_args;
    auto* query_cmd = app.add_subcommand("query", "rank database songs against a recording");
    query_cmd->add_option("--db", query_args.db, "database directory")->required();
    query_cmd->add_option("query", query_args.query, "query WAV")->required();
    query_cmd->add_option("--results", query_args.results, "rows to print");
    query_cmd->add_option("--transpose", query_args.transpose, "semitone search radius")->check(CLI::Range(0, 4));

    EvalArgs eval_args;
    auto* eval_cmd = app.add_subcommand("eval", "Top-n hit rates for a truth CSV (query_path,song_id)");
    eval_cmd->add_option("--db", eval_args.db, "database directory")->required();
    eval_cmd->add_option("truth", eval_args.truth, "truth CSV")->required();
    eval_cmd->add_option("--transpose", eval_args.transpose, "semitone search radius")->check(CLI::Range(0, 4));

    BenchArgs bench_args;
    auto* bench_cmd = app.add_subcommand("bench", "time the nearest-neighbour and rerank steps");
    bench_cmd->add_option("--db", bench_args.db, "database directory")->required();
    bench_cmd->add_option("queries", bench_args.queries, "query WAVs or directories")->required();
    bench_cmd->add_option("--reps", bench_args.repetitions, "repetitions per query")->check(CLI::PositiveNumber);
    bench_cmd->add_option("--out", bench_args.out, "CSV output file");
    bench_cmd->add_option("--transpose", bench_args.transpose, "semitone search radius")->check(CLI::Range(0, 4));

    auto* selftest_cmd = app.add_subcommand("selftest", "run a small end-to-end check");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kFail;
    }
    g.seed_given = seed_opt->count() > 0;

    try {
        if (*synth_cmd) return cmd_synth(g, synth_args);
        if (*features_cmd) return cmd_features(g, features_args);
        if (*align_cmd) return cmd_align(g, align_args);
        if (*index_cmd) return cmd_index(g, index_args);
        if (*query_cmd) return cmd_query(g, query_args);
        if (*eval_cmd) return cmd_eval(g, eval_args);
        if (*bench_cmd) return cmd_bench(g, bench_args);
        if (*selftest_cmd) return cmd_selftest(g);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFail;
    }
    return kFail;
}
