#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qbh/audio.hpp"
#include "qbh/cqt.hpp"
#include "qbh/error.hpp"
#include "qbh/fingerprint.hpp"
#include "qbh/matching.hpp"
#include "qbh/parallel.hpp"

// Aligned-fragment extraction: split an original song at silences, keep the
// fragments that do not repeat each other, then locate each fragment inside
// every cover by cross-correlating fingerprint sequences.

namespace qbh {

struct PipelineConfig {
    double d_min = 8.0;
    double d_max = 20.0;
    std::vector<double> pause_set = {0.5, 1.0, 1.5};
    std::vector<double> db_set = {52.0, 56.0, 60.0, 64.0, 68.0};
    double alpha_corr = 0.8;
    double beta_rel = 0.5;
    double beta_irrel = 0.3;

    void validate() const {
        const auto unit = [](double x) { return x >= 0.0 && x <= 1.0; };
        detail::require(d_min > 0.0 && d_min < d_max, "config requires 0 < d_min < d_max");
        detail::require(!pause_set.empty() && !db_set.empty(), "pause_set and db_set must be non-empty");
        detail::require(std::all_of(pause_set.begin(), pause_set.end(), [](double p) { return p >= 0.0; }), "pauses must be non-negative");
        detail::require(std::all_of(db_set.begin(), db_set.end(), [](double d) { return d > 0.0; }), "db levels must be positive");
        detail::require(unit(alpha_corr) && unit(beta_rel) && unit(beta_irrel), "thresholds must lie in [0, 1]");
        detail::require(beta_irrel < beta_rel, "config requires beta_irrel < beta_rel");
    }
};

enum class Role : std::uint8_t { original, cover, humming };

inline std::string_view role_name(Role r) {
    switch (r) {
    case Role::original: return "original";
    case Role::cover: return "cover";
    case Role::humming: return "humming";
    }
    return "original";
}

inline Role parse_role(std::string_view s) {
    if (s == "original") return Role::original;
    if (s == "cover") return Role::cover;
    if (s == "humming") return Role::humming;
    throw Error("unknown fragment role: " + std::string(s));
}

struct Fragment {
    std::string source_id;
    double start_s = 0.0;
    double end_s = 0.0;
    Role role = Role::original;

    double duration() const { return end_s - start_s; }
    bool operator==(const Fragment&) const = default;
};

using FragmentSet = std::vector<Fragment>;

enum class MatchStatus : std::uint8_t { relevant, uncertain, discarded };

inline std::string_view status_name(MatchStatus s) {
    switch (s) {
    case MatchStatus::relevant: return "relevant";
    case MatchStatus::uncertain: return "uncertain";
    case MatchStatus::discarded: return "discarded";
    }
    return "discarded";
}

struct Match {
    Fragment fragment;
    double correlation = 0.0;
    MatchStatus status = MatchStatus::discarded;
};

struct AlignedGroup {
    Fragment original;
    std::vector<Match> matches; // relevant and uncertain only
};

struct SilenceMask {
    std::vector<bool> silent;
    std::size_t frame_length = 2048;
    std::size_t hop = 512;
    double sample_rate = kEngineSampleRate;

    std::size_t size() const { return silent.size(); }
};

// ---------------------------------------------------------------------------
// Fragmentation.

/// Frame t is silent when it sits more than l_db below the loudest frame.
inline SilenceMask find_silence_mask(const RmsEnvelope& env, double l_db) {
    SilenceMask mask;
    mask.frame_length = env.frame_length;
    mask.hop = env.hop;
    mask.sample_rate = env.sample_rate;
    mask.silent.assign(env.values.size(), true);
    const double peak = env.values.empty() ? 0.0 : *std::max_element(env.values.begin(), env.values.end());
    if (!(peak > 0.0)) return mask;
    for (std::size_t t = 0; t < env.values.size(); ++t) {
        const double v = env.values[t];
        mask.silent[t] = !(v > 0.0) || 20.0 * std::log10(v / peak) < -l_db;
    }
    return mask;
}

/// Runs of non-silent frames become spans reaching half a hop either side of
/// the first and last frame centers, clamped to the waveform.
inline FragmentSet split_by_silence(const Waveform& w, const SilenceMask& mask, const std::string& source_id = {}) {
    FragmentSet out;
    const double hop = static_cast<double>(mask.hop);
    const double half_frame = static_cast<double>(mask.frame_length) / 2.0;
    const double len = static_cast<double>(w.size());
    const auto to_s = [&](double samples) { return std::clamp(samples, 0.0, len) / w.sample_rate; };
    std::size_t t = 0;
    while (t < mask.size()) {
        if (mask.silent[t]) {
            ++t;
            continue;
        }
        const std::size_t first = t;
        while (t < mask.size() && !mask.silent[t]) ++t;
        const double lo = static_cast<double>(first) * hop + half_frame - hop / 2.0;
        const double hi = static_cast<double>(t - 1) * hop + half_frame + hop / 2.0;
        // A run touching either end of the mask extends to the signal edge.
        const double start = first == 0 ? 0.0 : lo;
        const double end = t == mask.size() ? len : hi;
        out.push_back({source_id, to_s(start), to_s(end), Role::original});
    }
    return out;
}

/// Greedy left-to-right merge across pauses shorter than d_p, never growing a
/// fragment past d_max; survivors outside [d_min, d_max] are dropped.
inline FragmentSet merge_fragments(const FragmentSet& frags, double d_p, double d_min, double d_max) {
    FragmentSet merged;
    for (const auto& f : frags) {
        if (!merged.empty()) {
            auto& cur = merged.back();
            if (f.start_s - cur.end_s < d_p && f.end_s - cur.start_s <= d_max) {
                cur.end_s = f.end_s;
                continue;
            }
        }
        merged.push_back(f);
    }
    std::erase_if(merged, [&](const Fragment& f) { return f.duration() < d_min || f.duration() > d_max; });
    return merged;
}

// ---------------------------------------------------------------------------
// Fragment fingerprints and deduplication.

inline std::pair<std::size_t, std::size_t> fragment_frame_range(const Fragment& f, const FeatureMatrix& features) {
    const auto to_frame = [&](double s) {
        return static_cast<std::size_t>(std::clamp<long long>(std::llround(s * features.frame_rate), 0, static_cast<long long>(features.frames)));
    };
    const std::size_t a = to_frame(f.start_s), b = to_frame(f.end_s);
    return {a, b > a ? b - a : 0};
}

/// Fingerprints of a fragment, cut from the features of its whole recording.
inline FingerprintSequence fragment_prints(const Fragment& f, const FeatureMatrix& features, const EncoderConfig& config,
                                           const Encoder& encoder, unsigned threads = 1) {
    const auto [first, count] = fragment_frame_range(f, features);
    return encode_sequence(features.slice_frames(first, count), config, encoder, f.source_id, threads);
}

/// Symmetric matrix of maximum cross-correlations; the diagonal is 1.
inline std::vector<std::vector<double>> build_correlation_matrix(const std::vector<FingerprintSequence>& prints) {
    const std::size_t n = prints.size();
    std::vector<std::vector<double>> m(n, std::vector<double>(n, 1.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) m[i][j] = m[j][i] = max_cross_correlation(prints[i], prints[j]);
    return m;
}

/// Chronological greedy pass: an item is kept when its correlation with every
/// item kept so far is at most alpha. Returns kept indices.
inline std::vector<std::size_t> find_unique_fragments(const std::vector<std::vector<double>>& corr, double alpha) {
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < corr.size(); ++i) {
        const bool unique = std::all_of(kept.begin(), kept.end(), [&](std::size_t k) { return corr[i][k] <= alpha; });
        if (unique) kept.push_back(i);
    }
    return kept;
}

inline FragmentSet dedup_fragments(const FragmentSet& frags, const std::vector<FingerprintSequence>& prints, double alpha) {
    detail::require(frags.size() == prints.size(), "one fingerprint sequence per fragment required");
    FragmentSet out;
    for (std::size_t i : find_unique_fragments(build_correlation_matrix(prints), alpha)) out.push_back(frags[i]);
    return out;
}

struct FragmentationResult {
    FragmentSet fragments;
    std::vector<FingerprintSequence> prints; // parallel to fragments
    double d_p = 0.0;
    double l_db = 0.0;
    std::vector<std::size_t> counts; // unique fragments per combination, pause-major
};

struct FragmentationInput {
    const Waveform* wave = nullptr;
    const FeatureMatrix* features = nullptr; // CQT of *wave
    std::string source_id;
};

/// Grid search over pause lengths and silence levels, in ascending order, for
/// the combination yielding the most unique fragments; ties keep the earlier one.
inline FragmentationResult best_fragmentation(const FragmentationInput& in, const PipelineConfig& config, const EncoderConfig& enc_config,
                                              const Encoder& encoder, unsigned threads = 1) {
    config.validate();
    detail::require(in.wave && in.features, "fragmentation input incomplete");
    FragmentationResult best;
    best.d_p = config.pause_set.front();
    best.l_db = config.db_set.front();
    const Waveform& w = *in.wave;
    if (w.size() < 2048) {
        best.counts.assign(config.pause_set.size() * config.db_set.size(), 0);
        return best;
    }
    const auto env = rms_envelope(w);

    std::map<std::pair<double, double>, FingerprintSequence> cache;
    const auto prints_for = [&](const Fragment& f) -> const FingerprintSequence& {
        const auto key = std::make_pair(f.start_s, f.end_s);
        auto it = cache.find(key);
        if (it == cache.end()) it = cache.emplace(key, fragment_prints(f, *in.features, enc_config, encoder, threads)).first;
        return it->second;
    };

    bool have = false;
    for (double d_p : config.pause_set) {
        for (double l_db : config.db_set) {
            const auto spans = merge_fragments(split_by_silence(w, find_silence_mask(env, l_db), in.source_id), d_p, config.d_min, config.d_max);
            std::vector<FingerprintSequence> prints;
            prints.reserve(spans.size());
            for (const auto& f : spans) prints.push_back(prints_for(f));
            const auto kept = find_unique_fragments(build_correlation_matrix(prints), config.alpha_corr);
            best.counts.push_back(kept.size());
            if (!have || kept.size() > best.fragments.size()) {
                have = true;
                best.fragments.clear();
                best.prints.clear();
                for (std::size_t i : kept) {
                    best.fragments.push_back(spans[i]);
                    best.prints.push_back(prints[i]);
                }
                best.d_p = d_p;
                best.l_db = l_db;
            }
        }
    }
    return best;
}

inline FragmentationResult best_fragmentation(const Waveform& w, const PipelineConfig& config, const EncoderConfig& enc_config,
                                              const Encoder& encoder, std::string source_id = "original", unsigned threads = 1) {
    if (w.size() < CqtParams::kHop) {
        FragmentationResult r;
        r.d_p = config.pause_set.front();
        r.l_db = config.db_set.front();
        r.counts.assign(config.pause_set.size() * config.db_set.size(), 0);
        return r;
    }
    const auto features = cqt(w);
    return best_fragmentation({&w, &features, std::move(source_id)}, config, enc_config, encoder, threads);
}

// ---------------------------------------------------------------------------
// Matching fragments into covers.

struct CoverRecording {
    std::string source_id;
    double duration_s = 0.0;
    FingerprintSequence prints;
};

inline CoverRecording prepare_cover(const Waveform& cover, const EncoderConfig& enc_config, const Encoder& encoder, std::string source_id,
                                    unsigned threads = 1) {
    CoverRecording rec;
    rec.source_id = std::move(source_id);
    rec.duration_s = cover.duration_s();
    const auto features = cqt(cover);
    if (features.frames >= enc_config.window_frames) rec.prints = encode_sequence(features, enc_config, encoder, rec.source_id, threads);
    return rec;
}

/// Candidate cover fragments: peaks of the contained correlation curve that
/// rise above beta_irrel, each as long as the original fragment.
inline std::vector<std::pair<Fragment, double>> match_cover(const Fragment& original, const FingerprintSequence& original_prints,
                                                            const CoverRecording& cover, const PipelineConfig& config) {
    if (cover.duration_s < original.duration() || cover.prints.size() < original_prints.size())
        throw Error("cover shorter than fragment");
    const auto curve = seq_cross_correlation_contained(original_prints, cover.prints);
    const std::size_t sep = std::max<std::size_t>(1, original_prints.size() / 2);
    // Window 0 of the fragment starts on the frame nearest its start time.
    const double frame_rate = CqtParams::kFrameRate;
    const double lead = original.start_s - std::round(original.start_s * frame_rate) / frame_rate;
    std::vector<std::pair<Fragment, double>> out;
    for (const auto& p : detect_peaks(curve, config.beta_irrel, sep)) {
        if (!(p.score > config.beta_irrel)) continue;
        const double start = std::max(0.0, p.start_s + lead);
        out.push_back({Fragment{cover.source_id, start, start + original.duration(), Role::cover}, p.score});
    }
    return out;
}

inline std::vector<std::pair<Fragment, double>> match_cover(const Fragment& original, const FingerprintSequence& original_prints,
                                                            const Waveform& cover, const Encoder& encoder, const PipelineConfig& config,
                                                            const std::string& cover_id = "cover") {
    if (cover.duration_s() < original.duration()) throw Error("cover shorter than fragment");
    return match_cover(original, original_prints, prepare_cover(cover, original_prints.config, encoder, cover_id), config);
}

inline MatchStatus classify(double correlation, double beta_rel, double beta_irrel) {
    if (correlation >= beta_rel) return MatchStatus::relevant;
    if (correlation > beta_irrel) return MatchStatus::uncertain;
    return MatchStatus::discarded;
}

struct FilteredMatches {
    std::vector<Match> relevant;
    std::vector<Match> uncertain;
    std::vector<Match> discarded;
};

inline FilteredMatches filter_matches(const std::vector<std::pair<Fragment, double>>& candidates, double beta_rel, double beta_irrel) {
    FilteredMatches out;
    for (const auto& [frag, corr] : candidates) {
        const auto status = classify(corr, beta_rel, beta_irrel);
        Match m{frag, corr, status};
        switch (status) {
        case MatchStatus::relevant: out.relevant.push_back(std::move(m)); break;
        case MatchStatus::uncertain: out.uncertain.push_back(std::move(m)); break;
        case MatchStatus::discarded: out.discarded.push_back(std::move(m)); break;
        }
    }
    return out;
}

struct AlignOptions {
    EncoderConfig encoder_config = EncoderConfig::short_profile();
    std::string original_id = "original";
    std::vector<std::string> cover_ids; // defaults to cover0, cover1, ...
    unsigned threads = 1;
};

struct AlignResult {
    std::vector<AlignedGroup> groups;
    FragmentationResult fragmentation;
};

inline AlignResult align(const Waveform& original, const std::vector<Waveform>& covers, const PipelineConfig& config, const Encoder& encoder,
                         const AlignOptions& opts = {}) {
    config.validate();
    detail::require(!covers.empty(), "at least one cover required");
    detail::require(opts.cover_ids.empty() || opts.cover_ids.size() == covers.size(), "one id per cover required");
    AlignResult result;
    result.fragmentation = best_fragmentation(original, config, opts.encoder_config, encoder, opts.original_id, opts.threads);
    if (result.fragmentation.fragments.empty()) return result;

    std::vector<CoverRecording> recs(covers.size());
    parallel_for(covers.size(), opts.threads, [&](std::size_t c) {
        const std::string id = opts.cover_ids.empty() ? "cover" + std::to_string(c) : opts.cover_ids[c];
        recs[c] = prepare_cover(covers[c], opts.encoder_config, encoder, id);
    });

    const auto& frags = result.fragmentation.fragments;
    result.groups.resize(frags.size());
    parallel_for(frags.size(), opts.threads, [&](std::size_t g) {
        auto& group = result.groups[g];
        group.original = frags[g];
        for (const auto& rec : recs) {
            if (rec.duration_s < frags[g].duration() || rec.prints.size() < result.fragmentation.prints[g].size()) continue;
            auto kept = filter_matches(match_cover(frags[g], result.fragmentation.prints[g], rec, config), config.beta_rel, config.beta_irrel);
            for (auto& m : kept.relevant) group.matches.push_back(std::move(m));
            for (auto& m : kept.uncertain) group.matches.push_back(std::move(m));
        }
    });
    return result;
}

inline std::vector<AlignedGroup> extract_aligned_groups(const Waveform& original, const std::vector<Waveform>& covers, const PipelineConfig& config,
                                                        const Encoder& encoder, const AlignOptions& opts = {}) {
    return align(original, covers, config, encoder, opts).groups;
}

} // namespace qbh
