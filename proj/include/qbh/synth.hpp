#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "qbh/audio.hpp"
#include "qbh/cqt.hpp"
#include "qbh/error.hpp"
#include "qbh/metric_learning.hpp"

// Deterministic synthetic songs, covers and queries with exact ground truth.

namespace qbh::synth {

struct Note {
    double semitone = 36.0; // CQT bin index, 0 = C1
    double duration_s = 0.5;
};

struct MotifSpec {
    std::vector<Note> notes;
    double amplitude = 0.3;
    double ramp_s = 0.01; // attack and release per note

    double duration_s() const {
        double d = 0.0;
        for (const auto& n : notes) d += n.duration_s;
        return d;
    }
};

struct Span {
    double start_s = 0.0;
    double end_s = 0.0;
    double duration() const { return end_s - start_s; }
};

struct SynthSong {
    Waveform wave;
    std::vector<Span> boundaries;
    std::vector<MotifSpec> motifs;
};

/// Maps original time to cover time: cover_t = offset_s + scale * t.
struct OffsetMap {
    double offset_s = 0.0;
    double scale = 1.0;
    double operator()(double t) const { return offset_s + scale * t; }
};

struct CoverTransform {
    double shift_semitones = 0.0;
    double stretch_rate = 1.0; // output duration = input duration / rate
    double snr_db = std::numeric_limits<double>::infinity();
    double lead_silence_s = 0.0;
};

struct SynthCover {
    Waveform wave;
    CoverTransform transform;
    OffsetMap offset_map;
};

inline constexpr std::array<double, 3> kHarmonicGains = {1.0, 0.5, 0.25};

/// Sine tones with three decaying harmonics, one per note, back to back.
inline std::vector<float> render_motif(const MotifSpec& spec, double sample_rate, std::mt19937_64& rng) {
    for (const auto& n : spec.notes) {
        detail::require(n.duration_s > 0.0, "note durations must be positive");
        detail::require(n.semitone >= 0.0 && n.semitone < static_cast<double>(CqtParams::kBins), "note outside CQT range");
    }
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    std::vector<float> out;
    double t_acc = 0.0;
    std::size_t written = 0;
    for (const auto& n : spec.notes) {
        t_acc += n.duration_s;
        const auto end = static_cast<std::size_t>(std::llround(t_acc * sample_rate));
        const std::size_t len = end - written;
        const double f0 = CqtParams::bin_frequency(n.semitone);
        std::array<double, kHarmonicGains.size()> ph{};
        for (double& p : ph) p = phase(rng);
        const double ramp = std::max(1.0, spec.ramp_s * sample_rate);
        for (std::size_t i = 0; i < len; ++i) {
            const double t = static_cast<double>(i) / sample_rate;
            double v = 0.0;
            for (std::size_t h = 0; h < kHarmonicGains.size(); ++h) {
                const double f = f0 * static_cast<double>(h + 1);
                if (f < sample_rate / 2) v += kHarmonicGains[h] * std::sin(2.0 * std::numbers::pi * f * t + ph[h]);
            }
            const double env = std::min({1.0, (static_cast<double>(i) + 1.0) / ramp, static_cast<double>(len - i) / ramp});
            out.push_back(static_cast<float>(spec.amplitude * env * v / 1.75));
        }
        written = end;
    }
    return out;
}

/// Motifs separated by true silence. `gaps` holds one value per junction, or
/// a single value applied to every junction.
inline SynthSong synth_song(const std::vector<MotifSpec>& motifs, const std::vector<double>& gaps, std::uint64_t seed,
                            double sample_rate = kEngineSampleRate) {
    if (motifs.empty()) throw Error("synth_song needs at least one motif");
    const std::size_t junctions = motifs.size() - 1;
    detail::require(gaps.size() == junctions || gaps.size() == 1 || junctions == 0, "gap count must match motif junctions");
    std::mt19937_64 rng(seed);
    SynthSong song;
    song.motifs = motifs;
    song.wave.sample_rate = sample_rate;
    for (std::size_t m = 0; m < motifs.size(); ++m) {
        if (m > 0) {
            const double gap = gaps.size() == 1 ? gaps[0] : gaps[m - 1];
            detail::require(gap >= 0.0, "gaps must be non-negative");
            song.wave.samples.resize(song.wave.size() + static_cast<std::size_t>(std::llround(gap * sample_rate)), 0.0f);
        }
        const double start = song.wave.duration_s();
        const auto audio = render_motif(motifs[m], sample_rate, rng);
        song.wave.samples.insert(song.wave.samples.end(), audio.begin(), audio.end());
        song.boundaries.push_back({start, song.wave.duration_s()});
    }
    return song;
}

/// Notes drawn independently and uniformly from [low, high] with durations
/// from a small set; the last note is trimmed so the motif lasts exactly
/// duration_s. Independent draws keep unrelated motifs' pitch profiles apart.
inline MotifSpec random_motif(std::mt19937_64& rng, double duration_s, double low = 24.0, double high = 66.0) {
    detail::require(duration_s > 0.0 && low <= high, "random_motif needs duration > 0 and low <= high");
    static constexpr std::array<double, 4> kDurations = {0.25, 0.375, 0.5, 0.75};
    std::uniform_int_distribution<int> pitch(static_cast<int>(std::ceil(low)), static_cast<int>(std::floor(high)));
    std::uniform_int_distribution<std::size_t> dur(0, kDurations.size() - 1);
    MotifSpec spec;
    double total = 0.0;
    while (total < duration_s - 1e-9) {
        const double d = std::min(kDurations[dur(rng)], duration_s - total);
        spec.notes.push_back({static_cast<double>(pitch(rng)), d});
        total += d;
    }
    return spec;
}

// ---------------------------------------------------------------------------
// Covers.

namespace dsp {

/// WSOLA time-scale modification to exactly `target_len` samples.
inline std::vector<float> wsola(const std::vector<float>& x, std::size_t target_len) {
    if (x.empty() || target_len == 0) return std::vector<float>(target_len, 0.0f);
    if (target_len == x.size()) return x;
    constexpr long kFrame = 1024, kHop = kFrame / 2, kTolerance = 128;
    const double alpha = static_cast<double>(target_len) / static_cast<double>(x.size());
    const auto n_in = static_cast<long>(x.size());
    const auto sample = [&](long i) { return i >= 0 && i < n_in ? x[static_cast<std::size_t>(i)] : 0.0f; };

    std::vector<double> window(kFrame);
    for (long n = 0; n < kFrame; ++n) window[static_cast<std::size_t>(n)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / kFrame);

    std::vector<double> y(target_len + kFrame, 0.0);
    std::vector<double> wsum(target_len + kFrame, 0.0);
    long prev = -kHop; // frame k=0 starts half a frame before the signal
    const long frames = static_cast<long>(target_len) / kHop + 2;
    for (long k = 0; k < frames; ++k) {
        const long out_pos = k * kHop - kHop;
        const long nominal = static_cast<long>(std::llround(static_cast<double>(out_pos) / alpha));
        long best = nominal;
        if (k > 0) {
            const long natural = prev + kHop;
            double best_score = -std::numeric_limits<double>::infinity();
            for (long d = -kTolerance; d <= kTolerance; ++d) {
                const long cand = nominal + d;
                double score = 0.0;
                for (long n = 0; n < kFrame; n += 2) score += static_cast<double>(sample(cand + n)) * sample(natural + n);
                if (score > best_score) {
                    best_score = score;
                    best = cand;
                }
            }
        }
        for (long n = 0; n < kFrame; ++n) {
            const long o = out_pos + n;
            if (o < 0 || o >= static_cast<long>(target_len)) continue;
            y[static_cast<std::size_t>(o)] += window[static_cast<std::size_t>(n)] * sample(best + n);
            wsum[static_cast<std::size_t>(o)] += window[static_cast<std::size_t>(n)];
        }
        prev = best;
    }
    std::vector<float> out(target_len);
    for (std::size_t i = 0; i < target_len; ++i) out[i] = static_cast<float>(wsum[i] > 1e-6 ? y[i] / wsum[i] : 0.0);
    return out;
}

} // namespace dsp

/// Pitch shift by resampling (then reading at the original rate), WSOLA time
/// stretch to duration / rate, leading silence, then white noise at snr_db
/// relative to the transformed song. Neutral parameters reproduce the input.
inline SynthCover synth_cover(const Waveform& song, const CoverTransform& tr, std::uint64_t seed) {
    detail::require(std::abs(tr.shift_semitones) <= 4.0, "cover shift limited to [-4, 4] semitones");
    detail::require(tr.stretch_rate >= 0.8 && tr.stretch_rate <= 1.25, "cover stretch limited to [0.8, 1.25]");
    detail::require(tr.lead_silence_s >= 0.0, "lead silence must be non-negative");

    Waveform body = song;
    if (tr.shift_semitones != 0.0) {
        const double factor = std::exp2(tr.shift_semitones / 12.0);
        body = resample(song, song.sample_rate / factor);
        body.sample_rate = song.sample_rate;
    }
    const auto target = static_cast<std::size_t>(std::llround(static_cast<double>(song.size()) / tr.stretch_rate));
    body.samples = dsp::wsola(body.samples, target);

    SynthCover cover;
    cover.transform = tr;
    cover.offset_map = {tr.lead_silence_s, 1.0 / tr.stretch_rate};
    cover.wave.sample_rate = song.sample_rate;
    cover.wave.samples.assign(static_cast<std::size_t>(std::llround(tr.lead_silence_s * song.sample_rate)), 0.0f);
    const double body_rms = rms(body.samples);
    cover.wave.samples.insert(cover.wave.samples.end(), body.samples.begin(), body.samples.end());

    if (std::isfinite(tr.snr_db) && body_rms > 0.0) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        std::vector<float> noise(cover.wave.size());
        for (float& v : noise) v = static_cast<float>(normal(rng));
        const double g = mix_gain(body_rms, rms(noise), tr.snr_db);
        for (std::size_t i = 0; i < noise.size(); ++i)
            cover.wave.samples[i] = static_cast<float>(std::clamp(cover.wave.samples[i] + g * noise[i], -1.0, 1.0));
    }
    return cover;
}

// ---------------------------------------------------------------------------
// Corpora.

struct CorpusSpec {
    std::size_t n_songs = 10;
    std::size_t motifs_per_song = 3;
    double motif_duration_s = 10.0;
    double gap_s = 2.0;
    double low_semitone = 24.0;
    double high_semitone = 66.0;
    std::uint64_t seed = 1;
};

/// One song per index; song i is seeded from (spec.seed, i) so individual
/// songs can be regenerated without the rest of the corpus.
inline SynthSong corpus_song(const CorpusSpec& spec, std::size_t index) {
    std::mt19937_64 rng(spec.seed * 1000003ull + index);
    std::vector<MotifSpec> motifs;
    for (std::size_t m = 0; m < spec.motifs_per_song; ++m)
        motifs.push_back(random_motif(rng, spec.motif_duration_s, spec.low_semitone, spec.high_semitone));
    return synth_song(motifs, {spec.gap_s}, rng());
}

inline std::vector<SynthSong> generate_corpus(const CorpusSpec& spec) {
    std::vector<SynthSong> songs;
    songs.reserve(spec.n_songs);
    for (std::size_t i = 0; i < spec.n_songs; ++i) songs.push_back(corpus_song(spec, i));
    return songs;
}

} // namespace qbh::synth

namespace qbh::synth {

// ---------------------------------------------------------------------------
// Contrastive training data: one group per base motif, members being
// time-aligned variants of the motif's features.

struct ContrastiveSpec {
    std::size_t n_groups = 20;
    double motif_duration_s = 6.0;
    std::uint64_t seed = 1;
};

struct ContrastiveDataset {
    std::vector<FragmentGroup> groups;
    std::vector<FeatureMatrix> held_out; // one unseen variant per group, same frame count
};

namespace dsp {

inline FeatureMatrix fit_frames(const FeatureMatrix& m, std::size_t frames) {
    if (m.frames == frames) return m;
    FeatureMatrix out = m;
    out.frames = frames;
    out.data.assign(m.bins * frames, 0.0f);
    const std::size_t n = std::min(frames, m.frames);
    for (std::size_t b = 0; b < m.bins; ++b) std::copy_n(m.row(b).begin(), n, out.row(b).begin());
    return out;
}

} // namespace dsp

/// Members per group: the clean motif, feature-domain shifts of -2, -1, +1
/// and +2 semitones, a 0.95x/1.05x time stretch and a 10 dB noisy copy. The
/// held-out member is a fresh 15 dB noisy copy stretched by 0.97.
inline ContrastiveDataset contrastive_dataset(const ContrastiveSpec& spec) {
    detail::require(spec.n_groups >= 2, "contrastive dataset needs at least two groups");
    std::mt19937_64 rng(spec.seed);
    ContrastiveDataset ds;
    for (std::size_t g = 0; g < spec.n_groups; ++g) {
        const auto song = synth_song({random_motif(rng, spec.motif_duration_s)}, {}, rng());
        const auto base = cqt(song.wave);
        FragmentGroup group;
        group.group_id = static_cast<int>(g);
        group.members.push_back(base);
        for (double s : {-2.0, -1.0, 1.0, 2.0}) group.members.push_back(augment_pitch_shift(base, s));
        group.members.push_back(dsp::fit_frames(augment_time_stretch(base, g % 2 ? 1.05 : 0.95), base.frames));
        CoverTransform noisy;
        noisy.snr_db = 10.0;
        group.members.push_back(dsp::fit_frames(cqt(synth_cover(song.wave, noisy, rng()).wave), base.frames));
        ds.groups.push_back(std::move(group));

        CoverTransform held;
        held.snr_db = 15.0;
        held.stretch_rate = 0.97;
        ds.held_out.push_back(dsp::fit_frames(cqt(synth_cover(song.wave, held, rng()).wave), base.frames));
    }
    return ds;
}

} // namespace qbh::synth
