#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace qbh;
using namespace qbh::testing;

namespace {

RmsEnvelope envelope_of(std::vector<double> values) {
    RmsEnvelope e;
    e.values = std::move(values);
    return e;
}

Fragment span(double a, double b) { return {"x", a, b, Role::original}; }

synth::SynthSong motif_song(std::size_t motifs, double gap_s, std::uint64_t seed, double motif_s = 10.0) {
    std::mt19937_64 rng(seed);
    std::vector<synth::MotifSpec> specs;
    for (std::size_t i = 0; i < motifs; ++i) specs.push_back(synth::random_motif(rng, motif_s));
    return synth::synth_song(specs, {gap_s}, seed);
}

/// One unit of work of the grid search, written out step by step.
std::size_t unique_count(const Waveform& w, const FeatureMatrix& features, const PipelineConfig& c, double d_p, double l_db, const Encoder& enc) {
    const auto mask = find_silence_mask(rms_envelope(w), l_db);
    const auto spans = merge_fragments(split_by_silence(w, mask), d_p, c.d_min, c.d_max);
    std::vector<FingerprintSequence> prints;
    for (const auto& f : spans) prints.push_back(fragment_prints(f, features, EncoderConfig::short_profile(), enc));
    return dedup_fragments(spans, prints, c.alpha_corr).size();
}

} // namespace

// ---------------------------------------------------------------------------

TEST(Config, DefaultsAndValidation) {
    PipelineConfig c;
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(c.pause_set.size(), 3u);
    EXPECT_EQ(c.db_set.size(), 5u);
    c.beta_irrel = 0.6;
    EXPECT_THROW(c.validate(), Error);
    c = PipelineConfig{};
    c.d_min = 25.0;
    EXPECT_THROW(c.validate(), Error);
}

TEST(SilenceMask, Examples) {
    for (bool s : find_silence_mask(envelope_of({0, 0, 0}), 52).silent) EXPECT_TRUE(s);
    for (bool s : find_silence_mask(envelope_of({0.3, 0.3, 0.3}), 1).silent) EXPECT_FALSE(s);
    const auto m = find_silence_mask(envelope_of({1.0, 0.001}), 52);
    EXPECT_FALSE(m.silent[0]);
    EXPECT_TRUE(m.silent[1]);
    EXPECT_FALSE(find_silence_mask(envelope_of({1.0, 0.001}), 64).silent[1]);
}

TEST(Split, WholeAndEmpty) {
    const auto tone = sine(300.0, 2.0, 0.5);
    const auto all = split_by_silence(tone, find_silence_mask(rms_envelope(tone), 52));
    ASSERT_EQ(all.size(), 1u);
    EXPECT_EQ(all[0].start_s, 0.0);
    EXPECT_DOUBLE_EQ(all[0].end_s, 2.0);
    const auto quiet = silence(2.0);
    EXPECT_TRUE(split_by_silence(quiet, find_silence_mask(rms_envelope(quiet), 52)).empty());
}

TEST(Split, ThreeBurstsRecoverBoundaries) {
    const auto w = concat({silence(0.5), sine(220.0, 2.0, 0.5), silence(1.2), sine(330.0, 1.5, 0.5), silence(1.0), sine(440.0, 3.0, 0.5), silence(0.7)});
    const double truth[3][2] = {{0.5, 2.5}, {3.7, 5.2}, {6.2, 9.2}};
    const auto f = split_by_silence(w, find_silence_mask(rms_envelope(w), 52));
    ASSERT_EQ(f.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_NEAR(f[i].start_s, truth[i][0], 2048.0 / 16000.0);
        EXPECT_NEAR(f[i].end_s, truth[i][1], 2048.0 / 16000.0);
    }
}

TEST(Merge, Examples) {
    const FragmentSet two{span(0, 5), span(5.4, 11)};
    const auto merged = merge_fragments(two, 0.5, 8, 20);
    ASSERT_EQ(merged.size(), 1u);
    EXPECT_EQ(merged[0].start_s, 0.0);
    EXPECT_EQ(merged[0].end_s, 11.0);
    EXPECT_TRUE(merge_fragments(two, 0.3, 8, 20).empty());
    EXPECT_TRUE(merge_fragments({span(0, 25)}, 0.5, 8, 20).empty());
    // A merge that would pass d_max is skipped, leaving both parts.
    EXPECT_EQ(merge_fragments({span(0, 12), span(12.2, 24)}, 0.5, 8, 20).size(), 2u);
}

TEST(MergeProperty, OutputLengthsWithinBounds) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> len(0.5, 15.0), gap(0.0, 2.0), dp(0.0, 2.0);
    for (int trial = 0; trial < 1000; ++trial) {
        FragmentSet f;
        double t = gap(rng);
        for (int i = 0; i < 8; ++i) {
            const double l = len(rng);
            f.push_back(span(t, t + l));
            t += l + gap(rng);
        }
        const auto out = merge_fragments(f, dp(rng), 8.0, 20.0);
        for (std::size_t i = 0; i < out.size(); ++i) {
            ASSERT_GE(out[i].duration(), 8.0);
            ASSERT_LE(out[i].duration(), 20.0);
            if (i > 0) {
                ASSERT_GE(out[i].start_s, out[i - 1].end_s);
            }
        }
    }
}

TEST(Dedup, HandTracedMatrix) {
    const std::vector<std::vector<double>> corr{{1, 0.9, 0.5}, {0.9, 1, 0.9}, {0.5, 0.9, 1}};
    EXPECT_EQ(find_unique_fragments(corr, 0.8), (std::vector<std::size_t>{0, 2}));
    const std::vector<std::vector<double>> low{{1, 0.2, 0.8}, {0.2, 1, 0.1}, {0.8, 0.1, 1}};
    EXPECT_EQ(find_unique_fragments(low, 0.8), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(Dedup, DuplicateFragmentDropped) {
    std::mt19937_64 rng(2);
    const auto a = random_sequence(40, rng);
    const auto b = random_sequence(40, rng);
    const FragmentSet f{span(0, 10), span(12, 22), span(24, 34)};
    const auto kept = dedup_fragments(f, {a, b, a}, 0.8);
    ASSERT_EQ(kept.size(), 2u);
    EXPECT_EQ(kept[0], f[0]);
    EXPECT_EQ(kept[1], f[1]);
}

TEST(DedupProperty, Idempotent) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> n(1, 9);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t k = n(rng);
        std::vector<std::vector<double>> corr(k, std::vector<double>(k, 1.0));
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = i + 1; j < k; ++j) corr[i][j] = corr[j][i] = u(rng);
        const auto once = find_unique_fragments(corr, 0.8);
        std::vector<std::vector<double>> sub(once.size(), std::vector<double>(once.size()));
        for (std::size_t i = 0; i < once.size(); ++i)
            for (std::size_t j = 0; j < once.size(); ++j) sub[i][j] = corr[once[i]][once[j]];
        const auto twice = find_unique_fragments(sub, 0.8);
        ASSERT_EQ(twice.size(), once.size());
        for (std::size_t i = 0; i < twice.size(); ++i) ASSERT_EQ(twice[i], i);
    }
}

// ---------------------------------------------------------------------------

TEST(BestFragmentation, MatchesExhaustiveGrid) {
    const auto song = motif_song(5, 0.7, 21);
    const BaselineEncoder enc(0);
    const PipelineConfig c;
    const auto features = cqt(song.wave);
    const auto r = best_fragmentation({&song.wave, &features, "original"}, c, EncoderConfig::short_profile(), enc);

    std::vector<std::size_t> counts;
    std::size_t best = 0, best_idx = 0;
    for (double d_p : c.pause_set)
        for (double l_db : c.db_set) {
            counts.push_back(unique_count(song.wave, features, c, d_p, l_db, enc));
            if (counts.back() > best) {
                best = counts.back();
                best_idx = counts.size() - 1;
            }
        }
    EXPECT_EQ(r.counts, counts);
    EXPECT_EQ(r.fragments.size(), best);
    EXPECT_EQ(r.d_p, c.pause_set[best_idx / c.db_set.size()]);
    EXPECT_EQ(r.l_db, c.db_set[best_idx % c.db_set.size()]);
    ASSERT_EQ(r.fragments.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_NEAR(r.fragments[i].start_s, song.boundaries[i].start_s, 0.2);
        EXPECT_NEAR(r.fragments[i].end_s, song.boundaries[i].end_s, 0.2);
    }
}

TEST(BestFragmentation, SilenceAndTies) {
    const BaselineEncoder enc(0);
    const auto r = best_fragmentation(silence(30.0), PipelineConfig{}, EncoderConfig::short_profile(), enc);
    EXPECT_TRUE(r.fragments.empty());
    EXPECT_EQ(r.counts, std::vector<std::size_t>(15, 0));

    // Every combination finds the same 2 fragments: the first one is reported.
    const auto song = motif_song(2, 2.0, 5);
    PipelineConfig c;
    c.pause_set = {0.5, 1.0};
    c.db_set = {52, 60};
    const auto t = best_fragmentation(song.wave, c, EncoderConfig::short_profile(), enc);
    EXPECT_EQ(t.counts, (std::vector<std::size_t>{2, 2, 2, 2}));
    EXPECT_EQ(t.d_p, 0.5);
    EXPECT_EQ(t.l_db, 52.0);
}

// ---------------------------------------------------------------------------

TEST(MatchCover, PrependedSilence) {
    const auto song = motif_song(1, 0.0, 31, 12.0);
    const BaselineEncoder enc(0);
    const PipelineConfig c;
    const auto frag = best_fragmentation(song.wave, c, EncoderConfig::short_profile(), enc);
    ASSERT_EQ(frag.fragments.size(), 1u);
    const auto cover = concat({silence(10.0), song.wave});
    const auto m = match_cover(frag.fragments[0], frag.prints[0], cover, enc, c);
    ASSERT_EQ(m.size(), 1u);
    EXPECT_NEAR(m[0].first.start_s, 10.0 + frag.fragments[0].start_s, 2 * 0.256);
    EXPECT_GE(m[0].second, 0.95);
    EXPECT_DOUBLE_EQ(m[0].first.duration(), frag.fragments[0].duration());
    EXPECT_EQ(m[0].first.role, Role::cover);
}

TEST(MatchCover, NoiseGivesNothingAndShortCoverThrows) {
    const auto song = motif_song(1, 0.0, 32, 10.0);
    const BaselineEncoder enc(0);
    const PipelineConfig c;
    const auto frag = best_fragmentation(song.wave, c, EncoderConfig::short_profile(), enc);
    ASSERT_EQ(frag.fragments.size(), 1u);
    EXPECT_TRUE(match_cover(frag.fragments[0], frag.prints[0], white_noise(30.0, 0.2, 1), enc, c).empty());
    try {
        match_cover(frag.fragments[0], frag.prints[0], white_noise(5.0, 0.2, 1), enc, c);
        FAIL();
    } catch (const Error& e) {
        EXPECT_STREQ(e.what(), "cover shorter than fragment");
    }
}

TEST(MatchCover, RepeatedMotifGivesTwoPeaks) {
    std::mt19937_64 rng(33);
    const auto motif = synth::random_motif(rng, 9.0);
    const auto other = synth::random_motif(rng, 9.0);
    const auto original = synth::synth_song({motif}, {}, 1);
    const auto cover = synth::synth_song({motif, other, motif}, {1.0}, 2);
    const BaselineEncoder enc(0);
    const PipelineConfig c;
    const auto frag = best_fragmentation(original.wave, c, EncoderConfig::short_profile(), enc);
    ASSERT_EQ(frag.fragments.size(), 1u);
    auto m = match_cover(frag.fragments[0], frag.prints[0], cover.wave, enc, c);
    ASSERT_EQ(m.size(), 2u);
    std::sort(m.begin(), m.end(), [](const auto& a, const auto& b) { return a.first.start_s < b.first.start_s; });
    EXPECT_NEAR(m[1].first.start_s - m[0].first.start_s, cover.boundaries[2].start_s - cover.boundaries[0].start_s, 2 * 0.256);
}

TEST(MatchCoverProperty, RecoversHopMultipleShifts) {
    const auto song = motif_song(1, 0.0, 34, 9.0);
    const BaselineEncoder enc(0);
    const PipelineConfig c;
    const auto frag = best_fragmentation(song.wave, c, EncoderConfig::short_profile(), enc);
    ASSERT_EQ(frag.fragments.size(), 1u);
    for (int k : {0, 1, 7, 13, 40}) {
        const double shift = k * 0.256;
        const auto cover = concat({silence(shift), song.wave, silence(1.0)});
        const auto m = match_cover(frag.fragments[0], frag.prints[0], cover, enc, c);
        ASSERT_FALSE(m.empty());
        EXPECT_LE(std::abs(m[0].first.start_s - (frag.fragments[0].start_s + shift)) / 0.256, 2.0) << k;
    }
}

// ---------------------------------------------------------------------------

TEST(Filter, ThresholdSemantics) {
    const auto f = filter_matches({{span(0, 8), 0.9}, {span(0, 8), 0.4}, {span(0, 8), 0.2}, {span(0, 8), 0.5}, {span(0, 8), 0.3}}, 0.5, 0.3);
    ASSERT_EQ(f.relevant.size(), 2u);
    ASSERT_EQ(f.uncertain.size(), 1u);
    ASSERT_EQ(f.discarded.size(), 2u);
    EXPECT_EQ(f.uncertain[0].correlation, 0.4);
    EXPECT_EQ(f.relevant[1].correlation, 0.5);
}

TEST(FilterProperty, Partitions) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_int_distribution<std::size_t> n(0, 20);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<std::pair<Fragment, double>> cands(n(rng));
        for (auto& c : cands) c = {span(0, 8), u(rng)};
        const auto f = filter_matches(cands, 0.5, 0.3);
        ASSERT_EQ(f.relevant.size() + f.uncertain.size() + f.discarded.size(), cands.size());
        for (const auto& m : f.relevant) ASSERT_TRUE(m.correlation >= 0.5 && m.status == MatchStatus::relevant);
        for (const auto& m : f.uncertain) ASSERT_TRUE(m.correlation > 0.3 && m.correlation < 0.5 && m.status == MatchStatus::uncertain);
        for (const auto& m : f.discarded) ASSERT_TRUE(m.correlation <= 0.3 && m.status == MatchStatus::discarded);
    }
}

// ---------------------------------------------------------------------------

TEST(Extract, ThreeMotifsTwoShiftedCovers) {
    const auto song = motif_song(3, 2.0, 1000);
    const std::vector<Waveform> covers{concat({silence(3.0), song.wave}), concat({silence(5.5), song.wave, silence(2.0)})};
    const double offsets[2] = {3.0, 5.5};
    const BaselineEncoder enc(0);
    const auto groups = extract_aligned_groups(song.wave, covers, PipelineConfig{}, enc);
    ASSERT_EQ(groups.size(), 3u);
    for (const auto& g : groups) {
        // Uncertain matches may ride along; the relevant ones are the planted copies.
        std::size_t relevant = 0;
        for (const auto& m : g.matches) {
            EXPECT_DOUBLE_EQ(m.fragment.duration(), g.original.duration());
            if (m.status != MatchStatus::relevant) continue;
            ++relevant;
            const int c = m.fragment.source_id == "cover0" ? 0 : 1;
            EXPECT_NEAR(m.fragment.start_s, g.original.start_s + offsets[c], 2 * 0.256);
        }
        EXPECT_EQ(relevant, 2u);
        EXPECT_GE(g.original.duration(), 8.0);
        EXPECT_LE(g.original.duration(), 20.0);
    }
}

TEST(Extract, UnrelatedCoversKeepGroupsAndSilenceGivesNone) {
    const auto song = motif_song(2, 2.0, 42);
    const BaselineEncoder enc(0);
    const auto groups = extract_aligned_groups(song.wave, {white_noise(40.0, 0.2, 3)}, PipelineConfig{}, enc);
    ASSERT_EQ(groups.size(), 2u);
    for (const auto& g : groups) EXPECT_TRUE(g.matches.empty());
    EXPECT_TRUE(extract_aligned_groups(silence(20.0), {song.wave}, PipelineConfig{}, enc).empty());
    EXPECT_THROW(extract_aligned_groups(song.wave, {}, PipelineConfig{}, enc), Error);
}

TEST(Extract, DeterministicAcrossThreadCounts) {
    const auto song = motif_song(3, 2.0, 43);
    synth::CoverTransform tr;
    tr.lead_silence_s = 2.0;
    tr.snr_db = 20.0;
    const auto cover = synth::synth_cover(song.wave, tr, 9).wave;
    const BaselineEncoder enc(0);
    AlignOptions one, four;
    four.threads = 4;
    const auto a = extract_aligned_groups(song.wave, {cover}, PipelineConfig{}, enc, one);
    const auto b = extract_aligned_groups(song.wave, {cover}, PipelineConfig{}, enc, four);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t g = 0; g < a.size(); ++g) {
        EXPECT_EQ(a[g].original, b[g].original);
        ASSERT_EQ(a[g].matches.size(), b[g].matches.size());
        for (std::size_t i = 0; i < a[g].matches.size(); ++i) {
            EXPECT_EQ(a[g].matches[i].fragment, b[g].matches[i].fragment);
            EXPECT_EQ(a[g].matches[i].correlation, b[g].matches[i].correlation);
        }
    }
}
