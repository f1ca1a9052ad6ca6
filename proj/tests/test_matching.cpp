#include <gtest/gtest.h>

#include <functional>

#include "test_util.hpp"

using namespace qbh;
using namespace qbh::testing;

namespace {

FingerprintSequence from_prints(std::vector<Fingerprint> prints) {
    FingerprintSequence s;
    s.config = EncoderConfig::short_profile();
    s.prints = std::move(prints);
    return s;
}

Fingerprint basis(std::size_t i) {
    Fingerprint f;
    f.v[i] = 1.0f;
    return f;
}

FingerprintSequence sub(const FingerprintSequence& s, std::size_t first, std::size_t count) {
    return from_prints({s.prints.begin() + static_cast<long>(first), s.prints.begin() + static_cast<long>(first + count)});
}

/// Naive Pearson over the flattened blocks at one offset.
std::optional<double> naive_pearson(const FingerprintSequence& q, const FingerprintSequence& c, std::size_t off) {
    std::vector<double> x, y;
    for (std::size_t t = 0; t < q.size(); ++t)
        for (std::size_t d = 0; d < kFingerprintDim; ++d) {
            x.push_back(q[t].v[d]);
            y.push_back(c[off + t].v[d]);
        }
    return pearson(x, y);
}

/// Minimum over every monotone warping path of (sum of cell costs) / (path length),
/// with ties in cost broken towards the shorter path.
double dtw_by_enumeration(const FingerprintSequence& q, const FingerprintSequence& c) {
    const std::size_t m = q.size(), n = c.size();
    double best_cost = std::numeric_limits<double>::infinity();
    std::size_t best_len = 0;
    std::function<void(std::size_t, std::size_t, double, std::size_t)> walk = [&](std::size_t i, std::size_t j, double cost, std::size_t len) {
        cost += std::max(0.0, 1.0 - q[i].dot(c[j]) / (q[i].norm() * c[j].norm()));
        ++len;
        if (i + 1 == m && j + 1 == n) {
            if (cost < best_cost - 1e-12 || (std::abs(cost - best_cost) <= 1e-12 && len < best_len)) {
                best_cost = cost;
                best_len = len;
            }
            return;
        }
        if (i + 1 < m && j + 1 < n) walk(i + 1, j + 1, cost, len);
        if (i + 1 < m) walk(i + 1, j, cost, len);
        if (j + 1 < n) walk(i, j + 1, cost, len);
    };
    walk(0, 0, 0.0, 0);
    return best_cost / static_cast<double>(best_len);
}

CorrelationCurve curve_of(std::vector<double> scores) {
    CorrelationCurve c;
    c.scores = std::move(scores);
    c.hop_s = 0.25;
    return c;
}

} // namespace

// ---------------------------------------------------------------------------

TEST(CrossCorrelation, SelfPeakAtLagZero) {
    std::mt19937_64 rng(1);
    const auto a = random_sequence(30, rng);
    const auto curve = seq_cross_correlation(a, a);
    const auto it = std::max_element(curve.scores.begin(), curve.scores.end());
    EXPECT_NEAR(*it, 1.0, 1e-6);
    EXPECT_EQ(curve.lag_at(static_cast<std::size_t>(it - curve.scores.begin())), 0);
}

TEST(CrossCorrelation, OrthogonalGivesZero) {
    const auto a = from_prints(std::vector<Fingerprint>(10, basis(0)));
    const auto b = from_prints(std::vector<Fingerprint>(12, basis(1)));
    for (double s : seq_cross_correlation(a, b).scores) EXPECT_EQ(s, 0.0);
}

TEST(CrossCorrelation, DelayedCopyPeaksAtLag) {
    std::mt19937_64 rng(2);
    const auto b = random_sequence(40, rng);
    const auto a = sub(b, 5, 20);
    const auto curve = seq_cross_correlation(a, b);
    const auto it = std::max_element(curve.scores.begin(), curve.scores.end());
    EXPECT_EQ(curve.lag_at(static_cast<std::size_t>(it - curve.scores.begin())), 5);
    const auto contained = seq_cross_correlation_contained(a, b);
    const auto jt = std::max_element(contained.scores.begin(), contained.scores.end());
    EXPECT_EQ(jt - contained.scores.begin(), 5);
}

TEST(CrossCorrelation, Errors) {
    std::mt19937_64 rng(3);
    const auto a = random_sequence(5, rng);
    EXPECT_THROW(seq_cross_correlation(a, FingerprintSequence{}), Error);
    auto b = random_sequence(5, rng);
    b.config = EncoderConfig::long_profile();
    EXPECT_THROW(seq_cross_correlation(a, b), Error);
    EXPECT_THROW(seq_cross_correlation_contained(random_sequence(6, rng), a), Error);
}

TEST(CrossCorrelationProperty, MatchesNaiveAndIsBoundedAndMirrored) {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<std::size_t> len(1, 25);
    std::uniform_real_distribution<double> frac(0.05, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto a = random_sequence(len(rng), rng);
        const auto b = random_sequence(len(rng), rng);
        const double f = frac(rng);
        const auto ab = seq_cross_correlation(a, b, f);
        const auto ba = seq_cross_correlation(b, a, f);
        const long m = static_cast<long>(a.size()), n = static_cast<long>(b.size());
        const long min_overlap = std::max(1L, static_cast<long>(std::ceil(f * static_cast<double>(std::min(m, n)) - 1e-9)));
        ASSERT_EQ(static_cast<long>(ab.size()), m + n - 2 * min_overlap + 1);
        ASSERT_EQ(ab.size(), ba.size());
        for (std::size_t i = 0; i < ab.size(); ++i) {
            const long lag = ab.lag_at(i);
            double acc = 0.0;
            long count = 0;
            for (long t = 0; t < m; ++t)
                if (t + lag >= 0 && t + lag < n) {
                    acc += a[static_cast<std::size_t>(t)].dot(b[static_cast<std::size_t>(t + lag)]);
                    ++count;
                }
            ASSERT_GE(count, min_overlap);
            ASSERT_NEAR(ab.scores[i], acc / static_cast<double>(count), 1e-12);
            ASSERT_LE(std::abs(ab.scores[i]), 1.0 + 1e-6);
            // Lag l of (a, b) is lag -l of (b, a).
            const long j = -lag - ba.first_lag;
            ASSERT_NEAR(ab.scores[i], ba.scores[static_cast<std::size_t>(j)], 1e-12);
        }
    }
}

// ---------------------------------------------------------------------------

TEST(Pearson, ExactSubBlock) {
    std::mt19937_64 rng(5);
    const auto c = random_sequence(30, rng);
    const auto m = max_pearson_match(sub(c, 7, 10), c);
    EXPECT_NEAR(m.score, 1.0, 1e-6);
    EXPECT_EQ(m.offset, 7u);
}

TEST(Pearson, NegatedSubBlock) {
    std::mt19937_64 rng(6);
    const auto c = random_sequence(20, rng);
    auto q = sub(c, 4, 8);
    for (auto& fp : q.prints)
        for (float& v : fp.v) v = -v;
    EXPECT_NEAR(*PearsonScorer(q, c).score_at(4), -1.0, 1e-6);
    EXPECT_GT(max_pearson(q, c), -1.0);
}

TEST(Pearson, SmallNoiseStaysHigh) {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> noise(0.0, 0.01);
    const auto c = random_sequence(40, rng);
    auto q = sub(c, 10, 12);
    for (auto& fp : q.prints) {
        std::array<double, kFingerprintDim> v{};
        for (std::size_t d = 0; d < kFingerprintDim; ++d) v[d] = fp.v[d] + noise(rng);
        fp = detail::normalized(v);
    }
    EXPECT_GE(max_pearson(q, c), 0.95);
}

TEST(Pearson, Errors) {
    std::mt19937_64 rng(8);
    const auto c = random_sequence(5, rng);
    EXPECT_THROW(max_pearson(random_sequence(6, rng), c), Error);
    // All-zero blocks have no variance at any offset.
    const auto zero = from_prints(std::vector<Fingerprint>(3));
    EXPECT_THROW(max_pearson(zero, zero), Error);
    const auto flat = from_prints(std::vector<Fingerprint>(4, basis(0)));
    EXPECT_NEAR(max_pearson(flat, flat), 1.0, 1e-12);
}

TEST(PearsonProperty, MatchesNaiveOracleAndAffineInvariance) {
    std::mt19937_64 rng(9);
    std::uniform_int_distribution<std::size_t> qlen(1, 8), extra(0, 10);
    std::uniform_real_distribution<double> scale(0.1, 5.0), shift(-2.0, 2.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto q = random_sequence(qlen(rng), rng);
        const auto c = random_sequence(q.size() + extra(rng), rng);
        const PearsonScorer scorer(q, c);
        double naive_best = -2.0;
        for (std::size_t off = 0; off < scorer.offset_count(); ++off) {
            const auto fast = scorer.score_at(off);
            const auto slow = naive_pearson(q, c, off);
            ASSERT_EQ(fast.has_value(), slow.has_value());
            ASSERT_NEAR(*fast, *slow, 1e-9);
            naive_best = std::max(naive_best, *slow);
        }
        const double best = max_pearson(q, c);
        ASSERT_NEAR(best, naive_best, 1e-9);
        ASSERT_LE(std::abs(best), 1.0);

        // A common positive affine map of both blocks leaves Pearson unchanged.
        const double a = scale(rng), b = shift(rng);
        std::vector<double> x, y;
        for (std::size_t t = 0; t < q.size(); ++t)
            for (std::size_t d = 0; d < kFingerprintDim; ++d) {
                x.push_back(a * q[t].v[d] + b);
                y.push_back(a * c[t].v[d] + b);
            }
        ASSERT_NEAR(*pearson(x, y), *naive_pearson(q, c, 0), 1e-9);
    }
}

// ---------------------------------------------------------------------------

TEST(Dtw, SelfDistanceIsZero) {
    std::mt19937_64 rng(10);
    const auto x = random_sequence(25, rng);
    EXPECT_NEAR(dtw_distance(x, x), 0.0, 1e-9);
}

TEST(Dtw, AbsorbsDuplicatedFrame) {
    std::mt19937_64 rng(11);
    const auto x = random_sequence(3, rng);
    const auto y = from_prints({x[0], x[1], x[1], x[2]});
    EXPECT_NEAR(dtw_distance(x, y), 0.0, 1e-9);
    EXPECT_NEAR(dtw_distance(y, x), 0.0, 1e-9);
}

TEST(Dtw, HandTracedOrthogonalCase) {
    // q = (e0, e1), c = (e0, e0, e1): zero-cost path of length 3.
    const auto q = from_prints({basis(0), basis(1)});
    const auto c = from_prints({basis(0), basis(0), basis(1)});
    EXPECT_NEAR(dtw_distance(q, c), 0.0, 1e-12);
    // q = (e0), c = (e1, e1): one path, cost 2 over length 2.
    EXPECT_NEAR(dtw_distance(from_prints({basis(0)}), from_prints({basis(1), basis(1)})), 1.0, 1e-12);
}

TEST(DtwProperty, EnumerationOracleSymmetryAndBounds) {
    std::mt19937_64 rng(12);
    std::uniform_int_distribution<std::size_t> len(1, 5);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto x = random_sequence(len(rng), rng);
        const auto y = random_sequence(len(rng), rng);
        const double d = dtw_distance(x, y);
        ASSERT_GE(d, 0.0);
        ASSERT_LE(d, 2.0);
        ASSERT_NEAR(d, dtw_by_enumeration(x, y), 1e-9);
        ASSERT_NEAR(d, dtw_distance(y, x), 1e-9);
    }
}

// ---------------------------------------------------------------------------

TEST(Peaks, SingleBump) {
    const auto p = detect_peaks(curve_of({0.1, 0.4, 0.9, 0.5, 0.2}), 0.3, 1);
    ASSERT_EQ(p.size(), 1u);
    EXPECT_EQ(p[0].index, 2u);
    EXPECT_DOUBLE_EQ(p[0].score, 0.9);
    EXPECT_DOUBLE_EQ(p[0].start_s, 0.5);
}

TEST(Peaks, FlatBelowThreshold) { EXPECT_TRUE(detect_peaks(curve_of(std::vector<double>(20, 0.2)), 0.3, 1).empty()); }

TEST(Peaks, CloseBumpsKeepTheHigher) {
    const auto p = detect_peaks(curve_of({0.0, 0.8, 0.1, 0.2, 0.9, 0.0}), 0.3, 4);
    ASSERT_EQ(p.size(), 1u);
    EXPECT_EQ(p[0].index, 4u);
    EXPECT_EQ(detect_peaks(curve_of({0.0, 0.8, 0.1, 0.2, 0.9, 0.0}), 0.3, 3).size(), 2u);
}

TEST(PeaksProperty, SortedSeparatedLocalMaxima) {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_int_distribution<std::size_t> len(1, 60), sep(1, 10);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> s(len(rng));
        for (double& v : s) v = u(rng);
        const double h = u(rng);
        const std::size_t ms = sep(rng);
        const auto peaks = detect_peaks(curve_of(s), h, ms);
        for (std::size_t i = 0; i < peaks.size(); ++i) {
            const auto k = peaks[i].index;
            ASSERT_GE(peaks[i].score, h);
            ASSERT_TRUE(k == 0 || s[k] > s[k - 1]);
            ASSERT_TRUE(k + 1 == s.size() || s[k] > s[k + 1]);
            if (i > 0) {
                ASSERT_GE(peaks[i - 1].score, peaks[i].score);
            }
            for (std::size_t j = 0; j < i; ++j) ASSERT_GE(std::abs(peaks[i].lag - peaks[j].lag), static_cast<long>(ms));
        }
        // Every qualifying local maximum is either accepted or within reach of a better accepted one.
        for (std::size_t k = 0; k < s.size(); ++k) {
            const bool is_max = (k == 0 || s[k] > s[k - 1]) && (k + 1 == s.size() || s[k] > s[k + 1]) && s[k] >= h;
            if (!is_max) continue;
            const bool covered = std::any_of(peaks.begin(), peaks.end(), [&](const Peak& p) {
                return p.index == k || (std::abs(static_cast<long>(p.index) - static_cast<long>(k)) < static_cast<long>(ms) && p.score >= s[k]);
            });
            ASSERT_TRUE(covered);
        }
    }
}
