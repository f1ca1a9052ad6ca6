#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "qbh/error.hpp"
#include "qbh/fingerprint.hpp"

namespace qbh {

/// Score per lag. Lag of element i is first_lag + i; element `lag_zero_index`
/// holds lag 0 when it lies in range.
struct CorrelationCurve {
    std::vector<double> scores;
    long first_lag = 0;
    double hop_s = 0.0;

    long lag_at(std::size_t i) const { return first_lag + static_cast<long>(i); }
    long lag_zero_index() const { return -first_lag; }
    std::size_t size() const { return scores.size(); }
};

struct Peak {
    std::size_t index = 0; // position in the curve
    long lag = 0;
    double score = 0.0;
    double start_s = 0.0;
};

namespace detail {

inline void check_pair(const FingerprintSequence& a, const FingerprintSequence& b) {
    if (a.empty() || b.empty()) throw Error("empty sequence");
    if (!a.config.same_geometry(b.config)) throw Error("encoder config mismatch between sequences");
}

inline double overlap_score(const FingerprintSequence& a, const FingerprintSequence& b, long lag) {
    const long m = static_cast<long>(a.size()), n = static_cast<long>(b.size());
    const long t0 = std::max(0L, -lag), t1 = std::min(m, n - lag);
    double acc = 0.0;
    for (long t = t0; t < t1; ++t) acc += a[static_cast<std::size_t>(t)].dot(b[static_cast<std::size_t>(t + lag)]);
    return acc / static_cast<double>(t1 - t0);
}

} // namespace detail

/// Normalized cross-correlation of two fingerprint sequences:
/// score(lag) = mean over overlapping t of a_t . b_{t+lag}. Lags whose
/// overlap is below min_overlap_frac * min(|a|, |b|) are excluded.
inline CorrelationCurve seq_cross_correlation(const FingerprintSequence& a, const FingerprintSequence& b, double min_overlap_frac = 0.8) {
    detail::check_pair(a, b);
    detail::require(min_overlap_frac > 0.0 && min_overlap_frac <= 1.0, "min_overlap_frac must lie in (0, 1]");
    const long m = static_cast<long>(a.size()), n = static_cast<long>(b.size());
    const long overlap = std::max(1L, static_cast<long>(std::ceil(min_overlap_frac * static_cast<double>(std::min(m, n)) - 1e-9)));
    CorrelationCurve curve;
    curve.first_lag = overlap - m;
    curve.hop_s = a.config.step_seconds();
    for (long lag = overlap - m; lag <= n - overlap; ++lag) curve.scores.push_back(detail::overlap_score(a, b, lag));
    return curve;
}

/// Correlation of a query sliding entirely inside a longer target: lags
/// 0..|target|-|query|, every lag with full overlap.
inline CorrelationCurve seq_cross_correlation_contained(const FingerprintSequence& query, const FingerprintSequence& target) {
    detail::check_pair(query, target);
    if (query.size() > target.size()) throw Error("query does not fit inside target");
    CorrelationCurve curve;
    curve.first_lag = 0;
    curve.hop_s = query.config.step_seconds();
    const long last = static_cast<long>(target.size() - query.size());
    for (long lag = 0; lag <= last; ++lag) curve.scores.push_back(detail::overlap_score(query, target, lag));
    return curve;
}

inline double max_cross_correlation(const FingerprintSequence& a, const FingerprintSequence& b, double min_overlap_frac = 0.8) {
    const auto curve = seq_cross_correlation(a, b, min_overlap_frac);
    return *std::max_element(curve.scores.begin(), curve.scores.end());
}

// ---------------------------------------------------------------------------
// Pearson over flattened 128 x |q| blocks.

/// Pearson coefficient of two equal-length arrays; nullopt when either has zero variance.
inline std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
    detail::require(x.size() == y.size() && !x.empty(), "pearson needs equal non-empty inputs");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

struct PearsonMatch {
    double score = -std::numeric_limits<double>::infinity();
    std::size_t offset = 0;
    bool valid = false;
};

/// Scores a query against offsets of a candidate sequence. Precomputes
/// per-fingerprint sums so each offset costs one block dot product.
class PearsonScorer {
public:
    PearsonScorer(const FingerprintSequence& query, const FingerprintSequence& candidate)
        : q_(&query), c_(&candidate), csum_(candidate.size() + 1, 0.0), csq_(candidate.size() + 1, 0.0) {
        detail::require(!query.empty() && !candidate.empty(), "max_pearson needs non-empty sequences");
        for (const auto& fp : query.prints)
            for (float x : fp.v) {
                qsum_ += x;
                qsq_ += static_cast<double>(x) * x;
            }
        for (std::size_t j = 0; j < candidate.size(); ++j) {
            double s = 0.0, s2 = 0.0;
            for (float x : candidate[j].v) {
                s += x;
                s2 += static_cast<double>(x) * x;
            }
            csum_[j + 1] = csum_[j] + s;
            csq_[j + 1] = csq_[j] + s2;
        }
    }

    std::size_t offset_count() const { return q_->size() <= c_->size() ? c_->size() - q_->size() + 1 : 0; }

    std::optional<double> score_at(std::size_t offset) const {
        const std::size_t len = q_->size();
        detail::require(offset + len <= c_->size(), "pearson offset out of range");
        const double n = static_cast<double>(len * kFingerprintDim);
        double dot = 0.0;
        for (std::size_t t = 0; t < len; ++t) dot += (*q_)[t].dot((*c_)[offset + t]);
        const double cs = csum_[offset + len] - csum_[offset];
        const double cs2 = csq_[offset + len] - csq_[offset];
        const double vq = qsq_ - qsum_ * qsum_ / n;
        const double vc = cs2 - cs * cs / n;
        if (vq <= 1e-12 * qsq_ || vc <= 1e-12 * cs2 || vq <= 0.0 || vc <= 0.0) return std::nullopt;
        return std::clamp((dot - qsum_ * cs / n) / std::sqrt(vq * vc), -1.0, 1.0);
    }

    template <typename Offsets>
    PearsonMatch best_of(const Offsets& offsets) const {
        PearsonMatch best;
        for (std::size_t off : offsets) {
            const auto s = score_at(off);
            if (s && (!best.valid || *s > best.score)) best = {*s, off, true};
        }
        return best;
    }

    PearsonMatch best() const {
        PearsonMatch best;
        for (std::size_t off = 0; off < offset_count(); ++off) {
            const auto s = score_at(off);
            if (s && (!best.valid || *s > best.score)) best = {*s, off, true};
        }
        return best;
    }

private:
    const FingerprintSequence* q_;
    const FingerprintSequence* c_;
    double qsum_ = 0.0, qsq_ = 0.0;
    std::vector<double> csum_, csq_;
};

/// Maximum Pearson coefficient over every placement of q inside c.
inline PearsonMatch max_pearson_match(const FingerprintSequence& q, const FingerprintSequence& c) {
    if (q.empty() || c.empty()) throw Error("max_pearson needs non-empty sequences");
    if (q.size() > c.size()) throw Error("max_pearson requires |q| <= |c|");
    const auto best = PearsonScorer(q, c).best();
    if (!best.valid) throw Error("max_pearson: every offset has zero variance");
    return best;
}

inline double max_pearson(const FingerprintSequence& q, const FingerprintSequence& c) { return max_pearson_match(q, c).score; }

// ---------------------------------------------------------------------------
// DTW with cost 1 - cos(q_i, c_j), steps (1,1), (1,0), (0,1), anchored at
// both corners, normalized by the length of the chosen path. Ties between
// predecessors prefer the lower accumulated cost, then the shorter path,
// which keeps the distance symmetric in its arguments.

inline double dtw_distance(const FingerprintSequence& q, const FingerprintSequence& c) {
    if (q.empty() || c.empty()) throw Error("dtw needs non-empty sequences");
    const std::size_t m = q.size(), n = c.size();
    std::vector<double> qn(m), cn(n);
    for (std::size_t i = 0; i < m; ++i) qn[i] = q[i].norm();
    for (std::size_t j = 0; j < n; ++j) cn[j] = c[j].norm();
    const auto cost = [&](std::size_t i, std::size_t j) {
        const double denom = qn[i] * cn[j];
        const double cosine = denom > 0.0 ? q[i].dot(c[j]) / denom : 0.0;
        return std::max(0.0, 1.0 - cosine);
    };

    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> acc((m + 1) * (n + 1), inf);
    std::vector<std::size_t> len((m + 1) * (n + 1), 0);
    const auto idx = [n](std::size_t i, std::size_t j) { return i * (n + 1) + j; };
    acc[idx(0, 0)] = 0.0;
    for (std::size_t i = 1; i <= m; ++i) {
        for (std::size_t j = 1; j <= n; ++j) {
            std::size_t best = idx(i - 1, j - 1);
            for (std::size_t cand : {idx(i - 1, j), idx(i, j - 1)}) {
                if (acc[cand] < acc[best] || (acc[cand] == acc[best] && len[cand] < len[best])) best = cand;
            }
            acc[idx(i, j)] = acc[best] + cost(i - 1, j - 1);
            len[idx(i, j)] = len[best] + 1;
        }
    }
    return acc[idx(m, n)] / static_cast<double>(len[idx(m, n)]);
}

// ---------------------------------------------------------------------------

/// Strict local maxima with score >= min_height, accepted greedily in
/// descending score order; a peak closer than min_separation lags to an
/// accepted one is suppressed. End points count as maxima when they exceed
/// their single neighbour.
inline std::vector<Peak> detect_peaks(const CorrelationCurve& curve, double min_height, std::size_t min_separation) {
    detail::require(min_separation >= 1, "min_separation must be >= 1");
    const auto& s = curve.scores;
    std::vector<Peak> candidates;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const bool left = i == 0 || s[i] > s[i - 1];
        const bool right = i + 1 == s.size() || s[i] > s[i + 1];
        if (left && right && s[i] >= min_height)
            candidates.push_back({i, curve.lag_at(i), s[i], static_cast<double>(curve.lag_at(i)) * curve.hop_s});
    }
    std::stable_sort(candidates.begin(), candidates.end(), [](const Peak& a, const Peak& b) { return a.score > b.score; });
    std::vector<Peak> accepted;
    for (const auto& p : candidates) {
        const bool clear = std::all_of(accepted.begin(), accepted.end(), [&](const Peak& q) {
            return static_cast<std::size_t>(std::abs(p.lag - q.lag)) >= min_separation;
        });
        if (clear) accepted.push_back(p);
    }
    return accepted;
}

} // namespace qbh
