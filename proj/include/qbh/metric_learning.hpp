#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "qbh/audio.hpp"
#include "qbh/binary_io.hpp"
#include "qbh/cqt.hpp"
#include "qbh/error.hpp"
#include "qbh/fingerprint.hpp"

namespace qbh {

/// Dense row-major matrix of doubles (embeddings, gradients).
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
};

struct LossParams {
    double temperature = 0.05;
};

// ---------------------------------------------------------------------------
// Group contrastive loss.
//
// For every ordered positive pair (i, j) of distinct members of one group:
//   term = -log( exp(z_i.z_j / tau) / sum_{l outside the group} exp(z_i.z_l / tau) )
// and the loss is the mean term. The denominator holds negatives only, so the
// loss can drop below zero once positives dominate.

namespace detail {

struct LossLayout {
    std::vector<std::size_t> positives_per_row; // c_i = |group(i)| - 1
    std::size_t pair_count = 0;
};

inline LossLayout check_loss_inputs(const Matrix& z, std::span<const int> labels, const LossParams& params) {
    require(params.temperature > 0.0, "temperature must be positive");
    require(labels.size() == z.rows, "one label per embedding required");
    require(z.rows >= 2, "need at least two embeddings");
    std::vector<int> distinct(labels.begin(), labels.end());
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() < 2) throw Error("no negatives available");
    LossLayout layout;
    layout.positives_per_row.resize(z.rows);
    for (std::size_t i = 0; i < z.rows; ++i) {
        const auto same = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), labels[i]));
        layout.positives_per_row[i] = same - 1;
        layout.pair_count += same - 1;
    }
    if (layout.pair_count == 0) throw Error("no positive pairs: every group is a singleton");
    return layout;
}

inline Matrix gram(const Matrix& z) {
    Matrix s(z.rows, z.rows);
    for (std::size_t i = 0; i < z.rows; ++i)
        for (std::size_t j = i; j < z.rows; ++j) {
            double acc = 0.0;
            for (std::size_t d = 0; d < z.cols; ++d) acc += z(i, d) * z(j, d);
            s(i, j) = s(j, i) = acc;
        }
    return s;
}

} // namespace detail

struct LossAndGrad {
    double loss = 0.0;
    Matrix grad;
};

/// Loss and its gradient with respect to each embedding coordinate.
inline LossAndGrad ntxent_loss_and_grad(const Matrix& z, std::span<const int> labels, const LossParams& params, bool with_grad = true) {
    const auto layout = detail::check_loss_inputs(z, labels, params);
    const double inv_tau = 1.0 / params.temperature;
    const std::size_t n = z.rows;
    const Matrix s = detail::gram(z);

    // Row-wise softmax over negatives, stable via max subtraction.
    Matrix p(n, n);
    std::vector<double> lse(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t l = 0; l < n; ++l)
            if (labels[l] != labels[i]) m = std::max(m, s(i, l) * inv_tau);
        double sum = 0.0;
        for (std::size_t l = 0; l < n; ++l)
            if (labels[l] != labels[i]) {
                p(i, l) = std::exp(s(i, l) * inv_tau - m);
                sum += p(i, l);
            }
        for (std::size_t l = 0; l < n; ++l) p(i, l) /= sum;
        lse[i] = m + std::log(sum);
    }

    const double inv_pairs = 1.0 / static_cast<double>(layout.pair_count);
    LossAndGrad out;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        total += static_cast<double>(layout.positives_per_row[i]) * lse[i];
        for (std::size_t j = 0; j < n; ++j)
            if (j != i && labels[j] == labels[i]) total -= s(i, j) * inv_tau;
    }
    out.loss = total * inv_pairs;
    if (!with_grad) return out;

    // d/dz_a: -(2/tau) sum_{j in pos(a)} z_j
    //         + (c_a/tau) sum_{l in neg(a)} p_al z_l + sum_{i in neg(a)} (c_i/tau) p_ia z_i
    out.grad = Matrix(n, z.cols);
    for (std::size_t a = 0; a < n; ++a) {
        auto g = out.grad.row(a);
        for (std::size_t b = 0; b < n; ++b) {
            if (b == a) continue;
            double coef;
            if (labels[b] == labels[a]) {
                coef = -2.0 * inv_tau;
            } else {
                coef = inv_tau * (static_cast<double>(layout.positives_per_row[a]) * p(a, b) +
                                  static_cast<double>(layout.positives_per_row[b]) * p(b, a));
            }
            const auto zb = z.row(b);
            for (std::size_t d = 0; d < z.cols; ++d) g[d] += coef * zb[d];
        }
        for (double& v : g) v *= inv_pairs;
    }
    return out;
}

inline double ntxent_loss(const Matrix& z, std::span<const int> labels, const LossParams& params = {}) {
    return ntxent_loss_and_grad(z, labels, params, false).loss;
}

inline Matrix ntxent_grad(const Matrix& z, std::span<const int> labels, const LossParams& params = {}) {
    return ntxent_loss_and_grad(z, labels, params, true).grad;
}

// ---------------------------------------------------------------------------
// Batches of time-aligned groups.

struct FragmentGroup {
    int group_id = 0;
    std::vector<FeatureMatrix> members; // equal frame counts

    std::size_t frames() const { return members.empty() ? 0 : members.front().frames; }
};

struct TrainingBatch {
    std::vector<FeatureMatrix> windows;
    std::vector<int> labels;
    std::vector<std::size_t> starts; // shared window start per sampled group, in group order
};

inline std::vector<std::size_t> eligible_groups(std::span<const FragmentGroup> dataset, std::size_t window_frames) {
    std::vector<std::size_t> out;
    for (std::size_t g = 0; g < dataset.size(); ++g) {
        const auto& group = dataset[g];
        if (group.members.size() < 2 || group.frames() < window_frames) continue;
        for (const auto& m : group.members)
            detail::require(m.frames == group.frames(), "group members must have equal frame counts");
        out.push_back(g);
    }
    return out;
}

/// K distinct groups; min(n_max, |group|) members of each, all cut at one
/// random start shared within the group.
template <typename Rng>
TrainingBatch sample_batch(std::span<const FragmentGroup> dataset, std::size_t k, std::size_t window_frames, Rng& rng,
                           std::size_t n_max = 4) {
    detail::require(k >= 1 && n_max >= 1 && window_frames >= 1, "sample_batch needs k, n_max, window_frames >= 1");
    auto pool = eligible_groups(dataset, window_frames);
    if (pool.size() < k) throw Error("insufficient groups for batch");
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(k);

    TrainingBatch batch;
    for (std::size_t g : pool) {
        const auto& group = dataset[g];
        std::vector<std::size_t> members(group.members.size());
        std::iota(members.begin(), members.end(), std::size_t{0});
        std::shuffle(members.begin(), members.end(), rng);
        members.resize(std::min(n_max, members.size()));
        std::uniform_int_distribution<std::size_t> start_dist(0, group.frames() - window_frames);
        const std::size_t start = start_dist(rng);
        batch.starts.push_back(start);
        for (std::size_t m : members) {
            batch.windows.push_back(group.members[m].slice_frames(start, window_frames));
            batch.labels.push_back(group.group_id);
        }
    }
    return batch;
}

// ---------------------------------------------------------------------------
// Augmentations. Pitch shift and time stretch act on CQT features; splice-out
// and mixing act on waveforms.

/// Translates CQT rows by `semitones` bins (one bin per semitone); fractional
/// shifts interpolate linearly between neighbouring bins; vacated rows are zero.
inline FeatureMatrix augment_pitch_shift(const FeatureMatrix& features, double semitones) {
    detail::require(std::abs(semitones) <= 4.0, "pitch shift limited to [-4, 4] semitones");
    FeatureMatrix out = features;
    std::fill(out.data.begin(), out.data.end(), 0.0f);
    const double bins_per_semitone = static_cast<double>(features.bins_per_octave) / 12.0;
    const double shift = semitones * bins_per_semitone;
    const auto nb = static_cast<long>(features.bins);
    for (long b = 0; b < nb; ++b) {
        const double src = static_cast<double>(b) - shift;
        const auto i0 = static_cast<long>(std::floor(src));
        const double frac = src - static_cast<double>(i0);
        auto dst = out.row(static_cast<std::size_t>(b));
        const auto blend = [&](long i, double w) {
            if (w == 0.0 || i < 0 || i >= nb) return;
            const auto s = features.row(static_cast<std::size_t>(i));
            for (std::size_t t = 0; t < features.frames; ++t) dst[t] += static_cast<float>(w * s[t]);
        };
        blend(i0, 1.0 - frac);
        blend(i0 + 1, frac);
    }
    return out;
}

/// Resamples the time axis to round(frames / rate) columns by linear interpolation.
inline FeatureMatrix augment_time_stretch(const FeatureMatrix& features, double rate) {
    detail::require(rate >= 0.8 && rate <= 1.25, "time stretch rate limited to [0.8, 1.25]");
    const auto frames = static_cast<std::size_t>(std::lround(static_cast<double>(features.frames) / rate));
    if (frames < 1 || features.frames < 1) throw Error("degenerate output length");
    if (rate == 1.0) return features;
    FeatureMatrix out = features;
    out.frames = frames;
    out.data.assign(features.bins * frames, 0.0f);
    const double last = static_cast<double>(features.frames - 1);
    for (std::size_t t = 0; t < frames; ++t) {
        const double src = std::min(static_cast<double>(t) * rate, last);
        const auto i0 = static_cast<std::size_t>(std::floor(src));
        const std::size_t i1 = std::min(i0 + 1, features.frames - 1);
        const double frac = src - static_cast<double>(i0);
        for (std::size_t b = 0; b < features.bins; ++b)
            out.at(b, t) = static_cast<float>((1.0 - frac) * features.at(b, i0) + frac * features.at(b, i1));
    }
    return out;
}

/// Deletes n_intervals non-overlapping spans of interval_samples samples at
/// random positions and concatenates the remainder.
template <typename Rng>
Waveform augment_splice_out(const Waveform& w, Rng& rng, std::size_t n_intervals = 10, std::size_t interval_samples = 500) {
    const std::size_t removed = n_intervals * interval_samples;
    if (w.size() < removed || static_cast<double>(w.size() - removed) < w.sample_rate) throw Error("waveform too short for splice-out");
    if (n_intervals == 0) return w;
    // Uniform placement: draw starts in the compressed signal, then re-expand.
    std::uniform_int_distribution<std::size_t> dist(0, w.size() - removed);
    std::vector<std::size_t> starts(n_intervals);
    for (auto& s : starts) s = dist(rng);
    std::sort(starts.begin(), starts.end());
    Waveform out;
    out.sample_rate = w.sample_rate;
    out.samples.reserve(w.size() - removed);
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < n_intervals; ++i) {
        const std::size_t cut = starts[i] + i * interval_samples;
        out.samples.insert(out.samples.end(), w.samples.begin() + static_cast<long>(cursor), w.samples.begin() + static_cast<long>(cut));
        cursor = cut + interval_samples;
    }
    out.samples.insert(out.samples.end(), w.samples.begin() + static_cast<long>(cursor), w.samples.end());
    return out;
}

/// Gain g such that rms(x) / rms(g*y) = 10^(snr_db/20).
inline double mix_gain(double rms_x, double rms_y, double snr_db) {
    if (!(rms_y > 0.0)) throw Error("silent mix source");
    if (std::isinf(snr_db) && snr_db > 0) return 0.0;
    return (rms_x / rms_y) * std::pow(10.0, -snr_db / 20.0);
}

/// x + g*y with y looped or truncated to |x|; output clamped to [-1, 1].
inline Waveform augment_mix(const Waveform& x, const Waveform& y, double snr_db) {
    detail::require(x.sample_rate == y.sample_rate, "mix requires equal sample rates");
    if (y.samples.empty()) throw Error("silent mix source");
    const double g = mix_gain(rms(x.samples), rms(y.samples), snr_db);
    Waveform out = x;
    for (std::size_t i = 0; i < out.size(); ++i)
        out.samples[i] = static_cast<float>(std::clamp(x.samples[i] + g * y.samples[i % y.size()], -1.0, 1.0));
    return out;
}

// ---------------------------------------------------------------------------
// Toy trainable encoder: z = normalize(A * flatten(window)).

class ToyLinearEncoder final : public Encoder {
public:
    ToyLinearEncoder() = default;

    ToyLinearEncoder(std::size_t bins, std::size_t window_frames, std::uint64_t seed, double init_scale = 1.0)
        : bins_(bins), window_frames_(window_frames), seed_(seed), weights_(kFingerprintDim * bins * window_frames) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal(0.0, init_scale / std::sqrt(static_cast<double>(input_dim())));
        for (float& w : weights_) w = static_cast<float>(normal(rng));
    }

    std::size_t input_dim() const { return bins_ * window_frames_; }
    std::size_t bins() const { return bins_; }
    std::size_t window_frames() const { return window_frames_; }
    std::span<float> weights() { return weights_; }
    std::span<const float> weights() const { return weights_; }

    /// Pre-normalization output A*x.
    std::array<double, kFingerprintDim> project(std::span<const float> x) const {
        detail::require(x.size() == input_dim(), "toy encoder input size mismatch");
        std::array<double, kFingerprintDim> v{};
        for (std::size_t r = 0; r < kFingerprintDim; ++r) {
            const float* a = weights_.data() + r * input_dim();
            double acc = 0.0;
            for (std::size_t c = 0; c < x.size(); ++c) acc += static_cast<double>(a[c]) * x[c];
            v[r] = acc;
        }
        return v;
    }

    Fingerprint encode_window(const FeatureWindow& window) const override {
        detail::require(window.bins() == bins_ && window.frames() == window_frames_, "toy encoder window shape mismatch");
        std::vector<float> x;
        x.reserve(input_dim());
        for (std::size_t b = 0; b < bins_; ++b) {
            const auto row = window.row(b);
            x.insert(x.end(), row.begin(), row.end());
        }
        return detail::normalized(project(x));
    }

    std::string identity() const override {
        return "toy-linear-v1:" + std::to_string(bins_) + "x" + std::to_string(window_frames_) + ":seed=" + std::to_string(seed_);
    }

    // CHTE: magic, version u8, rows u32, cols u32, bins u16, window_frames u16, seed u64, f32 weights.
    void save(const std::string& path) const {
        io::Writer out;
        out.magic("CHTE");
        out.put<std::uint8_t>(1);
        out.put<std::uint32_t>(static_cast<std::uint32_t>(kFingerprintDim));
        out.put<std::uint32_t>(static_cast<std::uint32_t>(input_dim()));
        out.put<std::uint16_t>(static_cast<std::uint16_t>(bins_));
        out.put<std::uint16_t>(static_cast<std::uint16_t>(window_frames_));
        out.put<std::uint64_t>(seed_);
        out.put_array(weights_.data(), weights_.size());
        out.save(path);
    }

    static ToyLinearEncoder load(const std::string& path) {
        auto in = io::Reader::from_file(path);
        in.expect_magic("CHTE");
        if (in.get<std::uint8_t>() != 1) throw Error("unsupported CHTE version");
        const std::size_t rows = in.get<std::uint32_t>();
        const std::size_t cols = in.get<std::uint32_t>();
        ToyLinearEncoder enc;
        enc.bins_ = in.get<std::uint16_t>();
        enc.window_frames_ = in.get<std::uint16_t>();
        enc.seed_ = in.get<std::uint64_t>();
        if (rows != kFingerprintDim || cols != enc.input_dim()) throw Error("CHTE dimension mismatch");
        enc.weights_.resize(rows * cols);
        in.get_array(enc.weights_.data(), enc.weights_.size());
        return enc;
    }

private:
    std::size_t bins_ = 0;
    std::size_t window_frames_ = 0;
    std::uint64_t seed_ = 0;
    std::vector<float> weights_; // 128 x input_dim, row-major
};

struct TrainOptions {
    std::size_t epochs = 100;
    double learning_rate = 0.001;
    std::size_t groups_per_batch = 8; // K
    std::size_t max_per_group = 4;    // n_max
    std::size_t batches_per_epoch = 0; // 0: ceil(groups / K)
    std::size_t monitor_batches = 4;
    double init_scale = 1.0;
    std::uint64_t seed = 0;
};

struct TrainResult {
    ToyLinearEncoder encoder;
    /// Mean loss over a fixed set of monitor batches, measured at the start of
    /// each epoch (entry 0 is the untrained encoder).
    std::vector<double> loss_trace;
};

namespace detail {

struct Forward {
    std::vector<std::vector<float>> inputs;
    std::vector<std::array<double, kFingerprintDim>> raw;
    std::vector<double> norms;
    Matrix z;
};

inline Forward toy_forward(const ToyLinearEncoder& enc, const TrainingBatch& batch) {
    Forward f;
    const std::size_t n = batch.windows.size();
    f.z = Matrix(n, kFingerprintDim);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& w = batch.windows[i];
        f.inputs.emplace_back(w.data.begin(), w.data.end());
        f.raw.push_back(enc.project(f.inputs.back()));
        double n2 = 0.0;
        for (double v : f.raw.back()) n2 += v * v;
        f.norms.push_back(std::sqrt(n2));
        const double inv = f.norms.back() > 1e-12 ? 1.0 / f.norms.back() : 0.0;
        for (std::size_t d = 0; d < kFingerprintDim; ++d) f.z(i, d) = f.raw.back()[d] * inv;
    }
    return f;
}

} // namespace detail

/// Plain gradient descent on the group contrastive loss over sampled batches.
inline TrainResult train_toy_encoder(std::span<const FragmentGroup> dataset, const EncoderConfig& config, const LossParams& params,
                                     const TrainOptions& opts) {
    const auto pool = eligible_groups(dataset, config.window_frames);
    if (pool.size() < 2 || pool.size() < opts.groups_per_batch) throw Error("insufficient groups for training");
    const std::size_t bins = dataset[pool.front()].members.front().bins;
    const std::size_t k = opts.groups_per_batch;
    const std::size_t per_epoch = opts.batches_per_epoch ? opts.batches_per_epoch : (pool.size() + k - 1) / k;

    std::mt19937_64 rng(opts.seed);
    std::mt19937_64 monitor_rng(opts.seed ^ 0x9E3779B97F4A7C15ull);
    std::vector<TrainingBatch> monitor;
    for (std::size_t i = 0; i < std::max<std::size_t>(1, opts.monitor_batches); ++i)
        monitor.push_back(sample_batch(dataset, k, config.window_frames, monitor_rng, opts.max_per_group));

    TrainResult result{ToyLinearEncoder(bins, config.window_frames, opts.seed, opts.init_scale), {}};
    auto& enc = result.encoder;
    std::vector<double> grad_a(enc.weights().size());

    const auto monitor_loss = [&] {
        double total = 0.0;
        for (const auto& b : monitor) total += ntxent_loss(detail::toy_forward(enc, b).z, b.labels, params);
        return total / static_cast<double>(monitor.size());
    };

    for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
        result.loss_trace.push_back(monitor_loss());
        for (std::size_t it = 0; it < per_epoch; ++it) {
            const auto batch = sample_batch(dataset, k, config.window_frames, rng, opts.max_per_group);
            if (opts.learning_rate == 0.0) continue;
            const auto fwd = detail::toy_forward(enc, batch);
            const auto lg = ntxent_loss_and_grad(fwd.z, batch.labels, params);
            std::fill(grad_a.begin(), grad_a.end(), 0.0);
            const std::size_t dim = enc.input_dim();
            for (std::size_t i = 0; i < batch.windows.size(); ++i) {
                if (fwd.norms[i] <= 1e-12) continue;
                // Back through the L2 normalization: (I - z z^T) g / |v|.
                const auto g = lg.grad.row(i);
                double zg = 0.0;
                for (std::size_t d = 0; d < kFingerprintDim; ++d) zg += fwd.z(i, d) * g[d];
                const auto& x = fwd.inputs[i];
                for (std::size_t d = 0; d < kFingerprintDim; ++d) {
                    const double gv = (g[d] - fwd.z(i, d) * zg) / fwd.norms[i];
                    if (gv == 0.0) continue;
                    double* ga = grad_a.data() + d * dim;
                    for (std::size_t c = 0; c < dim; ++c) ga[c] += gv * x[c];
                }
            }
            auto w = enc.weights();
            for (std::size_t j = 0; j < w.size(); ++j) w[j] = static_cast<float>(w[j] - opts.learning_rate * grad_a[j]);
        }
    }
    return result;
}

inline void write_loss_trace_csv(std::span<const double> trace, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot open for writing: " + path);
    out << "epoch,mean_loss\n";
    out.precision(17);
    for (std::size_t i = 0; i < trace.size(); ++i) out << (i + 1) << ',' << trace[i] << '\n';
}

} // namespace qbh
