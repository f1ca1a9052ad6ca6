#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qbh/binary_io.hpp"
#include "qbh/cqt.hpp"
#include "qbh/error.hpp"
#include "qbh/parallel.hpp"

namespace qbh {

inline constexpr std::size_t kFingerprintDim = 128;

enum class Profile : std::uint8_t { short_window = 0, long_window = 1, custom = 2 };

inline std::string_view profile_name(Profile p) {
    switch (p) {
    case Profile::short_window: return "short";
    case Profile::long_window: return "long";
    case Profile::custom: return "custom";
    }
    return "custom";
}

/// Analysis-window geometry in seconds and in CQT frames.
struct EncoderConfig {
    double window_s = 3.0;
    double step_s = 0.25;
    std::size_t window_frames = 94;
    std::size_t step_frames = 8;
    Profile profile = Profile::short_window;

    /// Frame counts are rounded to the nearest CQT frame.
    static EncoderConfig from_seconds(double window_s, double step_s, Profile profile = Profile::custom,
                                      double frame_rate = CqtParams::kFrameRate) {
        EncoderConfig c;
        c.window_s = window_s;
        c.step_s = step_s;
        c.window_frames = static_cast<std::size_t>(std::lround(window_s * frame_rate));
        c.step_frames = static_cast<std::size_t>(std::lround(step_s * frame_rate));
        c.profile = profile;
        c.validate();
        return c;
    }
    static EncoderConfig short_profile() { return from_seconds(3.0, 0.25, Profile::short_window); }
    static EncoderConfig long_profile() { return from_seconds(8.0, 0.64, Profile::long_window); }

    static EncoderConfig for_profile(Profile p) {
        detail::require(p != Profile::custom, "custom profile has no preset");
        return p == Profile::short_window ? short_profile() : long_profile();
    }

    void validate() const {
        detail::require(step_frames >= 1 && window_frames >= step_frames, "encoder config requires window_frames >= step_frames >= 1");
    }

    double step_seconds(double frame_rate = CqtParams::kFrameRate) const { return static_cast<double>(step_frames) / frame_rate; }

    bool same_geometry(const EncoderConfig& o) const { return window_frames == o.window_frames && step_frames == o.step_frames; }
};

struct Fingerprint {
    std::array<float, kFingerprintDim> v{};

    double dot(const Fingerprint& o) const {
        double acc = 0.0;
        for (std::size_t i = 0; i < kFingerprintDim; ++i) acc += static_cast<double>(v[i]) * o.v[i];
        return acc;
    }
    double norm() const { return std::sqrt(dot(*this)); }
};

struct FingerprintSequence {
    std::vector<Fingerprint> prints;
    EncoderConfig config;
    std::string source_id;

    std::size_t size() const { return prints.size(); }
    bool empty() const { return prints.empty(); }
    const Fingerprint& operator[](std::size_t i) const { return prints[i]; }
};

/// Non-owning view over `frames` consecutive columns of a feature matrix.
class FeatureWindow {
public:
    FeatureWindow(const FeatureMatrix& src, std::size_t first, std::size_t frames) : src_(&src), first_(first), frames_(frames) {
        detail::require(first + frames <= src.frames, "window exceeds feature matrix");
    }

    std::size_t bins() const { return src_->bins; }
    std::size_t frames() const { return frames_; }
    std::size_t first_frame() const { return first_; }
    float at(std::size_t bin, std::size_t t) const { return src_->at(bin, first_ + t); }
    std::span<const float> row(std::size_t bin) const { return src_->row(bin).subspan(first_, frames_); }

    FeatureMatrix to_matrix() const { return src_->slice_frames(first_, frames_); }

private:
    const FeatureMatrix* src_;
    std::size_t first_;
    std::size_t frames_;
};

/// Maps one analysis window to a unit-norm fingerprint. Implementations must
/// be safe to call concurrently from several threads.
class Encoder {
public:
    virtual ~Encoder() = default;
    virtual Fingerprint encode_window(const FeatureWindow& window) const = 0;
    virtual std::string identity() const = 0;
    virtual bool deterministic() const { return true; }
};

namespace detail {

/// In-place L2 normalization; degenerate vectors become e_1.
inline Fingerprint normalized(std::span<const double> v) {
    double n2 = 0.0;
    for (double x : v) n2 += x * x;
    const double n = std::sqrt(n2);
    Fingerprint out;
    if (!(n >= 1e-12) || !std::isfinite(n)) {
        out.v[0] = 1.0f;
        return out;
    }
    for (std::size_t i = 0; i < kFingerprintDim; ++i) out.v[i] = static_cast<float>(v[i] / n);
    return out;
}

} // namespace detail

/// Deterministic stand-in for a trained network: per-bin temporal mean and
/// standard deviation, projected through a seeded Gaussian matrix.
class BaselineEncoder final : public Encoder {
public:
    static constexpr std::size_t kInputBins = CqtParams::kBins;
    static constexpr std::size_t kFeatures = 2 * kInputBins;
    static constexpr std::size_t kDetrendHalfWidth = 4;

    explicit BaselineEncoder(std::uint64_t seed = 0) : seed_(seed), projection_(kFingerprintDim * kFeatures) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        for (double& p : projection_) p = normal(rng);
    }

    /// The 168 summary statistics the projection acts on.
    static std::array<double, kFeatures> summary_features(const FeatureWindow& window) {
        detail::require(window.bins() == kInputBins, "baseline encoder expects 84-bin windows");
        detail::require(window.frames() >= 1, "empty window");
        std::array<double, kFeatures> f{};
        const double n = static_cast<double>(window.frames());
        for (std::size_t b = 0; b < kInputBins; ++b) {
            double sum = 0.0;
            for (float x : window.row(b)) sum += x;
            const double mean = sum / n;
            double var = 0.0;
            for (float x : window.row(b)) var += (x - mean) * (x - mean);
            f[b] = mean;
            f[kInputBins + b] = std::sqrt(var / n);
        }
        // Subtract a running mean across neighbouring bins from each half. This
        // removes the broad spectral envelope that every window shares and
        // keeps the pitch-specific peaks.
        std::array<double, kFeatures> g{};
        for (std::size_t half = 0; half < 2; ++half) {
            const double* src = f.data() + half * kInputBins;
            for (std::size_t b = 0; b < kInputBins; ++b) {
                const std::size_t lo = b >= kDetrendHalfWidth ? b - kDetrendHalfWidth : 0;
                const std::size_t hi = std::min(kInputBins - 1, b + kDetrendHalfWidth);
                double local = 0.0;
                for (std::size_t k = lo; k <= hi; ++k) local += src[k];
                g[half * kInputBins + b] = src[b] - local / static_cast<double>(hi - lo + 1);
            }
        }
        f = g;
        return f;
    }

    Fingerprint encode_window(const FeatureWindow& window) const override {
        const auto f = summary_features(window);
        std::array<double, kFingerprintDim> z{};
        for (std::size_t r = 0; r < kFingerprintDim; ++r) {
            const double* p = projection_.data() + r * kFeatures;
            double acc = 0.0;
            for (std::size_t c = 0; c < kFeatures; ++c) acc += p[c] * f[c];
            z[r] = acc;
        }
        return detail::normalized(z);
    }

    std::string identity() const override { return "baseline-meanstd-v1:seed=" + std::to_string(seed_); }
    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::vector<double> projection_; // 128 x 168, row-major
};

inline Fingerprint baseline_encode(const FeatureWindow& window, std::uint64_t seed) { return BaselineEncoder(seed).encode_window(window); }

// ---------------------------------------------------------------------------

inline std::size_t window_count(std::size_t frames, const EncoderConfig& config) {
    if (frames < config.window_frames) return 0;
    return (frames - config.window_frames) / config.step_frames + 1;
}

inline std::vector<FeatureWindow> make_windows(const FeatureMatrix& features, const EncoderConfig& config) {
    config.validate();
    if (features.frames < config.window_frames) throw Error("input shorter than one window");
    const std::size_t count = window_count(features.frames, config);
    std::vector<FeatureWindow> windows;
    windows.reserve(count);
    for (std::size_t i = 0; i < count; ++i) windows.emplace_back(features, i * config.step_frames, config.window_frames);
    return windows;
}

inline void check_fingerprint_contract(const Fingerprint& fp) {
    double n2 = 0.0;
    for (float x : fp.v) {
        if (!std::isfinite(x)) throw ContractViolation("encoder emitted a non-finite fingerprint");
        n2 += static_cast<double>(x) * x;
    }
    if (std::abs(std::sqrt(n2) - 1.0) > 1e-6) throw ContractViolation("encoder emitted a fingerprint without unit norm");
}

inline FingerprintSequence encode_sequence(const FeatureMatrix& features, const EncoderConfig& config, const Encoder& encoder,
                                           std::string source_id = {}, unsigned threads = 1) {
    const auto windows = make_windows(features, config);
    FingerprintSequence seq;
    seq.config = config;
    seq.source_id = std::move(source_id);
    seq.prints.resize(windows.size());
    parallel_for(windows.size(), threads, [&](std::size_t i) { seq.prints[i] = encoder.encode_window(windows[i]); });
    for (const auto& fp : seq.prints) check_fingerprint_contract(fp);
    return seq;
}

// ---------------------------------------------------------------------------
// CHFP: magic, version u8, dim u16, count u32, window_frames u16,
// step_frames u16, frame_rate f32, count x 128 f32.

inline constexpr std::uint8_t kFingerprintFormatVersion = 1;

inline std::vector<char> serialize_fingerprints(const FingerprintSequence& seq, double frame_rate = CqtParams::kFrameRate) {
    io::Writer out;
    out.magic("CHFP");
    out.put<std::uint8_t>(kFingerprintFormatVersion);
    out.put<std::uint16_t>(static_cast<std::uint16_t>(kFingerprintDim));
    out.put<std::uint32_t>(static_cast<std::uint32_t>(seq.size()));
    out.put<std::uint16_t>(static_cast<std::uint16_t>(seq.config.window_frames));
    out.put<std::uint16_t>(static_cast<std::uint16_t>(seq.config.step_frames));
    out.put<float>(static_cast<float>(frame_rate));
    for (const auto& fp : seq.prints) out.put_array(fp.v.data(), kFingerprintDim);
    return out.bytes();
}

inline FingerprintSequence deserialize_fingerprints(std::vector<char> bytes) {
    io::Reader in(std::move(bytes));
    in.expect_magic("CHFP");
    if (in.get<std::uint8_t>() != kFingerprintFormatVersion) throw Error("unsupported CHFP version");
    if (in.get<std::uint16_t>() != kFingerprintDim) throw Error("CHFP dimension mismatch");
    const std::size_t count = in.get<std::uint32_t>();
    FingerprintSequence seq;
    seq.config.window_frames = in.get<std::uint16_t>();
    seq.config.step_frames = in.get<std::uint16_t>();
    const double frame_rate = in.get<float>();
    seq.config.window_s = static_cast<double>(seq.config.window_frames) / frame_rate;
    seq.config.step_s = static_cast<double>(seq.config.step_frames) / frame_rate;
    seq.config.profile = Profile::custom;
    for (Profile p : {Profile::short_window, Profile::long_window}) {
        const auto preset = EncoderConfig::for_profile(p);
        if (preset.same_geometry(seq.config)) seq.config = preset;
    }
    seq.prints.resize(count);
    for (auto& fp : seq.prints) in.get_array(fp.v.data(), kFingerprintDim);
    return seq;
}

inline void save_fingerprints(const FingerprintSequence& seq, const std::string& path) {
    io::Writer w;
    const auto bytes = serialize_fingerprints(seq);
    w.put_array(bytes.data(), bytes.size());
    w.save(path);
}

inline FingerprintSequence load_fingerprints(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open: " + path);
    return deserialize_fingerprints({std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()});
}

} // namespace qbh
