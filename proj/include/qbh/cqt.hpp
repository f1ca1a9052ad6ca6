#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "qbh/audio.hpp"
#include "qbh/binary_io.hpp"
#include "qbh/error.hpp"

namespace qbh {

struct CqtParams {
    static constexpr std::size_t kBinsPerOctave = 12;
    static constexpr std::size_t kOctaves = 7;
    static constexpr std::size_t kBins = kBinsPerOctave * kOctaves; // 84
    static constexpr std::size_t kHop = 512;
    static constexpr double kFMin = 32.70; // C1
    static constexpr double kSampleRate = kEngineSampleRate;
    static constexpr double kFrameRate = kSampleRate / kHop; // 31.25 fps

    static double bin_frequency(double bin) { return kFMin * std::exp2(bin / static_cast<double>(kBinsPerOctave)); }
};

/// Time-frequency magnitudes, bins x frames, stored row-major (one row per bin).
struct FeatureMatrix {
    std::size_t bins = 0;
    std::size_t frames = 0;
    std::vector<float> data;
    std::size_t bins_per_octave = CqtParams::kBinsPerOctave;
    std::size_t n_octaves = CqtParams::kOctaves;
    std::size_t hop = CqtParams::kHop;
    double f_min = CqtParams::kFMin;
    double frame_rate = CqtParams::kFrameRate;

    FeatureMatrix() = default;
    FeatureMatrix(std::size_t n_bins, std::size_t n_frames) : bins(n_bins), frames(n_frames), data(n_bins * n_frames, 0.0f) {}

    float& at(std::size_t bin, std::size_t frame) { return data[bin * frames + frame]; }
    float at(std::size_t bin, std::size_t frame) const { return data[bin * frames + frame]; }
    std::span<float> row(std::size_t bin) { return {data.data() + bin * frames, frames}; }
    std::span<const float> row(std::size_t bin) const { return {data.data() + bin * frames, frames}; }

    /// Columns [first, first + count) as a new matrix with the same metadata.
    FeatureMatrix slice_frames(std::size_t first, std::size_t count) const {
        detail::require(first + count <= frames, "frame slice out of range");
        FeatureMatrix out = *this;
        out.frames = count;
        out.data.assign(bins * count, 0.0f);
        for (std::size_t b = 0; b < bins; ++b)
            std::copy_n(data.begin() + static_cast<long>(b * frames + first), count, out.data.begin() + static_cast<long>(b * count));
        return out;
    }

    double duration_s() const { return static_cast<double>(frames) / frame_rate; }
};

// ---------------------------------------------------------------------------
// Constant-Q transform.
//
// Realized as a per-octave recursive filterbank: the top octave (B7 down to
// C7) is analysed at 16 kHz, and each lower octave on a signal decimated by a
// further factor of two through a zero-phase half-band FIR. Because bin
// frequency and sample rate halve together, one set of 12 Hann-windowed
// complex kernels serves every octave. Frames are centered on t*512 input
// samples with zero padding outside the signal. Magnitudes are linear and
// scaled so that a unit-amplitude sinusoid at a bin center reads ~1.0.

namespace detail {

struct CqtKernel {
    std::vector<std::complex<double>> taps; // index 0 <-> offset -half
    long half = 0;
};

inline double cqt_q_factor() { return 1.0 / (std::exp2(1.0 / CqtParams::kBinsPerOctave) - 1.0); }

/// Kernel for a tone at normalized frequency `f_over_rate` (cycles per sample).
inline CqtKernel make_cqt_kernel(double f_over_rate) {
    const double length = cqt_q_factor() / f_over_rate;
    CqtKernel k;
    k.half = static_cast<long>(std::floor(length / 2.0));
    const long n = 2 * k.half + 1;
    k.taps.resize(static_cast<std::size_t>(n));
    double wsum = 0.0;
    for (long m = -k.half; m <= k.half; ++m) {
        const double w = 0.5 + 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(n + 1));
        wsum += w;
        k.taps[static_cast<std::size_t>(m + k.half)] = w * std::polar(1.0, -2.0 * std::numbers::pi * f_over_rate * static_cast<double>(m));
    }
    for (auto& t : k.taps) t *= 2.0 / wsum;
    return k;
}

/// Half-band low-pass (cutoff at a quarter of the input rate), Blackman window.
inline std::vector<double> halfband_taps() {
    constexpr long kHalf = 16;
    std::vector<double> h(2 * kHalf + 1);
    double sum = 0.0;
    for (long j = -kHalf; j <= kHalf; ++j) {
        const double u = static_cast<double>(j) / (kHalf + 1);
        const double win = 0.42 + 0.5 * std::cos(std::numbers::pi * u) + 0.08 * std::cos(2.0 * std::numbers::pi * u);
        const double arg = std::numbers::pi * 0.5 * static_cast<double>(j);
        const double sinc = j == 0 ? 1.0 : std::sin(arg) / arg;
        h[static_cast<std::size_t>(j + kHalf)] = 0.5 * sinc * win;
        sum += h[static_cast<std::size_t>(j + kHalf)];
    }
    for (double& v : h) v /= sum;
    return h;
}

inline std::vector<double> decimate2(const std::vector<double>& x, const std::vector<double>& h) {
    const long half = static_cast<long>(h.size() / 2);
    const long n_in = static_cast<long>(x.size());
    std::vector<double> y((x.size() + 1) / 2);
    for (long n = 0; n < static_cast<long>(y.size()); ++n) {
        double acc = 0.0;
        for (long j = -half; j <= half; ++j) {
            const double tap = h[static_cast<std::size_t>(j + half)];
            if (tap == 0.0) continue;
            const long idx = 2 * n + j;
            if (idx >= 0 && idx < n_in) acc += tap * x[static_cast<std::size_t>(idx)];
        }
        y[static_cast<std::size_t>(n)] = acc;
    }
    return y;
}

} // namespace detail

inline FeatureMatrix cqt(const Waveform& w) {
    detail::require(w.sample_rate == CqtParams::kSampleRate, "cqt expects 16 kHz input");
    if (w.size() < CqtParams::kHop) throw Error("too-short input for cqt");

    constexpr std::size_t kBpo = CqtParams::kBinsPerOctave;
    constexpr std::size_t kOct = CqtParams::kOctaves;
    const std::size_t frames = (w.size() + CqtParams::kHop - 1) / CqtParams::kHop;
    FeatureMatrix out(CqtParams::kBins, frames);

    // Kernels are shared by all octaves: within the top octave at 16 kHz.
    std::array<detail::CqtKernel, kBpo> kernels;
    for (std::size_t i = 0; i < kBpo; ++i) {
        const double f = CqtParams::bin_frequency(static_cast<double>((kOct - 1) * kBpo + i));
        kernels[i] = detail::make_cqt_kernel(f / CqtParams::kSampleRate);
    }
    const auto h = detail::halfband_taps();

    std::vector<double> level(w.samples.begin(), w.samples.end());
    for (std::size_t oct = kOct; oct-- > 0;) {
        const std::size_t factor = std::size_t{1} << (kOct - 1 - oct);
        const long hop = static_cast<long>(CqtParams::kHop / factor);
        const long n = static_cast<long>(level.size());
        for (std::size_t i = 0; i < kBpo; ++i) {
            const auto& k = kernels[i];
            const std::size_t bin = oct * kBpo + i;
            for (std::size_t t = 0; t < frames; ++t) {
                const long center = static_cast<long>(t) * hop;
                const long lo = std::max(-k.half, -center);
                const long hi = std::min(k.half, n - 1 - center);
                double re = 0.0, im = 0.0;
                for (long m = lo; m <= hi; ++m) {
                    const double x = level[static_cast<std::size_t>(center + m)];
                    const auto& c = k.taps[static_cast<std::size_t>(m + k.half)];
                    re += x * c.real();
                    im += x * c.imag();
                }
                out.at(bin, t) = static_cast<float>(std::sqrt(re * re + im * im));
            }
        }
        if (oct > 0) level = detail::decimate2(level, h);
    }
    return out;
}

// ---------------------------------------------------------------------------
// CHFM blob: magic, version u8, bins u16, frames u32, f32 row-major.

inline constexpr std::uint8_t kFeatureFormatVersion = 1;

inline std::vector<char> serialize_features(const FeatureMatrix& m) {
    io::Writer out;
    out.magic("CHFM");
    out.put<std::uint8_t>(kFeatureFormatVersion);
    out.put<std::uint16_t>(static_cast<std::uint16_t>(m.bins));
    out.put<std::uint32_t>(static_cast<std::uint32_t>(m.frames));
    out.put_array(m.data.data(), m.data.size());
    return out.bytes();
}

inline FeatureMatrix deserialize_features(std::vector<char> bytes) {
    io::Reader in(std::move(bytes));
    in.expect_magic("CHFM");
    if (in.get<std::uint8_t>() != kFeatureFormatVersion) throw Error("unsupported CHFM version");
    const std::size_t bins = in.get<std::uint16_t>();
    const std::size_t frames = in.get<std::uint32_t>();
    FeatureMatrix m(bins, frames);
    in.get_array(m.data.data(), m.data.size());
    if (bins % CqtParams::kBinsPerOctave == 0) m.n_octaves = bins / CqtParams::kBinsPerOctave;
    return m;
}

inline void save_features(const FeatureMatrix& m, const std::string& path) {
    io::Writer w;
    const auto bytes = serialize_features(m);
    w.put_array(bytes.data(), bytes.size());
    w.save(path);
}

inline FeatureMatrix load_features(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open: " + path);
    return deserialize_features({std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()});
}

} // namespace qbh
