#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "qbh/binary_io.hpp"
#include "qbh/error.hpp"

namespace qbh {

inline constexpr double kEngineSampleRate = 16000.0;

/// Mono PCM audio. Samples are nominally in [-1, 1].
struct Waveform {
    std::vector<float> samples;
    double sample_rate = kEngineSampleRate;

    std::size_t size() const { return samples.size(); }
    double duration_s() const { return static_cast<double>(samples.size()) / sample_rate; }

    void validate() const {
        detail::require(sample_rate > 0.0, "sample_rate must be positive");
        for (float s : samples)
            detail::require(std::isfinite(s), "non-finite sample");
    }
};

/// Per-frame RMS amplitude, frame t covering samples [t*hop, t*hop + frame_length).
struct RmsEnvelope {
    std::vector<double> values;
    std::size_t frame_length = 2048;
    std::size_t hop = 512;
    double sample_rate = kEngineSampleRate;
    std::size_t signal_length = 0;
};

// ---------------------------------------------------------------------------
// WAV I/O

namespace detail {

inline std::uint16_t le16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }
inline std::uint32_t le32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

} // namespace detail

/// Reads a RIFF/WAVE file holding 16-bit PCM or 32-bit float samples. Any
/// channel count is downmixed by channel mean; values are clamped to [-1, 1].
inline Waveform load_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("unreadable file: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || std::string(bytes.begin(), bytes.begin() + 4) != "RIFF" ||
        std::string(bytes.begin() + 8, bytes.begin() + 12) != "WAVE")
        throw Error("unreadable file: " + path);

    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    bool have_fmt = false;
    const unsigned char* data = nullptr;
    std::size_t data_size = 0;

    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const std::string id(bytes.begin() + static_cast<long>(pos), bytes.begin() + static_cast<long>(pos) + 4);
        const std::size_t size = detail::le32(&bytes[pos + 4]);
        const std::size_t body = pos + 8;
        if (id == "fmt ") {
            if (size < 16 || body + 16 > bytes.size()) throw Error("unreadable file: " + path);
            format = detail::le16(&bytes[body]);
            channels = detail::le16(&bytes[body + 2]);
            rate = detail::le32(&bytes[body + 4]);
            bits = detail::le16(&bytes[body + 14]);
            if (format == 0xFFFE && size >= 26 && body + 26 <= bytes.size())
                format = detail::le16(&bytes[body + 24]); // WAVE_FORMAT_EXTENSIBLE subformat
            have_fmt = true;
        } else if (id == "data") {
            data = bytes.data() + body;
            data_size = std::min(size, bytes.size() - std::min(body, bytes.size()));
            break;
        }
        pos = body + size + (size & 1u);
    }
    if (!have_fmt || data == nullptr || channels == 0 || rate == 0) throw Error("unreadable file: " + path);

    const bool pcm16 = format == 1 && bits == 16;
    const bool f32 = format == 3 && bits == 32;
    if (!pcm16 && !f32) throw Error("unsupported codec: " + path);

    const std::size_t bytes_per_frame = static_cast<std::size_t>(channels) * (bits / 8);
    const std::size_t frames = data_size / bytes_per_frame;
    if (frames == 0) throw Error("zero-length audio: " + path);

    Waveform w;
    w.sample_rate = rate;
    w.samples.resize(frames);
    for (std::size_t i = 0; i < frames; ++i) {
        double acc = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
            const unsigned char* p = data + i * bytes_per_frame + c * (bits / 8);
            if (pcm16) {
                acc += static_cast<std::int16_t>(detail::le16(p)) / 32768.0;
            } else {
                float v;
                std::memcpy(&v, p, 4);
                acc += std::isfinite(v) ? v : 0.0f;
            }
        }
        w.samples[i] = static_cast<float>(std::clamp(acc / channels, -1.0, 1.0));
    }
    return w;
}

enum class WavEncoding { pcm16, float32 };

inline void save_wav(const Waveform& w, const std::string& path, WavEncoding enc = WavEncoding::pcm16) {
    const std::uint16_t bits = enc == WavEncoding::pcm16 ? 16 : 32;
    const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * (bits / 8));
    const auto rate = static_cast<std::uint32_t>(std::lround(w.sample_rate));
    io::Writer out;
    out.magic("RIFF");
    out.put<std::uint32_t>(36 + data_bytes);
    out.magic("WAVEfmt ");
    out.put<std::uint32_t>(16);
    out.put<std::uint16_t>(enc == WavEncoding::pcm16 ? 1 : 3);
    out.put<std::uint16_t>(1);
    out.put<std::uint32_t>(rate);
    out.put<std::uint32_t>(rate * (bits / 8));
    out.put<std::uint16_t>(bits / 8);
    out.put<std::uint16_t>(bits);
    out.magic("data");
    out.put<std::uint32_t>(data_bytes);
    for (float s : w.samples) {
        const float c = std::clamp(s, -1.0f, 1.0f);
        if (enc == WavEncoding::pcm16)
            out.put<std::int16_t>(static_cast<std::int16_t>(std::lround(c * 32767.0f)));
        else
            out.put<float>(c);
    }
    out.save(path);
}

// ---------------------------------------------------------------------------
// Resampling: Blackman-windowed sinc, 16 zero crossings per side at the
// narrower of the two Nyquist bands.

inline Waveform resample(const Waveform& w, double target_rate) {
    detail::require(target_rate > 0.0, "target_rate must be positive");
    if (target_rate == w.sample_rate) return w;

    const double ratio = target_rate / w.sample_rate;
    const double cutoff = std::min(1.0, ratio); // relative to input Nyquist
    constexpr int kZeros = 16;
    const double half_width = kZeros / cutoff;
    const auto n_out = static_cast<std::size_t>(std::llround(static_cast<double>(w.size()) * ratio));
    const auto n_in = static_cast<long>(w.size());

    // Kernel tabulated on a fine grid and linearly interpolated.
    constexpr int kOversample = 512;
    const auto table_len = static_cast<std::size_t>(std::ceil(half_width * kOversample)) + 2;
    std::vector<double> table(table_len);
    for (std::size_t k = 0; k < table_len; ++k) {
        const double x = static_cast<double>(k) / kOversample;
        const double u = std::min(1.0, x / half_width);
        const double win = 0.42 + 0.5 * std::cos(std::numbers::pi * u) + 0.08 * std::cos(2.0 * std::numbers::pi * u);
        const double arg = std::numbers::pi * cutoff * x;
        const double sinc = arg < 1e-12 ? 1.0 : std::sin(arg) / arg;
        table[k] = cutoff * sinc * win;
    }
    const auto kernel = [&](double x) {
        const double pos = std::abs(x) * kOversample;
        const auto k = static_cast<std::size_t>(pos);
        if (k + 1 >= table_len) return 0.0;
        const double frac = pos - static_cast<double>(k);
        return table[k] + frac * (table[k + 1] - table[k]);
    };

    Waveform out;
    out.sample_rate = target_rate;
    out.samples.resize(n_out);
    for (std::size_t i = 0; i < n_out; ++i) {
        const double t = static_cast<double>(i) / ratio;
        const long lo = std::max(0L, static_cast<long>(std::ceil(t - half_width)));
        const long hi = std::min(n_in - 1, static_cast<long>(std::floor(t + half_width)));
        double acc = 0.0;
        for (long j = lo; j <= hi; ++j)
            acc += w.samples[static_cast<std::size_t>(j)] * kernel(static_cast<double>(j) - t);
        out.samples[i] = static_cast<float>(acc);
    }
    return out;
}

// ---------------------------------------------------------------------------

inline RmsEnvelope rms_envelope(const Waveform& w, std::size_t frame_length = 2048, std::size_t hop = 512) {
    detail::require(hop >= 1 && frame_length >= hop, "rms_envelope requires frame_length >= hop >= 1");
    if (w.size() < frame_length) throw Error("waveform shorter than one frame");

    RmsEnvelope env;
    env.frame_length = frame_length;
    env.hop = hop;
    env.sample_rate = w.sample_rate;
    env.signal_length = w.size();
    const std::size_t frames = (w.size() - frame_length) / hop + 1;
    env.values.resize(frames);
    for (std::size_t t = 0; t < frames; ++t) {
        double acc = 0.0;
        const float* p = w.samples.data() + t * hop;
        for (std::size_t i = 0; i < frame_length; ++i) acc += static_cast<double>(p[i]) * p[i];
        env.values[t] = std::sqrt(acc / static_cast<double>(frame_length));
    }
    return env;
}

inline double rms(std::span<const float> x) {
    if (x.empty()) return 0.0;
    double acc = 0.0;
    for (float v : x) acc += static_cast<double>(v) * v;
    return std::sqrt(acc / static_cast<double>(x.size()));
}

/// Copies the sample range [start_s, end_s) of a waveform, clamped to its bounds.
inline Waveform slice(const Waveform& w, double start_s, double end_s) {
    const auto clampi = [&](double s) {
        return static_cast<std::size_t>(std::clamp<long long>(std::llround(s * w.sample_rate), 0, static_cast<long long>(w.size())));
    };
    const std::size_t a = clampi(start_s), b = clampi(end_s);
    Waveform out;
    out.sample_rate = w.sample_rate;
    if (b > a) out.samples.assign(w.samples.begin() + static_cast<long>(a), w.samples.begin() + static_cast<long>(b));
    return out;
}

} // namespace qbh
