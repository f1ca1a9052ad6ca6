#include <gtest/gtest.h>

#include <cstring>
#include <fstream>

#include "test_util.hpp"

using namespace qbh;
using namespace qbh::testing;

namespace {

void put16(std::vector<char>& b, std::uint16_t v) {
    b.push_back(static_cast<char>(v & 0xff));
    b.push_back(static_cast<char>(v >> 8));
}
void put32(std::vector<char>& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

/// Hand-built RIFF file; `payload` is the raw data chunk.
std::vector<char> wav_bytes(std::uint16_t format, std::uint16_t channels, std::uint32_t rate, std::uint16_t bits, const std::vector<char>& payload) {
    std::vector<char> b;
    const auto tag = [&](const char* t) { b.insert(b.end(), t, t + 4); };
    tag("RIFF");
    put32(b, static_cast<std::uint32_t>(36 + payload.size()));
    tag("WAVE");
    tag("fmt ");
    put32(b, 16);
    put16(b, format);
    put16(b, channels);
    put32(b, rate);
    put32(b, rate * channels * bits / 8);
    put16(b, static_cast<std::uint16_t>(channels * bits / 8));
    put16(b, bits);
    tag("data");
    put32(b, static_cast<std::uint32_t>(payload.size()));
    b.insert(b.end(), payload.begin(), payload.end());
    return b;
}

void write_file(const std::string& path, const std::vector<char>& bytes) {
    std::ofstream(path, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

} // namespace

TEST(Wav, Pcm16RoundTripWithinQuantization) {
    TempDir dir("wav");
    const auto w = sine(440.0, 0.25, 0.5);
    save_wav(w, dir.file("a.wav"));
    const auto r = load_wav(dir.file("a.wav"));
    ASSERT_EQ(r.size(), w.size());
    EXPECT_EQ(r.sample_rate, w.sample_rate);
    for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(r.samples[i], w.samples[i], 1.0 / 32767.0);
}

TEST(Wav, Float32RoundTripIsExact) {
    TempDir dir("wav");
    const auto w = sine(300.0, 0.1, 0.7, 22050.0);
    save_wav(w, dir.file("f.wav"), WavEncoding::float32);
    const auto r = load_wav(dir.file("f.wav"));
    EXPECT_EQ(r.samples, w.samples);
    EXPECT_EQ(r.sample_rate, 22050.0);
}

TEST(Wav, StereoIsAveragedAndClipped) {
    TempDir dir("wav");
    std::vector<char> payload;
    const float frames[][2] = {{0.5f, -0.5f}, {1.0f, 0.5f}, {3.0f, 3.0f}};
    for (const auto& f : frames)
        for (float v : f) {
            char raw[4];
            std::memcpy(raw, &v, 4);
            payload.insert(payload.end(), raw, raw + 4);
        }
    write_file(dir.file("s.wav"), wav_bytes(3, 2, 16000, 32, payload));
    const auto w = load_wav(dir.file("s.wav"));
    ASSERT_EQ(w.size(), 3u);
    EXPECT_FLOAT_EQ(w.samples[0], 0.0f);
    EXPECT_FLOAT_EQ(w.samples[1], 0.75f);
    EXPECT_FLOAT_EQ(w.samples[2], 1.0f);
}

TEST(Wav, ErrorPaths) {
    TempDir dir("wav");
    EXPECT_THROW(
        {
            try {
                load_wav(dir.file("missing.wav"));
            } catch (const Error& e) {
                EXPECT_NE(std::string(e.what()).find("unreadable file"), std::string::npos);
                throw;
            }
        },
        Error);

    write_file(dir.file("junk.wav"), {'n', 'o', 't', 'a', 'w', 'a', 'v'});
    EXPECT_THROW(load_wav(dir.file("junk.wav")), Error);

    write_file(dir.file("alaw.wav"), wav_bytes(6, 1, 8000, 8, {1, 2, 3, 4}));
    try {
        load_wav(dir.file("alaw.wav"));
        FAIL() << "expected unsupported codec";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("unsupported codec"), std::string::npos);
    }

    write_file(dir.file("empty.wav"), wav_bytes(1, 1, 16000, 16, {}));
    try {
        load_wav(dir.file("empty.wav"));
        FAIL() << "expected zero-length error";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("zero-length audio"), std::string::npos);
    }
}

TEST(Resample, EqualRateIsIdentity) {
    const auto w = sine(123.0, 0.2, 0.3);
    EXPECT_EQ(resample(w, w.sample_rate).samples, w.samples);
}

TEST(Resample, OneSecondKeepsDuration) {
    Waveform w = silence(1.0, 44100.0);
    EXPECT_EQ(resample(w, 16000.0).size(), 16000u);
    EXPECT_THROW(resample(w, 0.0), Error);
}

TEST(Resample, ToneSurvivesDownsampling) {
    const auto w = sine(440.0, 1.0, 0.5, 48000.0);
    const auto r = resample(w, 16000.0);
    EXPECT_EQ(r.sample_rate, 16000.0);
    EXPECT_NEAR(static_cast<double>(r.size()), 16000.0, 1.0);
    // Bin spacing of a one-second DFT is 1 Hz.
    EXPECT_NEAR(dft_peak(r.samples, 16000.0, 400.0, 480.0, 1.0), 440.0, 1.0);
}

TEST(Resample, UpsamplingKeepsAmplitude) {
    const auto w = sine(200.0, 0.5, 0.5, 8000.0);
    const auto r = resample(w, 16000.0);
    const auto mid = std::span<const float>(r.samples).subspan(2000, 4000);
    EXPECT_NEAR(rms(mid), 0.5 / std::sqrt(2.0), 5e-3);
}

TEST(Rms, Examples) {
    Waveform c = silence(0.5);
    std::fill(c.samples.begin(), c.samples.end(), 0.5f);
    for (double v : rms_envelope(c).values) EXPECT_NEAR(v, 0.5, 1e-7);

    for (double v : rms_envelope(silence(0.5)).values) EXPECT_EQ(v, 0.0);

    // 250 Hz at 16 kHz: 64 samples per period, 2048 = 32 whole periods.
    for (double v : rms_envelope(sine(250.0, 0.5)).values) EXPECT_NEAR(v, 1.0 / std::sqrt(2.0), 1e-3);
}

TEST(Rms, FrameCountFormula) {
    for (std::size_t len : {2048u, 2049u, 2559u, 2560u, 16000u, 16001u}) {
        Waveform w;
        w.samples.assign(len, 0.1f);
        EXPECT_EQ(rms_envelope(w).values.size(), (len - 2048) / 512 + 1) << len;
    }
    Waveform shorter;
    shorter.samples.assign(2047, 0.1f);
    EXPECT_THROW(rms_envelope(shorter), Error);
}

TEST(Rms, ScaleEquivariant) {
    const auto w = white_noise(1.0, 0.1, 5);
    const auto base = rms_envelope(w);
    for (double c : {-2.0, 0.25, -0.5, 3.0}) {
        Waveform s = w;
        for (float& x : s.samples) x = static_cast<float>(c * x);
        const auto env = rms_envelope(s);
        for (std::size_t t = 0; t < env.values.size(); ++t) {
            // Powers of two scale float samples exactly; c = 3 is limited by float storage of c*x.
            const double tol = (c == 3.0 ? 1e-6 : 1e-9) * std::abs(c) * base.values[t];
            EXPECT_NEAR(env.values[t], std::abs(c) * base.values[t], tol);
        }
    }
}

TEST(Slice, ClampsToBounds) {
    const auto w = sine(100.0, 1.0);
    EXPECT_EQ(slice(w, 0.25, 0.5).size(), 4000u);
    EXPECT_EQ(slice(w, -1.0, 0.1).size(), 1600u);
    EXPECT_EQ(slice(w, 0.9, 5.0).size(), 1600u);
}
