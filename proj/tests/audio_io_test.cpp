#include <gtest/gtest.h>

#include <filesystem>

#include "face/audio_io.hpp"
#include "support.hpp"

namespace {

using namespace face;
using face::testing::dft_peak_bin;
using face::testing::make_clip;
using face::testing::sine;

std::vector<std::uint8_t> pcm16_wav(const std::vector<std::int16_t>& interleaved, int rate, int channels) {
    std::vector<std::uint8_t> out;
    auto put32 = [&](std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    };
    auto put16 = [&](std::uint16_t v) {
        out.push_back(static_cast<std::uint8_t>(v));
        out.push_back(static_cast<std::uint8_t>(v >> 8));
    };
    const std::uint32_t data = static_cast<std::uint32_t>(interleaved.size() * 2);
    out.insert(out.end(), {'R', 'I', 'F', 'F'});
    put32(36 + data);
    out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
    put32(16);
    put16(1);
    put16(static_cast<std::uint16_t>(channels));
    put32(static_cast<std::uint32_t>(rate));
    put32(static_cast<std::uint32_t>(rate * channels * 2));
    put16(static_cast<std::uint16_t>(channels * 2));
    put16(16);
    out.insert(out.end(), {'d', 'a', 't', 'a'});
    put32(data);
    for (auto s : interleaved) put16(static_cast<std::uint16_t>(s));
    return out;
}

TEST(AudioIo, Pcm16FullScaleMapsBelowOne) {
    const auto clip = decode_wav(pcm16_wav({32767, -32768, 0}, 22050, 1), "x");
    ASSERT_EQ(clip.samples.size(), 3u);
    EXPECT_NEAR(clip.samples[0], 0.99997, 1e-5);
    EXPECT_DOUBLE_EQ(clip.samples[1], -1.0);
    EXPECT_DOUBLE_EQ(clip.samples[2], 0.0);
    EXPECT_EQ(clip.sample_rate, 22050);
}

TEST(AudioIo, StereoOppositeChannelsCancel) {
    const auto clip = decode_wav(pcm16_wav({1000, -1000, 20000, -20000}, 44100, 2), "x");
    ASSERT_EQ(clip.samples.size(), 2u);
    EXPECT_DOUBLE_EQ(clip.samples[0], 0.0);
    EXPECT_DOUBLE_EQ(clip.samples[1], 0.0);
}

TEST(AudioIo, FourSecondsAt44kHasExpectedLength) {
    std::vector<std::int16_t> pcm(176400, 100);
    const auto clip = decode_wav(pcm16_wav(pcm, 44100, 1), "x");
    EXPECT_EQ(clip.samples.size(), 176400u);
    EXPECT_DOUBLE_EQ(clip.duration(), 4.0);
}

TEST(AudioIo, FloatWavRoundTrip) {
    const std::vector<double> s = {0.25, -0.5, 0.125, 0.0};
    const auto bytes = encode_wav(s, 16000, 1, true);
    const auto clip = decode_wav(bytes, "f");
    ASSERT_EQ(clip.samples.size(), s.size());
    for (std::size_t i = 0; i < s.size(); ++i) EXPECT_DOUBLE_EQ(clip.samples[i], s[i]);
    EXPECT_EQ(clip.sample_rate, 16000);
}

TEST(AudioIo, FileRoundTripUsesStemAsId) {
    const auto dir = std::filesystem::temp_directory_path() / "face_audio_io_test";
    std::filesystem::create_directories(dir);
    const auto path = dir / "dog_bark_7.wav";
    const auto s = sine(440.0, 22050, 0.1);
    write_wav(path, s, 22050);
    const auto clip = load_audio(path);
    EXPECT_EQ(clip.id, "dog_bark_7");
    ASSERT_EQ(clip.samples.size(), s.size());
    for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(clip.samples[i], s[i], 1.0 / 32768.0);
    std::filesystem::remove_all(dir);
}

TEST(AudioIo, RejectsMalformedInput) {
    const std::vector<std::uint8_t> junk = {'n', 'o', 'p', 'e'};
    EXPECT_THROW(decode_wav(junk, "x"), Error);
    EXPECT_THROW(decode_wav(pcm16_wav({}, 22050, 1), "x"), Error);
    EXPECT_THROW(load_audio("/nonexistent/file.wav"), IoError);
}

TEST(Resample, SameRateIsIdentity) {
    const auto clip = make_clip(sine(300.0, 22050, 0.2));
    const auto out = resample(clip, 22050);
    EXPECT_EQ(out.samples, clip.samples);
}

TEST(Resample, PreservesDurationAndTonePitch) {
    const auto clip = make_clip(sine(1000.0, 44100, 0.5), 44100);
    const auto out = resample(clip, 22050);
    EXPECT_EQ(out.sample_rate, 22050);
    EXPECT_EQ(out.samples.size(), 11025u);
    EXPECT_NEAR(out.duration(), clip.duration(), 1e-9);
    // 1 kHz over a 2205-sample window at 22050 Hz sits at bin 100
    const std::vector<double> window(out.samples.begin() + 4000, out.samples.begin() + 6205);
    const auto bin = static_cast<long>(dft_peak_bin(window));
    EXPECT_LE(std::abs(bin - 100), 1);
}

TEST(Resample, UpsamplingKeepsAmplitude) {
    const auto clip = make_clip(sine(500.0, 16000, 0.5, 0.5), 16000);
    const auto out = resample(clip, 22050);
    double peak = 0.0;
    for (std::size_t i = 2000; i + 2000 < out.samples.size(); ++i) peak = std::max(peak, std::abs(out.samples[i]));
    EXPECT_NEAR(peak, 0.5, 0.01);
}

} // namespace
