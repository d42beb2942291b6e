#include <gtest/gtest.h>

#include <cmath>

#include "face/dsp_features.hpp"
#include "support.hpp"

namespace {

using namespace face;
using face::testing::click_train;
using face::testing::make_clip;
using face::testing::sine;
using face::testing::white_noise;

constexpr int kRate = 22050;

std::size_t argmax_in_column(const RealMatrix& m, std::size_t t, std::size_t from = 0) {
    std::size_t best = from;
    for (std::size_t r = from; r < m.rows(); ++r)
        if (m(r, t) > m(best, t)) best = r;
    return best;
}

double column_mean_of_row(const RealMatrix& m, std::size_t r) {
    double s = 0.0;
    for (std::size_t t = 0; t < m.cols(); ++t) s += m(r, t);
    return s / static_cast<double>(m.cols());
}

TEST(Stft, ShapeFollowsHopCount) {
    const auto spec = stft(make_clip(std::vector<double>(88200, 0.0)));
    EXPECT_EQ(spec.rows(), 1025u);
    EXPECT_EQ(spec.cols(), 173u);  // ceil(88200 / 512)
}

TEST(Stft, SilenceGivesZeroSpectrogram) {
    const auto p = power_spectrum(stft(make_clip(std::vector<double>(5000, 0.0))));
    for (double v : p.data()) EXPECT_EQ(v, 0.0);
}

TEST(Stft, ConstantClipConcentratesInDcBin) {
    const auto p = power_spectrum(stft(make_clip(std::vector<double>(10000, 1.0))));
    for (std::size_t t = 0; t < p.cols(); ++t) EXPECT_EQ(argmax_in_column(p, t), 0u) << "frame " << t;
}

TEST(Stft, OneKilohertzPeaksAtBin93) {
    const auto p = power_spectrum(stft(make_clip(sine(1000.0, kRate, 1.0))));
    for (std::size_t t = 0; t < p.cols(); ++t) EXPECT_EQ(argmax_in_column(p, t), 93u) << "frame " << t;
}

TEST(Stft, RejectsBadFrameConfig) {
    const auto clip = make_clip(sine(1000.0, kRate, 0.1));
    EXPECT_THROW(stft(clip, FrameConfig{1000, 512}), ValidationError);
    EXPECT_THROW(stft(clip, FrameConfig{2048, 0}), ValidationError);
    EXPECT_THROW(stft(make_clip({}), FrameConfig{}), ValidationError);
}

TEST(Mel, SilenceGivesZeroMatrix) {
    const auto mel = mel_spectrogram(make_clip(std::vector<double>(4000, 0.0)));
    EXPECT_EQ(mel.rows(), 128u);
    for (double v : mel.values.data()) EXPECT_EQ(v, 0.0);
}

TEST(Mel, WhiteNoiseIsPositiveInEveryBand) {
    const auto mel = mel_spectrogram(make_clip(white_noise(kRate, 3)));
    for (double v : mel.values.data()) EXPECT_GT(v, 0.0);
}

TEST(Mel, FiltersHaveUnitAreaInHertz) {
    // the narrowest low-frequency filters are under-sampled by the FFT grid, so
    // only filters spanning at least 20 bins are checked
    const RealMatrix fb = mel_filterbank(kRate, 2048, 128);
    const double df = static_cast<double>(kRate) / 2048.0;
    std::size_t checked = 0;
    for (std::size_t m = 0; m < fb.rows(); ++m) {
        std::size_t support = 0;
        double area = 0.0;
        for (std::size_t k = 0; k < fb.cols(); ++k) {
            area += fb(m, k) * df;
            if (fb(m, k) > 0.0) ++support;
        }
        if (support < 20 || m + 1 == fb.rows()) continue;
        EXPECT_NEAR(area, 1.0, 0.02) << "filter " << m;
        ++checked;
    }
    EXPECT_GT(checked, 30u);
}

TEST(Mel, SlaneyScaleKnownPoints) {
    EXPECT_NEAR(hz_to_mel(1000.0), 15.0, 1e-12);
    EXPECT_NEAR(hz_to_mel(200.0), 3.0, 1e-12);
    EXPECT_NEAR(mel_to_hz(hz_to_mel(4321.0)), 4321.0, 1e-9);
}

TEST(Mfcc, SilenceGivesConstantDbCepstrum) {
    const auto m = mfcc(make_clip(std::vector<double>(6000, 0.0)));
    ASSERT_EQ(m.rows(), 128u);
    for (std::size_t t = 0; t < m.frames(); ++t) {
        EXPECT_NEAR(m.values(0, t), -905.0966799187809, 1e-9);
        for (std::size_t r = 1; r < m.rows(); ++r) EXPECT_NEAR(m.values(r, t), 0.0, 1e-9);
    }
}

TEST(Mfcc, DoublingAmplitudeShiftsOnlyCoefficientZero) {
    const auto base = white_noise(kRate, 11, 0.05);
    std::vector<double> loud(base);
    for (double& v : loud) v *= 2.0;
    const auto a = mfcc(make_clip(base));
    const auto b = mfcc(make_clip(loud));
    for (std::size_t t = 0; t < a.frames(); ++t) {
        EXPECT_NEAR(b.values(0, t) - a.values(0, t), 68.1153124078586, 1e-6);
        for (std::size_t r = 1; r < a.rows(); ++r) EXPECT_NEAR(b.values(r, t), a.values(r, t), 1e-6);
    }
}

TEST(Contrast, DefaultHasSevenRows) {
    const auto c = spectral_contrast(make_clip(white_noise(8000, 1)));
    EXPECT_EQ(c.rows(), 7u);
}

TEST(Contrast, ToneBandExceedsNoiseContrast) {
    // row 0 is [0, 200) Hz and row b covers [200 * 2^(b-1), 200 * 2^b), so 1 kHz is row 3
    const auto tone = spectral_contrast(make_clip(sine(1000.0, kRate, 1.0)));
    double noise_max = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto noise = spectral_contrast(make_clip(white_noise(kRate / 4, seed)));
        noise_max = std::max(noise_max, column_mean_of_row(noise.values, 3));
    }
    EXPECT_GT(column_mean_of_row(tone.values, 3), noise_max);
}

TEST(Chroma, SilenceGivesZeroMatrix) {
    const auto c = chromagram(make_clip(std::vector<double>(4000, 0.0)));
    EXPECT_EQ(c.rows(), 12u);
    for (double v : c.values.data()) EXPECT_EQ(v, 0.0);
}

TEST(Chroma, ConcertAAndItsOctaveMapToA) {
    for (double f : {440.0, 880.0}) {
        const auto c = chromagram(make_clip(sine(f, kRate, 1.0)));
        for (std::size_t t = 0; t < c.frames(); ++t) EXPECT_EQ(argmax_in_column(c.values, t), 9u) << f << " Hz";
    }
}

TEST(Onset, ConstantClipHasNoInteriorOnsets) {
    const auto env = onset_strength(make_clip(std::vector<double>(3 * kRate, 0.5)));
    // frames whose window lies fully inside the clip
    for (std::size_t t = 3; t + 3 < env.frames(); ++t) EXPECT_NEAR(env.values(0, t), 0.0, 1e-9) << t;
}

TEST(Onset, SingleClickPeaksAtItsFrame) {
    std::vector<double> s(2 * kRate, 0.0);
    const std::size_t at = 30000;
    for (std::size_t k = 0; k < 32; ++k) s[at + k] = (k % 2 == 0 ? 0.9 : -0.9);
    const auto env = onset_strength(make_clip(s));
    std::size_t best = 1;
    for (std::size_t t = 1; t < env.frames(); ++t)
        if (env.values(0, t) > env.values(0, best)) best = t;
    // the click first enters the analysis window of frame ceil((at - n_fft/2) / hop)
    const auto first = static_cast<long>((at - 1024 + 511) / 512);
    EXPECT_GE(static_cast<long>(best), first);
    EXPECT_LE(static_cast<long>(best), static_cast<long>(at / 512) + 1);
}

TEST(Onset, ClickTrainIsPeriodic) {
    const auto env = onset_strength(make_clip(click_train(120.0, kRate, 6.0)));
    std::vector<std::size_t> peaks;
    const double thr = 0.5 * *std::max_element(env.values.data().begin(), env.values.data().end());
    for (std::size_t t = 1; t + 1 < env.frames(); ++t)
        if (env.values(0, t) > thr && env.values(0, t) >= env.values(0, t - 1) && env.values(0, t) > env.values(0, t + 1))
            peaks.push_back(t);
    ASSERT_GE(peaks.size(), 8u);
    for (std::size_t i = 1; i < peaks.size(); ++i) {
        const double gap = static_cast<double>(peaks[i] - peaks[i - 1]);
        EXPECT_NEAR(gap, 0.5 * kRate / 512.0, 1.0);
    }
}

TEST(Tempogram, SilentEnvelopeGivesZeros) {
    FeatureMatrix env{"onset", RealMatrix(1, 50), 43.0};
    const auto tg = tempogram(env, 16);
    for (double v : tg.values.data()) EXPECT_EQ(v, 0.0);
}

TEST(Tempogram, ClickTrainAt120BpmHasBeatPeriodPeak) {
    const auto env = onset_strength(make_clip(click_train(120.0, kRate, 12.0)));
    EXPECT_NEAR(env.frame_rate, 43.066, 1e-3);
    const auto tg = tempogram(env);
    EXPECT_EQ(tg.rows(), 384u);
    const std::size_t t = tg.frames() / 2;
    EXPECT_NEAR(tg.values(0, t), 1.0, 1e-12);
    // the beat period is 21.53 frames: a local maximum sits at lag 22 +- 1
    std::size_t local = 21;
    for (std::size_t lag = 21; lag <= 23; ++lag)
        if (tg.values(lag, t) > tg.values(local, t)) local = lag;
    EXPECT_GT(tg.values(local, t), tg.values(local - 3, t));
    EXPECT_GT(tg.values(local, t), tg.values(local + 3, t));
    // impulsive clicks alternate between 21- and 22-frame spacings, so the global
    // off-zero maximum lands on the beat period or its double
    const std::size_t best = argmax_in_column(tg.values, t, 5);
    EXPECT_TRUE(std::abs(static_cast<long>(best) - 22) <= 1 || std::abs(static_cast<long>(best) - 43) <= 1) << best;
}

TEST(Tempogram, LagZeroIsOneWhereverSignalExists) {
    const auto env = onset_strength(make_clip(white_noise(3 * kRate, 5)));
    const auto tg = tempogram(env, 64);
    for (std::size_t t = 0; t < tg.frames(); ++t) EXPECT_NEAR(tg.values(0, t), 1.0, 1e-12);
}

TEST(CyclicTempogram, OctavesShareAPeakBin) {
    auto peak = [](double bpm) {
        const auto ct = cyclic_tempogram(tempogram(onset_strength(make_clip(click_train(bpm, kRate, 12.0)))));
        return argmax_in_column(ct.values, ct.frames() / 2);
    };
    EXPECT_EQ(peak(60.0), peak(120.0));
}

TEST(CyclicTempogram, UniformInputGivesUniformOutput) {
    FeatureMatrix tg{"tempogram", RealMatrix(384, 4), 43.0};
    for (double& v : tg.values.data()) v = 0.25;
    const auto ct = cyclic_tempogram(tg);
    EXPECT_EQ(ct.rows(), 40u);
    for (double v : ct.values.data()) EXPECT_NEAR(v, 0.25, 1e-12);
}

TEST(Descriptors, ConstantClip) {
    const auto d = scalar_descriptors(make_clip(std::vector<double>(kRate, -0.3)));
    for (std::size_t t = 0; t < d.rms.frames(); ++t) {
        EXPECT_NEAR(d.rms.values(0, t), 0.3, 1e-12);
        EXPECT_EQ(d.zcr.values(0, t), 0.0);
    }
}

TEST(Descriptors, AlternatingSignHasMaximalZcr) {
    std::vector<double> s(kRate);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = i % 2 == 0 ? 1.0 : -1.0;
    const auto d = scalar_descriptors(make_clip(s));
    // frames whose window lies fully inside the clip
    for (std::size_t t = 2; t + 2 < d.zcr.frames(); ++t) EXPECT_DOUBLE_EQ(d.zcr.values(0, t), 1.0);
}

TEST(Descriptors, TwoKilohertzToneCentroidAndFlatness) {
    const auto d = scalar_descriptors(make_clip(sine(2000.0, kRate, 1.0)));
    const double bin = static_cast<double>(kRate) / 2048.0;
    for (std::size_t t = 2; t + 2 < d.centroid.frames(); ++t) {
        EXPECT_NEAR(d.centroid.values(0, t), 2000.0, bin);
        EXPECT_LT(d.flatness.values(0, t), 0.01);
        EXPECT_NEAR(d.rolloff.values(0, t), 2000.0, 2 * bin);
    }
}

TEST(Descriptors, SilenceIsFlatAndCentroidFree) {
    const auto d = scalar_descriptors(make_clip(std::vector<double>(4000, 0.0)));
    for (std::size_t t = 0; t < d.flatness.frames(); ++t) {
        EXPECT_NEAR(d.flatness.values(0, t), 1.0, 1e-12);
        EXPECT_EQ(d.centroid.values(0, t), 0.0);
        EXPECT_EQ(d.bandwidth.values(0, t), 0.0);
    }
}

TEST(Descriptors, WhiteNoiseIsFlatterThanTone) {
    const auto noise = scalar_descriptors(make_clip(white_noise(kRate, 9)));
    const auto tone = scalar_descriptors(make_clip(sine(2000.0, kRate, 1.0)));
    EXPECT_GT(column_mean_of_row(noise.flatness.values, 0), 20.0 * column_mean_of_row(tone.flatness.values, 0));
}

TEST(AllFeatures, FiniteOnShortAndLongClips) {
    for (std::size_t len : {std::size_t{100}, std::size_t{4 * kRate}}) {
        const auto clip = make_clip(white_noise(len, len));
        for (const auto& fm : {mfcc(clip), spectral_contrast(clip), chromagram(clip), onset_strength(clip)})
            for (double v : fm.values.data()) ASSERT_TRUE(std::isfinite(v)) << fm.name << " len " << len;
        const auto d = scalar_descriptors(clip);
        for (const auto* fm : {&d.zcr, &d.rms, &d.centroid, &d.bandwidth, &d.rolloff, &d.flatness})
            for (double v : fm->values.data()) ASSERT_TRUE(std::isfinite(v)) << fm->name;
    }
}

} // namespace
