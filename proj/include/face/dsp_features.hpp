#pragma once

/// Frame-level audio feature extractors.
///
/// Every extractor frames the clip the same way: frame t is centred on sample
/// t * hop, the clip is zero padded by n_fft/2 on both sides for spectral
/// features (edge-replicated for the time-domain descriptors), and the frame
/// count is ceil(len / hop).

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "face/audio_io.hpp"
#include "face/error.hpp"
#include "face/fft.hpp"
#include "face/matrix.hpp"

namespace face {

struct FrameConfig {
    std::size_t n_fft = 2048;
    std::size_t hop = 512;

    void validate() const {
        require(n_fft >= 2 && std::has_single_bit(n_fft), "n_fft must be a power of two");
        require(hop > 0 && hop <= n_fft, "hop must satisfy 0 < hop <= n_fft");
    }
};

/// R feature bins x T frames.
struct FeatureMatrix {
    std::string name;
    RealMatrix values;
    double frame_rate = 0.0;

    std::size_t rows() const noexcept { return values.rows(); }
    std::size_t frames() const noexcept { return values.cols(); }
};

using Spectrogram = Matrix<std::complex<double>>;

inline constexpr double kPowerFloor = 1e-10;
inline constexpr double kDbFloor = -80.0;

inline std::size_t frame_count(std::size_t length, std::size_t hop) {
    return std::max<std::size_t>(1, (length + hop - 1) / hop);
}

/// Periodic Hann window.
inline std::vector<double> hann_window(std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i)
        w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
    return w;
}

/// 10*log10(power) with a floor of -80 dB relative to 1.0.
inline double power_to_db(double power) {
    return std::max(10.0 * std::log10(std::max(power, kPowerFloor)), kDbFloor);
}

inline double fft_frequency(std::size_t bin, int sample_rate, std::size_t n_fft) {
    return static_cast<double>(bin) * sample_rate / static_cast<double>(n_fft);
}

inline Spectrogram stft(const AudioClip& clip, const FrameConfig& cfg = {}) {
    cfg.validate();
    require(!clip.samples.empty(), "stft: empty clip");
    const std::size_t len = clip.samples.size();
    const std::size_t frames = frame_count(len, cfg.hop);
    const std::size_t half = cfg.n_fft / 2;
    const auto window = hann_window(cfg.n_fft);
    const RealFft fft(cfg.n_fft);

    Spectrogram spec(fft.bins(), frames);
    std::vector<double> buf(cfg.n_fft);
    std::vector<std::complex<double>> out(fft.bins());
    for (std::size_t t = 0; t < frames; ++t) {
        const long long start = static_cast<long long>(t * cfg.hop) - static_cast<long long>(half);
        for (std::size_t i = 0; i < cfg.n_fft; ++i) {
            const long long idx = start + static_cast<long long>(i);
            const double s = (idx >= 0 && idx < static_cast<long long>(len)) ? clip.samples[idx] : 0.0;
            buf[i] = s * window[i];
        }
        fft.forward(buf, out);
        for (std::size_t k = 0; k < out.size(); ++k) spec(k, t) = out[k];
    }
    return spec;
}

inline RealMatrix power_spectrum(const Spectrogram& spec) {
    RealMatrix p(spec.rows(), spec.cols());
    for (std::size_t i = 0; i < spec.data().size(); ++i) p.data()[i] = std::norm(spec.data()[i]);
    return p;
}

inline RealMatrix magnitude_spectrum(const Spectrogram& spec) {
    RealMatrix m(spec.rows(), spec.cols());
    for (std::size_t i = 0; i < spec.data().size(); ++i) m.data()[i] = std::abs(spec.data()[i]);
    return m;
}

// Slaney mel scale: linear below 1 kHz, logarithmic above.
inline double hz_to_mel(double hz) {
    constexpr double f_sp = 200.0 / 3.0;
    constexpr double min_log_hz = 1000.0;
    constexpr double min_log_mel = min_log_hz / f_sp;
    const double logstep = std::log(6.4) / 27.0;
    return hz >= min_log_hz ? min_log_mel + std::log(hz / min_log_hz) / logstep : hz / f_sp;
}

inline double mel_to_hz(double mel) {
    constexpr double f_sp = 200.0 / 3.0;
    constexpr double min_log_hz = 1000.0;
    constexpr double min_log_mel = min_log_hz / f_sp;
    const double logstep = std::log(6.4) / 27.0;
    return mel >= min_log_mel ? min_log_hz * std::exp(logstep * (mel - min_log_mel)) : f_sp * mel;
}

/// Triangular, area-normalised mel filterbank (n_mels x (n_fft/2+1)).
inline RealMatrix mel_filterbank(int sample_rate, std::size_t n_fft, std::size_t n_mels,
                                 double fmin = 0.0, double fmax = -1.0) {
    const std::size_t bins = n_fft / 2 + 1;
    require(n_mels >= 1, "n_mels must be at least 1");
    require(n_mels <= bins, "n_mels exceeds the number of FFT bins");
    if (fmax < 0) fmax = sample_rate / 2.0;

    const double mel_lo = hz_to_mel(fmin);
    const double mel_hi = hz_to_mel(fmax);
    std::vector<double> edges(n_mels + 2);
    for (std::size_t i = 0; i < edges.size(); ++i)
        edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));

    RealMatrix fb(n_mels, bins);
    for (std::size_t m = 0; m < n_mels; ++m) {
        const double lower_w = edges[m + 1] - edges[m];
        const double upper_w = edges[m + 2] - edges[m + 1];
        const double enorm = 2.0 / (edges[m + 2] - edges[m]);
        for (std::size_t k = 0; k < bins; ++k) {
            const double f = fft_frequency(k, sample_rate, n_fft);
            const double rise = (f - edges[m]) / lower_w;
            const double fall = (edges[m + 2] - f) / upper_w;
            fb(m, k) = std::max(0.0, std::min(rise, fall)) * enorm;
        }
    }
    return fb;
}

/// Mel power spectrogram (n_mels x T).
inline FeatureMatrix mel_spectrogram(const AudioClip& clip, const FrameConfig& cfg = {},
                                     std::size_t n_mels = 128) {
    const RealMatrix fb = mel_filterbank(clip.sample_rate, cfg.n_fft, n_mels);
    const RealMatrix power = power_spectrum(stft(clip, cfg));
    RealMatrix mel(n_mels, power.cols());
    for (std::size_t m = 0; m < n_mels; ++m) {
        const auto weights = fb.row(m);
        for (std::size_t k = 0; k < weights.size(); ++k) {
            const double w = weights[k];
            if (w == 0.0) continue;
            const auto prow = power.row(k);
            auto out = mel.row(m);
            for (std::size_t t = 0; t < prow.size(); ++t) out[t] += w * prow[t];
        }
    }
    return {"mel", std::move(mel), static_cast<double>(clip.sample_rate) / cfg.hop};
}

/// Orthonormal DCT-II basis, n_out x n_in.
inline RealMatrix dct_basis(std::size_t n_in, std::size_t n_out) {
    RealMatrix basis(n_out, n_in);
    const double n = static_cast<double>(n_in);
    for (std::size_t k = 0; k < n_out; ++k) {
        const double scale = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
        for (std::size_t i = 0; i < n_in; ++i)
            basis(k, i) = scale * std::cos(std::numbers::pi * static_cast<double>(k) * (2.0 * i + 1.0) / (2.0 * n));
    }
    return basis;
}

inline RealMatrix to_db(const RealMatrix& power) {
    RealMatrix db(power.rows(), power.cols());
    std::transform(power.data().begin(), power.data().end(), db.data().begin(), power_to_db);
    return db;
}

inline FeatureMatrix mfcc(const AudioClip& clip, const FrameConfig& cfg = {}, std::size_t n_mfcc = 128,
                          std::size_t n_mels = 128) {
    require(n_mfcc >= 1 && n_mfcc <= n_mels, "n_mfcc must be in [1, n_mels]");
    const FeatureMatrix mel = mel_spectrogram(clip, cfg, n_mels);
    const RealMatrix db = to_db(mel.values);
    const RealMatrix basis = dct_basis(n_mels, n_mfcc);
    RealMatrix out(n_mfcc, db.cols());
    for (std::size_t k = 0; k < n_mfcc; ++k)
        for (std::size_t m = 0; m < n_mels; ++m) {
            const double b = basis(k, m);
            const auto src = db.row(m);
            auto dst = out.row(k);
            for (std::size_t t = 0; t < src.size(); ++t) dst[t] += b * src[t];
        }
    return {"mfcc", std::move(out), mel.frame_rate};
}

struct ContrastConfig {
    std::size_t n_bands = 6;
    double quantile = 0.02;
    double fmin = 200.0;
};

/// Octave-band spectral contrast, (n_bands+1) x T.
inline FeatureMatrix spectral_contrast(const AudioClip& clip, const FrameConfig& cfg = {},
                                       const ContrastConfig& cc = {}) {
    require(cc.n_bands >= 1, "n_bands must be at least 1");
    require(cc.quantile > 0.0 && cc.quantile < 0.5, "quantile must lie in (0, 0.5)");
    require(cc.fmin > 0.0, "fmin must be positive");
    const double nyquist = clip.sample_rate / 2.0;

    std::vector<double> octa(cc.n_bands + 2, 0.0);
    for (std::size_t i = 1; i < octa.size(); ++i) octa[i] = cc.fmin * std::pow(2.0, static_cast<double>(i - 1));
    for (std::size_t i = 0; i + 1 < octa.size(); ++i)
        require(octa[i] < nyquist, "spectral contrast band exceeds Nyquist; reduce fmin or n_bands");

    const RealMatrix mag = magnitude_spectrum(stft(clip, cfg));
    const std::size_t bins = mag.rows();
    const std::size_t frames = mag.cols();
    std::vector<double> freqs(bins);
    for (std::size_t k = 0; k < bins; ++k) freqs[k] = fft_frequency(k, clip.sample_rate, cfg.n_fft);

    RealMatrix out(cc.n_bands + 1, frames);
    std::vector<double> column;
    for (std::size_t band = 0; band <= cc.n_bands; ++band) {
        std::vector<bool> in_band(bins, false);
        std::size_t first = bins, last = 0;
        for (std::size_t k = 0; k < bins; ++k)
            if (freqs[k] >= octa[band] && freqs[k] <= octa[band + 1]) {
                in_band[k] = true;
                first = std::min(first, k);
                last = std::max(last, k);
            }
        if (first == bins) continue;
        if (band > 0 && first > 0) in_band[first - 1] = true;
        if (band == cc.n_bands)
            for (std::size_t k = last + 1; k < bins; ++k) in_band[k] = true;
        const std::size_t members = static_cast<std::size_t>(std::count(in_band.begin(), in_band.end(), true));

        std::vector<std::size_t> idx;
        for (std::size_t k = 0; k < bins; ++k)
            if (in_band[k]) idx.push_back(k);
        // interior bands drop their top bin so neighbouring bands do not share it
        if (band < cc.n_bands && idx.size() > 1) idx.pop_back();

        const std::size_t q = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::nearbyint(cc.quantile * static_cast<double>(members))));
        for (std::size_t t = 0; t < frames; ++t) {
            column.clear();
            for (std::size_t k : idx) column.push_back(mag(k, t));
            std::sort(column.begin(), column.end());
            const std::size_t take = std::min(q, column.size());
            double valley = 0.0, peak = 0.0;
            for (std::size_t i = 0; i < take; ++i) {
                valley += column[i];
                peak += column[column.size() - 1 - i];
            }
            valley /= static_cast<double>(take);
            peak /= static_cast<double>(take);
            out(band, t) = 10.0 * std::log10(std::max(peak, kPowerFloor)) -
                           10.0 * std::log10(std::max(valley, kPowerFloor));
        }
    }
    return {"contrast", std::move(out), static_cast<double>(clip.sample_rate) / cfg.hop};
}

/// 12 pitch classes starting at C; each frame max-normalised.
inline FeatureMatrix chromagram(const AudioClip& clip, const FrameConfig& cfg = {}) {
    const RealMatrix mag = magnitude_spectrum(stft(clip, cfg));
    RealMatrix chroma(12, mag.cols());
    for (std::size_t k = 1; k < mag.rows(); ++k) {
        const double f = fft_frequency(k, clip.sample_rate, cfg.n_fft);
        if (f < 20.0) continue;
        const long semis = std::lround(12.0 * std::log2(f / 440.0));
        const std::size_t pc = static_cast<std::size_t>(((semis + 9) % 12 + 12) % 12);
        const auto src = mag.row(k);
        auto dst = chroma.row(pc);
        for (std::size_t t = 0; t < src.size(); ++t) dst[t] += src[t];
    }
    for (std::size_t t = 0; t < chroma.cols(); ++t) {
        double peak = 0.0;
        for (std::size_t c = 0; c < 12; ++c) peak = std::max(peak, chroma(c, t));
        if (peak > 0.0)
            for (std::size_t c = 0; c < 12; ++c) chroma(c, t) /= peak;
    }
    return {"chroma", std::move(chroma), static_cast<double>(clip.sample_rate) / cfg.hop};
}

/// Half-wave rectified first difference of the dB mel spectrogram, averaged over bands.
inline FeatureMatrix onset_strength(const AudioClip& clip, const FrameConfig& cfg = {},
                                    std::size_t n_mels = 128) {
    const FeatureMatrix mel = mel_spectrogram(clip, cfg, n_mels);
    const RealMatrix db = to_db(mel.values);
    RealMatrix env(1, db.cols());
    for (std::size_t t = 1; t < db.cols(); ++t) {
        double sum = 0.0;
        for (std::size_t m = 0; m < db.rows(); ++m) sum += std::max(0.0, db(m, t) - db(m, t - 1));
        env(0, t) = sum / static_cast<double>(db.rows());
    }
    return {"onset", std::move(env), mel.frame_rate};
}

/// Local autocorrelation of the onset envelope: column t holds lags 0..win_frames-1
/// of the Hann-windowed envelope centred at frame t, normalised so lag 0 is 1.
inline FeatureMatrix tempogram(const FeatureMatrix& onset, std::size_t win_frames = 384) {
    require(win_frames >= 2, "tempogram window must span at least 2 frames");
    require(onset.rows() == 1, "tempogram expects a single-row onset envelope");
    const std::size_t frames = onset.frames();
    const std::size_t half = win_frames / 2;
    std::vector<double> padded(frames + win_frames, 0.0);
    for (std::size_t t = 0; t < frames; ++t) padded[t + half] = onset.values(0, t);

    const auto window = hann_window(win_frames);
    const std::size_t n = std::bit_ceil(2 * win_frames);
    const RealFft fft(n);
    std::vector<double> buf(n);
    std::vector<std::complex<double>> spec(fft.bins());
    RealMatrix out(win_frames, frames);

    // autocorrelation = inverse FFT of |X|^2; computed as a forward real FFT of
    // the (real, even) power spectrum extended to length n
    std::vector<double> power_full(n);
    std::vector<std::complex<double>> acf(fft.bins());
    for (std::size_t t = 0; t < frames; ++t) {
        std::fill(buf.begin(), buf.end(), 0.0);
        for (std::size_t i = 0; i < win_frames; ++i) buf[i] = padded[t + i] * window[i];
        fft.forward(buf, spec);
        for (std::size_t k = 0; k < n; ++k) {
            const std::size_t kk = k <= n / 2 ? k : n - k;
            power_full[k] = std::norm(spec[kk]);
        }
        fft.forward(power_full, acf);
        const double lag0 = acf[0].real();
        if (lag0 <= 1e-12 * n) continue;
        for (std::size_t lag = 0; lag < win_frames; ++lag) out(lag, t) = acf[lag].real() / lag0;
    }
    return {"tempogram", std::move(out), onset.frame_rate};
}

/// Fold the tempo axis (BPM = 60 * frame_rate / lag) modulo octaves. Bin b covers
/// log2(tempo) mod 1 in [b/n, (b+1)/n); each bin averages the tempogram, linearly
/// interpolated at the bin-centre tempo, over every octave the lag range reaches.
inline FeatureMatrix cyclic_tempogram(const FeatureMatrix& tg, std::size_t n_octave_bins = 40) {
    require(n_octave_bins >= 1, "n_octave_bins must be at least 1");
    require(tg.rows() >= 3, "cyclic tempogram needs at least 2 non-zero lags");
    require(tg.frame_rate > 0.0, "tempogram has no frame rate");
    const double max_lag = static_cast<double>(tg.rows() - 1);
    const double tempo_lo = 60.0 * tg.frame_rate / max_lag;
    const double tempo_hi = 60.0 * tg.frame_rate;
    const int oct_lo = static_cast<int>(std::floor(std::log2(tempo_lo)));
    const int oct_hi = static_cast<int>(std::floor(std::log2(tempo_hi)));

    struct Tap {
        std::size_t bin;
        std::size_t lag;
        double frac;
    };
    std::vector<Tap> taps;
    std::vector<std::size_t> counts(n_octave_bins, 0);
    for (std::size_t b = 0; b < n_octave_bins; ++b)
        for (int o = oct_lo; o <= oct_hi; ++o) {
            const double tempo = std::exp2(o + (static_cast<double>(b) + 0.5) / static_cast<double>(n_octave_bins));
            const double lag = 60.0 * tg.frame_rate / tempo;
            if (lag < 1.0 || lag > max_lag) continue;
            const auto lo = static_cast<std::size_t>(std::floor(lag));
            taps.push_back({b, lo, lag - static_cast<double>(lo)});
            ++counts[b];
        }

    RealMatrix out(n_octave_bins, tg.frames());
    for (std::size_t t = 0; t < tg.frames(); ++t) {
        for (const Tap& tap : taps) {
            const double a = tg.values(tap.lag, t);
            const double b = tap.lag + 1 < tg.rows() ? tg.values(tap.lag + 1, t) : a;
            out(tap.bin, t) += a + tap.frac * (b - a);
        }
        for (std::size_t b = 0; b < n_octave_bins; ++b)
            if (counts[b] > 0) out(b, t) /= static_cast<double>(counts[b]);
    }
    return {"cyclic_tempogram", std::move(out), tg.frame_rate};
}

/// Per-frame scalar descriptors, each a 1 x T matrix.
struct ScalarDescriptors {
    FeatureMatrix zcr;
    FeatureMatrix rms;
    FeatureMatrix centroid;
    FeatureMatrix bandwidth;
    FeatureMatrix rolloff;
    FeatureMatrix flatness;
};

inline ScalarDescriptors scalar_descriptors(const AudioClip& clip, const FrameConfig& cfg = {},
                                            double rolloff_fraction = 0.85) {
    const Spectrogram spec = stft(clip, cfg);
    const std::size_t frames = spec.cols();
    const std::size_t bins = spec.rows();
    const double rate = static_cast<double>(clip.sample_rate) / cfg.hop;
    auto make = [&](const char* name) { return FeatureMatrix{name, RealMatrix(1, frames), rate}; };
    ScalarDescriptors d{make("zcr"), make("rms"), make("centroid"), make("bandwidth"), make("rolloff"), make("flatness")};

    // time domain, edge-replicated centred frames
    const long long len = static_cast<long long>(clip.samples.size());
    const long long half = static_cast<long long>(cfg.n_fft / 2);
    for (std::size_t t = 0; t < frames; ++t) {
        const long long start = static_cast<long long>(t * cfg.hop) - half;
        double sq = 0.0;
        std::size_t crossings = 0;
        bool prev_neg = false;
        for (std::size_t i = 0; i < cfg.n_fft; ++i) {
            const long long idx = std::clamp(start + static_cast<long long>(i), 0LL, len - 1);
            const double s = clip.samples[static_cast<std::size_t>(idx)];
            sq += s * s;
            const bool neg = std::signbit(s) && s != 0.0;
            if (i > 0 && neg != prev_neg) ++crossings;
            prev_neg = neg;
        }
        d.rms.values(0, t) = std::sqrt(sq / static_cast<double>(cfg.n_fft));
        d.zcr.values(0, t) = static_cast<double>(crossings) / static_cast<double>(cfg.n_fft - 1);
    }

    std::vector<double> freqs(bins);
    for (std::size_t k = 0; k < bins; ++k) freqs[k] = fft_frequency(k, clip.sample_rate, cfg.n_fft);
    for (std::size_t t = 0; t < frames; ++t) {
        double mag_sum = 0.0, weighted = 0.0, energy = 0.0, log_sum = 0.0, pow_sum = 0.0;
        for (std::size_t k = 0; k < bins; ++k) {
            const double m = std::abs(spec(k, t));
            const double p = std::max(m * m, kPowerFloor);
            mag_sum += m;
            weighted += m * freqs[k];
            energy += m * m;
            log_sum += std::log(p);
            pow_sum += p;
        }
        d.flatness.values(0, t) = std::exp(log_sum / bins) / (pow_sum / bins);
        if (mag_sum <= 0.0) continue;
        const double centroid = weighted / mag_sum;
        double spread = 0.0, cumulative = 0.0;
        double rolloff = freqs.back();
        bool found = false;
        for (std::size_t k = 0; k < bins; ++k) {
            const double m = std::abs(spec(k, t));
            spread += m * (freqs[k] - centroid) * (freqs[k] - centroid);
            cumulative += m * m;
            if (!found && cumulative >= rolloff_fraction * energy) {
                rolloff = freqs[k];
                found = true;
            }
        }
        d.centroid.values(0, t) = centroid;
        d.bandwidth.values(0, t) = std::sqrt(spread / mag_sum);
        d.rolloff.values(0, t) = rolloff;
    }
    return d;
}

} // namespace face
