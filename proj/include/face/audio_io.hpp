#pragma once

/// WAV decoding, mono down-mix and band-limited resampling.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "face/error.hpp"

namespace face {

inline constexpr int kTargetSampleRate = 22050;

/// Decoded mono waveform. Samples lie in [-1, 1].
struct AudioClip {
    std::string id;
    std::vector<double> samples;
    int sample_rate = 0;
    std::string source_path;

    double duration() const {
        return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
    }
};

namespace detail {

inline std::uint32_t read_u32(const std::uint8_t* p) {
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
           (std::uint32_t(p[3]) << 24);
}

inline std::uint16_t read_u16(const std::uint8_t* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline double decode_sample(const std::uint8_t* p, int bits, bool is_float) {
    if (is_float) {
        float f;
        std::uint32_t raw = read_u32(p);
        std::memcpy(&f, &raw, sizeof f);
        if (!std::isfinite(f)) throw ValidationError("WAV contains non-finite float sample");
        return std::clamp(static_cast<double>(f), -1.0, 1.0);
    }
    switch (bits) {
    case 8:
        return (static_cast<int>(p[0]) - 128) / 128.0;
    case 16:
        return static_cast<std::int16_t>(read_u16(p)) / 32768.0;
    case 24: {
        std::int32_t v = std::int32_t(p[0]) | (std::int32_t(p[1]) << 8) | (std::int32_t(p[2]) << 16);
        if (v & 0x800000) v -= 0x1000000;
        return v / 8388608.0;
    }
    case 32:
        return static_cast<std::int32_t>(read_u32(p)) / 2147483648.0;
    default:
        throw ValidationError("unsupported PCM bit depth " + std::to_string(bits));
    }
}

} // namespace detail

/// Decode an in-memory RIFF/WAVE image. Multi-channel input is averaged to mono.
inline AudioClip decode_wav(std::span<const std::uint8_t> bytes, std::string id = {},
                            std::string source_path = {}) {
    using detail::read_u16;
    using detail::read_u32;
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        throw IoError("not a RIFF/WAVE file: " + source_path);

    int format = 0, channels = 0, rate = 0, bits = 0;
    const std::uint8_t* data = nullptr;
    std::size_t data_size = 0;
    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const std::uint8_t* chunk = bytes.data() + pos;
        const std::uint32_t size = read_u32(chunk + 4);
        const std::size_t body = pos + 8;
        const std::size_t avail = std::min<std::size_t>(size, bytes.size() - body);
        if (std::memcmp(chunk, "fmt ", 4) == 0) {
            if (avail < 16) throw IoError("truncated fmt chunk: " + source_path);
            format = read_u16(chunk + 8);
            channels = read_u16(chunk + 10);
            rate = static_cast<int>(read_u32(chunk + 12));
            bits = read_u16(chunk + 22);
            if (format == 0xFFFE && avail >= 26) format = read_u16(chunk + 8 + 24);
        } else if (std::memcmp(chunk, "data", 4) == 0) {
            data = chunk + 8;
            data_size = avail;
        }
        pos = body + size + (size & 1u);
    }
    if (format == 0) throw IoError("missing fmt chunk: " + source_path);
    if (data == nullptr) throw IoError("missing data chunk: " + source_path);
    const bool is_float = format == 3;
    if (format != 1 && !is_float)
        throw ValidationError("unsupported WAV encoding (format tag " + std::to_string(format) + ")");
    if (is_float && bits != 32) throw ValidationError("only 32-bit float WAV is supported");
    if (!is_float && bits != 8 && bits != 16 && bits != 24 && bits != 32)
        throw ValidationError("unsupported PCM bit depth " + std::to_string(bits));
    if (channels <= 0 || rate <= 0) throw IoError("invalid WAV header: " + source_path);

    const std::size_t frame_bytes = static_cast<std::size_t>(channels) * (bits / 8);
    const std::size_t frames = data_size / frame_bytes;
    if (frames == 0) throw ValidationError("zero-length audio: " + source_path);

    AudioClip clip{std::move(id), std::vector<double>(frames), rate, std::move(source_path)};
    for (std::size_t f = 0; f < frames; ++f) {
        double sum = 0.0;
        for (int c = 0; c < channels; ++c)
            sum += detail::decode_sample(data + f * frame_bytes + c * (bits / 8), bits, is_float);
        clip.samples[f] = sum / channels;
    }
    return clip;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Load a PCM WAV file (8/16/24/32-bit integer or 32-bit float) at its native rate.
inline AudioClip load_audio(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    return decode_wav(bytes, path.stem().string(), path.string());
}

/// Encode 16-bit PCM (or 32-bit float) WAV bytes for `channels` interleaved channels.
inline std::vector<std::uint8_t> encode_wav(std::span<const double> interleaved, int sample_rate,
                                            int channels = 1, bool as_float = false) {
    using detail::put_u16;
    using detail::put_u32;
    const int bits = as_float ? 32 : 16;
    const std::uint32_t data_bytes = static_cast<std::uint32_t>(interleaved.size() * (bits / 8));
    std::vector<std::uint8_t> out;
    out.reserve(44 + data_bytes);
    out.insert(out.end(), {'R', 'I', 'F', 'F'});
    put_u32(out, 36 + data_bytes);
    out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
    put_u32(out, 16);
    put_u16(out, as_float ? 3 : 1);
    put_u16(out, static_cast<std::uint16_t>(channels));
    put_u32(out, static_cast<std::uint32_t>(sample_rate));
    put_u32(out, static_cast<std::uint32_t>(sample_rate * channels * bits / 8));
    put_u16(out, static_cast<std::uint16_t>(channels * bits / 8));
    put_u16(out, static_cast<std::uint16_t>(bits));
    out.insert(out.end(), {'d', 'a', 't', 'a'});
    put_u32(out, data_bytes);
    for (double s : interleaved) {
        if (as_float) {
            const float f = static_cast<float>(s);
            put_u32(out, std::bit_cast<std::uint32_t>(f));
        } else {
            const double scaled = std::round(std::clamp(s, -1.0, 1.0) * 32768.0);
            const auto v = static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
            put_u16(out, static_cast<std::uint16_t>(v));
        }
    }
    return out;
}

inline void write_wav(const std::filesystem::path& path, std::span<const double> samples,
                      int sample_rate) {
    const auto bytes = encode_wav(samples, sample_rate);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

/// Windowed-sinc polyphase resampler settings.
struct ResampleConfig {
    int zero_crossings = 64;
    double kaiser_beta = 8.6;
};

/// Band-limited sample-rate conversion. Identity when the rates already match.
inline AudioClip resample(const AudioClip& clip, int target_rate, const ResampleConfig& cfg = {}) {
    require(target_rate > 0, "target_rate must be positive");
    require(clip.sample_rate > 0, "clip has no sample rate");
    if (clip.sample_rate == target_rate) return clip;

    const long long g = std::gcd(clip.sample_rate, target_rate);
    const long long up = target_rate / g;
    const long long down = clip.sample_rate / g;
    const long long in_len = static_cast<long long>(clip.samples.size());
    const long long out_len = (in_len * target_rate + clip.sample_rate / 2) / clip.sample_rate;

    // cutoff relative to the input Nyquist
    const double cutoff = std::min(1.0, static_cast<double>(up) / down);
    const int half_taps = static_cast<int>(std::ceil(cfg.zero_crossings / cutoff));
    const double i0_beta = std::cyl_bessel_i(0.0, cfg.kaiser_beta);

    auto kernel = [&](double t) {
        const double x = t / half_taps;
        if (std::abs(x) >= 1.0) return 0.0;
        const double window = std::cyl_bessel_i(0.0, cfg.kaiser_beta * std::sqrt(1.0 - x * x)) / i0_beta;
        const double arg = std::numbers::pi * cutoff * t;
        const double sinc = t == 0.0 ? 1.0 : std::sin(arg) / arg;
        return cutoff * sinc * window;
    };

    // One tap table per output phase when the phase count is manageable.
    const bool tabulate = up <= 2048;
    std::vector<double> table;
    const std::size_t width = 2 * static_cast<std::size_t>(half_taps) + 1;
    if (tabulate) {
        table.resize(static_cast<std::size_t>(up) * width);
        for (long long phase = 0; phase < up; ++phase) {
            const double frac = static_cast<double>(phase) / up;
            for (std::size_t k = 0; k < width; ++k) {
                const double t = static_cast<double>(static_cast<long long>(k) - half_taps) - frac;
                table[phase * width + k] = kernel(t);
            }
        }
    }

    AudioClip out{clip.id, std::vector<double>(static_cast<std::size_t>(out_len)), target_rate, clip.source_path};
    for (long long n = 0; n < out_len; ++n) {
        const long long pos = n * down;
        const long long base = pos / up;
        const long long phase = pos % up;
        double acc = 0.0;
        for (std::size_t k = 0; k < width; ++k) {
            const long long idx = base + static_cast<long long>(k) - half_taps;
            if (idx < 0 || idx >= in_len) continue;
            const double w = tabulate
                ? table[phase * width + k]
                : kernel(static_cast<double>(static_cast<long long>(k) - half_taps) -
                         static_cast<double>(phase) / up);
            acc += w * clip.samples[static_cast<std::size_t>(idx)];
        }
        out.samples[static_cast<std::size_t>(n)] = std::clamp(acc, -1.0, 1.0);
    }
    return out;
}

} // namespace face
