#pragma once

/// Per-clip feature matrices -> fixed-length summarised vectors.
///
/// Each selected feature is extracted, smoothed along time with a Gaussian,
/// differentiated (delta, delta-delta) and reduced to per-row mean and
/// population variance. With the default MFCC(128) + contrast(7 rows)
/// selection this gives 6 * 135 = 810 values per clip.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "face/audio_io.hpp"
#include "face/dsp_features.hpp"
#include "face/error.hpp"
#include "face/matrix.hpp"

namespace face {

// ---------------------------------------------------------------------------
// time-axis filters

/// Row-wise Gaussian smoothing along time. Kernel radius 4*sigma, mirror
/// ("d c b a | a b c d") padding, kernel normalised to sum 1. sigma 0 is identity.
inline FeatureMatrix gaussian_smooth(const FeatureMatrix& m, double sigma) {
    require(sigma >= 0.0 && std::isfinite(sigma), "sigma must be finite and non-negative");
    if (sigma == 0.0 || m.frames() == 0) return m;

    const auto radius = static_cast<long long>(4.0 * sigma + 0.5);
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (long long i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
        kernel[static_cast<std::size_t>(i + radius)] = v;
        total += v;
    }
    for (double& v : kernel) v /= total;

    const auto frames = static_cast<long long>(m.frames());
    auto mirror = [frames](long long i) {
        const long long period = 2 * frames;
        i %= period;
        if (i < 0) i += period;
        return i < frames ? i : period - 1 - i;
    };

    FeatureMatrix out{m.name, RealMatrix(m.rows(), m.frames()), m.frame_rate};
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const auto src = m.values.row(r);
        auto dst = out.values.row(r);
        for (long long t = 0; t < frames; ++t) {
            double acc = 0.0;
            for (long long k = -radius; k <= radius; ++k)
                acc += kernel[static_cast<std::size_t>(k + radius)] * src[static_cast<std::size_t>(mirror(t + k))];
            dst[static_cast<std::size_t>(t)] = acc;
        }
    }
    return out;
}

inline constexpr std::size_t kDeltaWidth = 9;

/// Local linear-regression slope over a centred 9-frame window, edges padded by
/// replication. order 2 applies the first-order delta twice.
inline FeatureMatrix delta(const FeatureMatrix& m, int order = 1) {
    require(order == 1 || order == 2, "delta order must be 1 or 2");
    if (order == 2) return delta(delta(m, 1), 1);

    constexpr long long half = kDeltaWidth / 2;
    double denom = 0.0;
    for (long long n = 1; n <= half; ++n) denom += static_cast<double>(n * n);
    denom *= 2.0;

    const auto frames = static_cast<long long>(m.frames());
    FeatureMatrix out{m.name, RealMatrix(m.rows(), m.frames()), m.frame_rate};
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const auto src = m.values.row(r);
        auto at = [&](long long i) { return src[static_cast<std::size_t>(std::clamp(i, 0LL, frames - 1))]; };
        auto dst = out.values.row(r);
        for (long long t = 0; t < frames; ++t) {
            double acc = 0.0;
            for (long long n = 1; n <= half; ++n) acc += static_cast<double>(n) * (at(t + n) - at(t - n));
            dst[static_cast<std::size_t>(t)] = acc / denom;
        }
    }
    return out;
}

/// Per row: (mean, population variance) over frames, concatenated row-major.
inline std::vector<double> summarize(const FeatureMatrix& m) {
    require(m.frames() >= 1, "summarize needs at least one frame");
    std::vector<double> out;
    out.reserve(2 * m.rows());
    const auto n = static_cast<double>(m.frames());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const auto row = m.values.row(r);
        double mean = 0.0;
        for (double v : row) mean += v;
        mean /= n;
        double var = 0.0;
        for (double v : row) var += (v - mean) * (v - mean);
        out.push_back(mean);
        out.push_back(var / n);
    }
    return out;
}

// ---------------------------------------------------------------------------
// feature selection

enum class FeatureKind {
    Mfcc,
    Contrast,
    Chroma,
    Mel,
    Onset,
    Tempogram,
    CyclicTempogram,
    Zcr,
    Rms,
    Centroid,
    Bandwidth,
    Rolloff,
    Flatness,
};

struct FeatureSpec {
    FeatureKind kind = FeatureKind::Mfcc;
    /// Row-count parameter: MFCC coefficients, contrast bands, mel bands,
    /// tempogram window or cyclic octave bins. 0 selects the default.
    std::size_t param = 0;
    bool smooth = true;

    bool operator==(const FeatureSpec&) const = default;
};

struct PipelineConfig {
    int sample_rate = kTargetSampleRate;
    FrameConfig frame{};
    std::size_t n_mels = 128;
    double contrast_quantile = 0.02;
    double contrast_fmin = 200.0;
    std::size_t tempogram_window = 384;
    double sigma = 1.0;
};

namespace detail {

struct KindInfo {
    FeatureKind kind;
    const char* name;
    const char* abbrev;
    std::size_t default_param;
};

inline constexpr KindInfo kKinds[] = {
    {FeatureKind::Mfcc, "mfcc", "MFC", 128},
    {FeatureKind::Contrast, "contrast", "CNT", 6},
    {FeatureKind::Chroma, "chroma", "CHR", 12},
    {FeatureKind::Mel, "mel", "MEL", 128},
    {FeatureKind::Onset, "onset", "ONS", 1},
    {FeatureKind::Tempogram, "tempogram", "TMP", 384},
    {FeatureKind::CyclicTempogram, "cyclic_tempogram", "CTG", 40},
    {FeatureKind::Zcr, "zcr", "ZCR", 1},
    {FeatureKind::Rms, "rms", "RMS", 1},
    {FeatureKind::Centroid, "centroid", "CEN", 1},
    {FeatureKind::Bandwidth, "bandwidth", "BW", 1},
    {FeatureKind::Rolloff, "rolloff", "ROL", 1},
    {FeatureKind::Flatness, "flatness", "FLT", 1},
};

inline const KindInfo& info(FeatureKind kind) {
    for (const auto& k : kKinds)
        if (k.kind == kind) return k;
    throw ValidationError("unknown feature kind");
}

inline std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

} // namespace detail

inline std::size_t effective_param(const FeatureSpec& spec) {
    return spec.param != 0 ? spec.param : detail::info(spec.kind).default_param;
}

inline std::string feature_name(const FeatureSpec& spec) {
    return detail::info(spec.kind).name;
}

/// Canonical textual form, e.g. "mfcc:128" or "zcr"; "~" suffix marks smoothing off.
inline std::string to_string(const FeatureSpec& spec) {
    std::string s = feature_name(spec);
    if (spec.param != 0) s += ":" + std::to_string(spec.param);
    if (!spec.smooth) s += "~";
    return s;
}

/// Parse "name[:param][~]". Names accept the long form or the short
/// abbreviation, case-insensitive (e.g. "MFC", "mfcc:40", "cnt", "zcr~").
inline FeatureSpec parse_feature(std::string text) {
    FeatureSpec spec;
    if (!text.empty() && text.back() == '~') {
        spec.smooth = false;
        text.pop_back();
    }
    std::string name = text;
    if (const auto colon = text.find(':'); colon != std::string::npos) {
        name = text.substr(0, colon);
        const std::string num = text.substr(colon + 1);
        try {
            std::size_t used = 0;
            const long long v = std::stoll(num, &used);
            require(used == num.size() && v > 0, "");
            spec.param = static_cast<std::size_t>(v);
        } catch (const std::exception&) {
            throw ValidationError("invalid feature parameter in '" + text + "'");
        }
    }
    const std::string key = detail::lower(name);
    for (const auto& k : detail::kKinds)
        if (key == k.name || key == detail::lower(k.abbrev)) {
            spec.kind = k.kind;
            return spec;
        }
    throw ValidationError("unknown feature '" + name + "'");
}

/// Comma-separated list of features.
inline std::vector<FeatureSpec> parse_selection(const std::string& text) {
    std::vector<FeatureSpec> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(parse_feature(item));
    require(!out.empty(), "feature selection is empty");
    return out;
}

inline std::string selection_to_string(std::span<const FeatureSpec> selection) {
    std::string s;
    for (const auto& f : selection) {
        if (!s.empty()) s += ",";
        s += to_string(f);
    }
    return s;
}

/// MFCC(128) + spectral contrast (6 bands, 7 rows).
inline std::vector<FeatureSpec> default_selection() {
    return {{FeatureKind::Mfcc, 128, true}, {FeatureKind::Contrast, 6, true}};
}

/// Rows produced by one selected feature.
inline std::size_t feature_rows(const FeatureSpec& spec) {
    const std::size_t p = effective_param(spec);
    switch (spec.kind) {
    case FeatureKind::Contrast:
        return p + 1;
    case FeatureKind::Chroma:
        return 12;
    case FeatureKind::Mfcc:
    case FeatureKind::Mel:
    case FeatureKind::Tempogram:
    case FeatureKind::CyclicTempogram:
        return p;
    default:
        return 1;
    }
}

inline FeatureMatrix extract_feature(const AudioClip& clip, const FeatureSpec& spec, const PipelineConfig& cfg = {}) {
    const std::size_t p = effective_param(spec);
    switch (spec.kind) {
    case FeatureKind::Mfcc:
        return mfcc(clip, cfg.frame, p, std::max(cfg.n_mels, p));
    case FeatureKind::Contrast:
        return spectral_contrast(clip, cfg.frame, {p, cfg.contrast_quantile, cfg.contrast_fmin});
    case FeatureKind::Chroma:
        return chromagram(clip, cfg.frame);
    case FeatureKind::Mel: {
        FeatureMatrix mel = mel_spectrogram(clip, cfg.frame, p);
        mel.values = to_db(mel.values);
        return mel;
    }
    case FeatureKind::Onset:
        return onset_strength(clip, cfg.frame, cfg.n_mels);
    case FeatureKind::Tempogram:
        return tempogram(onset_strength(clip, cfg.frame, cfg.n_mels), p);
    case FeatureKind::CyclicTempogram:
        return cyclic_tempogram(tempogram(onset_strength(clip, cfg.frame, cfg.n_mels), cfg.tempogram_window), p);
    default:
        break;
    }
    ScalarDescriptors d = scalar_descriptors(clip, cfg.frame);
    switch (spec.kind) {
    case FeatureKind::Zcr:
        return std::move(d.zcr);
    case FeatureKind::Rms:
        return std::move(d.rms);
    case FeatureKind::Centroid:
        return std::move(d.centroid);
    case FeatureKind::Bandwidth:
        return std::move(d.bandwidth);
    case FeatureKind::Rolloff:
        return std::move(d.rolloff);
    default:
        return std::move(d.flatness);
    }
}

// ---------------------------------------------------------------------------
// summarised vectors

enum class Statistic { Mean, Variance, DeltaMean, DeltaVariance, Delta2Mean, Delta2Variance };

inline const char* to_string(Statistic s) {
    switch (s) {
    case Statistic::Mean:
        return "mean";
    case Statistic::Variance:
        return "var";
    case Statistic::DeltaMean:
        return "delta_mean";
    case Statistic::DeltaVariance:
        return "delta_var";
    case Statistic::Delta2Mean:
        return "delta2_mean";
    default:
        return "delta2_var";
    }
}

struct LayoutEntry {
    std::string feature;
    Statistic statistic;
    std::size_t row;

    bool operator==(const LayoutEntry&) const = default;
};

using Layout = std::vector<LayoutEntry>;

/// Position map for a selection: per feature, static / delta / delta-delta
/// blocks, each block interleaving (mean, var) per row.
inline Layout make_layout(std::span<const FeatureSpec> selection) {
    Layout layout;
    constexpr Statistic stats[3][2] = {{Statistic::Mean, Statistic::Variance},
                                       {Statistic::DeltaMean, Statistic::DeltaVariance},
                                       {Statistic::Delta2Mean, Statistic::Delta2Variance}};
    for (const auto& spec : selection) {
        const std::size_t rows = feature_rows(spec);
        for (const auto& block : stats)
            for (std::size_t r = 0; r < rows; ++r) {
                layout.push_back({feature_name(spec), block[0], r});
                layout.push_back({feature_name(spec), block[1], r});
            }
    }
    return layout;
}

struct FeatureVector {
    std::vector<double> values;
    std::shared_ptr<const Layout> layout;

    std::size_t size() const noexcept { return values.size(); }
};

/// Full per-clip pipeline. The clip is resampled to cfg.sample_rate first.
inline FeatureVector assemble(const AudioClip& clip, std::span<const FeatureSpec> selection,
                              const PipelineConfig& cfg = {}) {
    require(!selection.empty(), "feature selection is empty");
    const AudioClip uniform = clip.sample_rate == cfg.sample_rate ? clip : resample(clip, cfg.sample_rate);
    FeatureVector out;
    out.layout = std::make_shared<const Layout>(make_layout(selection));
    out.values.reserve(out.layout->size());
    for (const auto& spec : selection) {
        FeatureMatrix m;
        try {
            m = extract_feature(uniform, spec, cfg);
        } catch (const Error& e) {
            throw ValidationError("feature '" + feature_name(spec) + "': " + e.what());
        }
        if (spec.smooth) m = gaussian_smooth(m, cfg.sigma);
        const FeatureMatrix d1 = delta(m, 1);
        const FeatureMatrix d2 = delta(d1, 1);
        for (const FeatureMatrix* part : {static_cast<const FeatureMatrix*>(&m), &d1, &d2}) {
            const auto s = summarize(*part);
            out.values.insert(out.values.end(), s.begin(), s.end());
        }
    }
    require(out.values.size() == out.layout->size(), "internal: layout/value length mismatch");
    for (double v : out.values)
        if (!std::isfinite(v)) throw ValidationError("non-finite feature value for clip '" + clip.id + "'");
    return out;
}

// ---------------------------------------------------------------------------
// quantile normalisation

/// Per-dimension empirical quantiles. transform() maps a value to its CDF
/// position u in [0, 1] and returns 2u - 1, clamped into (-1 + eps, 1 - eps).
class QuantileMap {
public:
    static constexpr std::size_t kMaxQuantiles = 1000;
    static constexpr double kEpsilon = 1e-7;

    QuantileMap() = default;

    /// Rows of `corpus` are samples.
    static QuantileMap fit(const RealMatrix& corpus) {
        require(corpus.rows() >= 2, "quantile map needs at least 2 vectors");
        QuantileMap q;
        q.dim_ = corpus.cols();
        const std::size_t n = corpus.rows();
        q.n_quantiles_ = std::min(kMaxQuantiles, n);
        q.refs_.resize(q.dim_ * q.n_quantiles_);
        std::vector<double> column(n);
        for (std::size_t d = 0; d < q.dim_; ++d) {
            for (std::size_t i = 0; i < n; ++i) column[i] = corpus(i, d);
            std::sort(column.begin(), column.end());
            for (std::size_t j = 0; j < q.n_quantiles_; ++j) {
                const double pos = static_cast<double>(j) * static_cast<double>(n - 1) /
                                   static_cast<double>(q.n_quantiles_ - 1);
                const auto lo = static_cast<std::size_t>(std::floor(pos));
                const std::size_t hi = std::min(lo + 1, n - 1);
                const double frac = pos - static_cast<double>(lo);
                q.refs_[d * q.n_quantiles_ + j] = column[lo] + frac * (column[hi] - column[lo]);
            }
        }
        return q;
    }

    static QuantileMap fit(std::span<const FeatureVector> corpus) {
        require(corpus.size() >= 2, "quantile map needs at least 2 vectors");
        std::vector<std::vector<double>> rows;
        rows.reserve(corpus.size());
        for (const auto& v : corpus) {
            require(v.size() == corpus[0].size(), "quantile map corpus has mixed dimensions");
            rows.push_back(v.values);
        }
        return fit(stack_rows(rows));
    }

    std::size_t dimension() const noexcept { return dim_; }
    std::size_t quantile_count() const noexcept { return n_quantiles_; }
    std::span<const double> references(std::size_t d) const {
        return {refs_.data() + d * n_quantiles_, n_quantiles_};
    }

    double transform(std::size_t d, double x) const {
        const auto ref = references(d);
        const std::size_t n = ref.size();
        double u;
        if (x <= ref.front()) {
            u = 0.0;
        } else if (x >= ref.back()) {
            u = 1.0;
        } else {
            // average of the forward and backward interpolation, so runs of
            // equal reference values map to the centre of their CDF interval
            const auto upper = std::upper_bound(ref.begin(), ref.end(), x);
            const auto lower = std::lower_bound(ref.begin(), ref.end(), x);
            auto interp = [&](auto it) {
                const std::size_t hi = static_cast<std::size_t>(it - ref.begin());
                const std::size_t lo = hi - 1;
                const double span = ref[hi] - ref[lo];
                const double frac = span > 0.0 ? (x - ref[lo]) / span : 0.0;
                return (static_cast<double>(lo) + frac) / static_cast<double>(n - 1);
            };
            const double fwd = interp(upper);
            const double bwd = lower == ref.begin() ? 0.0
                             : (*lower == x ? static_cast<double>(lower - ref.begin()) / static_cast<double>(n - 1)
                                            : interp(lower));
            u = 0.5 * (fwd + bwd);
        }
        return std::clamp(2.0 * u - 1.0, -1.0 + kEpsilon, 1.0 - kEpsilon);
    }

    FeatureVector apply(const FeatureVector& v) const {
        require(v.size() == dim_, "quantile map dimension mismatch: map has " + std::to_string(dim_) +
                                      ", vector has " + std::to_string(v.size()));
        FeatureVector out{std::vector<double>(dim_), v.layout};
        for (std::size_t d = 0; d < dim_; ++d) out.values[d] = transform(d, v.values[d]);
        return out;
    }

    RealMatrix apply(const RealMatrix& m) const {
        require(m.cols() == dim_, "quantile map dimension mismatch");
        RealMatrix out(m.rows(), m.cols());
        for (std::size_t i = 0; i < m.rows(); ++i)
            for (std::size_t d = 0; d < dim_; ++d) out(i, d) = transform(d, m(i, d));
        return out;
    }

private:
    std::size_t dim_ = 0;
    std::size_t n_quantiles_ = 0;
    std::vector<double> refs_;
};

inline QuantileMap fit_quantile_map(std::span<const FeatureVector> corpus) { return QuantileMap::fit(corpus); }

inline FeatureVector apply_quantile_map(const QuantileMap& q, const FeatureVector& v) { return q.apply(v); }

// ---------------------------------------------------------------------------
// feature cache file
//
//   "FACEFV1\0"            8 bytes
//   dimension              u32 LE
//   count                  u32 LE
//   count * dimension      f32 LE, row-major
//   count * { u32 LE length, UTF-8 id bytes }

struct FeatureTable {
    std::vector<std::string> ids;
    RealMatrix values;  // count x dimension

    std::size_t size() const noexcept { return ids.size(); }
    std::size_t dimension() const noexcept { return values.cols(); }

    std::optional<std::size_t> find(const std::string& id) const {
        for (std::size_t i = 0; i < ids.size(); ++i)
            if (ids[i] == id) return i;
        return std::nullopt;
    }
};

inline constexpr char kFeatureCacheMagic[8] = {'F', 'A', 'C', 'E', 'F', 'V', '1', '\0'};

inline std::vector<std::uint8_t> encode_feature_cache(const FeatureTable& table) {
    require(table.values.rows() == table.ids.size(), "feature table id/value count mismatch");
    std::vector<std::uint8_t> out(kFeatureCacheMagic, kFeatureCacheMagic + 8);
    detail::put_u32(out, static_cast<std::uint32_t>(table.dimension()));
    detail::put_u32(out, static_cast<std::uint32_t>(table.size()));
    for (double v : table.values.data()) detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    for (const auto& id : table.ids) {
        detail::put_u32(out, static_cast<std::uint32_t>(id.size()));
        out.insert(out.end(), id.begin(), id.end());
    }
    return out;
}

inline FeatureTable decode_feature_cache(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kFeatureCacheMagic, 8) != 0)
        throw IoError("not a feature cache file");
    const std::uint32_t dim = detail::read_u32(bytes.data() + 8);
    const std::uint32_t count = detail::read_u32(bytes.data() + 12);
    std::size_t pos = 16;
    const std::size_t value_bytes = std::size_t(dim) * count * 4;
    if (bytes.size() < pos + value_bytes) throw IoError("truncated feature cache");
    FeatureTable table;
    table.values = RealMatrix(count, dim);
    for (std::size_t i = 0; i < std::size_t(dim) * count; ++i, pos += 4)
        table.values.data()[i] = std::bit_cast<float>(detail::read_u32(bytes.data() + pos));
    table.ids.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        if (bytes.size() < pos + 4) throw IoError("truncated feature cache id table");
        const std::uint32_t len = detail::read_u32(bytes.data() + pos);
        pos += 4;
        if (bytes.size() < pos + len) throw IoError("truncated feature cache id table");
        table.ids.emplace_back(reinterpret_cast<const char*>(bytes.data() + pos), len);
        pos += len;
    }
    if (pos != bytes.size()) throw IoError("trailing bytes in feature cache");
    return table;
}

inline void write_feature_cache(const std::filesystem::path& path, const FeatureTable& table) {
    const auto bytes = encode_feature_cache(table);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write feature cache " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing feature cache " + path.string());
}

inline FeatureTable read_feature_cache(const std::filesystem::path& path) {
    return decode_feature_cache(read_file_bytes(path));
}

} // namespace face
