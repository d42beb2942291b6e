// Acceptance suite. Prints one PASS/FAIL line per criterion (SKIP for the
// optional dataset smoke test when the data is absent) and exits non-zero if
// any gating criterion fails.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "face/annotator.hpp"
#include "face/dsp_features.hpp"
#include "face/feature_pipeline.hpp"
#include "face/gbdt.hpp"
#include "face/harness.hpp"
#include "face/lof.hpp"
#include "support.hpp"

namespace {

using namespace face;
using face::testing::brute_force_lof;
using face::testing::click_train;
using face::testing::make_clip;
using face::testing::random_points;
using face::testing::sine;

constexpr int kRate = 22050;

struct Outcome {
    enum Status { Pass, Fail, Skip } status;
    std::string detail;
};

struct Criterion {
    std::string name;
    double time_limit_s;
    bool gating;
    std::function<Outcome()> run;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::size_t column_argmax(const RealMatrix& m, std::size_t col, std::size_t from = 0) {
    std::size_t best = from;
    for (std::size_t r = from; r < m.rows(); ++r)
        if (m(r, col) > m(best, col)) best = r;
    return best;
}

// ---------------------------------------------------------------------------

Outcome vector_budget() {
    const auto selection = parse_selection("mfcc:128,contrast:6");
    std::mt19937_64 rng(810);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int rates[] = {16000, 22050, 44100, 48000};

    // the layout must be exactly {feature} x {6 statistics} x {rows}
    const Layout layout = make_layout(selection);
    std::set<std::tuple<std::string, int, std::size_t>> seen;
    for (const auto& e : layout) seen.insert({e.feature, static_cast<int>(e.statistic), e.row});
    const std::size_t expected_positions = 6 * 128 + 6 * 7;
    bool layout_ok = layout.size() == expected_positions && seen.size() == expected_positions;
    for (const auto& e : layout) {
        const std::size_t rows = e.feature == feature_name(selection[0]) ? 128 : 7;
        layout_ok = layout_ok && e.row < rows;
    }

    std::size_t ok = 0;
    std::vector<std::size_t> sizes;
    for (int c = 0; c < 20; ++c) {
        const int rate = rates[face::detail::uniform_below(rng, 4)];
        const double seconds = 0.5 + 3.5 * u(rng);
        const auto n = static_cast<std::size_t>(seconds * rate);
        std::vector<double> s(n);
        std::normal_distribution<double> g(0.0, 1.0);
        const double f = 100.0 + 4000.0 * u(rng), noise = 0.3 * u(rng), amp = 0.1 + 0.5 * u(rng);
        for (std::size_t i = 0; i < n; ++i)
            s[i] = amp * std::sin(2.0 * std::numbers::pi * f * static_cast<double>(i) / rate) + noise * g(rng);
        const FeatureVector v = assemble(make_clip(std::move(s), rate, "r" + std::to_string(c)), selection);
        sizes.push_back(v.size());
        if (v.size() == 810 && v.layout && *v.layout == layout) ++ok;
    }
    const bool pass = ok == 20 && layout_ok && layout.size() == 810;
    return {pass ? Outcome::Pass : Outcome::Fail,
            fmt("%zu/20 clips gave 810 values; layout %zu positions, %zu distinct (feature, statistic, row)", ok,
                layout.size(), seen.size())};
}

Outcome lof_equivalence() {
    constexpr double tol = 1e-9;
    std::mt19937_64 rng(50);
    double worst = 0.0;
    std::size_t sets = 0;
    for (int s = 0; s < 50; ++s) {
        const std::size_t dim = s % 2 == 0 ? 2 : 810;
        const std::size_t k = (s / 2) % 2 == 0 ? 1 : 5;
        const std::size_t n = 10 + face::detail::uniform_below(rng, 191);
        RealMatrix pts = random_points(n, dim, 1000 + s);
        if (s % 5 == 0)  // a few exact duplicates
            for (std::size_t d = 0; d < dim; ++d) pts(1, d) = pts(0, d);
        const LofModel m = fit_lof(pts, k);
        const auto oracle = brute_force_lof(pts, k);
        for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(m.scores[i] - oracle[i]));
        ++sets;
    }
    return {worst <= tol ? Outcome::Pass : Outcome::Fail,
            fmt("%zu sets, max |lof - brute force| = %.3g (tolerance 1e-9)", sets, worst)};
}

Outcome delta_correctness() {
    constexpr double tol = 1e-6;
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    double worst_d1 = 0.0, worst_d2 = 0.0;
    const std::size_t half = kDeltaWidth / 2;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t rows = 8, frames = 40 + face::detail::uniform_below(rng, 200);
        FeatureMatrix m{"poly", RealMatrix(rows, frames), 43.0};
        std::vector<std::array<double, 3>> coef(rows);
        for (std::size_t r = 0; r < rows; ++r) {
            coef[r] = {u(rng), u(rng), r % 3 == 0 ? 0.0 : 0.05 * u(rng)};
            for (std::size_t t = 0; t < frames; ++t) {
                const double x = static_cast<double>(t);
                m.values(r, t) = coef[r][0] + coef[r][1] * x + coef[r][2] * x * x;
            }
        }
        const FeatureMatrix d1 = delta(m, 1);
        const FeatureMatrix d2 = delta(d1, 1);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t t = half; t + half < frames; ++t)
                worst_d1 = std::max(worst_d1, std::abs(d1.values(r, t) - (coef[r][1] + 2.0 * coef[r][2] * static_cast<double>(t))));
            for (std::size_t t = 2 * half; t + 2 * half < frames; ++t)
                worst_d2 = std::max(worst_d2, std::abs(d2.values(r, t) - 2.0 * coef[r][2]));
        }
    }
    const bool pass = worst_d1 <= tol && worst_d2 <= tol;
    return {pass ? Outcome::Pass : Outcome::Fail,
            fmt("max slope error %.3g, max curvature error %.3g (tolerance 1e-6)", worst_d1, worst_d2)};
}

Outcome dsp_tones() {
    // spectral centroid of a 2 kHz tone, interior frames, within one FFT bin
    const FrameConfig fc{};
    const double bin_hz = static_cast<double>(kRate) / static_cast<double>(fc.n_fft);
    const auto d = scalar_descriptors(make_clip(sine(2000.0, kRate, 2.0)));
    double worst_centroid = 0.0;
    for (std::size_t t = 2; t + 2 < d.centroid.frames(); ++t)
        worst_centroid = std::max(worst_centroid, std::abs(d.centroid.values(0, t) - 2000.0));
    const bool centroid_ok = worst_centroid <= bin_hz;

    // tempogram of a 120 BPM click train: strongest non-zero lag at the middle frame
    const auto env = onset_strength(make_clip(click_train(120.0, kRate, 12.0)));
    const auto tg = tempogram(env);
    const std::size_t mid = tg.frames() / 2;
    const std::size_t peak_lag = column_argmax(tg.values, mid, 1);
    const bool tempo_ok = std::abs(static_cast<long>(peak_lag) - 22) <= 1;

    // cyclic tempogram: 60 and 120 BPM share the peak bin
    auto cyclic_peak = [](double bpm) {
        const auto ct = cyclic_tempogram(tempogram(onset_strength(make_clip(click_train(bpm, kRate, 12.0)))));
        return column_argmax(ct.values, ct.frames() / 2);
    };
    const std::size_t p60 = cyclic_peak(60.0), p120 = cyclic_peak(120.0);
    const bool cyclic_ok = p60 == p120;

    return {centroid_ok && tempo_ok && cyclic_ok ? Outcome::Pass : Outcome::Fail,
            fmt("centroid max error %.2f Hz vs bin %.2f Hz [%s]; tempogram peak lag %zu (value %.3f, lag 22 %.3f) at "
                "%.2f fps, want 22+-1 [%s]; cyclic bins 60 BPM %zu / 120 BPM %zu [%s]",
                worst_centroid, bin_hz, centroid_ok ? "ok" : "bad", peak_lag, tg.values(peak_lag, mid),
                tg.values(22, mid), env.frame_rate, tempo_ok ? "ok" : "bad", p60, p120, cyclic_ok ? "ok" : "bad")};
}

Outcome gbdt_sanity() {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> g(0.0, 1.0);

    // linearly separable, oblique boundary with a margin
    const std::size_t dim = 5;
    std::vector<double> w(dim);
    for (double& v : w) v = g(rng);
    std::vector<std::vector<double>> rows;
    std::vector<int> y;
    while (rows.size() < 500) {
        std::vector<double> x(dim);
        for (double& v : x) v = g(rng);
        double s = 0.0;
        for (std::size_t d = 0; d < dim; ++d) s += w[d] * x[d];
        if (std::abs(s) < 0.2) continue;
        rows.push_back(x);
        y.push_back(s > 0 ? 1 : 0);
    }
    const RealMatrix x = stack_rows(rows);
    const BinaryGbdt sep = train_binary(x, y, GbdtParams{});
    std::size_t correct = 0;
    for (std::size_t i = 0; i < x.rows(); ++i) correct += (sep.predict_proba(x.row(i)) > 0.5 ? 1 : 0) == y[i];

    // loss non-increasing for the separable model and every one-vs-all member on noisy blobs
    auto non_increasing = [](const std::vector<double>& h) {
        for (std::size_t i = 1; i < h.size(); ++i)
            if (h[i] > h[i - 1]) return false;
        return true;
    };
    BlobSpec spec;
    spec.samples = 600;
    spec.classes = 4;
    spec.dimension = 8;
    spec.separation = 2.0;
    spec.label_noise = 0.1;
    spec.seed = 11;
    const SyntheticData blobs = generate_blobs(spec);
    const OvaModel ova = train_ova(blobs.x, blobs.y, GbdtParams{});
    bool loss_ok = non_increasing(sep.loss_history());
    std::size_t histories = 1;
    for (const auto& m : ova.models()) {
        loss_ok = loss_ok && non_increasing(m.loss_history());
        ++histories;
    }

    // serialization round trip: identical bytes and bit-identical predictions
    const auto bytes = serialize_model(ova);
    const OvaModel back = deserialize_model(bytes);
    bool bits_ok = serialize_model(back) == bytes;
    const RealMatrix probe = random_points(1000, spec.dimension, 99);
    for (std::size_t i = 0; i < probe.rows() && bits_ok; ++i) {
        const auto a = ova.predict(probe.row(i)), b = back.predict(probe.row(i));
        bits_ok = a.label == b.label && a.per_class.size() == b.per_class.size() &&
                  std::memcmp(a.per_class.data(), b.per_class.data(), a.per_class.size() * sizeof(double)) == 0;
    }

    const bool pass = correct == x.rows() && loss_ok && bits_ok;
    return {pass ? Outcome::Pass : Outcome::Fail,
            fmt("separable training accuracy %zu/%zu; loss non-increasing in %s of %zu histories; round trip %s",
                correct, x.rows(), loss_ok ? "all" : "not all", histories, bits_ok ? "bit-identical" : "differs")};
}

BlobSpec table_blobs(double separation, std::uint64_t seed) {
    BlobSpec spec;
    spec.samples = 2000;
    spec.classes = 10;
    spec.dimension = 50;
    spec.separation = separation;
    spec.seed = seed;
    return spec;
}

/// No LOF outlier joined T during a gated stage.
bool deferral_held_every_stage(const AnnotationEngine& e) {
    const auto& s = e.state();
    for (const auto& rec : s.history)
        if (rec.stage <= e.config().stages && rec.outliers_added > 0) return false;
    for (std::size_t i = 0; i < s.size; ++i)
        if (is_outlier(e.lof(), i) && s.assigned_stage[i] >= 1 && s.assigned_stage[i] <= e.config().stages) return false;
    return true;
}

Outcome annotation_benchmark() {
    constexpr double target = 0.95;
    double sum = 0.0;
    bool budget_ok = true, deferral_ok = true;
    std::string per_seed;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const SyntheticData d = generate_blobs(table_blobs(6.0, seed));
        AnnotateConfig cfg;
        cfg.seed = seed;
        std::optional<AnnotationEngine> engine;
        const auto r = benchmark_annotation(std::make_shared<const RealMatrix>(d.x), d.y, 10, cfg, &engine);
        const std::size_t cap = static_cast<std::size_t>(std::ceil(0.15 * 2000.0));
        budget_ok = budget_ok && r.human_labels <= cap;
        deferral_ok = deferral_ok && r.deferral_held && deferral_held_every_stage(*engine);
        sum += r.accuracy;
        per_seed += fmt("%s%.4f", per_seed.empty() ? "" : " ", r.accuracy);
    }
    const double mean = sum / 5.0;
    const bool pass = mean >= target && budget_ok && deferral_ok;
    return {pass ? Outcome::Pass : Outcome::Fail,
            fmt("mean accuracy %.4f (need >= 0.95) over seeds [%s]; human labels <= 300: %s; outlier deferral: %s",
                mean, per_seed.c_str(), budget_ok ? "yes" : "no", deferral_ok ? "held" : "broken")};
}

Outcome gate_ablation() {
    double gated = 0.0, ungated = 0.0;
    std::size_t wins = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const SyntheticData d = generate_blobs(table_blobs(3.0, seed));
        const auto x = std::make_shared<const RealMatrix>(d.x);
        AnnotateConfig on;
        on.seed = seed;
        AnnotateConfig off = on;
        off.gate_enabled = false;
        const double a = benchmark_annotation(x, d.y, 10, on).accuracy;
        const double b = benchmark_annotation(x, d.y, 10, off).accuracy;
        gated += a;
        ungated += b;
        wins += a >= b;
    }
    gated /= 10.0;
    ungated /= 10.0;
    return {gated >= ungated ? Outcome::Pass : Outcome::Fail,
            fmt("mean accuracy gate 0.7 = %.4f, gate disabled = %.4f (gated >= ungated in %zu/10 pairs)", gated, ungated,
                wins)};
}

Outcome query_extra_monotone() {
    std::size_t held = 0;
    double gain = 0.0;
    std::size_t asked_total = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const SyntheticData d = generate_blobs(table_blobs(3.0, seed));
        AnnotateConfig cfg;
        cfg.seed = seed;
        std::optional<AnnotationEngine> engine;
        const auto r = benchmark_annotation(std::make_shared<const RealMatrix>(d.x), d.y, 10, cfg, &engine);
        ReplayOracle extra(d.y);
        asked_total += engine->query_extra(extra, 0.009).size();
        const double after = annotation_accuracy(engine->state(), d.y);
        held += after >= r.accuracy;
        gain += after - r.accuracy;
    }
    return {held == 10 ? Outcome::Pass : Outcome::Fail,
            fmt("accuracy did not decrease in %zu/10 runs; %zu extra labels total (18 per run), mean gain %+.4f", held,
                asked_total, gain / 10.0)};
}

Outcome us8k_smoke() {
    const char* env = std::getenv("FACE_US8K_DIR");
    const std::filesystem::path root = env ? env : "/data/UrbanSound8K";
    const auto audio = root / "audio", metadata = root / "metadata" / "UrbanSound8K.csv";
    if (!std::filesystem::is_directory(audio) || !std::filesystem::is_regular_file(metadata))
        return {Outcome::Skip, "dataset not found at " + root.string() + " (set FACE_US8K_DIR)"};
    const DatasetManifest m = ingest(audio, metadata);
    const auto table = extract_features(m, default_selection(), root / "face_features_mfc_cnt.fv").table;
    const LabeledData data = join_labels(m, table);
    AnnotateConfig cfg;
    cfg.lof_on_quantile = true;
    const auto r = benchmark_annotation(std::make_shared<const RealMatrix>(data.x), data.y, data.class_count(), cfg);
    return {r.accuracy >= 0.80 ? Outcome::Pass : Outcome::Fail,
            fmt("%zu clips, annotation accuracy %.4f (target >= 0.80), human labels %zu", r.samples, r.accuracy,
                r.human_labels)};
}

} // namespace

int main() {
    const std::vector<Criterion> criteria = {
        {"vector_budget_810", 10, true, vector_budget},
        {"lof_oracle_equivalence", 30, true, lof_equivalence},
        {"delta_correctness", 5, true, delta_correctness},
        {"dsp_tone_checks", 30, true, dsp_tones},
        {"gbdt_sanity", 60, true, gbdt_sanity},
        {"annotation_benchmark_blobs", 300, true, annotation_benchmark},
        {"gate_ablation", 600, true, gate_ablation},
        {"query_extra_monotonicity", 300, true, query_extra_monotone},
        {"us8k_smoke", 1800, false, us8k_smoke},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {Outcome::Fail, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (o.status != Outcome::Skip && secs > c.time_limit_s) {
            o.status = Outcome::Fail;
            o.detail += fmt("; exceeded time limit %.0f s", c.time_limit_s);
        }
        const char* tag = o.status == Outcome::Pass ? "PASS" : o.status == Outcome::Fail ? "FAIL" : "SKIP";
        std::printf("%s %s: %s [%.2f s, limit %.0f s%s]\n", tag, c.name.c_str(), o.detail.c_str(), secs,
                    c.time_limit_s, c.gating ? "" : ", non-gating");
        std::fflush(stdout);
        if (o.status == Outcome::Fail && c.gating) ++failures;
    }
    std::printf("%d gating criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
