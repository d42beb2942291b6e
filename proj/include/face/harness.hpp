#pragma once

/// Dataset ingestion, feature caching, feature-set search, annotation
/// benchmarking, classifier evaluation and synthetic data generators.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "face/annotator.hpp"
#include "face/audio_io.hpp"
#include "face/error.hpp"
#include "face/feature_pipeline.hpp"
#include "face/gbdt.hpp"
#include "face/matrix.hpp"
#include "face/parallel.hpp"

namespace face {

// ---------------------------------------------------------------------------
// dataset manifest

struct DatasetEntry {
    std::filesystem::path path;
    std::string id;  // "fold{N}/{file stem}", unique within a manifest
    int label = 0;
    int fold = 1;
};

struct DatasetManifest {
    std::vector<DatasetEntry> entries;
    std::vector<std::string> class_names;  // indexed by label

    std::size_t size() const noexcept { return entries.size(); }
    std::vector<int> labels() const {
        std::vector<int> out;
        for (const auto& e : entries) out.push_back(e.label);
        return out;
    }
};

namespace detail {

/// One CSV record; double quotes may wrap fields and "" escapes a quote.
inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                fields.back() += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                fields.back() += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.emplace_back();
        } else if (c != '\r') {
            fields.back() += c;
        }
    }
    if (quoted) throw ValidationError("unterminated quote in CSV line: " + line);
    return fields;
}

inline int parse_int(const std::string& text, const std::string& what) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        throw ValidationError("malformed " + what + " '" + text + "'");
    }
}

} // namespace detail

/// Read an UrbanSound8K-style metadata CSV (columns slice_file_name, fold,
/// classID, class) and resolve each row to dir/fold{N}/{slice_file_name}.
/// Rows whose file is missing are skipped and reported in `warnings`.
inline DatasetManifest ingest(const std::filesystem::path& dir, const std::filesystem::path& metadata_csv,
                              std::vector<std::string>* warnings = nullptr) {
    std::ifstream in(metadata_csv);
    if (!in) throw IoError("cannot open metadata " + metadata_csv.string());
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("metadata CSV is empty");
    const auto header = detail::split_csv_line(line);
    auto column = [&](const char* name) {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw ValidationError(std::string("metadata CSV lacks column '") + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t c_file = column("slice_file_name");
    const std::size_t c_fold = column("fold");
    const std::size_t c_id = column("classID");
    const std::size_t c_class = column("class");

    DatasetManifest m;
    std::set<std::string> seen;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || line == "\r") continue;
        const auto f = detail::split_csv_line(line);
        if (f.size() != header.size())
            throw ValidationError("metadata row " + std::to_string(row) + " has " + std::to_string(f.size()) +
                                  " fields, expected " + std::to_string(header.size()));
        const int fold = detail::parse_int(f[c_fold], "fold");
        const int label = detail::parse_int(f[c_id], "classID");
        if (fold < 1) throw ValidationError("fold must be >= 1 on row " + std::to_string(row));
        if (label < 0) throw ValidationError("classID must be >= 0 on row " + std::to_string(row));
        if (static_cast<std::size_t>(label) >= m.class_names.size()) m.class_names.resize(label + 1);
        auto& name = m.class_names[static_cast<std::size_t>(label)];
        if (name.empty()) {
            name = f[c_class];
        } else if (name != f[c_class]) {
            throw ValidationError("classID " + std::to_string(label) + " maps to both '" + name + "' and '" +
                                  f[c_class] + "'");
        }

        const std::string fold_dir = "fold" + std::to_string(fold);
        const auto path = dir / fold_dir / f[c_file];
        if (!std::filesystem::is_regular_file(path)) {
            if (warnings) warnings->push_back("missing audio file " + path.string() + " (row " + std::to_string(row) + ")");
            continue;
        }
        const std::string id = fold_dir + "/" + std::filesystem::path(f[c_file]).stem().string();
        if (!seen.insert(id).second) throw ValidationError("duplicate metadata row for " + id);
        m.entries.push_back({path, id, label, fold});
    }
    if (m.entries.empty()) throw ValidationError("no metadata row resolves to an audio file under " + dir.string());
    for (std::size_t c = 0; c < m.class_names.size(); ++c)
        if (m.class_names[c].empty()) m.class_names[c] = "class" + std::to_string(c);
    return m;
}

/// Every audio file directly inside `dir`, sorted by name, one class-less entry each.
inline DatasetManifest scan_audio_dir(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    DatasetManifest m;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::string ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        if (ext == ".wav") m.entries.push_back({e.path(), e.path().stem().string(), 0, 1});
    }
    std::sort(m.entries.begin(), m.entries.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    if (m.entries.empty()) throw ValidationError("no .wav files in " + dir.string());
    return m;
}

// ---------------------------------------------------------------------------
// feature extraction with a cache

struct ExtractionResult {
    FeatureTable table;
    std::vector<std::string> failures;  // "id: reason"
    bool from_cache = false;
};

/// Assemble one vector per manifest entry, in manifest order. A cache at
/// `cache_path` that matches the selection's dimension and the manifest's ids
/// is reused as-is; otherwise features are computed and the cache rewritten.
/// Clips that fail to decode are dropped; more than 1% failures aborts.
inline ExtractionResult extract_features(const DatasetManifest& manifest, std::span<const FeatureSpec> selection,
                                         const std::filesystem::path& cache_path = {},
                                         const PipelineConfig& cfg = {},
                                         unsigned threads = default_thread_count()) {
    require(!manifest.entries.empty(), "manifest is empty");
    const std::size_t dim = make_layout(selection).size();
    if (!cache_path.empty() && std::filesystem::exists(cache_path)) {
        FeatureTable cached = read_feature_cache(cache_path);
        std::set<std::string> ids;
        for (const auto& e : manifest.entries) ids.insert(e.id);
        const bool subset = std::all_of(cached.ids.begin(), cached.ids.end(), [&](const auto& id) { return ids.contains(id); });
        const std::size_t allowed_missing = manifest.size() / 100;
        if (cached.dimension() == dim && subset && cached.size() + allowed_missing >= manifest.size())
            return {std::move(cached), {}, true};
    }

    const std::size_t n = manifest.size();
    std::vector<std::vector<double>> rows(n);
    std::vector<std::string> errors(n);
    parallel_for(
        n,
        [&](std::size_t i) {
            const auto& e = manifest.entries[i];
            try {
                AudioClip clip = load_audio(e.path);
                clip.id = e.id;
                rows[i] = assemble(clip, selection, cfg).values;
            } catch (const Error& ex) {
                errors[i] = ex.what();
            }
        },
        threads);

    ExtractionResult out;
    std::vector<std::vector<double>> kept;
    for (std::size_t i = 0; i < n; ++i) {
        if (!errors[i].empty()) {
            out.failures.push_back(manifest.entries[i].id + ": " + errors[i]);
            continue;
        }
        out.table.ids.push_back(manifest.entries[i].id);
        kept.push_back(std::move(rows[i]));
    }
    if (out.failures.size() * 100 > n) {
        std::string msg = std::to_string(out.failures.size()) + " of " + std::to_string(n) +
                          " clips failed feature extraction (limit 1%):";
        for (std::size_t i = 0; i < std::min<std::size_t>(out.failures.size(), 10); ++i) msg += "\n  " + out.failures[i];
        throw ValidationError(msg);
    }
    out.table.values = kept.empty() ? RealMatrix(0, dim) : stack_rows(kept);
    if (!cache_path.empty()) write_feature_cache(cache_path, out.table);
    return out;
}

/// Features and labels aligned row-for-row.
struct LabeledData {
    std::vector<std::string> ids;
    RealMatrix x;
    std::vector<int> y;
    std::vector<int> folds;
    std::vector<std::string> class_names;

    std::size_t size() const noexcept { return ids.size(); }
    int class_count() const noexcept { return static_cast<int>(class_names.size()); }
};

/// Join manifest labels onto the rows of a feature table (by id).
inline LabeledData join_labels(const DatasetManifest& manifest, const FeatureTable& table) {
    std::map<std::string, const DatasetEntry*> by_id;
    for (const auto& e : manifest.entries) by_id[e.id] = &e;
    LabeledData d;
    d.class_names = manifest.class_names;
    d.x = RealMatrix(table.size(), table.dimension());
    for (std::size_t i = 0; i < table.size(); ++i) {
        const auto it = by_id.find(table.ids[i]);
        require(it != by_id.end(), "feature cache row '" + table.ids[i] + "' is not in the manifest");
        d.ids.push_back(table.ids[i]);
        d.y.push_back(it->second->label);
        d.folds.push_back(it->second->fold);
        std::copy(table.values.row(i).begin(), table.values.row(i).end(), d.x.row(i).begin());
    }
    return d;
}

// ---------------------------------------------------------------------------
// splits and simple classifiers

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
};

/// Deterministic stratified split: per class, `fraction` of the samples
/// (rounded, at least one when the class has two or more) go to validation.
inline Split stratified_split(std::span<const int> y, double fraction, std::uint64_t seed) {
    require(fraction > 0.0 && fraction < 1.0, "validation fraction must lie in (0, 1)");
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < y.size(); ++i) by_class[y[i]].push_back(i);
    std::mt19937_64 rng(seed);
    Split s;
    for (auto& [label, members] : by_class) {
        auto shuffled = detail::sample_without_replacement(members, members.size(), rng);
        auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(members.size())));
        if (members.size() >= 2) take = std::clamp<std::size_t>(take, 1, members.size() - 1);
        else take = 0;
        s.validation.insert(s.validation.end(), shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(take));
        s.train.insert(s.train.end(), shuffled.begin() + static_cast<std::ptrdiff_t>(take), shuffled.end());
    }
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.validation.begin(), s.validation.end());
    std::set<int> train_classes;
    for (std::size_t i : s.train) train_classes.insert(y[i]);
    if (s.validation.empty() || train_classes.size() < 2)
        throw ValidationError("degenerate validation split: need a non-empty validation set and 2+ training classes");
    return s;
}

/// Quantile-normalised one-vs-all GBDT, the classifier used throughout.
struct QuantileGbdt {
    QuantileMap quantiles;
    OvaModel model;

    static QuantileGbdt train(const RealMatrix& x, std::span<const int> y, const GbdtParams& params,
                              unsigned threads = default_thread_count()) {
        QuantileGbdt c;
        c.quantiles = QuantileMap::fit(x);
        c.model = train_ova(c.quantiles.apply(x), y, params, threads);
        return c;
    }

    std::vector<int> predict(const RealMatrix& x) const {
        std::vector<int> out;
        for (const auto& p : model.predict_all(quantiles.apply(x))) out.push_back(p.label);
        return out;
    }
};

/// Euclidean k-nearest-neighbour vote. Ties go to the class with the smaller
/// summed distance, then to the smaller label.
inline std::vector<int> knn_predict(const RealMatrix& train_x, std::span<const int> train_y, const RealMatrix& test_x,
                                    std::size_t k = 5) {
    require(train_x.rows() >= 1 && train_x.cols() == test_x.cols(), "kNN: empty training set or dimension mismatch");
    k = std::min(k, train_x.rows());
    std::vector<int> out(test_x.rows());
    parallel_for(test_x.rows(), [&](std::size_t i) {
        std::vector<std::pair<double, std::size_t>> d(train_x.rows());
        for (std::size_t j = 0; j < train_x.rows(); ++j) d[j] = {detail::euclidean(test_x.row(i), train_x.row(j)), j};
        std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
        std::map<int, std::pair<std::size_t, double>> votes;
        for (std::size_t r = 0; r < k; ++r) {
            auto& v = votes[train_y[d[r].second]];
            ++v.first;
            v.second += d[r].first;
        }
        auto best = votes.begin();
        for (auto it = votes.begin(); it != votes.end(); ++it)
            if (it->second.first > best->second.first ||
                (it->second.first == best->second.first && it->second.second < best->second.second))
                best = it;
        out[i] = best->first;
    });
    return out;
}

inline double accuracy_of(std::span<const int> predicted, std::span<const int> truth) {
    require(predicted.size() == truth.size() && !truth.empty(), "accuracy: size mismatch or empty input");
    std::size_t ok = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) ok += predicted[i] == truth[i];
    return static_cast<double>(ok) / static_cast<double>(truth.size());
}

inline std::vector<int> take(std::span<const int> v, std::span<const std::size_t> idx) {
    std::vector<int> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(v[i]);
    return out;
}

// ---------------------------------------------------------------------------
// feature-set search

struct FeatureSetResult {
    std::vector<std::size_t> members;  // candidate indices, ascending
    double accuracy = 0.0;
};

struct AblationPhase {
    int phase = 1;
    std::vector<FeatureSetResult> results;  // sorted by accuracy, best first
};

struct AblationReport {
    std::vector<std::string> candidates;
    std::vector<AblationPhase> phases;
    FeatureSetResult best;
    double validation_fraction = 0.1;
    std::uint64_t seed = 0;

    std::string best_name() const {
        std::string s;
        for (std::size_t m : best.members) s += (s.empty() ? "" : "+") + candidates[m];
        return s;
    }

    /// phase,feature_set,accuracy rows.
    std::string table() const {
        std::ostringstream out;
        out << "phase,feature_set,accuracy\n";
        char buf[32];
        for (const auto& p : phases)
            for (const auto& r : p.results) {
                std::string name;
                for (std::size_t m : r.members) name += (name.empty() ? "" : "+") + candidates[m];
                std::snprintf(buf, sizeof buf, "%.6f", r.accuracy);
                out << p.phase << ',' << name << ',' << buf << '\n';
            }
        return out.str();
    }
};

/// Greedy feature-set search. `blocks[c]` holds candidate c's vectors (one row
/// per sample). Phase 1 scores every singleton; each later phase extends each
/// of the two best sets of the previous phase by every feature it lacks. The
/// search stops once a phase fails to beat the best accuracy so far.
inline AblationReport ablation_search(std::span<const RealMatrix> blocks, std::span<const std::string> names,
                                      std::span<const int> y, double validation_fraction = 0.1,
                                      const GbdtParams& params = {}, std::uint64_t seed = 0,
                                      unsigned threads = default_thread_count()) {
    require(blocks.size() >= 2, "ablation needs at least 2 candidate features");
    require(names.size() == blocks.size(), "ablation: one name per candidate");
    for (const auto& b : blocks) require(b.rows() == y.size(), "ablation: block row count differs from labels");
    const Split split = stratified_split(y, validation_fraction, seed);
    const auto y_train = take(y, split.train);
    const auto y_val = take(y, split.validation);

    auto evaluate = [&](const std::vector<std::size_t>& members) {
        std::size_t dim = 0;
        for (std::size_t m : members) dim += blocks[m].cols();
        RealMatrix x(y.size(), dim);
        for (std::size_t i = 0; i < y.size(); ++i) {
            std::size_t col = 0;
            for (std::size_t m : members)
                for (double v : blocks[m].row(i)) x(i, col++) = v;
        }
        const auto clf = QuantileGbdt::train(gather_rows(x, split.train), y_train, params, threads);
        return accuracy_of(clf.predict(gather_rows(x, split.validation)), y_val);
    };
    auto by_accuracy = [](const FeatureSetResult& a, const FeatureSetResult& b) {
        return a.accuracy > b.accuracy || (a.accuracy == b.accuracy && a.members < b.members);
    };

    AblationReport report;
    report.candidates.assign(names.begin(), names.end());
    report.validation_fraction = validation_fraction;
    report.seed = seed;

    std::vector<std::vector<std::size_t>> sets;
    for (std::size_t c = 0; c < blocks.size(); ++c) sets.push_back({c});
    double best_so_far = -1.0;
    for (int phase = 1; !sets.empty(); ++phase) {
        AblationPhase p{phase, {}};
        for (const auto& s : sets) p.results.push_back({s, evaluate(s)});
        std::sort(p.results.begin(), p.results.end(), by_accuracy);
        const FeatureSetResult top = p.results.front();
        report.phases.push_back(p);
        if (top.accuracy <= best_so_far) break;
        best_so_far = top.accuracy;
        report.best = top;

        std::set<std::vector<std::size_t>> next;
        for (std::size_t r = 0; r < std::min<std::size_t>(2, p.results.size()); ++r) {
            const auto& base = p.results[r].members;
            for (std::size_t c = 0; c < blocks.size(); ++c) {
                if (std::find(base.begin(), base.end(), c) != base.end()) continue;
                auto grown = base;
                grown.push_back(c);
                std::sort(grown.begin(), grown.end());
                next.insert(grown);
            }
        }
        sets.assign(next.begin(), next.end());
    }
    return report;
}

/// Per-candidate vectors for a manifest, cached as one file per candidate
/// under `cache_dir` when it is given.
inline std::vector<RealMatrix> extract_candidate_blocks(const DatasetManifest& manifest,
                                                        std::span<const FeatureSpec> candidates,
                                                        const std::filesystem::path& cache_dir,
                                                        std::vector<int>* labels, const PipelineConfig& cfg = {},
                                                        unsigned threads = default_thread_count()) {
    std::vector<RealMatrix> blocks;
    std::vector<std::string> common;
    std::vector<FeatureTable> tables;
    for (const auto& spec : candidates) {
        const std::vector<FeatureSpec> one = {spec};
        std::filesystem::path cache;
        if (!cache_dir.empty()) {
            std::filesystem::create_directories(cache_dir);
            std::string stem = to_string(spec);
            std::replace(stem.begin(), stem.end(), ':', '_');
            std::replace(stem.begin(), stem.end(), '~', 'r');
            cache = cache_dir / (stem + ".fv");
        }
        tables.push_back(extract_features(manifest, one, cache, cfg, threads).table);
    }
    // rows present in every table, in manifest order
    for (const auto& e : manifest.entries)
        if (std::all_of(tables.begin(), tables.end(), [&](const auto& t) { return t.find(e.id).has_value(); }))
            common.push_back(e.id);
    for (const auto& t : tables) {
        RealMatrix m(common.size(), t.dimension());
        for (std::size_t i = 0; i < common.size(); ++i) {
            const auto row = t.values.row(*t.find(common[i]));
            std::copy(row.begin(), row.end(), m.row(i).begin());
        }
        blocks.push_back(std::move(m));
    }
    if (labels) {
        labels->clear();
        std::map<std::string, int> by_id;
        for (const auto& e : manifest.entries) by_id[e.id] = e.label;
        for (const auto& id : common) labels->push_back(by_id[id]);
    }
    return blocks;
}

// ---------------------------------------------------------------------------
// annotation benchmark

struct ProvenanceStats {
    std::size_t count = 0;
    std::size_t correct = 0;
    double accuracy() const { return count ? static_cast<double>(correct) / static_cast<double>(count) : 0.0; }
};

struct BenchmarkReport {
    AnnotateConfig config;
    std::size_t samples = 0;
    double accuracy = 0.0;
    std::map<std::string, ProvenanceStats> by_provenance;
    std::size_t human_labels = 0;
    std::size_t budget_cap = 0;
    double budget_used = 0.0;  // human labels / L
    double seconds = 0.0;
    std::vector<StageRecord> stages;
    std::size_t outliers = 0;
    /// No LOF outlier received a label before the final pass.
    bool deferral_held = true;

    std::string summary() const {
        std::ostringstream out;
        char buf[160];
        std::snprintf(buf, sizeof buf, "samples=%zu accuracy=%.4f human=%zu (%.2f%% of L, cap %zu) time=%.2fs\n",
                      samples, accuracy, human_labels, 100.0 * budget_used, budget_cap, seconds);
        out << buf;
        out << "config: seed=" << config.seed << " budget=" << config.budget << " stages=" << config.stages
            << " gate=" << (config.gate_enabled ? std::to_string(config.gate) : std::string("off"))
            << " defer_outliers=" << config.defer_outliers << " lof_k=" << config.lof_k
            << " contamination=" << config.contamination << " lof_on_quantile=" << config.lof_on_quantile
            << " gbdt(depth=" << config.gbdt.max_depth << ",rounds=" << config.gbdt.n_rounds
            << ",lr=" << config.gbdt.learning_rate << ",lambda=" << config.gbdt.l2_lambda
            << ",mcw=" << config.gbdt.min_child_weight << ")\n";
        for (const auto& [name, s] : by_provenance) {
            std::snprintf(buf, sizeof buf, "  %-10s count=%zu accuracy=%.4f\n", name.c_str(), s.count, s.accuracy());
            out << buf;
        }
        for (const auto& st : stages) {
            std::snprintf(buf, sizeof buf, "  stage %d: trusted_before=%zu added=%zu unlabeled_after=%zu\n", st.stage,
                          st.trusted_before, st.added, st.unlabeled_after);
            out << buf;
        }
        return out.str();
    }
};

inline BenchmarkReport summarize_annotation(const AnnotationEngine& engine, std::span<const int> truth, double seconds) {
    const auto& s = engine.state();
    BenchmarkReport r;
    r.config = engine.config();
    r.samples = s.size;
    r.accuracy = annotation_accuracy(s, truth);
    for (std::size_t i = 0; i < s.size; ++i) {
        auto& p = r.by_provenance[to_string(s.provenance[i])];
        ++p.count;
        p.correct += s.labels[i] && *s.labels[i] == truth[i];
        if (is_outlier(engine.lof(), i)) {
            ++r.outliers;
            if (engine.config().defer_outliers && s.provenance[i] == Provenance::Propagated) r.deferral_held = false;
        }
    }
    r.human_labels = s.count(Provenance::Human);
    r.budget_cap = s.budgets.cap;
    r.budget_used = static_cast<double>(r.human_labels) / static_cast<double>(s.size);
    r.seconds = seconds;
    r.stages = s.history;
    return r;
}

/// Annotate `x` with a replay oracle over `truth`, bounded by the budget cap.
inline BenchmarkReport benchmark_annotation(std::shared_ptr<const RealMatrix> x, std::span<const int> truth,
                                            int n_classes, const AnnotateConfig& cfg,
                                            std::optional<AnnotationEngine>* engine_out = nullptr) {
    const auto start = std::chrono::steady_clock::now();
    ReplayOracle oracle(std::vector<int>(truth.begin(), truth.end()), compute_budgets(x->rows(), cfg.budget).cap);
    AnnotationEngine engine = annotate(std::move(x), n_classes, oracle, cfg);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    BenchmarkReport r = summarize_annotation(engine, truth, seconds);
    if (engine_out) engine_out->emplace(std::move(engine));
    return r;
}

// ---------------------------------------------------------------------------
// classifier evaluation

struct EvaluationReport {
    std::vector<std::string> class_names;
    double accuracy = 0.0;
    double knn_accuracy = 0.0;
    std::vector<double> per_class_accuracy;  // NaN for classes absent from the test folds
    Matrix<std::size_t> confusion;           // rows: true class, columns: predicted
    std::vector<std::string> warnings;

    std::string confusion_csv() const {
        std::ostringstream out;
        out << "true\\predicted";
        for (const auto& n : class_names) out << ',' << n;
        out << '\n';
        for (std::size_t r = 0; r < confusion.rows(); ++r) {
            out << class_names[r];
            for (std::size_t c = 0; c < confusion.cols(); ++c) out << ',' << confusion(r, c);
            out << '\n';
        }
        return out.str();
    }
};

/// Train on `train_folds`, test on `test_folds`; reports the GBDT and a k=5
/// Euclidean kNN baseline (both on quantile-normalised features).
inline EvaluationReport evaluate_classifier(const LabeledData& data, const std::set<int>& train_folds,
                                            const std::set<int>& test_folds, const GbdtParams& params = {},
                                            unsigned threads = default_thread_count()) {
    require(!train_folds.empty() && !test_folds.empty(), "train and test fold sets must be non-empty");
    for (int f : train_folds) require(!test_folds.contains(f), "fold " + std::to_string(f) + " is in both sets");
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (train_folds.contains(data.folds[i])) train.push_back(i);
        if (test_folds.contains(data.folds[i])) test.push_back(i);
    }
    require(!train.empty(), "no samples in the training folds");
    require(!test.empty(), "no samples in the test folds");

    EvaluationReport r;
    r.class_names = data.class_names;
    const std::size_t n_classes = data.class_names.size();
    const auto y_train = take(data.y, train);
    const auto y_test = take(data.y, test);
    std::set<int> seen(y_train.begin(), y_train.end());
    for (std::size_t c = 0; c < n_classes; ++c)
        if (!seen.contains(static_cast<int>(c)))
            r.warnings.push_back("class '" + data.class_names[c] + "' is absent from the training folds");

    const RealMatrix x_train = gather_rows(data.x, train);
    const RealMatrix x_test = gather_rows(data.x, test);
    const auto clf = QuantileGbdt::train(x_train, y_train, params, threads);
    const auto predicted = clf.predict(x_test);
    r.accuracy = accuracy_of(predicted, y_test);
    r.knn_accuracy = accuracy_of(knn_predict(clf.quantiles.apply(x_train), y_train, clf.quantiles.apply(x_test)), y_test);

    r.confusion = Matrix<std::size_t>(n_classes, n_classes);
    for (std::size_t i = 0; i < test.size(); ++i)
        ++r.confusion(static_cast<std::size_t>(y_test[i]), static_cast<std::size_t>(predicted[i]));
    r.per_class_accuracy.assign(n_classes, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t c = 0; c < n_classes; ++c) {
        std::size_t total = 0;
        for (std::size_t p = 0; p < n_classes; ++p) total += r.confusion(c, p);
        if (total) r.per_class_accuracy[c] = static_cast<double>(r.confusion(c, c)) / static_cast<double>(total);
    }
    return r;
}

// ---------------------------------------------------------------------------
// synthetic data

struct BlobSpec {
    std::size_t samples = 2000;
    std::size_t classes = 10;
    std::size_t dimension = 50;
    /// Distance between any two class centres, in units of the per-axis sigma.
    double separation = 6.0;
    double sigma = 1.0;
    /// Fraction of samples whose ground-truth label is redrawn uniformly.
    double label_noise = 0.0;
    std::uint64_t seed = 0;
};

struct SyntheticData {
    RealMatrix x;
    std::vector<int> y;
};

/// Isotropic Gaussian blobs. Class c is centred at (separation * sigma / sqrt 2) e_c,
/// so every pair of centres is `separation` sigmas apart. Classes are balanced
/// and interleaved (sample i draws from class i mod classes).
inline SyntheticData generate_blobs(const BlobSpec& spec) {
    require(spec.classes >= 2, "blobs need at least 2 classes");
    require(spec.dimension >= spec.classes, "blob dimension must be at least the class count");
    require(spec.samples >= spec.classes, "fewer samples than classes");
    require(spec.sigma > 0.0 && spec.separation >= 0.0, "invalid blob geometry");
    require(spec.label_noise >= 0.0 && spec.label_noise <= 1.0, "label_noise must lie in [0, 1]");
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> g(0.0, spec.sigma);
    const double offset = spec.separation * spec.sigma / std::numbers::sqrt2;
    SyntheticData d{RealMatrix(spec.samples, spec.dimension), std::vector<int>(spec.samples)};
    for (std::size_t i = 0; i < spec.samples; ++i) {
        const std::size_t c = i % spec.classes;
        d.y[i] = static_cast<int>(c);
        for (std::size_t k = 0; k < spec.dimension; ++k) d.x(i, k) = g(rng) + (k == c ? offset : 0.0);
    }
    if (spec.label_noise > 0.0) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (std::size_t i = 0; i < spec.samples; ++i)
            if (u(rng) < spec.label_noise) d.y[i] = static_cast<int>(detail::uniform_below(rng, spec.classes));
    }
    return d;
}

struct SynthAudioSpec {
    std::size_t clips_per_class = 10;
    std::size_t classes = 4;
    int folds = 2;
    double seconds = 2.0;
    int sample_rate = kTargetSampleRate;
    std::uint64_t seed = 0;
};

/// Synthesize one clip of class c: even classes are harmonic tones at distinct
/// pitches, classes 1 mod 4 are band-limited noise bursts and classes 3 mod 4
/// are click trains at distinct rates. Every clip gets random gain, jitter and
/// a low noise floor.
inline std::vector<double> synth_clip(std::size_t cls, const SynthAudioSpec& spec, std::mt19937_64& rng) {
    const auto n = static_cast<std::size_t>(std::llround(spec.seconds * spec.sample_rate));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> s(n, 0.0);
    const double gain = 0.2 + 0.3 * u(rng);
    const double rate = spec.sample_rate;
    if (cls % 2 == 0) {
        const double f0 = 110.0 * std::exp2(static_cast<double>(cls) / 2.0 * 7.0 / 12.0) * (1.0 + 0.01 * g(rng));
        const double phase = 2.0 * std::numbers::pi * u(rng);
        for (std::size_t i = 0; i < n; ++i) {
            const double t = static_cast<double>(i) / rate;
            double v = 0.0;
            for (int h = 1; h <= 4; ++h) v += std::sin(2.0 * std::numbers::pi * f0 * h * t + phase) / h;
            s[i] = 0.5 * v;
        }
    } else if (cls % 4 == 1) {
        // one-pole smoothed noise; the pole sets the spectral tilt per class
        const double pole = 0.3 + 0.6 * static_cast<double>(cls % 8) / 8.0;
        double y = 0.0;
        const double period = 0.25 + 0.1 * static_cast<double>(cls / 4);
        for (std::size_t i = 0; i < n; ++i) {
            y = pole * y + (1.0 - pole) * g(rng);
            const double t = std::fmod(static_cast<double>(i) / rate, period);
            s[i] = 2.0 * y * std::exp(-t / (0.3 * period));
        }
    } else {
        const double bpm = 80.0 + 30.0 * static_cast<double>(cls / 4) + 5.0 * g(rng);
        const double click_f = 2000.0 + 500.0 * static_cast<double>(cls / 4);
        const auto click_len = static_cast<std::size_t>(0.03 * rate);
        for (double t = 0.05 * u(rng); t < spec.seconds; t += 60.0 / bpm) {
            const auto i0 = static_cast<std::size_t>(t * rate);
            for (std::size_t k = 0; k < click_len && i0 + k < n; ++k)
                s[i0 + k] += std::exp(-static_cast<double>(k) / (0.005 * rate)) *
                             std::sin(2.0 * std::numbers::pi * click_f * static_cast<double>(k) / rate);
        }
    }
    for (double& v : s) v = std::clamp(gain * v + 0.002 * g(rng), -1.0, 1.0);
    return s;
}

/// Write a synthetic dataset in the UrbanSound8K layout: dir/fold{N}/*.wav plus
/// dir/metadata.csv. Returns the metadata path.
inline std::filesystem::path write_synthetic_audio(const std::filesystem::path& dir, const SynthAudioSpec& spec) {
    require(spec.classes >= 2 && spec.classes <= 26, "synthetic audio supports 2..26 classes");
    require(spec.folds >= 1 && spec.clips_per_class >= 1, "need at least one fold and one clip per class");
    std::mt19937_64 rng(spec.seed);
    const auto metadata = dir / "metadata.csv";
    std::filesystem::create_directories(dir);
    std::ofstream csv(metadata);
    if (!csv) throw IoError("cannot write " + metadata.string());
    csv << "slice_file_name,fsID,start,end,salience,fold,classID,class\n";
    for (std::size_t k = 0; k < spec.clips_per_class; ++k)
        for (std::size_t c = 0; c < spec.classes; ++c) {
            const int fold = static_cast<int>(k % static_cast<std::size_t>(spec.folds)) + 1;
            const std::string name = std::to_string(1000 + k) + "-" + std::to_string(c) + "-0-0.wav";
            const auto fold_dir = dir / ("fold" + std::to_string(fold));
            std::filesystem::create_directories(fold_dir);
            write_wav(fold_dir / name, synth_clip(c, spec, rng), spec.sample_rate);
            csv << name << ',' << 1000 + k << ",0," << spec.seconds << ",1," << fold << ',' << c << ",synth_"
                << static_cast<char>('a' + c) << '\n';
        }
    if (!csv) throw IoError("failed writing " + metadata.string());
    return metadata;
}

} // namespace face
