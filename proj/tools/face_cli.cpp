// face: command-line workflows for the annotation engine.
//
// Exit status: 0 on success, 2 when input fails validation, 1 on I/O errors.

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "face/annotation_service.hpp"
#include "face/harness.hpp"

namespace {

using namespace face;

struct DataOptions {
    std::string dataset_dir;
    std::string metadata;
    std::string cache;
    std::string selection = "mfcc:128,contrast:6";
    unsigned threads = default_thread_count();
};

struct SyntheticOptions {
    bool enabled = false;
    BlobSpec blobs;
};

struct AnnotateOptions {
    std::uint64_t seed = 0;
    double budget = 0.15;
    double gate = 0.7;
    bool no_gate = false;
    int stages = 4;
    double contamination = 0.1;
    std::size_t lof_k = 1;
    bool keep_outliers = false;
    std::string report;
};

void add_data_flags(CLI::App* app, DataOptions& d, bool need_metadata = true) {
    app->add_option("--dataset-dir", d.dataset_dir, "Dataset root (fold1/ ... fold10/ for UrbanSound8K)");
    auto* m = app->add_option("--metadata", d.metadata, "Metadata CSV (slice_file_name, fold, classID, class)");
    if (need_metadata) m->needs(app->get_option("--dataset-dir"));
    app->add_option("--cache", d.cache, "Feature cache file");
    app->add_option("--selection", d.selection, "Feature selection, e.g. mfcc:128,contrast:6")->capture_default_str();
    app->add_option("--threads", d.threads, "Worker threads")->capture_default_str();
}

void add_synthetic_flags(CLI::App* app, SyntheticOptions& s) {
    app->add_flag("--synthetic", s.enabled, "Use Gaussian blobs instead of a dataset");
    app->add_option("--samples", s.blobs.samples, "Synthetic sample count")->capture_default_str();
    app->add_option("--classes", s.blobs.classes, "Synthetic class count")->capture_default_str();
    app->add_option("--dim", s.blobs.dimension, "Synthetic dimension")->capture_default_str();
    app->add_option("--separation", s.blobs.separation, "Centre distance in sigmas")->capture_default_str();
    app->add_option("--label-noise", s.blobs.label_noise, "Fraction of redrawn labels")->capture_default_str();
}

void add_annotate_flags(CLI::App* app, AnnotateOptions& a) {
    app->add_option("--seed", a.seed, "Random seed")->capture_default_str();
    app->add_option("--budget", a.budget, "Human labeling budget as a fraction of L")->capture_default_str();
    app->add_option("--gate", a.gate, "Confidence gate")->capture_default_str();
    app->add_flag("--no-gate", a.no_gate, "Accept every non-outlier prediction");
    app->add_option("--stages", a.stages, "Gated stages before the final pass")->capture_default_str();
    app->add_option("--contamination", a.contamination, "LOF contamination")->capture_default_str();
    app->add_option("--lof-k", a.lof_k, "LOF neighbour count")->capture_default_str();
    app->add_flag("--keep-outliers", a.keep_outliers, "Let stages label LOF outliers");
    app->add_option("--report", a.report, "Write the annotation report CSV here");
}

AnnotateConfig make_config(const AnnotateOptions& a, unsigned threads) {
    AnnotateConfig cfg;
    cfg.seed = a.seed;
    cfg.budget = a.budget;
    cfg.gate = a.gate;
    cfg.gate_enabled = !a.no_gate;
    cfg.stages = a.stages;
    cfg.contamination = a.contamination;
    cfg.lof_k = a.lof_k;
    cfg.defer_outliers = !a.keep_outliers;
    cfg.threads = threads;
    return cfg;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << text;
    if (!out) throw IoError("write failed: " + path);
}

DatasetManifest load_manifest(const DataOptions& d) {
    require(!d.dataset_dir.empty() && !d.metadata.empty(), "--dataset-dir and --metadata are required");
    std::vector<std::string> warnings;
    DatasetManifest m = ingest(d.dataset_dir, d.metadata, &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
    return m;
}

LabeledData load_labeled(const DataOptions& d) {
    const DatasetManifest m = load_manifest(d);
    const auto selection = parse_selection(d.selection);
    const auto result = extract_features(m, selection, d.cache, {}, d.threads);
    for (const auto& f : result.failures) std::cerr << "warning: skipped " << f << '\n';
    return join_labels(m, result.table);
}

struct AnnotationInput {
    std::shared_ptr<const RealMatrix> x;
    std::vector<int> y;
    std::vector<std::string> ids;
    std::vector<std::string> class_names;
    bool audio = false;
};

AnnotationInput load_annotation_input(const DataOptions& d, const SyntheticOptions& s, std::uint64_t seed) {
    AnnotationInput in;
    if (s.enabled) {
        BlobSpec spec = s.blobs;
        spec.seed = seed;
        SyntheticData data = generate_blobs(spec);
        in.x = std::make_shared<const RealMatrix>(std::move(data.x));
        in.y = std::move(data.y);
        for (std::size_t i = 0; i < in.y.size(); ++i) in.ids.push_back("blob" + std::to_string(i));
        for (std::size_t c = 0; c < spec.classes; ++c) in.class_names.push_back("class" + std::to_string(c));
        return in;
    }
    LabeledData data = load_labeled(d);
    in.x = std::make_shared<const RealMatrix>(std::move(data.x));
    in.y = std::move(data.y);
    in.ids = std::move(data.ids);
    in.class_names = std::move(data.class_names);
    in.audio = true;
    return in;
}

/// "1-9", "10" or "1,3,5".
std::set<int> parse_folds(const std::string& text) {
    std::set<int> out;
    std::stringstream ss(text);
    for (std::string part; std::getline(ss, part, ',');) {
        if (part.empty()) continue;
        const auto dash = part.find('-');
        if (dash == std::string::npos) {
            out.insert(detail::parse_int(part, "fold"));
            continue;
        }
        const int lo = detail::parse_int(part.substr(0, dash), "fold");
        const int hi = detail::parse_int(part.substr(dash + 1), "fold");
        require(lo <= hi, "fold range '" + part + "' is empty");
        for (int f = lo; f <= hi; ++f) out.insert(f);
    }
    require(!out.empty(), "fold list '" + text + "' is empty");
    return out;
}

std::atomic<AnnotationServer*> g_server{nullptr};

void on_signal(int) {
    if (auto* s = g_server.load()) s->stop();
}

int run(int argc, char** argv) {
    CLI::App app{"Context-aware audio annotation engine"};
    app.require_subcommand(1);

    DataOptions data;
    SyntheticOptions synth;
    AnnotateOptions ann;

    auto* ingest_cmd = app.add_subcommand("ingest", "Resolve a metadata CSV against the dataset directory");
    add_data_flags(ingest_cmd, data);
    std::string manifest_out;
    ingest_cmd->add_option("--out", manifest_out, "Write the resolved manifest CSV here");

    auto* features_cmd = app.add_subcommand("features", "Extract feature vectors into a cache file");
    add_data_flags(features_cmd, data);

    auto* ablate_cmd = app.add_subcommand("ablate", "Greedy feature-set search");
    add_data_flags(ablate_cmd, data);
    std::string candidates = "mfcc:128,contrast:6,chroma,tempogram,zcr,centroid,bandwidth,rolloff";
    double validation = 0.1;
    std::string cache_dir;
    std::string table_out;
    std::string train_folds_text;
    ablate_cmd->add_option("--candidates", candidates, "Candidate features")->capture_default_str();
    ablate_cmd->add_option("--validation", validation, "Validation fraction")->capture_default_str();
    ablate_cmd->add_option("--cache-dir", cache_dir, "Directory for per-candidate caches");
    ablate_cmd->add_option("--folds", train_folds_text, "Restrict the search to these folds, e.g. 1-9");
    ablate_cmd->add_option("--seed", ann.seed, "Split seed")->capture_default_str();
    ablate_cmd->add_option("--out", table_out, "Write the phase table CSV here");

    auto* bench_cmd = app.add_subcommand("annotate-bench", "Annotate with a ground-truth replay oracle");
    add_data_flags(bench_cmd, data, true);
    add_synthetic_flags(bench_cmd, synth);
    add_annotate_flags(bench_cmd, ann);

    auto* extra_cmd = app.add_subcommand("query-extra", "Annotate, then spend an extra budget on the least confident");
    add_data_flags(extra_cmd, data, true);
    add_synthetic_flags(extra_cmd, synth);
    add_annotate_flags(extra_cmd, ann);
    double extra_fraction = 0.009;
    extra_cmd->add_option("--fraction", extra_fraction, "Extra budget as a fraction of L")->capture_default_str();

    auto* eval_cmd = app.add_subcommand("evaluate", "Train on some folds, test on others");
    add_data_flags(eval_cmd, data);
    std::string train_folds = "1-9", test_folds = "10", confusion_out;
    eval_cmd->add_option("--train-folds", train_folds, "Training folds")->capture_default_str();
    eval_cmd->add_option("--test-folds", test_folds, "Test folds")->capture_default_str();
    eval_cmd->add_option("--confusion", confusion_out, "Write the confusion matrix CSV here");

    auto* serve_cmd = app.add_subcommand("serve", "Run the annotation HTTP service");
    ServiceOptions service;
    std::string host = "0.0.0.0";
    int port = 8080;
    if (const char* env = std::getenv("FACE_PORT")) port = std::atoi(env);
    if (const char* env = std::getenv("FACE_DATA_DIR")) service.data_root = env;
    serve_cmd->add_option("--port", port, "Listen port (env FACE_PORT)")->capture_default_str();
    serve_cmd->add_option("--host", host, "Listen address")->capture_default_str();
    serve_cmd->add_option("--dataset-dir", service.data_root, "Root for relative dataset_dir values (env FACE_DATA_DIR)");
    serve_cmd->add_option("--state-dir", service.state_dir, "Session snapshot directory");
    serve_cmd->add_option("--cache", service.cache_dir, "Feature cache directory");
    serve_cmd->add_option("--static-dir", service.static_dir, "Static files served at /");

    auto* synth_cmd = app.add_subcommand("synth-audio", "Write a synthetic dataset in the UrbanSound8K layout");
    SynthAudioSpec audio_spec;
    std::string synth_out;
    synth_cmd->add_option("--out", synth_out, "Output directory")->required();
    synth_cmd->add_option("--clips-per-class", audio_spec.clips_per_class)->capture_default_str();
    synth_cmd->add_option("--classes", audio_spec.classes)->capture_default_str();
    synth_cmd->add_option("--folds", audio_spec.folds)->capture_default_str();
    synth_cmd->add_option("--seconds", audio_spec.seconds)->capture_default_str();
    synth_cmd->add_option("--seed", audio_spec.seed)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    if (*ingest_cmd) {
        const DatasetManifest m = load_manifest(data);
        std::map<int, std::size_t> per_fold;
        for (const auto& e : m.entries) ++per_fold[e.fold];
        std::cout << "entries: " << m.size() << "\nclasses: " << m.class_names.size() << '\n';
        for (const auto& [fold, n] : per_fold) std::cout << "  fold" << fold << ": " << n << '\n';
        if (!manifest_out.empty()) {
            std::ostringstream csv;
            csv << "id,path,label,class,fold\n";
            for (const auto& e : m.entries)
                csv << e.id << ',' << e.path.string() << ',' << e.label << ',' << m.class_names[static_cast<std::size_t>(e.label)]
                    << ',' << e.fold << '\n';
            write_text(manifest_out, csv.str());
        }
    } else if (*features_cmd) {
        require(!data.cache.empty(), "--cache is required");
        const DatasetManifest m = load_manifest(data);
        const auto selection = parse_selection(data.selection);
        const auto start = std::chrono::steady_clock::now();
        const auto result = extract_features(m, selection, data.cache, {}, data.threads);
        for (const auto& f : result.failures) std::cerr << "warning: skipped " << f << '\n';
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::cout << "selection: " << selection_to_string(selection) << "\nvectors: " << result.table.size()
                  << "\ndimension: " << result.table.dimension() << "\nsource: " << (result.from_cache ? "cache" : "computed")
                  << "\nseconds: " << seconds << '\n';
    } else if (*ablate_cmd) {
        DatasetManifest m = load_manifest(data);
        if (!train_folds_text.empty()) {
            const auto keep = parse_folds(train_folds_text);
            std::erase_if(m.entries, [&](const DatasetEntry& e) { return !keep.contains(e.fold); });
            require(!m.entries.empty(), "no entries in folds " + train_folds_text);
        }
        const auto specs = parse_selection(candidates);
        std::vector<std::string> names;
        for (const auto& s : specs) names.push_back(to_string(s));
        std::vector<int> y;
        const auto blocks = extract_candidate_blocks(m, specs, cache_dir, &y, {}, data.threads);
        const auto report = ablation_search(blocks, names, y, validation, {}, ann.seed, data.threads);
        std::cout << report.table() << "best: " << report.best_name() << " accuracy=" << report.best.accuracy
                  << "\nseed: " << ann.seed << " validation_fraction: " << validation << '\n';
        if (!table_out.empty()) write_text(table_out, report.table());
    } else if (*bench_cmd || *extra_cmd) {
        const AnnotationInput in = load_annotation_input(data, synth, ann.seed);
        AnnotateConfig cfg = make_config(ann, data.threads);
        cfg.lof_on_quantile = in.audio;
        std::optional<AnnotationEngine> engine;
        const auto report =
            benchmark_annotation(in.x, in.y, static_cast<int>(in.class_names.size()), cfg, &engine);
        std::cout << report.summary();
        std::cout << "deferral_held: " << (report.deferral_held ? "yes" : "no") << '\n';
        if (*extra_cmd) {
            ReplayOracle oracle(in.y);
            const auto asked = engine->query_extra(oracle, extra_fraction);
            const double after = annotation_accuracy(engine->state(), in.y);
            std::printf("extra queries: %zu (%.2f%% of L)\naccuracy before=%.4f after=%.4f\n", asked.size(),
                        100.0 * extra_fraction, report.accuracy, after);
        }
        if (!ann.report.empty()) write_text(ann.report, annotation_report(engine->state(), in.ids, in.class_names));
    } else if (*eval_cmd) {
        const LabeledData d = load_labeled(data);
        const auto r = evaluate_classifier(d, parse_folds(train_folds), parse_folds(test_folds), {}, data.threads);
        for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
        std::printf("accuracy: %.4f\nknn_accuracy: %.4f\n", r.accuracy, r.knn_accuracy);
        for (std::size_t c = 0; c < r.class_names.size(); ++c)
            std::printf("  %-20s %.4f\n", r.class_names[c].c_str(), r.per_class_accuracy[c]);
        std::cout << r.confusion_csv();
        if (!confusion_out.empty()) write_text(confusion_out, r.confusion_csv());
    } else if (*serve_cmd) {
        service.threads = default_thread_count();
        SessionManager manager(service);
        AnnotationServer server(manager);
        const int bound = server.bind(host, port);
        g_server = &server;
        std::signal(SIGINT, on_signal);
        std::signal(SIGTERM, on_signal);
        std::cout << "listening on " << host << ':' << bound << std::endl;
        server.listen_after_bind();
        g_server = nullptr;
    } else if (*synth_cmd) {
        const auto metadata = write_synthetic_audio(synth_out, audio_spec);
        std::cout << "metadata: " << metadata.string() << '\n';
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const face::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
