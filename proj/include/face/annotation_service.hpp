#pragma once

/// JSON HTTP front end for annotation sessions.
///
/// SessionManager owns the sessions and implements every operation without
/// touching HTTP, so it can be driven directly from code. AnnotationServer maps
/// the operations onto routes:
///
///   POST /sessions                 {dataset_dir, class_names, config?, reference_labels?}
///   GET  /sessions                 list of session ids
///   GET  /sessions/{id}/queries    pending batch
///   POST /sessions/{id}/labels     {answers: [{sample_id, class}]}
///   GET  /sessions/{id}/status     phase, stage, histogram, budget ledger, accuracy
///   GET  /sessions/{id}/export     annotation report (text/csv)
///   GET  /audio/{session}/{sample} original WAV bytes
///
/// With a state directory every session is snapshotted after each accepted
/// batch as its creation request plus the answer log; a new manager replays
/// the snapshots, which rebuilds identical state because annotation is
/// deterministic given features, answers and seed.

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "face/annotator.hpp"
#include "face/audio_io.hpp"
#include "face/error.hpp"
#include "face/feature_pipeline.hpp"
#include "face/harness.hpp"

namespace face {

using Json = nlohmann::json;

/// Raised for an unknown session or sample; maps to HTTP 404.
class NotFoundError : public Error {
public:
    using Error::Error;
};

struct ServiceOptions {
    /// Relative dataset_dir values are resolved against this directory.
    std::filesystem::path data_root;
    /// Session snapshots live here; empty disables persistence.
    std::filesystem::path state_dir;
    /// Feature caches live here, one per dataset and selection; empty disables caching.
    std::filesystem::path cache_dir;
    /// Served at "/" when set (the web console build).
    std::filesystem::path static_dir;
    unsigned threads = default_thread_count();
};

namespace detail {

template <class T>
T json_value(const Json& obj, const char* key, T fallback) {
    if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const Json::exception&) {
        throw ValidationError(std::string("config field '") + key + "' has the wrong type");
    }
}

inline std::string percent_encode(const std::string& s) {
    static const char* hex = "0123456789ABCDEF";
    std::string out;
    for (unsigned char c : s) {
        if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
            out += static_cast<char>(c);
        } else {
            out += '%';
            out += hex[c >> 4];
            out += hex[c & 15];
        }
    }
    return out;
}

inline void write_file_atomically(const std::filesystem::path& path, const std::string& text) {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write " + tmp.string());
        f << text;
        if (!f) throw IoError("write failed: " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot replace " + path.string() + ": " + ec.message());
}

} // namespace detail

/// Annotation settings accepted in a create request. Unknown keys are rejected.
inline AnnotateConfig annotate_config_from_json(const Json& j) {
    AnnotateConfig cfg;
    cfg.lof_on_quantile = true;
    if (j.is_null()) return cfg;
    require(j.is_object(), "config must be a JSON object");
    static const std::set<std::string> known = {"budget",  "stages",        "gate",     "gate_enabled",  "defer_outliers",
                                                "lof_k",   "contamination", "seed",     "confidence",    "max_depth",
                                                "n_rounds", "learning_rate", "l2_lambda", "min_child_weight", "selection"};
    for (const auto& [key, _] : j.items())
        if (!known.contains(key)) throw ValidationError("unknown config field '" + key + "'");
    cfg.budget = detail::json_value(j, "budget", cfg.budget);
    cfg.stages = detail::json_value(j, "stages", cfg.stages);
    cfg.gate = detail::json_value(j, "gate", cfg.gate);
    cfg.gate_enabled = detail::json_value(j, "gate_enabled", cfg.gate_enabled);
    cfg.defer_outliers = detail::json_value(j, "defer_outliers", cfg.defer_outliers);
    cfg.lof_k = detail::json_value(j, "lof_k", cfg.lof_k);
    cfg.contamination = detail::json_value(j, "contamination", cfg.contamination);
    cfg.seed = detail::json_value(j, "seed", cfg.seed);
    const auto mode = detail::json_value<std::string>(j, "confidence", "raw");
    require(mode == "raw" || mode == "normalized", "confidence must be 'raw' or 'normalized'");
    cfg.confidence = mode == "raw" ? ConfidenceMode::Raw : ConfidenceMode::Normalized;
    cfg.gbdt.max_depth = detail::json_value(j, "max_depth", cfg.gbdt.max_depth);
    cfg.gbdt.n_rounds = detail::json_value(j, "n_rounds", cfg.gbdt.n_rounds);
    cfg.gbdt.learning_rate = detail::json_value(j, "learning_rate", cfg.gbdt.learning_rate);
    cfg.gbdt.l2_lambda = detail::json_value(j, "l2_lambda", cfg.gbdt.l2_lambda);
    cfg.gbdt.min_child_weight = detail::json_value(j, "min_child_weight", cfg.gbdt.min_child_weight);
    return cfg;
}

/// Reference labels as a {sample_id: class} object, or the path of a CSV whose
/// first two columns are sample id and class name (header row required).
inline std::map<std::string, std::string> reference_labels_from_json(const Json& j,
                                                                     const std::filesystem::path& base) {
    std::map<std::string, std::string> out;
    if (j.is_null()) return out;
    if (j.is_object()) {
        for (const auto& [id, cls] : j.items()) {
            require(cls.is_string(), "reference label for '" + id + "' must be a string");
            out[id] = cls.get<std::string>();
        }
        return out;
    }
    require(j.is_string(), "reference_labels must be an object or a CSV path");
    std::filesystem::path path = j.get<std::string>();
    if (path.is_relative()) path = base / path;
    std::ifstream f(path);
    if (!f) throw IoError("cannot open reference labels " + path.string());
    std::string line;
    std::getline(f, line);
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = detail::split_csv_line(line);
        require(fields.size() >= 2, "reference labels: malformed row '" + line + "'");
        out[fields[0]] = fields[1];
    }
    return out;
}

/// One annotation session over a directory of clips.
class Session {
public:
    Session(std::string id, Json request, const ServiceOptions& opts) : id_(std::move(id)), request_(std::move(request)) {
        require(request_.is_object(), "request body must be a JSON object");
        require(request_.contains("dataset_dir") && request_.at("dataset_dir").is_string(), "dataset_dir is required");
        require(request_.contains("class_names") && request_.at("class_names").is_array(),
                "class_names must be a list of strings");
        for (const auto& c : request_.at("class_names")) {
            require(c.is_string() && !c.get<std::string>().empty(), "class_names must be non-empty strings");
            const auto name = c.get<std::string>();
            require(!class_index_.contains(name), "class name '" + name + "' is listed twice");
            class_index_[name] = static_cast<int>(class_names_.size());
            class_names_.push_back(name);
        }
        require(class_names_.size() >= 2, "class_names needs at least 2 classes");

        const Json config = request_.value("config", Json());
        AnnotateConfig cfg = annotate_config_from_json(config);
        cfg.threads = opts.threads;
        const auto selection =
            config.is_object() && config.contains("selection")
                ? parse_selection(detail::json_value<std::string>(config, "selection", ""))
                : default_selection();

        dataset_dir_ = request_.at("dataset_dir").get<std::string>();
        if (dataset_dir_.is_relative() && !opts.data_root.empty()) dataset_dir_ = opts.data_root / dataset_dir_;
        const DatasetManifest manifest = scan_audio_dir(dataset_dir_);
        require(manifest.size() >= 40,
                "too few clips: " + std::to_string(manifest.size()) + " found, at least 40 required");

        std::filesystem::path cache;
        if (!opts.cache_dir.empty()) {
            std::filesystem::create_directories(opts.cache_dir);
            const auto key = std::hash<std::string>{}(std::filesystem::absolute(dataset_dir_).lexically_normal().string() +
                                                      "|" + selection_to_string(selection));
            char name[40];
            std::snprintf(name, sizeof name, "features_%016zx.bin", key);
            cache = opts.cache_dir / name;
        }
        ExtractionResult extracted = extract_features(manifest, selection, cache, {}, opts.threads);
        require(extracted.table.size() >= 40, "too few decodable clips: " + std::to_string(extracted.table.size()));
        std::map<std::string, std::filesystem::path> paths;
        for (const auto& e : manifest.entries) paths[e.id] = e.path;
        ids_ = extracted.table.ids;
        for (std::size_t i = 0; i < ids_.size(); ++i) {
            index_[ids_[i]] = i;
            paths_.push_back(paths.at(ids_[i]));
        }

        for (const auto& [sample, cls] : reference_labels_from_json(request_.value("reference_labels", Json()), dataset_dir_)) {
            const auto s = index_.find(sample);
            const auto c = class_index_.find(cls);
            if (s == index_.end() || c == class_index_.end()) continue;
            reference_[s->second] = c->second;
        }

        auto features = std::make_shared<const RealMatrix>(std::move(extracted.table.values));
        engine_.emplace(std::move(features), static_cast<int>(class_names_.size()), cfg);
    }

    const std::string& id() const noexcept { return id_; }
    const std::vector<std::string>& class_names() const noexcept { return class_names_; }
    const std::vector<std::string>& sample_ids() const noexcept { return ids_; }
    const AnnotationEngine& engine() const { return *engine_; }

    std::filesystem::path audio_path(const std::string& sample_id) const {
        const auto it = index_.find(sample_id);
        if (it == index_.end()) throw NotFoundError("unknown sample '" + sample_id + "'");
        return paths_[it->second];
    }

    Json queries() {
        Json out = Json::array();
        for (std::size_t i : engine_->pending()) {
            out.push_back({{"sample_id", ids_[i]},
                           {"audio_url", "/audio/" + detail::percent_encode(id_) + "/" + detail::percent_encode(ids_[i])},
                           {"clip_duration", duration(i)}});
        }
        return out;
    }

    /// Validate and apply one batch of answers, then advance as far as possible.
    Json post_labels(const Json& body) {
        require(body.is_object() && body.contains("answers") && body.at("answers").is_array(),
                "request body must be {\"answers\": [{\"sample_id\", \"class\"}, ...]}");
        std::vector<LabelAnswer> answers;
        std::set<std::string> seen;
        const auto& pending = engine_->pending();
        for (const auto& a : body.at("answers")) {
            require(a.is_object() && a.contains("sample_id") && a.at("sample_id").is_string() && a.contains("class") &&
                        a.at("class").is_string(),
                    "each answer needs string fields sample_id and class");
            const auto sample = a.at("sample_id").get<std::string>();
            const auto cls = a.at("class").get<std::string>();
            const auto s = index_.find(sample);
            require(s != index_.end() && std::find(pending.begin(), pending.end(), s->second) != pending.end(),
                    "sample '" + sample + "' is not pending");
            require(seen.insert(sample).second, "sample '" + sample + "' is answered twice");
            const auto c = class_index_.find(cls);
            require(c != class_index_.end(), "unknown class '" + cls + "'");
            answers.push_back({s->second, c->second});
        }
        require(!answers.empty(), "answers must not be empty");
        engine_->validate(answers);
        log_.push_back(body.at("answers"));
        engine_->answer(answers);
        if (engine_->phase() == Phase::Staging) engine_->run_to_completion();
        return progress();
    }

    Json progress() const {
        const auto& st = engine_->state();
        return {{"phase", to_string(engine_->phase())},
                {"stage", st.stage},
                {"labeled_count", st.labeled_count()},
                {"budget_remaining", budget_remaining()}};
    }

    Json status() const {
        const auto& st = engine_->state();
        Json histogram = Json::object();
        for (Provenance p : {Provenance::None, Provenance::Human, Provenance::Propagated, Provenance::Forced})
            histogram[to_string(p)] = st.count(p);
        Json ledger = {
            {"cap", st.budgets.cap},
            {"used", st.used.total()},
            {"remaining", budget_remaining()},
            {"inlier", {{"allowed", st.budgets.inlier}, {"used", st.used.inlier}}},
            {"random", {{"allowed", st.budgets.random}, {"used", st.used.random}}},
            {"topup", {{"used", st.used.topup}}},
            {"query", {{"allowed", st.budgets.query}, {"used", st.used.query}}},
            {"extra", {{"allowed", st.budgets.extra}, {"used", st.used.extra}}},
        };
        Json out = {{"session_id", id_},
                    {"phase", to_string(engine_->phase())},
                    {"stage", st.stage},
                    {"total_stages", engine_->config().stages + 1},
                    {"size", st.size},
                    {"class_names", class_names_},
                    {"pending_count", engine_->pending().size()},
                    {"labeled_count", st.labeled_count()},
                    {"provenance_histogram", histogram},
                    {"budget_ledger", ledger},
                    {"accuracy", nullptr},
                    {"reference_count", reference_.size()}};
        if (!reference_.empty()) out["accuracy"] = reference_accuracy();
        return out;
    }

    /// Fraction of reference-labelled samples whose current label matches;
    /// unlabeled samples count as wrong.
    double reference_accuracy() const {
        const auto& st = engine_->state();
        std::size_t correct = 0;
        for (const auto& [i, label] : reference_)
            if (st.labels[i] && *st.labels[i] == label) ++correct;
        return static_cast<double>(correct) / static_cast<double>(reference_.size());
    }

    std::string export_report() const { return annotation_report(engine_->state(), ids_, class_names_); }

    Json snapshot() const { return {{"session_id", id_}, {"request", request_}, {"answers", log_}}; }

    std::mutex& mutex() noexcept { return mutex_; }

private:
    std::size_t budget_remaining() const {
        const auto& st = engine_->state();
        const std::size_t allowed = st.budgets.cap + st.budgets.extra;
        return allowed > st.used.total() ? allowed - st.used.total() : 0;
    }

    double duration(std::size_t i) {
        if (const auto it = durations_.find(i); it != durations_.end()) return it->second;
        double d = 0.0;
        try {
            d = load_audio(paths_[i]).duration();
        } catch (const Error&) {
        }
        durations_[i] = d;
        return d;
    }

    std::string id_;
    Json request_;
    std::filesystem::path dataset_dir_;
    std::vector<std::string> class_names_;
    std::map<std::string, int> class_index_;
    std::vector<std::string> ids_;
    std::map<std::string, std::size_t> index_;
    std::vector<std::filesystem::path> paths_;
    std::map<std::size_t, int> reference_;
    std::map<std::size_t, double> durations_;
    std::optional<AnnotationEngine> engine_;
    Json log_ = Json::array();
    std::mutex mutex_;
};

class SessionManager {
public:
    explicit SessionManager(ServiceOptions opts = {}) : opts_(std::move(opts)) {
        if (opts_.state_dir.empty()) return;
        std::filesystem::create_directories(opts_.state_dir);
        std::vector<std::filesystem::path> files;
        for (const auto& e : std::filesystem::directory_iterator(opts_.state_dir))
            if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) restore(f);
    }

    const ServiceOptions& options() const noexcept { return opts_; }

    /// Create a session and return its id.
    std::string create(const Json& request) {
        const std::string id = "s" + std::to_string(next_id_.fetch_add(1));
        auto session = std::make_shared<Session>(id, request, opts_);
        persist(*session);
        std::unique_lock lock(map_mutex_);
        sessions_[id] = session;
        return id;
    }

    std::vector<std::string> list() const {
        std::shared_lock lock(map_mutex_);
        std::vector<std::string> out;
        for (const auto& [id, _] : sessions_) out.push_back(id);
        return out;
    }

    Json queries(const std::string& id) {
        auto s = find(id);
        std::lock_guard lock(s->mutex());
        return s->queries();
    }

    Json post_labels(const std::string& id, const Json& body) {
        auto s = find(id);
        std::lock_guard lock(s->mutex());
        Json out = s->post_labels(body);
        persist(*s);
        return out;
    }

    Json status(const std::string& id) {
        auto s = find(id);
        std::lock_guard lock(s->mutex());
        return s->status();
    }

    std::string export_report(const std::string& id) {
        auto s = find(id);
        std::lock_guard lock(s->mutex());
        return s->export_report();
    }

    std::filesystem::path audio_path(const std::string& id, const std::string& sample_id) {
        auto s = find(id);
        return s->audio_path(sample_id);
    }

    /// Direct access for callers that hold no other lock on the session.
    std::shared_ptr<Session> find(const std::string& id) const {
        std::shared_lock lock(map_mutex_);
        const auto it = sessions_.find(id);
        if (it == sessions_.end()) throw NotFoundError("unknown session '" + id + "'");
        return it->second;
    }

private:
    void persist(const Session& s) const {
        if (opts_.state_dir.empty()) return;
        detail::write_file_atomically(opts_.state_dir / (s.id() + ".json"), s.snapshot().dump(2));
    }

    void restore(const std::filesystem::path& file) {
        std::ifstream f(file);
        Json snap;
        try {
            snap = Json::parse(f);
        } catch (const Json::exception& e) {
            throw IoError("corrupt session snapshot " + file.string() + ": " + e.what());
        }
        const auto id = snap.at("session_id").get<std::string>();
        auto session = std::make_shared<Session>(id, snap.at("request"), opts_);
        for (const auto& batch : snap.at("answers")) session->post_labels({{"answers", batch}});
        sessions_[id] = session;
        if (id.size() > 1 && id[0] == 's') {
            const auto n = std::strtoull(id.c_str() + 1, nullptr, 10);
            if (n >= next_id_) next_id_ = n + 1;
        }
    }

    ServiceOptions opts_;
    mutable std::shared_mutex map_mutex_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::atomic<std::uint64_t> next_id_{1};
};

/// HTTP binding of a SessionManager.
class AnnotationServer {
public:
    explicit AnnotationServer(SessionManager& manager) : manager_(manager) { routes(); }

    httplib::Server& http() noexcept { return server_; }

    /// Bind to `port` (0 picks a free port) and return the bound port.
    int bind(const std::string& host, int port) {
        const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
        if (bound < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
        return bound;
    }

    /// Serve until stop() is called.
    void listen_after_bind() { server_.listen_after_bind(); }
    void stop() { server_.stop(); }
    bool running() const { return server_.is_running(); }

private:
    template <class F>
    auto guarded(F f) {
        return [f](const httplib::Request& req, httplib::Response& res) {
            res.set_header("Access-Control-Allow-Origin", "*");
            try {
                f(req, res);
            } catch (const NotFoundError& e) {
                fail(res, 404, e.what());
            } catch (const Json::exception& e) {
                fail(res, 400, std::string("malformed JSON: ") + e.what());
            } catch (const ValidationError& e) {
                fail(res, 400, e.what());
            } catch (const IoError& e) {
                fail(res, 400, e.what());
            } catch (const std::exception& e) {
                fail(res, 500, e.what());
            }
        };
    }

    static void fail(httplib::Response& res, int status, const std::string& message) {
        res.status = status;
        res.set_content(Json{{"error", message}}.dump(), "application/json");
    }

    static void reply(httplib::Response& res, const Json& body, int status = 200) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    void routes() {
        auto& m = manager_;
        if (!m.options().static_dir.empty()) server_.set_mount_point("/", m.options().static_dir.string());

        server_.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
            res.set_header("Access-Control-Allow-Origin", "*");
            res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
            res.set_header("Access-Control-Allow-Headers", "Content-Type");
            res.status = 204;
        });
        server_.Post("/sessions", guarded([&m](const httplib::Request& req, httplib::Response& res) {
                         reply(res, {{"session_id", m.create(Json::parse(req.body))}}, 201);
                     }));
        server_.Get("/sessions", guarded([&m](const httplib::Request&, httplib::Response& res) { reply(res, m.list()); }));
        server_.Get(R"(/sessions/([^/]+)/queries)", guarded([&m](const httplib::Request& req, httplib::Response& res) {
                        reply(res, m.queries(req.matches[1]));
                    }));
        server_.Post(R"(/sessions/([^/]+)/labels)", guarded([&m](const httplib::Request& req, httplib::Response& res) {
                         reply(res, m.post_labels(req.matches[1], Json::parse(req.body)));
                     }));
        server_.Get(R"(/sessions/([^/]+)/status)", guarded([&m](const httplib::Request& req, httplib::Response& res) {
                        reply(res, m.status(req.matches[1]));
                    }));
        server_.Get(R"(/sessions/([^/]+)/export)", guarded([&m](const httplib::Request& req, httplib::Response& res) {
                        const std::string id = req.matches[1];
                        res.set_header("Content-Disposition", "attachment; filename=\"" + id + "_labels.csv\"");
                        res.set_content(m.export_report(id), "text/csv");
                    }));
        server_.Get(R"(/audio/([^/]+)/(.+))", guarded([&m](const httplib::Request& req, httplib::Response& res) {
                        const auto bytes = read_file_bytes(m.audio_path(req.matches[1], req.matches[2]));
                        res.set_content(std::string(bytes.begin(), bytes.end()), "audio/wav");
                    }));
    }

    SessionManager& manager_;
    httplib::Server server_;
};

} // namespace face
