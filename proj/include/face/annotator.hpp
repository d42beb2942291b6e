#pragma once

/// Context-aware active-learning annotation.
///
/// A session runs in three parts:
///   1. seeding: a human labels the tightest-neighbourhood inliers plus a uniform
///      random draw, a provisional model is trained on those, and the human then
///      labels the least-confident remaining samples;
///   2. stages: the model is retrained on the trusted set and confident
///      (score > gate), non-outlier predictions join it;
///   3. final pass: one more retrain, every sample still unlabeled (outliers
///      included) takes the model's prediction.
///
/// AnnotationEngine exposes this as a state machine so label requests can be
/// answered asynchronously; annotate() drives it with a synchronous Oracle.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "face/error.hpp"
#include "face/feature_pipeline.hpp"
#include "face/gbdt.hpp"
#include "face/lof.hpp"
#include "face/matrix.hpp"

namespace face {

enum class Provenance { None, Human, Propagated, Forced };

inline const char* to_string(Provenance p) {
    switch (p) {
    case Provenance::Human:
        return "human";
    case Provenance::Propagated:
        return "propagated";
    case Provenance::Forced:
        return "forced";
    default:
        return "none";
    }
}

struct AnnotateConfig {
    double budget = 0.15;  // fraction of L a human may label during seeding
    int stages = 4;        // confidence-gated stages before the final pass
    double gate = 0.7;     // strict: score must exceed this
    bool gate_enabled = true;
    bool defer_outliers = true;
    std::size_t lof_k = 1;
    double contamination = 0.1;
    /// Fit LOF on quantile-normalised features (map fitted on the whole,
    /// unlabeled pool) instead of the raw vectors.
    bool lof_on_quantile = false;
    /// Refit a QuantileMap on the trusted set before every training round.
    bool refit_quantile_map = true;
    ConfidenceMode confidence = ConfidenceMode::Raw;
    GbdtParams gbdt{};
    std::uint64_t seed = 0;
    unsigned threads = default_thread_count();
};

/// Seeding budgets, in samples. With the default 15% budget these are
/// floor(L/40) inliers, floor(3L/40) random draws and floor(L/20) queries.
struct Budgets {
    std::size_t inlier = 0;
    std::size_t random = 0;
    std::size_t query = 0;
    std::size_t extra = 0;  // granted later by query_extra
    std::size_t cap = 0;    // ceil(budget * L)

    std::size_t seeding() const noexcept { return inlier + random + query; }
};

inline Budgets compute_budgets(std::size_t n, double budget) {
    require(budget > 0.0 && budget <= 1.0, "budget must lie in (0, 1]");
    // budget in units of 1e-5 so the default 0.15 splits exactly into L/40, 3L/40, L/20
    const auto units = static_cast<std::uint64_t>(std::llround(budget * 1e5));
    const std::uint64_t l = n;
    Budgets b;
    b.inlier = static_cast<std::size_t>(l * units / 600000);
    b.random = static_cast<std::size_t>(l * units / 200000);
    b.query = static_cast<std::size_t>(l * units / 300000);
    b.cap = static_cast<std::size_t>((l * units + 99999) / 100000);
    return b;
}

struct BudgetUse {
    std::size_t inlier = 0;
    std::size_t random = 0;
    std::size_t topup = 0;  // extra random draws when seeding found < 2 classes
    std::size_t query = 0;
    std::size_t extra = 0;

    std::size_t total() const noexcept { return inlier + random + topup + query + extra; }
};

struct StageRecord {
    int stage = 0;
    std::size_t trusted_before = 0;
    std::size_t added = 0;
    std::size_t outliers_added = 0;
    std::size_t unlabeled_after = 0;
};

struct AnnotationState {
    std::size_t size = 0;  // L
    std::vector<std::optional<int>> labels;
    std::vector<Provenance> provenance;
    std::vector<double> score;         // model score when assigned; NaN for human/none
    std::vector<int> assigned_stage;   // 0 seeding, 1..stages, stages+1 final; -1 unassigned
    std::vector<std::size_t> trusted;  // T, in order of entry
    int stage = 0;
    Budgets budgets;
    BudgetUse used;
    std::uint64_t rng_seed = 0;
    std::vector<StageRecord> history;

    explicit AnnotationState(std::size_t n = 0)
        : size(n), labels(n), provenance(n, Provenance::None),
          score(n, std::numeric_limits<double>::quiet_NaN()), assigned_stage(n, -1) {}

    bool labeled(std::size_t i) const { return labels[i].has_value(); }

    std::size_t count(Provenance p) const {
        return static_cast<std::size_t>(std::count(provenance.begin(), provenance.end(), p));
    }

    std::size_t labeled_count() const { return size - count(Provenance::None); }
};

/// Answers label requests. Implementations must return one class per index.
class Oracle {
public:
    virtual ~Oracle() = default;
    virtual std::vector<int> ask(std::span<const std::size_t> indices) = 0;
};

/// Replays known labels; used as the simulated human in benchmarks.
class ReplayOracle : public Oracle {
public:
    explicit ReplayOracle(std::vector<int> truth, std::optional<std::size_t> limit = std::nullopt)
        : truth_(std::move(truth)), limit_(limit) {}

    std::vector<int> ask(std::span<const std::size_t> indices) override {
        if (limit_ && asked_.size() + indices.size() > *limit_) throw Error("oracle budget exhausted");
        std::vector<int> out;
        out.reserve(indices.size());
        for (std::size_t i : indices) {
            require(i < truth_.size(), "oracle asked for unknown sample");
            if (!asked_.insert(i).second) throw Error("oracle asked twice for sample " + std::to_string(i));
            out.push_back(truth_[i]);
        }
        return out;
    }

    std::size_t asked() const noexcept { return asked_.size(); }

private:
    std::vector<int> truth_;
    std::optional<std::size_t> limit_;
    std::set<std::size_t> asked_;
};

namespace detail {

/// Portable uniform integer in [0, bound) from a 64-bit engine (rejection sampling).
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t v;
    do v = rng();
    while (v >= limit);
    return v % bound;
}

/// `count` distinct elements of `pool`, uniformly, in draw order.
inline std::vector<std::size_t> sample_without_replacement(std::vector<std::size_t> pool, std::size_t count,
                                                           std::mt19937_64& rng) {
    count = std::min(count, pool.size());
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(uniform_below(rng, pool.size() - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(count);
    return pool;
}

} // namespace detail

/// A model trained on the trusted set, together with the normalisation applied
/// to its inputs.
struct Labeller {
    OvaModel model;
    std::optional<QuantileMap> quantiles;

    std::vector<PredictionResult> predict(const RealMatrix& features, std::span<const std::size_t> rows,
                                          ConfidenceMode mode) const {
        std::vector<PredictionResult> out(rows.size());
        std::vector<double> buf(features.cols());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const auto x = features.row(rows[r]);
            if (quantiles) {
                for (std::size_t d = 0; d < buf.size(); ++d) buf[d] = quantiles->transform(d, x[d]);
                out[r] = model.predict(buf, mode);
            } else {
                out[r] = model.predict(x, mode);
            }
        }
        return out;
    }
};

inline Labeller train_labeller(const RealMatrix& features, const AnnotationState& state, const AnnotateConfig& cfg) {
    std::vector<int> y;
    y.reserve(state.trusted.size());
    for (std::size_t i : state.trusted) y.push_back(*state.labels[i]);
    RealMatrix x = gather_rows(features, state.trusted);
    Labeller l;
    if (cfg.refit_quantile_map && x.rows() >= 2) {
        l.quantiles = QuantileMap::fit(x);
        x = l.quantiles->apply(x);
    }
    l.model = train_ova(x, y, cfg.gbdt, cfg.threads);
    return l;
}

inline std::size_t distinct_trusted_classes(const AnnotationState& state) {
    std::set<int> classes;
    for (std::size_t i : state.trusted) classes.insert(*state.labels[i]);
    return classes.size();
}

inline std::vector<std::size_t> unlabeled_indices(const AnnotationState& state) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < state.size; ++i)
        if (!state.labeled(i)) out.push_back(i);
    return out;
}

/// Whether a gated stage may adopt a prediction: outliers wait for the final
/// pass, and the score must strictly exceed the gate.
inline bool accepts_prediction(const AnnotateConfig& cfg, double score, bool outlier) {
    if (cfg.defer_outliers && outlier) return false;
    return !cfg.gate_enabled || score > cfg.gate;
}

/// One confidence-gated stage: train on T, label every unlabeled, non-outlier
/// sample whose score exceeds the gate, and add it to T.
inline Labeller run_stage(AnnotationState& state, const RealMatrix& features, const LofModel& lof,
                          const AnnotateConfig& cfg) {
    require(state.stage >= 0 && state.stage < cfg.stages, "run_stage: no gated stage left to run");
    require(distinct_trusted_classes(state) >= 2, "run_stage: trusted set must contain at least 2 classes");
    Labeller labeller = train_labeller(features, state, cfg);
    const int stage = state.stage + 1;
    StageRecord rec{stage, state.trusted.size(), 0, 0, 0};
    const auto pool = unlabeled_indices(state);
    const auto predictions = labeller.predict(features, pool, cfg.confidence);
    for (std::size_t r = 0; r < pool.size(); ++r) {
        const std::size_t j = pool[r];
        const bool outlier = is_outlier(lof, j);
        if (!accepts_prediction(cfg, predictions[r].score, outlier)) continue;
        state.labels[j] = predictions[r].label;
        state.provenance[j] = Provenance::Propagated;
        state.score[j] = predictions[r].score;
        state.assigned_stage[j] = stage;
        state.trusted.push_back(j);
        ++rec.added;
        if (outlier) ++rec.outliers_added;
    }
    state.stage = stage;
    rec.unlabeled_after = pool.size() - rec.added;
    state.history.push_back(rec);
    return labeller;
}

/// Final pass: retrain on T and assign a prediction to every remaining sample.
inline Labeller finalize(AnnotationState& state, const RealMatrix& features, const AnnotateConfig& cfg) {
    require(state.stage == cfg.stages, "finalize: gated stages are not complete");
    require(distinct_trusted_classes(state) >= 2, "finalize: trusted set must contain at least 2 classes");
    Labeller labeller = train_labeller(features, state, cfg);
    const int stage = cfg.stages + 1;
    StageRecord rec{stage, state.trusted.size(), 0, 0, 0};
    const auto pool = unlabeled_indices(state);
    const auto predictions = labeller.predict(features, pool, cfg.confidence);
    for (std::size_t r = 0; r < pool.size(); ++r) {
        const std::size_t j = pool[r];
        state.labels[j] = predictions[r].label;
        state.provenance[j] = Provenance::Forced;
        state.score[j] = predictions[r].score;
        state.assigned_stage[j] = stage;
        ++rec.added;
    }
    state.stage = stage;
    state.history.push_back(rec);
    return labeller;
}

enum class Phase {
    Seeding,   // inlier + random batch pending
    TopUp,     // extra random draws because seeding found a single class
    Querying,  // uncertainty batch pending
    Staging,   // seeding complete, gated stages not yet run
    Finalized,
};

inline const char* to_string(Phase p) {
    switch (p) {
    case Phase::Seeding:
    case Phase::TopUp:
    case Phase::Querying:
        return "seeding";
    case Phase::Staging:
        return "staging";
    default:
        return "finalized";
    }
}

struct LabelAnswer {
    std::size_t index;
    int label;
};

class AnnotationEngine {
public:
    AnnotationEngine(std::shared_ptr<const RealMatrix> features, int n_classes, AnnotateConfig cfg = {})
        : features_(std::move(features)), n_classes_(n_classes), cfg_(std::move(cfg)),
          state_(features_ ? features_->rows() : 0), rng_(cfg_.seed) {
        require(features_ != nullptr, "annotation needs a feature matrix");
        const std::size_t n = features_->rows();
        require(n >= 40, "annotation needs at least 40 samples, got " + std::to_string(n));
        require(n_classes_ >= 2, "annotation needs at least 2 classes");
        require(cfg_.stages >= 0, "stage count must be non-negative");
        state_.budgets = compute_budgets(n, cfg_.budget);
        state_.rng_seed = cfg_.seed;
        require(state_.budgets.inlier + state_.budgets.random >= 1, "labeling budget too small for this dataset");

        if (cfg_.lof_on_quantile) {
            const QuantileMap pool_map = QuantileMap::fit(*features_);
            lof_ = fit_lof(pool_map.apply(*features_), cfg_.lof_k, cfg_.contamination);
        } else {
            lof_ = fit_lof(*features_, cfg_.lof_k, cfg_.contamination);
        }

        const auto inliers = select_inliers(lof_, state_.budgets.inlier);
        std::vector<bool> taken(n, false);
        for (std::size_t i : inliers) taken[i] = true;
        std::vector<std::size_t> rest;
        for (std::size_t i = 0; i < n; ++i)
            if (!taken[i]) rest.push_back(i);
        const auto random = detail::sample_without_replacement(std::move(rest), state_.budgets.random, rng_);
        pending_ = inliers;
        pending_.insert(pending_.end(), random.begin(), random.end());
        inlier_seed_ = std::move(taken);
    }

    AnnotationEngine(const RealMatrix& features, int n_classes, AnnotateConfig cfg = {})
        : AnnotationEngine(std::make_shared<const RealMatrix>(features), n_classes, std::move(cfg)) {}

    Phase phase() const noexcept { return phase_; }
    const AnnotationState& state() const noexcept { return state_; }
    const LofModel& lof() const noexcept { return lof_; }
    const AnnotateConfig& config() const noexcept { return cfg_; }
    const RealMatrix& features() const noexcept { return *features_; }
    int class_count() const noexcept { return n_classes_; }
    /// Sample indices awaiting a human label, in request order.
    const std::vector<std::size_t>& pending() const noexcept { return pending_; }
    /// Model from the most recent training round, if any.
    const std::optional<Labeller>& labeller() const noexcept { return labeller_; }

    /// Check a batch of answers without applying it.
    void validate(std::span<const LabelAnswer> answers) const {
        std::set<std::size_t> seen;
        for (const auto& a : answers) {
            require(std::find(pending_.begin(), pending_.end(), a.index) != pending_.end(),
                    "sample " + std::to_string(a.index) + " is not pending");
            require(seen.insert(a.index).second, "sample " + std::to_string(a.index) + " answered twice");
            require(a.label >= 0 && a.label < n_classes_, "label " + std::to_string(a.label) + " is not a known class");
        }
    }

    /// Record human answers (all or part of the pending batch). When the batch
    /// empties, seeding advances automatically; the call returns once the engine
    /// needs more human input or seeding is complete.
    void answer(std::span<const LabelAnswer> answers) {
        validate(answers);
        for (const auto& a : answers) {
            const std::size_t idx = a.index;
            state_.labels[idx] = a.label;
            state_.provenance[idx] = Provenance::Human;
            state_.assigned_stage[idx] = 0;
            state_.trusted.push_back(idx);
            charge(idx);
            pending_.erase(std::find(pending_.begin(), pending_.end(), idx));
        }
        if (pending_.empty()) advance_seeding();
    }

    /// Run the gated stages and the final pass. Requires phase Staging.
    void run_to_completion() {
        require(phase_ == Phase::Staging, "annotation is not ready for staging");
        while (state_.stage < cfg_.stages) labeller_ = run_stage(state_, *features_, lof_, cfg_);
        labeller_ = face::finalize(state_, *features_, cfg_);
        phase_ = Phase::Finalized;
    }

    /// Ask the oracle about the `fraction * L` least-confident machine-labeled
    /// samples and overwrite their labels. Other labels are untouched; with
    /// `refit` the stored labeller is retrained on every label afterwards.
    std::vector<std::size_t> query_extra(Oracle& oracle, double fraction, bool refit = false) {
        require(phase_ == Phase::Finalized, "query_extra requires a finalized annotation");
        require(fraction >= 0.0 && fraction <= 1.0, "extra budget fraction must lie in [0, 1]");
        const auto count = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(state_.size) + 1e-9));
        std::vector<std::size_t> candidates;
        for (std::size_t i = 0; i < state_.size; ++i)
            if (state_.provenance[i] != Provenance::Human) candidates.push_back(i);
        std::stable_sort(candidates.begin(), candidates.end(),
                         [&](std::size_t a, std::size_t b) { return state_.score[a] < state_.score[b]; });
        candidates.resize(std::min(count, candidates.size()));
        if (candidates.empty()) return candidates;

        const auto answers = oracle.ask(candidates);
        require(answers.size() == candidates.size(), "oracle returned the wrong number of answers");
        for (int label : answers) require(label >= 0 && label < n_classes_, "oracle returned an unknown class");
        state_.budgets.extra += count;
        for (std::size_t r = 0; r < candidates.size(); ++r) {
            const std::size_t i = candidates[r];
            state_.labels[i] = answers[r];
            state_.provenance[i] = Provenance::Human;
            state_.score[i] = std::numeric_limits<double>::quiet_NaN();
            if (std::find(state_.trusted.begin(), state_.trusted.end(), i) == state_.trusted.end())
                state_.trusted.push_back(i);
            ++state_.used.extra;
        }
        if (refit) {
            AnnotationState all = state_;
            all.trusted.clear();
            for (std::size_t i = 0; i < all.size; ++i) all.trusted.push_back(i);
            labeller_ = train_labeller(*features_, all, cfg_);
        }
        return candidates;
    }

private:
    void charge(std::size_t idx) {
        switch (phase_) {
        case Phase::Seeding:
            if (inlier_seed_[idx])
                ++state_.used.inlier;
            else
                ++state_.used.random;
            break;
        case Phase::TopUp:
            ++state_.used.topup;
            break;
        default:
            ++state_.used.query;
            break;
        }
    }

    std::size_t query_allowance() const {
        const std::size_t spent = state_.used.topup;
        return state_.budgets.query > spent ? state_.budgets.query - spent : 0;
    }

    void advance_seeding() {
        if (phase_ == Phase::Seeding || phase_ == Phase::TopUp) {
            if (distinct_trusted_classes(state_) < 2) {
                // top-up draws come out of the query allowance so the cap holds
                auto pool = unlabeled_indices(state_);
                if (query_allowance() == 0 || pool.empty())
                    throw ValidationError("seed labels cover a single class and the budget is exhausted");
                pending_ = detail::sample_without_replacement(std::move(pool), 1, rng_);
                phase_ = Phase::TopUp;
                return;
            }
            const std::size_t allowance = query_allowance();
            auto pool = unlabeled_indices(state_);
            if (allowance > 0 && !pool.empty()) {
                labeller_ = train_labeller(*features_, state_, cfg_);
                const auto preds = labeller_->predict(*features_, pool, cfg_.confidence);
                std::vector<std::size_t> order(pool.size());
                std::iota(order.begin(), order.end(), std::size_t{0});
                std::stable_sort(order.begin(), order.end(),
                                 [&](std::size_t a, std::size_t b) { return preds[a].score < preds[b].score; });
                order.resize(std::min(allowance, order.size()));
                pending_.clear();
                for (std::size_t r : order) pending_.push_back(pool[r]);
                phase_ = Phase::Querying;
                return;
            }
        }
        phase_ = Phase::Staging;
    }

    std::shared_ptr<const RealMatrix> features_;
    int n_classes_;
    AnnotateConfig cfg_;
    AnnotationState state_;
    std::mt19937_64 rng_;
    LofModel lof_;
    Phase phase_ = Phase::Seeding;
    std::vector<std::size_t> pending_;
    std::vector<bool> inlier_seed_;
    std::optional<Labeller> labeller_;
};

/// Drive an engine's seeding phase with a synchronous oracle.
inline void answer_with(AnnotationEngine& engine, Oracle& oracle) {
    while (!engine.pending().empty()) {
        const std::vector<std::size_t> batch = engine.pending();
        const auto labels = oracle.ask(batch);
        require(labels.size() == batch.size(), "oracle returned the wrong number of answers");
        std::vector<LabelAnswer> answers;
        for (std::size_t i = 0; i < batch.size(); ++i) answers.push_back({batch[i], labels[i]});
        engine.answer(answers);
    }
}

/// Seeding only: inliers + random draws, provisional model, uncertainty query.
inline AnnotationState seed_selection(const RealMatrix& features, int n_classes, Oracle& oracle,
                                      const AnnotateConfig& cfg = {}) {
    AnnotationEngine engine(features, n_classes, cfg);
    answer_with(engine, oracle);
    return engine.state();
}

/// Full annotation: seeding, `cfg.stages` gated stages, final pass.
inline AnnotationEngine annotate(std::shared_ptr<const RealMatrix> features, int n_classes, Oracle& oracle,
                                 const AnnotateConfig& cfg = {}) {
    AnnotationEngine engine(std::move(features), n_classes, cfg);
    answer_with(engine, oracle);
    engine.run_to_completion();
    return engine;
}

inline AnnotationEngine annotate(const RealMatrix& features, int n_classes, Oracle& oracle,
                                 const AnnotateConfig& cfg = {}) {
    return annotate(std::make_shared<const RealMatrix>(features), n_classes, oracle, cfg);
}

/// Fraction of samples whose label matches `truth`; unlabeled samples count as wrong.
inline double annotation_accuracy(const AnnotationState& state, std::span<const int> truth) {
    require(truth.size() == state.size, "ground truth size mismatch");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < state.size; ++i)
        if (state.labels[i] && *state.labels[i] == truth[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(state.size);
}

/// Delimiter-separated report: sample_id,label,provenance,score,stage.
/// Score is empty for human and unassigned rows; stage is empty when unassigned.
inline std::string annotation_report(const AnnotationState& state, std::span<const std::string> ids,
                                     std::span<const std::string> class_names = {}) {
    require(ids.size() == state.size, "report: id count mismatch");
    std::ostringstream out;
    out << "sample_id,label,provenance,score,stage\n";
    char buf[32];
    for (std::size_t i = 0; i < state.size; ++i) {
        out << ids[i] << ',';
        if (state.labels[i]) {
            const int label = *state.labels[i];
            if (!class_names.empty() && label >= 0 && static_cast<std::size_t>(label) < class_names.size())
                out << class_names[static_cast<std::size_t>(label)];
            else
                out << label;
        }
        out << ',' << to_string(state.provenance[i]) << ',';
        if (!std::isnan(state.score[i])) {
            std::snprintf(buf, sizeof buf, "%.6f", state.score[i]);
            out << buf;
        }
        out << ',';
        if (state.assigned_stage[i] >= 0) out << state.assigned_stage[i];
        out << '\n';
    }
    return out.str();
}

} // namespace face
