#pragma once

/// Second-order gradient boosted trees with logistic loss, and the one-vs-all
/// wrapper used as the annotation classifier.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "face/audio_io.hpp"
#include "face/error.hpp"
#include "face/matrix.hpp"
#include "face/parallel.hpp"

namespace face {

struct GbdtParams {
    int max_depth = 6;
    int n_rounds = 100;
    double learning_rate = 0.3;
    double l2_lambda = 1.0;
    double min_child_weight = 1.0;
};

/// Flat tree node. feature < 0 marks a leaf. Rows with x[feature] < threshold
/// go left; NaN follows default_left.
struct TreeNode {
    int feature = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    bool default_left = true;
    double weight = 0.0;

    bool is_leaf() const noexcept { return feature < 0; }
};

struct Tree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root

    double output(std::span<const double> x) const {
        std::size_t i = 0;
        while (!nodes[i].is_leaf()) {
            const TreeNode& n = nodes[i];
            const double v = x[static_cast<std::size_t>(n.feature)];
            const bool left = std::isnan(v) ? n.default_left : v < n.threshold;
            i = static_cast<std::size_t>(left ? n.left : n.right);
        }
        return nodes[i].weight;
    }
};

inline double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

/// Training rows plus per-feature row orderings, shared by every binary model
/// of a one-vs-all fit.
class TrainingSet {
public:
    explicit TrainingSet(RealMatrix x) : x_(std::move(x)), order_(x_.cols()) {
        require(x_.rows() > 0, "training set is empty");
        for (double v : x_.data()) require(std::isfinite(v), "training features must be finite");
        for (std::size_t f = 0; f < x_.cols(); ++f) {
            auto& o = order_[f];
            o.resize(x_.rows());
            std::iota(o.begin(), o.end(), 0u);
            std::stable_sort(o.begin(), o.end(), [&](std::uint32_t a, std::uint32_t b) { return x_(a, f) < x_(b, f); });
        }
    }

    const RealMatrix& features() const noexcept { return x_; }
    std::size_t rows() const noexcept { return x_.rows(); }
    std::size_t dimension() const noexcept { return x_.cols(); }
    std::span<const std::uint32_t> order(std::size_t f) const { return order_[f]; }

private:
    RealMatrix x_;
    std::vector<std::vector<std::uint32_t>> order_;
};

class BinaryGbdt {
public:
    BinaryGbdt() = default;

    static BinaryGbdt train(const TrainingSet& data, std::span<const int> y, const GbdtParams& params = {}) {
        const std::size_t n = data.rows();
        require(y.size() == n, "label count does not match row count");
        require(params.max_depth >= 0 && params.n_rounds >= 0, "invalid boosting parameters");
        require(params.l2_lambda >= 0.0 && params.min_child_weight >= 0.0, "invalid regularisation parameters");
        std::size_t positives = 0;
        for (int v : y) {
            require(v == 0 || v == 1, "binary labels must be 0 or 1");
            positives += static_cast<std::size_t>(v);
        }
        require(positives > 0 && positives < n, "binary training needs both a positive and a negative example");

        BinaryGbdt model;
        model.params_ = params;
        model.dimension_ = data.dimension();
        const double prior = static_cast<double>(positives) / static_cast<double>(n);
        model.base_score_ = std::log(prior / (1.0 - prior));

        std::vector<double> margin(n, model.base_score_);
        std::vector<double> grad(n), hess(n);
        model.loss_history_.push_back(logistic_loss(margin, y));
        Grower grower(data, params);
        for (int round = 0; round < params.n_rounds; ++round) {
            for (std::size_t i = 0; i < n; ++i) {
                const double p = sigmoid(margin[i]);
                grad[i] = p - y[i];
                hess[i] = p * (1.0 - p);
            }
            const std::vector<int>& leaf_of = grower.grow(grad, hess);
            Tree tree = grower.take_tree();
            for (std::size_t i = 0; i < n; ++i)
                margin[i] += params.learning_rate * tree.nodes[static_cast<std::size_t>(leaf_of[i])].weight;
            model.trees_.push_back(std::move(tree));
            model.loss_history_.push_back(logistic_loss(margin, y));
        }
        return model;
    }

    static BinaryGbdt train(const RealMatrix& x, std::span<const int> y, const GbdtParams& params = {}) {
        return train(TrainingSet(x), y, params);
    }

    double margin(std::span<const double> x) const {
        require(x.size() == dimension_, "dimension mismatch: model expects " + std::to_string(dimension_) +
                                            ", got " + std::to_string(x.size()));
        double sum = 0.0;
        for (const Tree& t : trees_) sum += t.output(x);
        return base_score_ + params_.learning_rate * sum;
    }

    double predict_proba(std::span<const double> x) const { return sigmoid(margin(x)); }

    const std::vector<Tree>& trees() const noexcept { return trees_; }
    double base_score() const noexcept { return base_score_; }
    const GbdtParams& params() const noexcept { return params_; }
    std::size_t dimension() const noexcept { return dimension_; }
    /// Mean training logistic loss before the first round and after each round.
    const std::vector<double>& loss_history() const noexcept { return loss_history_; }

    static double logistic_loss(std::span<const double> margin, std::span<const int> y) {
        double loss = 0.0;
        for (std::size_t i = 0; i < margin.size(); ++i) {
            const double z = margin[i];
            // log(1 + e^z) - y z, stable for large |z|
            const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
            loss += softplus - y[i] * z;
        }
        return loss / static_cast<double>(margin.size());
    }

private:
    friend class GbdtCodec;

    // Level-wise exact greedy growth. Every level scans each feature's presorted
    // row order once, accumulating left-side gradient sums per open node.
    class Grower {
    public:
        Grower(const TrainingSet& data, const GbdtParams& params) : data_(data), params_(params) {}

        const std::vector<int>& grow(std::span<const double> grad, std::span<const double> hess) {
            const std::size_t n = data_.rows();
            tree_ = Tree{};
            tree_.nodes.emplace_back();
            slot_of_.assign(n, 0);
            leaf_of_.assign(n, 0);
            std::vector<int> open{0};
            std::vector<double> g_sum(1, 0.0), h_sum(1, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                g_sum[0] += grad[i];
                h_sum[0] += hess[i];
            }

            for (int depth = 0; depth < params_.max_depth && !open.empty(); ++depth) {
                const std::size_t slots = open.size();
                std::vector<double> best_gain(slots, 0.0), best_thr(slots, 0.0);
                std::vector<int> best_feature(slots, -1);
                std::vector<double> gl(slots), hl(slots), last(slots);
                std::vector<char> seen(slots);
                for (std::size_t f = 0; f < data_.dimension(); ++f) {
                    std::fill(gl.begin(), gl.end(), 0.0);
                    std::fill(hl.begin(), hl.end(), 0.0);
                    std::fill(seen.begin(), seen.end(), 0);
                    for (std::uint32_t row : data_.order(f)) {
                        const int s = slot_of_[row];
                        if (s < 0) continue;
                        const double v = data_.features()(row, f);
                        if (seen[s] && v != last[s]) {
                            const double gr = g_sum[s] - gl[s];
                            const double hr = h_sum[s] - hl[s];
                            if (hl[s] >= params_.min_child_weight && hr >= params_.min_child_weight) {
                                const double lambda = params_.l2_lambda;
                                const double gain = 0.5 * (gl[s] * gl[s] / (hl[s] + lambda) + gr * gr / (hr + lambda) -
                                                           g_sum[s] * g_sum[s] / (h_sum[s] + lambda));
                                if (gain > best_gain[s] + kMinGain) {
                                    best_gain[s] = gain;
                                    best_feature[s] = static_cast<int>(f);
                                    // midpoint of the gap; falls back to v when the two
                                    // values are adjacent doubles
                                    const double mid = last[s] + 0.5 * (v - last[s]);
                                    best_thr[s] = mid > last[s] ? mid : v;
                                }
                            }
                        }
                        gl[s] += grad[row];
                        hl[s] += hess[row];
                        last[s] = v;
                        seen[s] = 1;
                    }
                }

                std::vector<int> next_open;
                std::vector<double> next_g, next_h;
                std::vector<int> child_slot(2 * slots, -1);
                for (std::size_t s = 0; s < slots; ++s) {
                    const int node = open[s];
                    if (best_feature[s] < 0) {
                        make_leaf(node, g_sum[s], h_sum[s]);
                        continue;
                    }
                    const int left = static_cast<int>(tree_.nodes.size());
                    tree_.nodes.emplace_back();
                    tree_.nodes.emplace_back();
                    TreeNode& split = tree_.nodes[static_cast<std::size_t>(node)];
                    split.feature = best_feature[s];
                    split.threshold = best_thr[s];
                    split.left = left;
                    split.right = left + 1;
                    child_slot[2 * s] = static_cast<int>(next_open.size());
                    next_open.push_back(left);
                    child_slot[2 * s + 1] = static_cast<int>(next_open.size());
                    next_open.push_back(left + 1);
                    next_g.insert(next_g.end(), {0.0, 0.0});
                    next_h.insert(next_h.end(), {0.0, 0.0});
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const int s = slot_of_[i];
                    if (s < 0) continue;
                    const TreeNode& node = tree_.nodes[static_cast<std::size_t>(open[static_cast<std::size_t>(s)])];
                    if (node.is_leaf()) {
                        leaf_of_[i] = open[static_cast<std::size_t>(s)];
                        slot_of_[i] = -1;
                        continue;
                    }
                    const bool left = data_.features()(i, static_cast<std::size_t>(node.feature)) < node.threshold;
                    const int child = child_slot[2 * static_cast<std::size_t>(s) + (left ? 0 : 1)];
                    slot_of_[i] = child;
                    next_g[static_cast<std::size_t>(child)] += grad[i];
                    next_h[static_cast<std::size_t>(child)] += hess[i];
                }
                open = std::move(next_open);
                g_sum = std::move(next_g);
                h_sum = std::move(next_h);
            }
            for (std::size_t s = 0; s < open.size(); ++s) make_leaf(open[s], g_sum[s], h_sum[s]);
            for (std::size_t i = 0; i < n; ++i)
                if (slot_of_[i] >= 0) leaf_of_[i] = open[static_cast<std::size_t>(slot_of_[i])];
            return leaf_of_;
        }

        Tree take_tree() { return std::move(tree_); }

    private:
        static constexpr double kMinGain = 1e-12;

        void make_leaf(int node, double g, double h) {
            TreeNode& leaf = tree_.nodes[static_cast<std::size_t>(node)];
            leaf.feature = -1;
            leaf.weight = -g / (h + params_.l2_lambda);
        }

        const TrainingSet& data_;
        const GbdtParams& params_;
        Tree tree_;
        std::vector<int> slot_of_;
        std::vector<int> leaf_of_;
    };

    GbdtParams params_{};
    double base_score_ = 0.0;
    std::size_t dimension_ = 0;
    std::vector<Tree> trees_;
    std::vector<double> loss_history_;
};

inline BinaryGbdt train_binary(const RealMatrix& x, std::span<const int> y, const GbdtParams& params = {}) {
    require(x.rows() > 0, "training set is empty");
    return BinaryGbdt::train(x, y, params);
}

/// How a one-vs-all composite turns per-class probabilities into one score.
enum class ConfidenceMode {
    Raw,         // max per-class probability
    Normalized,  // max / sum
};

struct PredictionResult {
    int label = 0;
    double score = 0.0;
    std::vector<double> per_class;
};

/// argmax with ties to the lower class position.
inline PredictionResult resolve_prediction(std::span<const int> classes, std::vector<double> per_class,
                                           ConfidenceMode mode = ConfidenceMode::Raw) {
    require(!per_class.empty() && per_class.size() == classes.size(), "per-class probability count mismatch");
    std::size_t best = 0;
    for (std::size_t c = 1; c < per_class.size(); ++c)
        if (per_class[c] > per_class[best]) best = c;
    double score = per_class[best];
    if (mode == ConfidenceMode::Normalized) {
        const double total = std::accumulate(per_class.begin(), per_class.end(), 0.0);
        score = total > 0.0 ? score / total : 0.0;
    }
    return {classes[best], score, std::move(per_class)};
}

class OvaModel {
public:
    OvaModel() = default;
    OvaModel(std::vector<int> classes, std::vector<BinaryGbdt> models)
        : classes_(std::move(classes)), models_(std::move(models)) {
        require(classes_.size() >= 2 && classes_.size() == models_.size(), "OvaModel needs one model per class, >= 2 classes");
    }

    const std::vector<int>& classes() const noexcept { return classes_; }
    const std::vector<BinaryGbdt>& models() const noexcept { return models_; }
    std::size_t dimension() const noexcept { return models_.empty() ? 0 : models_.front().dimension(); }

    PredictionResult predict(std::span<const double> x, ConfidenceMode mode = ConfidenceMode::Raw) const {
        require(x.size() == dimension(), "dimension mismatch: model expects " + std::to_string(dimension()) +
                                             ", got " + std::to_string(x.size()));
        std::vector<double> per_class(models_.size());
        for (std::size_t c = 0; c < models_.size(); ++c) per_class[c] = models_[c].predict_proba(x);
        return resolve_prediction(classes_, std::move(per_class), mode);
    }

    std::vector<PredictionResult> predict_all(const RealMatrix& x, ConfidenceMode mode = ConfidenceMode::Raw) const {
        std::vector<PredictionResult> out(x.rows());
        for (std::size_t i = 0; i < x.rows(); ++i) out[i] = predict(x.row(i), mode);
        return out;
    }

private:
    std::vector<int> classes_;
    std::vector<BinaryGbdt> models_;
};

/// One binary model per distinct label (sorted ascending), each separating that
/// class from the rest.
inline OvaModel train_ova(const RealMatrix& x, std::span<const int> labels, const GbdtParams& params = {},
                          unsigned threads = default_thread_count()) {
    require(x.rows() > 0 && x.rows() == labels.size(), "train_ova: empty input or label count mismatch");
    std::vector<int> classes(labels.begin(), labels.end());
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
    require(classes.size() >= 2, "train_ova needs at least 2 distinct classes");

    const TrainingSet data(x);
    std::vector<BinaryGbdt> models(classes.size());
    parallel_for(
        classes.size(),
        [&](std::size_t c) {
            std::vector<int> y(labels.size());
            for (std::size_t i = 0; i < labels.size(); ++i) y[i] = labels[i] == classes[c] ? 1 : 0;
            models[c] = BinaryGbdt::train(data, y, params);
        },
        threads);
    return OvaModel(std::move(classes), std::move(models));
}

// ---------------------------------------------------------------------------
// model file
//
//   "FACEGB1\0"                          8 bytes
//   class count C                        u32
//   C class labels                       i32
//   per class:
//     dimension, max_depth, n_rounds     u32 x 3
//     base_score, learning_rate,
//     l2_lambda, min_child_weight        f64 x 4
//     tree count                         u32
//     per tree, preorder:  u8 0 -> leaf:  f64 weight
//                          u8 1 -> split: u32 feature, f64 threshold, u8 default_left,
//                                         left subtree, right subtree
// All integers and floats little-endian.

inline constexpr char kModelMagic[8] = {'F', 'A', 'C', 'E', 'G', 'B', '1', '\0'};

class GbdtCodec {
public:
    static std::vector<std::uint8_t> encode(const OvaModel& model) {
        std::vector<std::uint8_t> out(kModelMagic, kModelMagic + 8);
        detail::put_u32(out, static_cast<std::uint32_t>(model.classes().size()));
        for (int c : model.classes()) detail::put_u32(out, static_cast<std::uint32_t>(c));
        for (const BinaryGbdt& m : model.models()) {
            detail::put_u32(out, static_cast<std::uint32_t>(m.dimension_));
            detail::put_u32(out, static_cast<std::uint32_t>(m.params_.max_depth));
            detail::put_u32(out, static_cast<std::uint32_t>(m.params_.n_rounds));
            put_f64(out, m.base_score_);
            put_f64(out, m.params_.learning_rate);
            put_f64(out, m.params_.l2_lambda);
            put_f64(out, m.params_.min_child_weight);
            detail::put_u32(out, static_cast<std::uint32_t>(m.trees_.size()));
            for (const Tree& t : m.trees_) encode_node(out, t, 0);
        }
        return out;
    }

    static OvaModel decode(std::span<const std::uint8_t> bytes) {
        Reader r{bytes};
        if (bytes.size() < 8 || std::memcmp(bytes.data(), kModelMagic, 8) != 0) throw IoError("not a FACEGB1 model file");
        r.pos = 8;
        const std::uint32_t n_classes = r.u32();
        if (n_classes < 2 || n_classes > 1u << 20) throw IoError("model file: implausible class count");
        std::vector<int> classes(n_classes);
        for (auto& c : classes) c = static_cast<int>(r.u32());
        std::vector<BinaryGbdt> models(n_classes);
        for (auto& m : models) {
            m.dimension_ = r.u32();
            m.params_.max_depth = static_cast<int>(r.u32());
            m.params_.n_rounds = static_cast<int>(r.u32());
            m.base_score_ = r.f64();
            m.params_.learning_rate = r.f64();
            m.params_.l2_lambda = r.f64();
            m.params_.min_child_weight = r.f64();
            const std::uint32_t n_trees = r.u32();
            m.trees_.resize(n_trees);
            for (Tree& t : m.trees_) decode_node(r, t, m.dimension_, 0);
        }
        if (r.pos != bytes.size()) throw IoError("model file: trailing bytes");
        return OvaModel(std::move(classes), std::move(models));
    }

private:
    struct Reader {
        std::span<const std::uint8_t> bytes;
        std::size_t pos = 0;
        void need(std::size_t n) const {
            if (pos + n > bytes.size()) throw IoError("model file truncated");
        }
        std::uint8_t u8() {
            need(1);
            return bytes[pos++];
        }
        std::uint32_t u32() {
            need(4);
            const auto v = detail::read_u32(bytes.data() + pos);
            pos += 4;
            return v;
        }
        double f64() {
            need(8);
            std::uint64_t v = 0;
            for (int i = 0; i < 8; ++i) v |= std::uint64_t(bytes[pos + i]) << (8 * i);
            pos += 8;
            return std::bit_cast<double>(v);
        }
    };

    static void put_f64(std::vector<std::uint8_t>& out, double d) {
        const auto v = std::bit_cast<std::uint64_t>(d);
        for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }

    static void encode_node(std::vector<std::uint8_t>& out, const Tree& t, std::size_t i) {
        const TreeNode& n = t.nodes[i];
        if (n.is_leaf()) {
            out.push_back(0);
            put_f64(out, n.weight);
            return;
        }
        out.push_back(1);
        detail::put_u32(out, static_cast<std::uint32_t>(n.feature));
        put_f64(out, n.threshold);
        out.push_back(n.default_left ? 1 : 0);
        encode_node(out, t, static_cast<std::size_t>(n.left));
        encode_node(out, t, static_cast<std::size_t>(n.right));
    }

    static int decode_node(Reader& r, Tree& t, std::size_t dimension, int depth) {
        if (depth > 64) throw IoError("model file: tree too deep");
        const int index = static_cast<int>(t.nodes.size());
        t.nodes.emplace_back();
        const std::uint8_t tag = r.u8();
        if (tag == 0) {
            t.nodes.back().weight = r.f64();
            return index;
        }
        if (tag != 1) throw IoError("model file: bad node tag");
        TreeNode n;
        n.feature = static_cast<int>(r.u32());
        if (static_cast<std::size_t>(n.feature) >= dimension) throw IoError("model file: split feature out of range");
        n.threshold = r.f64();
        n.default_left = r.u8() != 0;
        n.left = decode_node(r, t, dimension, depth + 1);
        n.right = decode_node(r, t, dimension, depth + 1);
        t.nodes[static_cast<std::size_t>(index)] = n;
        return index;
    }
};

inline std::vector<std::uint8_t> serialize_model(const OvaModel& m) { return GbdtCodec::encode(m); }
inline OvaModel deserialize_model(std::span<const std::uint8_t> bytes) { return GbdtCodec::decode(bytes); }

inline void save_model(const std::filesystem::path& path, const OvaModel& m) {
    const auto bytes = serialize_model(m);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write model " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline OvaModel load_model(const std::filesystem::path& path) { return deserialize_model(read_file_bytes(path)); }

} // namespace face
