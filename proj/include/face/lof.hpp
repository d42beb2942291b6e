#pragma once

/// Local Outlier Factor with exact k-nearest-neighbour search.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "face/error.hpp"
#include "face/matrix.hpp"
#include "face/parallel.hpp"

namespace face {

/// Distances below this are treated as this value so duplicate points keep a
/// finite local reachability density.
inline constexpr double kReachabilityFloor = 1e-12;

struct LofModel {
    std::size_t k = 1;
    double contamination = 0.1;
    std::vector<double> scores;                       // LOF per point
    std::vector<double> nn_dist;                      // distance to the nearest neighbour
    std::vector<double> k_distance;                   // distance to the k-th neighbour
    std::vector<double> lrd;                          // local reachability density
    std::vector<std::vector<std::size_t>> neighbors;  // k nearest, ascending (distance, index)
    double outlier_threshold = 0.0;

    std::size_t size() const noexcept { return scores.size(); }
};

namespace detail {

inline double euclidean(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

/// Linear-interpolation quantile of an unsorted sample, q in [0, 1].
inline double quantile(std::vector<double> values, double q) {
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

} // namespace detail

/// Fit LOF on the rows of `points`. Exactly k neighbours per point; ties in
/// distance are broken by the smaller sample index.
inline LofModel fit_lof(const RealMatrix& points, std::size_t k = 1, double contamination = 0.1) {
    const std::size_t n = points.rows();
    require(k >= 1, "LOF needs k >= 1");
    require(n > k, "LOF needs more points than neighbours (N > k)");
    require(contamination > 0.0 && contamination <= 0.5, "contamination must lie in (0, 0.5]");

    LofModel m;
    m.k = k;
    m.contamination = contamination;
    m.neighbors.resize(n);
    m.k_distance.resize(n);
    m.nn_dist.resize(n);
    std::vector<std::vector<double>> neighbor_dist(n);

    parallel_for(n, [&](std::size_t i) {
        std::vector<std::pair<double, std::size_t>> cand;
        cand.reserve(n - 1);
        const auto pi = points.row(i);
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) cand.emplace_back(std::max(detail::euclidean(pi, points.row(j)), kReachabilityFloor), j);
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
        auto& nb = m.neighbors[i];
        auto& nd = neighbor_dist[i];
        for (std::size_t r = 0; r < k; ++r) {
            nb.push_back(cand[r].second);
            nd.push_back(cand[r].first);
        }
        m.nn_dist[i] = nd.front();
        m.k_distance[i] = nd.back();
    });

    m.lrd.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double reach = 0.0;
        for (std::size_t r = 0; r < k; ++r)
            reach += std::max(m.k_distance[m.neighbors[i][r]], neighbor_dist[i][r]);
        m.lrd[i] = static_cast<double>(k) / reach;
    }
    m.scores.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (std::size_t o : m.neighbors[i]) sum += m.lrd[o];
        m.scores[i] = sum / static_cast<double>(k) / m.lrd[i];
    }
    m.outlier_threshold = detail::quantile(m.scores, 1.0 - contamination);
    return m;
}

/// True iff the point's LOF score exceeds the contamination threshold.
inline bool is_outlier(const LofModel& m, std::size_t index) {
    require(index < m.size(), "is_outlier: index " + std::to_string(index) + " was not fitted");
    return m.scores[index] > m.outlier_threshold;
}

/// The `count` points with the smallest nearest-neighbour distance (ties: smaller
/// LOF, then smaller index), ordered by that rank.
inline std::vector<std::size_t> select_inliers(const LofModel& m, std::size_t count) {
    require(count <= m.size(), "select_inliers: count exceeds the number of fitted points");
    std::vector<std::size_t> order(m.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (m.nn_dist[a] != m.nn_dist[b]) return m.nn_dist[a] < m.nn_dist[b];
        if (m.scores[a] != m.scores[b]) return m.scores[a] < m.scores[b];
        return a < b;
    });
    order.resize(count);
    return order;
}

} // namespace face
