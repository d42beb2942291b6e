#pragma once

// Signal generators and brute-force reference implementations used as test
// oracles. Nothing here calls into the code paths it is used to check.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "face/audio_io.hpp"
#include "face/matrix.hpp"

namespace face::testing {

inline AudioClip make_clip(std::vector<double> samples, int rate = 22050, std::string id = "clip") {
    return AudioClip{std::move(id), std::move(samples), rate, {}};
}

inline std::vector<double> sine(double freq, int rate, double seconds, double amp = 0.5, double phase = 0.0) {
    const auto n = static_cast<std::size_t>(std::llround(seconds * rate));
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i)
        s[i] = amp * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i) / rate + phase);
    return s;
}

inline std::vector<double> white_noise(std::size_t n, std::uint64_t seed, double amp = 0.1) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, amp);
    std::vector<double> s(n);
    for (auto& v : s) v = std::clamp(dist(rng), -1.0, 1.0);
    return s;
}

/// Clicks every 60/bpm seconds from `offset`: each click is a 1 kHz sinusoid
/// whose amplitude decays from 1 to 2^-10 over 100 ms.
inline std::vector<double> click_train(double bpm, int rate, double seconds, double offset = 0.25) {
    const auto n = static_cast<std::size_t>(std::llround(seconds * rate));
    const auto click_len = static_cast<std::size_t>(std::llround(0.1 * rate));
    std::vector<double> s(n, 0.0);
    for (double t = offset; t < seconds; t += 60.0 / bpm) {
        const auto i = static_cast<std::size_t>(std::llround(t * rate));
        for (std::size_t k = 0; k < click_len && i + k < n; ++k)
            s[i + k] += std::exp2(-10.0 * static_cast<double>(k) / static_cast<double>(click_len - 1)) *
                        std::sin(2.0 * std::numbers::pi * 1000.0 * static_cast<double>(k) / rate);
    }
    return s;
}

/// Index of the largest-magnitude bin of a direct O(n^2) DFT over bins [1, n/2].
inline std::size_t dft_peak_bin(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::size_t best = 1;
    double best_mag = -1.0;
    for (std::size_t k = 1; k <= n / 2; ++k) {
        std::complex<double> acc{};
        for (std::size_t i = 0; i < n; ++i)
            acc += x[i] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * i % n) / static_cast<double>(n));
        if (std::abs(acc) > best_mag) {
            best_mag = std::abs(acc);
            best = k;
        }
    }
    return best;
}

/// Textbook O(N^2) LOF: full distance matrix, exactly k neighbours ordered by
/// (distance, index), distances floored at 1e-12.
inline std::vector<double> brute_force_lof(const RealMatrix& pts, std::size_t k) {
    const std::size_t n = pts.rows();
    std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t d = 0; d < pts.cols(); ++d) s += (pts(i, d) - pts(j, d)) * (pts(i, d) - pts(j, d));
            dist[i][j] = std::max(std::sqrt(s), 1e-12);
        }
    std::vector<std::vector<std::size_t>> knn(n);
    std::vector<double> kdist(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> others;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) others.push_back(j);
        std::sort(others.begin(), others.end(), [&](std::size_t a, std::size_t b) {
            return dist[i][a] < dist[i][b] || (dist[i][a] == dist[i][b] && a < b);
        });
        knn[i].assign(others.begin(), others.begin() + static_cast<std::ptrdiff_t>(k));
        kdist[i] = dist[i][knn[i].back()];
    }
    std::vector<double> lrd(n);
    for (std::size_t i = 0; i < n; ++i) {
        double total = 0.0;
        for (std::size_t o : knn[i]) total += std::max(kdist[o], dist[i][o]);
        lrd[i] = 1.0 / (total / static_cast<double>(k));
    }
    std::vector<double> lof(n);
    for (std::size_t i = 0; i < n; ++i) {
        double ratio = 0.0;
        for (std::size_t o : knn[i]) ratio += lrd[o] / lrd[i];
        lof[i] = ratio / static_cast<double>(k);
    }
    return lof;
}

inline RealMatrix random_points(std::size_t n, std::size_t dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    RealMatrix m(n, dim);
    for (auto& v : m.data()) v = g(rng);
    return m;
}

struct LabeledPoints {
    RealMatrix x;
    std::vector<int> y;
};

/// Isotropic unit-variance blobs; class c is centred at `spacing` along axis c.
inline LabeledPoints axis_blobs(std::size_t per_class, std::size_t classes, std::size_t dim, double spacing,
                                std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    LabeledPoints out{RealMatrix(per_class * classes, dim), {}};
    for (std::size_t i = 0; i < per_class * classes; ++i) {
        const std::size_t c = i % classes;
        for (std::size_t d = 0; d < dim; ++d) out.x(i, d) = g(rng) + (d == c ? spacing : 0.0);
        out.y.push_back(static_cast<int>(c));
    }
    return out;
}

} // namespace face::testing
