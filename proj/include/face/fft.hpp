#pragma once

#include <complex>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include <fftw3.h>

#include "face/error.hpp"

namespace face {

/// Real-to-complex FFT of a fixed size. Plans are created once per size and
/// shared; execution uses the new-array interface so it is safe to call from
/// several threads at once.
class RealFft {
public:
    explicit RealFft(std::size_t n) : n_(n), plan_(plan_for(n)) {}

    std::size_t size() const noexcept { return n_; }
    std::size_t bins() const noexcept { return n_ / 2 + 1; }

    /// out.size() must be n/2+1.
    void forward(std::span<const double> in, std::span<std::complex<double>> out) const {
        require(in.size() == n_ && out.size() == bins(), "RealFft: size mismatch");
        Buffer<double> buf_in(n_);
        Buffer<fftw_complex> buf_out(bins());
        std::copy(in.begin(), in.end(), buf_in.get());
        fftw_execute_dft_r2c(plan_, buf_in.get(), buf_out.get());
        for (std::size_t k = 0; k < bins(); ++k)
            out[k] = {buf_out.get()[k][0], buf_out.get()[k][1]};
    }

    std::vector<std::complex<double>> forward(std::span<const double> in) const {
        std::vector<std::complex<double>> out(bins());
        forward(in, out);
        return out;
    }

private:
    template <typename T>
    struct Buffer {
        explicit Buffer(std::size_t n) : p(static_cast<T*>(fftw_malloc(sizeof(T) * n))) {
            if (!p) throw std::bad_alloc();
        }
        ~Buffer() { fftw_free(p); }
        Buffer(const Buffer&) = delete;
        Buffer& operator=(const Buffer&) = delete;
        T* get() const noexcept { return p; }
        T* p;
    };

    static fftw_plan plan_for(std::size_t n) {
        require(n >= 2, "FFT size must be at least 2");
        static std::mutex mutex;
        static std::map<std::size_t, fftw_plan> plans;
        std::lock_guard lock(mutex);
        if (auto it = plans.find(n); it != plans.end()) return it->second;
        Buffer<double> in(n);
        Buffer<fftw_complex> out(n / 2 + 1);
        fftw_plan plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in.get(), out.get(), FFTW_ESTIMATE);
        plans.emplace(n, plan);
        return plan;
    }

    std::size_t n_;
    fftw_plan plan_;
};

} // namespace face
