#pragma once

#include <cassert>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace face {

/// Dense row-major matrix. Used both for R x T feature grids and N x D data sets.
template <typename T>
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, T fill = T{})
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        assert(data_.size() == rows_ * cols_);
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    bool empty() const noexcept { return data_.empty(); }

    T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    std::vector<T>& data() noexcept { return data_; }
    const std::vector<T>& data() const noexcept { return data_; }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

using RealMatrix = Matrix<double>;

/// Stack equal-length rows into a matrix.
template <typename Rows>
RealMatrix stack_rows(const Rows& rows) {
    if (rows.empty()) return {};
    const std::size_t cols = std::size(rows[0]);
    RealMatrix m(rows.size(), cols);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        assert(std::size(rows[r]) == cols);
        std::copy(std::begin(rows[r]), std::end(rows[r]), m.row(r).begin());
    }
    return m;
}

/// Copy the selected rows of `m`, in the given order.
inline RealMatrix gather_rows(const RealMatrix& m, std::span<const std::size_t> indices) {
    RealMatrix out(indices.size(), m.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        auto src = m.row(indices[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

} // namespace face
