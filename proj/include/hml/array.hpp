#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace hml {

// Dense row-major matrix of doubles. Every value in the library is rank 2;
// scalars are 1x1 and row vectors are 1xn.
class Array {
public:
    Array() = default;
    Array(std::size_t rows, std::size_t cols, double fill = 0.0);
    Array(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Array scalar(double v) { return Array(1, 1, v); }
    static Array identity(std::size_t n);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }
    std::vector<std::size_t> shape() const { return {rows_, cols_}; }
    bool same_shape(const Array& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    const std::vector<double>& storage() const noexcept { return data_; }

    double item() const;
    bool all_finite() const noexcept;

    // Rows [begin, end) as a new array.
    Array slice_rows(std::size_t begin, std::size_t end) const;
    // Columns [0, n) as a new array.
    Array leading_cols(std::size_t n) const;

    std::string shape_string() const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// Bitwise equality of shape and every value (distinguishes -0.0 from 0.0).
bool bitwise_equal(const Array& a, const Array& b) noexcept;

// Stack rows of several arrays with equal column count.
Array vstack(std::span<const Array> parts);

}  // namespace hml
