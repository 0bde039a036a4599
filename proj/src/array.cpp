#include "hml/array.hpp"

#include "hml/error.hpp"

#include <cmath>
#include <cstring>

namespace hml {

Array::Array(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {
    if (rows == 0 || cols == 0) throw ShapeError("Array: extents must be positive, got " + shape_string());
}

Array::Array(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (rows == 0 || cols == 0) throw ShapeError("Array: extents must be positive, got " + shape_string());
    if (data_.size() != rows * cols)
        throw ShapeError("Array: " + std::to_string(data_.size()) + " values for shape " + shape_string());
}

Array Array::identity(std::size_t n) {
    Array out(n, n);
    for (std::size_t i = 0; i < n; ++i) out(i, i) = 1.0;
    return out;
}

double Array::item() const {
    if (size() != 1) throw ShapeError("Array::item on non-scalar " + shape_string());
    return data_[0];
}

bool Array::all_finite() const noexcept {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

Array Array::slice_rows(std::size_t begin, std::size_t end) const {
    if (begin >= end || end > rows_) throw ShapeError("Array::slice_rows out of range for " + shape_string());
    std::vector<double> out(data_.begin() + static_cast<std::ptrdiff_t>(begin * cols_),
                            data_.begin() + static_cast<std::ptrdiff_t>(end * cols_));
    return Array(end - begin, cols_, std::move(out));
}

Array Array::leading_cols(std::size_t n) const {
    if (n == 0 || n > cols_) throw ShapeError("Array::leading_cols out of range for " + shape_string());
    Array out(rows_, n);
    for (std::size_t r = 0; r < rows_; ++r)
        for (std::size_t c = 0; c < n; ++c) out(r, c) = (*this)(r, c);
    return out;
}

std::string Array::shape_string() const {
    return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
}

bool bitwise_equal(const Array& a, const Array& b) noexcept {
    if (!a.same_shape(b)) return false;
    if (a.size() == 0) return true;
    return std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

Array vstack(std::span<const Array> parts) {
    if (parts.empty()) throw ShapeError("vstack: no arrays");
    std::size_t rows = 0;
    const std::size_t cols = parts.front().cols();
    for (const auto& p : parts) {
        if (p.cols() != cols) throw ShapeError("vstack: column mismatch " + parts.front().shape_string() + " vs " + p.shape_string());
        rows += p.rows();
    }
    std::vector<double> data;
    data.reserve(rows * cols);
    for (const auto& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
    return Array(rows, cols, std::move(data));
}

}  // namespace hml
