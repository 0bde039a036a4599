#include "hml/kernels.hpp"

#include "hml/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace hml::kernels {

namespace {

void require_same(const char* op, const Array& a, const Array& b) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
}

void require_matmul(const Array& a, const Array& b) {
    if (a.cols() != b.rows())
        throw ShapeError("matmul: shape mismatch " + a.shape_string() + " vs " + b.shape_string());
}

void require_bias(const char* op, const Array& a, const Array& bias) {
    if (bias.rows() != 1 || bias.cols() != a.cols())
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " + bias.shape_string());
}

void require_labels(const Array& logits, std::span<const int> labels) {
    if (labels.size() != logits.rows())
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " + logits.shape_string());
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= logits.cols())
            throw ShapeError("cross_entropy: label " + std::to_string(y) + " outside logits " + logits.shape_string());
}

// Row i of C = A * B; the reduction over p runs in ascending order.
inline void matmul_row(const Array& a, const Array& b, Array& c, std::size_t i) {
    const std::size_t k = a.cols();
    const std::size_t n = b.cols();
    const double* ar = a.data().data() + i * k;
    const double* bd = b.data().data();
    double* cr = c.data().data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
        const double av = ar[p];
        const double* br = bd + p * n;
        for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
}

inline void softmax_row(const Array& a, Array& out, std::size_t i) {
    const std::size_t n = a.cols();
    const double* ar = a.data().data() + i * n;
    double* orow = out.data().data() + i * n;
    const double mx = *std::max_element(ar, ar + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        orow[j] = std::exp(ar[j] - mx);
        z += orow[j];
    }
    for (std::size_t j = 0; j < n; ++j) orow[j] /= z;
}

inline double cross_entropy_row(const Array& a, std::size_t i, int label) {
    const std::size_t n = a.cols();
    const double* ar = a.data().data() + i * n;
    const double mx = *std::max_element(ar, ar + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(ar[j] - mx);
    return mx + std::log(z) - ar[label];
}

template <bool Parallel, class F>
void for_range(std::size_t n, std::size_t work, F&& body) {
    if constexpr (Parallel) {
        const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (work >= kParallelGrain)
        for (std::ptrdiff_t i = 0; i < count; ++i) body(static_cast<std::size_t>(i));
    } else {
        (void)work;
        for (std::size_t i = 0; i < n; ++i) body(i);
    }
}

template <bool Parallel, class F>
Array map(const Array& a, F&& f) {
    Array out(a.rows(), a.cols());
    const double* in = a.data().data();
    double* o = out.data().data();
    for_range<Parallel>(a.size(), a.size(), [&](std::size_t i) { o[i] = f(in[i]); });
    return out;
}

template <bool Parallel, class F>
Array zip(const char* op, const Array& a, const Array& b, F&& f) {
    require_same(op, a, b);
    Array out(a.rows(), a.cols());
    const double* x = a.data().data();
    const double* y = b.data().data();
    double* o = out.data().data();
    for_range<Parallel>(a.size(), a.size(), [&](std::size_t i) { o[i] = f(x[i], y[i]); });
    return out;
}

template <bool Parallel>
struct Impl {
    static Array matmul(const Array& a, const Array& b) {
        require_matmul(a, b);
        Array c(a.rows(), b.cols());
        for_range<Parallel>(a.rows(), a.rows() * a.cols() * b.cols(), [&](std::size_t i) { matmul_row(a, b, c, i); });
        return c;
    }

    static Array transpose(const Array& a) {
        Array t(a.cols(), a.rows());
        for_range<Parallel>(a.cols(), a.size(), [&](std::size_t j) {
            for (std::size_t i = 0; i < a.rows(); ++i) t(j, i) = a(i, j);
        });
        return t;
    }

    static Array add_bias(const Array& a, const Array& bias) {
        require_bias("add_bias", a, bias);
        Array out(a.rows(), a.cols());
        for_range<Parallel>(a.rows(), a.size(), [&](std::size_t i) {
            for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = a(i, j) + bias[j];
        });
        return out;
    }

    // Column sums, each accumulated top to bottom.
    static Array sum_rows(const Array& a) {
        Array out(1, a.cols());
        for_range<Parallel>(a.cols(), a.size(), [&](std::size_t j) {
            double s = 0.0;
            for (std::size_t i = 0; i < a.rows(); ++i) s += a(i, j);
            out[j] = s;
        });
        return out;
    }

    static Array sum_cols(const Array& a) {
        Array out(a.rows(), 1);
        for_range<Parallel>(a.rows(), a.size(), [&](std::size_t i) {
            double s = 0.0;
            for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j);
            out[i] = s;
        });
        return out;
    }

    static Array broadcast_rows(const Array& row, std::size_t rows) {
        if (row.rows() != 1) throw ShapeError("broadcast_rows: expected a row vector, got " + row.shape_string());
        Array out(rows, row.cols());
        for_range<Parallel>(rows, out.size(), [&](std::size_t i) {
            for (std::size_t j = 0; j < row.cols(); ++j) out(i, j) = row[j];
        });
        return out;
    }

    static Array broadcast_cols(const Array& col, std::size_t cols) {
        if (col.cols() != 1) throw ShapeError("broadcast_cols: expected a column vector, got " + col.shape_string());
        Array out(col.rows(), cols);
        for_range<Parallel>(col.rows(), out.size(), [&](std::size_t i) {
            for (std::size_t j = 0; j < cols; ++j) out(i, j) = col[i];
        });
        return out;
    }

    static Array softmax_rows(const Array& a) {
        Array out(a.rows(), a.cols());
        for_range<Parallel>(a.rows(), a.size(), [&](std::size_t i) { softmax_row(a, out, i); });
        return out;
    }

    static Array cross_entropy_rows(const Array& logits, std::span<const int> labels) {
        require_labels(logits, labels);
        Array out(logits.rows(), 1);
        for_range<Parallel>(logits.rows(), logits.size(),
                            [&](std::size_t i) { out[i] = cross_entropy_row(logits, i, labels[i]); });
        return out;
    }
};

}  // namespace

#define HML_KERNEL_DEFS(NS, PAR)                                                                            \
    namespace NS {                                                                                          \
    Array matmul(const Array& a, const Array& b) { return Impl<PAR>::matmul(a, b); }                        \
    Array transpose(const Array& a) { return Impl<PAR>::transpose(a); }                                     \
    Array add(const Array& a, const Array& b) {                                                             \
        return zip<PAR>("add", a, b, [](double x, double y) { return x + y; });                            \
    }                                                                                                       \
    Array sub(const Array& a, const Array& b) {                                                             \
        return zip<PAR>("sub", a, b, [](double x, double y) { return x - y; });                            \
    }                                                                                                       \
    Array mul(const Array& a, const Array& b) {                                                             \
        return zip<PAR>("mul", a, b, [](double x, double y) { return x * y; });                            \
    }                                                                                                       \
    Array scale(const Array& a, double s) {                                                                 \
        return map<PAR>(a, [s](double x) { return s * x; });                                               \
    }                                                                                                       \
    Array tanh(const Array& a) {                                                                            \
        return map<PAR>(a, [](double x) { return std::tanh(x); });                                         \
    }                                                                                                       \
    Array relu(const Array& a) {                                                                            \
        return map<PAR>(a, [](double x) { return x > 0.0 ? x : 0.0; });                                    \
    }                                                                                                       \
    Array relu_mask(const Array& a) {                                                                       \
        return map<PAR>(a, [](double x) { return x > 0.0 ? 1.0 : 0.0; });                                  \
    }                                                                                                       \
    Array add_bias(const Array& a, const Array& bias) { return Impl<PAR>::add_bias(a, bias); }              \
    Array sum_rows(const Array& a) { return Impl<PAR>::sum_rows(a); }                                       \
    Array sum_cols(const Array& a) { return Impl<PAR>::sum_cols(a); }                                       \
    Array broadcast_rows(const Array& row, std::size_t rows) { return Impl<PAR>::broadcast_rows(row, rows); } \
    Array broadcast_cols(const Array& col, std::size_t cols) { return Impl<PAR>::broadcast_cols(col, cols); } \
    Array softmax_rows(const Array& a) { return Impl<PAR>::softmax_rows(a); }                               \
    Array cross_entropy_rows(const Array& logits, std::span<const int> labels) {                            \
        return Impl<PAR>::cross_entropy_rows(logits, labels);                                               \
    }                                                                                                       \
    }

HML_KERNEL_DEFS(serial, false)
HML_KERNEL_DEFS(parallel, true)

#undef HML_KERNEL_DEFS

double sum_all(const Array& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return s;
}

}  // namespace hml::kernels
