#pragma once

// Dense kernels behind the autodiff ops. Each kernel exists twice: a plain
// serial reference and an OpenMP version. The two produce bit-identical
// results because every output element is reduced in the same order; the
// parallel versions only split the outer loop.

#include "hml/array.hpp"

#include <cstddef>
#include <span>

namespace hml::kernels {

// Minimum amount of work (multiply-adds or elements) before the OpenMP
// kernels fork; below it they run the serial loop in place.
inline constexpr std::size_t kParallelGrain = std::size_t{1} << 16;

#define HML_KERNEL_DECLS                                                          \
    Array matmul(const Array& a, const Array& b);                                 \
    Array transpose(const Array& a);                                              \
    Array add(const Array& a, const Array& b);                                    \
    Array sub(const Array& a, const Array& b);                                    \
    Array mul(const Array& a, const Array& b);                                    \
    Array scale(const Array& a, double s);                                        \
    Array tanh(const Array& a);                                                   \
    Array relu(const Array& a);                                                   \
    Array relu_mask(const Array& a);                                              \
    Array add_bias(const Array& a, const Array& bias);                            \
    Array sum_rows(const Array& a);                                               \
    Array sum_cols(const Array& a);                                               \
    Array broadcast_rows(const Array& row, std::size_t rows);                     \
    Array broadcast_cols(const Array& col, std::size_t cols);                     \
    Array softmax_rows(const Array& a);                                           \
    /* per-row log-sum-exp minus the labelled logit, as an n x 1 column */        \
    Array cross_entropy_rows(const Array& logits, std::span<const int> labels);

namespace serial {
HML_KERNEL_DECLS
}  // namespace serial

namespace parallel {
HML_KERNEL_DECLS
}  // namespace parallel

#undef HML_KERNEL_DECLS

// Library default.
using namespace parallel;

// Sum of all entries, accumulated in storage order.
double sum_all(const Array& a);

}  // namespace hml::kernels
