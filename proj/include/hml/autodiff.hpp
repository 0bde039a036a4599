#pragma once

// Reverse-mode automatic differentiation over Arrays.
//
// A Var is a shared handle to a graph node. Derivative rules are written in
// terms of the same differentiable ops, so gradients taken with
// create_graph=true are themselves Vars that can be differentiated again.
// That closure is what makes meta-gradients through unrolled inner loops
// exact.
//
// Graphs are confined to the thread that built them. The grad-recording
// switch is thread-local.

#include "hml/array.hpp"

#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace hml::ad {

class Var;

// Computes parent gradients from the output node and the incoming gradient.
// Entries whose `need` flag is false may be left empty.
using BackwardFn =
    std::function<std::vector<Var>(const Var& out, const Var& grad, const std::vector<bool>& need)>;

struct Node {
    Array value;
    std::vector<std::shared_ptr<Node>> parents;
    BackwardFn backward;
    bool requires_grad = false;
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    // Leaf that gradients can be taken with respect to.
    static Var param(Array value);
    // Leaf that never receives a gradient.
    static Var constant(Array value);

    const Array& value() const { return node_->value; }
    bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
    bool defined() const noexcept { return static_cast<bool>(node_); }
    std::size_t rows() const { return node_->value.rows(); }
    std::size_t cols() const { return node_->value.cols(); }

    // Same value, cut from the graph.
    Var detach() const { return constant(value()); }

    const std::shared_ptr<Node>& node() const noexcept { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled() noexcept;

// Public op set.
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_bias(const Var& x, const Var& bias);  // bias is 1 x cols, added to every row
Var tanh(const Var& x);
Var relu(const Var& x);
Var scale(const Var& x, double s);
Var transpose(const Var& x);
Var sum(const Var& x);  // 1x1
// Mean of squared residuals over every element (no 1/2 factor).
Var mse(const Var& prediction, const Var& target);
// Mean over rows of -log softmax(logits)[label]; log-sum-exp stabilized.
Var softmax_cross_entropy(const Var& logits, std::vector<int> labels);

// Helpers used by derivative rules; differentiable in their own right.
Var softmax(const Var& logits);
Var sum_rows(const Var& x);                         // n x d -> 1 x d
Var sum_cols(const Var& x);                         // n x d -> n x 1
Var broadcast_rows(const Var& row, std::size_t n);  // 1 x d -> n x d
Var broadcast_cols(const Var& col, std::size_t d);  // n x 1 -> n x d
Var broadcast_scalar(const Var& s, std::size_t rows, std::size_t cols);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

// Gradients of a scalar `loss` with respect to each of `wrt`, in order.
// Inputs that do not influence the loss get zero arrays of their own shape.
// With create_graph the returned Vars carry their own graph.
std::vector<Var> grad(const Var& loss, std::span<const Var> wrt, bool create_graph = false);

// Value-only convenience over grad().
std::vector<Array> gradient_values(const Var& loss, std::span<const Var> wrt);

using ScalarFn = std::function<double(std::span<const Array>)>;

// Central differences (f(p+h) - f(p-h)) / 2h, one coordinate at a time.
// Throws hml::Error naming the coordinate when f is non-finite there.
std::vector<Array> finite_difference(const ScalarFn& f, std::span<const Array> params, double h = 1e-5);

}  // namespace hml::ad
