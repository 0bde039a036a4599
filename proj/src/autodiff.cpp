#include "hml/autodiff.hpp"

#include "hml/error.hpp"
#include "hml/kernels.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>

namespace hml::ad {

namespace {

thread_local bool tl_grad_enabled = true;

using Grads = std::vector<Var>;
using Need = std::vector<bool>;

Var make(Array value, std::initializer_list<Var> inputs, BackwardFn backward) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    bool track = false;
    if (tl_grad_enabled)
        for (const auto& in : inputs) track = track || in.requires_grad();
    if (track) {
        node->requires_grad = true;
        node->backward = std::move(backward);
        for (const auto& in : inputs) node->parents.push_back(in.node());
    }
    return Var(std::move(node));
}

Array ones_like(const Array& a) { return Array(a.rows(), a.cols(), 1.0); }

}  // namespace

Var Var::param(Array value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = true;
    return Var(std::move(node));
}

Var Var::constant(Array value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return Var(std::move(node));
}

NoGradGuard::NoGradGuard() : previous_(tl_grad_enabled) { tl_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { tl_grad_enabled = previous_; }

bool grad_enabled() noexcept { return tl_grad_enabled; }

Var matmul(const Var& a, const Var& b) {
    return make(kernels::matmul(a.value(), b.value()), {a, b}, [a, b](const Var&, const Var& g, const Need& need) {
        Grads out(2);
        if (need[0]) out[0] = matmul(g, transpose(b));
        if (need[1]) out[1] = matmul(transpose(a), g);
        return out;
    });
}

Var add(const Var& a, const Var& b) {
    return make(kernels::add(a.value(), b.value()), {a, b},
                [](const Var&, const Var& g, const Need&) { return Grads{g, g}; });
}

Var sub(const Var& a, const Var& b) {
    return make(kernels::sub(a.value(), b.value()), {a, b}, [](const Var&, const Var& g, const Need& need) {
        Grads out{g, Var()};
        if (need[1]) out[1] = scale(g, -1.0);
        return out;
    });
}

Var mul(const Var& a, const Var& b) {
    return make(kernels::mul(a.value(), b.value()), {a, b}, [a, b](const Var&, const Var& g, const Need& need) {
        Grads out(2);
        if (need[0]) out[0] = mul(g, b);
        if (need[1]) out[1] = mul(g, a);
        return out;
    });
}

Var add_bias(const Var& x, const Var& bias) {
    return make(kernels::add_bias(x.value(), bias.value()), {x, bias},
                [](const Var&, const Var& g, const Need& need) {
                    Grads out{g, Var()};
                    if (need[1]) out[1] = sum_rows(g);
                    return out;
                });
}

Var tanh(const Var& x) {
    return make(kernels::tanh(x.value()), {x}, [](const Var& out, const Var& g, const Need&) {
        return Grads{mul(g, sub(Var::constant(ones_like(out.value())), mul(out, out)))};
    });
}

Var relu(const Var& x) {
    return make(kernels::relu(x.value()), {x}, [x](const Var&, const Var& g, const Need&) {
        return Grads{mul(g, Var::constant(kernels::relu_mask(x.value())))};
    });
}

Var scale(const Var& x, double s) {
    return make(kernels::scale(x.value(), s), {x},
                [s](const Var&, const Var& g, const Need&) { return Grads{scale(g, s)}; });
}

Var transpose(const Var& x) {
    return make(kernels::transpose(x.value()), {x},
                [](const Var&, const Var& g, const Need&) { return Grads{transpose(g)}; });
}

Var sum(const Var& x) {
    const std::size_t r = x.rows(), c = x.cols();
    return make(Array::scalar(kernels::sum_all(x.value())), {x},
                [r, c](const Var&, const Var& g, const Need&) { return Grads{broadcast_scalar(g, r, c)}; });
}

Var sum_rows(const Var& x) {
    const std::size_t n = x.rows();
    return make(kernels::sum_rows(x.value()), {x},
                [n](const Var&, const Var& g, const Need&) { return Grads{broadcast_rows(g, n)}; });
}

Var sum_cols(const Var& x) {
    const std::size_t d = x.cols();
    return make(kernels::sum_cols(x.value()), {x},
                [d](const Var&, const Var& g, const Need&) { return Grads{broadcast_cols(g, d)}; });
}

Var broadcast_rows(const Var& row, std::size_t n) {
    return make(kernels::broadcast_rows(row.value(), n), {row},
                [](const Var&, const Var& g, const Need&) { return Grads{sum_rows(g)}; });
}

Var broadcast_cols(const Var& col, std::size_t d) {
    return make(kernels::broadcast_cols(col.value(), d), {col},
                [](const Var&, const Var& g, const Need&) { return Grads{sum_cols(g)}; });
}

Var broadcast_scalar(const Var& s, std::size_t rows, std::size_t cols) {
    if (s.value().size() != 1) throw ShapeError("broadcast_scalar: expected a scalar, got " + s.value().shape_string());
    return make(Array(rows, cols, s.value()[0]), {s},
                [](const Var&, const Var& g, const Need&) { return Grads{sum(g)}; });
}

Var softmax(const Var& logits) {
    return make(kernels::softmax_rows(logits.value()), {logits}, [](const Var& s, const Var& g, const Need&) {
        return Grads{mul(s, sub(g, broadcast_cols(sum_cols(mul(g, s)), s.cols())))};
    });
}

Var mse(const Var& prediction, const Var& target) {
    if (!prediction.value().same_shape(target.value()))
        throw ShapeError("mse: shape mismatch " + prediction.value().shape_string() + " vs " +
                         target.value().shape_string());
    const Array residual = kernels::sub(prediction.value(), target.value());
    const double n = static_cast<double>(residual.size());
    double ss = 0.0;
    for (double r : residual.data()) ss += r * r;
    return make(Array::scalar(ss / n), {prediction, target},
                [prediction, target, n](const Var&, const Var& g, const Need& need) {
                    const Var d = mul(broadcast_scalar(g, prediction.rows(), prediction.cols()),
                                      scale(sub(prediction, target), 2.0 / n));
                    Grads out{d, Var()};
                    if (need[1]) out[1] = scale(d, -1.0);
                    return out;
                });
}

Var softmax_cross_entropy(const Var& logits, std::vector<int> labels) {
    const Array per_row = kernels::cross_entropy_rows(logits.value(), labels);
    const double n = static_cast<double>(per_row.size());
    auto shared = std::make_shared<const std::vector<int>>(std::move(labels));
    return make(Array::scalar(kernels::sum_all(per_row) / n), {logits},
                [logits, shared, n](const Var&, const Var& g, const Need&) {
                    Array onehot(logits.rows(), logits.cols());
                    for (std::size_t i = 0; i < shared->size(); ++i) onehot(i, static_cast<std::size_t>((*shared)[i])) = 1.0;
                    const Var d = scale(sub(softmax(logits), Var::constant(std::move(onehot))), 1.0 / n);
                    return Grads{mul(broadcast_scalar(g, logits.rows(), logits.cols()), d)};
                });
}

std::vector<Var> grad(const Var& loss, std::span<const Var> wrt, bool create_graph) {
    if (!loss.defined() || loss.value().size() != 1)
        throw ShapeError("grad: loss must be scalar, got " + (loss.defined() ? loss.value().shape_string() : std::string("<undefined>")));

    std::unordered_set<const Node*> targets;
    for (const auto& w : wrt)
        if (w.requires_grad()) targets.insert(w.node().get());

    // Post-order DFS over grad-requiring nodes; `needed` marks nodes with a
    // target among their ancestors (or themselves).
    std::vector<std::shared_ptr<Node>> order;
    std::unordered_map<const Node*, bool> needed;
    if (loss.requires_grad() && !targets.empty()) {
        struct Frame {
            std::shared_ptr<Node> node;
            std::size_t next = 0;
        };
        std::vector<Frame> stack{{loss.node(), 0}};
        needed.emplace(loss.node().get(), false);
        while (!stack.empty()) {
            Frame& top = stack.back();
            if (top.next < top.node->parents.size()) {
                const auto& p = top.node->parents[top.next++];
                if (p->requires_grad && !needed.contains(p.get())) {
                    needed.emplace(p.get(), false);
                    stack.push_back({p, 0});
                }
                continue;
            }
            bool need = targets.contains(top.node.get());
            for (const auto& p : top.node->parents) need = need || (p->requires_grad && needed[p.get()]);
            needed[top.node.get()] = need;
            order.push_back(std::move(top.node));
            stack.pop_back();
        }
    }

    std::optional<NoGradGuard> no_grad;
    if (!create_graph) no_grad.emplace();

    std::unordered_map<const Node*, Var> grads;
    if (!order.empty()) grads.emplace(loss.node().get(), Var::constant(Array::scalar(1.0)));

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const auto& node = *it;
        if (!needed[node.get()] || !node->backward) continue;
        const auto g = grads.find(node.get());
        if (g == grads.end()) continue;
        std::vector<bool> need(node->parents.size());
        bool any = false;
        for (std::size_t i = 0; i < need.size(); ++i) {
            const auto& p = node->parents[i];
            need[i] = p->requires_grad && needed[p.get()];
            any = any || need[i];
        }
        if (!any) continue;
        const Var grad_out = g->second;
        const Grads parent_grads = node->backward(Var(node), grad_out, need);
        for (std::size_t i = 0; i < need.size(); ++i) {
            if (!need[i]) continue;
            const Node* p = node->parents[i].get();
            auto [slot, inserted] = grads.try_emplace(p, parent_grads[i]);
            if (!inserted) slot->second = add(slot->second, parent_grads[i]);
        }
    }

    std::vector<Var> out;
    out.reserve(wrt.size());
    for (const auto& w : wrt) {
        const auto g = grads.find(w.node().get());
        if (g != grads.end() && w.requires_grad()) {
            out.push_back(create_graph ? g->second : g->second.detach());
        } else {
            out.push_back(Var::constant(Array(w.rows(), w.cols())));
        }
    }
    return out;
}

std::vector<Array> gradient_values(const Var& loss, std::span<const Var> wrt) {
    std::vector<Array> out;
    for (const auto& g : grad(loss, wrt, false)) out.push_back(g.value());
    return out;
}

std::vector<Array> finite_difference(const ScalarFn& f, std::span<const Array> params, double h) {
    if (!(h > 0.0)) throw ValidationError("finite_difference: step must be positive");
    std::vector<Array> p(params.begin(), params.end());
    std::vector<Array> out;
    out.reserve(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        Array g(p[i].rows(), p[i].cols());
        for (std::size_t j = 0; j < p[i].size(); ++j) {
            const double saved = p[i][j];
            p[i][j] = saved + h;
            const double up = f(p);
            p[i][j] = saved - h;
            const double down = f(p);
            p[i][j] = saved;
            if (!std::isfinite(up) || !std::isfinite(down))
                throw Error("finite_difference: non-finite value at parameter " + std::to_string(i) + ", element " +
                            std::to_string(j));
            g[j] = (up - down) / (2.0 * h);
        }
        out.push_back(std::move(g));
    }
    return out;
}

}  // namespace hml::ad
