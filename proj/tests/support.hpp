#pragma once

// Shared helpers for the unit tests and the acceptance runner.

#include "hml/autodiff.hpp"
#include "hml/kernels.hpp"
#include "hml/learner.hpp"
#include "hml/model.hpp"
#include "hml/rng.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace hml::test {

inline Array random_array(std::size_t rows, std::size_t cols, Engine& eng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Array a(rows, cols);
    for (auto& v : a.data()) v = u(eng);
    return a;
}

inline double norm(const Array& a) {
    double s = 0.0;
    for (double v : a.data()) s += v * v;
    return std::sqrt(s);
}

// ||a - b|| / max(||a||, ||b||), with an absolute floor for near-zero pairs.
inline double rel_err(const Array& a, const Array& b, double floor = 1e-10) {
    double diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) diff += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(diff) / std::max({norm(a), norm(b), floor});
}

inline double rel_err(std::span<const Array> a, std::span<const Array> b, double floor = 1e-10) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k)
        for (std::size_t i = 0; i < a[k].size(); ++i) {
            diff += (a[k][i] - b[k][i]) * (a[k][i] - b[k][i]);
            na += a[k][i] * a[k][i];
            nb += b[k][i] * b[k][i];
        }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

// backbone (w, b)..., heads by level (w, b)..., transform (w, b).
inline std::vector<Array> flatten(const ModelParams& p) {
    std::vector<Array> out;
    for (const auto& d : p.backbone) {
        out.push_back(d.weight);
        out.push_back(d.bias);
    }
    for (const auto& [level, d] : p.heads) {
        out.push_back(d.weight);
        out.push_back(d.bias);
    }
    out.push_back(p.transform.weight);
    out.push_back(p.transform.bias);
    return out;
}

inline ModelParams unflatten(ModelParams p, std::span<const Array> arrays) {
    std::size_t k = 0;
    for (auto& d : p.backbone) {
        d.weight = arrays[k++];
        d.bias = arrays[k++];
    }
    for (auto& [level, d] : p.heads) {
        d.weight = arrays[k++];
        d.bias = arrays[k++];
    }
    p.transform.weight = arrays[k++];
    p.transform.bias = arrays[k++];
    return p;
}

// Leaves of `vars` in flatten() order.
inline std::vector<ad::Var> flat_vars(const ParamVars& vars) {
    auto out = vars.backbone_vars();
    for (const auto& [level, d] : vars.heads) {
        out.push_back(d.weight);
        out.push_back(d.bias);
    }
    out.push_back(vars.transform.weight);
    out.push_back(vars.transform.bias);
    return out;
}

// Plain second-order MAML written directly against the autodiff ops:
// per task, unrolled support steps, query loss, gradient w.r.t. the
// starting (theta, phi); gradients summed in task order; one descent step.
// Returns the parameters after every meta-iteration.
inline std::vector<ModelParams> reference_maml(const TrainConfig& cfg, const TaskProvider& tasks, std::size_t structure,
                                               ModelParams params) {
    std::vector<ModelParams> trajectory;
    const auto loss_of = [](const Network& net, const TaskInstance& t, bool query) {
        const ad::Var out = forward(net, ad::Var::constant(query ? t.query_x : t.support_x));
        if (t.is_classification()) return ad::softmax_cross_entropy(out, query ? t.query_labels : t.support_labels);
        return ad::mse(out, ad::Var::constant(query ? t.query_y : t.support_y));
    };
    const auto network_of = [&](const std::vector<ad::Var>& v) {
        Network net;
        net.activation = params.arch.activation;
        for (std::size_t i = 0; i + 2 < v.size(); i += 2) net.backbone.push_back({v[i], v[i + 1]});
        net.head = {v[v.size() - 2], v.back()};
        return net;
    };
    for (std::size_t it = 0; it < cfg.meta_iterations; ++it) {
        std::vector<Array> total;
        for (const auto& d : params.backbone) {
            total.emplace_back(d.weight.rows(), d.weight.cols());
            total.emplace_back(1, d.bias.cols());
        }
        const Dense& head = params.heads.at(1);
        total.emplace_back(head.weight.rows(), head.weight.cols());
        total.emplace_back(1, head.bias.cols());

        for (std::size_t m = 0; m < cfg.meta_batch; ++m) {
            const TaskInstance task = *tasks(structure, cfg.seed, it * cfg.meta_batch + m);
            std::vector<ad::Var> leaves;
            for (const auto& d : params.backbone) {
                leaves.push_back(ad::Var::param(d.weight));
                leaves.push_back(ad::Var::param(d.bias));
            }
            leaves.push_back(ad::Var::param(head.weight));
            leaves.push_back(ad::Var::param(head.bias));

            std::vector<ad::Var> v = leaves;
            for (std::size_t s = 0; s < cfg.inner_steps; ++s) {
                const auto g = ad::grad(loss_of(network_of(v), task, false), v, true);
                for (std::size_t i = 0; i < v.size(); ++i) v[i] = ad::sub(v[i], ad::scale(g[i], cfg.alpha));
            }
            const auto g = ad::grad(loss_of(network_of(v), task, true), leaves);
            for (std::size_t i = 0; i < total.size(); ++i) total[i] = kernels::add(total[i], g[i].value());
        }
        std::size_t k = 0;
        for (auto& d : params.backbone) {
            d.weight = kernels::sub(d.weight, kernels::scale(total[k++], cfg.beta));
            d.bias = kernels::sub(d.bias, kernels::scale(total[k++], cfg.beta));
        }
        Dense& h = params.heads.at(1);
        h.weight = kernels::sub(h.weight, kernels::scale(total[k++], cfg.beta));
        h.bias = kernels::sub(h.bias, kernels::scale(total[k++], cfg.beta));
        trajectory.push_back(params);
    }
    return trajectory;
}

// Solves the normal equations [X 1]^T [X 1] beta = [X 1]^T Y by Gaussian
// elimination with partial pivoting. Rows of the result: w (d_x rows) then b.
inline Array least_squares(const Array& x, const Array& y) {
    const std::size_t n = x.rows(), d = x.cols() + 1, k = y.cols();
    std::vector<std::vector<double>> m(d, std::vector<double>(d + k, 0.0));
    const auto a = [&](std::size_t r, std::size_t c) { return c + 1 == d ? 1.0 : x(r, c); };
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j)
            for (std::size_t r = 0; r < n; ++r) m[i][j] += a(r, i) * a(r, j);
        for (std::size_t j = 0; j < k; ++j)
            for (std::size_t r = 0; r < n; ++r) m[i][d + j] += a(r, i) * y(r, j);
    }
    for (std::size_t col = 0; col < d; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < d; ++r)
            if (std::abs(m[r][col]) > std::abs(m[pivot][col])) pivot = r;
        std::swap(m[col], m[pivot]);
        for (std::size_t r = 0; r < d; ++r) {
            if (r == col) continue;
            const double f = m[r][col] / m[col][col];
            for (std::size_t c = col; c < d + k; ++c) m[r][c] -= f * m[col][c];
        }
    }
    Array beta(d, k);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < k; ++j) beta(i, j) = m[i][d + j] / m[i][i];
    return beta;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("hml_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace hml::test
