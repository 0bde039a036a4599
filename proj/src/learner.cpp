#include "hml/learner.hpp"

#include "hml/kernels.hpp"
#include "hml/rng.hpp"

#include <chrono>
#include <cmath>
#include <exception>

namespace hml {

void TrainConfig::validate() const {
    if (!(alpha > 0.0) || !(beta > 0.0) || !(gamma > 0.0))
        throw ValidationError("train config: alpha, beta and gamma must be positive");
    if (meta_batch < 1) throw ValidationError("train config: meta_batch must be >= 1");
    if (depth < 1) throw ValidationError("train config: depth must be >= 1");
    if (inner_steps < 1) throw ValidationError("train config: inner_steps must be >= 1");
    if (!level_sizes.empty() && level_sizes.size() != depth)
        throw ValidationError("train config: level_sizes must have depth entries");
}

std::vector<std::size_t> TrainConfig::resolved_level_sizes(std::size_t output_size) const {
    if (level_sizes.empty()) return default_level_sizes(output_size, depth);
    if (level_sizes.back() != output_size)
        throw ValidationError("train config: last level size must equal the training structure");
    return level_sizes;
}

// ---------------------------------------------------------------------------
// Losses and adaptation

ad::Var task_loss(const Network& net, const TaskInstance& task, bool query) {
    const Array& x = query ? task.query_x : task.support_x;
    const ad::Var out = forward(net, ad::Var::constant(x));
    if (task.is_classification()) return ad::softmax_cross_entropy(out, query ? task.query_labels : task.support_labels);
    return ad::mse(out, ad::Var::constant(query ? task.query_y : task.support_y));
}

double accuracy(const Array& logits, std::span<const int> labels) {
    if (labels.size() != logits.rows()) throw ShapeError("accuracy: label count does not match logits");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < logits.cols(); ++j)
            if (logits(i, j) > logits(i, best)) best = j;
        if (static_cast<int>(best) == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

namespace {

bool any_tracked(const Network& net) {
    for (const auto& v : net.backbone_vars())
        if (v.requires_grad()) return true;
    if (net.head.weight.requires_grad() || net.head.bias.requires_grad()) return true;
    return net.transform && (net.transform->weight.requires_grad() || net.transform->bias.requires_grad());
}

// Flat list of adaptable vars: backbone (w, b) pairs then the head.
std::vector<ad::Var> adaptable(const Network& net) {
    auto vars = net.backbone_vars();
    vars.push_back(net.head.weight);
    vars.push_back(net.head.bias);
    return vars;
}

Network with_adaptable(const Network& net, const std::vector<ad::Var>& vars) {
    Network out = net;
    std::size_t k = 0;
    for (auto& layer : out.backbone) {
        layer.weight = vars[k++];
        layer.bias = vars[k++];
    }
    out.head.weight = vars[k++];
    out.head.bias = vars[k++];
    return out;
}

double checked_value(const ad::Var& loss) {
    const double v = loss.value().item();
    if (!std::isfinite(v)) throw NonFiniteError("non-finite loss during adaptation");
    return v;
}

}  // namespace

AdaptResult adapt(const Network& start, const TaskInstance& task, double alpha, std::size_t steps, Tracking tracking) {
    if (start.head.weight.cols() != task.output_size)
        throw ValidationError("adapt: head has " + std::to_string(start.head.weight.cols()) +
                              " outputs but the task has " + std::to_string(task.output_size));
    if (tracking != Tracking::none && !any_tracked(start)) tracking = Tracking::none;

    AdaptResult result;
    std::vector<ad::Var> vars = adaptable(start);
    for (std::size_t s = 0;; ++s) {
        // Untracked vars get local leaves so the support gradient exists.
        std::vector<ad::Var> leaves = vars;
        for (auto& v : leaves)
            if (tracking == Tracking::none || !v.requires_grad()) v = ad::Var::param(v.value());
        const ad::Var loss = task_loss(with_adaptable(start, leaves), task, false);
        result.support_losses.push_back(checked_value(loss));
        if (s == steps) break;

        const auto grads = ad::grad(loss, leaves, tracking == Tracking::second_order);
        if (tracking == Tracking::none) {
            for (std::size_t i = 0; i < vars.size(); ++i)
                vars[i] = ad::Var::constant(kernels::sub(vars[i].value(), kernels::scale(grads[i].value(), alpha)));
        } else {
            for (std::size_t i = 0; i < vars.size(); ++i) vars[i] = ad::sub(vars[i], ad::scale(grads[i], alpha));
        }
    }

    result.adapted = with_adaptable(start, vars);
    if (tracking == Tracking::none) {
        ad::NoGradGuard no_grad;
        result.query_loss = task_loss(result.adapted, task, true);
    } else {
        result.query_loss = task_loss(result.adapted, task, true);
    }
    checked_value(result.query_loss);
    if (task.is_classification()) {
        ad::NoGradGuard no_grad;
        result.query_accuracy = accuracy(forward(result.adapted, ad::Var::constant(task.query_x)).value(), task.query_labels);
    }
    return result;
}

AdaptResult inner_adapt(const ModelParams& params, int level, const TaskInstance& task, double alpha,
                        std::size_t steps, bool track_graph, bool first_order) {
    const ParamVars vars = ParamVars::leaves(params, false);
    if (!vars.heads.contains(level)) throw ValidationError("inner_adapt: no head at level " + std::to_string(level));
    const Tracking tracking = !track_graph ? Tracking::none : first_order ? Tracking::first_order : Tracking::second_order;
    return adapt(vars.network(level, params.transform_enabled), task, alpha, steps, tracking);
}

// ---------------------------------------------------------------------------
// Parameter views

ParamVars ParamVars::leaves(const ModelParams& p, bool transform_trainable) {
    ParamVars v;
    v.activation = p.arch.activation;
    for (const auto& d : p.backbone) v.backbone.push_back(as_params(d));
    for (const auto& [level, d] : p.heads) v.heads.emplace(level, as_params(d));
    v.transform = transform_trainable ? as_params(p.transform) : as_constants(p.transform);
    return v;
}

Network ParamVars::network(int level, bool with_transform) const {
    const auto it = heads.find(level);
    if (it == heads.end()) throw ValidationError("model: no head at level " + std::to_string(level));
    Network net;
    net.backbone = backbone;
    net.head = it->second;
    net.activation = activation;
    if (with_transform) net.transform = transform;
    return net;
}

std::vector<ad::Var> ParamVars::backbone_vars() const {
    std::vector<ad::Var> out;
    for (const auto& d : backbone) {
        out.push_back(d.weight);
        out.push_back(d.bias);
    }
    return out;
}

std::vector<ad::Var> ParamVars::head_vars(int level) const {
    const auto& h = heads.at(level);
    return {h.weight, h.bias};
}

ParamGrads ParamGrads::zeros_like(const ModelParams& p) {
    ParamGrads g;
    for (const auto& d : p.backbone) g.backbone.push_back({Array(d.weight.rows(), d.weight.cols()), Array(1, d.bias.cols())});
    for (const auto& [level, d] : p.heads)
        g.heads.emplace(level, Dense{Array(d.weight.rows(), d.weight.cols()), Array(1, d.bias.cols())});
    return g;
}

void ParamGrads::accumulate(const ParamGrads& other) {
    for (std::size_t i = 0; i < backbone.size(); ++i) {
        backbone[i].weight = kernels::add(backbone[i].weight, other.backbone.at(i).weight);
        backbone[i].bias = kernels::add(backbone[i].bias, other.backbone.at(i).bias);
    }
    for (auto& [level, d] : heads) {
        const auto it = other.heads.find(level);
        if (it == other.heads.end()) continue;
        d.weight = kernels::add(d.weight, it->second.weight);
        d.bias = kernels::add(d.bias, it->second.bias);
    }
}

// ---------------------------------------------------------------------------
// Objectives

namespace {

Tracking tracking_for(const TrainConfig& cfg) {
    return cfg.first_order ? Tracking::first_order : Tracking::second_order;
}

int top_level(const ParamVars& vars) { return vars.heads.rbegin()->first; }

struct Transition {
    AdaptResult lower;       // adapted to T^h
    ad::Var generalization;  // query loss of T^{h+1} after the second stage
};

Transition transition(const ParamVars& vars, const TaskHierarchy& hier, std::size_t h, const TrainConfig& cfg) {
    const Tracking tracking = tracking_for(cfg);
    Transition t;
    t.lower = adapt(vars.network(static_cast<int>(h), false), hier.level(h), cfg.alpha, cfg.inner_steps, tracking);
    Network upper = t.lower.adapted;
    upper.head = vars.heads.at(static_cast<int>(h + 1));
    if (cfg.use_transform) upper.transform = vars.transform;
    t.generalization = adapt(upper, hier.level(h + 1), cfg.alpha, cfg.inner_steps, tracking).query_loss;
    return t;
}

void check_depth(const ParamVars& vars, const TaskHierarchy& hier, const TrainConfig& cfg) {
    if (hier.depth() != cfg.depth || vars.heads.size() != cfg.depth)
        throw ValidationError("hierarchy depth " + std::to_string(hier.depth()) + " / heads " +
                              std::to_string(vars.heads.size()) + " do not match configured depth " +
                              std::to_string(cfg.depth));
}

ad::Var accumulate_loss(const ad::Var& total, const ad::Var& term) { return total.defined() ? ad::add(total, term) : term; }

}  // namespace

ad::Var maml_meta_loss(const ParamVars& vars, std::span<const TaskInstance> tasks, const TrainConfig& cfg) {
    if (tasks.empty()) throw ValidationError("maml_meta_loss: empty task batch");
    const int level = top_level(vars);
    ad::Var total;
    for (const auto& task : tasks)
        total = accumulate_loss(
            total, adapt(vars.network(level, false), task, cfg.alpha, cfg.inner_steps, tracking_for(cfg)).query_loss);
    return total;
}

ad::Var generalization_loss(const ParamVars& vars, const TaskHierarchy& hierarchy, std::size_t level,
                            const TrainConfig& cfg) {
    if (level < 1 || level >= hierarchy.depth())
        throw ValidationError("generalization_loss: level " + std::to_string(level) + " outside 1.." +
                              std::to_string(hierarchy.depth() - 1));
    return transition(vars, hierarchy, level, cfg).generalization;
}

ad::Var hml_loss(const ParamVars& vars, std::span<const TaskHierarchy> hierarchies, const TrainConfig& cfg) {
    if (hierarchies.empty()) throw ValidationError("hml_loss: empty task batch");
    ad::Var total;
    for (const auto& hier : hierarchies) {
        check_depth(vars, hier, cfg);
        total = accumulate_loss(
            total,
            adapt(vars.network(top_level(vars), false), hier.top(), cfg.alpha, cfg.inner_steps, tracking_for(cfg)).query_loss);
        for (std::size_t h = 1; h < hier.depth(); ++h) total = ad::add(total, transition(vars, hier, h, cfg).generalization);
    }
    return total;
}

ad::Var omega_loss(const ModelParams& params, std::span<const TaskHierarchy> hierarchies, const TrainConfig& cfg) {
    return omega_loss(ParamVars::leaves(params, true), hierarchies, cfg);
}

ad::Var omega_loss(const ParamVars& caller, std::span<const TaskHierarchy> hierarchies, const TrainConfig& cfg) {
    if (!cfg.use_transform) throw ValidationError("omega_loss: use_transform is not set");
    if (hierarchies.empty()) throw ValidationError("omega_loss: empty task batch");
    ParamVars vars = caller;
    for (auto& d : vars.backbone) d = {d.weight.detach(), d.bias.detach()};
    for (auto& [level, d] : vars.heads) d = {d.weight.detach(), d.bias.detach()};
    ad::Var total;
    for (const auto& hier : hierarchies) {
        check_depth(vars, hier, cfg);
        for (std::size_t h = 1; h < hier.depth(); ++h)
            total = accumulate_loss(total, transition(vars, hier, h, cfg).generalization);
    }
    // Depth 1 has no transitions: a constant zero.
    return total.defined() ? total : ad::Var::constant(Array::scalar(0.0));
}

// ---------------------------------------------------------------------------
// Updates

void LossStats::push(double v) {
    ++count;
    last = v;
    mean += (v - mean) / static_cast<double>(count);
}

namespace {

Dense descend(const Dense& p, const Dense& g, double step) {
    return {kernels::sub(p.weight, kernels::scale(g.weight, step)), kernels::sub(p.bias, kernels::scale(g.bias, step))};
}

bool finite(const Dense& d) { return d.weight.all_finite() && d.bias.all_finite(); }

}  // namespace

MetaState meta_update(const MetaState& state, const ParamGrads& grads, double beta) {
    if (grads.backbone.size() != state.params.backbone.size())
        throw ShapeError("meta_update: gradient has " + std::to_string(grads.backbone.size()) + " backbone layers, model has " +
                         std::to_string(state.params.backbone.size()));
    MetaState next = state;
    for (std::size_t i = 0; i < next.params.backbone.size(); ++i) {
        const auto& g = grads.backbone[i];
        const auto& p = next.params.backbone[i];
        if (!g.weight.same_shape(p.weight) || !g.bias.same_shape(p.bias))
            throw ShapeError("meta_update: backbone layer " + std::to_string(i) + " gradient shape mismatch");
        next.params.backbone[i] = descend(p, g, beta);
        if (!finite(next.params.backbone[i])) throw HaltError("meta_update: non-finite backbone parameters", state.iteration);
    }
    for (const auto& [level, g] : grads.heads) {
        auto it = next.params.heads.find(level);
        if (it == next.params.heads.end()) throw ShapeError("meta_update: gradient for missing head " + std::to_string(level));
        if (!g.weight.same_shape(it->second.weight) || !g.bias.same_shape(it->second.bias))
            throw ShapeError("meta_update: head " + std::to_string(level) + " gradient shape mismatch");
        it->second = descend(it->second, g, beta);
        if (!finite(it->second)) throw HaltError("meta_update: non-finite head parameters", state.iteration);
    }
    return next;
}

// ---------------------------------------------------------------------------
// Task sources

TaskProvider generated_tasks(TaskSpec base) {
    return [base = std::move(base)](std::size_t structure, std::uint64_t seed, std::size_t index) -> std::optional<TaskInstance> {
        TaskSpec spec = base;
        std::visit(
            [structure](auto& s) {
                if constexpr (std::is_same_v<std::decay_t<decltype(s)>, ClassTaskSpec>)
                    s.ways = structure;
                else
                    s.output_dim = structure;
            },
            spec);
        return sample_task(spec, derive_seed(seed, "taskgen", index));
    };
}

TaskProvider listed_tasks(std::map<std::size_t, std::vector<TaskInstance>> tasks) {
    auto shared = std::make_shared<const std::map<std::size_t, std::vector<TaskInstance>>>(std::move(tasks));
    return [shared](std::size_t structure, std::uint64_t, std::size_t index) -> std::optional<TaskInstance> {
        const auto it = shared->find(structure);
        if (it == shared->end() || index >= it->second.size()) return std::nullopt;
        return it->second[index];
    };
}

Architecture training_architecture(std::size_t input_dim, std::vector<std::size_t> hidden, Activation activation,
                                   std::span<const std::size_t> level_sizes) {
    Architecture arch;
    arch.input_dim = input_dim;
    arch.hidden = std::move(hidden);
    arch.activation = activation;
    for (std::size_t h = 0; h < level_sizes.size(); ++h) arch.head_dims[static_cast<int>(h + 1)] = level_sizes[h];
    arch.validate();
    return arch;
}

// ---------------------------------------------------------------------------
// Training loops

namespace {

using Clock = std::chrono::steady_clock;

TaskInstance fetch(const TaskProvider& tasks, std::size_t structure, std::uint64_t seed, std::size_t index) {
    auto t = tasks(structure, seed, index);
    if (!t) throw ValidationError("training task source exhausted at index " + std::to_string(index));
    return std::move(*t);
}

Dense dense_from(const std::vector<ad::Var>& g, std::size_t offset) { return {g[offset].value(), g[offset + 1].value()}; }

struct TaskOutcome {
    ParamGrads grads;
    std::vector<Dense> omega_grad;  // empty unless the transform is trained
    double l_hml = 0.0;
    double l_gen = 0.0;
    std::vector<double> level_losses;
};

// Every gradient one task contributes, per the hierarchical update rules:
// theta from the task's HML loss, each phi^h from its own level's adapted
// query loss, omega from the generalization terms.
TaskOutcome task_outcome(const ModelParams& params, const TaskHierarchy& hier, const TrainConfig& cfg) {
    const ParamVars vars = ParamVars::leaves(params, cfg.use_transform);
    const std::size_t depth = hier.depth();
    const int top = static_cast<int>(depth);

    TaskOutcome out;
    out.level_losses.assign(depth, 0.0);
    std::vector<ad::Var> level_query(depth);
    ad::Var gen_total;
    for (std::size_t h = 1; h < depth; ++h) {
        Transition t = transition(vars, hier, h, cfg);
        level_query[h - 1] = t.lower.query_loss;
        gen_total = accumulate_loss(gen_total, t.generalization);
    }
    level_query[depth - 1] = adapt(vars.network(top, false), hier.top(), cfg.alpha, cfg.inner_steps, tracking_for(cfg)).query_loss;
    for (std::size_t h = 0; h < depth; ++h) out.level_losses[h] = level_query[h].value().item();

    const ad::Var l_hml = gen_total.defined() ? ad::add(level_query[depth - 1], gen_total) : level_query[depth - 1];
    out.l_hml = l_hml.value().item();
    out.l_gen = gen_total.defined() ? gen_total.value().item() : 0.0;

    const auto theta = vars.backbone_vars();
    out.grads.backbone.resize(vars.backbone.size());
    if (depth == 1) {
        // theta and phi^1 share one objective.
        auto wrt = theta;
        const auto head = vars.head_vars(top);
        wrt.insert(wrt.end(), head.begin(), head.end());
        const auto g = ad::grad(l_hml, wrt);
        for (std::size_t i = 0; i < vars.backbone.size(); ++i) out.grads.backbone[i] = dense_from(g, 2 * i);
        out.grads.heads[top] = dense_from(g, theta.size());
    } else {
        const auto g_theta = ad::grad(l_hml, theta);
        for (std::size_t i = 0; i < vars.backbone.size(); ++i) out.grads.backbone[i] = dense_from(g_theta, 2 * i);

        ad::Var phi_objective = level_query[0];
        for (std::size_t h = 1; h < depth; ++h) phi_objective = ad::add(phi_objective, level_query[h]);
        std::vector<ad::Var> heads;
        for (int level = 1; level <= top; ++level) {
            const auto hv = vars.head_vars(level);
            heads.insert(heads.end(), hv.begin(), hv.end());
        }
        const auto g_phi = ad::grad(phi_objective, heads);
        for (int level = 1; level <= top; ++level)
            out.grads.heads[level] = dense_from(g_phi, 2 * static_cast<std::size_t>(level - 1));

        if (cfg.use_transform) {
            const auto g_omega = ad::grad(gen_total, vars.transform_vars());
            out.omega_grad.push_back(dense_from(g_omega, 0));
        }
    }
    return out;
}

void check_heads(const ModelParams& params, std::span<const std::size_t> sizes) {
    if (params.heads.size() != sizes.size())
        throw ValidationError("model has " + std::to_string(params.heads.size()) + " heads but the hierarchy has " +
                              std::to_string(sizes.size()) + " levels");
    for (std::size_t h = 0; h < sizes.size(); ++h)
        if (params.head(static_cast<int>(h + 1)).out_dim() != sizes[h])
            throw ValidationError("head " + std::to_string(h + 1) + " output dim does not match level size " +
                                  std::to_string(sizes[h]));
}

}  // namespace

TrainResult train_hml(const TrainConfig& cfg, const TaskProvider& tasks, std::size_t train_structure, MetaState state,
                      const TrainHooks& hooks) {
    cfg.validate();
    const auto sizes = cfg.resolved_level_sizes(train_structure);
    check_heads(state.params, sizes);
    state.params.transform_enabled = cfg.use_transform;

    TrainResult result;
    const auto started = Clock::now();
    const std::size_t batch = cfg.meta_batch;
    for (; state.iteration < cfg.meta_iterations;) {
        const MetaState snapshot = state;
        try {
            std::vector<TaskHierarchy> hiers(batch);
            for (std::size_t m = 0; m < batch; ++m)
                hiers[m] = factorize(fetch(tasks, train_structure, cfg.seed, state.iteration * batch + m), sizes);

            std::vector<TaskOutcome> outcomes(batch);
            if (cfg.use_transform) {
                // omega moves after every task, so tasks run in order.
                for (std::size_t m = 0; m < batch; ++m) {
                    outcomes[m] = task_outcome(state.params, hiers[m], cfg);
                    if (outcomes[m].omega_grad.empty()) continue;
                    Dense& omega = state.params.transform;
                    omega = descend(omega, outcomes[m].omega_grad.front(), cfg.gamma);
                    if (!finite(omega)) throw NonFiniteError("non-finite transform parameters");
                }
            } else {
                std::vector<std::exception_ptr> errors(batch);
                const auto count = static_cast<std::ptrdiff_t>(batch);
#pragma omp parallel for schedule(static)
                for (std::ptrdiff_t m = 0; m < count; ++m) {
                    try {
                        outcomes[static_cast<std::size_t>(m)] = task_outcome(state.params, hiers[static_cast<std::size_t>(m)], cfg);
                    } catch (...) {
                        errors[static_cast<std::size_t>(m)] = std::current_exception();
                    }
                }
                for (const auto& e : errors)
                    if (e) std::rethrow_exception(e);
            }

            // Summed in task order so results do not depend on scheduling.
            ParamGrads total = ParamGrads::zeros_like(state.params);
            LogRecord rec;
            rec.iteration = state.iteration;
            rec.per_level_losses.assign(sizes.size(), 0.0);
            for (const auto& o : outcomes) {
                total.accumulate(o.grads);
                rec.l_hml += o.l_hml;
                if (cfg.use_transform) rec.l_omega += o.l_gen;
                for (std::size_t h = 0; h < sizes.size(); ++h) rec.per_level_losses[h] += o.level_losses[h];
            }
            if (!std::isfinite(rec.l_hml)) throw NonFiniteError("non-finite meta loss");

            state = meta_update(state, total, cfg.beta);
            state.loss.push(rec.l_hml);
            ++state.iteration;
            rec.wallclock = std::chrono::duration<double>(Clock::now() - started).count();
            result.log.push_back(rec);
            if (hooks.on_iteration) hooks.on_iteration(state, rec);
        } catch (const Error& e) {
            if (dynamic_cast<const NonFiniteError*>(&e) || dynamic_cast<const HaltError*>(&e))
                throw TrainingHalted(e.what(), snapshot.iteration, snapshot);
            throw;
        }
    }
    result.state = std::move(state);
    return result;
}

TrainResult train_maml(const TrainConfig& cfg, const TaskProvider& tasks, std::size_t train_structure, MetaState state,
                       const TrainHooks& hooks) {
    TrainConfig maml = cfg;
    maml.depth = 1;
    maml.level_sizes.clear();
    maml.use_transform = false;
    return train_hml(maml, tasks, train_structure, std::move(state), hooks);
}

TrainResult train_finetune_baseline(const TrainConfig& cfg, const TaskProvider& tasks, std::size_t train_structure,
                                    MetaState state, const TrainHooks& hooks) {
    cfg.validate();
    const int top = static_cast<int>(state.params.heads.size());
    if (top < 1 || state.params.head(top).out_dim() != train_structure)
        throw ValidationError("fine-tune: top head does not match the training structure");
    state.params.transform_enabled = false;

    TrainResult result;
    const auto started = Clock::now();
    for (; state.iteration < cfg.meta_iterations;) {
        const MetaState snapshot = state;
        try {
            std::vector<Array> xs, ys;
            std::vector<int> labels;
            bool classification = true;
            for (std::size_t m = 0; m < cfg.meta_batch; ++m) {
                const TaskInstance t = fetch(tasks, train_structure, cfg.seed, state.iteration * cfg.meta_batch + m);
                classification = t.is_classification();
                xs.push_back(t.support_x);
                xs.push_back(t.query_x);
                if (classification) {
                    labels.insert(labels.end(), t.support_labels.begin(), t.support_labels.end());
                    labels.insert(labels.end(), t.query_labels.begin(), t.query_labels.end());
                } else {
                    ys.push_back(t.support_y);
                    ys.push_back(t.query_y);
                }
            }
            const ParamVars vars = ParamVars::leaves(state.params, false);
            const Network net = vars.network(top, false);
            const ad::Var out = forward(net, ad::Var::constant(vstack(xs)));
            const ad::Var loss = classification ? ad::softmax_cross_entropy(out, std::move(labels))
                                                : ad::mse(out, ad::Var::constant(vstack(ys)));
            LogRecord rec;
            rec.iteration = state.iteration;
            rec.l_hml = checked_value(loss);
            rec.per_level_losses = {rec.l_hml};

            auto wrt = vars.backbone_vars();
            const auto head = vars.head_vars(top);
            wrt.insert(wrt.end(), head.begin(), head.end());
            const auto g = ad::grad(loss, wrt);
            ParamGrads grads;
            for (std::size_t i = 0; i < vars.backbone.size(); ++i) grads.backbone.push_back(dense_from(g, 2 * i));
            grads.heads[top] = dense_from(g, 2 * vars.backbone.size());

            state = meta_update(state, grads, cfg.beta);
            state.loss.push(rec.l_hml);
            ++state.iteration;
            rec.wallclock = std::chrono::duration<double>(Clock::now() - started).count();
            result.log.push_back(rec);
            if (hooks.on_iteration) hooks.on_iteration(state, rec);
        } catch (const Error& e) {
            if (dynamic_cast<const NonFiniteError*>(&e) || dynamic_cast<const HaltError*>(&e))
                throw TrainingHalted(e.what(), snapshot.iteration, snapshot);
            throw;
        }
    }
    result.state = std::move(state);
    return result;
}

}  // namespace hml
