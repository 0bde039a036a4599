#pragma once

// Training algorithms: inner-loop adaptation, the MAML meta-objective, the
// hierarchical (HML) objective with cross-level generalization terms, the
// transform (omega) objective, and the meta-training loops.

#include "hml/autodiff.hpp"
#include "hml/error.hpp"
#include "hml/model.hpp"
#include "hml/taskgen.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

namespace hml {

struct TrainConfig {
    double alpha = 0.01;  // inner step size
    double beta = 0.001;  // meta step size
    double gamma = 0.001; // transform step size
    std::size_t meta_batch = 4;
    std::size_t depth = 1;  // hierarchy depth H
    // Output size of each level; empty means default_level_sizes(N, depth).
    std::vector<std::size_t> level_sizes;
    std::size_t inner_steps = 1;
    bool first_order = false;
    bool use_transform = false;
    std::size_t meta_iterations = 1000;
    std::uint64_t seed = 0;

    void validate() const;
    std::vector<std::size_t> resolved_level_sizes(std::size_t output_size) const;
};

// Raised when a loss or update turns non-finite inside one task.
class NonFiniteError : public Error {
public:
    using Error::Error;
};

// How adapted parameters relate to the ones they started from.
enum class Tracking {
    none,          // plain values, no graph
    first_order,   // theta' = theta - alpha * g with g treated as constant
    second_order,  // g itself differentiable; exact meta-gradients
};

struct AdaptResult {
    Network adapted;
    std::vector<double> support_losses;  // inner_steps + 1 entries, step 0 first
    ad::Var query_loss;
    double query_accuracy = 0.0;  // classification only
};

// Loss of `net` on rows `x` against the task's targets.
ad::Var task_loss(const Network& net, const TaskInstance& task, bool query);
double accuracy(const Array& logits, std::span<const int> labels);

// `steps` full-batch gradient steps of (backbone, head) on the support set.
AdaptResult adapt(const Network& start, const TaskInstance& task, double alpha, std::size_t steps, Tracking tracking);

// Adapt backbone and head `level` of `params`. With track_graph the adapted
// parameters stay differentiable with respect to fresh leaves built from
// `params` (second order unless first_order is set).
AdaptResult inner_adapt(const ModelParams& params, int level, const TaskInstance& task, double alpha,
                        std::size_t steps, bool track_graph, bool first_order = false);

// Differentiable leaves for every parameter group.
struct ParamVars {
    std::vector<DenseVar> backbone;
    std::map<int, DenseVar> heads;
    DenseVar transform;
    Activation activation = Activation::relu;

    static ParamVars leaves(const ModelParams& p, bool transform_trainable);

    Network network(int level, bool with_transform) const;
    std::vector<ad::Var> backbone_vars() const;
    std::vector<ad::Var> head_vars(int level) const;
    std::vector<ad::Var> transform_vars() const { return {transform.weight, transform.bias}; }
};

// Gradient arrays shaped like the trainable groups.
struct ParamGrads {
    std::vector<Dense> backbone;
    std::map<int, Dense> heads;

    static ParamGrads zeros_like(const ModelParams& p);
    void accumulate(const ParamGrads& other);
};

// Sum over tasks of top-level query loss after inner adaptation.
ad::Var maml_meta_loss(const ParamVars& vars, std::span<const TaskInstance> tasks, const TrainConfig& cfg);

// Loss of T^{h+1} after adapting to T^h and then to T^{h+1} from the
// adapted backbone with the meta head phi^{h+1}; the second stage routes
// features through omega when cfg.use_transform is set.
ad::Var generalization_loss(const ParamVars& vars, const TaskHierarchy& hierarchy, std::size_t level,
                            const TrainConfig& cfg);

// Top-level adapted query loss plus every cross-level generalization loss,
// summed over the batch.
ad::Var hml_loss(const ParamVars& vars, std::span<const TaskHierarchy> hierarchies, const TrainConfig& cfg);

// Sum over tasks and transitions of the level-(h+1) adapted query loss with
// omega inserted; only omega receives gradient.
ad::Var omega_loss(const ModelParams& params, std::span<const TaskHierarchy> hierarchies, const TrainConfig& cfg);
// Same loss over the caller's leaves: theta and phi enter as detached
// copies, so only vars.transform can receive gradient.
ad::Var omega_loss(const ParamVars& vars, std::span<const TaskHierarchy> hierarchies, const TrainConfig& cfg);

struct LossStats {
    std::size_t count = 0;
    double mean = 0.0;
    double last = 0.0;

    void push(double v);
};

struct MetaState {
    ModelParams params;
    std::size_t iteration = 0;
    LossStats loss;
};

// theta -= beta * grads.backbone; phi^h -= beta * grads.heads[h]. Omega is
// not touched. Throws HaltError if any parameter turns non-finite.
MetaState meta_update(const MetaState& state, const ParamGrads& grads, double beta);

// Training stopped on a non-finite loss or parameter. Carries the state at
// the start of the failing iteration.
class TrainingHalted : public HaltError {
public:
    TrainingHalted(const std::string& what, std::size_t iteration, MetaState last_finite)
        : HaltError(what, iteration), last_finite_(std::move(last_finite)) {}

    const MetaState& last_finite_state() const noexcept { return last_finite_; }

private:
    MetaState last_finite_;
};

struct LogRecord {
    std::size_t iteration = 0;
    double l_hml = 0.0;
    double l_omega = 0.0;
    std::vector<double> per_level_losses;  // adapted query loss per level, summed over the batch
    double wallclock = 0.0;                // seconds since the run started
};

// (structure, seed, index) -> task. nullopt when the source is exhausted.
using TaskProvider = std::function<std::optional<TaskInstance>(std::size_t structure, std::uint64_t seed, std::size_t index)>;

// Tasks drawn from `base` with the output size set to `structure`; task
// `index` under `seed` uses sub-stream "taskgen".
TaskProvider generated_tasks(TaskSpec base);
// Fixed task lists per structure, replayed in order.
TaskProvider listed_tasks(std::map<std::size_t, std::vector<TaskInstance>> tasks);

struct TrainHooks {
    // Called after every completed meta-iteration.
    std::function<void(const MetaState&, const LogRecord&)> on_iteration;
};

struct TrainResult {
    MetaState state;
    std::vector<LogRecord> log;
};

// Architecture with one head per hierarchy level.
Architecture training_architecture(std::size_t input_dim, std::vector<std::size_t> hidden, Activation activation,
                                   std::span<const std::size_t> level_sizes);

// Meta-training loops. Each continues from `state` (iteration counter
// included) until cfg.meta_iterations.
TrainResult train_hml(const TrainConfig& cfg, const TaskProvider& tasks, std::size_t train_structure, MetaState state,
                      const TrainHooks& hooks = {});
TrainResult train_maml(const TrainConfig& cfg, const TaskProvider& tasks, std::size_t train_structure, MetaState state,
                       const TrainHooks& hooks = {});
// Pooled supervised training of (theta, phi^H); beta is the learning rate.
TrainResult train_finetune_baseline(const TrainConfig& cfg, const TaskProvider& tasks, std::size_t train_structure,
                                    MetaState state, const TrainHooks& hooks = {});

}  // namespace hml
