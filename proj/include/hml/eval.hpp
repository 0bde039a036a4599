#pragma once

// Cross-structure evaluation: replace the output head with a fresh one of
// the test structure, adapt on the support set, score on the query set.

#include "hml/learner.hpp"
#include "hml/model.hpp"

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <span>
#include <vector>

namespace hml {

struct EvalSpec {
    std::vector<std::size_t> structures;  // N' (classification) or d_y (regression)
    std::size_t shots = 1;                // classification support per class
    std::size_t steps = 10;               // test-time adaptation steps
    double step_size = 0.01;
    std::size_t tasks = 100;              // per structure and seed
    std::vector<std::uint64_t> seeds{0};
    double head_init_scale = 0.0;         // scale of the replacement head

    void validate() const;
};

struct StructureResult {
    std::size_t structure = 0;
    double mean = 0.0;   // over every recorded task
    double stdev = 0.0;  // sample standard deviation over tasks
    std::vector<double> per_seed;    // mean per seed, in seed order
    std::vector<double> per_task;    // seed-major, task index minor
    std::vector<double> mean_trace;  // mean metric after k = 0..steps steps
    std::size_t task_count = 0;
    std::size_t degenerate = 0;      // regression tasks skipped with e_0 = 0
};

struct EvalReport {
    static constexpr int kFormatVersion = 1;

    std::string metric;  // "accuracy" or "r_err_percent"
    EvalSpec spec;
    bool used_transform = false;
    std::vector<StructureResult> results;

    const StructureResult& at(std::size_t structure) const;
};

nlohmann::json to_json(const EvalSpec& spec);
nlohmann::json to_json(const EvalReport& report);

// 100 * trace[k] / trace[0].
double error_reduction_rate(std::span<const double> trace, std::size_t k);

// Per task: fresh head for the test structure at the top level, `steps`
// adaptation steps of backbone and head (through omega when the model was
// trained with it), query accuracy.
EvalReport evaluate_classification(const ModelParams& params, const EvalSpec& spec, const TaskProvider& tasks);

// Per task: fresh head, query MSE trace e_0..e_steps, r_err = 100 e_k / e_0.
EvalReport evaluate_regression(const ModelParams& params, const EvalSpec& spec, const TaskProvider& tasks);

// CSV rows "label,feature_0,...": every support and query sample of every
// task, through the backbone (and omega if enabled). Regression rows carry
// the task index as label.
void export_features(const ModelParams& params, std::span<const TaskInstance> tasks, const std::filesystem::path& path);

}  // namespace hml
