#pragma once

// Synthetic few-shot task distributions and the output-space factorization
// that turns one task into a nested hierarchy of sub-tasks.

#include "hml/array.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <variant>
#include <vector>

namespace hml {

enum class LossKind { cross_entropy, mse };

// N-way k-shot classification over Gaussian clusters.
struct ClassTaskSpec {
    std::size_t ways = 5;
    std::size_t shots = 1;
    std::size_t queries_per_class = 15;
    std::size_t input_dim = 16;
    double prototype_spread = 1.0;  // stdev of class prototypes
    double noise_scale = 0.5;       // stdev of samples around a prototype

    void validate() const;
};

// Noiseless linear regression y = w^T x + b.
struct RegTaskSpec {
    std::size_t input_dim = 10;   // d_x
    std::size_t output_dim = 5;   // d_y
    std::size_t context_points = 5;
    std::size_t query_points = 20;
    std::pair<double, double> weight_range{-1.0, 1.0};
    std::pair<double, double> bias_range{-1.0, 1.0};

    void validate() const;
};

using TaskSpec = std::variant<ClassTaskSpec, RegTaskSpec>;

struct TaskInstance {
    LossKind loss = LossKind::cross_entropy;
    std::size_t output_size = 0;  // classes N, or d_y

    Array support_x;
    Array query_x;
    // Classification: labels 0..N-1. Regression: targets with output_size cols.
    std::vector<int> support_labels;
    std::vector<int> query_labels;
    Array support_y;
    Array query_y;

    // Provenance.
    TaskSpec spec;
    std::uint64_t seed = 0;
    // Regression ground truth (w is d_x x d_y, b is 1 x d_y).
    Array true_weight;
    Array true_bias;

    bool is_classification() const noexcept { return loss == LossKind::cross_entropy; }
    std::size_t support_size() const noexcept { return support_x.rows(); }
    std::size_t query_size() const noexcept { return query_x.rows(); }
};

// Levels T^1..T^H, each output space a strict prefix of the next; the last
// level is the source task itself.
struct TaskHierarchy {
    std::vector<TaskInstance> levels;

    std::size_t depth() const noexcept { return levels.size(); }
    const TaskInstance& level(std::size_t h) const { return levels.at(h - 1); }  // 1-based
    const TaskInstance& top() const { return levels.back(); }
};

TaskInstance sample_classification_task(const ClassTaskSpec& spec, std::uint64_t seed);
TaskInstance sample_regression_task(const RegTaskSpec& spec, std::uint64_t seed);
TaskInstance sample_task(const TaskSpec& spec, std::uint64_t seed);

// Level h keeps the first level_sizes[h-1] classes (or output coordinates).
TaskHierarchy factorize(const TaskInstance& task, std::span<const std::size_t> level_sizes);

// The default hierarchy sizes for depth H over an output of size n:
// n-H+1, ..., n.
std::vector<std::size_t> default_level_sizes(std::size_t output_size, std::size_t depth);

// JSON-lines task sets: one task per line.
void save_tasks(const std::filesystem::path& path, std::span<const TaskInstance> tasks);
std::vector<TaskInstance> load_tasks(const std::filesystem::path& path);

}  // namespace hml
