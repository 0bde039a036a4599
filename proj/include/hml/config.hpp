#pragma once

// Run configuration: a flat `key = value` text file. Lines starting with '#'
// are comments; lists are comma separated. Unknown or repeated keys are
// rejected. See configs/ for annotated examples and README.md for the
// schema.

#include "hml/eval.hpp"
#include "hml/learner.hpp"
#include "hml/taskgen.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace hml {

enum class Method { hml, maml, finetune };
enum class TaskKind { classification, regression };

std::string to_string(Method m);
std::string to_string(TaskKind k);

struct RunConfig {
    static constexpr int kVersion = 1;

    Method method = Method::hml;
    TaskKind task = TaskKind::classification;
    std::string run_id = "run";
    std::filesystem::path output_dir = "runs/run";
    std::size_t checkpoint_every = 0;  // 0: only the final checkpoint

    std::vector<std::size_t> hidden{40, 40};
    Activation activation = Activation::relu;

    TrainConfig train;
    ClassTaskSpec classification;
    RegTaskSpec regression;
    EvalSpec eval;

    // Training seeds used by the benchmark commands.
    std::vector<std::uint64_t> bench_seeds{1};

    void validate() const;

    std::size_t train_structure() const;
    TaskSpec task_spec() const;
    // Task spec used at test time (shots from the eval section).
    TaskSpec eval_task_spec() const;
    Architecture architecture() const;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

// Canonical echo embedded in every output artifact.
nlohmann::json to_json(const RunConfig& cfg);
RunConfig config_from_json(const nlohmann::json& j);

}  // namespace hml
