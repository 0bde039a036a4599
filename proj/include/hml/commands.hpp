#pragma once

// Entry points behind the command-line tool, plus the benchmark drivers the
// acceptance suite calls directly.
//
// Exit codes: 0 success, 2 validation failure, 3 training halted on a
// non-finite value (partial artifacts are flushed first), 1 anything else.

#include "hml/checkpoint.hpp"
#include "hml/config.hpp"
#include "hml/eval.hpp"
#include "hml/learner.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace hml::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitHalted = 3;

// Log verbosity from HML_LOG_LEVEL: quiet, info (default) or debug.
enum class LogLevel { quiet, info, debug };
LogLevel log_level();

MetaState initial_state(const RunConfig& cfg);
TaskProvider training_tasks(const RunConfig& cfg);
TaskProvider evaluation_tasks(const RunConfig& cfg);

// Dispatch on cfg.method.
TrainResult train_method(const RunConfig& cfg, MetaState start, const TrainHooks& hooks = {});
EvalReport evaluate_run(const RunConfig& cfg, const ModelParams& params);

struct MethodRun {
    std::string name;
    RunConfig config;
    std::vector<EvalReport> per_seed;  // one report per bench seed
};

struct BenchReport {
    std::string metric;
    std::vector<std::size_t> structures;
    std::vector<MethodRun> methods;
    double seconds = 0.0;

    const MethodRun& method(const std::string& name) const;
    // Mean over bench seeds of the per-seed mean after `k` adaptation steps
    // (k = npos: the configured step count).
    double mean(const std::string& name, std::size_t structure, std::size_t k = std::string::npos) const;
    // Standard error of the per-seed paired difference a - b.
    double paired_se(const std::string& a, const std::string& b, std::size_t structure) const;
    // Standard error over bench seeds of one method's per-seed means.
    double seed_se(const std::string& name, std::size_t structure) const;
};

// Method variants trained by the benchmarks, derived from one base config.
RunConfig variant(const RunConfig& base, Method method, bool use_transform);

BenchReport bench_regression(const RunConfig& base);
BenchReport bench_classification(const RunConfig& base);

std::string regression_table_markdown(const BenchReport& r);
std::string classification_table_markdown(const BenchReport& r);
std::string bench_csv(const BenchReport& r);

// Command implementations; each returns a process exit code.
int cmd_train(const std::filesystem::path& config, const std::optional<std::filesystem::path>& resume);
int cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& config,
             const std::optional<std::filesystem::path>& out);
int cmd_bench_regression(const std::filesystem::path& config);
int cmd_bench_classification(const std::filesystem::path& config);
int cmd_export_features(const std::filesystem::path& checkpoint, const std::filesystem::path& out, std::size_t tasks);

}  // namespace hml::cli
