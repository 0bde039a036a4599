#include "hml/commands.hpp"

#include <CLI11.hpp>

int main(int argc, char** argv) {
    CLI::App app{"Hierarchical meta-learning engine and benchmark harness"};
    app.require_subcommand(1);

    std::string config, checkpoint, out, resume;
    std::size_t tasks = 5;

    auto* train = app.add_subcommand("train", "Meta-train a model (hml, maml or finetune per config)");
    train->add_option("--config", config, "Run config file")->required();
    train->add_option("--resume", resume, "Continue from this checkpoint");

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on cross-structure test tasks");
    eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    eval->add_option("--config", config, "Config providing the eval and task sections")->required();
    eval->add_option("--out", out, "Report path (default: <output_dir>/eval_report.json)");

    auto* bench_reg = app.add_subcommand("bench-regression", "Fine-tune / MAML / HML error-reduction table");
    bench_reg->add_option("--config", config, "Base config (task = regression)")->required();

    auto* bench_cls = app.add_subcommand("bench-classification", "Cross-structure accuracy table with transform ablation");
    bench_cls->add_option("--config", config, "Base config (task = classification)")->required();

    auto* features = app.add_subcommand("export-features", "Write backbone features of test tasks as CSV");
    features->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    features->add_option("--out", out, "CSV output path")->required();
    features->add_option("--tasks", tasks, "Number of tasks to export");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : hml::cli::kExitValidation;
    }

    namespace cli = hml::cli;
    if (*train) return cli::cmd_train(config, resume.empty() ? std::nullopt : std::optional<std::filesystem::path>(resume));
    if (*eval) return cli::cmd_eval(checkpoint, config, out.empty() ? std::nullopt : std::optional<std::filesystem::path>(out));
    if (*bench_reg) return cli::cmd_bench_regression(config);
    if (*bench_cls) return cli::cmd_bench_classification(config);
    if (*features) return cli::cmd_export_features(checkpoint, out, tasks);
    return cli::kExitValidation;
}
