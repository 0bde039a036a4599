#include "hml/commands.hpp"

#include "hml/error.hpp"
#include "hml/rng.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iostream>
#include <sstream>

namespace hml::cli {

using nlohmann::json;

LogLevel log_level() {
    const char* env = std::getenv("HML_LOG_LEVEL");
    if (!env) return LogLevel::info;
    const std::string v = env;
    if (v == "quiet") return LogLevel::quiet;
    if (v == "debug") return LogLevel::debug;
    return LogLevel::info;
}

namespace {

void log(LogLevel level, const std::string& msg) {
    const LogLevel current = log_level();
    if (current == LogLevel::quiet || (level == LogLevel::debug && current != LogLevel::debug)) return;
    std::cerr << "[hml] " << msg << '\n';
}

void error(const std::string& msg) { std::cerr << "[hml] error: " << msg << '\n'; }

template <class F>
int guarded(F&& body) {
    try {
        return body();
    } catch (const ValidationError& e) {
        error(e.what());
        return kExitValidation;
    } catch (const json::exception& e) {
        error(std::string("malformed input: ") + e.what());
        return kExitValidation;
    } catch (const HaltError& e) {
        error(e.what());
        return kExitHalted;
    } catch (const std::exception& e) {
        error(e.what());
        return kExitError;
    }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("write failed for " + path.string());
}

json record_json(const LogRecord& r) {
    return {{"iteration", r.iteration},
            {"l_hml", r.l_hml},
            {"l_omega", r.l_omega},
            {"per_level_losses", r.per_level_losses},
            {"wallclock", r.wallclock}};
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

}  // namespace

MetaState initial_state(const RunConfig& cfg) {
    MetaState s;
    s.params = init_params(cfg.architecture(), derive_seed(cfg.train.seed, "init"));
    s.params.transform_enabled = cfg.train.use_transform;
    return s;
}

TaskProvider training_tasks(const RunConfig& cfg) { return generated_tasks(cfg.task_spec()); }
TaskProvider evaluation_tasks(const RunConfig& cfg) { return generated_tasks(cfg.eval_task_spec()); }

TrainResult train_method(const RunConfig& cfg, MetaState start, const TrainHooks& hooks) {
    cfg.validate();
    const auto tasks = training_tasks(cfg);
    switch (cfg.method) {
        case Method::hml: return train_hml(cfg.train, tasks, cfg.train_structure(), std::move(start), hooks);
        case Method::maml: return train_maml(cfg.train, tasks, cfg.train_structure(), std::move(start), hooks);
        case Method::finetune:
            return train_finetune_baseline(cfg.train, tasks, cfg.train_structure(), std::move(start), hooks);
    }
    throw ValidationError("unknown method");
}

EvalReport evaluate_run(const RunConfig& cfg, const ModelParams& params) {
    const auto tasks = evaluation_tasks(cfg);
    return cfg.task == TaskKind::classification ? evaluate_classification(params, cfg.eval, tasks)
                                                : evaluate_regression(params, cfg.eval, tasks);
}

// ---------------------------------------------------------------------------
// Benchmarks

const MethodRun& BenchReport::method(const std::string& name) const {
    for (const auto& m : methods)
        if (m.name == name) return m;
    throw ValidationError("bench report has no method " + name);
}

double BenchReport::mean(const std::string& name, std::size_t structure, std::size_t k) const {
    const auto& m = method(name);
    double total = 0.0;
    for (const auto& rep : m.per_seed) {
        const auto& r = rep.at(structure);
        total += k == std::string::npos ? r.mean : r.mean_trace.at(k);
    }
    return total / static_cast<double>(m.per_seed.size());
}

namespace {

double standard_error(const std::vector<double>& v) {
    const std::size_t n = v.size();
    if (n < 2) return 0.0;
    double mu = 0.0;
    for (double x : v) mu += x;
    mu /= static_cast<double>(n);
    double ss = 0.0;
    for (double x : v) ss += (x - mu) * (x - mu);
    return std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n));
}

}  // namespace

double BenchReport::paired_se(const std::string& a, const std::string& b, std::size_t structure) const {
    const auto& ma = method(a);
    const auto& mb = method(b);
    std::vector<double> diff;
    for (std::size_t i = 0; i < ma.per_seed.size(); ++i)
        diff.push_back(ma.per_seed[i].at(structure).mean - mb.per_seed.at(i).at(structure).mean);
    return standard_error(diff);
}

double BenchReport::seed_se(const std::string& name, std::size_t structure) const {
    std::vector<double> v;
    for (const auto& rep : method(name).per_seed) v.push_back(rep.at(structure).mean);
    return standard_error(v);
}

RunConfig variant(const RunConfig& base, Method method, bool use_transform) {
    RunConfig c = base;
    c.method = method;
    if (method == Method::hml) {
        c.train.use_transform = use_transform;
    } else {
        c.train.depth = 1;
        c.train.level_sizes.clear();
        c.train.use_transform = false;
    }
    c.run_id = base.run_id + "-" + to_string(method) + (method == Method::hml && !use_transform ? "-no-transform" : "");
    c.validate();
    return c;
}

namespace {

BenchReport run_bench(const RunConfig& base, const std::vector<std::pair<std::string, RunConfig>>& variants) {
    const auto started = std::chrono::steady_clock::now();
    BenchReport report;
    report.metric = base.task == TaskKind::classification ? "accuracy" : "r_err_percent";
    report.structures = base.eval.structures;
    for (const auto& [name, cfg] : variants) report.methods.push_back({name, cfg, std::vector<EvalReport>(base.bench_seeds.size())});

    struct Job {
        std::size_t method;
        std::size_t seed;
    };
    std::vector<Job> jobs;
    for (std::size_t m = 0; m < report.methods.size(); ++m)
        for (std::size_t s = 0; s < base.bench_seeds.size(); ++s) jobs.push_back({m, s});

    std::vector<std::exception_ptr> errors(jobs.size());
    const auto count = static_cast<std::ptrdiff_t>(jobs.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t j = 0; j < count; ++j) {
        const Job& job = jobs[static_cast<std::size_t>(j)];
        try {
            MethodRun& run = report.methods[job.method];
            RunConfig cfg = run.config;
            cfg.train.seed = base.bench_seeds[job.seed];
            const TrainResult trained = train_method(cfg, initial_state(cfg));
            run.per_seed[job.seed] = evaluate_run(cfg, trained.state.params);
            log(LogLevel::debug, "bench: " + run.name + " seed " + std::to_string(cfg.train.seed) + " done");
        } catch (...) {
            errors[static_cast<std::size_t>(j)] = std::current_exception();
        }
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return report;
}

}  // namespace

BenchReport bench_regression(const RunConfig& base) {
    if (base.task != TaskKind::regression) throw ValidationError("bench-regression needs task = regression");
    return run_bench(base, {{"finetune", variant(base, Method::finetune, false)},
                            {"maml", variant(base, Method::maml, false)},
                            {"hml", variant(base, Method::hml, true)}});
}

BenchReport bench_classification(const RunConfig& base) {
    if (base.task != TaskKind::classification) throw ValidationError("bench-classification needs task = classification");
    return run_bench(base, {{"finetune", variant(base, Method::finetune, false)},
                            {"maml", variant(base, Method::maml, false)},
                            {"hml_no_transform", variant(base, Method::hml, false)},
                            {"hml", variant(base, Method::hml, true)}});
}

namespace {

std::string display_name(const std::string& name) {
    if (name == "finetune") return "Fine-tune";
    if (name == "maml") return "MAML";
    if (name == "hml_no_transform") return "HML (w/o transform)";
    if (name == "hml") return "HML";
    return name;
}

std::size_t configured_steps(const BenchReport& r) { return r.methods.front().config.eval.steps; }

}  // namespace

std::string regression_table_markdown(const BenchReport& r) {
    std::ostringstream out;
    out << "Error reduction rate (%) after " << configured_steps(r) << " adaptation steps; 1-step value in brackets.\n\n";
    out << "| d_y |";
    for (auto s : r.structures) out << ' ' << s << " |";
    out << "\n|---|";
    for (std::size_t i = 0; i < r.structures.size(); ++i) out << "---|";
    out << '\n';
    for (const auto& m : r.methods) {
        out << "| " << display_name(m.name) << " |";
        for (auto s : r.structures) out << ' ' << fixed(r.mean(m.name, s), 1) << " (" << fixed(r.mean(m.name, s, 1), 1) << ") |";
        out << '\n';
    }
    return out.str();
}

std::string classification_table_markdown(const BenchReport& r) {
    std::ostringstream out;
    out << "Query accuracy (%) after " << configured_steps(r) << " adaptation steps, mean +/- standard error over "
        << r.methods.front().per_seed.size() << " training seeds.\n\n";
    out << "| N' |";
    for (auto s : r.structures) out << ' ' << s << "-way |";
    out << "\n|---|";
    for (std::size_t i = 0; i < r.structures.size(); ++i) out << "---|";
    out << '\n';
    for (const auto& m : r.methods) {
        out << "| " << display_name(m.name) << " |";
        for (auto s : r.structures)
            out << ' ' << fixed(100.0 * r.mean(m.name, s), 2) << " +/- " << fixed(100.0 * r.seed_se(m.name, s), 2) << " |";
        out << '\n';
    }
    return out.str();
}

std::string bench_csv(const BenchReport& r) {
    std::ostringstream out;
    out << "method,structure,steps,metric,mean,seed_se,seeds\n";
    const std::size_t steps = configured_steps(r);
    for (const auto& m : r.methods)
        for (auto s : r.structures) {
            std::vector<std::size_t> ks{steps};
            if (r.metric == "r_err_percent" && steps > 1) ks.insert(ks.begin(), 1);
            for (auto k : ks)
                out << m.name << ',' << s << ',' << k << ',' << r.metric << ',' << fixed(r.mean(m.name, s, k), 6) << ','
                    << fixed(r.seed_se(m.name, s), 6) << ',' << m.per_seed.size() << '\n';
        }
    return out.str();
}

namespace {

json bench_json(const RunConfig& base, const BenchReport& r) {
    json methods = json::array();
    for (const auto& m : r.methods) {
        json reports = json::array();
        for (const auto& rep : m.per_seed) reports.push_back(to_json(rep));
        methods.push_back({{"name", m.name}, {"config", to_json(m.config)}, {"reports", reports}});
    }
    return {{"config", to_json(base)}, {"metric", r.metric}, {"seconds", r.seconds}, {"methods", methods}};
}

int write_bench(const RunConfig& base, const BenchReport& r, const std::string& stem, const std::string& markdown) {
    std::filesystem::create_directories(base.output_dir);
    write_text(base.output_dir / (stem + ".md"), "<!-- config: " + to_json(base).dump() + " -->\n" + markdown);
    write_text(base.output_dir / (stem + ".csv"), "# config: " + to_json(base).dump() + "\n" + bench_csv(r));
    write_text(base.output_dir / (stem + ".json"), bench_json(base, r).dump(2) + "\n");
    if (log_level() != LogLevel::quiet) std::cout << markdown;
    log(LogLevel::info, stem + " finished in " + fixed(r.seconds, 1) + " s; tables in " + base.output_dir.string());
    return kExitOk;
}

}  // namespace

// ---------------------------------------------------------------------------
// Commands

int cmd_train(const std::filesystem::path& config, const std::optional<std::filesystem::path>& resume) {
    return guarded([&] {
        const RunConfig cfg = load_config(config);
        std::filesystem::create_directories(cfg.output_dir);
        MetaState state = resume ? load_checkpoint(*resume).state : initial_state(cfg);
        log(LogLevel::info, "train " + to_string(cfg.method) + " from iteration " + std::to_string(state.iteration) + " to " +
                                std::to_string(cfg.train.meta_iterations));

        const auto log_path = cfg.output_dir / "train_log.jsonl";
        std::ofstream log_file(log_path, resume ? std::ios::app : std::ios::trunc);
        if (!log_file) throw Error("cannot write " + log_path.string());
        if (!resume) log_file << json{{"type", "header"}, {"config", to_json(cfg)}}.dump() << '\n';

        TrainHooks hooks;
        hooks.on_iteration = [&](const MetaState& s, const LogRecord& rec) {
            log_file << record_json(rec).dump() << '\n';
            if (cfg.checkpoint_every > 0 && s.iteration % cfg.checkpoint_every == 0) {
                log_file.flush();
                save_checkpoint(cfg.output_dir / ("checkpoint_" + std::to_string(s.iteration) + ".bin"), {cfg, s});
            }
            if (log_level() == LogLevel::debug)
                log(LogLevel::debug, "iteration " + std::to_string(rec.iteration) + " l_hml " + std::to_string(rec.l_hml));
        };
        try {
            const TrainResult result = train_method(cfg, std::move(state), hooks);
            log_file.flush();
            save_checkpoint(cfg.output_dir / "checkpoint.bin", {cfg, result.state});
        } catch (const TrainingHalted& halted) {
            log_file.flush();
            save_checkpoint(cfg.output_dir / "checkpoint_halt.bin", {cfg, halted.last_finite_state()});
            throw;
        }
        log(LogLevel::info, "wrote " + (cfg.output_dir / "checkpoint.bin").string());
        return kExitOk;
    });
}

int cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& config,
             const std::optional<std::filesystem::path>& out) {
    return guarded([&] {
        const Checkpoint ckpt = load_checkpoint(checkpoint);
        const RunConfig cfg = load_config(config);
        const EvalReport report = evaluate_run(cfg, ckpt.state.params);
        const auto path = out ? *out : cfg.output_dir / "eval_report.json";
        if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
        const json doc{{"report", to_json(report)}, {"config", to_json(cfg)}, {"checkpoint_config", to_json(ckpt.config)},
                       {"checkpoint_iteration", ckpt.state.iteration}};
        write_text(path, doc.dump(2) + "\n");
        for (const auto& r : report.results)
            log(LogLevel::info, report.metric + " @" + std::to_string(r.structure) + ": " + fixed(r.mean, 4) + " +/- " +
                                    fixed(r.stdev, 4) + " over " + std::to_string(r.task_count) + " tasks");
        return kExitOk;
    });
}

int cmd_bench_regression(const std::filesystem::path& config) {
    return guarded([&] {
        const RunConfig base = load_config(config);
        const BenchReport r = bench_regression(base);
        return write_bench(base, r, "bench_regression", regression_table_markdown(r));
    });
}

int cmd_bench_classification(const std::filesystem::path& config) {
    return guarded([&] {
        const RunConfig base = load_config(config);
        const BenchReport r = bench_classification(base);
        return write_bench(base, r, "bench_classification", classification_table_markdown(r));
    });
}

int cmd_export_features(const std::filesystem::path& checkpoint, const std::filesystem::path& out, std::size_t tasks) {
    return guarded([&] {
        if (tasks == 0) throw ValidationError("export-features: --tasks must be positive");
        const Checkpoint ckpt = load_checkpoint(checkpoint);
        const RunConfig& cfg = ckpt.config;
        std::size_t structure = 0;
        for (auto s : cfg.eval.structures) structure = std::max(structure, s);
        const auto provider = evaluation_tasks(cfg);
        std::vector<TaskInstance> list;
        for (std::size_t i = 0; i < tasks; ++i) list.push_back(*provider(structure, derive_seed(cfg.eval.seeds.front(), "export"), i));
        if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
        export_features(ckpt.state.params, list, out);
        log(LogLevel::info, "wrote features for " + std::to_string(tasks) + " tasks to " + out.string());
        return kExitOk;
    });
}

}  // namespace hml::cli
