#include "hml/eval.hpp"

#include "hml/error.hpp"
#include "hml/rng.hpp"

#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <numeric>

namespace hml {

using nlohmann::json;

void EvalSpec::validate() const {
    if (structures.empty()) throw ValidationError("eval: at least one test structure is required");
    for (auto s : structures)
        if (s == 0) throw ValidationError("eval: test structures must be positive");
    if (tasks < 1) throw ValidationError("eval: task count must be >= 1");
    if (seeds.empty()) throw ValidationError("eval: at least one seed is required");
    if (shots < 1) throw ValidationError("eval: shots must be >= 1");
    if (!(step_size >= 0.0)) throw ValidationError("eval: step size must be non-negative");
}

const StructureResult& EvalReport::at(std::size_t structure) const {
    for (const auto& r : results)
        if (r.structure == structure) return r;
    throw ValidationError("eval report has no structure " + std::to_string(structure));
}

json to_json(const EvalSpec& spec) {
    return {{"structures", spec.structures}, {"shots", spec.shots},     {"steps", spec.steps},
            {"step_size", spec.step_size},   {"tasks", spec.tasks},     {"seeds", spec.seeds},
            {"head_init_scale", spec.head_init_scale}};
}

json to_json(const EvalReport& report) {
    json results = json::array();
    for (const auto& r : report.results)
        results.push_back({{"structure", r.structure},
                           {"mean", r.mean},
                           {"stdev", r.stdev},
                           {"per_seed", r.per_seed},
                           {"per_task", r.per_task},
                           {"mean_trace", r.mean_trace},
                           {"task_count", r.task_count},
                           {"degenerate", r.degenerate}});
    return {{"format_version", EvalReport::kFormatVersion},
            {"metric", report.metric},
            {"used_transform", report.used_transform},
            {"spec", to_json(report.spec)},
            {"results", std::move(results)}};
}

double error_reduction_rate(std::span<const double> trace, std::size_t k) {
    if (trace.size() <= k) throw ValidationError("error_reduction_rate: trace shorter than k + 1");
    if (trace[0] == 0.0) throw DegenerateTaskError("error_reduction_rate: initial error is zero");
    return 100.0 * trace[k] / trace[0];
}

namespace {

struct Job {
    std::size_t structure_index;
    std::size_t seed_index;
    std::size_t task_index;
};

struct TaskTrace {
    std::vector<double> metric;  // k = 0..steps
    bool degenerate = false;
};

double query_metric(const Network& net, const TaskInstance& task) {
    ad::NoGradGuard no_grad;
    const Array out = forward(net, ad::Var::constant(task.query_x)).value();
    if (task.is_classification()) return accuracy(out, task.query_labels);
    return ad::mse(ad::Var::constant(out), ad::Var::constant(task.query_y)).value().item();
}

TaskTrace run_task(const ModelParams& params, const EvalSpec& spec, const TaskProvider& tasks, const Job& job,
                   bool classification) {
    const std::size_t structure = spec.structures[job.structure_index];
    const std::uint64_t seed = spec.seeds[job.seed_index];
    auto task = tasks(structure, derive_seed(seed, "eval"), job.task_index);
    if (!task) throw Error("eval: task source exhausted at structure " + std::to_string(structure) + ", index " +
                           std::to_string(job.task_index));
    if (task->is_classification() != classification) throw ValidationError("eval: task kind does not match the protocol");
    if (task->output_size != structure) throw ValidationError("eval: task output size does not match the structure");
    if (classification && task->support_size() != structure * spec.shots)
        throw ValidationError("eval: task support size does not match ways x shots");

    const int top = params.heads.rbegin()->first;
    const ModelParams fresh = replace_head(params, top, structure, spec.head_init_scale,
                                           derive_seed(seed, "eval-head", structure * 1000003ULL + job.task_index));
    const ParamVars vars = ParamVars::leaves(fresh, false);
    Network net = vars.network(top, fresh.transform_enabled);

    TaskTrace trace;
    trace.metric.push_back(query_metric(net, *task));
    for (std::size_t k = 0; k < spec.steps; ++k) {
        net = adapt(net, *task, spec.step_size, 1, Tracking::none).adapted;
        trace.metric.push_back(query_metric(net, *task));
    }
    if (!classification) {
        if (trace.metric[0] == 0.0) {
            trace.degenerate = true;
        } else {
            std::vector<double> rates;
            for (std::size_t k = 0; k < trace.metric.size(); ++k) rates.push_back(error_reduction_rate(trace.metric, k));
            trace.metric = std::move(rates);
        }
    }
    return trace;
}

double mean_of(std::span<const double> v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

EvalReport evaluate(const ModelParams& params, const EvalSpec& spec, const TaskProvider& tasks, bool classification) {
    spec.validate();
    std::vector<Job> jobs;
    for (std::size_t s = 0; s < spec.structures.size(); ++s)
        for (std::size_t r = 0; r < spec.seeds.size(); ++r)
            for (std::size_t i = 0; i < spec.tasks; ++i) jobs.push_back({s, r, i});

    std::vector<TaskTrace> traces(jobs.size());
    std::vector<std::exception_ptr> errors(jobs.size());
    const auto count = static_cast<std::ptrdiff_t>(jobs.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t j = 0; j < count; ++j) {
        const auto idx = static_cast<std::size_t>(j);
        try {
            traces[idx] = run_task(params, spec, tasks, jobs[idx], classification);
        } catch (...) {
            errors[idx] = std::current_exception();
        }
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

    EvalReport report;
    report.metric = classification ? "accuracy" : "r_err_percent";
    report.spec = spec;
    report.used_transform = params.transform_enabled;
    std::size_t j = 0;
    for (std::size_t s = 0; s < spec.structures.size(); ++s) {
        StructureResult res;
        res.structure = spec.structures[s];
        std::vector<std::vector<double>> traces_kept;
        for (std::size_t r = 0; r < spec.seeds.size(); ++r) {
            std::vector<double> seed_values;
            for (std::size_t i = 0; i < spec.tasks; ++i, ++j) {
                const TaskTrace& t = traces[j];
                if (t.degenerate) {
                    ++res.degenerate;
                    continue;
                }
                seed_values.push_back(t.metric.back());
                traces_kept.push_back(t.metric);
            }
            res.per_seed.push_back(mean_of(seed_values));
            res.per_task.insert(res.per_task.end(), seed_values.begin(), seed_values.end());
        }
        res.task_count = res.per_task.size();
        res.mean = mean_of(res.per_task);
        if (res.per_task.size() > 1) {
            double ss = 0.0;
            for (double v : res.per_task) ss += (v - res.mean) * (v - res.mean);
            res.stdev = std::sqrt(ss / static_cast<double>(res.per_task.size() - 1));
        }
        res.mean_trace.assign(spec.steps + 1, 0.0);
        for (std::size_t k = 0; k <= spec.steps; ++k) {
            std::vector<double> at_k;
            for (const auto& t : traces_kept) at_k.push_back(t[k]);
            res.mean_trace[k] = mean_of(at_k);
        }
        report.results.push_back(std::move(res));
    }
    return report;
}

}  // namespace

EvalReport evaluate_classification(const ModelParams& params, const EvalSpec& spec, const TaskProvider& tasks) {
    return evaluate(params, spec, tasks, true);
}

EvalReport evaluate_regression(const ModelParams& params, const EvalSpec& spec, const TaskProvider& tasks) {
    return evaluate(params, spec, tasks, false);
}

void export_features(const ModelParams& params, std::span<const TaskInstance> tasks, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("export_features: cannot open " + path.string());
    const std::size_t dim = params.arch.feature_dim();
    out << "label";
    for (std::size_t j = 0; j < dim; ++j) out << ",feature_" << j;
    out << '\n';
    char buf[32];
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        const auto& task = tasks[t];
        auto emit = [&](const Array& x, const std::vector<int>& labels) {
            const Array f = feature_values(params, x, params.transform_enabled);
            for (std::size_t i = 0; i < f.rows(); ++i) {
                out << (task.is_classification() ? static_cast<long long>(labels[i]) : static_cast<long long>(t));
                for (std::size_t j = 0; j < f.cols(); ++j) {
                    std::snprintf(buf, sizeof buf, "%.17g", f(i, j));
                    out << ',' << buf;
                }
                out << '\n';
            }
        };
        emit(task.support_x, task.support_labels);
        emit(task.query_x, task.query_labels);
    }
    if (!out) throw Error("export_features: write failed for " + path.string());
}

}  // namespace hml
