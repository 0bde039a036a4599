#include "hml/taskgen.hpp"

#include "hml/error.hpp"
#include "hml/rng.hpp"

#include <json.hpp>

#include <fstream>
#include <random>

namespace hml {

using nlohmann::json;

void ClassTaskSpec::validate() const {
    if (ways < 2) throw ValidationError("classification task: ways must be >= 2");
    if (shots < 1) throw ValidationError("classification task: shots must be >= 1");
    if (queries_per_class < 1) throw ValidationError("classification task: queries_per_class must be >= 1");
    if (input_dim < 1) throw ValidationError("classification task: input_dim must be >= 1");
    if (!(prototype_spread >= 0.0) || !(noise_scale >= 0.0))
        throw ValidationError("classification task: spread and noise must be non-negative");
}

void RegTaskSpec::validate() const {
    if (input_dim < 1 || output_dim < 1 || context_points < 1 || query_points < 1)
        throw ValidationError("regression task: d_x, d_y, context_points and query_points must be >= 1");
    if (!(weight_range.first <= weight_range.second) || !(bias_range.first <= bias_range.second))
        throw ValidationError("regression task: coefficient ranges must satisfy lo <= hi");
}

namespace {

double uniform(Engine& rng, std::pair<double, double> range) {
    if (range.first == range.second) return range.first;
    return std::uniform_real_distribution<double>(range.first, range.second)(rng);
}

}  // namespace

TaskInstance sample_classification_task(const ClassTaskSpec& spec, std::uint64_t seed) {
    spec.validate();
    Engine rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    const std::size_t d = spec.input_dim;
    Array prototypes(spec.ways, d);
    for (double& v : prototypes.data()) v = spec.prototype_spread * normal(rng);

    TaskInstance t;
    t.loss = LossKind::cross_entropy;
    t.output_size = spec.ways;
    t.spec = spec;
    t.seed = seed;
    t.support_x = Array(spec.ways * spec.shots, d);
    t.query_x = Array(spec.ways * spec.queries_per_class, d);

    auto draw = [&](Array& x, std::size_t row, std::size_t cls) {
        for (std::size_t j = 0; j < d; ++j) x(row, j) = prototypes(cls, j) + spec.noise_scale * normal(rng);
    };
    // Class-major rows: all samples of class 0, then class 1, ...
    for (std::size_t c = 0; c < spec.ways; ++c) {
        for (std::size_t s = 0; s < spec.shots; ++s) {
            draw(t.support_x, c * spec.shots + s, c);
            t.support_labels.push_back(static_cast<int>(c));
        }
        for (std::size_t s = 0; s < spec.queries_per_class; ++s) {
            draw(t.query_x, c * spec.queries_per_class + s, c);
            t.query_labels.push_back(static_cast<int>(c));
        }
    }
    return t;
}

TaskInstance sample_regression_task(const RegTaskSpec& spec, std::uint64_t seed) {
    spec.validate();
    Engine rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    TaskInstance t;
    t.loss = LossKind::mse;
    t.output_size = spec.output_dim;
    t.spec = spec;
    t.seed = seed;
    t.true_weight = Array(spec.input_dim, spec.output_dim);
    t.true_bias = Array(1, spec.output_dim);
    for (double& w : t.true_weight.data()) w = uniform(rng, spec.weight_range);
    for (double& b : t.true_bias.data()) b = uniform(rng, spec.bias_range);

    auto fill = [&](std::size_t n, Array& x, Array& y) {
        x = Array(n, spec.input_dim);
        y = Array(n, spec.output_dim);
        for (double& v : x.data()) v = normal(rng);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t o = 0; o < spec.output_dim; ++o) {
                double acc = t.true_bias[o];
                for (std::size_t j = 0; j < spec.input_dim; ++j) acc += x(i, j) * t.true_weight(j, o);
                y(i, o) = acc;
            }
    };
    fill(spec.context_points, t.support_x, t.support_y);
    fill(spec.query_points, t.query_x, t.query_y);
    return t;
}

TaskInstance sample_task(const TaskSpec& spec, std::uint64_t seed) {
    return std::visit(
        [seed](const auto& s) -> TaskInstance {
            if constexpr (std::is_same_v<std::decay_t<decltype(s)>, ClassTaskSpec>)
                return sample_classification_task(s, seed);
            else
                return sample_regression_task(s, seed);
        },
        spec);
}

namespace {

// Rows whose label is below `classes`, in original order.
void keep_classes(const Array& x, const std::vector<int>& labels, int classes, Array& x_out, std::vector<int>& labels_out) {
    std::vector<double> data;
    labels_out.clear();
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= classes) continue;
        data.insert(data.end(), x.data().begin() + static_cast<std::ptrdiff_t>(i * x.cols()),
                    x.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * x.cols()));
        labels_out.push_back(labels[i]);
    }
    x_out = Array(labels_out.size(), x.cols(), std::move(data));
}

}  // namespace

TaskHierarchy factorize(const TaskInstance& task, std::span<const std::size_t> level_sizes) {
    if (level_sizes.empty()) throw ValidationError("factorize: level_sizes is empty");
    for (std::size_t i = 0; i < level_sizes.size(); ++i) {
        if (level_sizes[i] == 0) throw ValidationError("factorize: level sizes must be positive");
        if (i > 0 && level_sizes[i] <= level_sizes[i - 1])
            throw ValidationError("factorize: level sizes must be strictly increasing");
    }
    if (level_sizes.back() != task.output_size)
        throw ValidationError("factorize: last level size " + std::to_string(level_sizes.back()) +
                              " does not match task output size " + std::to_string(task.output_size));
    if (task.is_classification() && level_sizes.front() < 2)
        throw ValidationError("factorize: classification levels need at least 2 classes");

    TaskHierarchy hier;
    for (std::size_t i = 0; i + 1 < level_sizes.size(); ++i) {
        const std::size_t m = level_sizes[i];
        TaskInstance sub;
        sub.loss = task.loss;
        sub.output_size = m;
        sub.spec = task.spec;
        sub.seed = task.seed;
        if (task.is_classification()) {
            keep_classes(task.support_x, task.support_labels, static_cast<int>(m), sub.support_x, sub.support_labels);
            keep_classes(task.query_x, task.query_labels, static_cast<int>(m), sub.query_x, sub.query_labels);
        } else {
            sub.support_x = task.support_x;
            sub.query_x = task.query_x;
            sub.support_y = task.support_y.leading_cols(m);
            sub.query_y = task.query_y.leading_cols(m);
            if (!task.true_weight.empty()) {
                sub.true_weight = task.true_weight.leading_cols(m);
                sub.true_bias = task.true_bias.leading_cols(m);
            }
        }
        hier.levels.push_back(std::move(sub));
    }
    hier.levels.push_back(task);
    return hier;
}

std::vector<std::size_t> default_level_sizes(std::size_t output_size, std::size_t depth) {
    if (depth == 0 || depth > output_size) throw ValidationError("hierarchy depth must be in 1..output size");
    std::vector<std::size_t> sizes;
    for (std::size_t h = 0; h < depth; ++h) sizes.push_back(output_size - depth + 1 + h);
    return sizes;
}

// ---------------------------------------------------------------------------
// JSON-lines serialization

namespace {

constexpr const char* kTaskFormat = "hml-task/1";

json to_json(const Array& a) {
    json rows = json::array();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        json row = json::array();
        for (std::size_t j = 0; j < a.cols(); ++j) row.push_back(a(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Array array_from_json(const json& j) {
    const std::size_t rows = j.size();
    if (rows == 0) return {};
    const std::size_t cols = j.at(0).size();
    Array a(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        if (j[i].size() != cols) throw ValidationError("task file: ragged array");
        for (std::size_t c = 0; c < cols; ++c) a(i, c) = j[i][c].get<double>();
    }
    return a;
}

json spec_to_json(const TaskSpec& spec) {
    if (const auto* c = std::get_if<ClassTaskSpec>(&spec))
        return {{"kind", "classification"},
                {"ways", c->ways},
                {"shots", c->shots},
                {"queries_per_class", c->queries_per_class},
                {"input_dim", c->input_dim},
                {"prototype_spread", c->prototype_spread},
                {"noise_scale", c->noise_scale}};
    const auto& r = std::get<RegTaskSpec>(spec);
    return {{"kind", "regression"},
            {"input_dim", r.input_dim},
            {"output_dim", r.output_dim},
            {"context_points", r.context_points},
            {"query_points", r.query_points},
            {"weight_range", {r.weight_range.first, r.weight_range.second}},
            {"bias_range", {r.bias_range.first, r.bias_range.second}}};
}

TaskSpec spec_from_json(const json& j) {
    if (j.at("kind") == "classification") {
        ClassTaskSpec c;
        c.ways = j.at("ways");
        c.shots = j.at("shots");
        c.queries_per_class = j.at("queries_per_class");
        c.input_dim = j.at("input_dim");
        c.prototype_spread = j.at("prototype_spread");
        c.noise_scale = j.at("noise_scale");
        return c;
    }
    RegTaskSpec r;
    r.input_dim = j.at("input_dim");
    r.output_dim = j.at("output_dim");
    r.context_points = j.at("context_points");
    r.query_points = j.at("query_points");
    r.weight_range = {j.at("weight_range")[0], j.at("weight_range")[1]};
    r.bias_range = {j.at("bias_range")[0], j.at("bias_range")[1]};
    return r;
}

json split_to_json(const TaskInstance& t, const Array& x, const std::vector<int>& labels, const Array& y) {
    json j{{"x", to_json(x)}};
    if (t.is_classification())
        j["labels"] = labels;
    else
        j["y"] = to_json(y);
    return j;
}

}  // namespace

void save_tasks(const std::filesystem::path& path, std::span<const TaskInstance> tasks) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("save_tasks: cannot open " + path.string());
    for (const auto& t : tasks) {
        json j{{"format", kTaskFormat},
               {"spec", spec_to_json(t.spec)},
               {"seed", t.seed},
               {"loss", t.is_classification() ? "cross_entropy" : "mse"},
               {"output_size", t.output_size},
               {"support", split_to_json(t, t.support_x, t.support_labels, t.support_y)},
               {"query", split_to_json(t, t.query_x, t.query_labels, t.query_y)}};
        if (!t.true_weight.empty()) {
            j["true_weight"] = to_json(t.true_weight);
            j["true_bias"] = to_json(t.true_bias);
        }
        out << j.dump() << '\n';
    }
    if (!out) throw Error("save_tasks: write failed for " + path.string());
}

std::vector<TaskInstance> load_tasks(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("load_tasks: cannot open " + path.string());
    std::vector<TaskInstance> tasks;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        if (j.at("format") != kTaskFormat) throw ValidationError("load_tasks: unsupported format in " + path.string());
        TaskInstance t;
        t.spec = spec_from_json(j.at("spec"));
        t.seed = j.at("seed");
        t.loss = j.at("loss") == "mse" ? LossKind::mse : LossKind::cross_entropy;
        t.output_size = j.at("output_size");
        t.support_x = array_from_json(j.at("support").at("x"));
        t.query_x = array_from_json(j.at("query").at("x"));
        if (t.is_classification()) {
            t.support_labels = j.at("support").at("labels").get<std::vector<int>>();
            t.query_labels = j.at("query").at("labels").get<std::vector<int>>();
        } else {
            t.support_y = array_from_json(j.at("support").at("y"));
            t.query_y = array_from_json(j.at("query").at("y"));
        }
        if (j.contains("true_weight")) {
            t.true_weight = array_from_json(j.at("true_weight"));
            t.true_bias = array_from_json(j.at("true_bias"));
        }
        tasks.push_back(std::move(t));
    }
    return tasks;
}

}  // namespace hml
