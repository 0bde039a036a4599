#include "hml/config.hpp"

#include "hml/error.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace hml {

using nlohmann::json;

std::string to_string(Method m) {
    switch (m) {
        case Method::hml: return "hml";
        case Method::maml: return "maml";
        case Method::finetune: return "finetune";
    }
    return "?";
}

std::string to_string(TaskKind k) { return k == TaskKind::classification ? "classification" : "regression"; }

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used == v.size()) return d;
    } catch (const std::exception&) {
    }
    throw ValidationError("config: '" + key + "' expects a number, got '" + v + "'");
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || v.empty())
        throw ValidationError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ValidationError("config: '" + key + "' expects true/false, got '" + v + "'");
}

std::vector<std::size_t> to_sizes(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    if (v.empty()) return out;
    for (const auto& item : split_list(v)) out.push_back(static_cast<std::size_t>(to_uint(key, item)));
    return out;
}

std::vector<std::uint64_t> to_seeds(const std::string& key, const std::string& v) {
    std::vector<std::uint64_t> out;
    for (const auto& item : split_list(v)) out.push_back(to_uint(key, item));
    return out;
}

std::pair<double, double> to_range(const std::string& key, const std::string& v) {
    const auto items = split_list(v);
    if (items.size() != 2) throw ValidationError("config: '" + key + "' expects 'lo, hi'");
    return {to_double(key, items[0]), to_double(key, items[1])};
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"config_version",
         [](RunConfig&, const std::string& k, const std::string& v) {
             if (to_uint(k, v) != RunConfig::kVersion) throw ValidationError("config: unsupported config_version " + v);
         }},
        {"method",
         [](RunConfig& c, const std::string&, const std::string& v) {
             if (v == "hml") c.method = Method::hml;
             else if (v == "maml") c.method = Method::maml;
             else if (v == "finetune") c.method = Method::finetune;
             else throw ValidationError("config: method must be hml, maml or finetune, got '" + v + "'");
         }},
        {"task",
         [](RunConfig& c, const std::string&, const std::string& v) {
             if (v == "classification") c.task = TaskKind::classification;
             else if (v == "regression") c.task = TaskKind::regression;
             else throw ValidationError("config: task must be classification or regression, got '" + v + "'");
         }},
        {"run_id", [](RunConfig& c, const std::string&, const std::string& v) { c.run_id = v; }},
        {"output_dir", [](RunConfig& c, const std::string&, const std::string& v) { c.output_dir = v; }},
        {"checkpoint_every", [](RunConfig& c, const std::string& k, const std::string& v) { c.checkpoint_every = to_uint(k, v); }},
        {"seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.seed = to_uint(k, v); }},
        {"hidden", [](RunConfig& c, const std::string& k, const std::string& v) { c.hidden = to_sizes(k, v); }},
        {"activation", [](RunConfig& c, const std::string&, const std::string& v) { c.activation = parse_activation(v); }},
        {"alpha", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.alpha = to_double(k, v); }},
        {"beta", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.beta = to_double(k, v); }},
        {"gamma", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.gamma = to_double(k, v); }},
        {"meta_batch", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.meta_batch = to_uint(k, v); }},
        {"depth", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.depth = to_uint(k, v); }},
        {"level_sizes", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.level_sizes = to_sizes(k, v); }},
        {"inner_steps", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.inner_steps = to_uint(k, v); }},
        {"first_order", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.first_order = to_bool(k, v); }},
        {"use_transform", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.use_transform = to_bool(k, v); }},
        {"meta_iterations", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.meta_iterations = to_uint(k, v); }},
        {"ways", [](RunConfig& c, const std::string& k, const std::string& v) { c.classification.ways = to_uint(k, v); }},
        {"shots", [](RunConfig& c, const std::string& k, const std::string& v) { c.classification.shots = to_uint(k, v); }},
        {"queries_per_class",
         [](RunConfig& c, const std::string& k, const std::string& v) { c.classification.queries_per_class = to_uint(k, v); }},
        {"input_dim", [](RunConfig& c, const std::string& k, const std::string& v) { c.classification.input_dim = to_uint(k, v); }},
        {"prototype_spread",
         [](RunConfig& c, const std::string& k, const std::string& v) { c.classification.prototype_spread = to_double(k, v); }},
        {"noise_scale", [](RunConfig& c, const std::string& k, const std::string& v) { c.classification.noise_scale = to_double(k, v); }},
        {"d_x", [](RunConfig& c, const std::string& k, const std::string& v) { c.regression.input_dim = to_uint(k, v); }},
        {"d_y", [](RunConfig& c, const std::string& k, const std::string& v) { c.regression.output_dim = to_uint(k, v); }},
        {"context_points", [](RunConfig& c, const std::string& k, const std::string& v) { c.regression.context_points = to_uint(k, v); }},
        {"query_points", [](RunConfig& c, const std::string& k, const std::string& v) { c.regression.query_points = to_uint(k, v); }},
        {"weight_range", [](RunConfig& c, const std::string& k, const std::string& v) { c.regression.weight_range = to_range(k, v); }},
        {"bias_range", [](RunConfig& c, const std::string& k, const std::string& v) { c.regression.bias_range = to_range(k, v); }},
        {"eval_structures", [](RunConfig& c, const std::string& k, const std::string& v) { c.eval.structures = to_sizes(k, v); }},
        {"eval_shots", [](RunConfig& c, const std::string& k, const std::string& v) { c.eval.shots = to_uint(k, v); }},
        {"eval_steps", [](RunConfig& c, const std::string& k, const std::string& v) { c.eval.steps = to_uint(k, v); }},
        {"eval_step_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.eval.step_size = to_double(k, v); }},
        {"eval_tasks", [](RunConfig& c, const std::string& k, const std::string& v) { c.eval.tasks = to_uint(k, v); }},
        {"eval_seeds", [](RunConfig& c, const std::string& k, const std::string& v) { c.eval.seeds = to_seeds(k, v); }},
        {"eval_head_init_scale",
         [](RunConfig& c, const std::string& k, const std::string& v) { c.eval.head_init_scale = to_double(k, v); }},
        {"bench_seeds", [](RunConfig& c, const std::string& k, const std::string& v) { c.bench_seeds = to_seeds(k, v); }},
    };
    return table;
}

}  // namespace

void RunConfig::validate() const {
    if (run_id.empty()) throw ValidationError("config: run_id must not be empty");
    for (auto h : hidden)
        if (h == 0) throw ValidationError("config: hidden widths must be positive");
    if (bench_seeds.empty()) throw ValidationError("config: bench_seeds must not be empty");
    train.validate();
    eval.validate();
    if (task == TaskKind::classification)
        classification.validate();
    else
        regression.validate();
    const auto sizes = train.resolved_level_sizes(train_structure());
    if (task == TaskKind::classification && sizes.front() < 2)
        throw ValidationError("config: classification hierarchy levels need at least 2 classes");
    if (method != Method::hml && train.depth != 1)
        throw ValidationError("config: depth > 1 requires method = hml");
    if (method != Method::hml && train.use_transform)
        throw ValidationError("config: use_transform requires method = hml");
}

std::size_t RunConfig::train_structure() const {
    return task == TaskKind::classification ? classification.ways : regression.output_dim;
}

TaskSpec RunConfig::task_spec() const {
    if (task == TaskKind::classification) return classification;
    return regression;
}

TaskSpec RunConfig::eval_task_spec() const {
    if (task == TaskKind::classification) {
        ClassTaskSpec s = classification;
        s.shots = eval.shots;
        return s;
    }
    return regression;
}

Architecture RunConfig::architecture() const {
    const std::size_t input = task == TaskKind::classification ? classification.input_dim : regression.input_dim;
    const auto sizes = train.resolved_level_sizes(train_structure());
    return training_architecture(input, hidden, activation, sizes);
}

RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ValidationError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        const auto it = setters().find(key);
        if (it == setters().end()) throw ValidationError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        if (!seen.insert(key).second)
            throw ValidationError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
        it->second(cfg, key, value);
    }
    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

json to_json(const RunConfig& c) {
    return {{"config_version", RunConfig::kVersion},
            {"method", to_string(c.method)},
            {"task", to_string(c.task)},
            {"run_id", c.run_id},
            {"output_dir", c.output_dir.string()},
            {"checkpoint_every", c.checkpoint_every},
            {"seed", c.train.seed},
            {"hidden", c.hidden},
            {"activation", to_string(c.activation)},
            {"alpha", c.train.alpha},
            {"beta", c.train.beta},
            {"gamma", c.train.gamma},
            {"meta_batch", c.train.meta_batch},
            {"depth", c.train.depth},
            {"level_sizes", c.train.level_sizes},
            {"inner_steps", c.train.inner_steps},
            {"first_order", c.train.first_order},
            {"use_transform", c.train.use_transform},
            {"meta_iterations", c.train.meta_iterations},
            {"ways", c.classification.ways},
            {"shots", c.classification.shots},
            {"queries_per_class", c.classification.queries_per_class},
            {"input_dim", c.classification.input_dim},
            {"prototype_spread", c.classification.prototype_spread},
            {"noise_scale", c.classification.noise_scale},
            {"d_x", c.regression.input_dim},
            {"d_y", c.regression.output_dim},
            {"context_points", c.regression.context_points},
            {"query_points", c.regression.query_points},
            {"weight_range", {c.regression.weight_range.first, c.regression.weight_range.second}},
            {"bias_range", {c.regression.bias_range.first, c.regression.bias_range.second}},
            {"eval_structures", c.eval.structures},
            {"eval_shots", c.eval.shots},
            {"eval_steps", c.eval.steps},
            {"eval_step_size", c.eval.step_size},
            {"eval_tasks", c.eval.tasks},
            {"eval_seeds", c.eval.seeds},
            {"eval_head_init_scale", c.eval.head_init_scale},
            {"bench_seeds", c.bench_seeds}};
}

RunConfig config_from_json(const json& j) {
    // Re-render as key = value text so both paths share one validator.
    std::ostringstream text;
    for (const auto& [key, value] : j.items()) {
        text << key << " = ";
        if (value.is_array()) {
            bool first = true;
            for (const auto& v : value) {
                if (!first) text << ", ";
                first = false;
                text << (v.is_string() ? v.get<std::string>() : v.dump());
            }
        } else {
            text << (value.is_string() ? value.get<std::string>() : value.dump());
        }
        text << '\n';
    }
    return parse_config(text.str());
}

}  // namespace hml
