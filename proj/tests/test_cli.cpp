#include "support.hpp"

#include "hml/checkpoint.hpp"
#include "hml/commands.hpp"
#include "hml/config.hpp"
#include "hml/error.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace hml;

namespace {

const char* kTinyConfig = R"(# tiny run
config_version = 1
method = hml
task = classification
run_id = tiny
seed = 3
hidden = 8
activation = tanh
alpha = 0.2
beta = 0.05
gamma = 0.01
meta_batch = 2
depth = 3
use_transform = true
meta_iterations = 6
ways = 4
shots = 1
queries_per_class = 3
input_dim = 5
eval_structures = 4,8
eval_steps = 2
eval_step_size = 0.1
eval_tasks = 4
)";

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

// Tiny config text with extra lines appended (later keys must not repeat).
std::filesystem::path config_file(const std::filesystem::path& dir, const std::string& name, std::string text) {
    text += "output_dir = " + (dir / name).string() + "\n";
    const auto path = dir / (name + ".cfg");
    write_file(path, text);
    return path;
}

std::string replace(std::string text, const std::string& from, const std::string& to) {
    const auto pos = text.find(from);
    REQUIRE(pos != std::string::npos);
    return text.replace(pos, from.size(), to);
}

struct QuietLogs {
    QuietLogs() { setenv("HML_LOG_LEVEL", "quiet", 1); }
    ~QuietLogs() { unsetenv("HML_LOG_LEVEL"); }
};

}  // namespace

TEST_CASE("config parsing") {
    const RunConfig c = parse_config(kTinyConfig);
    CHECK(c.method == Method::hml);
    CHECK(c.hidden == std::vector<std::size_t>{8});
    CHECK(c.activation == Activation::tanh);
    CHECK(c.train.depth == 3);
    CHECK(c.train.use_transform);
    CHECK(c.classification.ways == 4);
    CHECK(c.eval.structures == std::vector<std::size_t>{4, 8});
    CHECK(c.architecture().head_dims == std::map<int, std::size_t>{{1, 2}, {2, 3}, {3, 4}});
}

TEST_CASE("config rejection") {
    const std::string base = kTinyConfig;
    CHECK_THROWS_AS(parse_config(base + "learning_rate = 0.1\n"), ValidationError);
    CHECK_THROWS_AS(parse_config(base + "alpha = 0.3\n"), ValidationError);
    CHECK_THROWS_AS(parse_config(base + "no equals sign\n"), ValidationError);
    CHECK_THROWS_AS(parse_config(replace(base, "alpha = 0.2", "alpha = fast")), ValidationError);
    CHECK_THROWS_AS(parse_config(replace(base, "alpha = 0.2", "alpha = -0.2")), ValidationError);
    CHECK_THROWS_AS(parse_config(replace(base, "alpha = 0.2", "alpha = 0.2x")), ValidationError);
    CHECK_THROWS_AS(parse_config(replace(base, "meta_batch = 2", "meta_batch = -2")), ValidationError);
    CHECK_THROWS_AS(parse_config(replace(base, "method = hml", "method = reptile")), ValidationError);
    CHECK_THROWS_AS(parse_config(replace(base, "config_version = 1", "config_version = 2")), ValidationError);
    CHECK_THROWS_AS(parse_config(replace(base, "method = hml", "method = maml")), ValidationError);
    CHECK_THROWS_AS(parse_config(replace(base, "depth = 3", "depth = 4")), ValidationError);
    CHECK_THROWS_AS(parse_config(replace(base, "use_transform = true", "use_transform = maybe")), ValidationError);
    CHECK_THROWS_AS(parse_config(replace(base, "eval_structures = 4,8", "eval_structures = 4,,8")), ValidationError);
    CHECK_THROWS_AS(load_config("/nonexistent/run.cfg"), ValidationError);
}

TEST_CASE("config echo round-trips") {
    const RunConfig c = parse_config(kTinyConfig);
    const RunConfig back = config_from_json(to_json(c));
    CHECK(to_json(back).dump() == to_json(c).dump());
    CHECK(to_json(c).at("alpha") == 0.2);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
    const RunConfig c = parse_config(kTinyConfig);
    MetaState s = cli::initial_state(c);
    s.iteration = 17;
    s.loss.push(0.1);
    s.loss.push(1.0 / 3.0);
    s.params.transform.weight(0, 1) = -0.0;
    s.params.transform.bias(0, 2) = 1e-310;
    const auto bytes = encode_checkpoint({c, s});
    const Checkpoint back = decode_checkpoint(bytes);
    CHECK(bitwise_equal(back.state.params, s.params));
    CHECK(back.state.iteration == 17);
    CHECK(back.state.loss.count == 2);
    CHECK(back.state.loss.mean == s.loss.mean);
    CHECK(back.state.params.transform_enabled == s.params.transform_enabled);
    CHECK(encode_checkpoint(back) == bytes);

    const auto dir = test::scratch_dir("ckpt");
    save_checkpoint(dir / "a.bin", {c, s});
    save_checkpoint(dir / "b.bin", load_checkpoint(dir / "a.bin"));
    CHECK(read_file(dir / "a.bin") == read_file(dir / "b.bin"));
    CHECK(read_file(dir / "a.bin").substr(0, 8) == std::string("HMLCKPT\0", 8));
}

TEST_CASE("corrupt or missing checkpoints are validation errors") {
    const RunConfig c = parse_config(kTinyConfig);
    auto bytes = encode_checkpoint({c, cli::initial_state(c)});
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bad_magic), ValidationError);
    auto truncated = bytes;
    truncated.resize(bytes.size() - 8);
    CHECK_THROWS_AS(decode_checkpoint(truncated), ValidationError);
    CHECK_THROWS_AS(decode_checkpoint({}), ValidationError);
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.bin"), ValidationError);
}

TEST_CASE("train writes logs and checkpoints; zero iterations keeps the initial parameters") {
    QuietLogs quiet;
    const auto dir = test::scratch_dir("cli_train");
    const auto cfg = config_file(dir, "run", std::string(kTinyConfig) + "checkpoint_every = 2\n");
    REQUIRE(cli::cmd_train(cfg, std::nullopt) == cli::kExitOk);
    for (const char* f : {"checkpoint.bin", "checkpoint_2.bin", "checkpoint_4.bin", "checkpoint_6.bin", "train_log.jsonl"})
        CHECK(std::filesystem::exists(dir / "run" / f));

    std::ifstream log(dir / "run" / "train_log.jsonl");
    std::string line;
    std::getline(log, line);
    const auto header = nlohmann::json::parse(line);
    CHECK(header.at("config").at("run_id") == "tiny");
    std::size_t records = 0;
    while (std::getline(log, line)) {
        const auto rec = nlohmann::json::parse(line);
        CHECK(rec.at("iteration") == records);
        for (const char* key : {"l_hml", "l_omega", "per_level_losses", "wallclock"}) CHECK(rec.contains(key));
        ++records;
    }
    CHECK(records == 6);
    const Checkpoint done = load_checkpoint(dir / "run" / "checkpoint.bin");
    CHECK(done.state.iteration == 6);
    CHECK(to_json(done.config).dump() == to_json(load_config(cfg)).dump());

    const auto zero = config_file(dir, "zero", replace(kTinyConfig, "meta_iterations = 6", "meta_iterations = 0"));
    REQUIRE(cli::cmd_train(zero, std::nullopt) == cli::kExitOk);
    CHECK(bitwise_equal(load_checkpoint(dir / "zero" / "checkpoint.bin").state.params, cli::initial_state(load_config(zero)).params));
}

TEST_CASE("depth-one hml and maml runs end at identical parameters") {
    QuietLogs quiet;
    const auto dir = test::scratch_dir("cli_degenerate");
    std::string flat = replace(kTinyConfig, "depth = 3", "depth = 1");
    flat = replace(flat, "use_transform = true", "use_transform = false");
    const auto hml_cfg = config_file(dir, "hml", flat);
    const auto maml_cfg = config_file(dir, "maml", replace(flat, "method = hml", "method = maml"));
    REQUIRE(cli::cmd_train(hml_cfg, std::nullopt) == cli::kExitOk);
    REQUIRE(cli::cmd_train(maml_cfg, std::nullopt) == cli::kExitOk);
    CHECK(bitwise_equal(load_checkpoint(dir / "hml" / "checkpoint.bin").state.params,
                        load_checkpoint(dir / "maml" / "checkpoint.bin").state.params));
}

TEST_CASE("resuming from a checkpoint matches an uninterrupted run bit for bit") {
    QuietLogs quiet;
    const auto dir = test::scratch_dir("cli_resume");
    const auto full = config_file(dir, "full", kTinyConfig);
    const auto split = config_file(dir, "split", std::string(kTinyConfig) + "checkpoint_every = 3\n");
    REQUIRE(cli::cmd_train(full, std::nullopt) == cli::kExitOk);
    REQUIRE(cli::cmd_train(split, std::nullopt) == cli::kExitOk);
    const auto resumed_dir = dir / "resumed";
    const auto resumed = config_file(dir, "resumed", std::string(kTinyConfig) + "checkpoint_every = 3\n");
    REQUIRE(cli::cmd_train(resumed, dir / "split" / "checkpoint_3.bin") == cli::kExitOk);
    const auto a = load_checkpoint(dir / "full" / "checkpoint.bin");
    const auto b = load_checkpoint(resumed_dir / "checkpoint.bin");
    CHECK(bitwise_equal(a.state.params, b.state.params));
    CHECK(b.state.iteration == 6);
    CHECK(a.state.loss.mean == b.state.loss.mean);
}

TEST_CASE("exit codes: validation 2, halt 3 with flushed artifacts") {
    QuietLogs quiet;
    const auto dir = test::scratch_dir("cli_exit");
    const auto bad = config_file(dir, "bad", std::string(kTinyConfig) + "unknown_key = 1\n");
    CHECK(cli::cmd_train(bad, std::nullopt) == cli::kExitValidation);
    CHECK(cli::cmd_train(dir / "missing.cfg", std::nullopt) == cli::kExitValidation);
    CHECK(cli::cmd_eval(dir / "missing.bin", config_file(dir, "ok", kTinyConfig), std::nullopt) == cli::kExitValidation);

    const auto diverge = config_file(dir, "diverge", replace(kTinyConfig, "alpha = 0.2", "alpha = 1e300"));
    CHECK(cli::cmd_train(diverge, std::nullopt) == cli::kExitHalted);
    CHECK(std::filesystem::exists(dir / "diverge" / "checkpoint_halt.bin"));
    CHECK(std::filesystem::exists(dir / "diverge" / "train_log.jsonl"));
    CHECK_FALSE(std::filesystem::exists(dir / "diverge" / "checkpoint.bin"));
    CHECK(load_checkpoint(dir / "diverge" / "checkpoint_halt.bin").state.params.backbone[0].weight.all_finite());
}

TEST_CASE("eval reports are reproducible, self-describing and consistent") {
    QuietLogs quiet;
    const auto dir = test::scratch_dir("cli_eval");
    const auto cfg = config_file(dir, "run", kTinyConfig);
    REQUIRE(cli::cmd_train(cfg, std::nullopt) == cli::kExitOk);
    const auto ckpt = dir / "run" / "checkpoint.bin";
    REQUIRE(cli::cmd_eval(ckpt, cfg, dir / "a.json") == cli::kExitOk);
    REQUIRE(cli::cmd_eval(ckpt, cfg, dir / "b.json") == cli::kExitOk);
    CHECK(read_file(dir / "a.json") == read_file(dir / "b.json"));
    const auto doc = nlohmann::json::parse(read_file(dir / "a.json"));
    CHECK(doc.at("config").at("run_id") == "tiny");
    CHECK(doc.at("checkpoint_iteration") == 6);
    for (const auto& r : doc.at("report").at("results")) {
        double total = 0.0;
        for (double v : r.at("per_task")) total += v;
        CHECK(r.at("mean").get<double>() == doctest::Approx(total / static_cast<double>(r.at("per_task").size())).epsilon(1e-14));
    }
}

TEST_CASE("feature export command") {
    QuietLogs quiet;
    const auto dir = test::scratch_dir("cli_features");
    const auto cfg = config_file(dir, "run", replace(kTinyConfig, "meta_iterations = 6", "meta_iterations = 1"));
    REQUIRE(cli::cmd_train(cfg, std::nullopt) == cli::kExitOk);
    REQUIRE(cli::cmd_export_features(dir / "run" / "checkpoint.bin", dir / "f.csv", 2) == cli::kExitOk);
    std::ifstream in(dir / "f.csv");
    std::string line;
    std::size_t rows = 0;
    std::getline(in, line);
    CHECK(line.rfind("label,feature_0", 0) == 0);
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 2 * 8 * 4);
    CHECK(cli::cmd_export_features(dir / "run" / "checkpoint.bin", dir / "g.csv", 0) == cli::kExitValidation);
}

TEST_CASE("regression bench table has three methods, three structures and two step counts") {
    QuietLogs quiet;
    const auto dir = test::scratch_dir("cli_bench_reg");
    const std::string text = R"(config_version = 1
method = hml
task = regression
run_id = bench
hidden = 8
alpha = 0.05
beta = 0.01
depth = 2
use_transform = true
meta_iterations = 3
d_x = 4
d_y = 3
eval_structures = 3,6
eval_steps = 5
eval_step_size = 0.05
eval_tasks = 3
eval_head_init_scale = 1
bench_seeds = 1,2
)";
    const auto cfg = config_file(dir, "out", text);
    REQUIRE(cli::cmd_bench_regression(cfg) == cli::kExitOk);
    const std::string md = read_file(dir / "out" / "bench_regression.md");
    for (const char* row : {"| Fine-tune |", "| MAML |", "| HML |"}) CHECK(md.find(row) != std::string::npos);
    CHECK(md.find("<!-- config: ") == 0);
    const std::string csv = read_file(dir / "out" / "bench_regression.csv");
    std::istringstream in(csv);
    std::string line;
    std::size_t rows = 0;
    while (std::getline(in, line))
        if (!line.empty() && line[0] != '#' && line.rfind("method,", 0) != 0) ++rows;
    CHECK(rows == 3 * 2 * 2);
    const auto j = nlohmann::json::parse(read_file(dir / "out" / "bench_regression.json"));
    CHECK(j.at("methods").size() == 3);
    CHECK(j.at("methods")[0].at("reports").size() == 2);
}

TEST_CASE("classification bench includes the transform ablation") {
    QuietLogs quiet;
    const RunConfig base = parse_config(replace(kTinyConfig, "meta_iterations = 6", "meta_iterations = 2") + "bench_seeds = 1,2,3\n");
    const cli::BenchReport r = cli::bench_classification(base);
    CHECK(r.methods.size() == 4);
    CHECK(r.method("hml_no_transform").config.train.use_transform == false);
    CHECK(r.method("hml").config.train.use_transform);
    CHECK(r.method("maml").config.train.depth == 1);
    CHECK(r.method("finetune").config.method == Method::finetune);
    for (const auto& m : r.methods) CHECK(m.per_seed.size() == 3);
    const std::string md = cli::classification_table_markdown(r);
    CHECK(md.find("HML (w/o transform)") != std::string::npos);
    CHECK(r.paired_se("hml", "maml", 8) >= 0.0);
    CHECK(r.mean("maml", 4) == doctest::Approx((r.method("maml").per_seed[0].at(4).mean + r.method("maml").per_seed[1].at(4).mean +
                                                r.method("maml").per_seed[2].at(4).mean) / 3.0));
}
