// Serial reference kernels against their OpenMP counterparts, plus one
// meta-training iteration end to end.
//
//   ./build/bench/hml_bench --benchmark_filter=matmul

#include "hml/kernels.hpp"
#include "hml/learner.hpp"
#include "hml/rng.hpp"

#include <benchmark/benchmark.h>

#include <random>

namespace {

using hml::Array;

Array random_array(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    hml::Engine eng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Array a(rows, cols);
    for (auto& v : a.data()) v = u(eng);
    return a;
}

template <Array (*Fn)(const Array&, const Array&)>
void bm_matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const Array a = random_array(n, n, 1), b = random_array(n, n, 2);
    for (auto _ : state) benchmark::DoNotOptimize(Fn(a, b));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

template <Array (*Fn)(const Array&, const Array&)>
void bm_binary(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const Array a = random_array(n, n, 1), b = random_array(n, n, 2);
    for (auto _ : state) benchmark::DoNotOptimize(Fn(a, b));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n));
}

template <Array (*Fn)(const Array&)>
void bm_unary(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const Array a = random_array(n, n, 1);
    for (auto _ : state) benchmark::DoNotOptimize(Fn(a));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n));
}

void bm_meta_iteration(benchmark::State& state) {
    hml::TrainConfig cfg;
    cfg.alpha = 0.1;
    cfg.beta = 0.01;
    cfg.depth = static_cast<std::size_t>(state.range(0));
    cfg.use_transform = cfg.depth > 1;
    const auto sizes = cfg.resolved_level_sizes(5);
    const hml::MetaState start{hml::init_params(hml::training_architecture(16, {40, 40}, hml::Activation::relu, sizes), 1)};
    const auto tasks = hml::generated_tasks(hml::ClassTaskSpec{});
    std::size_t iteration = 0;
    for (auto _ : state) {
        hml::MetaState s = start;
        s.iteration = iteration;
        cfg.meta_iterations = ++iteration;
        benchmark::DoNotOptimize(hml::train_hml(cfg, tasks, 5, s));
    }
}

}  // namespace

namespace serial = hml::kernels::serial;
namespace parallel = hml::kernels::parallel;

BENCHMARK(bm_matmul<serial::matmul>)->Name("matmul/serial")->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(bm_matmul<parallel::matmul>)->Name("matmul/parallel")->Arg(64)->Arg(256)->Arg(512)->UseRealTime();
BENCHMARK(bm_binary<serial::mul>)->Name("mul/serial")->Arg(256)->Arg(1024);
BENCHMARK(bm_binary<parallel::mul>)->Name("mul/parallel")->Arg(256)->Arg(1024)->UseRealTime();
BENCHMARK(bm_unary<serial::tanh>)->Name("tanh/serial")->Arg(256)->Arg(1024);
BENCHMARK(bm_unary<parallel::tanh>)->Name("tanh/parallel")->Arg(256)->Arg(1024)->UseRealTime();
BENCHMARK(bm_unary<serial::softmax_rows>)->Name("softmax_rows/serial")->Arg(256)->Arg(1024);
BENCHMARK(bm_unary<parallel::softmax_rows>)->Name("softmax_rows/parallel")->Arg(256)->Arg(1024)->UseRealTime();
BENCHMARK(bm_unary<serial::transpose>)->Name("transpose/serial")->Arg(256)->Arg(1024);
BENCHMARK(bm_unary<parallel::transpose>)->Name("transpose/parallel")->Arg(256)->Arg(1024)->UseRealTime();
BENCHMARK(bm_meta_iteration)->Name("meta_iteration/depth")->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
