#include <benchmark/benchmark.h>

#include "emgtf/fuzzy.hpp"
#include "emgtf/ops.hpp"

using namespace emgtf;

static Matrix random_matrix(std::size_t rows, std::size_t cols) {
    Rng rng(2);
    Matrix m(rows, cols);
    for (auto& v : m.values) v = rng.normal();
    return m;
}

// Epoch-boundary refit: n buffered activations of width 64 into K clusters.
static void BM_FcmFit(benchmark::State& state) {
    const auto data = random_matrix(static_cast<std::size_t>(state.range(0)), 64);
    const auto k = static_cast<std::size_t>(state.range(1));
    int iters = 0;
    for (auto _ : state) {
        const auto res = fcm_fit(data, k);
        iters = res.iterations;
        benchmark::DoNotOptimize(res.centroids.values.data());
    }
    state.counters["fcm_iterations"] = iters;
}
BENCHMARK(BM_FcmFit)->Args({1000, 17})->Args({10000, 17})->Args({10000, 64})->Unit(benchmark::kMillisecond);

static void BM_RuleActivation(benchmark::State& state) {
    const auto rows = static_cast<std::size_t>(state.range(0));
    const auto k = static_cast<std::size_t>(state.range(1));
    const auto in = random_matrix(rows, 64), c = random_matrix(k, 64);
    const Tensor<float> v({rows, 64}, std::vector<float>(in.values.begin(), in.values.end()));
    const Tensor<float> cen({k, 64}, std::vector<float>(c.values.begin(), c.values.end()));
    const auto a = Tensor<float>::full({k, 64}, 1.0f);
    for (auto _ : state) benchmark::DoNotOptimize(fuzzy_rule_activation(v, cen, a).data().data());
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_RuleActivation)->Args({512, 17})->Args({3072, 64})->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
