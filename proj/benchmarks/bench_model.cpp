#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "emgtf/model.hpp"
#include "emgtf/ops.hpp"

using namespace emgtf;

namespace {

Tensor<float> random_batch(std::size_t batch, const ModelSpec& spec) {
    Rng rng(1);
    std::vector<float> v(batch * spec.channels * spec.window);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
    return Tensor<float>({batch, spec.channels, spec.window}, std::move(v));
}

void BM_Forward(benchmark::State& state) {
    ModelSpec spec;
    spec.variant = static_cast<Variant>(state.range(0));
    const auto batch = static_cast<std::size_t>(state.range(1));
    EmgtfNet<float> net(spec, 0);
    const auto x = random_batch(batch, spec);
    NoGradGuard no_grad;
    for (auto _ : state) benchmark::DoNotOptimize(net.forward(x).data().data());
    state.SetItemsProcessed(state.iterations() * state.range(1));
    state.SetLabel(std::string(to_string(spec.variant)));
}

void BM_TrainStep(benchmark::State& state) {
    ModelSpec spec;
    spec.variant = static_cast<Variant>(state.range(0));
    EmgtfNet<float> net(spec, 0);
    const auto x = random_batch(512, spec);
    std::vector<std::int32_t> labels(512);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::int32_t>(i % 17);
    for (auto _ : state) {
        for (auto& p : net.parameters()) p.tensor.zero_grad();
        cross_entropy(net.forward(x, Mode::train), std::span<const std::int32_t>(labels)).backward();
        state.PauseTiming();
        for (const auto& bank : net.banks()) bank->epoch_rollover(FcmOptions{.max_iter = 0});
        state.ResumeTiming();
    }
    state.SetItemsProcessed(state.iterations() * 512);
    state.SetLabel(std::string(to_string(spec.variant)));
}

} // namespace

BENCHMARK(BM_Forward)->ArgsProduct({{0, 1, 2, 3}, {1, 512}})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_TrainStep)->DenseRange(0, 3)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
