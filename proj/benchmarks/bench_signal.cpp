#include <benchmark/benchmark.h>

#include "emgtf/signal.hpp"

using namespace emgtf;

namespace {

RecordingSession session(double gesture_s) {
    SynthSpec spec;
    spec.seed = 1;
    spec.gesture_s = gesture_s;
    spec.rest_s = 1.0;
    return synth_generate(spec);
}

void BM_Hampel(benchmark::State& state) {
    const auto s = session(1.0);
    const auto sig = Signal::from_session(s);
    for (auto _ : state) benchmark::DoNotOptimize(hampel(sig.channels[0], 5, 3.0).data());
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(sig.n_samples()));
}

void BM_Filtfilt(benchmark::State& state) {
    const auto s = session(1.0);
    const auto sig = Signal::from_session(s);
    const auto sos = butterworth_design(FilterKind::highpass, 20.0, 2000.0, 4);
    for (auto _ : state) benchmark::DoNotOptimize(sos_filtfilt(sos, sig.channels[0]).data());
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(sig.n_samples()));
}

// Whole chain on a 12-channel, 4-class synthetic recording.
void BM_PreprocessSession(benchmark::State& state) {
    const auto s = session(static_cast<double>(state.range(0)) / 10.0);
    const PipelineConfig cfg;
    for (auto _ : state) benchmark::DoNotOptimize(preprocess_session(s, cfg).windows.data());
    state.counters["samples"] = static_cast<double>(s.n_samples());
}

} // namespace

BENCHMARK(BM_Hampel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Filtfilt)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PreprocessSession)->Arg(13)->Arg(50)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
