#include <benchmark/benchmark.h>

#include <random>

#include "sola/wkv.hpp"

namespace {
struct WkvInputs {
    sola::Tensor k, v, w, u;
};

WkvInputs make_inputs(std::size_t n, std::size_t d) {
    std::mt19937_64 rng(42);
    return {sola::randn(rng, {n, d}), sola::randn(rng, {n, d}), sola::randn(rng, {d}, 0.5),
            sola::randn(rng, {d}, 0.5)};
}
}  // namespace

static void WkvScan(benchmark::State& state) {
    const auto in = make_inputs(static_cast<std::size_t>(state.range(0)), 8);
    for (auto _ : state) {
        auto out = sola::wkv_scan(in.k, in.v, in.w, in.u);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetComplexityN(state.range(0));
}
BENCHMARK(WkvScan)->RangeMultiplier(4)->Range(64, 16384)->Complexity();

static void WkvNaive(benchmark::State& state) {
    const auto in = make_inputs(static_cast<std::size_t>(state.range(0)), 8);
    for (auto _ : state) {
        auto out = sola::wkv_naive(in.k, in.v, in.w, in.u);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetComplexityN(state.range(0));
}
BENCHMARK(WkvNaive)->RangeMultiplier(4)->Range(64, 4096)->Complexity();

BENCHMARK_MAIN();
