#include <benchmark/benchmark.h>

#include <random>

#include "sola/attention.hpp"

namespace {
sola::AttentionInputs make_inputs(std::size_t n, std::size_t d) {
    std::mt19937_64 rng(7);
    return {sola::randn(rng, {n, d}, 0.5), sola::randn(rng, {n, d}, 0.5),
            sola::randn(rng, {n, d})};
}
}  // namespace

static void SoftmaxAttention(benchmark::State& state) {
    const auto in = make_inputs(static_cast<std::size_t>(state.range(0)), 32);
    for (auto _ : state) {
        auto out = sola::softmax_attention(in);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetComplexityN(state.range(0));
}
BENCHMARK(SoftmaxAttention)->RangeMultiplier(4)->Range(64, 4096)->Complexity();

static void LinearAttention(benchmark::State& state) {
    const auto in = make_inputs(static_cast<std::size_t>(state.range(0)), 32);
    const sola::FeatureMap phi = sola::elu_feature_map();
    for (auto _ : state) {
        auto out = sola::linear_attention(in, phi, phi);
        benchmark::DoNotOptimize(out.output.data());
    }
    state.SetComplexityN(state.range(0));
}
BENCHMARK(LinearAttention)->RangeMultiplier(4)->Range(64, 16384)->Complexity();

BENCHMARK_MAIN();
