#include <benchmark/benchmark.h>

#include "rae/data.hpp"
#include "rae/metrics.hpp"
#include "rae/sampler.hpp"
#include "rae/theory.hpp"
#include "rae/train.hpp"

using namespace rae;

namespace {

void BM_Matmul(benchmark::State& state) {
    const auto n = state.range(0);
    Rng rng(1, 0);
    const auto a = randn<float>({n, n}, rng), b = randn<float>({n, n}, rng);
    for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
    state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_AttentionForwardBackward(benchmark::State& state) {
    const std::int64_t batch = 8, tokens = state.range(0), dim = 64;
    Rng rng(2, 0);
    const auto qkv = Var<float>::parameter(randn<float>({batch * tokens, 3 * dim}, rng));
    for (auto _ : state) {
        qkv.zero_grad();
        backward(ad::sum(ad::attention(qkv, batch, 4)));
        benchmark::DoNotOptimize(qkv.grad().data());
    }
}
BENCHMARK(BM_AttentionForwardBackward)->Arg(16)->Arg(64);

void BM_DitTrainStep(benchmark::State& state) {
    auto mc = preset_config("desk" + std::to_string(state.range(0)));
    DitTrainSpec spec;
    spec.lr = 1e-3;
    DitTrainer trainer(mc, spec);
    Rng rng(3, 0);
    const auto latents = randn<float>({64, mc.num_tokens, mc.token_dim}, rng);
    std::vector<int> labels(64);
    for (int i = 0; i < 64; ++i) labels[static_cast<std::size_t>(i)] = i % 10;
    for (auto _ : state) benchmark::DoNotOptimize(trainer.step(latents, labels));
}
BENCHMARK(BM_DitTrainStep)->Arg(32)->Arg(96)->Unit(benchmark::kMillisecond);

void BM_SampleBatch(benchmark::State& state) {
    auto mc = preset_config("desk64");
    const DiT<float> model(mc, 4);
    const auto labels = balanced_labels(10, 10).labels;
    for (auto _ : state) {
        Rng rng(5, 0);
        benchmark::DoNotOptimize(generate_latents(model, labels, SamplerConfig{10, std::nullopt, true}, {}, rng));
    }
}
BENCHMARK(BM_SampleBatch)->Unit(benchmark::kMillisecond);

void BM_Encode(benchmark::State& state) {
    const FrozenEncoder enc;
    const auto data = make_toy_dataset(64, static_cast<int>(state.range(0)), 6);
    for (auto _ : state) benchmark::DoNotOptimize(enc.encode(data.images));
    state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_Encode)->Arg(16)->Arg(32);

void BM_SymmetricEigen(benchmark::State& state) {
    const auto n = state.range(0);
    Rng rng(7, 0);
    const auto cov = covariance(randn<double>({4 * n, n}, rng));
    for (auto _ : state) benchmark::DoNotOptimize(symmetric_eigen(cov));
}
BENCHMARK(BM_SymmetricEigen)->Arg(16)->Arg(64)->Arg(128);

void BM_Frechet(benchmark::State& state) {
    Rng rng(8, 0);
    const auto a = fit_moments(randn<double>({500, 64}, rng)), b = fit_moments(randn<double>({500, 64}, rng));
    for (auto _ : state) benchmark::DoNotOptimize(frechet_distance(a, b));
}
BENCHMARK(BM_Frechet);

}  // namespace

BENCHMARK_MAIN();
