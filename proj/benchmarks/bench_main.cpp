#include <benchmark/benchmark.h>

#include "atnlab/attacks.hpp"
#include "atnlab/eval.hpp"

using namespace atnlab;

namespace {

const Shape kIn{1, 28, 28};

Tensor batch(std::int64_t n) {
    Tensor t(kIn.prepend(n));
    RngStream rng(1);
    for (auto& v : t.data()) v = static_cast<float>(rng.uniform(0.0, 255.0));
    return t;
}

void BM_ClassifierForward(benchmark::State& state) {
    const ClassifierModel m = build_classifier("cnn-a", 10, kIn);
    const Tensor x = batch(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(classify(m, x));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ClassifierForward)->Arg(1)->Arg(32);

void BM_ClassifierInputGrad(benchmark::State& state) {
    const ClassifierModel m = build_classifier("cnn-a", 10, kIn);
    const Tensor x = batch(state.range(0));
    const std::vector<int> labels(static_cast<std::size_t>(state.range(0)), 3);
    for (auto _ : state) benchmark::DoNotOptimize(cross_entropy_input_grad(m, x, labels));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ClassifierInputGrad)->Arg(1)->Arg(32);

void BM_GeneratorForward(benchmark::State& state) {
    const GeneratorModel g = build_generator(kIn, 16.0f);
    const Tensor x = batch(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(generate_adversarial(g, x, 16.0f));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_GeneratorForward)->Arg(1)->Arg(32);

void BM_AtnBatchStep(benchmark::State& state) {
    const ClassifierModel m = build_classifier("cnn-a", 10, kIn);
    const GeneratorModel g = build_generator(kIn, 16.0f);
    const Tensor x = batch(32);
    AtnObjective obj;
    obj.loss.weights = {1.0f};
    obj.targets = {&m};
    obj.robust.mode = RobustMode::RandomNoise;
    const std::vector<std::vector<int>> labels{predict(m, x)};
    RngStream rng(2);
    for (auto _ : state) benchmark::DoNotOptimize(atn_batch_gradients(g, obj, x, labels, rng));
}
BENCHMARK(BM_AtnBatchStep);

void BM_MiFgsm(benchmark::State& state) {
    const ClassifierModel m = build_classifier("cnn-a", 10, kIn);
    const Tensor x = batch(32);
    AttackConfig cfg;
    for (auto _ : state) benchmark::DoNotOptimize(mi_fgsm(m, x, cfg));
}
BENCHMARK(BM_MiFgsm);

void BM_ResizeChain(benchmark::State& state) {
    const Tensor x = batch(32);
    const double factors[] = {1.334, 0.666};
    for (auto _ : state) benchmark::DoNotOptimize(resize_chain(x, factors));
}
BENCHMARK(BM_ResizeChain);

}  // namespace
BENCHMARK_MAIN();
