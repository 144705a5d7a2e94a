#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "dext/eval.hpp"
#include "dext/kernels.hpp"
#include "dext/saliency.hpp"
#include "dext/scene.hpp"

namespace k = dext::kernels;

namespace {

std::vector<float> noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (float& x : v) x = u(rng);
  return v;
}

// Args: channels, spatial size. Stride 2, 3x3 kernel, padding 1 as in the toy detector.
k::ConvGeometry geometry(const benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), s = static_cast<int>(state.range(1));
  return {c, s, s, c, 3, 2, 1};
}

template <auto Fn>
void conv_forward(benchmark::State& state) {
  const auto g = geometry(state);
  const auto in = noise(static_cast<std::size_t>(g.input_size()), 1);
  const auto w = noise(static_cast<std::size_t>(g.weight_size()), 2);
  const auto b = noise(static_cast<std::size_t>(g.out_channels), 3);
  std::vector<float> out(static_cast<std::size_t>(g.output_size()));
  for (auto _ : state) {
    Fn(g, in, w, b, out);
    benchmark::DoNotOptimize(out.data());
  }
}

template <auto Fn>
void conv_backward(benchmark::State& state) {
  const auto g = geometry(state);
  const auto go = noise(static_cast<std::size_t>(g.output_size()), 1);
  const auto w = noise(static_cast<std::size_t>(g.weight_size()), 2);
  std::vector<float> gi(static_cast<std::size_t>(g.input_size()));
  for (auto _ : state) {
    std::fill(gi.begin(), gi.end(), 0.0f);
    Fn(g, go, w, gi);
    benchmark::DoNotOptimize(gi.data());
  }
}

template <auto Fn>
void affine_forward(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto x = noise(static_cast<std::size_t>(n), 1);
  const auto w = noise(static_cast<std::size_t>(n) * n, 2);
  const auto b = noise(static_cast<std::size_t>(n), 3);
  std::vector<float> y(static_cast<std::size_t>(n));
  for (auto _ : state) {
    Fn(n, n, x, w, b, y);
    benchmark::DoNotOptimize(y.data());
  }
}

void conv_args(benchmark::internal::Benchmark* b) {
  b->Args({16, 32})->Args({32, 64})->Args({64, 128})->UseRealTime();
}

template <bool Parallel>
void deletion_curve(benchmark::State& state) {
  const auto model = dext::ToyDetector::bundled();
  const auto scene = dext::make_scene(1001);
  const auto dets = dext::detect(model, scene.image);
  const auto map = dext::explain(dext::Method::GBP, model, scene.image,
                                 dext::target_for(dets.front(), dext::DecisionKind::ClassLogit));
  const auto plan = dext::ManipulationPlan::from_saliency(scene.image, map.grid, dext::Cause::Deletion);
  const dext::EffectTracker tracker{dext::Effect::ClassMaxProb, dext::Setting::SingleBox, dets.front()};
  for (auto _ : state) {
    auto c = Parallel ? dext::curve(model, scene.image, plan, tracker)
                      : dext::curve_serial(model, scene.image, plan, tracker);
    benchmark::DoNotOptimize(c.auc);
  }
}

}  // namespace

BENCHMARK(conv_forward<k::serial::conv2d_forward>)->Name("conv_forward/serial")->Apply(conv_args);
BENCHMARK(conv_forward<k::parallel::conv2d_forward>)->Name("conv_forward/parallel")->Apply(conv_args);
BENCHMARK(conv_backward<k::serial::conv2d_backward_input>)->Name("conv_backward/serial")->Apply(conv_args);
BENCHMARK(conv_backward<k::parallel::conv2d_backward_input>)->Name("conv_backward/parallel")->Apply(conv_args);
BENCHMARK(affine_forward<k::serial::affine_forward>)->Name("affine_forward/serial")->Arg(256)->Arg(2048)->UseRealTime();
BENCHMARK(affine_forward<k::parallel::affine_forward>)->Name("affine_forward/parallel")->Arg(256)->Arg(2048)->UseRealTime();
BENCHMARK(deletion_curve<false>)->Name("deletion_curve/serial")->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(deletion_curve<true>)->Name("deletion_curve/parallel")->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
