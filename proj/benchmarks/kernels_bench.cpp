// Microbenchmarks for the numerical kernels on the training critical path.
#include <benchmark/benchmark.h>

#include <complex>
#include <vector>

#include "dyco/backbone.hpp"
#include "dyco/fft.hpp"
#include "dyco/priors.hpp"
#include "dyco/rng.hpp"
#include "dyco/tensor.hpp"

using namespace dyco;
using namespace dyco::ops;

namespace {

std::vector<std::complex<double>> random_signal(int64_t n, uint64_t seed) {
  Rng rng = Rng::stream(seed, {0xB1});
  std::vector<std::complex<double>> v(static_cast<size_t>(n));
  for (auto& z : v) z = {rng.normal(), rng.normal()};
  return v;
}

Tensor random_tensor(Shape s, uint64_t seed) {
  Rng rng = Rng::stream(seed, {0xB2});
  Tensor t = Tensor::zeros(std::move(s));
  for (auto& v : *t.data) v = rng.normal();
  return t;
}

void BM_fft(benchmark::State& state) {
  auto x = random_signal(state.range(0), 1);
  for (auto _ : state) benchmark::DoNotOptimize(fft(x));
}

void BM_conv1d(benchmark::State& state) {
  const int64_t L = state.range(0);
  Tensor x = random_tensor({8, 2, L}, 2);
  Tensor w = random_tensor({16, 2, 7}, 3);
  Tensor b = Tensor::zeros({16});
  for (auto _ : state) benchmark::DoNotOptimize(conv1d(x, w, b, 2, 3));
}

void BM_window_attention(benchmark::State& state) {
  BackboneConfig cfg;
  ParamMap params = init_backbone_params(cfg, 4);
  Tensor tokens = random_tensor({1, state.range(0), cfg.embed_dim}, 5);
  for (auto _ : state) {
    Tape tape;
    BoundParams p = bind_params(tape, params, false);
    benchmark::DoNotOptimize(window_attention(tape, tape.leaf(tokens, false), p, "blk0", cfg, cfg.window));
  }
}

void BM_gaf(benchmark::State& state) {
  Rng rng = Rng::stream(6, {0xB3});
  std::vector<double> series(static_cast<size_t>(state.range(0)));
  for (auto& v : series) v = rng.uniform(-1.0, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(gaf(downsample_paa(series, kGafSize)));
}

}  // namespace

BENCHMARK(BM_fft)->Arg(128)->Arg(1024);
BENCHMARK(BM_conv1d)->Arg(128)->Arg(512);
BENCHMARK(BM_window_attention)->Arg(16)->Arg(64);
BENCHMARK(BM_gaf)->Arg(128);

BENCHMARK_MAIN();
