#include <benchmark/benchmark.h>

#include <cmath>
#include <complex>
#include <random>
#include <vector>

#include "lipvox/audio_dsp.hpp"
#include "lipvox/kernels.hpp"

namespace {

using lipvox::kernels::Backend;

Backend backend_of(const benchmark::State& state) {
  return state.range(0) == 0 ? Backend::kSerial : Backend::kParallel;
}

std::vector<float> noise_signal(int64_t samples) {
  std::mt19937 gen(7);
  std::normal_distribution<float> dist(0.f, 0.1f);
  std::vector<float> x(static_cast<size_t>(samples));
  for (auto& v : x) v = dist(gen);
  return x;
}

void BM_StftPower(benchmark::State& state) {
  const int64_t frames = 500;
  const auto signal = noise_signal(frames * lipvox::dsp::kHop);
  std::vector<double> out(static_cast<size_t>(frames) * lipvox::dsp::kFftBins);
  for (auto _ : state) {
    lipvox::kernels::stft_power(signal, frames, out, backend_of(state));
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * frames);
}
BENCHMARK(BM_StftPower)->Arg(0)->Arg(1)->ArgName("parallel");

void BM_Istft(benchmark::State& state) {
  const int64_t frames = 500;
  const auto f = noise_signal(frames * lipvox::dsp::kHop);
  std::vector<double> signal(f.begin(), f.end());
  std::vector<std::complex<double>> spec(static_cast<size_t>(frames) * lipvox::dsp::kFftBins);
  lipvox::kernels::stft(signal, frames, spec, Backend::kSerial);
  std::vector<double> out(signal.size());
  for (auto _ : state) {
    lipvox::kernels::istft(spec, frames, out, backend_of(state));
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * frames);
}
BENCHMARK(BM_Istft)->Arg(0)->Arg(1)->ArgName("parallel");

void BM_LogMel(benchmark::State& state) {
  const int64_t frames = 2000;
  std::vector<double> power(static_cast<size_t>(frames) * lipvox::dsp::kFftBins);
  std::mt19937 gen(3);
  std::exponential_distribution<double> dist(10.0);
  for (auto& v : power) v = dist(gen);
  std::vector<float> out(static_cast<size_t>(frames) * lipvox::dsp::kMelBands);
  for (auto _ : state) {
    lipvox::kernels::log_mel(power, frames, out, backend_of(state));
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * frames);
}
BENCHMARK(BM_LogMel)->Arg(0)->Arg(1)->ArgName("parallel");

void BM_PairwiseL2(benchmark::State& state) {
  const int64_t n = 400, dim = 1000;
  const auto rows = noise_signal(n * dim);
  std::vector<double> out(static_cast<size_t>(n * n));
  for (auto _ : state) {
    lipvox::kernels::pairwise_l2(rows, n, dim, out, backend_of(state));
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * n * n);
}
BENCHMARK(BM_PairwiseL2)->Arg(0)->Arg(1)->ArgName("parallel");

void BM_PolyKernelSum(benchmark::State& state) {
  const int64_t n = 500, dim = 256;
  const auto f = noise_signal(n * dim);
  std::vector<double> x(f.begin(), f.end());
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        lipvox::kernels::poly_kernel_sum(x, n, x, n, dim, true, backend_of(state)));
  }
  state.SetItemsProcessed(state.iterations() * n * n);
}
BENCHMARK(BM_PolyKernelSum)->Arg(0)->Arg(1)->ArgName("parallel");

}  // namespace

BENCHMARK_MAIN();
