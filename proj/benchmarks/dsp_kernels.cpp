// Serial reference kernels against their OpenMP versions, at the sizes the
// wideband radio runs them: one 25 PRB subframe, 127 taps, factor 4.

#include "pvran/dsp.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace pvran::dsp;

namespace {

constexpr std::size_t kSubframe = 7680;
constexpr std::size_t kFactor = 4;

std::vector<cf32> signal(std::size_t n) {
    std::mt19937 rng(7);
    std::uniform_real_distribution<float> d(-1000.f, 1000.f);
    std::vector<cf32> v(n);
    for (auto& x : v) x = {d(rng), d(rng)};
    return v;
}

std::vector<float> taps() { return design_lowpass(kDefaultTaps, 0.45 * 7.68e6, 30.72e6); }

template <auto Kernel>
void bm_interpolate(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto in = signal(n);
    const auto h = taps();
    std::vector<cf32> out(n * kFactor + h.size() - 1);
    for (auto _ : state) {
        Kernel(in, kFactor, h, out);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}

template <auto Kernel>
void bm_decimate(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto h = taps();
    const auto in = signal((n - 1) * kFactor + h.size());
    std::vector<cf32> out(n);
    for (auto _ : state) {
        Kernel(in, kFactor, h, out);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}

template <auto Kernel>
void bm_rotate(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    auto data = signal(n);
    std::uint64_t first = 0;
    for (auto _ : state) {
        Kernel(data, 0.0123, first);
        first += n;
        benchmark::DoNotOptimize(data.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}

}  // namespace

BENCHMARK(bm_interpolate<serial::interpolate>)->Name("interpolate/serial")->Arg(kSubframe)->Arg(4 * kSubframe);
BENCHMARK(bm_interpolate<parallel::interpolate>)->Name("interpolate/parallel")->Arg(kSubframe)->Arg(4 * kSubframe);
BENCHMARK(bm_decimate<serial::decimate>)->Name("decimate/serial")->Arg(kSubframe)->Arg(4 * kSubframe);
BENCHMARK(bm_decimate<parallel::decimate>)->Name("decimate/parallel")->Arg(kSubframe)->Arg(4 * kSubframe);
BENCHMARK(bm_rotate<serial::rotate>)->Name("rotate/serial")->Arg(kSubframe)->Arg(4 * kSubframe);
BENCHMARK(bm_rotate<parallel::rotate>)->Name("rotate/parallel")->Arg(kSubframe)->Arg(4 * kSubframe);

BENCHMARK_MAIN();
