#include <vector>

#include <benchmark/benchmark.h>

#include "stepscat/marchenko.hpp"
#include "stepscat/spectral.hpp"

using namespace stepscat;

namespace {

const Potential kGauss(0.0, 2.0, deviation::Gaussian{-3.0, 0.5, 1.0});

const ScatteringData& data() {
    static const ScatteringData d = [] {
        BandGridOptions g;
        g.samples_per_band = 200;
        return forward_scatter(kGauss, make_band_grids(kGauss, g));
    }();
    return d;
}

void BM_ScatteringMatrix(benchmark::State& state) {
    const double mu = static_cast<double>(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(scattering_matrix(kGauss, mu));
}
BENCHMARK(BM_ScatteringMatrix)->Arg(1)->Arg(10)->Arg(1000);

void BM_ForwardScatter(benchmark::State& state) {
    BandGridOptions g;
    g.samples_per_band = static_cast<int>(state.range(0));
    const BandGrids grids = make_band_grids(kGauss, g);
    for (auto _ : state) benchmark::DoNotOptimize(forward_scatter(kGauss, grids));
}
BENCHMARK(BM_ForwardScatter)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_BuildF(benchmark::State& state) {
    const double h = 1.0 / static_cast<double>(state.range(0));
    KernelOptions o;
    o.tail_tol = 1.0;
    const SpectralKernel src(data(), o);
    const std::vector<double> grid = uniform_grid(-4.0, 12.0, h);
    for (auto _ : state) benchmark::DoNotOptimize(build_F(src, grid, grid));
}
BENCHMARK(BM_BuildF)->Arg(10)->Arg(20)->Unit(benchmark::kMillisecond);

void BM_SolveMarchenkoRow(benchmark::State& state) {
    const double h = 1.0 / static_cast<double>(state.range(0));
    KernelOptions o;
    o.tail_tol = 1.0;
    const std::vector<double> grid = uniform_grid(-4.0, 12.0, h);
    const KernelGrid F = build_F(data(), grid, grid, o);
    for (auto _ : state) benchmark::DoNotOptimize(solve_marchenko_row(F, 0.0, grid.back()));
}
BENCHMARK(BM_SolveMarchenkoRow)->Arg(10)->Arg(20)->Arg(40)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
