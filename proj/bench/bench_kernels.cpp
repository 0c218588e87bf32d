// Serial reference vs OpenMP kernels on a large torus.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <omp.h>

#include "zhang/lattice.hpp"

using namespace zhang;

template <class F>
double seconds(F&& f, int reps) {
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) f();
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
    return dt.count() / reps;
}

int main(int argc, char** argv) {
    const std::size_t side = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 1024;
    const int reps = argc > 2 ? std::atoi(argv[2]) : 20;
    const auto g = make_geometry({side, side}, Boundary::Torus);
    Rng rng(7);
    const LatticeConfig start = generate({DensityKind::IidUniform, 0.6}, g, rng);
    LatticeConfig a(g), b(g);
    MassLedger la(start.size()), lb(start.size());

    std::printf("torus %zux%zu, %d threads, %d reps\n", side, side, omp_get_max_threads(), reps);
    std::printf("%-22s %12s %12s %8s\n", "kernel", "serial [ms]", "omp [ms]", "speedup");
    auto row = [](const char* name, double s, double p) {
        std::printf("%-22s %12.3f %12.3f %8.2f\n", name, 1e3 * s, 1e3 * p, s / p);
    };

    row("parallel_round",
        seconds([&] { kernels::parallel_round_serial(start, a, &la); }, reps),
        seconds([&] { kernels::parallel_round_omp(start, b, &lb); }, reps));

    volatile double sink = 0;
    row("total_mass",
        seconds([&] { sink = kernels::total_mass_serial(start.heights); }, reps),
        seconds([&] { sink = kernels::total_mass_omp(start.heights); }, reps));

    row("toppling_extremes",
        seconds([&] { sink = double(kernels::toppling_extremes_serial(la.topplings).min); }, reps),
        seconds([&] { sink = double(kernels::toppling_extremes_omp(la.topplings).min); }, reps));

    row("site_identity",
        seconds([&] { sink = kernels::site_identity_residual_serial(start, a, la); }, reps),
        seconds([&] { sink = kernels::site_identity_residual_omp(start, b, lb); }, reps));

    double diff = 0;
    for (std::size_t x = 0; x < start.size(); ++x) diff = std::max(diff, std::abs(a.heights[x] - b.heights[x]));
    std::printf("max |serial - omp| after last round: %.3g\n", diff);
    return 0;
}
