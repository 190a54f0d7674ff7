#include <benchmark/benchmark.h>

#include <cmath>

#include "avgctl/analysis.hpp"
#include "avgctl/dynamics.hpp"
#include "avgctl/two_body.hpp"

using namespace avgctl;

namespace {

const OscillatingSystem& rotating() {
    return std::get<OscillatingSystem>(SystemRegistry::builtin().at("rotating_field").system);
}

const KeplerSystem& two_body_sys() {
    return std::get<KeplerSystem>(SystemRegistry::builtin().at("two_body_planar").system);
}

void BM_GaussFields(benchmark::State& state) {
    double L = 0.0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(gauss_fields(0.3, -0.2, L));
        L += 0.01;
    }
}
BENCHMARK(BM_GaussFields);

void BM_IntegratePeriodic_Smooth(benchmark::State& state) {
    auto f = [](double th) {
        Vec v(1);
        v[0] = std::exp(std::sin(th));
        return v;
    };
    for (auto _ : state) benchmark::DoNotOptimize(integrate_periodic(f));
}
BENCHMARK(BM_IntegratePeriodic_Smooth);

void BM_Hamiltonian_Rotating(benchmark::State& state) {
    const auto& sys = rotating();
    Vec x = Vec::Zero(2), p(2);
    p << 1.0, 0.4;
    for (auto _ : state) benchmark::DoNotOptimize(hamiltonian(sys, {x, p}));
}
BENCHMARK(BM_Hamiltonian_Rotating);

void BM_Hamiltonian_TwoBody(benchmark::State& state) {
    const auto& sys = two_body_sys();
    Vec x(3), p(3);
    x << 1.0, 0.3, -0.2;
    p << 0.5, 0.3, -0.7;
    for (auto _ : state) benchmark::DoNotOptimize(hamiltonian(sys, {x, p}));
}
BENCHMARK(BM_Hamiltonian_TwoBody);

void BM_GradHamiltonian_TwoBody(benchmark::State& state) {
    const auto& sys = two_body_sys();
    Vec x(3), p(3);
    x << 1.0, 0.3, -0.2;
    p << 0.5, 0.3, -0.7;
    for (auto _ : state) benchmark::DoNotOptimize(grad_hamiltonian(sys, {x, p}));
}
BENCHMARK(BM_GradHamiltonian_TwoBody);

void BM_DualNorm_TwoBody(benchmark::State& state) {
    const auto& sys = two_body_sys();
    Vec x(3), v(3);
    x << 1.0, 0.2, -0.1;
    v << 0.4, -0.3, 0.2;
    for (auto _ : state) benchmark::DoNotOptimize(dual_norm(sys, x, v));
}
BENCHMARK(BM_DualNorm_TwoBody);

void BM_AverageExtremalStep_TwoBody(benchmark::State& state) {
    const auto& sys = two_body_sys();
    const ReducedCostate rc = reduced_costate_on_kink(0.3, -0.2, 1.0);
    Vec x(3), p(3);
    x << 1.0, 0.3, -0.2;
    p << rc.A, rc.X, rc.Y;
    for (auto _ : state)
        benchmark::DoNotOptimize(integrate_average_extremal(sys, {x, p}, 0.0, 0.05));
}
BENCHMARK(BM_AverageExtremalStep_TwoBody);

void BM_RecoveryControlEval(benchmark::State& state) {
    JointControl u0;
    u0.m = 1;
    u0.horizon = 1.0;
    u0.theta_kinks = {kPi / 2, 3 * kPi / 2};
    u0.u = [](double, double theta) {
        Vec v(1);
        v[0] = std::cos(theta) > 0 ? 1.0 : -1.0;
        return v;
    };
    const auto ubar = recovery_control(u0, 0.05);
    double t = 0.0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(ubar(t));
        t = t < 0.9 ? t + 1e-4 : 0.0;
    }
}
BENCHMARK(BM_RecoveryControlEval);

}  // namespace

BENCHMARK_MAIN();
