#include <doctest.h>

#include <cmath>
#include <random>

#include "avgctl/averaging.hpp"
#include "avgctl/two_body.hpp"

using namespace avgctl;

namespace {

struct Rng {
    std::mt19937_64 eng;
    explicit Rng(std::uint64_t seed) : eng(seed) {}
    double u01() { return static_cast<double>(eng() >> 11) * 0x1.0p-53; }
    double uniform(double a, double b) { return a + (b - a) * u01(); }
};

const OscillatingSystem& rotating() {
    return std::get<OscillatingSystem>(SystemRegistry::builtin().at("rotating_field").system);
}

const OscillatingSystem& rotating2() {
    return std::get<OscillatingSystem>(SystemRegistry::builtin().at("rotating_field_2").system);
}

const KeplerSystem& two_body() {
    return std::get<KeplerSystem>(SystemRegistry::builtin().at("two_body_planar").system);
}

ControlProfile signcos_profile() {
    return ControlProfile::closed_form(
        1,
        [](double th) {
            Vec u(1);
            const double c = std::cos(th);
            u[0] = c > 0 ? 1.0 : (c < 0 ? -1.0 : 0.0);
            return u;
        },
        1.0, {kPi / 2, 3 * kPi / 2});
}

// dense-grid oracle for averaged velocities
Vec grid_average(const OscillatingSystem& sys, const Vec& x, const ControlProfile& U,
                 int n = 200000) {
    Vec acc = Vec::Zero(sys.n);
    for (int i = 0; i < n; ++i) {
        const double th = kTwoPi * (i + 0.5) / n;
        acc += sys.field(th, x) * U(th);
    }
    return acc / n;
}

}  // namespace

TEST_CASE("average_velocity on the rotating field") {
    const auto& sys = rotating();
    const Vec x = Vec::Zero(2);
    CHECK(average_velocity(sys, x, ControlProfile::zero(1)).norm() <= 1e-13);
    Vec one(1);
    one << 1.0;
    CHECK(average_velocity(sys, x, ControlProfile::constant(one)).norm() <= 1e-12);

    const Vec v = average_velocity(sys, x, signcos_profile());
    CHECK(v[0] == doctest::Approx(2.0 / kPi).epsilon(1e-10));
    CHECK(std::abs(v[1]) <= 1e-10);
    const Vec oracle = grid_average(sys, x, signcos_profile());
    CHECK((v - oracle).norm() <= 1e-5);
}

TEST_CASE("average_velocity piecewise profiles use midpoint bin values") {
    const auto& sys = rotating();
    const Vec x = Vec::Zero(2);
    Mat vals(kDefaultProfileBins, 1);
    for (int i = 0; i < kDefaultProfileBins; ++i) {
        const double mid = kTwoPi * (i + 0.5) / kDefaultProfileBins;
        vals(i, 0) = std::cos(mid) > 0 ? 1.0 : -1.0;
    }
    const ControlProfile pc = ControlProfile::piecewise_constant(vals);
    CHECK(pc.check_admissible());
    const Vec v = average_velocity(sys, x, pc);
    CHECK(v[0] == doctest::Approx(2.0 / kPi).epsilon(1e-4));
}

TEST_CASE("average_drift") {
    OscillatingSystem sys = rotating();
    CHECK_THROWS_AS(average_drift(sys, Vec::Zero(2)), NotConfiguredError);
    sys.drift = [](double, const StateVec&) {
        Vec d(2);
        d << 1.0, 0.0;
        return d;
    };
    Vec expect(2);
    expect << 1.0, 0.0;
    CHECK((average_drift(sys, Vec::Zero(2)) - expect).norm() <= 1e-12);
    sys.drift = [](double th, const StateVec&) {
        Vec d(2);
        d << std::cos(th), 0.0;
        return d;
    };
    CHECK(average_drift(sys, Vec::Zero(2)).norm() <= 1e-12);
    sys.drift = [](double th, const StateVec&) {
        Vec d(2);
        d << std::cos(th) * std::cos(th), 0.0;
        return d;
    };
    CHECK(average_drift(sys, Vec::Zero(2))[0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("hamiltonian closed forms on the rotating field") {
    const auto& sys = rotating();
    const Vec x = Vec::Zero(2);
    Vec p = Vec::Zero(2);
    CHECK(hamiltonian(sys, {x, p}) == 0.0);
    p << 1.0, 0.0;
    CHECK(hamiltonian(sys, {x, p}) == doctest::Approx(2.0 / kPi).epsilon(1e-10));
    p << 3.0, 4.0;
    CHECK(hamiltonian(sys, {x, p}) == doctest::Approx(10.0 / kPi).epsilon(1e-10));
}

TEST_CASE("hamiltonian homogeneity and subadditivity") {
    Rng rng(5);
    const auto& sys = rotating2();
    const Vec x = Vec::Zero(2);
    for (int i = 0; i < 50; ++i) {
        Vec p1(2), p2(2);
        p1 << rng.uniform(-2, 2), rng.uniform(-2, 2);
        p2 << rng.uniform(-2, 2), rng.uniform(-2, 2);
        const double lam = rng.uniform(-3, 3);
        const double h1 = hamiltonian(sys, {x, p1});
        CHECK(hamiltonian(sys, {x, Vec(lam * p1)}) ==
              doctest::Approx(std::abs(lam) * h1).epsilon(1e-9));
        CHECK(hamiltonian(sys, {x, Vec(p1 + p2)}) <=
              h1 + hamiltonian(sys, {x, p2}) + 1e-9);
    }
}

TEST_CASE("optimal_profile attains the support value") {
    const auto& sys = rotating();
    const Vec x = Vec::Zero(2);
    Vec p(2);
    p << 1.0, 0.0;
    const ControlProfile up = optimal_profile(sys, {x, p});
    CHECK(up(0.3)[0] == doctest::Approx(1.0));
    CHECK(up(kPi - 0.3)[0] == doctest::Approx(-1.0));
    CHECK(up.discontinuities().size() == 2);
    const Vec gbar = average_velocity(sys, x, up);
    CHECK(p.dot(gbar) == doctest::Approx(hamiltonian(sys, {x, p})).epsilon(1e-8));

    // zero covector branch
    const ControlProfile uz = optimal_profile(sys, {x, Vec::Zero(2)});
    CHECK(uz(1.0).norm() == 0.0);
}

TEST_CASE("optimal_profile on the two-column rotating field") {
    const auto& sys = rotating2();
    const Vec x = Vec::Zero(2);
    Vec p(2);
    p << 1.0, 0.0;
    const ControlProfile up = optimal_profile(sys, {x, p});
    for (double th : {0.1, 1.3, 4.0}) {
        const Vec u = up(th);
        CHECK(u[0] == doctest::Approx(std::cos(th)).epsilon(1e-12));
        CHECK(u[1] == doctest::Approx(-std::sin(th)).epsilon(1e-12));
        CHECK(u.norm() == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("duality chain on both systems") {
    Rng rng(9);
    const auto& osc = rotating2();
    const auto& kep = two_body();
    const auto& kentry = SystemRegistry::builtin().at("two_body_planar");
    std::mt19937_64 seed_eng(100);
    for (int i = 0; i < 10; ++i) {
        Vec x = Vec::Zero(2);
        Vec p(2);
        p << rng.uniform(-2, 2), rng.uniform(-2, 2);
        if (p.norm() < 0.1) continue;
        const double h = hamiltonian(osc, {x, p});
        const Vec gb = average_velocity(osc, x, optimal_profile(osc, {x, p}));
        CHECK(p.dot(gb) == doctest::Approx(h).epsilon(1e-8));

        const Vec xk = kentry.sample_state(seed_eng);
        const Vec pk = kentry.sample_costate(seed_eng);
        const double hk = hamiltonian(kep, {xk, pk});
        const Vec gbk = average_velocity(kep, xk, optimal_profile(kep, {xk, pk}));
        CHECK(pk.dot(gbk) == doctest::Approx(hk).epsilon(1e-8));
    }
}

TEST_CASE("grad_hamiltonian closed form on the rotating field") {
    const auto& sys = rotating();
    const Vec x = Vec::Zero(2);
    Vec p(2);
    p << 1.0, 0.0;
    HamGradient g = grad_hamiltonian(sys, {x, p});
    CHECK(g.dx.norm() <= 1e-10);
    CHECK(g.dp[0] == doctest::Approx(2.0 / kPi).epsilon(1e-9));
    CHECK(std::abs(g.dp[1]) <= 1e-10);
    p << 0.0, 2.0;
    g = grad_hamiltonian(sys, {x, p});
    CHECK(std::abs(g.dp[0]) <= 1e-10);
    CHECK(g.dp[1] == doctest::Approx(2.0 / kPi).epsilon(1e-9));
    CHECK_THROWS_AS(grad_hamiltonian(sys, {x, Vec::Zero(2)}), UndefinedGradientError);
}

TEST_CASE("grad_hamiltonian matches finite differences at random points") {
    // state-dependent field so dH/dx is genuinely nonzero
    OscillatingSystem sys;
    sys.n = 2;
    sys.m = 2;
    sys.label = "warped";
    sys.field = [](double th, const StateVec& x) {
        Mat g(2, 2);
        const double r = 1.0 + 0.3 * std::sin(x[0]) + 0.2 * x[1] * x[1];
        g << r * std::cos(th), -std::sin(th), r * std::sin(th), std::cos(th);
        return g;
    };
    Rng rng(13);
    QuadratureSpec tight;
    tight.abs_tol = tight.rel_tol = 1e-13;
    for (int i = 0; i < 10; ++i) {
        Vec x(2), p(2);
        x << rng.uniform(-1, 1), rng.uniform(-1, 1);
        p << rng.uniform(0.3, 2.0), rng.uniform(-2, -0.3);
        const HamGradient g = grad_hamiltonian(sys, {x, p});
        Vec impl(4);
        impl << g.dx, g.dp;
        Vec fd(4);
        const double h = 1e-5;
        for (int k = 0; k < 4; ++k) {
            auto hval = [&](double d) {
                CotangentPoint z{x, p};
                (k < 2 ? z.x[k] : z.p[k - 2]) += d;
                return hamiltonian(sys, z, tight);
            };
            fd[k] = (hval(-2 * h) - 8 * hval(-h) + 8 * hval(h) - hval(2 * h)) / (12 * h);
        }
        CHECK((impl - fd).norm() <= 1e-5 * std::max(1.0, fd.norm()));
    }
}

TEST_CASE("dual_norm closed form and membership") {
    const auto& sys = rotating();
    const Vec x = Vec::Zero(2);
    CHECK(dual_norm(sys, x, Vec::Zero(2)) == 0.0);
    Vec v(2);
    v << 1.0, 0.0;
    CHECK(dual_norm(sys, x, v) == doctest::Approx(kPi / 2).epsilon(1e-7));
    v << 2.0 / kPi, 0.0;
    CHECK(dual_norm(sys, x, v) == doctest::Approx(1.0).epsilon(1e-7));

    // multistart solver agrees
    v << -0.3, 0.8;
    CHECK(dual_norm(sys, x, v, DualNormSolver::multistart) ==
          doctest::Approx(dual_norm(sys, x, v)).epsilon(1e-6));
}

TEST_CASE("dual_norm homogeneity and symmetry") {
    Rng rng(17);
    const auto& sys = rotating2();
    const Vec x = Vec::Zero(2);
    for (int i = 0; i < 10; ++i) {
        Vec v(2);
        v << rng.uniform(-1, 1), rng.uniform(-1, 1);
        const double lam = rng.uniform(-3, 3);
        const double base = dual_norm(sys, x, v);
        CHECK(dual_norm(sys, x, Vec(lam * v)) ==
              doctest::Approx(std::abs(lam) * base).epsilon(1e-6));
    }
}

TEST_CASE("dual_norm maximizer feeds back the support identity") {
    const auto& sys = rotating();
    const Vec x = Vec::Zero(2);
    Vec v(2);
    v << 0.4, -0.7;
    const DualNormResult res = dual_norm_full(sys, x, v);
    CHECK(hamiltonian(sys, {x, res.maximizer}) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(res.maximizer.dot(v) == doctest::Approx(res.value).epsilon(1e-8));
}

TEST_CASE("membership of averaged velocities in the unit ball") {
    Rng rng(19);
    const auto& sys = rotating2();
    const Vec x = Vec::Zero(2);
    for (int i = 0; i < 25; ++i) {
        Mat vals(16, 2);
        for (int b = 0; b < 16; ++b) {
            const double ang = rng.uniform(0.0, kTwoPi);
            const double r = rng.u01();
            vals(b, 0) = r * std::cos(ang);
            vals(b, 1) = r * std::sin(ang);
        }
        const ControlProfile U = ControlProfile::piecewise_constant(vals);
        const Vec gb = average_velocity(sys, x, U);
        CHECK(dual_norm(sys, x, gb) <= 1.0 + 1e-6);
    }
}

TEST_CASE("dual_norm flags a degenerate metric") {
    OscillatingSystem sys;
    sys.n = 2;
    sys.m = 1;
    sys.label = "rank1";
    sys.field = [](double, const StateVec&) {
        Mat g(2, 1);
        g << 1.0, 0.0;
        return g;
    };
    Vec v(2);
    v << 0.0, 1.0;
    CHECK_THROWS_AS(dual_norm(sys, Vec::Zero(2), v), DegenerateMetricError);
}

TEST_CASE("mean_pulsation") {
    KeplerSystem k;
    k.n = 1;
    k.m = 1;
    k.label = "unit";
    k.pulse_floor = 0.1;
    k.pulse = [](double, const StateVec&) { return 1.0; };
    k.field = [](double, const StateVec&) { return Mat::Ones(1, 1); };
    CHECK(mean_pulsation(k, Vec::Zero(1)) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("theta_rank on the rotating field") {
    const auto& sys = rotating();
    const Vec x = Vec::Zero(2);
    for (double th : {0.0, 1.0, 3.0}) {
        CHECK(theta_rank(sys, th, x, 0) == 1);
        CHECK(theta_rank(sys, th, x, 1) == 2);
    }
}

TEST_CASE("velocity_set_dim") {
    const auto& sys = rotating();
    const VelocitySetProbe probe = velocity_set_dim(sys, Vec::Zero(2));
    CHECK(probe.dim == 2);
    CHECK(probe.span_basis.cols() == 2);
    CHECK((probe.span_basis.transpose() * probe.span_basis - Mat::Identity(2, 2)).norm() <=
          1e-12);

    OscillatingSystem flat;
    flat.n = 2;
    flat.m = 1;
    flat.label = "flat";
    flat.field = [](double, const StateVec&) {
        Mat g(2, 1);
        g << 1.0, 0.0;
        return g;
    };
    CHECK(velocity_set_dim(flat, Vec::Zero(2)).dim == 1);

    // cross-check against theta_rank on the two-body system
    const auto& kentry = SystemRegistry::builtin().at("two_body_planar");
    const auto& kep = std::get<KeplerSystem>(kentry.system);
    std::mt19937_64 eng(3);
    const Vec xk = kentry.sample_state(eng);
    CHECK(velocity_set_dim(kep, xk).dim == 3);
    CHECK(theta_rank(kep, 0.7, xk, 3) == 3);
}

TEST_CASE("theta_rank propagates unsupported derivative orders") {
    const auto& sys = rotating();
    CHECK_THROWS_AS(theta_rank(sys, 0.3, Vec::Zero(2), 6), UnsupportedOrderError);
}
