#include <doctest.h>

#include <cmath>
#include <random>

#include "avgctl/systems.hpp"
#include "avgctl/two_body.hpp"

using namespace avgctl;

TEST_CASE("normalize_angle basics") {
    CHECK(normalize_angle(0.0) == 0.0);
    CHECK(normalize_angle(-kPi / 2) == doctest::Approx(3 * kPi / 2).epsilon(1e-15));
    CHECK(normalize_angle(7 * kPi) == doctest::Approx(kPi).epsilon(1e-14));
    CHECK_THROWS_AS(normalize_angle(std::numeric_limits<double>::infinity()), DomainError);
    std::mt19937_64 rng(1);
    for (int i = 0; i < 200; ++i) {
        const double s = 50.0 * (2.0 * (rng() >> 11) * 0x1.0p-53 - 1.0);
        const double m = normalize_angle(s);
        CHECK(m >= 0.0);
        CHECK(m < kTwoPi);
        CHECK(std::abs(std::remainder(m - s, kTwoPi)) <= 1e-9);
        const int k = static_cast<int>(rng() % 7) - 3;
        CHECK(normalize_angle(s + kTwoPi * k) == doctest::Approx(m).epsilon(1e-9));
    }
}

TEST_CASE("AngleS1 canonical accessor") {
    AngleS1 a(9.0);
    CHECK(a.raw() == 9.0);
    CHECK(a.canonical() == doctest::Approx(9.0 - kTwoPi).epsilon(1e-15));
    CHECK_THROWS_AS(AngleS1(std::nan("")), DomainError);
}

TEST_CASE("rotating field evaluation and analytic derivative") {
    const auto& entry = SystemRegistry::builtin().at("rotating_field");
    const auto& sys = std::get<OscillatingSystem>(entry.system);
    Vec x = Vec::Zero(2);
    Mat g = sys.G(0.0, x);
    CHECK(g(0, 0) == doctest::Approx(1.0));
    CHECK(g(1, 0) == doctest::Approx(0.0));
    Mat g1 = sys.G_dtheta(0.0, x, 1);
    CHECK(g1(0, 0) == doctest::Approx(0.0));
    CHECK(g1(1, 0) == doctest::Approx(1.0));
}

TEST_CASE("finite differences agree with analytic theta derivatives") {
    const auto& entry = SystemRegistry::builtin().at("rotating_field");
    const auto& sys = std::get<OscillatingSystem>(entry.system);
    OscillatingSystem fd_only = sys;
    fd_only.d_field_dtheta = nullptr;
    fd_only.d_field_dx = nullptr;
    std::mt19937_64 rng(5);
    Vec x = Vec::Zero(2);
    for (int i = 0; i < 50; ++i) {
        const double th = kTwoPi * (rng() >> 11) * 0x1.0p-53;
        for (int j = 1; j <= 2; ++j) {
            const Mat a = sys.G_dtheta(th, x, j);
            const Mat b = fd_only.G_dtheta(th, x, j);
            CHECK((a - b).norm() <= 1e-6 * std::max(1.0, a.norm()));
        }
    }
    CHECK_THROWS_AS(fd_only.G_dtheta(0.3, x, 5), UnsupportedOrderError);
}

TEST_CASE("state Jacobian fallback on a state-dependent field") {
    OscillatingSystem sys;
    sys.n = 2;
    sys.m = 1;
    sys.label = "state_dep";
    sys.field = [](double th, const StateVec& x) {
        Mat g(2, 1);
        g << std::cos(th) * x[0] * x[0], std::sin(th) * x[1];
        return g;
    };
    Vec x(2);
    x << 0.7, -0.4;
    const auto J = sys.G_dx(1.1, x);
    CHECK(J[0](0, 0) == doctest::Approx(2 * 0.7 * std::cos(1.1)).epsilon(1e-8));
    CHECK(J[0](1, 0) == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(J[1](1, 0) == doctest::Approx(std::sin(1.1)).epsilon(1e-8));
}

TEST_CASE("registry periodicity invariant") {
    const auto& reg = SystemRegistry::builtin();
    std::mt19937_64 rng(11);
    for (const auto& label : reg.labels()) {
        const auto& entry = reg.at(label);
        std::visit(
            [&](const auto& sys) {
                for (int i = 0; i < 200; ++i) {
                    const Vec x = entry.sample_state(rng);
                    const double th = kTwoPi * (rng() >> 11) * 0x1.0p-53;
                    CHECK((sys.field(th, x) - sys.field(th + kTwoPi, x)).norm() <= 1e-12);
                }
            },
            entry.system);
    }
    CHECK(reg.labels().size() == 3);
    CHECK_THROWS(reg.at("no_such_system"));
}

TEST_CASE("registry rejects a non-periodic field") {
    SystemRegistry reg;
    OscillatingSystem bad;
    bad.n = 1;
    bad.m = 1;
    bad.label = "bad";
    bad.field = [](double th, const StateVec&) {
        Mat g(1, 1);
        g << th;  // not periodic
        return g;
    };
    SystemEntry e;
    e.system = bad;
    e.sample_state = [](std::mt19937_64&) { return Vec::Zero(1); };
    e.sample_costate = [](std::mt19937_64&) { return Vec::Ones(1); };
    CHECK_THROWS_AS(reg.add("bad", e), DomainError);
}

TEST_CASE("kepler_to_oscillating: unit and constant pulsation") {
    KeplerSystem k;
    k.n = 2;
    k.m = 1;
    k.label = "toy";
    k.pulse_floor = 0.5;
    k.pulse = [](double, const StateVec&) { return 1.0; };
    k.field = [](double th, const StateVec&) {
        Mat g(2, 1);
        g << std::cos(th), std::sin(th);
        return g;
    };
    OscillatingSystem red = kepler_to_oscillating(k);
    Vec x = Vec::Zero(2);
    CHECK((red.G(0.7, x) - k.G(0.7, x)).norm() <= 1e-15);

    k.pulse = [](double, const StateVec&) { return 2.0; };
    OscillatingSystem red2 = kepler_to_oscillating(k);
    CHECK((red2.G(0.7, x) - 0.5 * k.G(0.7, x)).norm() <= 1e-15);
}

TEST_CASE("kepler_to_oscillating: two-body columns at e = 0 match gauss_fields") {
    const KeplerSystem tb = two_body_system();
    const OscillatingSystem red = kepler_to_oscillating(tb);
    Vec x(3);
    x << 1.7, 0.0, 0.0;
    std::mt19937_64 rng(2);
    for (int i = 0; i < 20; ++i) {
        const double L = kTwoPi * (rng() >> 11) * 0x1.0p-53;
        const Mat gr = red.G(L, x);
        const Mat gk = tb.G(L, x);
        const double w = tb.omega(L, x);
        CHECK((gr - gk / w).norm() <= 1e-13 * gk.norm());
    }
    // at e = 0 and L = 0 the second reduced column is (0, 0, a^2)
    const Mat g0 = red.G(0.0, x);
    CHECK(g0(0, 1) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(g0(1, 1) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(g0(2, 1) == doctest::Approx(x[0] * x[0]).epsilon(1e-12));
    // column norms: w(0,0,L) = 1 so the reduction rescales by a^{3/2} only
    const double L = 0.9;
    CHECK(red.G(L, x).norm() ==
          doctest::Approx(std::pow(x[0], 1.5) * tb.G(L, x).norm()).epsilon(1e-12));
}

TEST_CASE("kepler pulse floor is enforced") {
    KeplerSystem k;
    k.n = 1;
    k.m = 1;
    k.label = "floor";
    k.pulse_floor = 0.5;
    k.pulse = [](double, const StateVec& x) { return x[0]; };
    k.field = [](double, const StateVec&) { return Mat::Ones(1, 1); };
    Vec good(1), bad(1);
    good << 1.0;
    bad << 0.1;
    CHECK(k.omega(0.0, good) == 1.0);
    CHECK_THROWS_AS(k.omega(0.0, bad), DomainError);
    OscillatingSystem red = kepler_to_oscillating(k);
    CHECK_THROWS_AS(red.G(0.0, bad), DomainError);
}

TEST_CASE("domain predicate produces domain errors") {
    OscillatingSystem sys;
    sys.n = 1;
    sys.m = 1;
    sys.label = "guarded";
    sys.field = [](double, const StateVec&) { return Mat::Ones(1, 1); };
    sys.in_domain = [](const StateVec& x) { return x[0] > 0.0; };
    Vec inside(1), outside(1);
    inside << 1.0;
    outside << -1.0;
    CHECK(sys.G(0.0, inside)(0, 0) == 1.0);
    CHECK_THROWS_AS(sys.G(0.0, outside), DomainError);
}
