#include <doctest.h>

#include <cmath>
#include <random>

#include "avgctl/averaging.hpp"
#include "avgctl/quadrature.hpp"
#include "avgctl/two_body.hpp"

using namespace avgctl;

namespace {

struct Rng {
    std::mt19937_64 eng;
    explicit Rng(std::uint64_t seed) : eng(seed) {}
    double u01() { return static_cast<double>(eng() >> 11) * 0x1.0p-53; }
    double uniform(double a, double b) { return a + (b - a) * u01(); }
    void ecc(double cap, double& ex, double& ey) {
        const double r = cap * std::sqrt(u01());
        const double ph = uniform(0.0, kTwoPi);
        ex = r * std::cos(ph);
        ey = r * std::sin(ph);
    }
};

// Cartesian two-body oracle: perturb the velocity along the tangential /
// normal unit vectors and difference the orbital elements directly.
struct CartesianGauss {
    double da_t, dex_t, dey_t, dex_n, dey_n;
};

CartesianGauss cartesian_oracle(double a, double ex, double ey, double L) {
    const double e2 = ex * ex + ey * ey;
    const double p = a * (1.0 - e2);
    const double k = ex * std::cos(L) + ey * std::sin(L);
    const double r = p / (1.0 + k);
    const Eigen::Vector2d pos(r * std::cos(L), r * std::sin(L));
    const Eigen::Vector2d vel(-std::sqrt(1.0 / p) * (std::sin(L) + ey),
                              std::sqrt(1.0 / p) * (std::cos(L) + ex));
    const Eigen::Vector2d t_hat = vel.normalized();
    const Eigen::Vector2d n_hat(-t_hat[1], t_hat[0]);

    auto elements = [](const Eigen::Vector2d& rv, const Eigen::Vector2d& vv) {
        const double hz = rv[0] * vv[1] - rv[1] * vv[0];
        const Eigen::Vector2d evec(vv[1] * hz - rv[0] / rv.norm(),
                                   -vv[0] * hz - rv[1] / rv.norm());
        const double energy = 0.5 * vv.squaredNorm() - 1.0 / rv.norm();
        return Eigen::Vector3d(-0.5 / energy, evec[0], evec[1]);
    };
    const double dt = 1e-7;
    CartesianGauss out{};
    const Eigen::Vector3d dt_el =
        (elements(pos, vel + dt * t_hat) - elements(pos, vel - dt * t_hat)) / (2 * dt);
    const Eigen::Vector3d dn_el =
        (elements(pos, vel + dt * n_hat) - elements(pos, vel - dt * n_hat)) / (2 * dt);
    out.da_t = dt_el[0];
    out.dex_t = dt_el[1];
    out.dey_t = dt_el[2];
    out.dex_n = dn_el[1];
    out.dey_n = dn_el[2];
    return out;
}

}  // namespace

TEST_CASE("gauss_fields at e = 0") {
    for (double L : {0.0, 0.7, 2.9, 5.5}) {
        const GaussFields f = gauss_fields(0.0, 0.0, L);
        CHECK(f.w == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(f.a_a == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(f.a_x == doctest::Approx(std::cos(L)).epsilon(1e-14));
        CHECK(f.a_y == doctest::Approx(std::sin(L)).epsilon(1e-14));
        CHECK(f.b_x == doctest::Approx(-std::sin(L)).epsilon(1e-14));
        CHECK(f.b_y == doctest::Approx(std::cos(L)).epsilon(1e-14));
    }
}

TEST_CASE("gauss_fields w at a reference point") {
    const GaussFields f = gauss_fields(0.3, -0.2, 0.0);
    CHECK(f.w == doctest::Approx(1.3 * 1.3 / std::pow(0.87, 1.5)).epsilon(1e-14));
    CHECK(f.w > 0.0);
    CHECK_THROWS_AS(gauss_fields(0.999, 0.0, 0.0), DomainError);
}

TEST_CASE("gauss_fields match the Cartesian two-body oracle") {
    Rng rng(17);
    for (int i = 0; i < 50; ++i) {
        double ex, ey;
        rng.ecc(0.75, ex, ey);
        const double a = rng.uniform(0.5, 2.0);
        const double L = rng.uniform(0.0, kTwoPi);
        const GaussFields f = gauss_fields(ex, ey, L);
        const CartesianGauss o = cartesian_oracle(a, ex, ey, L);
        const double sa = std::sqrt(a);
        CHECK(sa * 2 * a * f.a_a == doctest::Approx(o.da_t).epsilon(1e-6));
        CHECK(sa * 2 * f.a_x == doctest::Approx(o.dex_t).epsilon(1e-6));
        CHECK(sa * 2 * f.a_y == doctest::Approx(o.dey_t).epsilon(1e-6));
        CHECK(sa * f.b_x == doctest::Approx(o.dex_n).epsilon(1e-6));
        CHECK(sa * f.b_y == doctest::Approx(o.dey_n).epsilon(1e-6));
    }
}

TEST_CASE("gauss_fields rotation equivariance") {
    Rng rng(23);
    for (int i = 0; i < 300; ++i) {
        double ex, ey;
        rng.ecc(0.85, ex, ey);
        const double L = rng.uniform(0.0, kTwoPi);
        const double ph = rng.uniform(0.0, kTwoPi);
        const double c = std::cos(ph), s = std::sin(ph);
        const GaussFields f1 = gauss_fields(ex, ey, L);
        const GaussFields f2 = gauss_fields(ex * c - ey * s, ex * s + ey * c, L + ph);
        const double tol = 1e-12 * std::max({1.0, std::abs(f1.w), std::abs(f1.b_x),
                                             std::abs(f1.b_y)});
        CHECK(std::abs(f2.w - f1.w) <= tol);
        CHECK(std::abs(f2.a_a - f1.a_a) <= tol);
        CHECK(std::abs(f2.a_x - (f1.a_x * c - f1.a_y * s)) <= tol);
        CHECK(std::abs(f2.a_y - (f1.a_x * s + f1.a_y * c)) <= tol);
        CHECK(std::abs(f2.b_x - (f1.b_x * c - f1.b_y * s)) <= tol);
        CHECK(std::abs(f2.b_y - (f1.b_x * s + f1.b_y * c)) <= tol);
    }
}

TEST_CASE("mean motion identity over random eccentricities") {
    Rng rng(31);
    for (int i = 0; i < 200; ++i) {
        double ex, ey;
        rng.ecc(0.88, ex, ey);
        auto f = [&](double L) {
            Vec v(1);
            v[0] = 1.0 / gauss_fields(ex, ey, L).w;
            return v;
        };
        CHECK(integrate_periodic(f).value[0] == doctest::Approx(1.0).epsilon(1e-8));
    }
}

TEST_CASE("two_body_system basics") {
    const KeplerSystem sys = two_body_system();
    Vec x(3);
    x << 1.0, 0.0, 0.0;
    CHECK(sys.omega(0.3, x) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(sys.g(0.3, x).norm() == 0.0);  // no control on the angle row
    // mean pulsation: omegabar = a^{-3/2}
    CHECK(mean_pulsation(sys, x) == doctest::Approx(1.0).epsilon(1e-10));
    Vec x4(3);
    x4 << 4.0, 0.1, -0.2;
    CHECK(mean_pulsation(sys, x4) == doctest::Approx(1.0 / 8.0).epsilon(1e-10));
}

TEST_CASE("two_body rank conditions") {
    const KeplerSystem sys = two_body_system();
    Rng rng(41);
    for (int i = 0; i < 200; ++i) {
        double ex, ey;
        rng.ecc(0.8, ex, ey);
        Vec x(3);
        x << rng.uniform(0.5, 2.0), ex, ey;
        const double L = rng.uniform(0.0, kTwoPi);
        CHECK(theta_rank(sys, L, x, 0) == 2);   // rank G = m = 2
        CHECK(theta_rank(sys, L, x, 1) == 3);   // rank {G, dG/dL} = 3
    }
}

TEST_CASE("reduced_hamiltonian values and homogeneity") {
    CHECK(reduced_hamiltonian(0.2, -0.1, 0.0, 0.0, 0.0) == doctest::Approx(0.0));
    // e = 0, (A,X,Y) = (1,0,0): integrand is constantly 2
    CHECK(reduced_hamiltonian(0.0, 0.0, 1.0, 0.0, 0.0) == doctest::Approx(2.0).epsilon(1e-10));
    Rng rng(47);
    for (int i = 0; i < 20; ++i) {
        double ex, ey;
        rng.ecc(0.7, ex, ey);
        const double A = rng.uniform(-1, 1), X = rng.uniform(-1, 1), Y = rng.uniform(-1, 1);
        const double h1 = reduced_hamiltonian(ex, ey, A, X, Y);
        const double h2 = reduced_hamiltonian(ex, ey, 2 * A, 2 * X, 2 * Y);
        CHECK(h2 == doctest::Approx(2.0 * h1).epsilon(1e-9));
    }
}

TEST_CASE("reduced_hamiltonian ties to the full Kepler Hamiltonian") {
    const KeplerSystem sys = two_body_system();
    Rng rng(53);
    for (int i = 0; i < 10; ++i) {
        double ex, ey;
        rng.ecc(0.6, ex, ey);
        const double a = rng.uniform(0.6, 1.8);
        Vec x(3), p(3);
        x << a, ex, ey;
        p << rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1);
        const double full = hamiltonian(sys, {x, p});
        const double reduced =
            std::sqrt(a) * reduced_hamiltonian(ex, ey, a * p[0], p[1], p[2]);
        CHECK(full == doctest::Approx(reduced).epsilon(1e-8));
    }
}

TEST_CASE("reduced_hamiltonian rotation invariance") {
    Rng rng(59);
    for (int i = 0; i < 40; ++i) {
        double ex, ey;
        rng.ecc(0.85, ex, ey);
        const double A = rng.uniform(-1, 1), X = rng.uniform(-1, 1), Y = rng.uniform(-1, 1);
        const double ph = rng.uniform(0.0, kTwoPi);
        const double c = std::cos(ph), s = std::sin(ph);
        const double h1 = reduced_hamiltonian(ex, ey, A, X, Y);
        const double h2 = reduced_hamiltonian(ex * c - ey * s, ex * s + ey * c, A,
                                              X * c - Y * s, X * s + Y * c);
        CHECK(h2 == doctest::Approx(h1).epsilon(1e-8));
    }
}

TEST_CASE("switch_angle closed-form cases") {
    auto sw = switch_angle(0.0, 0.0, -1.0, 1.0, 0.0);
    REQUIRE(sw.has_value());
    CHECK(std::min(*sw, kTwoPi - *sw) <= 1e-10);
    CHECK_FALSE(switch_angle(0.0, 0.0, -2.0, 1.0, 0.0).has_value());
    CHECK_THROWS_AS(switch_angle(0.1, 0.0, 0.0, 0.0, 0.0), std::invalid_argument);
}

TEST_CASE("switch_angle agrees with brute-force zero location") {
    Rng rng(61);
    int with_switch = 0;
    for (int i = 0; i < 300; ++i) {
        double ex, ey;
        rng.ecc(0.85, ex, ey);
        Vec axy(3);
        axy << rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1);
        axy.normalize();
        auto phi = [&](double L) -> Vec {
            return (axy.transpose() * reduced_profile_matrix(ex, ey, L)).transpose();
        };
        const auto zr = locate_zeros(phi);
        const auto sw = switch_angle(ex, ey, axy[0], axy[1], axy[2]);
        CHECK(zr.zeros.size() <= 1);
        CHECK(zr.zeros.size() == (sw.has_value() ? 1u : 0u));
        if (sw && !zr.zeros.empty()) {
            ++with_switch;
            const double gap = std::abs(std::remainder(zr.zeros[0].angle - *sw, kTwoPi));
            CHECK(gap <= 1e-6);
        }
    }
    (void)with_switch;  // generic costates rarely carry a switch
}

TEST_CASE("switch_angle on constructed kink costates") {
    // kernel construction places a zero exactly at the chosen longitude
    Rng rng(67);
    for (int i = 0; i < 100; ++i) {
        double ex, ey;
        rng.ecc(0.8, ex, ey);
        const double L = rng.uniform(0.0, kTwoPi);
        const ReducedCostate rc = reduced_costate_on_kink(ex, ey, L);
        const auto sw = switch_angle(ex, ey, rc.A, rc.X, rc.Y);
        REQUIRE(sw.has_value());
        CHECK(std::abs(std::remainder(*sw - L, kTwoPi)) <= 1e-7);
        auto phi = [&](double ang) -> Vec {
            Vec v(3);
            v << rc.A, rc.X, rc.Y;
            return (v.transpose() * reduced_profile_matrix(ex, ey, ang)).transpose();
        };
        const auto zr = locate_zeros(phi);
        REQUIRE(zr.zeros.size() == 1);
        CHECK(std::abs(std::remainder(zr.zeros[0].angle - L, kTwoPi)) <= 1e-7);
    }
}

TEST_CASE("det_M printed-matrix identity") {
    CHECK(det_M(0.0, 0.0, 0.0) == doctest::Approx(4.0).epsilon(1e-15));
    CHECK(det_M(0.5, 0.0, 1.0) == doctest::Approx(0.125 * 3.375 * 5.0).epsilon(1e-13));
    Rng rng(71);
    for (int i = 0; i < 1000; ++i) {
        double ex, ey;
        rng.ecc(0.95, ex, ey);
        const double lam = rng.uniform(-5.0, 5.0);
        const double e = std::hypot(ex, ey);
        const double rhs = std::pow(1.0 - e, 3) * std::pow(1.0 + e, 3) * (lam * lam + 4.0);
        CHECK(std::abs(det_M(ex, ey, lam) - rhs) <= 1e-10 * std::abs(rhs));
        CHECK(det_M(ex, ey, lam) > 0.0);
    }
}

TEST_CASE("orbital state validity") {
    OrbitalState s;
    s.a = 1.0;
    s.e_x = 0.3;
    s.e_y = 0.2;
    CHECK(s.valid());
    s.e_x = 0.95;
    CHECK_FALSE(s.valid());
    CHECK(s.valid(0.999));
    s.a = -1.0;
    CHECK_FALSE(s.valid(0.999));
}
