#include "avgctl/two_body.hpp"

#include <cmath>
#include <cstdio>

#include <Eigen/Dense>
#include <json.hpp>

#include "avgctl/averaging.hpp"

namespace avgctl {

double OrbitalState::ecc() const { return std::hypot(e_x, e_y); }

std::string orbital_state_to_json(const OrbitalState& s) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "{\"a\":%.17g,\"ex\":%.17g,\"ey\":%.17g,\"L\":%.17g}",
                  s.a, s.e_x, s.e_y, s.L.raw());
    return buf;
}

OrbitalState orbital_state_from_json(const std::string& text) {
    const auto doc = nlohmann::json::parse(text);
    OrbitalState s;
    s.a = doc.at("a").get<double>();
    s.e_x = doc.at("ex").get<double>();
    s.e_y = doc.at("ey").get<double>();
    s.L = AngleS1(doc.at("L").get<double>());
    if (!s.valid(kHardEccCap)) throw DomainError("orbital state outside the domain");
    return s;
}

bool OrbitalState::valid(double e_cap) const {
    return a > 0.0 && std::isfinite(a) && ecc() < e_cap;
}

GaussFields gauss_fields(double e_x, double e_y, double L) {
    const double e2 = e_x * e_x + e_y * e_y;
    if (!(e2 < kHardEccCap * kHardEccCap))
        throw DomainError("gauss_fields: eccentricity at or above the hard cap");
    const double s = std::sqrt(1.0 - e2);
    const double c = std::cos(L), sl = std::sin(L);
    const double k = e_x * c + e_y * sl;
    const double Q = std::sqrt(1.0 + e2 + 2.0 * k);
    const double W = 1.0 + k;  // > 1 - e > 0 on the domain
    GaussFields f;
    f.w = W * W / (s * s * s);
    f.a_a = Q / s;
    f.a_x = s / Q * (e_x + c);
    f.a_y = s / Q * (e_y + sl);
    f.b_x = s / Q * (-2.0 * e_y + (e_x * e_x - e_y * e_y - 1.0) * sl - 2.0 * e_x * e_y * c) / W;
    f.b_y = s / Q * (2.0 * e_x + (e_x * e_x - e_y * e_y + 1.0) * c + 2.0 * e_x * e_y * sl) / W;
    return f;
}

Mat reduced_profile_matrix(double e_x, double e_y, double L) {
    const GaussFields f = gauss_fields(e_x, e_y, L);
    Mat g(3, 2);
    g << 2.0 * f.a_a / f.w, 0.0,
         2.0 * f.a_x / f.w, f.b_x / f.w,
         2.0 * f.a_y / f.w, f.b_y / f.w;
    return g;
}

KeplerSystem two_body_system(double mu_norm, double e_cap) {
    if (!(mu_norm > 0.0)) throw std::invalid_argument("two_body_system: mu must be positive");
    if (!(e_cap > 0.0 && e_cap <= kHardEccCap))
        throw std::invalid_argument("two_body_system: e_cap outside (0, 0.999]");
    constexpr double a_min = 0.05, a_max = 100.0;
    const double mu = mu_norm;

    KeplerSystem sys;
    sys.n = 3;
    sys.m = 2;
    sys.label = "two_body_planar";
    sys.in_domain = [e_cap](const StateVec& x) {
        return x.size() == 3 && x[0] > a_min && x[0] < a_max &&
               std::hypot(x[1], x[2]) < e_cap;
    };
    sys.pulse = [mu](double L, const StateVec& x) {
        return std::sqrt(mu) * gauss_fields(x[1], x[2], L).w / std::pow(x[0], 1.5);
    };
    sys.field = [mu](double L, const StateVec& x) {
        const GaussFields f = gauss_fields(x[1], x[2], L);
        const double sa = std::sqrt(x[0] / mu);
        Mat g(3, 2);
        g << 2.0 * x[0] * f.a_a, 0.0,
             2.0 * f.a_x, f.b_x,
             2.0 * f.a_y, f.b_y;
        return Mat(sa * g);
    };
    // w >= (1-e)^(1/2) / (1+e)^(3/2) on e < e_cap; keep a 0.9 safety factor.
    const double w_min = std::sqrt(1.0 - e_cap) / std::pow(1.0 + e_cap, 1.5);
    sys.pulse_floor = 0.9 * std::sqrt(mu) * w_min / std::pow(a_max, 1.5);
    return sys;
}

double reduced_hamiltonian(double e_x, double e_y, double A, double X, double Y,
                           const QuadratureSpec& spec) {
    const double e2 = e_x * e_x + e_y * e_y;
    if (!(e2 < kHardEccCap * kHardEccCap))
        throw DomainError("reduced_hamiltonian: eccentricity above the hard cap");
    RowVec axy(3);
    axy << A, X, Y;
    std::vector<double> kinks;
    if (spec.kink_split && (A != 0.0 || X != 0.0 || Y != 0.0)) {
        if (auto sw = switch_angle(e_x, e_y, A, X, Y)) kinks.push_back(*sw);
    }
    auto f = [&](double L) -> Vec {
        Vec out(1);
        out[0] = (axy * reduced_profile_matrix(e_x, e_y, L)).norm();
        return out;
    };
    return integrate_periodic(f, spec, kinks).value[0];
}

std::optional<double> switch_angle(double e_x, double e_y, double A, double X, double Y) {
    if (A == 0.0 && X == 0.0 && Y == 0.0)
        throw std::invalid_argument("switch_angle: zero reduced costate");
    const double e2 = e_x * e_x + e_y * e_y;
    if (!(e2 < kHardEccCap * kHardEccCap))
        throw DomainError("switch_angle: eccentricity above the hard cap");
    const double s2 = 1.0 - e2;
    // Linear-trigonometric system in (cos L, sin L) from the two profile rows
    // with all denominators removed.
    const double c1 = 2.0 * A * e_x + s2 * X;
    const double s1 = 2.0 * A * e_y + s2 * Y;
    const double r1 = -((1.0 + e2) * A + s2 * (e_x * X + e_y * Y));
    const double c2 = -2.0 * e_x * e_y * X + (e_x * e_x - e_y * e_y + 1.0) * Y;
    const double s2c = (e_x * e_x - e_y * e_y - 1.0) * X + 2.0 * e_x * e_y * Y;
    const double r2 = 2.0 * (e_y * X - e_x * Y);

    const double det = c1 * s2c - s1 * c2;
    const double scale = std::hypot(c1, s1) * std::hypot(c2, s2c);
    if (!(std::abs(det) > 1e-12 * std::max(scale, 1e-300))) return std::nullopt;

    const double C = (r1 * s2c - s1 * r2) / det;
    const double S = (c1 * r2 - r1 * c2) / det;
    if (std::abs(C * C + S * S - 1.0) > 1e-8) return std::nullopt;

    double L = normalize_angle(std::atan2(S, C));
    RowVec axy(3);
    axy << A, X, Y;
    // polish off the on-circle projection slack
    auto residual = [&](double ang) { return (axy * reduced_profile_matrix(e_x, e_y, ang)).norm(); };
    double best = residual(L), step = 1e-6;
    for (int it = 0; it < 60 && step > 1e-15; ++it) {
        bool moved = false;
        for (double cand : {L - step, L + step}) {
            const double r = residual(cand);
            if (r < best) {
                best = r;
                L = cand;
                moved = true;
            }
        }
        if (!moved) step *= 0.5;
    }
    const double norm_axy = std::sqrt(A * A + X * X + Y * Y);
    if (!(best <= 1e-9 * std::max(1.0, norm_axy))) return std::nullopt;
    return normalize_angle(L);
}

double det_M(double e_x, double e_y, double lambda) {
    const double e2 = e_x * e_x + e_y * e_y;
    Eigen::Matrix3d M;
    M << 2.0 * e_x, 2.0 * (1.0 - e2 + lambda * e_x * e_y), -lambda * (e_x * e_x - e_y * e_y + 1.0),
         2.0 * e_y, -lambda * (e_x * e_x - e_y * e_y - 1.0), 2.0 * (1.0 - e2 - lambda * e_x * e_y),
         1.0 + e2, 2.0 * (e_x * (1.0 - e2) + lambda * e_y), 2.0 * (e_y * (1.0 - e2) - lambda * e_x);
    return M.determinant();
}

ReducedCostate reduced_costate_on_kink(double e_x, double e_y, double L) {
    const Mat g = reduced_profile_matrix(e_x, e_y, L);  // 3 x 2, rank 2
    Eigen::JacobiSVD<Mat> svd(g.transpose(), Eigen::ComputeFullV);
    const Vec kernel = svd.matrixV().col(2);  // null direction of G^T
    ReducedCostate rc;
    rc.A = kernel[0];
    rc.X = kernel[1];
    rc.Y = kernel[2];
    return rc;
}

}  // namespace avgctl
