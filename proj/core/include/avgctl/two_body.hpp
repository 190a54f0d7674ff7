#pragma once

#include <optional>

#include "avgctl/quadrature.hpp"
#include "avgctl/systems.hpp"
#include "avgctl/types.hpp"

namespace avgctl {

/// Dimensionless factors of the planar tangential-normal variational
/// equations for (a, e_x, e_y, L).
struct GaussFields {
    double w, a_a, a_x, a_y, b_x, b_y;
};

inline constexpr double kDefaultEccCap = 0.9;
inline constexpr double kHardEccCap = 0.999;

struct OrbitalState {
    double a = 1.0;
    double e_x = 0.0;
    double e_y = 0.0;
    AngleS1 L{0.0};

    double ecc() const;
    bool valid(double e_cap = kDefaultEccCap) const;
};

/// JSON wire form {"a": ..., "ex": ..., "ey": ..., "L": ...}.
std::string orbital_state_to_json(const OrbitalState& s);
OrbitalState orbital_state_from_json(const std::string& text);

/// Reduced costate (A, X, Y) = (a p_a, p_ex, p_ey).
struct ReducedCostate {
    double A = 0.0;
    double X = 0.0;
    double Y = 0.0;
};

/// Evaluates the six closed-form factors. a_y uses (e_y + sin L): the
/// variant with (e_x + cos L) breaks frame equivariance and the rank
/// condition on {G, dG/dL}, as the tests demonstrate.
GaussFields gauss_fields(double e_x, double e_y, double L);

/// The 3 x 2 reduced profile matrix with rows
/// (2 a_a / w, 0), (2 a_x / w, b_x / w), (2 a_y / w, b_y / w).
Mat reduced_profile_matrix(double e_x, double e_y, double L);

/// Planar two-body system in state (a, e_x, e_y) and longitude L:
/// omega = sqrt(mu) w / a^{3/2}, G columns sqrt(a/mu) (2a a_a, 2a_x, 2a_y)^T
/// and sqrt(a/mu) (0, b_x, b_y)^T, no control on the angle row.
KeplerSystem two_body_system(double mu_norm = 1.0, double e_cap = kDefaultEccCap);

/// script-H(e_x, e_y, A, X, Y): the a-independent factor of the averaged
/// Hamiltonian, H = sqrt(a) script-H(e_x, e_y, a p_a, p_ex, p_ey).
double reduced_hamiltonian(double e_x, double e_y, double A, double X, double Y,
                           const QuadratureSpec& spec = {});

/// The unique longitude where (A X Y) G(e_x, e_y, .) vanishes, when it
/// exists. Solves the linear-trigonometric system for (cos L, sin L) and
/// accepts only on-circle solutions with small residual.
std::optional<double> switch_angle(double e_x, double e_y, double A, double X, double Y);

/// Determinant of the 3 x 3 dichotomy matrix M(e_x, e_y, lambda);
/// equals (1-e)^3 (1+e)^3 (lambda^2 + 4).
double det_M(double e_x, double e_y, double lambda);

/// The (unit-norm) reduced costate whose profile row vanishes exactly at L:
/// the kernel of G(e_x, e_y, L)^T. Useful for constructing points on the
/// kink set.
ReducedCostate reduced_costate_on_kink(double e_x, double e_y, double L);

}  // namespace avgctl
