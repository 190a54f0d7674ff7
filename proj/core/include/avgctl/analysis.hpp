#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "avgctl/averaging.hpp"
#include "avgctl/dynamics.hpp"
#include "avgctl/systems.hpp"
#include "avgctl/types.hpp"

namespace avgctl {

struct SweepOptions {
    double theta0 = 0.0;         // initial angle for Kepler runs
    int sup_grid = 1000;         // comparison grid for the sup distance
    IntegratorSpec integrator;
    QuadratureSpec quadrature;
    /// Errors at or below this floor mark the sweep degenerate (no fit).
    double error_floor = 1e-8;
};

struct ConvergenceReport {
    std::vector<double> eps_list;    // strictly decreasing
    std::vector<double> sup_errors;
    std::vector<bool> ok;            // per-eps run success
    double fitted_slope = 0.0;
    double fitted_log_intercept = 0.0;
    double r_squared = 0.0;
    bool degenerate = false;         // all errors at the integrator floor

    void write_csv(std::ostream& os) const;
};

/// For each eps, drives the oscillating (or Kepler) system with the
/// recovery control built from u0 and fits log(sup error) against log(eps).
ConvergenceReport convergence_sweep(const OscillatingSystem& sys, const StateVec& x0,
                                    const JointControl& u0, double T,
                                    const std::vector<double>& eps_list,
                                    const SweepOptions& opts = {});
ConvergenceReport convergence_sweep(const KeplerSystem& sys, const StateVec& x0,
                                    const JointControl& u0, double T,
                                    const std::vector<double>& eps_list,
                                    const SweepOptions& opts = {});

struct ResidualOptions {
    int n_grid = 500;
    DualNormOptions dual;
};

/// max over a time grid of max(0, N(x(t), x'(t)) - 1), the violation of the
/// averaged differential inclusion; <= 5e-3 certifies averaged-feasibility.
double inclusion_residual(const OscillatingSystem& sys, const Trajectory& traj,
                          const ResidualOptions& opts = {});
double inclusion_residual(const KeplerSystem& sys, const Trajectory& traj,
                          const ResidualOptions& opts = {});

struct GradCheckReport {
    double max_rel_error = 0.0;
    int accepted = 0;
    int rejected = 0;
};

/// Compares grad_hamiltonian against a 4th-order central-difference oracle
/// at random (x, p) drawn from the entry's samplers, rejecting points too
/// close to the kink set.
GradCheckReport grad_check(const SystemEntry& entry, int samples, double exclusion_radius = 0.05,
                           std::uint64_t seed = 1);

struct LipLogReport {
    std::vector<double> radii;
    std::vector<double> liplog_ratios;     // max ||dH(X)-dH(Y)|| / (r ln(1/r))
    std::vector<double> lipschitz_ratios;  // max ||dH(X)-dH(Y)|| / r
    double center_zero_angle = 0.0;

    void write_csv(std::ostream& os) const;
};

/// Samples straddling pairs around a point of the kink set and records the
/// log-modulus ratios of dH. The center must carry exactly one zero angle.
LipLogReport liplog_modulus(const OscillatingSystem& sys, const CotangentPoint& center,
                            const std::vector<double>& radii, int pairs = 64,
                            std::uint64_t seed = 1);
LipLogReport liplog_modulus(const KeplerSystem& sys, const CotangentPoint& center,
                            const std::vector<double>& radii, int pairs = 64,
                            std::uint64_t seed = 1);

/// Integrates the averaged extremal flow from z0 and from 16 perturbations
/// of size delta; returns the max terminal spread.
double flow_uniqueness_probe(const OscillatingSystem& sys, const CotangentPoint& z0, double delta,
                             double T, int n_perturb = 16, std::uint64_t seed = 1);
double flow_uniqueness_probe(const KeplerSystem& sys, const CotangentPoint& z0, double delta,
                             double T, int n_perturb = 16, std::uint64_t seed = 1);

struct ShootOptions {
    int multistarts = 8;
    std::uint64_t seed = 1;
    IntegratorSpec integrator;
    QuadratureSpec quadrature;
};

struct ShootingResult {
    double T0 = 0.0;
    CostateVec p0;          // normalized so that H(x0, p0) = 1
    double terminal_miss = 0.0;
    int iterations = 0;
    Trajectory extremal;    // the extremal reaching x1
};

/// Damped Newton / Levenberg-Marquardt shooting for the averaged
/// minimum-time extremal from x0 to x1. Certifies a locally minimal
/// extremal time only.
ShootingResult min_time_shoot(const OscillatingSystem& sys, const StateVec& x0, const StateVec& x1,
                              double shoot_tol = 1e-6, int max_iter = 200,
                              const ShootOptions& opts = {});
ShootingResult min_time_shoot(const KeplerSystem& sys, const StateVec& x0, const StateVec& x1,
                              double shoot_tol = 1e-6, int max_iter = 200,
                              const ShootOptions& opts = {});

struct TimeLimitOptions {
    double horizon_factor = 1.5;
    IntegratorSpec integrator;
    QuadratureSpec quadrature;
    ShootOptions shoot;
};

struct TimeLimitReport {
    double T0 = 0.0;
    CostateVec p0;
    double ball_constant = 0.0;        // C fitted from the recovery runs
    std::vector<double> eps_list;
    std::vector<double> reach_times;   // slow-time reach (eps * t for Kepler)
    std::vector<bool> ok;
    double excess_slope = 0.0;         // fit of log|reach - T0| vs log eps

    void write_csv(std::ostream& os) const;
};

/// Builds the recovery control from the shooting extremal (zero-order hold
/// of the costate along the averaged trajectory), integrates the fast system
/// for each eps and records the first entry into B(x1, C eps).
TimeLimitReport time_limit_probe(const OscillatingSystem& sys, const std::vector<double>& eps_list,
                                 const StateVec& x0, const StateVec& x1,
                                 const TimeLimitOptions& opts = {},
                                 const ShootingResult* shot = nullptr);
TimeLimitReport time_limit_probe(const KeplerSystem& sys, const std::vector<double>& eps_list,
                                 const StateVec& x0, const StateVec& x1,
                                 const TimeLimitOptions& opts = {},
                                 const ShootingResult* shot = nullptr);

struct BracketRankResult {
    int lhs_rank = 0;   // dim sum_j Range d^j G / d theta^j
    int rhs_rank = 0;   // rank {f0} U {ad_{f0}^j f_k}
    bool reliable = true;
    double cond = 0.0;
};

/// Checks the identity rhs = lhs + 1 relating angle-derivative ranks of G to
/// iterated-bracket ranks of the affine fields on S^1 x V. Brackets are
/// nested central differences (base step 1e-4, Richardson extrapolated);
/// j_max <= 3.
BracketRankResult bracket_rank_check(const KeplerSystem& sys, double theta, const StateVec& x,
                                     int j_max, double sv_tol = 1e-6);

/// Least-squares slope/intercept/r^2 of log(y) against log(x).
struct LogLogFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
};
LogLogFit loglog_fit(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace avgctl
