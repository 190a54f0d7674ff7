#pragma once

#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "avgctl/averaging.hpp"
#include "avgctl/systems.hpp"
#include "avgctl/types.hpp"

namespace avgctl {

enum class ExitFlag {
    completed,
    domain_exit,           // left the declared domain or blew up
    degenerate_extremal,   // costate reached zero
    step_underflow,
};

const char* exit_flag_name(ExitFlag flag);

/// One integration step's quartic interpolant
///   y(t0 + s h) = r1 + s (r2 + (1-s)(r3 + s (r4 + (1-s) r5))).
/// Cubic Hermite segments set r5 = 0.
struct DenseSeg {
    double t0 = 0.0;
    double h = 0.0;
    Vec r1, r2, r3, r4, r5;

    Vec eval(double t) const;
    Vec eval_deriv(double t) const;
};

/// Time-stamped states (optionally costates) with dense output.
class Trajectory {
  public:
    std::vector<double> times;
    Mat states;                    // K x n
    std::optional<Mat> costates;   // K x n
    std::vector<double> events;    // e.g. detected switch times
    ExitFlag flag = ExitFlag::completed;

    std::vector<DenseSeg> segs;    // one per step, over the full y vector

    int state_dim() const { return static_cast<int>(states.cols()); }
    int ydim() const;
    std::size_t size() const { return times.size(); }
    double t_start() const { return times.front(); }
    double t_end() const { return times.back(); }

    Vec eval(double t) const;        // full y = [x; p]
    Vec eval_deriv(double t) const;
    Vec state(double t) const;
    Vec state_deriv(double t) const;
    Vec costate(double t) const;

    /// CSV columns: t, x_1..x_n[, p_1..p_n].
    void write_csv(std::ostream& os) const;
    /// JSON document with schema "avgctl-traj-1".
    void write_json(std::ostream& os, const std::string& label = "") const;
};

/// Jointly measurable control (t, theta) -> u with ||u|| <= 1, prolonged by
/// zero outside [0, horizon].
struct JointControl {
    std::function<ControlVec(double t, double theta)> u;
    double horizon = 0.0;
    int m = 0;
    std::vector<double> theta_kinks;  // static discontinuity angles, if any
    // time-dependent discontinuity angles (overrides theta_kinks when set);
    // undeclared jumps can hide between quadrature nodes
    std::function<std::vector<double>(double t)> kinks_at;

    ControlVec operator()(double t, double theta) const;
};

struct IntegratorSpec {
    double abs_tol = 1e-9;
    double rel_tol = 1e-9;
    double max_step = std::numeric_limits<double>::infinity();
    double event_tol = 1e-10;
    long max_steps = 4000000;
};

/// x' = G(t/eps, x) u(t) (+ drift when registered), adaptive RK45 with the
/// step capped at pi*eps/4 to resolve the oscillation. Domain exit or
/// blow-up truncates the trajectory and sets the exit flag.
Trajectory integrate_oscillating(const OscillatingSystem& sys, double eps,
                                 const std::function<ControlVec(double)>& u, const StateVec& x0,
                                 double t0, double t1, const IntegratorSpec& spec = {});

/// x'(t) = Gbar(x(t), u(t, .)); every right-hand side evaluation is one
/// periodic quadrature.
Trajectory integrate_average(const OscillatingSystem& sys, const StateVec& x0,
                             const JointControl& u, double t0, double t1,
                             const IntegratorSpec& spec = {}, const QuadratureSpec& qspec = {});
Trajectory integrate_average(const KeplerSystem& sys, const StateVec& x0, const JointControl& u,
                             double t0, double t1, const IntegratorSpec& spec = {},
                             const QuadratureSpec& qspec = {});

/// ubar_eps(t) = (1/2pi) integral of u0(t + eps mu(theta), t/eps) dtheta,
/// with u0 prolonged by zero beyond its horizon.
std::function<ControlVec(double)> recovery_control(const JointControl& u0, double eps,
                                                   const QuadratureSpec& qspec = {});

/// Extremal flow of the averaged minimum-time Hamiltonian:
/// p' = -dH/dx, x' = dH/dp. H is conserved; the relative drift along the
/// output is checked against 1e-6. Stops with degenerate_extremal if p -> 0.
Trajectory integrate_average_extremal(const OscillatingSystem& sys, const CotangentPoint& z0,
                                      double t0, double t1, const IntegratorSpec& spec = {},
                                      const QuadratureSpec& qspec = {});
Trajectory integrate_average_extremal(const KeplerSystem& sys, const CotangentPoint& z0,
                                      double t0, double t1, const IntegratorSpec& spec = {},
                                      const QuadratureSpec& qspec = {});

/// Oscillating-system extremal flow with u* = <p,G>^T / ||<p,G>||.
/// Switch events (the switching row crossing zero) are located to event_tol;
/// the control restarts from its post-event value. Detected switch times are
/// stored in Trajectory::events.
Trajectory integrate_oscillating_extremal(const OscillatingSystem& sys, double eps,
                                          const CotangentPoint& z0, double t0, double t1,
                                          const IntegratorSpec& spec = {});

/// Joint integration of theta' = omega + g v, x' = G v with ||v|| <= eps.
/// Column 0 of the returned states is the unwrapped cumulated angle.
Trajectory integrate_kepler(const KeplerSystem& sys, double eps,
                            const std::function<ControlVec(double)>& v, double theta0,
                            const StateVec& x0, double t0, double t1,
                            const IntegratorSpec& spec = {});
/// Same with a state-feedback control v(t, theta, x).
Trajectory integrate_kepler_fb(const KeplerSystem& sys, double eps,
                               const std::function<ControlVec(double, double, const StateVec&)>& v,
                               double theta0, const StateVec& x0, double t0, double t1,
                               const IntegratorSpec& spec = {});

/// lambda = eps (Theta(t) - Theta(0)) and the reinterpolated x(lambda).
struct TimeRescale {
    std::vector<double> t_nodes;
    std::vector<double> lambda_nodes;  // strictly increasing
    Trajectory x_of_lambda;            // states only (angle column dropped)

    double lambda_of_t(double t) const;
    double t_of_lambda(double lambda) const;
};

/// Requires a trajectory from integrate_kepler (unwrapped angle in column 0).
TimeRescale kepler_time_rescale(const Trajectory& traj, double eps);

}  // namespace avgctl
