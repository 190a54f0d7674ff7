#pragma once

#include <functional>
#include <map>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "avgctl/types.hpp"

namespace avgctl {

using FieldFn = std::function<Mat(double theta, const StateVec& x)>;
using FieldThetaDerivFn = std::function<Mat(double theta, const StateVec& x)>;
// result[k] = dG/dx_k, each n x m.
using FieldStateDerivFn = std::function<std::vector<Mat>(double theta, const StateVec& x)>;
using DriftFn = std::function<Vec(double theta, const StateVec& x)>;
using DomainFn = std::function<bool(const StateVec& x)>;
using PulseFn = std::function<double(double theta, const StateVec& x)>;
using PulseCtlFn = std::function<RowVec(double theta, const StateVec& x)>;

/// Central-difference defaults used when no analytic derivative is registered.
inline constexpr double kFdThetaStep = 1e-3;
inline constexpr double kFdStateStep = 1e-3;
inline constexpr int kFdMaxThetaOrder = 4;

/// Control-linear field family G(theta, x), 2*pi-periodic in theta.
/// Immutable after construction; callbacks must be pure.
struct OscillatingSystem {
    int n = 0;
    int m = 0;
    FieldFn field;
    FieldThetaDerivFn d_field_dtheta;  // optional, first order only
    FieldStateDerivFn d_field_dx;      // optional
    DriftFn drift;                     // optional affine term G_0
    DomainFn in_domain;                // optional, defaults to all of R^n
    std::string label;

    bool has_drift() const { return static_cast<bool>(drift); }
    bool contains(const StateVec& x) const;
    void require_in_domain(const StateVec& x) const;

    Mat G(double theta, const StateVec& x) const;
    /// d^j G / d theta^j, j in [0, 4]; analytic callback used for j = 1
    /// when registered, 4th-order central differences otherwise.
    Mat G_dtheta(double theta, const StateVec& x, int order) const;
    /// Stack of state Jacobians dG/dx_k, k = 0..n-1 (step scaled by 1+||x||).
    std::vector<Mat> G_dx(double theta, const StateVec& x) const;
    Vec drift_at(double theta, const StateVec& x) const;
};

/// System (theta', x') = (omega + g v, G v) whose free motion is periodic
/// with pulsation omega >= pulse_floor > 0.
struct KeplerSystem {
    int n = 0;
    int m = 0;
    PulseFn pulse;
    PulseCtlFn pulse_ctl;  // optional, zero row when absent
    FieldFn field;
    double pulse_floor = 0.0;
    DomainFn in_domain;
    std::string label;

    bool contains(const StateVec& x) const;
    void require_in_domain(const StateVec& x) const;

    double omega(double theta, const StateVec& x) const;  // enforces the floor
    RowVec g(double theta, const StateVec& x) const;
    Mat G(double theta, const StateVec& x) const;
    /// d omega / dx_k by 4th-order central differences.
    Vec omega_dx(double theta, const StateVec& x) const;
    std::vector<Mat> G_dx(double theta, const StateVec& x) const;
};

/// Reduction to the fast-oscillating field script-G = G / omega, the
/// epsilon -> 0 limit of the angle-clock rewrite (the order-epsilon
/// denominator term is discarded).
OscillatingSystem kepler_to_oscillating(const KeplerSystem& ksys);

using AnySystem = std::variant<OscillatingSystem, KeplerSystem>;

int system_state_dim(const AnySystem& sys);
int system_control_dim(const AnySystem& sys);
const std::string& system_label(const AnySystem& sys);

/// A registered system together with samplers for randomized checks.
struct SystemEntry {
    AnySystem system;
    std::function<StateVec(std::mt19937_64&)> sample_state;
    std::function<CostateVec(std::mt19937_64&)> sample_costate;
    std::string note;
};

class SystemRegistry {
  public:
    /// Ships rotating_field, rotating_field_2 and two_body_planar.
    static const SystemRegistry& builtin();

    void add(const std::string& label, SystemEntry entry);
    bool contains(const std::string& label) const;
    const SystemEntry& at(const std::string& label) const;
    std::vector<std::string> labels() const;

  private:
    std::map<std::string, SystemEntry> entries_;
};

/// Samples ||G(theta,x) - G(theta + 2*pi, x)|| at random points; throws
/// DomainError when the field fails to be periodic to 1e-12.
void check_periodicity(const OscillatingSystem& sys,
                       const std::function<StateVec(std::mt19937_64&)>& sample_state,
                       std::mt19937_64& rng, int samples = 16, double tol = 1e-12);
void check_periodicity(const KeplerSystem& sys,
                       const std::function<StateVec(std::mt19937_64&)>& sample_state,
                       std::mt19937_64& rng, int samples = 16, double tol = 1e-12);

}  // namespace avgctl
