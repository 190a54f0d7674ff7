#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace avgctl {

/// State outside the declared system domain, or invalid numeric input.
struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

/// A requested optional capability (drift, analytic derivative) is absent.
struct NotConfiguredError : std::logic_error {
    using std::logic_error::logic_error;
};

/// Finite-difference fallback asked for a derivative order it cannot deliver.
struct UnsupportedOrderError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Adaptive quadrature ran out of subdivisions; carries the best estimate.
struct QuadratureError : std::runtime_error {
    Eigen::VectorXd best_estimate;
    double err_est;
    QuadratureError(const std::string& what, Eigen::VectorXd best, double err)
        : std::runtime_error(what), best_estimate(std::move(best)), err_est(err) {}
};

/// H(x,p) vanished for some p != 0: the support function is not a norm here.
struct DegenerateMetricError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Gradient of H requested at p = 0, where H is not differentiable.
struct UndefinedGradientError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Switching function and its time derivative both below event tolerance.
struct AmbiguousSwitchError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Modulus probe centered at a point with no (or multiple) kink angles.
struct InvalidCenterError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ShootingFailedError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Cumulated angle failed to be strictly increasing.
struct RescaleError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ProbeFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace avgctl
