#pragma once

#include <functional>
#include <vector>

#include "avgctl/types.hpp"

namespace avgctl {

struct QuadratureSpec {
    double abs_tol = 1e-10;
    double rel_tol = 1e-10;
    int max_subdiv = 2000;
    bool kink_split = true;
    int n_scan = 720;  // locate_zeros scan resolution
};

struct QuadratureResult {
    Vec value;       // (1/2pi) * integral over [0, 2pi]
    double err_est;  // estimated absolute error on value
};

using PeriodicFn = std::function<Vec(double theta)>;

/// Mean value of a 2*pi-periodic vector map by adaptive Gauss-Kronrod
/// (G7/K15) bisection. Known kink angles partition the interval first.
QuadratureResult integrate_periodic(const PeriodicFn& f, const QuadratureSpec& spec = {},
                                    const std::vector<double>& kinks = {});

struct ZeroReport {
    struct Zero {
        double angle;          // in [0, 2pi)
        bool degenerate;       // ||dphi/dtheta|| < 1e-6 * scale at the zero
    };
    std::vector<Zero> zeros;          // sorted by angle
    std::vector<double> residuals;    // ||phi|| at each reported zero
    std::vector<double> split_hints;  // polished local minima below the scan
                                      // threshold (superset of zero angles)
    double scan_max = 0.0;            // max ||phi|| over the scan grid
    double scan_min = 0.0;            // min over polished local minima (or grid)
    double scan_min_angle = 0.0;
    double dphi_at_min = 0.0;         // ||dphi/dtheta|| at the min angle

    bool empty() const { return zeros.empty(); }
    std::vector<double> angles() const;
};

/// Finds the zeros of a continuous 2*pi-periodic vector map by scanning
/// n_scan uniform samples of ||phi|| for local minima below 1e-3 * scale,
/// then polishing each bracket by golden-section search. Simple zeros whose
/// basin exceeds the scan step are guaranteed to be found.
ZeroReport locate_zeros(const PeriodicFn& phi, const QuadratureSpec& spec = {});

}  // namespace avgctl
