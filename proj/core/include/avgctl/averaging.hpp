#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "avgctl/quadrature.hpp"
#include "avgctl/systems.hpp"
#include "avgctl/types.hpp"

namespace avgctl {

/// Threshold deciding the <p, G> = 0 branch of the optimal profile.
inline constexpr double kTolZero = 1e-12;
inline constexpr int kDefaultProfileBins = 256;

/// An element U of L^inf(S^1, R^m), ||U||_inf <= 1, either closed form or
/// piecewise constant over uniform bins (midpoint values).
class ControlProfile {
  public:
    ControlProfile() = default;

    static ControlProfile closed_form(int m, std::function<ControlVec(double)> fn,
                                      double sup_norm_bound = 1.0,
                                      std::vector<double> discontinuities = {});
    static ControlProfile piecewise_constant(const Mat& values);  // N_bins x m
    static ControlProfile zero(int m);
    static ControlProfile constant(const ControlVec& u);

    ControlVec operator()(double theta) const;

    int control_dim() const { return m_; }
    bool is_piecewise() const { return n_bins_ > 0; }
    int bins() const { return n_bins_; }
    double sup_norm_bound() const { return sup_norm_bound_; }
    const std::vector<double>& discontinuities() const { return discontinuities_; }

    /// Checks sup ||U(theta)|| <= 1 + 1e-12 over the representation
    /// (all bins, or a sample grid for closed forms).
    bool check_admissible(int samples = 512) const;

  private:
    int m_ = 0;
    int n_bins_ = 0;
    Mat values_;
    std::function<ControlVec(double)> fn_;
    double sup_norm_bound_ = 0.0;
    std::vector<double> discontinuities_;
};

struct VelocitySetProbe {
    StateVec x;
    int dim = 0;
    Mat span_basis;  // n x dim, orthonormal columns
};

/// Gbar(x, U): period average of G(theta, x) U(theta); Kepler systems use
/// the harmonic-mean weight omegabar(x) and the reduced field G/omega.
Vec average_velocity(const OscillatingSystem& sys, const StateVec& x, const ControlProfile& U,
                     const QuadratureSpec& spec = {});
Vec average_velocity(const KeplerSystem& sys, const StateVec& x, const ControlProfile& U,
                     const QuadratureSpec& spec = {});

/// Gbar_0(x) for control-affine systems.
Vec average_drift(const OscillatingSystem& sys, const StateVec& x, const QuadratureSpec& spec = {});

/// Support function H(x, p) of the velocity set: the period average of
/// ||<p, G(theta, x)>||, kink-split at the zeros of the integrand.
double hamiltonian(const OscillatingSystem& sys, const CotangentPoint& at,
                   const QuadratureSpec& spec = {});
double hamiltonian(const KeplerSystem& sys, const CotangentPoint& at,
                   const QuadratureSpec& spec = {});

/// The profile attaining the support value: U*(theta) is the normalized
/// transpose of <p, G(theta, x)>, zero where that row vanishes.
ControlProfile optimal_profile(const OscillatingSystem& sys, const CotangentPoint& at,
                               const QuadratureSpec& spec = {});
ControlProfile optimal_profile(const KeplerSystem& sys, const CotangentPoint& at,
                               const QuadratureSpec& spec = {});

struct HamGradient {
    Vec dx;
    Vec dp;
};

/// dH at (x, p), p != 0, by integrating <dV.h, V/||V||> with
/// V(theta) = <p, G(theta, x)>; the measure-zero set where V vanishes is
/// skipped. Kepler systems include omegabar and its gradient. The optional
/// report-out form also hands back the kink scan of the integrand.
HamGradient grad_hamiltonian(const OscillatingSystem& sys, const CotangentPoint& at,
                             const QuadratureSpec& spec = {});
HamGradient grad_hamiltonian(const KeplerSystem& sys, const CotangentPoint& at,
                             const QuadratureSpec& spec = {});
HamGradient grad_hamiltonian(const OscillatingSystem& sys, const CotangentPoint& at,
                             const QuadratureSpec& spec, ZeroReport* report_out);
HamGradient grad_hamiltonian(const KeplerSystem& sys, const CotangentPoint& at,
                             const QuadratureSpec& spec, ZeroReport* report_out);

enum class DualNormSolver { grid, multistart };

struct DualNormOptions {
    DualNormSolver solver = DualNormSolver::grid;
    int n_dir = 10000;         // sphere samples for the grid solver (n <= 3)
    int n_starts = 32;         // starts for the multistart solver
    int n_theta_coarse = 1024; // trapezoid resolution of the scan-stage H
    bool polish = true;
    QuadratureSpec quad = [] {
        QuadratureSpec q;
        q.n_scan = 240;  // inner H evals re-scan kinks per direction
        return q;
    }();
};

struct DualNormResult {
    double value = 0.0;
    CostateVec maximizer;  // p attaining <p, v> with H(x, p) = 1
};

/// N(x, v) = max{ <p, v> : H(x, p) <= 1 }, the gauge of the velocity set.
/// Throws DegenerateMetricError when H vanishes in some direction.
double dual_norm(const OscillatingSystem& sys, const StateVec& x, const Vec& v,
                 DualNormSolver solver = DualNormSolver::grid);
double dual_norm(const KeplerSystem& sys, const StateVec& x, const Vec& v,
                 DualNormSolver solver = DualNormSolver::grid);
DualNormResult dual_norm_full(const OscillatingSystem& sys, const StateVec& x, const Vec& v,
                              const DualNormOptions& opts = {});
DualNormResult dual_norm_full(const KeplerSystem& sys, const StateVec& x, const Vec& v,
                              const DualNormOptions& opts = {});

/// omegabar(x): harmonic mean of the pulsation over the angle.
double mean_pulsation(const KeplerSystem& sys, const StateVec& x, const QuadratureSpec& spec = {});
/// d omegabar / dx, differentiating under the integral with the same quadrature.
Vec mean_pulsation_grad(const KeplerSystem& sys, const StateVec& x, const QuadratureSpec& spec = {});

/// Numerical rank of [G, dG/dtheta, ..., d^j_max G/dtheta^j_max] at (theta, x).
/// j_max < 0 selects the state dimension n. SVD threshold is sv_tol relative
/// to the largest singular value.
int theta_rank(const OscillatingSystem& sys, double theta, const StateVec& x, int j_max = -1,
               double sv_tol = 1e-8);
int theta_rank(const KeplerSystem& sys, double theta, const StateVec& x, int j_max = -1,
               double sv_tol = 1e-8);

/// Dimension and orthonormal basis of span{ columns of G(theta_k, x) } over
/// a uniform angle grid.
VelocitySetProbe velocity_set_dim(const OscillatingSystem& sys, const StateVec& x, int n_grid = 64,
                                  double sv_tol = 1e-8);
VelocitySetProbe velocity_set_dim(const KeplerSystem& sys, const StateVec& x, int n_grid = 64,
                                  double sv_tol = 1e-8);

}  // namespace avgctl
