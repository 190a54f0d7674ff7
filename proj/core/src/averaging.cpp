#include "avgctl/averaging.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "avgctl/detail/random.hpp"

namespace avgctl {

ControlProfile ControlProfile::closed_form(int m, std::function<ControlVec(double)> fn,
                                           double sup_norm_bound,
                                           std::vector<double> discontinuities) {
    ControlProfile p;
    p.m_ = m;
    p.fn_ = std::move(fn);
    p.sup_norm_bound_ = sup_norm_bound;
    p.discontinuities_ = std::move(discontinuities);
    return p;
}

ControlProfile ControlProfile::piecewise_constant(const Mat& values) {
    if (values.rows() < 1) throw std::invalid_argument("piecewise profile needs >= 1 bin");
    ControlProfile p;
    p.m_ = static_cast<int>(values.cols());
    p.n_bins_ = static_cast<int>(values.rows());
    p.values_ = values;
    p.sup_norm_bound_ = values.rowwise().norm().maxCoeff();
    p.discontinuities_.reserve(p.n_bins_);
    for (int i = 0; i < p.n_bins_; ++i) p.discontinuities_.push_back(kTwoPi * i / p.n_bins_);
    return p;
}

ControlProfile ControlProfile::zero(int m) {
    return closed_form(m, [m](double) { return ControlVec::Zero(m); }, 0.0);
}

ControlProfile ControlProfile::constant(const ControlVec& u) {
    const ControlVec c = u;
    return closed_form(static_cast<int>(u.size()), [c](double) { return c; }, u.norm());
}

ControlVec ControlProfile::operator()(double theta) const {
    if (n_bins_ > 0) {
        const double t = normalize_angle(theta);
        int bin = static_cast<int>(t / kTwoPi * n_bins_);
        bin = std::min(bin, n_bins_ - 1);
        return values_.row(bin).transpose();
    }
    return fn_(theta);
}

bool ControlProfile::check_admissible(int samples) const {
    if (n_bins_ > 0) return values_.rowwise().norm().maxCoeff() <= 1.0 + kControlTol;
    for (int i = 0; i < samples; ++i) {
        if ((*this)(kTwoPi * i / samples).norm() > 1.0 + kControlTol) return false;
    }
    return true;
}

namespace {

Vec phi_row(const FieldFn& field, const CostateVec& p, const StateVec& x, double theta) {
    return (p.transpose() * field(theta, x)).transpose();
}

std::vector<double> profile_kinks(const ControlProfile& U) { return U.discontinuities(); }

double fit_check_dims(int sys_n, int sys_m, const StateVec& x, const CostateVec& p) {
    if (x.size() != sys_n || p.size() != sys_n)
        throw std::invalid_argument("cotangent point dimension mismatch");
    (void)sys_m;
    return p.norm();
}

}  // namespace

Vec average_velocity(const OscillatingSystem& sys, const StateVec& x, const ControlProfile& U,
                     const QuadratureSpec& spec) {
    sys.require_in_domain(x);
    if (U.control_dim() != sys.m) throw std::invalid_argument("profile/control dim mismatch");
    auto f = [&](double th) -> Vec { return sys.field(th, x) * U(th); };
    return integrate_periodic(f, spec, profile_kinks(U)).value;
}

Vec average_velocity(const KeplerSystem& sys, const StateVec& x, const ControlProfile& U,
                     const QuadratureSpec& spec) {
    sys.require_in_domain(x);
    if (U.control_dim() != sys.m) throw std::invalid_argument("profile/control dim mismatch");
    const int n = sys.n;
    auto f = [&](double th) -> Vec {
        const double w = sys.omega(th, x);
        Vec out(n + 1);
        out.head(n) = sys.field(th, x) * U(th) / w;
        out[n] = 1.0 / w;
        return out;
    };
    const Vec r = integrate_periodic(f, spec, profile_kinks(U)).value;
    return r.head(n) / r[n];  // omegabar * mean(G U / omega)
}

Vec average_drift(const OscillatingSystem& sys, const StateVec& x, const QuadratureSpec& spec) {
    if (!sys.has_drift()) throw NotConfiguredError(sys.label + ": no drift registered");
    sys.require_in_domain(x);
    auto f = [&](double th) -> Vec { return sys.drift(th, x); };
    return integrate_periodic(f, spec).value;
}

double hamiltonian(const OscillatingSystem& sys, const CotangentPoint& at,
                   const QuadratureSpec& spec) {
    sys.require_in_domain(at.x);
    if (fit_check_dims(sys.n, sys.m, at.x, at.p) == 0.0) return 0.0;
    auto phi = [&](double th) { return phi_row(sys.field, at.p, at.x, th); };
    std::vector<double> hints;
    if (spec.kink_split) hints = locate_zeros(phi, spec).split_hints;
    auto f = [&](double th) -> Vec {
        Vec out(1);
        out[0] = phi(th).norm();
        return out;
    };
    return integrate_periodic(f, spec, hints).value[0];
}

double hamiltonian(const KeplerSystem& sys, const CotangentPoint& at, const QuadratureSpec& spec) {
    sys.require_in_domain(at.x);
    if (fit_check_dims(sys.n, sys.m, at.x, at.p) == 0.0) return 0.0;
    auto phi = [&](double th) { return phi_row(sys.field, at.p, at.x, th); };
    std::vector<double> hints;
    if (spec.kink_split) hints = locate_zeros(phi, spec).split_hints;
    auto f = [&](double th) -> Vec {
        const double w = sys.omega(th, at.x);
        Vec out(2);
        out[0] = phi(th).norm() / w;
        out[1] = 1.0 / w;
        return out;
    };
    const Vec r = integrate_periodic(f, spec, hints).value;
    return r[0] / r[1];
}

namespace {

ControlProfile optimal_profile_impl(const FieldFn& field, int m, const CotangentPoint& at,
                                    const QuadratureSpec& spec) {
    if (at.p.norm() == 0.0) return ControlProfile::zero(m);
    const CostateVec p = at.p;
    const StateVec x = at.x;
    const FieldFn f = field;
    auto raw = [f, p, x, m](double theta) -> ControlVec {
        const RowVec v = p.transpose() * f(theta, x);
        const double nv = v.norm();
        if (nv <= kTolZero) return ControlVec::Zero(m);
        return v.transpose() / nv;
    };
    auto phi = [&](double th) { return phi_row(field, p, x, th); };
    const ZeroReport zr = locate_zeros(phi, spec);
    return ControlProfile::closed_form(m, raw, 1.0, zr.angles());
}

}  // namespace

ControlProfile optimal_profile(const OscillatingSystem& sys, const CotangentPoint& at,
                               const QuadratureSpec& spec) {
    sys.require_in_domain(at.x);
    fit_check_dims(sys.n, sys.m, at.x, at.p);
    return optimal_profile_impl(sys.field, sys.m, at, spec);
}

ControlProfile optimal_profile(const KeplerSystem& sys, const CotangentPoint& at,
                               const QuadratureSpec& spec) {
    sys.require_in_domain(at.x);
    fit_check_dims(sys.n, sys.m, at.x, at.p);
    // omega > 0 cancels in the normalization, so G itself decides U*.
    return optimal_profile_impl(sys.field, sys.m, at, spec);
}

HamGradient grad_hamiltonian(const OscillatingSystem& sys, const CotangentPoint& at,
                             const QuadratureSpec& spec, ZeroReport* report_out) {
    sys.require_in_domain(at.x);
    if (fit_check_dims(sys.n, sys.m, at.x, at.p) == 0.0)
        throw UndefinedGradientError("grad_hamiltonian: p = 0");
    const int n = sys.n;
    auto phi = [&](double th) { return phi_row(sys.field, at.p, at.x, th); };
    const ZeroReport zr = locate_zeros(phi, spec);
    if (report_out) *report_out = zr;
    const double tol = kTolZero * std::max(1.0, zr.scan_max);
    auto f = [&](double th) -> Vec {
        Vec out = Vec::Zero(2 * n);
        const Mat G = sys.field(th, at.x);
        const RowVec v = at.p.transpose() * G;
        const double nv = v.norm();
        if (nv <= tol) return out;  // measure-zero kink set skipped
        const Vec u = v.transpose() / nv;
        out.tail(n) = G * u;
        const std::vector<Mat> Gdx = sys.G_dx(th, at.x);
        for (int k = 0; k < n; ++k) out[k] = at.p.dot(Gdx[static_cast<std::size_t>(k)] * u);
        return out;
    };
    const Vec r = integrate_periodic(f, spec, spec.kink_split ? zr.split_hints
                                                              : std::vector<double>{}).value;
    return {r.head(n), r.tail(n)};
}

HamGradient grad_hamiltonian(const OscillatingSystem& sys, const CotangentPoint& at,
                             const QuadratureSpec& spec) {
    return grad_hamiltonian(sys, at, spec, nullptr);
}

HamGradient grad_hamiltonian(const KeplerSystem& sys, const CotangentPoint& at,
                             const QuadratureSpec& spec, ZeroReport* report_out) {
    sys.require_in_domain(at.x);
    if (fit_check_dims(sys.n, sys.m, at.x, at.p) == 0.0)
        throw UndefinedGradientError("grad_hamiltonian: p = 0");
    const int n = sys.n;
    auto phi = [&](double th) { return phi_row(sys.field, at.p, at.x, th); };
    const ZeroReport zr = locate_zeros(phi, spec);
    if (report_out) *report_out = zr;
    const double tol = kTolZero * std::max(1.0, zr.scan_max);

    // layout: [J | dJ/dx (n) | dJ/dp (n) | 1/omega | domega/dx / omega^2 (n)]
    auto f = [&](double th) -> Vec {
        Vec out = Vec::Zero(3 * n + 2);
        const double w = sys.omega(th, at.x);
        const Vec wdx = sys.omega_dx(th, at.x);
        out[2 * n + 1] = 1.0 / w;
        out.segment(2 * n + 2, n) = wdx / (w * w);
        const Mat G = sys.field(th, at.x);
        const Mat Gcal = G / w;
        const RowVec v = at.p.transpose() * Gcal;
        const double nv = v.norm();
        if (nv <= tol / w) return out;
        out[0] = nv;
        const Vec u = v.transpose() / nv;
        out.segment(n + 1, n) = Gcal * u;
        const std::vector<Mat> Gdx = sys.G_dx(th, at.x);
        for (int k = 0; k < n; ++k) {
            const Mat dGcal = Gdx[static_cast<std::size_t>(k)] / w - G * (wdx[k] / (w * w));
            out[1 + k] = at.p.dot(dGcal * u);
        }
        return out;
    };
    const Vec r = integrate_periodic(f, spec, spec.kink_split ? zr.split_hints
                                                              : std::vector<double>{}).value;
    const double J = r[0];
    const Vec dJdx = r.segment(1, n);
    const Vec dJdp = r.segment(n + 1, n);
    const double wbar = 1.0 / r[2 * n + 1];
    const Vec dwbar = wbar * wbar * r.segment(2 * n + 2, n);
    HamGradient g;
    g.dx = dwbar * J + wbar * dJdx;
    g.dp = wbar * dJdp;
    return g;
}

HamGradient grad_hamiltonian(const KeplerSystem& sys, const CotangentPoint& at,
                             const QuadratureSpec& spec) {
    return grad_hamiltonian(sys, at, spec, nullptr);
}

double mean_pulsation(const KeplerSystem& sys, const StateVec& x, const QuadratureSpec& spec) {
    sys.require_in_domain(x);
    auto f = [&](double th) -> Vec {
        Vec out(1);
        out[0] = 1.0 / sys.omega(th, x);
        return out;
    };
    return 1.0 / integrate_periodic(f, spec).value[0];
}

Vec mean_pulsation_grad(const KeplerSystem& sys, const StateVec& x, const QuadratureSpec& spec) {
    sys.require_in_domain(x);
    const int n = sys.n;
    auto f = [&](double th) -> Vec {
        Vec out(n + 1);
        const double w = sys.omega(th, x);
        out[0] = 1.0 / w;
        out.tail(n) = sys.omega_dx(th, x) / (w * w);
        return out;
    };
    const Vec r = integrate_periodic(f, spec).value;
    const double wbar = 1.0 / r[0];
    return wbar * wbar * r.tail(n);
}

namespace {

// Evaluation context shared by the dual-norm solvers: an accurate H(q) and
// a fixed-grid coarse stage vectorized over directions.
struct HamCtx {
    int n = 0;
    std::function<double(const Vec&)> accurate;
    Mat stack;            // (m * n_theta) x n, block j holds G(theta_j, x)^T
    int m = 0;
    double coarse_weight = 0.0;  // 1/n_theta (times omegabar for Kepler)
};

HamCtx make_ctx(const OscillatingSystem& sys, const StateVec& x, const DualNormOptions& opts) {
    HamCtx ctx;
    ctx.n = sys.n;
    ctx.m = sys.m;
    const int nt = opts.n_theta_coarse;
    ctx.stack.resize(static_cast<Eigen::Index>(nt) * sys.m, sys.n);
    for (int j = 0; j < nt; ++j)
        ctx.stack.middleRows(static_cast<Eigen::Index>(j) * sys.m, sys.m) =
            sys.field(kTwoPi * j / nt, x).transpose();
    ctx.coarse_weight = 1.0 / nt;
    const QuadratureSpec q = opts.quad;
    ctx.accurate = [&sys, x, q](const Vec& p) { return hamiltonian(sys, {x, p}, q); };
    return ctx;
}

HamCtx make_ctx(const KeplerSystem& sys, const StateVec& x, const DualNormOptions& opts) {
    HamCtx ctx;
    ctx.n = sys.n;
    ctx.m = sys.m;
    const int nt = opts.n_theta_coarse;
    ctx.stack.resize(static_cast<Eigen::Index>(nt) * sys.m, sys.n);
    double inv_w_mean = 0.0;
    for (int j = 0; j < nt; ++j) {
        const double th = kTwoPi * j / nt;
        const double w = sys.omega(th, x);
        inv_w_mean += 1.0 / w / nt;
        ctx.stack.middleRows(static_cast<Eigen::Index>(j) * sys.m, sys.m) =
            sys.field(th, x).transpose() / w;
    }
    ctx.coarse_weight = (1.0 / inv_w_mean) / nt;
    const QuadratureSpec q = opts.quad;
    ctx.accurate = [&sys, x, q](const Vec& p) { return hamiltonian(sys, {x, p}, q); };
    return ctx;
}

Mat direction_grid(int n, int n_dir, std::mt19937_64& rng) {
    if (n == 1) {
        Mat d(1, 2);
        d << 1.0, -1.0;
        return d;
    }
    Mat dirs(n, n_dir);
    if (n == 2) {
        for (int i = 0; i < n_dir; ++i) {
            const double a = kTwoPi * i / n_dir;
            dirs.col(i) << std::cos(a), std::sin(a);
        }
    } else if (n == 3) {
        const double golden = kPi * (3.0 - std::sqrt(5.0));
        for (int i = 0; i < n_dir; ++i) {
            const double z = 1.0 - 2.0 * (i + 0.5) / n_dir;
            const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
            dirs.col(i) << r * std::cos(golden * i), r * std::sin(golden * i), z;
        }
    } else {
        for (int i = 0; i < n_dir; ++i) dirs.col(i) = detail::unit_vec(rng, n);
    }
    return dirs;
}

// Pattern-search ascent of f(q) = |<q, v>| / H(q) on the unit sphere.
double polish_direction(const HamCtx& ctx, const Vec& v, Vec& q, double r0) {
    auto f = [&](const Vec& dir) {
        const double h = ctx.accurate(dir);
        if (!(h > 0.0)) throw DegenerateMetricError("dual_norm: H vanished at a nonzero covector");
        return std::abs(dir.dot(v)) / h;
    };
    double fq = f(q);
    // the maximum is quadratic in the direction, so a 1e-6 radius floor
    // already pins the value to ~1e-12
    for (double r = r0; r > 1e-6; r *= 0.5) {
        bool improved = true;
        int guard = 0;
        while (improved && guard++ < 64) {
            improved = false;
            // tangent frame at q via Householder complement
            Eigen::HouseholderQR<Mat> qr((Mat(q)));
            const Mat basis = qr.householderQ();
            for (int k = 1; k < ctx.n; ++k) {
                for (double s : {+1.0, -1.0}) {
                    Vec cand = (q + s * r * basis.col(k)).normalized();
                    const double fc = f(cand);
                    if (fc > fq) {
                        fq = fc;
                        q = cand;
                        improved = true;
                    }
                }
            }
        }
    }
    return fq;
}

DualNormResult dual_norm_core(const HamCtx& ctx, const Vec& v, const DualNormOptions& opts) {
    DualNormResult res;
    res.maximizer = Vec::Zero(ctx.n);
    if (v.norm() == 0.0) return res;

    std::mt19937_64 rng(0xd0a1ULL);
    const int n_scan = opts.solver == DualNormSolver::grid ? opts.n_dir : 256;
    const Mat dirs = direction_grid(ctx.n, n_scan, rng);

    // vectorized coarse stage in fixed-size chunks; also detects rank
    // deficiency across the sampled directions
    double h_min = std::numeric_limits<double>::infinity(), h_max = 0.0;
    int best = 0;
    double best_f = -1.0;
    const Eigen::Index rows = ctx.stack.rows();
    constexpr Eigen::Index kChunk = 256;
    Mat prods(rows, kChunk);
    for (Eigen::Index i0 = 0; i0 < dirs.cols(); i0 += kChunk) {
        const Eigen::Index nc = std::min(kChunk, dirs.cols() - i0);
        prods.leftCols(nc).noalias() = ctx.stack * dirs.middleCols(i0, nc);
        for (Eigen::Index c = 0; c < nc; ++c) {
            const double* col = prods.col(c).data();
            double h = 0.0;
            if (ctx.m == 1) {
                for (Eigen::Index j = 0; j < rows; ++j) h += std::abs(col[j]);
            } else if (ctx.m == 2) {
                for (Eigen::Index j = 0; j < rows; j += 2)
                    h += std::sqrt(col[j] * col[j] + col[j + 1] * col[j + 1]);
            } else {
                for (Eigen::Index j = 0; j < rows; j += ctx.m)
                    h += prods.col(c).segment(j, ctx.m).norm();
            }
            h *= ctx.coarse_weight;
            h_min = std::min(h_min, h);
            h_max = std::max(h_max, h);
            const double fi = h > 0.0 ? std::abs(dirs.col(i0 + c).dot(v)) / h : -1.0;
            if (fi > best_f) {
                best_f = fi;
                best = static_cast<int>(i0 + c);
            }
        }
    }
    if (!(h_min > 1e-10 * std::max(h_max, 1e-300)))
        throw DegenerateMetricError("dual_norm: H(x, .) is degenerate (rank-deficient field)");

    auto finish = [&](Vec q, double value) {
        const double h = ctx.accurate(q);
        res.value = value;
        res.maximizer = (q.dot(v) >= 0 ? q : Vec(-q)) / h;
        return res;
    };

    if (opts.solver == DualNormSolver::grid) {
        Vec q = dirs.col(best);
        const double spacing =
            ctx.n <= 2 ? kTwoPi / n_scan : 2.0 * std::sqrt(4.0 * kPi / n_scan);
        double value = opts.polish ? polish_direction(ctx, v, q, 2.0 * spacing)
                                   : std::abs(q.dot(v)) / ctx.accurate(q);
        return finish(q, value);
    }

    // multistart: random starts of the same sphere ascent
    Vec q_best;
    double f_best = -1.0;
    for (int s = 0; s < opts.n_starts; ++s) {
        Vec q = detail::unit_vec(rng, ctx.n);
        const double fv = polish_direction(ctx, v, q, 0.6);
        if (fv > f_best) {
            f_best = fv;
            q_best = q;
        }
    }
    return finish(q_best, f_best);
}

}  // namespace

DualNormResult dual_norm_full(const OscillatingSystem& sys, const StateVec& x, const Vec& v,
                              const DualNormOptions& opts) {
    sys.require_in_domain(x);
    if (!all_finite(v) || v.size() != sys.n)
        throw std::invalid_argument("dual_norm: bad velocity vector");
    return dual_norm_core(make_ctx(sys, x, opts), v, opts);
}

DualNormResult dual_norm_full(const KeplerSystem& sys, const StateVec& x, const Vec& v,
                              const DualNormOptions& opts) {
    sys.require_in_domain(x);
    if (!all_finite(v) || v.size() != sys.n)
        throw std::invalid_argument("dual_norm: bad velocity vector");
    return dual_norm_core(make_ctx(sys, x, opts), v, opts);
}

double dual_norm(const OscillatingSystem& sys, const StateVec& x, const Vec& v,
                 DualNormSolver solver) {
    DualNormOptions opts;
    opts.solver = solver;
    return dual_norm_full(sys, x, v, opts).value;
}

double dual_norm(const KeplerSystem& sys, const StateVec& x, const Vec& v,
                 DualNormSolver solver) {
    DualNormOptions opts;
    opts.solver = solver;
    return dual_norm_full(sys, x, v, opts).value;
}

namespace {

int svd_rank(const Mat& mat, double sv_tol) {
    if (mat.size() == 0) return 0;
    Eigen::JacobiSVD<Mat> svd(mat);
    const auto& sv = svd.singularValues();
    if (sv.size() == 0 || sv[0] <= 0.0) return 0;
    int r = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv[i] > sv_tol * sv[0]) ++r;
    return r;
}

Mat theta_stack(const std::function<Mat(int)>& deriv_j, int n, int m, int j_max) {
    Mat stack(n, static_cast<Eigen::Index>(m) * (j_max + 1));
    for (int j = 0; j <= j_max; ++j)
        stack.middleCols(static_cast<Eigen::Index>(j) * m, m) = deriv_j(j);
    return stack;
}

}  // namespace

int theta_rank(const OscillatingSystem& sys, double theta, const StateVec& x, int j_max,
               double sv_tol) {
    sys.require_in_domain(x);
    if (j_max < 0) j_max = sys.n;
    const Mat stack =
        theta_stack([&](int j) { return sys.G_dtheta(theta, x, j); }, sys.n, sys.m, j_max);
    return svd_rank(stack, sv_tol);
}

int theta_rank(const KeplerSystem& sys, double theta, const StateVec& x, int j_max,
               double sv_tol) {
    // Rank of the raw field G (division by omega > 0 preserves all spans,
    // but the bracket identity is stated for G itself).
    sys.require_in_domain(x);
    if (j_max < 0) j_max = sys.n;
    OscillatingSystem shim;
    shim.n = sys.n;
    shim.m = sys.m;
    shim.label = sys.label + "_rank_shim";
    shim.field = sys.field;
    const Mat stack =
        theta_stack([&](int j) { return shim.G_dtheta(theta, x, j); }, sys.n, sys.m, j_max);
    return svd_rank(stack, sv_tol);
}

namespace {

VelocitySetProbe velocity_probe_impl(const FieldFn& field, int n, int m, const StateVec& x,
                                     int n_grid, double sv_tol) {
    n_grid = std::max(n_grid, 8);
    Mat stack(n, static_cast<Eigen::Index>(m) * n_grid);
    for (int k = 0; k < n_grid; ++k)
        stack.middleCols(static_cast<Eigen::Index>(k) * m, m) = field(kTwoPi * k / n_grid, x);
    Eigen::JacobiSVD<Mat> svd(stack, Eigen::ComputeThinU);
    const auto& sv = svd.singularValues();
    int r = 0;
    if (sv.size() > 0 && sv[0] > 0.0)
        for (Eigen::Index i = 0; i < sv.size(); ++i)
            if (sv[i] > sv_tol * sv[0]) ++r;
    VelocitySetProbe probe;
    probe.x = x;
    probe.dim = r;
    probe.span_basis = svd.matrixU().leftCols(r);
    return probe;
}

}  // namespace

VelocitySetProbe velocity_set_dim(const OscillatingSystem& sys, const StateVec& x, int n_grid,
                                  double sv_tol) {
    sys.require_in_domain(x);
    return velocity_probe_impl(sys.field, sys.n, sys.m, x, n_grid, sv_tol);
}

VelocitySetProbe velocity_set_dim(const KeplerSystem& sys, const StateVec& x, int n_grid,
                                  double sv_tol) {
    sys.require_in_domain(x);
    return velocity_probe_impl(sys.field, sys.n, sys.m, x, n_grid, sv_tol);
}

}  // namespace avgctl
