#include "avgctl/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <ostream>

namespace avgctl {

const char* exit_flag_name(ExitFlag flag) {
    switch (flag) {
        case ExitFlag::completed: return "completed";
        case ExitFlag::domain_exit: return "domain_exit";
        case ExitFlag::degenerate_extremal: return "degenerate_extremal";
        case ExitFlag::step_underflow: return "step_underflow";
    }
    return "unknown";
}

Vec DenseSeg::eval(double t) const {
    const double s = h != 0.0 ? (t - t0) / h : 0.0;
    return r1 + s * (r2 + (1.0 - s) * (r3 + s * (r4 + (1.0 - s) * r5)));
}

Vec DenseSeg::eval_deriv(double t) const {
    const double s = h != 0.0 ? (t - t0) / h : 0.0;
    Vec d = r2 + (1.0 - 2.0 * s) * r3 + s * (2.0 - 3.0 * s) * r4 +
            2.0 * s * (1.0 - s) * (1.0 - 2.0 * s) * r5;
    return d / h;
}

int Trajectory::ydim() const {
    return state_dim() + (costates ? static_cast<int>(costates->cols()) : 0);
}

namespace {

std::size_t locate_segment(const std::vector<double>& times, std::size_t n_segs, double t) {
    if (n_segs == 0) throw std::logic_error("Trajectory: no dense segments");
    auto it = std::upper_bound(times.begin(), times.end(), t);
    std::size_t idx = it == times.begin() ? 0 : static_cast<std::size_t>(it - times.begin()) - 1;
    return std::min(idx, n_segs - 1);
}

}  // namespace

Vec Trajectory::eval(double t) const {
    t = std::clamp(t, times.front(), times.back());
    return segs[locate_segment(times, segs.size(), t)].eval(t);
}

Vec Trajectory::eval_deriv(double t) const {
    t = std::clamp(t, times.front(), times.back());
    return segs[locate_segment(times, segs.size(), t)].eval_deriv(t);
}

Vec Trajectory::state(double t) const { return eval(t).head(state_dim()); }

Vec Trajectory::state_deriv(double t) const { return eval_deriv(t).head(state_dim()); }

Vec Trajectory::costate(double t) const {
    if (!costates) throw std::logic_error("Trajectory carries no costates");
    return eval(t).tail(static_cast<int>(costates->cols()));
}

namespace {

void write_num(std::ostream& os, double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    os << buf;
}

}  // namespace

void Trajectory::write_csv(std::ostream& os) const {
    os << "t";
    for (int j = 0; j < state_dim(); ++j) os << ",x_" << (j + 1);
    if (costates)
        for (int j = 0; j < costates->cols(); ++j) os << ",p_" << (j + 1);
    os << "\n";
    for (std::size_t i = 0; i < times.size(); ++i) {
        write_num(os, times[i]);
        for (int j = 0; j < state_dim(); ++j) {
            os << ',';
            write_num(os, states(static_cast<Eigen::Index>(i), j));
        }
        if (costates)
            for (int j = 0; j < costates->cols(); ++j) {
                os << ',';
                write_num(os, (*costates)(static_cast<Eigen::Index>(i), j));
            }
        os << "\n";
    }
}

void Trajectory::write_json(std::ostream& os, const std::string& label) const {
    auto write_row = [&os](const Mat& m, Eigen::Index i) {
        os << '[';
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j) os << ',';
            write_num(os, m(i, j));
        }
        os << ']';
    };
    os << "{\"schema\":\"avgctl-traj-1\",\"label\":\"" << label << "\",\"exit\":\""
       << exit_flag_name(flag) << "\",\"times\":[";
    for (std::size_t i = 0; i < times.size(); ++i) {
        if (i) os << ',';
        write_num(os, times[i]);
    }
    os << "],\"states\":[";
    for (Eigen::Index i = 0; i < states.rows(); ++i) {
        if (i) os << ',';
        write_row(states, i);
    }
    os << "]";
    if (costates) {
        os << ",\"costates\":[";
        for (Eigen::Index i = 0; i < costates->rows(); ++i) {
            if (i) os << ',';
            write_row(*costates, i);
        }
        os << "]";
    }
    if (!events.empty()) {
        os << ",\"events\":[";
        for (std::size_t i = 0; i < events.size(); ++i) {
            if (i) os << ',';
            write_num(os, events[i]);
        }
        os << "]";
    }
    os << "}\n";
}

ControlVec JointControl::operator()(double t, double theta) const {
    if (t < 0.0 || t > horizon) return ControlVec::Zero(m);
    ControlVec v = u(t, theta);
    if (v.norm() > 1.0 + kControlTol)
        throw DomainError("JointControl: value exceeds the unit ball");
    return v;
}

// ---------------------------------------------------------------------------
// Dormand-Prince 5(4) with quartic dense output.

namespace {

struct StopIntegration {
    ExitFlag flag;
};

using Rhs = std::function<Vec(double, const Vec&)>;
using StepCap = std::function<double(double, const Vec&)>;

constexpr double kA21 = 1.0 / 5;
constexpr double kA31 = 3.0 / 40, kA32 = 9.0 / 40;
constexpr double kA41 = 44.0 / 45, kA42 = -56.0 / 15, kA43 = 32.0 / 9;
constexpr double kA51 = 19372.0 / 6561, kA52 = -25360.0 / 2187, kA53 = 64448.0 / 6561,
                 kA54 = -212.0 / 729;
constexpr double kA61 = 9017.0 / 3168, kA62 = -355.0 / 33, kA63 = 46732.0 / 5247,
                 kA64 = 49.0 / 176, kA65 = -5103.0 / 18656;
constexpr double kA71 = 35.0 / 384, kA73 = 500.0 / 1113, kA74 = 125.0 / 192,
                 kA75 = -2187.0 / 6784, kA76 = 11.0 / 84;
constexpr double kC2 = 1.0 / 5, kC3 = 3.0 / 10, kC4 = 4.0 / 5, kC5 = 8.0 / 9;
constexpr double kE1 = 71.0 / 57600, kE3 = -71.0 / 16695, kE4 = 71.0 / 1920,
                 kE5 = -17253.0 / 339200, kE6 = 22.0 / 525, kE7 = -1.0 / 40;
constexpr double kD1 = -12715105075.0 / 11282082432.0, kD3 = 87487479700.0 / 32700410799.0,
                 kD4 = -10690763975.0 / 1880347072.0, kD5 = 701980252875.0 / 199316789632.0,
                 kD6 = -1453857185.0 / 822651844.0, kD7 = 69997945.0 / 29380423.0;

class Dopri5 {
  public:
    enum class Status { advanced, finished, stopped };

    Dopri5(Rhs f, double t0, Vec y0, double t_end, const IntegratorSpec& spec, StepCap cap)
        : f_(std::move(f)), spec_(spec), cap_(std::move(cap)), t_(t0), t_end_(t_end),
          y_(std::move(y0)) {
        f0_ = f_(t_, y_);
        h_ = initial_step();
    }

    Status step() {
        if (t_ >= t_end_ - 1e-14 * std::max(1.0, std::abs(t_end_))) return Status::finished;
        long rejects = 0;
        while (true) {
            if (++n_attempts_ > spec_.max_steps)
                throw std::runtime_error("dopri5: step budget exhausted");
            double h = effective_h();
            Vec k1 = f0_;
            Vec ynew;
            Vec k2, k3, k4, k5, k6, k7;
            try {
                k2 = f_(t_ + kC2 * h, y_ + h * (kA21 * k1));
                k3 = f_(t_ + kC3 * h, y_ + h * (kA31 * k1 + kA32 * k2));
                k4 = f_(t_ + kC4 * h, y_ + h * (kA41 * k1 + kA42 * k2 + kA43 * k3));
                k5 = f_(t_ + kC5 * h,
                        y_ + h * (kA51 * k1 + kA52 * k2 + kA53 * k3 + kA54 * k4));
                k6 = f_(t_ + h,
                        y_ + h * (kA61 * k1 + kA62 * k2 + kA63 * k3 + kA64 * k4 + kA65 * k5));
                ynew = y_ + h * (kA71 * k1 + kA73 * k3 + kA74 * k4 + kA75 * k5 + kA76 * k6);
                k7 = f_(t_ + h, ynew);
            } catch (const StopIntegration& stop) {
                stop_flag_ = stop.flag;
                return Status::stopped;
            } catch (const DomainError&) {
                // the stage left the domain: shrink toward the boundary
                h_ = h * 0.5;
                if (h_ < min_step()) {
                    stop_flag_ = ExitFlag::domain_exit;
                    return Status::stopped;
                }
                continue;
            }
            const Vec errv =
                h * (kE1 * k1 + kE3 * k3 + kE4 * k4 + kE5 * k5 + kE6 * k6 + kE7 * k7);
            double err = 0.0;
            for (Eigen::Index i = 0; i < errv.size(); ++i) {
                const double sc =
                    spec_.abs_tol +
                    spec_.rel_tol * std::max(std::abs(y_[i]), std::abs(ynew[i]));
                err += (errv[i] / sc) * (errv[i] / sc);
            }
            err = std::sqrt(err / static_cast<double>(errv.size()));
            if (err <= 1.0 || h <= 2.0 * min_step()) {
                // accept
                seg_.t0 = t_;
                seg_.h = h;
                seg_.r1 = y_;
                seg_.r2 = ynew - y_;
                seg_.r3 = h * k1 - seg_.r2;
                seg_.r4 = seg_.r2 - h * k7 - seg_.r3;
                seg_.r5 = h * (kD1 * k1 + kD3 * k3 + kD4 * k4 + kD5 * k5 + kD6 * k6 + kD7 * k7);
                t_prev_ = t_;
                t_ = t_ + h;
                y_ = ynew;
                f0_ = k7;
                if (!y_.allFinite() || y_.norm() > 1e10) {
                    stop_flag_ = ExitFlag::domain_exit;
                    return Status::stopped;
                }
                const double grow =
                    err > 0.0 ? 0.9 * std::pow(err, -0.2) : 5.0;
                h_ = h * std::clamp(grow, 0.2, 5.0);
                return Status::advanced;
            }
            h_ = h * std::clamp(0.9 * std::pow(err, -0.2), 0.1, 0.9);
            if (++rejects > 2000) throw std::runtime_error("dopri5: persistent step rejection");
        }
    }

    double t() const { return t_; }
    double t_prev() const { return t_prev_; }
    const Vec& y() const { return y_; }
    const DenseSeg& seg() const { return seg_; }
    ExitFlag stop_flag() const { return stop_flag_; }

  private:
    double min_step() const { return 1e-14 * std::max(1.0, std::abs(t_end_)); }

    double effective_h() {
        double h = std::min(h_, spec_.max_step);
        if (cap_) h = std::min(h, std::max(cap_(t_, y_), 4.0 * min_step()));
        h = std::min(h, t_end_ - t_);
        return std::max(h, min_step());
    }

    double initial_step() const {
        double scale = 0.0;
        for (Eigen::Index i = 0; i < y_.size(); ++i) {
            const double sc = spec_.abs_tol + spec_.rel_tol * std::abs(y_[i]);
            scale += (f0_[i] / sc) * (f0_[i] / sc);
        }
        scale = std::sqrt(scale / static_cast<double>(y_.size()));
        double h = scale > 1e-12 ? 0.01 / scale : 1e-3 * (t_end_ - t_);
        h = std::min(h, 0.1 * (t_end_ - t_));
        h = std::min(h, spec_.max_step);
        return std::max(h, 4.0 * min_step());
    }

    Rhs f_;
    IntegratorSpec spec_;
    StepCap cap_;
    double t_;
    double t_prev_ = 0.0;
    double t_end_;
    Vec y_;
    Vec f0_;
    double h_ = 0.0;
    DenseSeg seg_;
    ExitFlag stop_flag_ = ExitFlag::completed;
    long n_attempts_ = 0;
};

// Accumulates accepted steps into a Trajectory, optionally splitting the
// tail of y into costates.
struct Collector {
    std::vector<double> times;
    std::vector<Vec> ys;
    std::vector<DenseSeg> segs;
    int nx = 0, np = 0;

    void init(double t0, const Vec& y0, int nx_, int np_) {
        nx = nx_;
        np = np_;
        times.push_back(t0);
        ys.push_back(y0);
    }
    void push(const Dopri5& st) {
        times.push_back(st.t());
        ys.push_back(st.y());
        segs.push_back(st.seg());
    }
    Trajectory finalize(ExitFlag flag) const {
        Trajectory traj;
        traj.times = times;
        traj.flag = flag;
        traj.segs = segs;
        const auto k = static_cast<Eigen::Index>(times.size());
        traj.states.resize(k, nx);
        if (np > 0) traj.costates = Mat(k, np);
        for (Eigen::Index i = 0; i < k; ++i) {
            traj.states.row(i) = ys[static_cast<std::size_t>(i)].head(nx).transpose();
            if (np > 0)
                traj.costates->row(i) = ys[static_cast<std::size_t>(i)].tail(np).transpose();
        }
        return traj;
    }
};

Trajectory run_ode(const Rhs& f, double t0, double t1, const Vec& y0, int nx, int np,
                   const IntegratorSpec& spec, const StepCap& cap = {}) {
    Dopri5 st(f, t0, y0, t1, spec, cap);
    Collector col;
    col.init(t0, y0, nx, np);
    while (true) {
        const auto s = st.step();
        if (s == Dopri5::Status::advanced) {
            col.push(st);
            continue;
        }
        if (s == Dopri5::Status::finished) return col.finalize(ExitFlag::completed);
        return col.finalize(st.stop_flag());
    }
}

}  // namespace

// ---------------------------------------------------------------------------

Trajectory integrate_oscillating(const OscillatingSystem& sys, double eps,
                                 const std::function<ControlVec(double)>& u, const StateVec& x0,
                                 double t0, double t1, const IntegratorSpec& spec) {
    if (!(eps > 0.0)) throw std::invalid_argument("integrate_oscillating: eps must be positive");
    sys.require_in_domain(x0);
    IntegratorSpec sp = spec;
    sp.max_step = std::min(spec.max_step, kPi * eps / 4.0);  // resolve the fast angle
    auto rhs = [&sys, &u, eps](double t, const Vec& x) -> Vec {
        ControlVec uc = u(t);
        if (uc.norm() > 1.0 + 1e-9)
            throw std::invalid_argument("integrate_oscillating: inadmissible control");
        Vec dx = sys.G(t / eps, x) * uc;
        if (sys.has_drift()) dx += sys.drift(t / eps, x);
        return dx;
    };
    return run_ode(rhs, t0, t1, x0, sys.n, 0, sp);
}

namespace {

template <typename System>
Trajectory integrate_average_impl(const System& sys, const StateVec& x0, const JointControl& u,
                                  double t0, double t1, const IntegratorSpec& spec,
                                  const QuadratureSpec& qspec) {
    sys.require_in_domain(x0);
    if (u.m != sys.m) throw std::invalid_argument("integrate_average: control dim mismatch");
    auto rhs = [&](double t, const Vec& x) -> Vec {
        ControlProfile prof = ControlProfile::closed_form(
            sys.m, [&u, t](double theta) { return u(t, theta); }, 1.0,
            u.kinks_at ? u.kinks_at(t) : u.theta_kinks);
        return average_velocity(sys, x, prof, qspec);
    };
    return run_ode(rhs, t0, t1, x0, sys.n, 0, spec);
}

}  // namespace

Trajectory integrate_average(const OscillatingSystem& sys, const StateVec& x0,
                             const JointControl& u, double t0, double t1,
                             const IntegratorSpec& spec, const QuadratureSpec& qspec) {
    return integrate_average_impl(sys, x0, u, t0, t1, spec, qspec);
}

Trajectory integrate_average(const KeplerSystem& sys, const StateVec& x0, const JointControl& u,
                             double t0, double t1, const IntegratorSpec& spec,
                             const QuadratureSpec& qspec) {
    return integrate_average_impl(sys, x0, u, t0, t1, spec, qspec);
}

std::function<ControlVec(double)> recovery_control(const JointControl& u0, double eps,
                                                   const QuadratureSpec& qspec) {
    if (!(eps > 0.0)) throw std::invalid_argument("recovery_control: eps must be positive");
    const JointControl u = u0;
    const QuadratureSpec qs = qspec;
    return [u, eps, qs](double t) -> ControlVec {
        const double phase = t / eps;
        // inside the horizon by more than one fast period the average is over
        // the full circle; otherwise the zero prolongation cuts in
        std::vector<double> kinks;
        const double cut = (u.horizon - t) / eps;
        if (cut >= 0.0 && cut < kTwoPi) kinks.push_back(cut);
        const double cut0 = -t / eps;  // entry into [0, horizon] from below
        if (cut0 >= 0.0 && cut0 < kTwoPi) kinks.push_back(cut0);
        auto f = [&](double mu) -> Vec { return u(t + eps * mu, phase); };
        // integrand is over the canonical representative mu(theta) in [0, 2pi)
        QuadratureSpec local = qs;
        local.kink_split = true;
        Vec v = integrate_periodic([&](double th) { return f(normalize_angle(th)); }, local,
                                   kinks).value;
        if (v.norm() > 1.0 + 1e-8)
            throw std::logic_error("recovery_control: average left the unit ball");
        return v;
    };
}

namespace {

template <typename System>
Trajectory average_extremal_impl(const System& sys, const CotangentPoint& z0, double t0,
                                 double t1, const IntegratorSpec& spec,
                                 const QuadratureSpec& qspec) {
    sys.require_in_domain(z0.x);
    const int n = sys.n;
    if (z0.p.size() != n || z0.p.norm() == 0.0)
        throw std::invalid_argument("average extremal: bad initial costate");
    const double p_ref = z0.p.norm();
    Vec y0(2 * n);
    y0 << z0.x, z0.p;

    auto near_kink = std::make_shared<bool>(false);
    auto rhs = [&sys, n, p_ref, near_kink, &qspec](double, const Vec& y) -> Vec {
        CotangentPoint z{y.head(n), y.tail(n)};
        if (z.p.norm() < 1e-10 * p_ref)
            throw StopIntegration{ExitFlag::degenerate_extremal};
        ZeroReport zr;
        const HamGradient g = grad_hamiltonian(sys, z, qspec, &zr);
        *near_kink = zr.scan_min < 1e-6 * std::max(1.0, zr.scan_max);
        Vec dy(2 * n);
        dy.head(n) = g.dp;
        dy.tail(n) = -g.dx;
        return dy;
    };
    const double base_cap = std::min(spec.max_step, (t1 - t0) / 32.0);
    auto cap = [near_kink, base_cap](double, const Vec&) {
        return *near_kink ? base_cap / 2.0 : base_cap;
    };
    Trajectory traj = run_ode(rhs, t0, t1, y0, n, n, spec, cap);

    // autonomous Hamiltonian: verify conservation along the output
    const double H0 = hamiltonian(sys, z0, qspec);
    const std::size_t stride = std::max<std::size_t>(1, traj.times.size() / 32);
    double drift = 0.0;
    for (std::size_t i = 0; i < traj.times.size(); i += stride) {
        CotangentPoint z{traj.states.row(static_cast<Eigen::Index>(i)).transpose(),
                         traj.costates->row(static_cast<Eigen::Index>(i)).transpose()};
        drift = std::max(drift, std::abs(hamiltonian(sys, z, qspec) - H0));
    }
    if (traj.flag == ExitFlag::completed && drift > 1e-6 * std::max(H0, 1e-300))
        throw std::runtime_error("average extremal: Hamiltonian drift above 1e-6 relative");
    return traj;
}

}  // namespace

Trajectory integrate_average_extremal(const OscillatingSystem& sys, const CotangentPoint& z0,
                                      double t0, double t1, const IntegratorSpec& spec,
                                      const QuadratureSpec& qspec) {
    return average_extremal_impl(sys, z0, t0, t1, spec, qspec);
}

Trajectory integrate_average_extremal(const KeplerSystem& sys, const CotangentPoint& z0,
                                      double t0, double t1, const IntegratorSpec& spec,
                                      const QuadratureSpec& qspec) {
    return average_extremal_impl(sys, z0, t0, t1, spec, qspec);
}

Trajectory integrate_oscillating_extremal(const OscillatingSystem& sys, double eps,
                                          const CotangentPoint& z0, double t0, double t1,
                                          const IntegratorSpec& spec) {
    if (!(eps > 0.0)) throw std::invalid_argument("oscillating extremal: eps must be positive");
    sys.require_in_domain(z0.x);
    const int n = sys.n;
    if (z0.p.size() != n || z0.p.norm() == 0.0)
        throw std::invalid_argument("oscillating extremal: bad initial costate");
    Vec y0(2 * n);
    y0 << z0.x, z0.p;

    auto switching_norm = [&sys, n, eps](double t, const Vec& y) {
        const RowVec v = y.tail(n).transpose() * sys.field(t / eps, y.head(n));
        return v.norm();
    };

    auto s_scale = std::make_shared<double>(switching_norm(t0, y0));
    auto rhs = [&sys, n, eps, s_scale](double t, const Vec& y) -> Vec {
        const Vec x = y.head(n);
        const Vec p = y.tail(n);
        const Mat G = sys.field(t / eps, x);
        const RowVec v = p.transpose() * G;
        const double nv = v.norm();
        *s_scale = std::max(*s_scale, nv);
        Vec dy = Vec::Zero(2 * n);
        if (nv <= kTolZero * std::max(1.0, *s_scale)) return dy;
        const Vec u = v.transpose() / nv;
        dy.head(n) = G * u;
        const std::vector<Mat> Gdx = sys.G_dx(t / eps, x);
        for (int k = 0; k < n; ++k)
            dy[n + k] = -p.dot(Gdx[static_cast<std::size_t>(k)] * u);
        return dy;
    };
    // slow down when the switching row gets small so the discontinuity is
    // crossed with a controlled step
    IntegratorSpec sp = spec;
    sp.max_step = std::min(spec.max_step, kPi * eps / 4.0);
    auto cap = [&switching_norm, s_scale, eps](double t, const Vec& y) {
        const double s = switching_norm(t, y);
        const double rel = s / std::max(*s_scale, 1e-300);
        return kPi * eps / 4.0 * std::clamp(rel / 0.2, 0.02, 1.0);
    };
    Trajectory traj = run_ode(rhs, t0, t1, y0, n, n, sp, cap);

    // post-pass: locate the switch times on the dense output
    auto s_of_t = [&](double t) { return switching_norm(t, traj.eval(t)); };
    const double span = traj.t_end() - traj.t_start();
    const int n_grid = std::max(64, static_cast<int>(span / (kPi * eps / 50.0)));
    std::vector<double> sv(static_cast<std::size_t>(n_grid) + 1);
    double smax = 0.0;
    for (int i = 0; i <= n_grid; ++i) {
        sv[static_cast<std::size_t>(i)] = s_of_t(traj.t_start() + span * i / n_grid);
        smax = std::max(smax, sv[static_cast<std::size_t>(i)]);
    }
    constexpr double invphi = 0.6180339887498949;
    for (int i = 1; i < n_grid; ++i) {
        const double sc = sv[static_cast<std::size_t>(i)];
        if (!(sc <= sv[static_cast<std::size_t>(i) - 1] &&
              sc <= sv[static_cast<std::size_t>(i) + 1] && sc < 0.05 * smax))
            continue;
        double a = traj.t_start() + span * (i - 1) / n_grid;
        double b = traj.t_start() + span * (i + 1) / n_grid;
        double x1 = b - invphi * (b - a), x2 = a + invphi * (b - a);
        double f1 = s_of_t(x1), f2 = s_of_t(x2);
        while (b - a > 1e-15 * std::max(1.0, std::abs(b))) {
            if (f1 < f2) {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - invphi * (b - a);
                f1 = s_of_t(x1);
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + invphi * (b - a);
                f2 = s_of_t(x2);
            }
        }
        const double t_star = 0.5 * (a + b);
        const double s_star = s_of_t(t_star);
        if (s_star > spec.event_tol * std::max(1.0, smax)) continue;  // near miss, no switch
        // transversality: a simple switch vanishes linearly around t*, a
        // tangential one quadratically, so the decay order across two probe
        // radii separates them (the time derivative of a tangential zero is
        // below tolerance at vanishing radius)
        const double r1 = 1e-3 * eps, r2 = r1 / 8.0;
        const double s1 = std::max(s_of_t(t_star + r1), s_of_t(t_star - r1));
        const double s2 = std::max(s_of_t(t_star + r2), s_of_t(t_star - r2));
        const double order =
            std::log(std::max(s1, 1e-300) / std::max(s2, 1e-300)) / std::log(8.0);
        if (order > 1.5)
            throw AmbiguousSwitchError("oscillating extremal: non-transversal switch");
        if (traj.events.empty() || t_star - traj.events.back() > kPi * eps / 10.0)
            traj.events.push_back(t_star);
    }
    return traj;
}

namespace {

Trajectory integrate_kepler_core(
    const KeplerSystem& sys, double eps,
    const std::function<ControlVec(double, double, const StateVec&)>& v, double theta0,
    const StateVec& x0, double t0, double t1, const IntegratorSpec& spec) {
    if (!(eps > 0.0)) throw std::invalid_argument("integrate_kepler: eps must be positive");
    sys.require_in_domain(x0);
    const int n = sys.n;
    Vec y0(n + 1);
    y0[0] = theta0;
    y0.tail(n) = x0;
    auto rhs = [&sys, &v, eps, n](double t, const Vec& y) -> Vec {
        const double theta = y[0];
        const StateVec x = y.tail(n);
        const ControlVec vc = v(t, theta, x);
        if (vc.norm() > eps * (1.0 + 1e-9))
            throw std::invalid_argument("integrate_kepler: ||v|| exceeds eps");
        Vec dy(n + 1);
        dy[0] = sys.omega(theta, x) + sys.g(theta, x).dot(vc);
        dy.tail(n) = sys.G(theta, x) * vc;
        return dy;
    };
    auto cap = [&sys, n](double, const Vec& y) {
        // resolve the fast angle: at most ~pi/4 of angular advance per step
        const double w = sys.pulse(y[0], y.tail(n));
        return kPi / (4.0 * std::max(w, 1e-10));
    };
    Trajectory traj = run_ode(rhs, t0, t1, y0, n + 1, 0, spec, cap);
    if (traj.flag == ExitFlag::domain_exit)
        throw DomainError("integrate_kepler: left the declared domain");
    return traj;
}

}  // namespace

Trajectory integrate_kepler(const KeplerSystem& sys, double eps,
                            const std::function<ControlVec(double)>& v, double theta0,
                            const StateVec& x0, double t0, double t1,
                            const IntegratorSpec& spec) {
    return integrate_kepler_core(
        sys, eps, [&v](double t, double, const StateVec&) { return v(t); }, theta0, x0, t0, t1,
        spec);
}

Trajectory integrate_kepler_fb(const KeplerSystem& sys, double eps,
                               const std::function<ControlVec(double, double, const StateVec&)>& v,
                               double theta0, const StateVec& x0, double t0, double t1,
                               const IntegratorSpec& spec) {
    return integrate_kepler_core(sys, eps, v, theta0, x0, t0, t1, spec);
}

double TimeRescale::lambda_of_t(double t) const {
    t = std::clamp(t, t_nodes.front(), t_nodes.back());
    const auto it = std::upper_bound(t_nodes.begin(), t_nodes.end(), t);
    std::size_t i = it == t_nodes.begin() ? 0 : static_cast<std::size_t>(it - t_nodes.begin()) - 1;
    i = std::min(i, t_nodes.size() - 2);
    const double w = (t - t_nodes[i]) / (t_nodes[i + 1] - t_nodes[i]);
    return lambda_nodes[i] + w * (lambda_nodes[i + 1] - lambda_nodes[i]);
}

double TimeRescale::t_of_lambda(double lambda) const {
    lambda = std::clamp(lambda, lambda_nodes.front(), lambda_nodes.back());
    const auto it = std::upper_bound(lambda_nodes.begin(), lambda_nodes.end(), lambda);
    std::size_t i =
        it == lambda_nodes.begin() ? 0 : static_cast<std::size_t>(it - lambda_nodes.begin()) - 1;
    i = std::min(i, lambda_nodes.size() - 2);
    const double w = (lambda - lambda_nodes[i]) / (lambda_nodes[i + 1] - lambda_nodes[i]);
    return t_nodes[i] + w * (t_nodes[i + 1] - t_nodes[i]);
}

TimeRescale kepler_time_rescale(const Trajectory& traj, double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("kepler_time_rescale: eps must be positive");
    if (traj.size() < 2) throw std::invalid_argument("kepler_time_rescale: trajectory too short");
    const int n = traj.state_dim() - 1;  // column 0 is the unwrapped angle
    if (n < 1) throw std::invalid_argument("kepler_time_rescale: no state columns");

    TimeRescale out;
    out.t_nodes = traj.times;
    const double theta_start = traj.states(0, 0);
    out.lambda_nodes.resize(traj.size());
    for (std::size_t i = 0; i < traj.size(); ++i) {
        out.lambda_nodes[i] =
            eps * (traj.states(static_cast<Eigen::Index>(i), 0) - theta_start);
        if (i > 0 && !(out.lambda_nodes[i] > out.lambda_nodes[i - 1]))
            throw RescaleError("kepler_time_rescale: cumulated angle not strictly increasing");
    }

    Trajectory& xl = out.x_of_lambda;
    xl.times = out.lambda_nodes;
    xl.states.resize(static_cast<Eigen::Index>(traj.size()), n);
    for (std::size_t i = 0; i < traj.size(); ++i)
        xl.states.row(static_cast<Eigen::Index>(i)) =
            traj.states.row(static_cast<Eigen::Index>(i)).tail(n);
    // cubic Hermite in lambda: dx/dlambda = x' / (eps * Theta')
    xl.segs.resize(traj.size() - 1);
    for (std::size_t i = 0; i + 1 < traj.size(); ++i) {
        auto deriv_at = [&](double t) -> Vec {
            const Vec dy = traj.eval_deriv(t);
            return dy.tail(n) / (eps * dy[0]);
        };
        const double h = out.lambda_nodes[i + 1] - out.lambda_nodes[i];
        DenseSeg& s = xl.segs[i];
        s.t0 = out.lambda_nodes[i];
        s.h = h;
        s.r1 = xl.states.row(static_cast<Eigen::Index>(i)).transpose();
        s.r2 = xl.states.row(static_cast<Eigen::Index>(i) + 1).transpose() - s.r1;
        s.r3 = h * deriv_at(traj.times[i]) - s.r2;
        s.r4 = s.r2 - h * deriv_at(traj.times[i + 1]) - s.r3;
        s.r5 = Vec::Zero(n);
    }
    return out;
}

}  // namespace avgctl
