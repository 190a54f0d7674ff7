#include "avgctl/systems.hpp"

#include <cmath>
#include <utility>

#include "avgctl/detail/random.hpp"
#include "avgctl/two_body.hpp"

namespace avgctl {

double normalize_angle(double s) {
    if (!std::isfinite(s)) throw DomainError("normalize_angle: non-finite input");
    double r = std::fmod(s, kTwoPi);
    if (r < 0.0) r += kTwoPi;
    if (r >= kTwoPi) r = 0.0;  // fmod rounding at the seam
    return r;
}

namespace {

// 4th-order central-difference stencils for derivative orders 1..4.
struct Stencil {
    int half_width;
    double coeff[7];  // offsets -hw..hw, center included
    double h_power;
};

const Stencil& stencil(int order) {
    static const Stencil s1{2, {1.0 / 12, -8.0 / 12, 0.0, 8.0 / 12, -1.0 / 12, 0, 0}, 1};
    static const Stencil s2{2, {-1.0 / 12, 16.0 / 12, -30.0 / 12, 16.0 / 12, -1.0 / 12, 0, 0}, 2};
    static const Stencil s3{
        3, {-1.0 / 8, 1.0, -13.0 / 8, 0.0, 13.0 / 8, -1.0, 1.0 / 8}, 3};
    static const Stencil s4{
        3, {-1.0 / 6, 2.0, -13.0 / 2, 28.0 / 3, -13.0 / 2, 2.0, -1.0 / 6}, 4};
    switch (order) {
        case 1: return s1;
        case 2: return s2;
        case 3: return s3;
        case 4: return s4;
        default: throw UnsupportedOrderError("finite differences support orders 1..4");
    }
}

template <typename F>
Mat fd_theta(const F& f, double theta, int order, double h) {
    const Stencil& st = stencil(order);
    Mat acc;
    for (int k = -st.half_width; k <= st.half_width; ++k) {
        const double c = st.coeff[k + st.half_width];
        if (c == 0.0) continue;
        Mat v = f(theta + k * h);
        if (acc.size() == 0)
            acc = c * v;
        else
            acc += c * v;
    }
    return acc / std::pow(h, st.h_power);
}

}  // namespace

bool OscillatingSystem::contains(const StateVec& x) const {
    if (!all_finite(x) || x.size() != n) return false;
    return !in_domain || in_domain(x);
}

void OscillatingSystem::require_in_domain(const StateVec& x) const {
    if (!contains(x)) throw DomainError(label + ": state outside system domain");
}

Mat OscillatingSystem::G(double theta, const StateVec& x) const {
    require_in_domain(x);
    Mat v = field(theta, x);
    if (v.rows() != n || v.cols() != m)
        throw DomainError(label + ": field returned wrong dimensions");
    return v;
}

Mat OscillatingSystem::G_dtheta(double theta, const StateVec& x, int order) const {
    require_in_domain(x);
    if (order == 0) return field(theta, x);
    if (order == 1 && d_field_dtheta) return d_field_dtheta(theta, x);
    if (order > kFdMaxThetaOrder)
        throw UnsupportedOrderError(label + ": theta-derivative order above 4");
    if (d_field_dtheta) {
        // Differentiate the analytic first derivative one order less.
        return fd_theta([&](double th) { return d_field_dtheta(th, x); }, theta, order - 1,
                        kFdThetaStep);
    }
    return fd_theta([&](double th) { return field(th, x); }, theta, order, kFdThetaStep);
}

std::vector<Mat> OscillatingSystem::G_dx(double theta, const StateVec& x) const {
    require_in_domain(x);
    if (d_field_dx) return d_field_dx(theta, x);
    const double h = kFdStateStep * (1.0 + x.norm());
    std::vector<Mat> out(static_cast<std::size_t>(n));
    StateVec xp = x;
    for (int k = 0; k < n; ++k) {
        const double xk = x[k];
        auto probe = [&](double d) {
            xp[k] = xk + d;
            Mat v = field(theta, xp);
            xp[k] = xk;
            return v;
        };
        out[k] = (probe(-2 * h) - 8.0 * probe(-h) + 8.0 * probe(h) - probe(2 * h)) / (12.0 * h);
    }
    return out;
}

Vec OscillatingSystem::drift_at(double theta, const StateVec& x) const {
    if (!drift) throw NotConfiguredError(label + ": no drift registered");
    require_in_domain(x);
    return drift(theta, x);
}

bool KeplerSystem::contains(const StateVec& x) const {
    if (!all_finite(x) || x.size() != n) return false;
    return !in_domain || in_domain(x);
}

void KeplerSystem::require_in_domain(const StateVec& x) const {
    if (!contains(x)) throw DomainError(label + ": state outside system domain");
}

double KeplerSystem::omega(double theta, const StateVec& x) const {
    require_in_domain(x);
    const double w = pulse(theta, x);
    if (!(w >= pulse_floor))
        throw DomainError(label + ": pulsation below its declared floor");
    return w;
}

RowVec KeplerSystem::g(double theta, const StateVec& x) const {
    require_in_domain(x);
    if (!pulse_ctl) return RowVec::Zero(m);
    return pulse_ctl(theta, x);
}

Mat KeplerSystem::G(double theta, const StateVec& x) const {
    require_in_domain(x);
    Mat v = field(theta, x);
    if (v.rows() != n || v.cols() != m)
        throw DomainError(label + ": field returned wrong dimensions");
    return v;
}

Vec KeplerSystem::omega_dx(double theta, const StateVec& x) const {
    require_in_domain(x);
    const double h = kFdStateStep * (1.0 + x.norm());
    Vec out(n);
    StateVec xp = x;
    for (int k = 0; k < n; ++k) {
        const double xk = x[k];
        auto probe = [&](double d) {
            xp[k] = xk + d;
            double v = pulse(theta, xp);
            xp[k] = xk;
            return v;
        };
        out[k] = (probe(-2 * h) - 8.0 * probe(-h) + 8.0 * probe(h) - probe(2 * h)) / (12.0 * h);
    }
    return out;
}

std::vector<Mat> KeplerSystem::G_dx(double theta, const StateVec& x) const {
    require_in_domain(x);
    const double h = kFdStateStep * (1.0 + x.norm());
    std::vector<Mat> out(static_cast<std::size_t>(n));
    StateVec xp = x;
    for (int k = 0; k < n; ++k) {
        const double xk = x[k];
        auto probe = [&](double d) {
            xp[k] = xk + d;
            Mat v = field(theta, xp);
            xp[k] = xk;
            return v;
        };
        out[k] = (probe(-2 * h) - 8.0 * probe(-h) + 8.0 * probe(h) - probe(2 * h)) / (12.0 * h);
    }
    return out;
}

OscillatingSystem kepler_to_oscillating(const KeplerSystem& ksys) {
    OscillatingSystem sys;
    sys.n = ksys.n;
    sys.m = ksys.m;
    sys.label = ksys.label + "_reduced";
    sys.in_domain = ksys.in_domain;
    const KeplerSystem k = ksys;  // capture by value: reduced system owns its source
    sys.field = [k](double theta, const StateVec& x) -> Mat {
        const double w = k.pulse(theta, x);
        if (!(w >= k.pulse_floor))
            throw DomainError(k.label + ": pulsation below its declared floor");
        return k.field(theta, x) / w;
    };
    return sys;
}

int system_state_dim(const AnySystem& sys) {
    return std::visit([](const auto& s) { return s.n; }, sys);
}

int system_control_dim(const AnySystem& sys) {
    return std::visit([](const auto& s) { return s.m; }, sys);
}

const std::string& system_label(const AnySystem& sys) {
    return std::visit([](const auto& s) -> const std::string& { return s.label; }, sys);
}

void check_periodicity(const OscillatingSystem& sys,
                       const std::function<StateVec(std::mt19937_64&)>& sample_state,
                       std::mt19937_64& rng, int samples, double tol) {
    for (int i = 0; i < samples; ++i) {
        const StateVec x = sample_state(rng);
        const double theta = detail::uniform(rng, 0.0, kTwoPi);
        const double gap = (sys.field(theta, x) - sys.field(theta + kTwoPi, x)).norm();
        if (!(gap <= tol))
            throw DomainError(sys.label + ": field is not 2*pi-periodic");
    }
}

void check_periodicity(const KeplerSystem& sys,
                       const std::function<StateVec(std::mt19937_64&)>& sample_state,
                       std::mt19937_64& rng, int samples, double tol) {
    for (int i = 0; i < samples; ++i) {
        const StateVec x = sample_state(rng);
        const double theta = detail::uniform(rng, 0.0, kTwoPi);
        double gap = (sys.field(theta, x) - sys.field(theta + kTwoPi, x)).norm();
        gap += std::abs(sys.pulse(theta, x) - sys.pulse(theta + kTwoPi, x));
        if (!(gap <= tol))
            throw DomainError(sys.label + ": fields are not 2*pi-periodic");
    }
}

void SystemRegistry::add(const std::string& label, SystemEntry entry) {
    if (entries_.count(label)) throw std::invalid_argument("duplicate registry label " + label);
    std::mt19937_64 rng(0x5eedULL);
    std::visit([&](const auto& s) { check_periodicity(s, entry.sample_state, rng); },
               entry.system);
    entries_.emplace(label, std::move(entry));
}

bool SystemRegistry::contains(const std::string& label) const { return entries_.count(label) > 0; }

const SystemEntry& SystemRegistry::at(const std::string& label) const {
    auto it = entries_.find(label);
    if (it == entries_.end()) throw std::invalid_argument("unknown system label " + label);
    return it->second;
}

std::vector<std::string> SystemRegistry::labels() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
}

namespace {

SystemEntry make_rotating_field() {
    OscillatingSystem sys;
    sys.n = 2;
    sys.m = 1;
    sys.label = "rotating_field";
    sys.field = [](double theta, const StateVec&) {
        Mat g(2, 1);
        g << std::cos(theta), std::sin(theta);
        return g;
    };
    sys.d_field_dtheta = [](double theta, const StateVec&) {
        Mat g(2, 1);
        g << -std::sin(theta), std::cos(theta);
        return g;
    };
    sys.d_field_dx = [](double, const StateVec&) {
        return std::vector<Mat>{Mat::Zero(2, 1), Mat::Zero(2, 1)};
    };
    SystemEntry e;
    e.system = sys;
    e.sample_state = [](std::mt19937_64& rng) {
        Vec x(2);
        x << detail::uniform(rng, -1.0, 1.0), detail::uniform(rng, -1.0, 1.0);
        return x;
    };
    e.sample_costate = [](std::mt19937_64& rng) {
        return Vec(detail::unit_vec(rng, 2) * detail::uniform(rng, 0.3, 2.0));
    };
    e.note = "single rotating column (cos, sin); H = (2/pi)||p||";
    return e;
}

SystemEntry make_rotating_field_2() {
    OscillatingSystem sys;
    sys.n = 2;
    sys.m = 2;
    sys.label = "rotating_field_2";
    sys.field = [](double theta, const StateVec&) {
        Mat g(2, 2);
        g << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
        return g;
    };
    sys.d_field_dtheta = [](double theta, const StateVec&) {
        Mat g(2, 2);
        g << -std::sin(theta), -std::cos(theta), std::cos(theta), -std::sin(theta);
        return g;
    };
    sys.d_field_dx = [](double, const StateVec&) {
        return std::vector<Mat>{Mat::Zero(2, 2), Mat::Zero(2, 2)};
    };
    SystemEntry e;
    e.system = sys;
    e.sample_state = [](std::mt19937_64& rng) {
        Vec x(2);
        x << detail::uniform(rng, -1.0, 1.0), detail::uniform(rng, -1.0, 1.0);
        return x;
    };
    e.sample_costate = [](std::mt19937_64& rng) {
        return Vec(detail::unit_vec(rng, 2) * detail::uniform(rng, 0.3, 2.0));
    };
    e.note = "rotation-matrix field; the control ball maps onto itself";
    return e;
}

SystemEntry make_two_body() {
    SystemEntry e;
    e.system = two_body_system();
    e.sample_state = [](std::mt19937_64& rng) {
        Vec x(3);
        const double r = 0.7 * std::sqrt(detail::u01(rng));
        const double ph = detail::uniform(rng, 0.0, kTwoPi);
        x << detail::uniform(rng, 0.6, 1.6), r * std::cos(ph), r * std::sin(ph);
        return x;
    };
    e.sample_costate = [](std::mt19937_64& rng) {
        return Vec(detail::unit_vec(rng, 3) * detail::uniform(rng, 0.3, 2.0));
    };
    e.note = "planar two-body transfer in (a, e_x, e_y), tangential-normal control";
    return e;
}

}  // namespace

const SystemRegistry& SystemRegistry::builtin() {
    static const SystemRegistry reg = [] {
        SystemRegistry r;
        r.add("rotating_field", make_rotating_field());
        r.add("rotating_field_2", make_rotating_field_2());
        r.add("two_body_planar", make_two_body());
        return r;
    }();
    return reg;
}

}  // namespace avgctl
