// avgctl: batch front-end over the averaged-control library. One registry
// system, one experiment per invocation; artifacts go to --out.
//
// Exit codes: 0 pass, 2 threshold failure, 1 runtime error, 64 usage error.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "avgctl/analysis.hpp"
#include "avgctl/detail/sha1.hpp"
#include "avgctl/dynamics.hpp"
#include "avgctl/two_body.hpp"

using json = nlohmann::json;
using namespace avgctl;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

json vec_to_json(const Vec& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

Vec vec_from_json(const json& a) {
    Vec v(static_cast<Eigen::Index>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
    return v;
}

std::vector<double> dlist_from_json(const json& a) {
    std::vector<double> v;
    for (const auto& x : a) v.push_back(x.get<double>());
    return v;
}

// flat comma-separated decimals on the command line
json parse_list(const std::string& s) {
    json a = json::array();
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const double v = std::stod(item, &used);
            if (used != item.size()) throw std::invalid_argument(item);
            a.push_back(v);
        } catch (const std::exception&) {
            throw UsageError("cannot parse number '" + item + "'");
        }
    }
    if (a.empty()) throw UsageError("empty numeric list");
    return a;
}

const std::map<std::string, std::set<std::string>>& command_params() {
    static const std::map<std::string, std::set<std::string>> m = {
        {"hamiltonian", {"x", "p"}},
        {"profile", {"x", "p", "n_samples"}},
        {"average", {"x", "p", "profile"}},
        {"oscillate", {"x0", "p", "profile", "eps", "T"}},
        {"extremal", {"x0", "p0", "T", "eps"}},
        {"converge", {"x0", "p", "profile", "eps", "T"}},
        {"residual", {"x0", "p", "profile", "T"}},
        {"gradcheck", {"samples", "exclusion", "tol"}},
        {"liplog", {"x", "p", "radii", "pairs"}},
        {"shoot", {"x0", "x1", "tol"}},
        {"timelimit", {"x0", "x1", "eps"}},
        {"twobody-verify", {"samples"}},
    };
    return m;
}

struct RunConfig {
    std::string command;
    std::string system = "rotating_field";
    std::string out;
    std::uint64_t seed = 1;
    json params = json::object();

    json to_json() const {
        return json{{"schema", "avgctl-config-1"},
                    {"command", command},
                    {"system", system},
                    {"seed", seed},
                    {"params", params}};
    }
};

void validate_params(const RunConfig& cfg) {
    const auto it = command_params().find(cfg.command);
    if (it == command_params().end()) throw UsageError("unknown command " + cfg.command);
    for (const auto& [key, val] : cfg.params.items()) {
        (void)val;
        if (!it->second.count(key))
            throw UsageError("unknown parameter '" + key + "' for command " + cfg.command);
    }
}

double param_num(const RunConfig& cfg, const std::string& key,
                 std::optional<double> fallback = {}) {
    if (cfg.params.contains(key)) return cfg.params[key].get<double>();
    if (fallback) return *fallback;
    throw UsageError("missing required parameter --" + key);
}

Vec param_vec(const RunConfig& cfg, const std::string& key) {
    if (!cfg.params.contains(key)) throw UsageError("missing required parameter --" + key);
    return vec_from_json(cfg.params[key]);
}

std::vector<double> param_list(const RunConfig& cfg, const std::string& key) {
    if (!cfg.params.contains(key)) throw UsageError("missing required parameter --" + key);
    return dlist_from_json(cfg.params[key]);
}

std::string param_str(const RunConfig& cfg, const std::string& key, const std::string& fallback) {
    return cfg.params.contains(key) ? cfg.params[key].get<std::string>() : fallback;
}

// -------------------------------------------------------------------------
// profiles named on the command line

ControlProfile named_profile(const std::string& name, const AnySystem& sys,
                             const RunConfig& cfg) {
    const int m = system_control_dim(sys);
    if (name == "zero") return ControlProfile::zero(m);
    if (name == "one") {
        ControlVec u = ControlVec::Zero(m);
        u[0] = 1.0;
        return ControlProfile::constant(u);
    }
    if (name == "signcos") {
        return ControlProfile::closed_form(
            m,
            [m](double th) {
                ControlVec u = ControlVec::Zero(m);
                const double c = std::cos(th);
                u[0] = c > 0 ? 1.0 : (c < 0 ? -1.0 : 0.0);
                return u;
            },
            1.0, {kPi / 2, 3 * kPi / 2});
    }
    if (name == "ustar") {
        const Vec x = cfg.params.contains("x0") ? param_vec(cfg, "x0") : param_vec(cfg, "x");
        const Vec p = param_vec(cfg, "p");
        return std::visit([&](const auto& s) { return optimal_profile(s, {x, p}); }, sys);
    }
    if (name.rfind("const:", 0) == 0) {
        const Vec u = vec_from_json(parse_list(name.substr(6)));
        if (u.size() != m) throw UsageError("const profile has wrong control dimension");
        if (u.norm() > 1.0 + kControlTol) throw UsageError("const profile leaves the unit ball");
        return ControlProfile::constant(u);
    }
    throw UsageError("unknown profile '" + name + "' (zero|one|signcos|ustar|const:...)");
}

JointControl joint_from_profile(const ControlProfile& prof, double horizon) {
    JointControl u;
    u.m = prof.control_dim();
    u.horizon = horizon;
    u.theta_kinks = prof.discontinuities();
    u.u = [prof](double, double theta) { return prof(theta); };
    return u;
}

// -------------------------------------------------------------------------
// artifact plumbing

struct Report {
    json results = json::object();
    std::string csv;      // plot-ready table
    std::string summary;  // human-readable lines
    bool pass = true;
    std::optional<Trajectory> traj;
    std::string traj_label;
};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

void emit(const RunConfig& cfg, const Report& rep) {
    std::cout << rep.summary;
    std::cout << (rep.pass ? "status: PASS\n" : "status: FAIL (threshold)\n");
    if (cfg.out.empty()) return;
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out);
    const json cfg_json = cfg.to_json();
    json envelope{{"schema", "avgctl-report-1"},
                  {"command", cfg.command},
                  {"system", cfg.system},
                  {"seed", cfg.seed},
                  {"config", cfg_json},
                  {"input_hash", detail::git_blob_hash(cfg_json.dump())},
                  {"pass", rep.pass},
                  {"results", rep.results}};
    std::ofstream jf(fs::path(cfg.out) / (cfg.command + ".json"));
    jf << envelope.dump(2) << "\n";
    if (!rep.csv.empty()) {
        std::ofstream cf(fs::path(cfg.out) / (cfg.command + ".csv"));
        cf << rep.csv;
    }
    if (rep.traj) {
        std::ofstream tc(fs::path(cfg.out) / "traj.csv");
        rep.traj->write_csv(tc);
        std::ofstream tj(fs::path(cfg.out) / "traj.json");
        rep.traj->write_json(tj, rep.traj_label);
    }
}

// -------------------------------------------------------------------------
// command implementations

Report run_hamiltonian(const RunConfig& cfg, const SystemEntry& entry) {
    const Vec x = param_vec(cfg, "x");
    const Vec p = param_vec(cfg, "p");
    const double h =
        std::visit([&](const auto& s) { return hamiltonian(s, {x, p}); }, entry.system);
    Report rep;
    rep.results = {{"H", h}};
    rep.csv = "H\n" + fmt(h) + "\n";
    rep.summary = "H(x, p) = " + fmt(h) + "\n";
    return rep;
}

Report run_profile(const RunConfig& cfg, const SystemEntry& entry) {
    const Vec x = param_vec(cfg, "x");
    const Vec p = param_vec(cfg, "p");
    const int n_samples = static_cast<int>(param_num(cfg, "n_samples", 360.0));
    const ControlProfile prof =
        std::visit([&](const auto& s) { return optimal_profile(s, {x, p}); }, entry.system);
    Report rep;
    std::ostringstream csv;
    csv << "theta";
    for (int j = 0; j < prof.control_dim(); ++j) csv << ",u_" << (j + 1);
    csv << "\n";
    for (int i = 0; i < n_samples; ++i) {
        const double th = kTwoPi * i / n_samples;
        csv << fmt(th);
        const ControlVec u = prof(th);
        for (int j = 0; j < prof.control_dim(); ++j) csv << ',' << fmt(u[j]);
        csv << "\n";
    }
    rep.csv = csv.str();
    json disc = json::array();
    for (double d : prof.discontinuities()) disc.push_back(d);
    rep.results = {{"discontinuities", disc}, {"n_samples", n_samples}};
    rep.summary = "optimal profile sampled at " + std::to_string(n_samples) + " angles; " +
                  std::to_string(prof.discontinuities().size()) + " discontinuity angle(s)\n";
    return rep;
}

Report run_average(const RunConfig& cfg, const SystemEntry& entry) {
    const Vec x = param_vec(cfg, "x");
    const std::string pname = param_str(cfg, "profile", "ustar");
    const ControlProfile prof = named_profile(pname, entry.system, cfg);
    const Vec gbar =
        std::visit([&](const auto& s) { return average_velocity(s, x, prof); }, entry.system);
    Report rep;
    rep.results = {{"Gbar", vec_to_json(gbar)}, {"profile", pname}};
    std::ostringstream csv;
    for (Eigen::Index j = 0; j < gbar.size(); ++j) csv << (j ? "," : "") << "Gbar_" << (j + 1);
    csv << "\n";
    for (Eigen::Index j = 0; j < gbar.size(); ++j) csv << (j ? "," : "") << fmt(gbar[j]);
    csv << "\n";
    rep.csv = csv.str();
    rep.summary = "Gbar(x, " + pname + ") = [";
    for (Eigen::Index j = 0; j < gbar.size(); ++j)
        rep.summary += std::string(j ? ", " : "") + fmt(gbar[j]);
    rep.summary += "]\n";
    if (pname == "ustar") {
        const Vec p = param_vec(cfg, "p");
        const double h =
            std::visit([&](const auto& s) { return hamiltonian(s, {x, p}); }, entry.system);
        rep.results["H"] = h;
        rep.results["duality_gap"] = std::abs(p.dot(gbar) - h);
        rep.summary += "duality gap |<p,Gbar> - H| = " + fmt(std::abs(p.dot(gbar) - h)) + "\n";
    }
    return rep;
}

Report run_oscillate(const RunConfig& cfg, const SystemEntry& entry) {
    const Vec x0 = param_vec(cfg, "x0");
    const double eps = param_num(cfg, "eps");
    const double T = param_num(cfg, "T");
    const ControlProfile prof =
        named_profile(param_str(cfg, "profile", "signcos"), entry.system, cfg);
    const JointControl u0 = joint_from_profile(prof, T);
    Report rep;
    if (const auto* osc = std::get_if<OscillatingSystem>(&entry.system)) {
        const auto ubar = recovery_control(u0, eps);
        rep.traj = integrate_oscillating(*osc, eps, ubar, x0, 0.0, T);
    } else {
        const auto& kep = std::get<KeplerSystem>(entry.system);
        auto v = [&u0, eps](double t, double theta, const StateVec&) -> ControlVec {
            const double tau = eps * t;
            if (tau + kTwoPi * eps <= u0.horizon) return ControlVec(eps * u0(tau, theta));
            std::vector<double> kinks;
            const double cut = (u0.horizon - tau) / eps;
            if (cut >= 0.0 && cut < kTwoPi) kinks.push_back(cut);
            return ControlVec(eps * integrate_periodic(
                                        [&](double mu) -> Vec {
                                            return u0(tau + eps * normalize_angle(mu), theta);
                                        },
                                        QuadratureSpec{}, kinks)
                                        .value);
        };
        rep.traj = integrate_kepler_fb(kep, eps, v, 0.0, x0, 0.0, T / eps);
    }
    rep.traj_label = cfg.system;
    const Vec xT = rep.traj->states.row(rep.traj->states.rows() - 1).transpose();
    rep.results = {{"final_state", vec_to_json(xT)},
                   {"t_end", rep.traj->t_end()},
                   {"exit", exit_flag_name(rep.traj->flag)}};
    rep.summary = std::string("integrated to t = ") + fmt(rep.traj->t_end()) + " (" +
                  exit_flag_name(rep.traj->flag) + "), final state [";
    for (Eigen::Index j = 0; j < xT.size(); ++j)
        rep.summary += std::string(j ? ", " : "") + fmt(xT[j]);
    rep.summary += "]\n";
    return rep;
}

Report run_extremal(const RunConfig& cfg, const SystemEntry& entry) {
    const Vec x0 = param_vec(cfg, "x0");
    const Vec p0 = param_vec(cfg, "p0");
    const double T = param_num(cfg, "T");
    Report rep;
    if (cfg.params.contains("eps")) {
        const double eps = param_num(cfg, "eps");
        const OscillatingSystem sys = std::visit(
            [](const auto& s) -> OscillatingSystem {
                if constexpr (std::is_same_v<std::decay_t<decltype(s)>, KeplerSystem>)
                    return kepler_to_oscillating(s);
                else
                    return s;
            },
            entry.system);
        rep.traj = integrate_oscillating_extremal(sys, eps, {x0, p0}, 0.0, T);
        json ev = json::array();
        for (double e : rep.traj->events) ev.push_back(e);
        rep.results["switch_times"] = ev;
        rep.summary = "oscillating extremal: " + std::to_string(rep.traj->events.size()) +
                      " switch(es) detected\n";
    } else {
        const double h0 =
            std::visit([&](const auto& s) { return hamiltonian(s, {x0, p0}); }, entry.system);
        rep.traj = std::visit(
            [&](const auto& s) { return integrate_average_extremal(s, {x0, p0}, 0.0, T); },
            entry.system);
        const Vec xT = rep.traj->state(rep.traj->t_end());
        const Vec pT = rep.traj->costate(rep.traj->t_end());
        const double hT =
            std::visit([&](const auto& s) { return hamiltonian(s, {xT, pT}); }, entry.system);
        const double drift = std::abs(hT - h0) / std::max(h0, 1e-300);
        rep.results["H0"] = h0;
        rep.results["H_drift_rel"] = drift;
        rep.summary = "averaged extremal: H0 = " + fmt(h0) +
                      ", relative drift = " + fmt(drift) + "\n";
    }
    rep.traj_label = cfg.system + "_extremal";
    rep.results["exit"] = exit_flag_name(rep.traj->flag);
    return rep;
}

Report run_converge(const RunConfig& cfg, const SystemEntry& entry) {
    const Vec x0 = param_vec(cfg, "x0");
    const std::vector<double> eps = param_list(cfg, "eps");
    const double T = param_num(cfg, "T", 1.0);
    const ControlProfile prof =
        named_profile(param_str(cfg, "profile", "signcos"), entry.system, cfg);
    const JointControl u0 = joint_from_profile(prof, T);
    const bool kepler = std::holds_alternative<KeplerSystem>(entry.system);
    const ConvergenceReport rep0 = std::visit(
        [&](const auto& s) { return convergence_sweep(s, x0, u0, T, eps); }, entry.system);

    Report rep;
    std::ostringstream csv;
    rep0.write_csv(csv);
    rep.csv = csv.str();
    rep.results = {{"eps", json(rep0.eps_list)},
                   {"sup_errors", json(rep0.sup_errors)},
                   {"slope", rep0.fitted_slope},
                   {"log_intercept", rep0.fitted_log_intercept},
                   {"r_squared", rep0.r_squared},
                   {"degenerate", rep0.degenerate}};
    const double lo = kepler ? 0.8 : 0.85, hi = kepler ? 1.2 : 1.15;
    rep.pass = !rep0.degenerate && rep0.fitted_slope >= lo && rep0.fitted_slope <= hi &&
               (kepler || rep0.r_squared >= 0.98);
    rep.summary = "convergence slope = " + fmt(rep0.fitted_slope) + " (target [" + fmt(lo) +
                  ", " + fmt(hi) + "]), r^2 = " + fmt(rep0.r_squared) + "\n";
    return rep;
}

Report run_residual(const RunConfig& cfg, const SystemEntry& entry) {
    const Vec x0 = param_vec(cfg, "x0");
    const double T = param_num(cfg, "T", 1.0);
    const ControlProfile prof =
        named_profile(param_str(cfg, "profile", "signcos"), entry.system, cfg);
    const JointControl u0 = joint_from_profile(prof, T);
    Report rep;
    const double res = std::visit(
        [&](const auto& s) {
            const Trajectory traj = integrate_average(s, x0, u0, 0.0, T);
            return inclusion_residual(s, traj);
        },
        entry.system);
    rep.results = {{"residual", res}, {"threshold", 5e-3}};
    rep.csv = "residual\n" + fmt(res) + "\n";
    rep.pass = res <= 5e-3;
    rep.summary = "inclusion residual = " + fmt(res) + " (averaged-feasible iff <= 5e-3)\n";
    return rep;
}

Report run_gradcheck(const RunConfig& cfg, const SystemEntry& entry) {
    const int samples = static_cast<int>(param_num(cfg, "samples", 100.0));
    const double exclusion = param_num(cfg, "exclusion", 0.05);
    const bool kepler = std::holds_alternative<KeplerSystem>(entry.system);
    const double tol = param_num(cfg, "tol", kepler ? 1e-4 : 1e-5);
    const GradCheckReport rep0 = grad_check(entry, samples, exclusion, cfg.seed);
    Report rep;
    rep.results = {{"max_rel_error", rep0.max_rel_error},
                   {"accepted", rep0.accepted},
                   {"rejected", rep0.rejected},
                   {"tol", tol}};
    rep.csv = "max_rel_error,accepted,rejected\n" + fmt(rep0.max_rel_error) + ',' +
              std::to_string(rep0.accepted) + ',' + std::to_string(rep0.rejected) + "\n";
    rep.pass = rep0.max_rel_error <= tol;
    rep.summary = "gradient vs finite differences: max rel error = " + fmt(rep0.max_rel_error) +
                  " over " + std::to_string(rep0.accepted) + " samples (" +
                  std::to_string(rep0.rejected) + " rejected near the kink set)\n";
    return rep;
}

Report run_liplog(const RunConfig& cfg, const SystemEntry& entry) {
    std::vector<double> radii{1e-2, 1e-3, 1e-4, 1e-5};
    if (cfg.params.contains("radii")) radii = param_list(cfg, "radii");
    const int pairs = static_cast<int>(param_num(cfg, "pairs", 64.0));
    CotangentPoint center;
    if (cfg.params.contains("x") && cfg.params.contains("p")) {
        center = {param_vec(cfg, "x"), param_vec(cfg, "p")};
    } else if (cfg.system == "two_body_planar") {
        // built-in kink-set center
        const ReducedCostate rc = reduced_costate_on_kink(0.3, -0.2, 1.0);
        Vec x(3), p(3);
        x << 1.0, 0.3, -0.2;
        p << rc.A, rc.X, rc.Y;
        center = {x, p};
    } else {
        throw UsageError("liplog needs --x and --p (no built-in center for this system)");
    }
    const LipLogReport rep0 = std::visit(
        [&](const auto& s) { return liplog_modulus(s, center, radii, pairs, cfg.seed); },
        entry.system);
    Report rep;
    std::ostringstream csv;
    rep0.write_csv(csv);
    rep.csv = csv.str();
    rep.results = {{"radii", json(rep0.radii)},
                   {"liplog_ratios", json(rep0.liplog_ratios)},
                   {"lipschitz_ratios", json(rep0.lipschitz_ratios)},
                   {"center_zero_angle", rep0.center_zero_angle}};
    bool ok = true;
    const std::size_t nr = rep0.radii.size();
    if (nr >= 3) {
        double rmax = 0.0, rmin = std::numeric_limits<double>::infinity();
        for (std::size_t i = nr - 3; i < nr; ++i) {
            rmax = std::max(rmax, rep0.liplog_ratios[i]);
            rmin = std::min(rmin, rep0.liplog_ratios[i]);
        }
        ok = rmax / rmin <= 3.0;
        rep.results["last3_max_over_min"] = rmax / rmin;
    }
    rep.pass = ok;
    rep.summary = "log-modulus ratios:";
    for (double r : rep0.liplog_ratios) rep.summary += " " + fmt(r);
    rep.summary += "\n";
    return rep;
}

Report run_shoot(const RunConfig& cfg, const SystemEntry& entry) {
    const Vec x0 = param_vec(cfg, "x0");
    const Vec x1 = param_vec(cfg, "x1");
    const double tol = param_num(cfg, "tol", 1e-6);
    ShootOptions opts;
    opts.seed = cfg.seed;
    const ShootingResult res = std::visit(
        [&](const auto& s) { return min_time_shoot(s, x0, x1, tol, 200, opts); }, entry.system);
    Report rep;
    rep.results = {{"T0", res.T0},
                   {"p0", vec_to_json(res.p0)},
                   {"terminal_miss", res.terminal_miss},
                   {"iterations", res.iterations}};
    rep.csv = "T0,terminal_miss,iterations\n" + fmt(res.T0) + ',' + fmt(res.terminal_miss) +
              ',' + std::to_string(res.iterations) + "\n";
    rep.traj = res.extremal;
    rep.traj_label = cfg.system + "_minimum_time_extremal";
    rep.pass = res.terminal_miss <= tol;
    rep.summary = "extremal time T0 = " + fmt(res.T0) + ", terminal miss = " +
                  fmt(res.terminal_miss) + " in " + std::to_string(res.iterations) +
                  " iterations\n";
    return rep;
}

Report run_timelimit(const RunConfig& cfg, const SystemEntry& entry) {
    const Vec x0 = param_vec(cfg, "x0");
    const Vec x1 = param_vec(cfg, "x1");
    const std::vector<double> eps = param_list(cfg, "eps");
    TimeLimitOptions opts;
    opts.shoot.seed = cfg.seed;
    const TimeLimitReport rep0 = std::visit(
        [&](const auto& s) { return time_limit_probe(s, eps, x0, x1, opts); }, entry.system);
    Report rep;
    std::ostringstream csv;
    rep0.write_csv(csv);
    rep.csv = csv.str();
    rep.results = {{"T0", rep0.T0},
                   {"eps", json(rep0.eps_list)},
                   {"reach_times", json(rep0.reach_times)},
                   {"ball_constant", rep0.ball_constant},
                   {"excess_slope", rep0.excess_slope}};
    bool ok = rep0.excess_slope >= 0.7 && rep0.excess_slope <= 1.3;
    for (bool o : rep0.ok) ok = ok && o;
    rep.pass = ok;
    rep.summary = "T0 = " + fmt(rep0.T0) + ", excess slope = " + fmt(rep0.excess_slope) + "\n";
    for (std::size_t i = 0; i < eps.size(); ++i)
        rep.summary += "  eps " + fmt(eps[i]) + ": reach " + fmt(rep0.reach_times[i]) + "\n";
    return rep;
}

Report run_twobody_verify(const RunConfig& cfg, const SystemEntry&) {
    const int samples = static_cast<int>(param_num(cfg, "samples", 1000.0));
    std::mt19937_64 rng(cfg.seed);
    auto u01 = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };

    double worst_detm = 0.0;
    for (int i = 0; i < samples; ++i) {
        const double r = 0.95 * std::sqrt(u01());
        const double ph = kTwoPi * u01();
        const double ex = r * std::cos(ph), ey = r * std::sin(ph);
        const double lam = -5.0 + 10.0 * u01();
        const double rhs = std::pow(1.0 - r, 3) * std::pow(1.0 + r, 3) * (lam * lam + 4.0);
        worst_detm = std::max(worst_detm, std::abs(det_M(ex, ey, lam) - rhs) / rhs);
    }

    int hist[3] = {0, 0, 0};
    int disagreements = 0;
    for (int i = 0; i < samples; ++i) {
        const double r = 0.88 * std::sqrt(u01());
        const double ph = kTwoPi * u01();
        const double ex = r * std::cos(ph), ey = r * std::sin(ph);
        Vec axy(3);
        axy << 2 * u01() - 1, 2 * u01() - 1, 2 * u01() - 1;
        if (axy.norm() < 1e-6) axy << 1, 0, 0;
        axy.normalize();
        auto phi = [&](double L) -> Vec {
            return (axy.transpose() * reduced_profile_matrix(ex, ey, L)).transpose();
        };
        const std::size_t nz = locate_zeros(phi).zeros.size();
        ++hist[std::min<std::size_t>(nz, 2)];
        const auto sw = switch_angle(ex, ey, axy[0], axy[1], axy[2]);
        if (nz != (sw.has_value() ? 1u : 0u)) ++disagreements;
    }

    double worst_motion = 0.0;
    for (int i = 0; i < 200; ++i) {
        const double r = 0.88 * std::sqrt(u01());
        const double ph = kTwoPi * u01();
        const double ex = r * std::cos(ph), ey = r * std::sin(ph);
        auto f = [&](double L) {
            Vec v(1);
            v[0] = 1.0 / gauss_fields(ex, ey, L).w;
            return v;
        };
        worst_motion = std::max(worst_motion, std::abs(integrate_periodic(f).value[0] - 1.0));
    }

    Report rep;
    rep.results = {{"detM_max_rel_err", worst_detm},
                   {"switch_histogram", {{"0", hist[0]}, {"1", hist[1]}, {"ge2", hist[2]}}},
                   {"switch_disagreements", disagreements},
                   {"mean_motion_max_err", worst_motion},
                   {"samples", samples}};
    rep.csv = "detM_max_rel_err,hist0,hist1,hist_ge2,disagreements,mean_motion_max_err\n" +
              fmt(worst_detm) + ',' + std::to_string(hist[0]) + ',' + std::to_string(hist[1]) +
              ',' + std::to_string(hist[2]) + ',' + std::to_string(disagreements) + ',' +
              fmt(worst_motion) + "\n";
    rep.pass =
        worst_detm <= 1e-10 && hist[2] == 0 && disagreements == 0 && worst_motion <= 1e-8;
    rep.summary = "detM max rel err = " + fmt(worst_detm) + "\nswitch-count histogram {0: " +
                  std::to_string(hist[0]) + ", 1: " + std::to_string(hist[1]) +
                  "}, entries >= 2: " + std::to_string(hist[2]) +
                  ", disagreements: " + std::to_string(disagreements) +
                  "\nmean-motion identity max err = " + fmt(worst_motion) + "\n";
    return rep;
}

int dispatch(const RunConfig& cfg) {
    validate_params(cfg);
    const auto& reg = SystemRegistry::builtin();
    const std::string sys_label =
        cfg.command == "twobody-verify" ? "two_body_planar" : cfg.system;
    if (!reg.contains(sys_label)) throw UsageError("unknown system '" + sys_label + "'");
    const SystemEntry& entry = reg.at(sys_label);

    Report rep;
    if (cfg.command == "hamiltonian") rep = run_hamiltonian(cfg, entry);
    else if (cfg.command == "profile") rep = run_profile(cfg, entry);
    else if (cfg.command == "average") rep = run_average(cfg, entry);
    else if (cfg.command == "oscillate") rep = run_oscillate(cfg, entry);
    else if (cfg.command == "extremal") rep = run_extremal(cfg, entry);
    else if (cfg.command == "converge") rep = run_converge(cfg, entry);
    else if (cfg.command == "residual") rep = run_residual(cfg, entry);
    else if (cfg.command == "gradcheck") rep = run_gradcheck(cfg, entry);
    else if (cfg.command == "liplog") rep = run_liplog(cfg, entry);
    else if (cfg.command == "shoot") rep = run_shoot(cfg, entry);
    else if (cfg.command == "timelimit") rep = run_timelimit(cfg, entry);
    else if (cfg.command == "twobody-verify") rep = run_twobody_verify(cfg, entry);
    else throw UsageError("unknown command " + cfg.command);

    emit(cfg, rep);
    return rep.pass ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"avgctl: averaged control systems workbench"};
    app.require_subcommand(0, 1);

    std::string config_path, system_label, out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false, system_set = false, out_set = false;
    app.add_option("--config", config_path, "JSON config file (schema avgctl-config-1)");
    app.add_option_function<std::string>(
        "--system",
        [&](const std::string& v) {
            system_label = v;
            system_set = true;
        },
        "registry system label");
    app.add_option_function<std::uint64_t>(
        "--seed",
        [&](std::uint64_t v) {
            seed = v;
            seed_set = true;
        },
        "RNG seed");
    app.add_option_function<std::string>(
        "--out",
        [&](const std::string& v) {
            out_dir = v;
            out_set = true;
        },
        "artifact output directory");

    // every subcommand takes the generic flags it supports; whitelist
    // validation happens in dispatch()
    std::map<std::string, std::string> str_flags;
    std::map<std::string, double> num_flags;
    std::string profile_flag;
    bool profile_set = false;
    const std::set<std::string> list_keys{"x", "p", "x0", "p0", "x1", "radii"};
    const std::set<std::string> num_keys{"T", "samples", "n_samples", "tol", "exclusion",
                                         "pairs"};

    std::vector<CLI::App*> subs;
    for (const auto& [cmd, keys] : command_params()) {
        CLI::App* sub = app.add_subcommand(cmd);
        sub->fallthrough(true);  // --system/--seed/--out may follow the subcommand
        for (const std::string& k : keys) {
            if (list_keys.count(k)) {
                sub->add_option_function<std::string>(
                    "--" + k, [&str_flags, k](const std::string& v) { str_flags[k] = v; },
                    "comma-separated decimals");
            } else if (num_keys.count(k)) {
                sub->add_option_function<double>(
                    "--" + k, [&num_flags, k](double v) { num_flags[k] = v; });
            } else if (k == "eps") {
                // scalar for single runs, comma list for sweeps
                sub->add_option_function<std::string>(
                    "--eps", [&str_flags](const std::string& v) { str_flags["eps"] = v; },
                    "eps value or comma-separated sweep list");
            } else if (k == "profile") {
                sub->add_option_function<std::string>(
                    "--profile",
                    [&profile_flag, &profile_set](const std::string& v) {
                        profile_flag = v;
                        profile_set = true;
                    },
                    "zero|one|signcos|ustar|const:<list>");
            }
        }
        subs.push_back(sub);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 64;
    }

    try {
        RunConfig cfg;
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in) throw UsageError("cannot open config file " + config_path);
            json doc;
            try {
                doc = json::parse(in);
            } catch (const json::exception& e) {
                throw UsageError(std::string("malformed config: ") + e.what());
            }
            if (doc.value("schema", "") != "avgctl-config-1")
                throw UsageError("config schema must be avgctl-config-1");
            cfg.command = doc.value("command", "");
            cfg.system = doc.value("system", cfg.system);
            cfg.seed = doc.value("seed", cfg.seed);
            cfg.out = doc.value("out", cfg.out);
            if (doc.contains("params")) {
                if (!doc["params"].is_object()) throw UsageError("config params must be a map");
                cfg.params = doc["params"];
            }
        }
        // flags override the file
        std::string sub_cmd;
        for (CLI::App* sub : subs)
            if (sub->parsed()) sub_cmd = sub->get_name();
        if (!sub_cmd.empty()) {
            if (!cfg.command.empty() && cfg.command != sub_cmd)
                throw UsageError("config command '" + cfg.command +
                                 "' conflicts with subcommand '" + sub_cmd + "'");
            cfg.command = sub_cmd;
        }
        if (cfg.command.empty()) throw UsageError("no command given (see --help)");
        if (system_set) cfg.system = system_label;
        if (seed_set) cfg.seed = seed;
        if (out_set) cfg.out = out_dir;
        for (const auto& [k, v] : str_flags) {
            if (k == "eps" &&
                (cfg.command == "oscillate" || cfg.command == "extremal") &&
                v.find(',') == std::string::npos) {
                cfg.params[k] = std::stod(v);
            } else {
                cfg.params[k] = parse_list(v);
            }
        }
        for (const auto& [k, v] : num_flags) cfg.params[k] = v;
        if (profile_set) cfg.params["profile"] = profile_flag;
        return dispatch(cfg);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 64;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
