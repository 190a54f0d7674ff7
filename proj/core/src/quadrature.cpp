#include "avgctl/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <queue>

#include "avgctl/errors.hpp"

namespace avgctl {

namespace {

// 15-point Kronrod extension of 7-point Gauss (nonnegative abscissae).
constexpr double kXgk[8] = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144838258730, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
constexpr double kWgk[8] = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
constexpr double kWg[4] = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct Segment {
    double a, b;
    Vec integral;
    double err;
};

struct SegOrder {
    bool operator()(const Segment& l, const Segment& r) const { return l.err < r.err; }
};

// One G7/K15 pass on [a, b]. The raw |K15 - G7| gap underestimates the
// error when a kink sits near a node-sparse spot, so the estimate is
// sharpened against the integrand's mean absolute deviation as in QUADPACK.
Segment gk15(const PeriodicFn& f, double a, double b, int dim) {
    const double c = 0.5 * (a + b);
    const double h = 0.5 * (b - a);
    Mat fvals(dim, 15);
    for (int i = 0; i < 7; ++i) {
        fvals.col(2 * i) = f(c - h * kXgk[i]);
        fvals.col(2 * i + 1) = f(c + h * kXgk[i]);
    }
    fvals.col(14) = f(c);
    Vec k15 = Vec::Zero(dim);
    Vec g7 = Vec::Zero(dim);
    for (int i = 0; i < 7; ++i) {
        const Vec fsum = fvals.col(2 * i) + fvals.col(2 * i + 1);
        k15 += kWgk[i] * fsum;
        if (i % 2 == 1) g7 += kWg[i / 2] * fsum;
    }
    k15 += kWgk[7] * fvals.col(14);
    g7 += kWg[3] * fvals.col(14);

    double err = 0.0;
    for (int d = 0; d < dim; ++d) {
        const double mean = 0.5 * k15[d];
        double resasc = 0.0;
        for (int i = 0; i < 7; ++i)
            resasc += kWgk[i] * (std::abs(fvals(d, 2 * i) - mean) +
                                 std::abs(fvals(d, 2 * i + 1) - mean));
        resasc += kWgk[7] * std::abs(fvals(d, 14) - mean);
        resasc *= h;
        double e = h * std::abs(k15[d] - g7[d]);
        if (resasc != 0.0 && e != 0.0)
            e = resasc * std::min(1.0, std::pow(200.0 * e / resasc, 1.5));
        err = std::max(err, e);
    }
    Segment s;
    s.a = a;
    s.b = b;
    s.integral = h * k15;
    s.err = err;
    return s;
}

std::vector<std::pair<double, double>> initial_partition(const std::vector<double>& kinks,
                                                         bool split) {
    std::vector<std::pair<double, double>> out;
    std::vector<double> pts;
    if (split) {
        for (double k : kinks) {
            double v = std::fmod(k, kTwoPi);
            if (v < 0) v += kTwoPi;
            pts.push_back(v);
        }
        std::sort(pts.begin(), pts.end());
        pts.erase(std::unique(pts.begin(), pts.end(),
                              [](double a, double b) { return std::abs(a - b) < 1e-13; }),
                  pts.end());
    }
    auto push_split = [&out](double a, double b) {
        // keep panels below pi/2 so one K15 pass resolves low trig modes
        const int pieces = std::max(1, static_cast<int>(std::ceil((b - a) / (kPi / 2))));
        for (int i = 0; i < pieces; ++i)
            out.emplace_back(a + (b - a) * i / pieces, a + (b - a) * (i + 1) / pieces);
    };
    if (pts.empty()) {
        push_split(0.0, kTwoPi);
        return out;
    }
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) push_split(pts[i], pts[i + 1]);
    push_split(pts.back(), pts.front() + kTwoPi);  // wrap-around panel
    return out;
}

}  // namespace

QuadratureResult integrate_periodic(const PeriodicFn& f, const QuadratureSpec& spec,
                                    const std::vector<double>& kinks) {
    if (!(spec.abs_tol > 0) || !(spec.rel_tol > 0) || spec.max_subdiv < 1)
        throw std::invalid_argument("integrate_periodic: invalid QuadratureSpec");
    const Vec probe = f(0.0);
    const int dim = static_cast<int>(probe.size());

    std::priority_queue<Segment, std::vector<Segment>, SegOrder> heap;
    Vec total = Vec::Zero(dim);
    double total_err = 0.0;
    int n_segs = 0;
    for (const auto& [a, b] : initial_partition(kinks, spec.kink_split)) {
        Segment s = gk15(f, a, b, dim);
        total += s.integral;
        total_err += s.err;
        heap.push(std::move(s));
        ++n_segs;
    }

    auto tol_raw = [&](void) {
        // tolerances apply to the normalized mean; work in raw-integral scale
        return std::max(spec.abs_tol, spec.rel_tol * total.norm() / kTwoPi) * kTwoPi;
    };

    while (total_err > tol_raw()) {
        if (n_segs >= spec.max_subdiv) {
            throw QuadratureError("integrate_periodic: subdivision budget exhausted",
                                  total / kTwoPi, total_err / kTwoPi);
        }
        Segment worst = heap.top();
        heap.pop();
        const double mid = 0.5 * (worst.a + worst.b);
        Segment l = gk15(f, worst.a, mid, dim);
        Segment r = gk15(f, mid, worst.b, dim);
        total += l.integral + r.integral - worst.integral;
        total_err += l.err + r.err - worst.err;
        heap.push(std::move(l));
        heap.push(std::move(r));
        ++n_segs;
    }
    return {total / kTwoPi, total_err / kTwoPi};
}

std::vector<double> ZeroReport::angles() const {
    std::vector<double> out;
    out.reserve(zeros.size());
    for (const auto& z : zeros) out.push_back(z.angle);
    return out;
}

namespace {

double golden_min(const std::function<double(double)>& g, double a, double b, double tol) {
    constexpr double invphi = 0.6180339887498949;
    double x1 = b - invphi * (b - a);
    double x2 = a + invphi * (b - a);
    double f1 = g(x1), f2 = g(x2);
    while (b - a > tol) {
        if (f1 < f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - invphi * (b - a);
            f1 = g(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + invphi * (b - a);
            f2 = g(x2);
        }
    }
    return f1 < f2 ? x1 : x2;
}

}  // namespace

ZeroReport locate_zeros(const PeriodicFn& phi, const QuadratureSpec& spec) {
    const int n = std::max(spec.n_scan, 8);
    std::vector<double> g(n);
    double scan_max = 0.0;
    for (int i = 0; i < n; ++i) {
        g[i] = phi(kTwoPi * i / n).norm();
        scan_max = std::max(scan_max, g[i]);
    }
    ZeroReport rep;
    rep.scan_max = scan_max;
    rep.scan_min = scan_max;
    const double scale = std::max(1.0, scan_max);
    const double candidate_thresh = 1e-3 * scale;
    const double zero_thresh = 1e-12 * scale;

    auto gnorm = [&phi](double th) { return phi(th).norm(); };
    auto dphi_norm = [&phi](double th) {
        const double h = 1e-5;
        return ((phi(th + h) - phi(th - h)) / (2 * h)).norm();
    };

    double best_min = scan_max, best_min_angle = 0.0;
    for (int i = 0; i < n; ++i) {
        const double gm = g[(i + n - 1) % n], gc = g[i], gp = g[(i + 1) % n];
        if (gc < best_min) {
            best_min = gc;
            best_min_angle = kTwoPi * i / n;
        }
        if (!(gc <= gm && gc <= gp)) continue;
        // a transversal zero between samples leaves the nearest sample no
        // higher than ~slope * step / 2; the adjacent differences estimate
        // slope * step, so this branch catches every simple zero
        const double vee = 4.0 * std::max(std::abs(gc - gm), std::abs(gp - gc));
        if (!(gc < candidate_thresh || gc <= vee)) continue;
        const double a = kTwoPi * (i - 1) / n;
        const double b = kTwoPi * (i + 1) / n;
        const double th = normalize_angle(golden_min(gnorm, a, b, 1e-13));
        const double res = gnorm(th);
        rep.split_hints.push_back(th);
        if (best_min > res) {
            best_min = res;
            best_min_angle = th;
        }
        if (res <= zero_thresh) {
            const bool degenerate = dphi_norm(th) < 1e-6 * scale;
            rep.zeros.push_back({th, degenerate});
            rep.residuals.push_back(res);
        }
    }
    rep.scan_min = best_min;
    rep.scan_min_angle = best_min_angle;
    rep.dphi_at_min = dphi_norm(best_min_angle);

    // sort and dedup near-identical zeros (mod 2*pi)
    std::vector<std::size_t> idx(rep.zeros.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return rep.zeros[a].angle < rep.zeros[b].angle; });
    ZeroReport out;
    out.split_hints = rep.split_hints;
    out.scan_max = rep.scan_max;
    out.scan_min = rep.scan_min;
    out.scan_min_angle = rep.scan_min_angle;
    out.dphi_at_min = rep.dphi_at_min;
    for (std::size_t j : idx) {
        const auto& z = rep.zeros[j];
        if (!out.zeros.empty() && z.angle - out.zeros.back().angle < 1e-8) continue;
        out.zeros.push_back(z);
        out.residuals.push_back(rep.residuals[j]);
    }
    // wrap-around duplicate: last zero may alias the first one mod 2*pi
    if (out.zeros.size() >= 2 &&
        (out.zeros.front().angle + kTwoPi - out.zeros.back().angle) < 1e-8) {
        out.zeros.pop_back();
        out.residuals.pop_back();
    }
    std::sort(out.split_hints.begin(), out.split_hints.end());
    return out;
}

}  // namespace avgctl
