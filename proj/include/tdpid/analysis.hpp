#pragma once

// Robustness and visualization computations on filtered PID loops: input-delay
// margins, (T, tau0) stability charts, root loci and a method-of-steps
// simulator used as an independent time-domain stability check.

#include "tdpid/parallel.hpp"
#include "tdpid/spectrum.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace tdpid {

struct AnalysisOptions {
    SpectrumOptions spectrum;
    IntegratorStates integrator = IntegratorStates::drop_if_unused;
};

inline double abscissa_at(const DelaySystem& sys, const PIDFilterController& ctl, const AnalysisOptions& opts) {
    return spectral_abscissa(assemble_closed_loop(sys, ctl, opts.integrator), opts.spectrum);
}

// --- delay margin --------------------------------------------------------------

struct MarginOptions : AnalysisOptions {
    int sweep_points = 50;
    double tol = 1e-4;
};

struct DelayMargin {
    double value = 0.0;
    bool crossing_found = false;
};

/// Smallest input delay in (0, tau_hi] at which the filtered loop loses stability.
/// Returns tau_hi with crossing_found = false when the loop stays stable over the sweep.
inline DelayMargin delay_margin(const DelaySystem& sys, const PIDFilterController& ctl, double tau_hi,
                                const MarginOptions& opts = {}) {
    if (!(tau_hi > 0.0) || !std::isfinite(tau_hi)) throw ValidationError("tau_hi must be positive");
    if (opts.sweep_points < 1) throw ValidationError("margin sweep needs at least one point");

    auto rho = [&](double tau) { return abscissa_at(with_input_delay(sys, tau), ctl, opts); };
    if (rho(0.0) >= 0.0) throw ComputationError("margin undefined: loop is not stable without input delay");

    const int n = opts.sweep_points;
    std::vector<double> taus(n), values(n);
    for (int k = 0; k < n; ++k) taus[k] = tau_hi * (k + 1) / n;
    parallel_for(n, [&](std::size_t k) { values[k] = rho(taus[k]); });

    const auto first = std::find_if(values.begin(), values.end(), [](double v) { return v >= 0.0; });
    if (first == values.end()) return {tau_hi, false};

    const auto k = std::distance(values.begin(), first);
    double lo = k == 0 ? 0.0 : taus[k - 1];
    double hi = taus[k];
    while (hi - lo > opts.tol) {
        const double mid = 0.5 * (lo + hi);
        if (rho(mid) >= 0.0) hi = mid;
        else lo = mid;
    }
    return {0.5 * (lo + hi), true};
}

// --- stability region ------------------------------------------------------------

struct AxisRange {
    double lo = 0.0;
    double hi = 0.0;
    int count = 2;

    std::vector<double> values() const {
        if (count < 1) throw ValidationError("axis range needs at least one point");
        if (count == 1) {
            if (lo != hi) throw ValidationError("a single-point axis range needs lo == hi");
            return {lo};
        }
        if (!(hi > lo)) throw ValidationError("axis range needs hi > lo");
        std::vector<double> v(count);
        for (int i = 0; i < count; ++i) v[i] = lo + (hi - lo) * i / (count - 1);
        return v;
    }
};

enum class CellState : signed char { unstable = 0, stable = 1, unknown = -1 };

struct Point2 {
    double T = 0.0;
    double tau0 = 0.0;
    bool operator==(const Point2&) const = default;
};

using Polyline = std::vector<Point2>;

struct StabilityRegion {
    std::vector<double> t_axis;
    std::vector<double> tau_axis;
    Matrix rho;                     // rho(i, j) at (t_axis[i], tau_axis[j]); NaN when unknown
    std::vector<CellState> cells;   // row-major over (i, j)
    std::vector<Polyline> boundary;

    CellState state(std::size_t i, std::size_t j) const { return cells[i * tau_axis.size() + j]; }
    bool stable(std::size_t i, std::size_t j) const { return state(i, j) == CellState::stable; }
};

namespace detail {

/// Zero level set of a sampled field (rho < 0 inside) by marching squares with
/// linear interpolation; segments are chained into polylines.
inline std::vector<Polyline> marching_squares(const std::vector<double>& xs, const std::vector<double>& ys, const Matrix& f) {
    const auto nx = static_cast<int>(xs.size()), ny = static_cast<int>(ys.size());
    auto inside = [&](int i, int j) { return f(i, j) < 0.0; };
    // crossing on the edge between two grid nodes; endpoints ordered so shared edges agree bitwise
    auto edge_point = [&](int i0, int j0, int i1, int j1) {
        if (i1 < i0 || (i1 == i0 && j1 < j0)) {
            std::swap(i0, i1);
            std::swap(j0, j1);
        }
        const double a = f(i0, j0), b = f(i1, j1);
        const double t = (a == b) ? 0.5 : a / (a - b);
        return Point2{xs[i0] + t * (xs[i1] - xs[i0]), ys[j0] + t * (ys[j1] - ys[j0])};
    };

    std::vector<std::pair<Point2, Point2>> segments;
    for (int i = 0; i + 1 < nx; ++i) {
        for (int j = 0; j + 1 < ny; ++j) {
            const int ci[4] = {i, i + 1, i + 1, i};
            const int cj[4] = {j, j, j + 1, j + 1};
            bool finite = true;
            for (int k = 0; k < 4; ++k) finite = finite && std::isfinite(f(ci[k], cj[k]));
            if (!finite) continue;
            std::vector<Point2> pts;
            for (int k = 0; k < 4; ++k) {
                const int a = k, b = (k + 1) % 4;
                if (inside(ci[a], cj[a]) != inside(ci[b], cj[b])) pts.push_back(edge_point(ci[a], cj[a], ci[b], cj[b]));
            }
            if (pts.size() == 2) {
                segments.emplace_back(pts[0], pts[1]);
            } else if (pts.size() == 4) {
                // saddle: decide by the cell-centre average
                const double centre = 0.25 * (f(i, j) + f(i + 1, j) + f(i + 1, j + 1) + f(i, j + 1));
                const bool centre_inside = centre < 0.0;
                if (centre_inside == inside(i, j)) {
                    segments.emplace_back(pts[0], pts[3]);
                    segments.emplace_back(pts[1], pts[2]);
                } else {
                    segments.emplace_back(pts[0], pts[1]);
                    segments.emplace_back(pts[2], pts[3]);
                }
            }
        }
    }

    auto key = [](const Point2& p) { return std::make_pair(p.T, p.tau0); };
    std::multimap<std::pair<double, double>, std::size_t> ends;
    for (std::size_t s = 0; s < segments.size(); ++s) {
        ends.emplace(key(segments[s].first), s);
        ends.emplace(key(segments[s].second), s);
    }
    std::vector<bool> used(segments.size(), false);
    auto take_next = [&](const Point2& at) -> std::optional<Point2> {
        auto [b, e] = ends.equal_range(key(at));
        for (auto it = b; it != e; ++it) {
            const auto s = it->second;
            if (used[s]) continue;
            used[s] = true;
            return segments[s].first == at ? segments[s].second : segments[s].first;
        }
        return std::nullopt;
    };

    std::vector<Polyline> lines;
    for (std::size_t s = 0; s < segments.size(); ++s) {
        if (used[s]) continue;
        used[s] = true;
        Polyline line{segments[s].first, segments[s].second};
        while (auto p = take_next(line.back())) line.push_back(*p);
        while (auto p = take_next(line.front())) line.insert(line.begin(), *p);
        lines.push_back(std::move(line));
    }
    return lines;
}

}  // namespace detail

/// Sign of the spectral abscissa over a (T, tau0) grid with fixed gains.
inline StabilityRegion stability_region(const DelaySystem& sys, const Matrix& Kp, const Matrix& Ki, const Matrix& Kd,
                                        const AxisRange& t_range, const AxisRange& tau_range,
                                        const AnalysisOptions& opts = {}) {
    StabilityRegion reg;
    reg.t_axis = t_range.values();
    reg.tau_axis = tau_range.values();
    if (reg.t_axis.front() <= 0.0) throw ValidationError("filter constant axis must be positive");
    if (reg.tau_axis.front() < 0.0) throw ValidationError("input delay axis must be nonnegative");

    const auto nt = reg.t_axis.size(), ntau = reg.tau_axis.size();
    reg.rho = Matrix::Constant(nt, ntau, std::numeric_limits<double>::quiet_NaN());
    reg.cells.assign(nt * ntau, CellState::unknown);
    parallel_for(nt * ntau, [&](std::size_t idx) {
        const auto i = idx / ntau, j = idx % ntau;
        try {
            const PIDFilterController ctl{Kp, Ki, Kd, reg.t_axis[i]};
            const double r = abscissa_at(with_input_delay(sys, reg.tau_axis[j]), ctl, opts);
            reg.rho(i, j) = r;
            reg.cells[idx] = r < 0.0 ? CellState::stable : CellState::unstable;
        } catch (const ComputationError&) {
        }
    });
    reg.boundary = detail::marching_squares(reg.t_axis, reg.tau_axis, reg.rho);
    return reg;
}

inline void write_region_csv(std::ostream& os, const StabilityRegion& reg) {
    const auto old = os.precision(17);
    os << "T,tau0,rho,stable\n";
    for (std::size_t i = 0; i < reg.t_axis.size(); ++i)
        for (std::size_t j = 0; j < reg.tau_axis.size(); ++j)
            os << reg.t_axis[i] << ',' << reg.tau_axis[j] << ',' << reg.rho(i, j) << ','
               << static_cast<int>(reg.state(i, j)) << '\n';
    os.precision(old);
}

// --- root locus --------------------------------------------------------------------

enum class SweepParameter { tau0, T };

struct LocusPoint {
    double param = 0.0;
    int trace_id = 0;
    Complex root;
};

struct RootLocus {
    std::vector<double> params;
    std::vector<std::vector<LocusPoint>> steps;  // per parameter value, rightmost roots with trace ids
    std::vector<double> failed;                  // parameter values whose spectrum failed
    int trace_count = 0;
};

struct LocusOptions : AnalysisOptions {
    int rightmost = 8;
};

namespace detail {

inline double median_spacing(const std::vector<Complex>& roots) {
    std::vector<double> d;
    for (std::size_t a = 0; a < roots.size(); ++a)
        for (std::size_t b = a + 1; b < roots.size(); ++b) d.push_back(std::abs(roots[a] - roots[b]));
    if (d.empty()) return std::numeric_limits<double>::infinity();
    std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
    return d[d.size() / 2];
}

}  // namespace detail

/// Rightmost roots along a sweep of tau0 or T, continuity-ordered by nearest-neighbour matching.
inline RootLocus root_locus(const DelaySystem& sys, const PIDFilterController& ctl, SweepParameter which,
                            const AxisRange& range, const LocusOptions& opts = {}) {
    if (opts.rightmost < 1) throw ValidationError("locus needs at least one root per step");
    RootLocus loc;
    loc.params = range.values();
    if (which == SweepParameter::T && loc.params.front() <= 0.0) throw ValidationError("filter constant must be positive");
    if (which == SweepParameter::tau0 && loc.params.front() < 0.0) throw ValidationError("input delay must be nonnegative");

    std::vector<std::optional<std::vector<Complex>>> raw(loc.params.size());
    parallel_for(loc.params.size(), [&](std::size_t k) {
        try {
            const double v = loc.params[k];
            const auto cl = which == SweepParameter::tau0
                                ? assemble_closed_loop(with_input_delay(sys, v), ctl, opts.integrator)
                                : assemble_closed_loop(sys, with_filter_constant(ctl, v), opts.integrator);
            const auto sp = compute_roots(cl, opts.spectrum);
            std::vector<Complex> r;
            for (std::size_t i = 0; i < sp.roots.size() && static_cast<int>(i) < opts.rightmost; ++i)
                r.push_back(sp.roots[i].value);
            raw[k] = std::move(r);
        } catch (const ComputationError&) {
        }
    });

    std::vector<LocusPoint> prev;
    for (std::size_t k = 0; k < loc.params.size(); ++k) {
        if (!raw[k]) {
            loc.failed.push_back(loc.params[k]);
            loc.steps.emplace_back();
            continue;
        }
        const auto& cur = *raw[k];
        const double tol = 0.5 * detail::median_spacing(cur);
        std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
        for (std::size_t a = 0; a < prev.size(); ++a)
            for (std::size_t b = 0; b < cur.size(); ++b) pairs.emplace_back(std::abs(prev[a].root - cur[b]), a, b);
        std::sort(pairs.begin(), pairs.end());
        std::vector<int> id(cur.size(), -1);
        std::vector<bool> prev_used(prev.size(), false);
        for (const auto& [d, a, b] : pairs) {
            if (d > tol || prev_used[a] || id[b] >= 0) continue;
            prev_used[a] = true;
            id[b] = prev[a].trace_id;
        }
        std::vector<LocusPoint> step;
        for (std::size_t b = 0; b < cur.size(); ++b) {
            if (id[b] < 0) id[b] = loc.trace_count++;
            step.push_back({loc.params[k], id[b], cur[b]});
        }
        loc.steps.push_back(step);
        prev = std::move(step);
    }
    return loc;
}

inline void write_locus_csv(std::ostream& os, const RootLocus& loc) {
    const auto old = os.precision(17);
    os << "param,trace_id,re,im\n";
    for (const auto& step : loc.steps)
        for (const auto& p : step) os << p.param << ',' << p.trace_id << ',' << p.root.real() << ',' << p.root.imag() << '\n';
    os.precision(old);
}

// --- time-domain simulation ------------------------------------------------------------

/// Initial function on [-tau_max, 0] for the extended state.
struct InitialFunction {
    std::function<Vector(double)> at;

    static InitialFunction constant(Vector value) {
        return {[v = std::move(value)](double) { return v; }};
    }
};

struct Trajectory {
    std::vector<double> times;
    std::vector<Vector> states;
    double norm_log_slope = 0.0;
    bool diverged = false;
};

namespace detail {

/// Least-squares slope of log||x(t)|| over the final third of the samples.
inline double tail_log_slope(const std::vector<double>& t, const std::vector<Vector>& x) {
    const std::size_t n = t.size();
    const std::size_t start = n - std::max<std::size_t>(2, n / 3);
    double st = 0, sy = 0, stt = 0, sty = 0;
    std::size_t m = 0;
    for (std::size_t k = start; k < n; ++k) {
        const double nrm = x[k].norm();
        if (!(nrm > 0.0) || !std::isfinite(nrm)) continue;
        const double y = std::log(nrm);
        st += t[k];
        sy += y;
        stt += t[k] * t[k];
        sty += t[k] * y;
        ++m;
    }
    if (m < 2) return 0.0;
    const double denom = m * stt - st * st;
    return denom == 0.0 ? 0.0 : (m * sty - st * sy) / denom;
}

}  // namespace detail

/// Method of steps with classical RK4 on xi' = E^-1 (M0 xi + sum_j D_j xi(t - tau_j)).
/// Delays must be integer multiples of dt (to 1e-9 relative).
inline Trajectory simulate(const ClosedLoopSystem& cl, const InitialFunction& phi, double horizon, double dt) {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ValidationError("time step must be positive");
    if (!(horizon > cl.max_delay()) || !std::isfinite(horizon)) throw ValidationError("horizon must exceed the largest delay");
    if (!phi.at) throw ValidationError("initial function is empty");

    const auto f = explicit_form(cl);
    const int n = cl.n_ext();
    std::vector<int> lag;
    for (const auto& term : f.terms) {
        const double q = term.tau / dt;
        const double r = std::round(q);
        if (r < 1.0 || std::abs(q - r) > 1e-9 * std::max(1.0, q))
            throw ValidationError("delay " + std::to_string(term.tau) + " is not a multiple of the time step");
        lag.push_back(static_cast<int>(r));
    }
    const int history = lag.empty() ? 0 : *std::max_element(lag.begin(), lag.end());
    const auto steps = static_cast<std::size_t>(std::llround(horizon / dt));

    // buffer index h + k holds xi(k dt) for k >= -h
    std::vector<Vector> buf;
    buf.reserve(history + steps + 1);
    for (int k = -history; k <= 0; ++k) {
        Vector v = phi.at(k * dt);
        if (v.size() != n) throw ValidationError("initial function has the wrong dimension");
        buf.push_back(std::move(v));
    }

    auto delayed = [&](std::size_t k, int j, double frac) -> Vector {
        // xi((k + frac) dt - tau_j), frac in {0, 0.5, 1}
        const long base = static_cast<long>(k) - lag[j] + history;
        if (frac == 0.0) return buf[base];
        if (frac == 1.0) return buf[base + 1];
        return 0.5 * (buf[base] + buf[base + 1]);
    };
    auto rhs = [&](std::size_t k, double frac, const Vector& x) {
        Vector d = f.A0 * x;
        for (std::size_t j = 0; j < f.terms.size(); ++j) d += f.terms[j].D * delayed(k, static_cast<int>(j), frac);
        return d;
    };

    Trajectory tr;
    tr.times.push_back(0.0);
    tr.states.push_back(buf.back());
    for (std::size_t k = 0; k < steps; ++k) {
        const Vector& x = buf.back();
        const Vector k1 = rhs(k, 0.0, x);
        const Vector k2 = rhs(k, 0.5, x + 0.5 * dt * k1);
        const Vector k3 = rhs(k, 0.5, x + 0.5 * dt * k2);
        const Vector k4 = rhs(k, 1.0, x + dt * k3);
        Vector next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        const double nrm = next.norm();
        if (!std::isfinite(nrm) || nrm > 1e150) {
            tr.diverged = true;
            break;
        }
        buf.push_back(next);
        tr.times.push_back((k + 1) * dt);
        tr.states.push_back(std::move(next));
    }
    tr.norm_log_slope = detail::tail_log_slope(tr.times, tr.states);
    return tr;
}

inline void write_trajectory_csv(std::ostream& os, const Trajectory& tr) {
    const auto old = os.precision(17);
    os << "t,norm";
    const auto n = tr.states.empty() ? 0 : tr.states.front().size();
    for (Eigen::Index i = 0; i < n; ++i) os << ",comp_" << i;
    os << '\n';
    for (std::size_t k = 0; k < tr.times.size(); ++k) {
        os << tr.times[k] << ',' << tr.states[k].norm();
        for (Eigen::Index i = 0; i < n; ++i) os << ',' << tr.states[k](i);
        os << '\n';
    }
    os.precision(old);
}

}  // namespace tdpid
