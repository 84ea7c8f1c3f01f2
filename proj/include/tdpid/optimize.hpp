#pragma once

// Joint minimization of the closed-loop spectral abscissa over the PID gains
// and the derivative filter constant T, with T confined to [T_min, T_max]
// through an exact linear penalty:
//
//   rho~ = rho(K, T)                          T in [T_min, T_max]
//        = rho(K, T_min) + alpha (T_min - T)   T < T_min
//        = rho(K, T_max) + alpha (T - T_max)   T > T_max
//
// Local minimizers of rho~ are feasible, so an unconstrained nonsmooth solver
// (BFGS with a weak Wolfe line search, then gradient sampling) suffices.

#include "tdpid/parallel.hpp"
#include "tdpid/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace tdpid {

struct PenaltyConfig {
    double T_min = 1e-3;
    double T_max = 1.0;
    std::optional<double> alpha;  // default chosen by design_filtered_pid: 10 (1 + |rho(init)|)

    void validate() const {
        if (!(T_min > 0.0) || !std::isfinite(T_min)) throw ValidationError("T_min must be positive");
        if (!(T_max >= T_min) || !std::isfinite(T_max)) throw ValidationError("T_max must be >= T_min");
        if (alpha && !(*alpha > 0.0)) throw ValidationError("penalty slope alpha must be positive");
    }
    bool contains(double T) const { return T >= T_min && T <= T_max; }
    double clamp(double T) const { return std::clamp(T, T_min, T_max); }
};

struct ObjectiveValue {
    double value = std::numeric_limits<double>::infinity();
    Vector gradient;
    bool nonsmooth = false;
};

using ObjectiveFunction = std::function<ObjectiveValue(const Vector&)>;

enum class OptimizationStatus { converged, max_iter, nonsmooth_stall, infeasible_start };

inline const char* to_string(OptimizationStatus s) {
    switch (s) {
        case OptimizationStatus::converged: return "converged";
        case OptimizationStatus::max_iter: return "max_iter";
        case OptimizationStatus::nonsmooth_stall: return "nonsmooth_stall";
        case OptimizationStatus::infeasible_start: return "infeasible_start";
    }
    return "unknown";
}

struct HistoryEntry {
    int iteration = 0;
    double objective = 0.0;
};

struct MinimizeOptions {
    int max_iter = 200;
    double grad_tol = 1e-8;
    double c1 = 1e-4;  // sufficient decrease
    double c2 = 0.5;   // weak curvature
    int max_line_search = 40;
    int gs_trigger = 5;  // consecutive line-search failures before gradient sampling
    double gs_shrink = 0.5;
    double gs_min_radius = 1e-6;
    double gs_tol = 1e-6;  // stationarity tolerance on the min-norm sampled gradient
    double step_tol = 1e-12;
    unsigned seed = 0;
};

struct MinimizeResult {
    Vector x;
    double f = std::numeric_limits<double>::infinity();
    Vector gradient;
    int iterations = 0;
    int evaluations = 0;
    double grad_norm = std::numeric_limits<double>::infinity();
    bool sampling_certificate = false;
    OptimizationStatus status = OptimizationStatus::max_iter;
    std::vector<HistoryEntry> history;
};

namespace detail {

/// Euclidean projection onto the probability simplex.
inline Vector project_simplex(const Vector& y) {
    Vector u = y;
    std::sort(u.data(), u.data() + u.size(), std::greater<>());
    double css = 0.0, theta = 0.0;
    for (Eigen::Index i = 0; i < u.size(); ++i) {
        css += u(i);
        const double t = (css - 1.0) / static_cast<double>(i + 1);
        if (u(i) - t > 0.0) theta = t;
    }
    return (y.array() - theta).max(0.0).matrix();
}

}  // namespace detail

/// Minimum-norm element of the convex hull of the columns of G.
inline Vector min_norm_convex_combination(const Matrix& G) {
    const auto k = G.cols();
    if (k == 1) return G.col(0);
    const Matrix Q = G.transpose() * G;
    const double L = std::max(Q.trace(), 1e-300);
    Vector lam = Vector::Constant(k, 1.0 / static_cast<double>(k));
    Vector y = lam;
    double t = 1.0;
    for (int it = 0; it < 5000; ++it) {
        const Vector next = detail::project_simplex(y - (Q * y) / L);
        const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        y = next + ((t - 1.0) / tn) * (next - lam);
        if ((next - lam).lpNorm<Eigen::Infinity>() < 1e-15) {
            lam = next;
            break;
        }
        lam = next;
        t = tn;
    }
    return G * lam;
}

namespace detail {

struct Evaluator {
    const ObjectiveFunction& fun;
    int count = 0;

    ObjectiveValue operator()(const Vector& x) {
        ++count;
        try {
            auto v = fun(x);
            if (!std::isfinite(v.value) || v.gradient.size() != x.size() || !v.gradient.allFinite())
                return {std::numeric_limits<double>::infinity(), Vector::Zero(x.size()), true};
            return v;
        } catch (const ComputationError&) {
            return {std::numeric_limits<double>::infinity(), Vector::Zero(x.size()), true};
        }
    }
};

struct LineSearchResult {
    bool wolfe = false;   // both conditions hold
    bool armijo = false;  // at least sufficient decrease at the returned point
    double t = 0.0;
    ObjectiveValue value;
};

/// Bracketing weak Wolfe line search; robust to nonsmooth objectives.
inline LineSearchResult weak_wolfe(Evaluator& eval, const Vector& x, const ObjectiveValue& at_x, const Vector& d,
                                   const MinimizeOptions& opts) {
    const double slope = at_x.gradient.dot(d);
    double lo = 0.0, hi = std::numeric_limits<double>::infinity(), t = 1.0;
    LineSearchResult best;
    for (int k = 0; k < opts.max_line_search; ++k) {
        auto v = eval(x + t * d);
        const bool armijo = std::isfinite(v.value) && v.value <= at_x.value + opts.c1 * t * slope;
        if (!armijo) {
            hi = t;
        } else {
            if (!best.armijo || v.value < best.value.value) best = {false, true, t, v};
            if (v.gradient.dot(d) < opts.c2 * slope) lo = t;
            else return {true, true, t, v};
        }
        t = std::isinf(hi) ? 2.0 * lo : 0.5 * (lo + hi);
        if (t * d.norm() < opts.step_tol * (1.0 + x.norm())) break;
    }
    return best;
}

}  // namespace detail

/// Local nonsmooth minimization.
///
/// Phases repeat until a stopping test fires: BFGS with a weak Wolfe line search;
/// after gs_trigger consecutive line-search failures, gradient sampling with a
/// geometrically shrinking radius; when sampling cannot make progress, a compass
/// search over the coordinate directions. A compass search that finds no decrease
/// ends the run as converged.
inline MinimizeResult minimize(const ObjectiveFunction& fun, const Vector& x0, const MinimizeOptions& opts = {}) {
    detail::Evaluator eval{fun};
    MinimizeResult res;
    res.x = x0;
    auto cur = eval(x0);
    if (!std::isfinite(cur.value)) throw ComputationError("objective is not finite at the starting point");
    res.history.push_back({0, cur.value});

    const auto dim = x0.size();
    int it = 0;
    bool done = false;
    std::mt19937_64 gen(opts.seed ^ 0x9e3779b97f4a7c15ull);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> uniform;

    auto accept = [&](const Vector& x, const ObjectiveValue& v) {
        res.x = x;
        cur = v;
        res.history.push_back({it, v.value});
    };
    auto finish = [&](OptimizationStatus status, double measure) {
        res.status = status;
        res.grad_norm = measure;
        done = true;
    };

    while (!done && it < opts.max_iter) {
        // BFGS
        Matrix H = Matrix::Identity(dim, dim);
        bool scaled = false;
        int failures = 0;
        for (; it < opts.max_iter; ++it) {
            if (!cur.nonsmooth && cur.gradient.norm() <= opts.grad_tol) {
                finish(OptimizationStatus::converged, cur.gradient.norm());
                break;
            }
            Vector d = -H * cur.gradient;
            if (!(cur.gradient.dot(d) < 0.0)) {
                H.setIdentity();
                d = -cur.gradient;
            }
            const Vector x = res.x;
            const ObjectiveValue before = cur;
            auto ls = detail::weak_wolfe(eval, x, cur, d, opts);
            if (ls.armijo) {
                const Vector s = ls.t * d;
                accept(x + s, ls.value);
                const Vector y = cur.gradient - before.gradient;
                const double sy = s.dot(y);
                if (ls.wolfe && sy > 0.0) {
                    if (!scaled) {
                        H *= sy / y.squaredNorm();
                        scaled = true;
                    }
                    const double r = 1.0 / sy;
                    const Matrix V = Matrix::Identity(dim, dim) - r * s * y.transpose();
                    H = V * H * V.transpose() + r * s * s.transpose();
                    failures = 0;
                } else {
                    H.setIdentity();
                    scaled = false;
                    ++failures;
                }
                if (s.norm() <= opts.step_tol * (1.0 + res.x.norm())) ++failures;
            } else {
                H.setIdentity();
                scaled = false;
                ++failures;
            }
            if (failures >= opts.gs_trigger) {
                ++it;
                break;
            }
        }
        if (done || it >= opts.max_iter) break;

        // gradient sampling
        double radius = 1e-2 * (1.0 + res.x.norm());
        const int samples = static_cast<int>(2 * dim + 1);
        int evaluated = 0, nonfinite = 0;
        double measure = cur.gradient.norm();
        bool exhausted = false;
        for (; it < opts.max_iter; ++it) {
            Matrix G(dim, samples + 1);
            G.col(0) = cur.gradient;
            int cols = 1;
            for (int k = 0; k < samples; ++k) {
                Vector dir(dim);
                for (Eigen::Index i = 0; i < dim; ++i) dir(i) = normal(gen);
                const double r = radius * std::pow(uniform(gen), 1.0 / static_cast<double>(dim));
                auto v = eval(res.x + r * dir.normalized());
                ++evaluated;
                if (std::isfinite(v.value)) G.col(cols++) = v.gradient;
                else ++nonfinite;
            }
            const Vector g = min_norm_convex_combination(G.leftCols(cols));
            measure = g.norm();
            if (measure <= opts.gs_tol) {
                if (radius <= opts.gs_min_radius) {
                    res.sampling_certificate = true;
                    finish(OptimizationStatus::converged, measure);
                    ++it;
                    break;
                }
                radius *= opts.gs_shrink;
                continue;
            }
            bool moved = false;
            const double gg = g.squaredNorm();
            for (double t = 1.0; t * measure > opts.step_tol * (1.0 + res.x.norm()); t *= 0.5) {
                const Vector xn = res.x - t * g;
                auto v = eval(xn);
                ++evaluated;
                if (!std::isfinite(v.value)) ++nonfinite;
                if (std::isfinite(v.value) && v.value <= cur.value - opts.c1 * t * gg) {
                    accept(xn, v);
                    moved = true;
                    break;
                }
            }
            if (!moved) {
                radius *= opts.gs_shrink;
                if (radius < opts.gs_min_radius * opts.gs_shrink) {
                    exhausted = true;
                    ++it;
                    break;
                }
            }
        }
        if (done || !exhausted) break;
        if (2 * nonfinite > evaluated) {
            finish(OptimizationStatus::nonsmooth_stall, measure);
            break;
        }

        // compass search
        bool improved = false;
        for (double scale = 1e-3; scale >= 1e-9 && !improved; scale *= 0.5) {
            for (Eigen::Index i = 0; i < dim && !improved; ++i) {
                for (double sign : {1.0, -1.0}) {
                    Vector xn = res.x;
                    xn(i) += sign * scale * (1.0 + std::abs(xn(i)));
                    auto v = eval(xn);
                    if (std::isfinite(v.value) && v.value < cur.value) {
                        accept(xn, v);
                        improved = true;
                        break;
                    }
                }
            }
        }
        ++it;
        if (!improved) finish(OptimizationStatus::converged, measure);
    }

    if (!done) {
        res.status = OptimizationStatus::max_iter;
        res.grad_norm = cur.gradient.norm();
    }
    res.f = cur.value;
    res.gradient = cur.gradient;
    res.iterations = it;
    res.evaluations = eval.count;
    return res;
}

/// Two-callable form: objective and gradient evaluated separately.
inline MinimizeResult minimize(const std::function<double(const Vector&)>& objective,
                               const std::function<std::pair<Vector, bool>(const Vector&)>& gradient, const Vector& x0,
                               const MinimizeOptions& opts = {}) {
    return minimize(
        [&](const Vector& x) {
            ObjectiveValue v;
            v.value = objective(x);
            auto [g, nonsmooth] = gradient(x);
            v.gradient = std::move(g);
            v.nonsmooth = nonsmooth;
            return v;
        },
        x0, opts);
}

// --- penalized spectral abscissa ---------------------------------------------

/// Penalized abscissa with its gradient over the flattened controller parameters.
inline ObjectiveValue penalized_abscissa_with_gradient(const DelaySystem& sys, const PIDFilterController& ctl,
                                                       const PenaltyConfig& cfg,
                                                       IntegratorStates integrator = IntegratorStates::drop_if_unused,
                                                       const SpectrumOptions& opts = {}) {
    cfg.validate();
    if (!cfg.alpha) throw ValidationError("penalized abscissa needs a penalty slope alpha");
    const double T = ctl.T;
    const double Tc = cfg.clamp(T);
    const auto cl = assemble_closed_loop(sys, with_filter_constant(ctl, Tc), integrator);
    const auto sp = compute_roots(cl, opts);
    if (sp.empty()) throw ComputationError("no characteristic roots found above the search floor");
    const auto ag = abscissa_subgradient(cl, sp);

    ObjectiveValue v;
    v.value = sp.abscissa;
    v.gradient = ag.gradient;
    v.nonsmooth = ag.nonsmooth;
    const int t_index = ParameterLayout::of(sys).t();
    if (T < cfg.T_min) {
        v.value += *cfg.alpha * (cfg.T_min - T);
        v.gradient(t_index) = -*cfg.alpha;
    } else if (T > cfg.T_max) {
        v.value += *cfg.alpha * (T - cfg.T_max);
        v.gradient(t_index) = *cfg.alpha;
    }
    return v;
}

inline double penalized_abscissa(const DelaySystem& sys, const PIDFilterController& ctl, const PenaltyConfig& cfg,
                                 IntegratorStates integrator = IntegratorStates::drop_if_unused,
                                 const SpectrumOptions& opts = {}) {
    cfg.validate();
    if (!cfg.alpha) throw ValidationError("penalized abscissa needs a penalty slope alpha");
    const double T = ctl.T;
    const double rho = spectral_abscissa(assemble_closed_loop(sys, with_filter_constant(ctl, cfg.clamp(T)), integrator), opts);
    if (T < cfg.T_min) return rho + *cfg.alpha * (cfg.T_min - T);
    if (T > cfg.T_max) return rho + *cfg.alpha * (T - cfg.T_max);
    return rho;
}

/// Flattened-vector form (row-major Kp, Ki, Kd, then T).
inline double penalized_abscissa(const DelaySystem& sys, const Vector& params, const PenaltyConfig& cfg,
                                 IntegratorStates integrator = IntegratorStates::drop_if_unused,
                                 const SpectrumOptions& opts = {}) {
    return penalized_abscissa(sys, ParameterLayout::of(sys).unflatten(params), cfg, integrator, opts);
}

// --- filtered PID design -----------------------------------------------------

enum class IntegralAction { automatic, enabled, disabled };

struct DesignOptions {
    SpectrumOptions spectrum;
    MinimizeOptions minimizer;
    IntegralAction integral = IntegralAction::automatic;  // automatic: enabled iff init Ki != 0
    int starts = 1;              // 1 = single start from init; extra starts are Gaussian perturbations
    double perturbation = 0.1;   // relative standard deviation of start perturbations
    unsigned seed = 0;
};

struct OptimizationResult {
    PIDFilterController params;
    double rho = std::numeric_limits<double>::quiet_NaN();  // spectral abscissa at params
    double objective = std::numeric_limits<double>::quiet_NaN();  // penalized abscissa at params
    double initial_rho = std::numeric_limits<double>::quiet_NaN();
    double alpha = 0.0;
    int iterations = 0;
    int evaluations = 0;
    double grad_norm_final = std::numeric_limits<double>::quiet_NaN();
    bool sampling_certificate = false;
    bool projected = false;  // T moved back into the window after the solver stopped
    OptimizationStatus status = OptimizationStatus::max_iter;
    std::vector<HistoryEntry> history;
    Spectrum initial_spectrum;
    std::string diagnostic;
};

namespace detail {

/// Indices of the free parameters in the flattened vector.
inline std::vector<int> free_parameters(const ParameterLayout& layout, bool integral, bool T_free) {
    std::vector<int> idx;
    for (int k = 0; k < layout.gains(); ++k) idx.push_back(k);
    if (integral)
        for (int k = 0; k < layout.gains(); ++k) idx.push_back(layout.gains() + k);
    for (int k = 0; k < layout.gains(); ++k) idx.push_back(2 * layout.gains() + k);
    if (T_free) idx.push_back(layout.t());
    return idx;
}

}  // namespace detail

/// Minimizes the penalized spectral abscissa starting from a strongly stabilizing controller.
/// Returns status infeasible_start (with the initial spectrum) when rho(init) >= 0.
inline OptimizationResult design_filtered_pid(const DelaySystem& sys, const PIDFilterController& init,
                                              const PenaltyConfig& cfg, const DesignOptions& opts = {}) {
    cfg.validate();
    if (!cfg.contains(init.T)) throw ValidationError("initial filter constant lies outside [T_min, T_max]");
    if (opts.starts < 1) throw ValidationError("number of starts must be at least 1");

    const bool integral = opts.integral == IntegralAction::enabled ||
                          (opts.integral == IntegralAction::automatic && init.has_integral_action());
    const auto integrator = integral ? IntegratorStates::keep : IntegratorStates::drop_if_unused;
    const auto layout = ParameterLayout::of(sys);

    OptimizationResult out;
    out.params = init;
    {
        const auto cl = assemble_closed_loop(sys, init, integrator);
        out.initial_spectrum = compute_roots(cl, opts.spectrum);
        if (out.initial_spectrum.empty()) throw ComputationError("no characteristic roots found for the initial controller");
        out.initial_rho = out.initial_spectrum.abscissa;
    }
    out.rho = out.initial_rho;
    if (out.initial_rho >= 0.0) {
        out.status = OptimizationStatus::infeasible_start;
        out.diagnostic = "initial controller does not stabilize the filtered loop (rho = " +
                         std::to_string(out.initial_rho) + ")";
        return out;
    }

    PenaltyConfig pcfg = cfg;
    if (!pcfg.alpha) pcfg.alpha = 10.0 * (1.0 + std::abs(out.initial_rho));
    out.alpha = *pcfg.alpha;

    const Vector full0 = layout.flatten(init);
    const auto free = detail::free_parameters(layout, integral, cfg.T_max > cfg.T_min);
    auto expand = [&](const Vector& x) {
        Vector full = full0;
        for (std::size_t k = 0; k < free.size(); ++k) full(free[k]) = x(static_cast<Eigen::Index>(k));
        return full;
    };
    auto restrict_to_free = [&](const Vector& full) {
        Vector x(static_cast<Eigen::Index>(free.size()));
        for (std::size_t k = 0; k < free.size(); ++k) x(static_cast<Eigen::Index>(k)) = full(free[k]);
        return x;
    };

    ObjectiveFunction objective = [&](const Vector& x) {
        auto v = penalized_abscissa_with_gradient(sys, layout.unflatten(expand(x)), pcfg, integrator, opts.spectrum);
        v.gradient = restrict_to_free(v.gradient);
        return v;
    };

    // starting points: init first, then seeded perturbations that remain stabilizing
    std::vector<Vector> starts{restrict_to_free(full0)};
    std::mt19937_64 gen(opts.seed);
    std::normal_distribution<double> normal;
    for (int k = 1; k < opts.starts; ++k) {
        Vector full = full0;
        for (int idx : free) full(idx) *= 1.0 + opts.perturbation * normal(gen);
        full(layout.t()) = cfg.clamp(full(layout.t()));
        starts.push_back(restrict_to_free(full));
    }

    std::vector<std::optional<MinimizeResult>> runs(starts.size());
    parallel_for(starts.size(), [&](std::size_t k) {
        if (k > 0) {
            try {
                const auto v = objective(starts[k]);
                if (!(v.value < 0.0)) return;
            } catch (const std::exception&) {
                return;
            }
        }
        MinimizeOptions mo = opts.minimizer;
        mo.seed = opts.minimizer.seed + static_cast<unsigned>(k);
        try {
            runs[k] = minimize(objective, starts[k], mo);
        } catch (const ComputationError&) {
        }
    });

    const MinimizeResult* best = nullptr;
    for (const auto& r : runs)
        if (r && (!best || r->f < best->f)) best = &*r;
    if (!best) throw ComputationError("optimizer failed from every starting point");

    Vector full = expand(best->x);
    if (!cfg.contains(full(layout.t()))) {
        full(layout.t()) = cfg.clamp(full(layout.t()));
        out.projected = true;
    }
    out.params = layout.unflatten(full);
    out.objective = penalized_abscissa(sys, out.params, pcfg, integrator, opts.spectrum);
    out.rho = out.objective;  // T is inside the window here
    out.iterations = best->iterations;
    out.evaluations = 0;
    for (const auto& r : runs)
        if (r) out.evaluations += r->evaluations;
    out.grad_norm_final = best->grad_norm;
    out.sampling_certificate = best->sampling_certificate;
    out.status = best->status;
    out.history = best->history;
    return out;
}

// --- iterative T-window refinement ---------------------------------------------

using MarginProbe = std::function<double(const DelaySystem&, const PIDFilterController&)>;

struct WindowResult {
    PenaltyConfig window;
    std::optional<OptimizationResult> result;
    std::optional<double> margin;
    std::string error;
};

/// Runs the design once per T window from the same initial gains (initial T clamped into
/// each window) and probes the delay margin of every result.
inline std::vector<WindowResult> refine_T_window(const DelaySystem& sys, const PIDFilterController& init,
                                                 const std::vector<PenaltyConfig>& windows, const MarginProbe& margin_probe,
                                                 const DesignOptions& opts = {}) {
    if (windows.empty()) throw ValidationError("refine_T_window needs at least one window");
    for (const auto& w : windows) w.validate();

    std::vector<WindowResult> out;
    for (const auto& w : windows) {
        WindowResult wr{w, std::nullopt, std::nullopt, {}};
        try {
            const auto start = with_filter_constant(init, w.clamp(init.T));
            wr.result = design_filtered_pid(sys, start, w, opts);
            if (wr.result->status == OptimizationStatus::infeasible_start) {
                wr.error = wr.result->diagnostic;
            } else if (margin_probe) {
                wr.margin = margin_probe(sys, wr.result->params);
            }
        } catch (const std::exception& e) {
            wr.error = e.what();
        }
        out.push_back(std::move(wr));
    }
    return out;
}

}  // namespace tdpid
