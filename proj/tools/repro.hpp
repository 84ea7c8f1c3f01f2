#pragma once

// Scripted reproductions of the packaged examples. Each target returns a list of
// named checks (expected vs computed with a tolerance).

#include "tdpid/tdpid.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

namespace tdpid::repro {

struct Check {
    std::string name;
    std::string expected;
    std::string computed;
    bool pass = false;
};

struct Context {
    std::filesystem::path data_dir;
    unsigned seed = 0;
};

inline std::string fmt(double v, int digits = 6) {
    std::ostringstream os;
    os.precision(digits);
    os << v;
    return os.str();
}

inline std::string fmt(Complex z, int digits = 6) {
    std::ostringstream os;
    os.precision(digits);
    os << z.real() << (z.imag() < 0 ? " - " : " + ") << std::abs(z.imag()) << "i";
    return os.str();
}

inline Check value_check(std::string name, double expected, double computed, double tol) {
    return {std::move(name), fmt(expected) + " +/- " + fmt(tol, 2), fmt(computed),
            std::isfinite(computed) && std::abs(computed - expected) <= tol};
}

inline Check below_check(std::string name, double bound, double computed) {
    return {std::move(name), "< " + fmt(bound), fmt(computed), computed < bound};
}

inline Complex nearest(const std::vector<Complex>& roots, Complex target) {
    Complex best(std::numeric_limits<double>::quiet_NaN(), 0.0);
    for (const auto& r : roots)
        if (!(std::abs(r - target) >= std::abs(best - target))) best = r;
    return best;
}

inline std::vector<Complex> values(const Spectrum& sp) {
    std::vector<Complex> out;
    for (const auto& r : sp.roots) out.push_back(r.value);
    return out;
}

inline Check root_check(std::string name, Complex expected, const std::vector<Complex>& roots, double tol) {
    const Complex got = nearest(roots, expected);
    return {std::move(name), fmt(expected) + " +/- " + fmt(tol, 2), fmt(got, 10), std::abs(got - expected) <= tol};
}

inline SpectrumOptions floor_at(double floor) {
    SpectrumOptions o;
    o.search_floor = floor;
    return o;
}

/// Positive zero of x - 10 (1 - e^-x) by bisection on [1, 20].
inline double scaled_limit_root() {
    auto f = [](double x) { return x - 10.0 * (1.0 - std::exp(-x)); };
    double lo = 1.0, hi = 20.0;
    for (int i = 0; i < 200 && hi - lo > 1e-15; ++i) {
        const double mid = 0.5 * (lo + hi);
        (f(mid) < 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

/// Characteristic quasi-polynomial of the second-order plant when the derivative is the
/// difference quotient (y(t) - y(t - r)) / r with gain kd (positive feedback).
inline ScalarQuasiPolynomial neutral_difference_pd(double kp, double kd, double r) {
    return {[=](Complex s) {
                const Complex e = std::exp(-r * s);
                return (1.0 + kd * e) * s * s + (4.0 + (kp - kd) * e) * s + (3.0 - kp * e);
            },
            {}};
}

inline std::vector<Check> ex3_1(const Context& ctx) {
    const auto sys = load_system(ctx.data_dir / "ex3_1_plant.json");
    const auto ctl = load_controller(ctx.data_dir / "ex3_1_controller.json", &sys);
    std::vector<Check> out;
    const auto roots = values(compute_roots(ideal_pid_loop(sys, ctl), floor_at(-10.0)));
    const Complex expected(-0.5, std::sqrt(15.0) / 6.0);
    out.push_back(root_check("ideal PD root (-3+i sqrt15)/6", expected, roots, 1e-9));
    out.push_back(root_check("ideal PD root (-3-i sqrt15)/6", std::conj(expected), roots, 1e-9));

    const ScalarQuasiPolynomial quad{[](Complex s) { return 3.0 * s * s + 3.0 * s + 2.0; }, {}};
    const auto scalar = scan_scalar(quad, Rect{-5, 5, -5, 5}, ScanOptions{100, 100});
    out.push_back(root_check("scalar scan agrees with matrix root", roots.empty() ? Complex() : nearest(roots, expected),
                             scalar, 1e-6));

    const auto neutral = scan_scalar(neutral_difference_pd(1.0, 2.0, 0.01), Rect{1, 100, 1, 700}, ScanOptions{200, 200});
    double rightmost = -std::numeric_limits<double>::infinity();
    for (const auto& s : neutral) rightmost = std::max(rightmost, s.real());
    out.push_back({"difference derivative, r=0.01: root with Re > 0", "exists",
                   neutral.empty() ? "none" : "Re = " + fmt(rightmost), !neutral.empty() && rightmost > 0.0});
    return out;
}

inline std::vector<Check> ex3_2(const Context& ctx) {
    const auto sys = load_system(ctx.data_dir / "ex3_2_plant.json");
    const auto ctl = load_controller(ctx.data_dir / "ex3_2_controller.json", &sys);
    std::vector<Check> out;
    const auto roots = values(compute_roots(ideal_pid_loop(sys, ctl), floor_at(-10.0)));
    out.push_back(root_check("ideal PD real root", Complex(-1.53, 0.0), roots, 5e-3));
    out.push_back(root_check("ideal PD pair", Complex(-0.012, 0.269), roots, 1e-3));

    const double oracle = scaled_limit_root();
    const ScalarQuasiPolynomial limit{[](Complex s) { return s - 10.0 * (1.0 - std::exp(-s)); },
                                      [](Complex s) { return 1.0 - 10.0 * std::exp(-s); }};
    const auto scanned = scan_scalar(limit, Rect{0.5, 20, -1, 1}, ScanOptions{80, 8});
    out.push_back(root_check("scaled limit positive zero", Complex(oracle, 0.0), scanned, 1e-6));
    return out;
}

inline std::vector<Check> ex3_3(const Context& ctx) {
    const auto sys = load_system(ctx.data_dir / "ex3_3_plant.json");
    const auto ctl = load_controller(ctx.data_dir / "ex3_3_controller.json", &sys);
    std::vector<Check> out;
    const auto filtered = values(compute_roots(assemble_closed_loop(sys, ctl, IntegratorStates::drop_if_unused), floor_at(-100.0)));
    out.push_back(root_check("filter root", Complex(-47.057, 0.0), filtered, 1e-2));
    const auto ideal = values(compute_roots(ideal_pid_loop(sys, ctl), floor_at(-10.0)));
    const Complex pair(-0.5, 0.5 * std::sqrt(39.0));
    out.push_back(root_check("ideal PD pair -(1+i sqrt39)/2", pair, ideal, 1e-6));
    out.push_back(root_check("ideal PD pair -(1-i sqrt39)/2", std::conj(pair), ideal, 1e-6));
    return out;
}

inline std::vector<Check> motivating(const Context& ctx) {
    const auto sys = load_system(ctx.data_dir / "motivating_plant.json");
    const auto initial = load_controller(ctx.data_dir / "motivating_controller.json", &sys);
    const auto optimized = load_controller(ctx.data_dir / "motivating_optimized.json", &sys);
    const AnalysisOptions a;
    std::vector<Check> out;
    out.push_back(value_check("rho at T=0.1", -0.1475, abscissa_at(sys, initial, a), 5e-3));
    out.push_back(value_check("rho at T=0.174", -0.2435, abscissa_at(sys, optimized, a), 5e-3));
    DesignOptions opts;
    opts.seed = ctx.seed;
    const auto r = design_filtered_pid(sys, initial, PenaltyConfig{1e-3, 1.75, {}}, opts);
    out.push_back(below_check("co-design rho from T=0.1, T in [0.001, 1.75]", -0.24 + 5e-3, r.rho));
    out.push_back({"co-design T inside window", "[0.001, 1.75]", fmt(r.params.T), r.params.T >= 1e-3 && r.params.T <= 1.75});
    return out;
}

inline std::vector<Check> ex6_1(const Context& ctx) {
    const auto sys = load_system(ctx.data_dir / "ex1_plant.json");
    const auto classical = load_controller(ctx.data_dir / "ex1_classical.json", &sys);
    const auto filtered = load_controller(ctx.data_dir / "ex1_filtered.json", &sys);
    std::vector<Check> out;

    const auto open = values(compute_roots(ClosedLoopSystem::from_blocks(Matrix::Identity(3, 3), sys.A0, {}), floor_at(-10.0)));
    out.push_back(root_check("open-loop pole", Complex(-0.7152, 0.0), open, 1e-3));
    out.push_back(root_check("open-loop pole pair", Complex(-0.1423, 1.666), open, 1e-3));

    const auto cl_classical = values(compute_roots(assemble_closed_loop(sys, classical)));
    out.push_back(root_check("classical dominant pair", Complex(-0.3004, 0.0898), cl_classical, 1e-3));
    const auto m_classical = delay_margin(sys, classical, 1.0);
    out.push_back(below_check("classical delay margin", 7e-3, m_classical.value));

    const auto cl_filtered = values(compute_roots(assemble_closed_loop(sys, filtered)));
    out.push_back(root_check("filtered dominant pair", Complex(-0.1011, 1.6262), cl_filtered, 1e-3));
    const auto m_filtered = delay_margin(sys, filtered, 10.0);
    out.push_back(value_check("filtered delay margin", 0.85, m_filtered.value, 0.05));
    return out;
}

inline std::vector<Check> ex6_2(const Context& ctx) {
    const auto sys = load_system(ctx.data_dir / "ex2_plant.json");
    const double rho[3] = {-3.57769, -1.46503, -1.23445};
    const double margin[3] = {0.0275, 0.1422, 0.217};
    std::vector<Check> out;
    for (int k = 0; k < 3; ++k) {
        const auto ctl = load_controller(ctx.data_dir / ("ex2_row" + std::to_string(k + 1) + ".json"), &sys);
        const std::string row = "row " + std::to_string(k + 1);
        out.push_back(value_check(row + " rho", rho[k], abscissa_at(sys, ctl, {}), 1e-2));
        out.push_back(value_check(row + " delay margin", margin[k], delay_margin(sys, ctl, 1.0).value, 5e-3));
    }
    return out;
}

inline const std::map<std::string, std::function<std::vector<Check>(const Context&)>>& targets() {
    static const std::map<std::string, std::function<std::vector<Check>(const Context&)>> t{
        {"ex3-1", ex3_1}, {"ex3-2", ex3_2}, {"ex3-3", ex3_3}, {"motivating", motivating}, {"ex6-1", ex6_1}, {"ex6-2", ex6_2}};
    return t;
}

}  // namespace tdpid::repro
