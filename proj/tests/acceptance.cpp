// Acceptance run: one PASS/FAIL line per criterion, tolerances pinned below.
//
//   acceptance                 all criteria
//   acceptance --criterion N   a single criterion (exit 0 iff it passes)

#include "support.hpp"
#include "../tools/repro.hpp"

#include <chrono>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

using namespace tdpid;
using namespace tdpid::testing;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = true;
    std::vector<std::string> details;

    void check(bool ok, const std::string& what) {
        pass = pass && ok;
        details.push_back(std::string(ok ? "ok    " : "FAIL  ") + what);
    }
};

std::string num(double v, int digits = 6) { return repro::fmt(v, digits); }
std::string num(Complex z, int digits = 6) { return repro::fmt(z, digits); }

void root_near(Outcome& o, const std::string& what, const std::vector<Complex>& roots, Complex expected, double tol) {
    const Complex got = repro::nearest(roots, expected);
    o.check(std::abs(got - expected) <= tol, what + ": " + num(got, 10) + " vs " + num(expected, 10) + " (tol " + num(tol, 2) + ")");
}

std::vector<Complex> values(const Spectrum& sp) { return repro::values(sp); }

double bisection_oracle() {
    auto f = [](double x) { return x - 10.0 * (1.0 - std::exp(-x)); };
    double lo = 1.0, hi = 20.0;
    while (hi - lo > 1e-14) {
        const double mid = 0.5 * (lo + hi);
        (f(mid) < 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

// --- criteria ------------------------------------------------------------------------

Outcome criterion1() {
    Outcome o;
    const auto t0 = Clock::now();
    const auto roots = values(compute_roots(ideal_pid_loop(plant_ex3_1(), siso(1, 0, 2, 1)), floor_at(-10.0)));
    const double elapsed = seconds_since(t0);
    const Complex r(-0.5, std::sqrt(15.0) / 6.0);
    root_near(o, "root (-3+i sqrt15)/6", roots, r, 1e-9);
    root_near(o, "root (-3-i sqrt15)/6", roots, std::conj(r), 1e-9);
    o.check(elapsed < 1.0, "runtime " + num(elapsed, 3) + " s < 1 s");
    return o;
}

Outcome criterion2() {
    Outcome o;
    const auto t0 = Clock::now();
    const auto roots = scan_scalar(repro::neutral_difference_pd(1.0, 2.0, 0.01), Rect{1, 100, 1, 700}, ScanOptions{200, 200});
    const double elapsed = seconds_since(t0);
    double best = -1e300;
    for (const auto& s : roots) best = std::max(best, s.real());
    o.check(!roots.empty() && best > 0.0, "root with Re > 0 found: max Re = " + num(best));
    o.check(elapsed < 5.0, "runtime " + num(elapsed, 3) + " s < 5 s");
    return o;
}

Outcome criterion3() {
    Outcome o;
    const double oracle = bisection_oracle();
    const ScalarQuasiPolynomial f{[](Complex s) { return s - 10.0 * (1.0 - std::exp(-s)); }, {}};
    const auto roots = scan_scalar(f, Rect{0.01, 20, -1, 1}, 0.05);
    o.check(roots.size() == 1, "exactly one zero in [0.01, 20] x [-1, 1]");
    if (!roots.empty()) root_near(o, "scan vs bisection oracle " + num(oracle, 12), roots, oracle, 1e-6);
    return o;
}

Outcome criterion4() {
    Outcome o;
    const auto filtered = values(compute_roots(
        assemble_closed_loop(plant_ex3_3(), siso(2, 0, 0.5, 0.01), IntegratorStates::drop_if_unused), floor_at(-100.0)));
    root_near(o, "filter root", filtered, Complex(-47.057, 0.0), 1e-2);
    const auto ideal = values(compute_roots(ideal_pid_loop(plant_ex3_3(), siso(2, 0, 0.5, 1)), floor_at(-10.0)));
    const Complex pair(-0.5, 0.5 * std::sqrt(39.0));
    root_near(o, "ideal-derivative pair", ideal, pair, 1e-6);
    root_near(o, "ideal-derivative pair (conjugate)", ideal, std::conj(pair), 1e-6);
    return o;
}

Outcome criterion5() {
    Outcome o;
    const auto t0 = Clock::now();
    const auto sys = plant_motivating();
    const auto init = siso(-1.08015, 0, -1.04045, 0.1);
    const double r1 = spectral_abscissa(assemble_closed_loop(sys, init, IntegratorStates::drop_if_unused));
    const double r2 =
        spectral_abscissa(assemble_closed_loop(sys, siso(-1.0979, 0, -1.2259, 0.1740), IntegratorStates::drop_if_unused));
    o.check(std::abs(r1 + 0.1475) <= 5e-3, "rho at T=0.1: " + num(r1) + " vs -0.1475 (tol 5e-3)");
    o.check(std::abs(r2 + 0.2435) <= 5e-3, "rho at T=0.174: " + num(r2) + " vs -0.2435 (tol 5e-3)");
    const auto res = design_filtered_pid(sys, init, PenaltyConfig{1e-3, 1.75, {}});
    o.check(res.rho <= -0.24 + 5e-3, "co-design rho " + num(res.rho) + " <= -0.235 (status " + to_string(res.status) +
                                         ", T " + num(res.params.T) + ", kp " + num(res.params.Kp(0, 0)) + ", kd " +
                                         num(res.params.Kd(0, 0)) + ")");
    const double elapsed = seconds_since(t0);
    o.check(elapsed < 60.0, "runtime " + num(elapsed, 3) + " s < 60 s");
    return o;
}

Outcome criterion6() {
    Outcome o;
    const auto sys = plant_ex6_1();
    const auto open = values(compute_roots(ClosedLoopSystem::from_blocks(Matrix::Identity(3, 3), sys.A0, {}), floor_at(-10.0)));
    root_near(o, "open-loop pole", open, Complex(-0.7152, 0.0), 1e-3);
    root_near(o, "open-loop pole pair", open, Complex(-0.1423, 1.666), 1e-3);
    root_near(o, "classical dominant pair", values(compute_roots(assemble_closed_loop(sys, ex6_1_classical))),
              Complex(-0.3004, 0.0898), 1e-3);
    const auto mc = delay_margin(sys, ex6_1_classical, 1.0);
    o.check(mc.crossing_found && mc.value < 7e-3, "classical delay margin " + num(mc.value) + " < 7e-3");
    root_near(o, "filtered dominant pair", values(compute_roots(assemble_closed_loop(sys, ex6_1_filtered))),
              Complex(-0.1011, 1.6262), 1e-3);
    const auto mf = delay_margin(sys, ex6_1_filtered, 10.0);
    o.check(mf.crossing_found && std::abs(mf.value - 0.85) <= 0.05,
            "filtered delay margin " + num(mf.value) + " vs 0.85 (tol 0.05)");
    return o;
}

Outcome criterion7() {
    Outcome o;
    const auto t0 = Clock::now();
    const auto sys = plant_ex6_2();
    for (int k = 0; k < 3; ++k) {
        const auto ctl = table1_controller(table1[k]);
        const double r = spectral_abscissa(assemble_closed_loop(sys, ctl, IntegratorStates::drop_if_unused));
        const double m = delay_margin(sys, ctl, 1.0).value;
        const std::string row = "row " + std::to_string(k + 1);
        o.check(std::abs(r - table1[k].rho) <= 1e-2, row + " rho " + num(r) + " vs " + num(table1[k].rho) + " (tol 1e-2)");
        o.check(std::abs(m - table1[k].margin) <= 5e-3, row + " margin " + num(m) + " vs " + num(table1[k].margin) + " (tol 5e-3)");
    }
    const double elapsed = seconds_since(t0);
    o.check(elapsed < 120.0, "runtime " + num(elapsed, 3) + " s < 120 s");
    return o;
}

// --- property suite --------------------------------------------------------------------

bool conjugate_closed(const Spectrum& sp) {
    for (const auto& r : sp.roots) {
        if (r.value.imag() == 0.0) continue;
        bool found = false;
        for (const auto& q : sp.roots)
            found = found || std::abs(q.value - std::conj(r.value)) <= 1e-10 * std::max(1.0, std::abs(r.value));
        if (!found) return false;
    }
    return true;
}

double worst_residual(const ClosedLoopSystem& cl, const Spectrum& sp) {
    double worst = 0.0;
    for (const auto& r : sp.roots) {
        const CMatrix M = cl.char_matrix(r.value);
        Eigen::JacobiSVD<CMatrix> svd(M);
        worst = std::max(worst, svd.singularValues().minCoeff() / M.norm());
    }
    return worst;
}

double scalar_disagreement(const ClosedLoopSystem& cl, const Rect& rect, int grid) {
    const auto sp = compute_roots(cl, floor_at(rect.re_lo));
    const auto scalar = scan_scalar(determinant_function(cl), rect, ScanOptions{grid, grid});
    const double pad = 1e-3 * std::max(rect.width(), rect.height());
    const Rect inner{rect.re_lo + pad, rect.re_hi - pad, rect.im_lo + pad, rect.im_hi - pad};
    double worst = 0.0;
    std::size_t seen = 0;
    for (const auto& r : sp.roots)
        if (inner.contains(r.value)) {
            ++seen;
            worst = std::max(worst, scalar.empty() ? 1e300 : std::abs(nearest(scalar, r.value) - r.value));
        }
    for (const auto& s : scalar)
        if (inner.contains(s)) worst = std::max(worst, std::abs(nearest(sp, s) - s));
    return seen == 0 ? 1e300 : worst;
}

Outcome criterion8() {
    Outcome o;
    {  // (a), (b)
        std::mt19937 rng(101);
        bool closed = true;
        double worst = 0.0;
        for (int k = 0; k < 50; ++k) {
            const auto cl = assemble_closed_loop(random_system(rng), random_controller(rng));
            const auto sp = compute_roots(cl, floor_at(-10.0));
            closed = closed && conjugate_closed(sp);
            worst = std::max(worst, worst_residual(cl, sp));
        }
        o.check(closed, "(a) conjugate closure on 50 random systems");
        o.check(worst <= 1e-8, "(b) max sigma_min / ||M|| over reported roots " + num(worst, 3) + " <= 1e-8");
    }
    {  // (c)
        std::mt19937 rng(2024);
        int checked = 0;
        double worst = 0.0;
        for (int attempt = 0; checked < 20 && attempt < 400; ++attempt) {
            const auto sys = random_system(rng);
            const auto ctl = random_controller(rng);
            const auto cl = assemble_closed_loop(sys, ctl);
            const auto sp = compute_roots(cl);
            if (sp.abscissa >= 0.0) continue;
            const auto ag = abscissa_subgradient(cl, sp);
            if (ag.nonsmooth) continue;
            bool gap = true;
            for (const auto& r : sp.roots) {
                const bool same = std::abs(r.value - ag.active_root) < 1e-9 || std::abs(r.value - std::conj(ag.active_root)) < 1e-9;
                if (!same && r.value.real() > sp.abscissa - 1e-3) gap = false;
            }
            if (!gap) continue;
            const Vector fd = finite_difference_abscissa_gradient(sys, ctl, IntegratorStates::keep);
            for (Eigen::Index i = 0; i < fd.size(); ++i)
                worst = std::max(worst, std::abs(ag.gradient(i) - fd(i)) / std::max(std::abs(fd(i)), 1e-3));
            ++checked;
        }
        o.check(checked == 20 && worst < 1e-5,
                "(c) gradient vs central differences on " + std::to_string(checked) + " stable loops: max rel err " + num(worst, 3));
    }
    {  // (d)
        std::mt19937 rng(202);
        double worst = 0.0;
        for (int k = 0; k < 20; ++k) {
            const auto sys = with_input_delay(random_system(rng, false), 0.0);
            const auto cl = assemble_closed_loop(sys, random_controller(rng));
            const Eigen::VectorXcd dense = Matrix(cl.E().partialPivLu().solve(cl.M0())).eigenvalues();
            const auto sp = compute_roots(cl, floor_at(-100.0));
            for (Eigen::Index i = 0; i < dense.size(); ++i)
                if (dense(i).real() >= -99.0)
                    worst = std::max(worst, std::abs(nearest(sp, dense(i)) - dense(i)) / std::max(1.0, std::abs(dense(i))));
        }
        o.check(worst <= 1e-9, "(d) delay-free spectra vs dense eigenvalues: " + num(worst, 3) + " <= 1e-9");
    }
    {  // (e)
        double worst = 0.0;
        worst = std::max(worst, scalar_disagreement(ideal_pid_loop(plant_ex3_1(), siso(1, 0, 2, 1)), Rect{-3, 1, -2, 2}, 200));
        worst = std::max(worst, scalar_disagreement(ideal_pid_loop(plant_ex3_2(), neg(3, 0, 2, 1)), Rect{-3, 1, -2, 2}, 200));
        worst = std::max(worst, scalar_disagreement(ideal_pid_loop(plant_ex3_3(), siso(2, 0, 0.5, 1)), Rect{-3, 1, -5, 5}, 200));
        worst = std::max(worst, scalar_disagreement(assemble_closed_loop(plant_ex3_3(), siso(2, 0, 0.5, 0.01),
                                                                         IntegratorStates::drop_if_unused),
                                                    Rect{-60, 1, -5, 5}, 300));
        worst = std::max(worst, scalar_disagreement(assemble_closed_loop(plant_motivating(), siso(-1.08015, 0, -1.04045, 0.1),
                                                                         IntegratorStates::drop_if_unused),
                                                    Rect{-4, 0.5, -20, 20}, 300));
        worst = std::max(worst, scalar_disagreement(assemble_closed_loop(plant_ex6_1(), ex6_1_classical), Rect{-3, 1, -3, 3}, 200));
        worst = std::max(worst, scalar_disagreement(assemble_closed_loop(plant_ex6_1(), ex6_1_filtered), Rect{-3, 1, -3, 3}, 200));
        for (const auto& row : table1)
            worst = std::max(worst, scalar_disagreement(assemble_closed_loop(plant_ex6_2(), table1_controller(row),
                                                                             IntegratorStates::drop_if_unused),
                                                        Rect{-20, 1, -10, 10}, 200));
        o.check(worst <= 1e-6, "(e) matrix vs scalar roots on SISO examples: " + num(worst, 3) + " <= 1e-6");
    }
    {  // (f)
        std::mt19937 rng(31337);
        int checked = 0, agree = 0;
        for (int attempt = 0; checked < 20 && attempt < 500; ++attempt) {
            auto sys = random_system(rng);
            sys.tau0 = std::round(sys.tau0 * 100.0) / 100.0;
            for (auto& t : sys.state_terms) t.tau = std::round(t.tau * 100.0) / 100.0;
            const auto cl = assemble_closed_loop(sys, random_controller(rng));
            const double r = spectral_abscissa(cl);
            if (std::abs(r) <= 0.05) continue;
            const double horizon = std::min(300.0, std::max(30.0, 12.0 / std::abs(r)));
            const auto tr = simulate(cl, InitialFunction::constant(Vector::Ones(cl.n_ext())), horizon, 1e-2);
            if ((tr.norm_log_slope > 0.0) == (r > 0.0)) ++agree;
            ++checked;
        }
        o.check(checked == 20 && agree == 20, "(f) simulator slope sign matches rho: " + std::to_string(agree) + "/" + std::to_string(checked));
    }
    {  // (g)
        bool inside = true;
        int runs = 0;
        DesignOptions opts;
        opts.minimizer.max_iter = 30;
        for (const auto& w : {PenaltyConfig{0.001, 0.06, {}}, PenaltyConfig{0.02, 0.04, {}}, PenaltyConfig{0.06, 0.1, {}}}) {
            const auto r = design_filtered_pid(plant_ex6_2(), neg(-1.0, 0.0, -5.0 / 6.0, w.clamp(0.01)), w, opts);
            if (r.status == OptimizationStatus::infeasible_start) continue;
            ++runs;
            inside = inside && w.contains(r.params.T);
        }
        std::mt19937 rng(77);
        for (int k = 0; k < 4; ++k) {
            const auto sys = with_input_delay(random_system(rng, false), 0.0);
            auto ctl = random_controller(rng, false);
            ctl.T = 0.1;
            const PenaltyConfig w{0.05, 0.2, {}};
            const auto r = design_filtered_pid(sys, ctl, w, opts);
            if (r.status == OptimizationStatus::infeasible_start) continue;
            ++runs;
            inside = inside && w.contains(r.params.T);
        }
        o.check(inside && runs > 0, "(g) T inside [T_min, T_max] for all " + std::to_string(runs) + " optimizations");
    }
    {  // (h)
        const auto sys = plant_motivating();
        const PenaltyConfig cfg{0.05, 0.5, 3.0};
        const auto base = siso(-1.08015, 0, -1.04045, 0.1);
        double inside = 0.0, jump = 0.0;
        for (double T : {0.05, 0.1, 0.3, 0.5}) {
            const auto ctl = with_filter_constant(base, T);
            inside = std::max(inside, std::abs(penalized_abscissa(sys, ctl, cfg) -
                                               spectral_abscissa(assemble_closed_loop(sys, ctl, IntegratorStates::drop_if_unused))));
        }
        for (double edge : {cfg.T_min, cfg.T_max}) {
            const double at = penalized_abscissa(sys, with_filter_constant(base, edge), cfg);
            for (double h : {1e-4, 1e-6}) {
                jump = std::max(jump, std::abs(penalized_abscissa(sys, with_filter_constant(base, edge - h), cfg) - at) / h);
                jump = std::max(jump, std::abs(penalized_abscissa(sys, with_filter_constant(base, edge + h), cfg) - at) / h);
            }
        }
        o.check(inside == 0.0, "(h) penalized objective equals rho inside the window");
        o.check(jump < 10.0, "(h) continuity at both endpoints: max |df|/h " + num(jump, 3));
    }
    return o;
}

Outcome criterion9() {
    Outcome o;
    const auto t0 = Clock::now();
    const repro::Context ctx{TDPID_DATA_DIR, 0};
    int failed = 0, total = 0;
    for (const auto& [name, run] : repro::targets()) {
        const auto t = Clock::now();
        const auto checks = run(ctx);
        int bad = 0;
        for (const auto& c : checks) bad += c.pass ? 0 : 1;
        failed += bad;
        total += static_cast<int>(checks.size());
        o.details.push_back("info  repro " + name + ": " + std::to_string(checks.size() - bad) + "/" + std::to_string(checks.size()) +
                            " checks pass, " + num(seconds_since(t), 3) + " s");
    }
    const auto t_props = Clock::now();
    const auto props = criterion8();
    o.details.push_back("info  property suite: " + std::string(props.pass ? "pass" : "FAIL") + ", " + num(seconds_since(t_props), 3) + " s");
    const double elapsed = seconds_since(t0);
    o.details.push_back("info  " + std::to_string(total - failed) + "/" + std::to_string(total) + " repro checks pass");
    o.check(elapsed < 600.0, "repro all + property suite in " + num(elapsed, 4) + " s < 600 s");
    return o;
}

const std::vector<std::pair<std::string, std::function<Outcome()>>>& criteria() {
    static const std::vector<std::pair<std::string, std::function<Outcome()>>> c{
        {"closed-form roots of the ideal PD loop", criterion1},
        {"unstable chain of the difference-derivative loop", criterion2},
        {"scaled-limit root", criterion3},
        {"filter root and ideal-derivative pair", criterion4},
        {"motivating example abscissae and co-design", criterion5},
        {"classical vs co-designed PID on the third-order plant", criterion6},
        {"filter-window table: abscissae and delay margins", criterion7},
        {"property suite", criterion8},
        {"full acceptance run time", criterion9},
    };
    return c;
}

}  // namespace

int main(int argc, char** argv) {
    int only = 0;
    if (argc == 3 && std::string(argv[1]) == "--criterion") only = std::atoi(argv[2]);
    else if (argc != 1) {
        std::cerr << "usage: acceptance [--criterion N]\n";
        return 2;
    }
    const auto& all = criteria();
    if (only < 0 || only > static_cast<int>(all.size())) {
        std::cerr << "unknown criterion " << only << '\n';
        return 2;
    }
    int failures = 0;
    for (std::size_t k = 0; k < all.size(); ++k) {
        if (only != 0 && static_cast<int>(k + 1) != only) continue;
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = all[k].second();
        } catch (const std::exception& e) {
            o.check(false, std::string("exception: ") + e.what());
        }
        std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << "criterion " << k + 1 << ": " << all[k].first << " ("
                  << num(seconds_since(t0), 3) << " s)\n";
        for (const auto& d : o.details) std::cout << "         " << d << '\n';
        std::cout.flush();
        failures += o.pass ? 0 : 1;
    }
    return failures == 0 ? 0 : 1;
}
