// tdpid: command-line front end for the filtered PID co-design library.
//
// Exit codes: 0 success, 1 check failure, 2 usage or validation error, 3 numerical failure.

#include "repro.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>

using namespace tdpid;

namespace {

#ifndef TDPID_DATA_DIR
#define TDPID_DATA_DIR "data"
#endif

struct Globals {
    unsigned seed = 0;
    std::string out;
    bool quiet = false;
    bool json = false;
    std::string data_dir = TDPID_DATA_DIR;
};

struct SpectrumFlags {
    std::optional<double> floor;
    int degree = 30;
    double tol = 1e-10;

    SpectrumOptions options() const {
        SpectrumOptions o;
        o.search_floor = floor;
        o.degree = degree;
        o.tol = tol;
        return o;
    }
};

struct Inputs {
    std::string system;
    std::string controller;
};

class Output {
public:
    explicit Output(const std::string& path) {
        if (!path.empty()) {
            file_ = std::make_unique<std::ofstream>(path);
            if (!*file_) throw ValidationError("cannot write " + path);
        }
    }
    std::ostream& stream() { return file_ ? *file_ : std::cout; }

private:
    std::unique_ptr<std::ofstream> file_;
};

void add_inputs(CLI::App* cmd, Inputs& in, bool controller_required) {
    cmd->add_option("--system", in.system, "plant JSON")->required();
    auto* c = cmd->add_option("--controller", in.controller, "controller JSON");
    if (controller_required) c->required();
}

void add_spectrum_flags(CLI::App* cmd, SpectrumFlags& f) {
    cmd->add_option("--floor", f.floor, "search floor (real part)");
    cmd->add_option("--degree", f.degree, "initial collocation degree")->check(CLI::Range(4, 400));
    cmd->add_option("--tol", f.tol, "Newton tolerance")->check(CLI::PositiveNumber);
}

IntegratorStates integrator_for(const PIDFilterController& ctl) {
    return ctl.has_integral_action() ? IntegratorStates::keep : IntegratorStates::drop_if_unused;
}

ClosedLoopSystem loop_from(const Inputs& in, DelaySystem& sys, std::optional<PIDFilterController>& ctl) {
    sys = load_system(in.system);
    if (in.controller.empty()) {
        std::vector<DelayedBlock> blocks;
        for (const auto& t : sys.state_terms) blocks.push_back({t.tau, t.A});
        return ClosedLoopSystem::from_blocks(Matrix::Identity(sys.n(), sys.n()), sys.A0, std::move(blocks));
    }
    ctl = load_controller(in.controller, &sys);
    return assemble_closed_loop(sys, *ctl, integrator_for(*ctl));
}

void print_checks(const std::string& target, const std::vector<repro::Check>& checks, const Globals& g, Json* json) {
    if (json) {
        Json arr = Json::array();
        for (const auto& c : checks)
            arr.push_back({{"check", c.name}, {"expected", c.expected}, {"computed", c.computed}, {"pass", c.pass}});
        (*json)[target] = arr;
        return;
    }
    if (g.quiet) {
        for (const auto& c : checks)
            if (!c.pass) std::cout << target << ": FAIL " << c.name << '\n';
        return;
    }
    std::cout << "== " << target << '\n';
    for (const auto& c : checks)
        std::cout << (c.pass ? "  PASS  " : "  FAIL  ") << c.name << "\n        expected " << c.expected << ", computed "
                  << c.computed << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spectral-abscissa co-design of filtered PID controllers for time-delay systems"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--seed", g.seed, "random seed for multi-start designs");
    app.add_option("--out", g.out, "write the primary output to this file");
    app.add_flag("--quiet", g.quiet, "suppress human-readable summaries");
    app.add_flag("--json", g.json, "machine-readable JSON summaries");
    app.add_option("--data-dir", g.data_dir, "directory with the packaged example data");

    Inputs in;
    SpectrumFlags sf;

    auto* roots = app.add_subcommand("roots", "rightmost characteristic roots as CSV");
    add_inputs(roots, in, false);
    add_spectrum_flags(roots, sf);

    auto* abscissa = app.add_subcommand("abscissa", "spectral abscissa of the closed loop");
    add_inputs(abscissa, in, false);
    add_spectrum_flags(abscissa, sf);

    auto* optimize = app.add_subcommand("optimize", "co-design gains and filter constant");
    add_inputs(optimize, in, true);
    add_spectrum_flags(optimize, sf);
    double tmin = 1e-3, tmax = 1.0;
    std::optional<double> alpha;
    int starts = 1, max_iter = 200;
    double grad_tol = 1e-8;
    bool check_grad = false;
    std::string history, integral = "auto";
    optimize->add_option("--tmin", tmin, "lower end of the filter-constant window")->check(CLI::PositiveNumber);
    optimize->add_option("--tmax", tmax, "upper end of the filter-constant window")->check(CLI::PositiveNumber);
    optimize->add_option("--alpha", alpha, "penalty slope outside the window")->check(CLI::PositiveNumber);
    optimize->add_option("--starts", starts, "number of starting points")->check(CLI::Range(1, 1000));
    optimize->add_option("--max-iter", max_iter, "iteration budget")->check(CLI::Range(1, 100000));
    optimize->add_option("--grad-tol", grad_tol, "gradient-norm stopping tolerance")->check(CLI::PositiveNumber);
    optimize->add_flag("--check-grad", check_grad, "compare the analytic gradient with finite differences");
    optimize->add_option("--history", history, "write the objective history CSV here");
    optimize->add_option("--integral", integral, "integral action")->check(CLI::IsMember({"auto", "on", "off"}));

    auto* margin = app.add_subcommand("margin", "input-delay margin of the filtered loop");
    add_inputs(margin, in, true);
    add_spectrum_flags(margin, sf);
    double tau_hi = 1.0;
    int sweep = 50;
    margin->add_option("--tau-hi", tau_hi, "upper end of the delay search")->check(CLI::PositiveNumber);
    margin->add_option("--points", sweep, "coarse sweep points")->check(CLI::Range(1, 100000));

    auto* region = app.add_subcommand("region", "stability chart in the (T, tau0) plane as CSV");
    add_inputs(region, in, true);
    add_spectrum_flags(region, sf);
    std::vector<double> t_range{0.01, 1.0, 80}, tau_range{0.0, 1.0, 80};
    std::string boundary;
    region->add_option("--t-range", t_range, "T lo hi count")->expected(3);
    region->add_option("--tau-range", tau_range, "tau0 lo hi count")->expected(3);
    region->add_option("--boundary", boundary, "write boundary polylines as CSV here");

    auto* locus = app.add_subcommand("locus", "rightmost roots along a parameter sweep as CSV");
    add_inputs(locus, in, true);
    add_spectrum_flags(locus, sf);
    std::string param = "tau0";
    std::vector<double> range{0.0, 1.0, 50};
    int k = 8;
    locus->add_option("--param", param, "swept parameter")->check(CLI::IsMember({"tau0", "T"}));
    locus->add_option("--range", range, "lo hi count")->expected(3);
    locus->add_option("--k", k, "roots per step")->check(CLI::Range(1, 1000));

    auto* simulate_cmd = app.add_subcommand("simulate", "time-domain response from a constant initial function");
    add_inputs(simulate_cmd, in, true);
    double horizon = 20.0, dt = 1e-3, phi = 1.0;
    simulate_cmd->add_option("--horizon", horizon, "final time")->check(CLI::PositiveNumber);
    simulate_cmd->add_option("--dt", dt, "step (must divide every delay)")->check(CLI::PositiveNumber);
    simulate_cmd->add_option("--phi", phi, "value of every state component on the initial interval");

    auto* repro_cmd = app.add_subcommand("repro", "reproduce a packaged example and check its quoted numbers");
    std::vector<std::string> names;
    repro_cmd->add_option("name", names, "target name or 'all'")->required();

    auto* validate = app.add_subcommand("validate", "check plant and controller files");
    add_inputs(validate, in, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    std::cout.precision(g.json ? 17 : 6);
    try {
        DelaySystem sys;
        std::optional<PIDFilterController> ctl;

        if (*roots) {
            const auto cl = loop_from(in, sys, ctl);
            const auto sp = compute_roots(cl, sf.options());
            Output out(g.out);
            write_spectrum_csv(out.stream(), sp);
            if (!g.quiet && !g.out.empty())
                std::cerr << sp.roots.size() << " roots, abscissa " << sp.abscissa << ", degree " << sp.discretization_degree
                          << '\n';
            return 0;
        }

        if (*abscissa) {
            const auto cl = loop_from(in, sys, ctl);
            const double rho = spectral_abscissa(cl, sf.options());
            if (g.json) std::cout << Json{{"rho", rho}, {"stable", rho < 0.0}}.dump() << '\n';
            else std::cout << rho << '\n';
            return 0;
        }

        if (*optimize) {
            sys = load_system(in.system);
            const auto init = load_controller(in.controller, &sys);
            PenaltyConfig cfg{tmin, tmax, alpha};
            DesignOptions opts;
            opts.spectrum = sf.options();
            opts.minimizer.max_iter = max_iter;
            opts.minimizer.grad_tol = grad_tol;
            opts.starts = starts;
            opts.seed = g.seed;
            opts.integral = integral == "on" ? IntegralAction::enabled
                          : integral == "off" ? IntegralAction::disabled
                                              : IntegralAction::automatic;
            const auto r = design_filtered_pid(sys, init, cfg, opts);
            Json j = result_to_json(r);
            int code = 0;
            if (check_grad && r.status != OptimizationStatus::infeasible_start) {
                const auto integ = opts.integral == IntegralAction::enabled ||
                                           (opts.integral == IntegralAction::automatic && init.has_integral_action())
                                       ? IntegratorStates::keep
                                       : IntegratorStates::drop_if_unused;
                const auto cl = assemble_closed_loop(sys, r.params, integ);
                const auto sp = compute_roots(cl, opts.spectrum);
                const auto ag = abscissa_subgradient(cl, sp);
                const Vector fd = finite_difference_abscissa_gradient(sys, r.params, integ, opts.spectrum);
                double worst = 0.0;
                for (Eigen::Index i = 0; i < fd.size(); ++i)
                    worst = std::max(worst, std::abs(ag.gradient(i) - fd(i)) / std::max(std::abs(fd(i)), 1e-3));
                j["gradient_check"] = {{"max_relative_error", worst}, {"nonsmooth", ag.nonsmooth}};
                if (!g.quiet) std::cerr << "gradient check: max relative error " << worst << (ag.nonsmooth ? " (nonsmooth point)" : "") << '\n';
                if (!ag.nonsmooth && worst > 1e-5) code = 1;
            }
            if (!history.empty()) {
                Output h(history);
                write_history_csv(h.stream(), r.history);
            }
            Output out(g.out);
            out.stream() << j.dump(2) << '\n';
            if (!g.quiet && !g.out.empty())
                std::cerr << to_string(r.status) << ": rho " << r.rho << " at T " << r.params.T << '\n';
            if (r.status == OptimizationStatus::infeasible_start) {
                std::cerr << "initial controller does not stabilize the loop (rho " << r.initial_rho << ")\n";
                return 3;
            }
            return code;
        }

        if (*margin) {
            sys = load_system(in.system);
            const auto c = load_controller(in.controller, &sys);
            MarginOptions mo;
            mo.spectrum = sf.options();
            mo.sweep_points = sweep;
            mo.integrator = integrator_for(c);
            const auto m = delay_margin(sys, c, tau_hi, mo);
            if (g.json) std::cout << Json{{"margin", m.value}, {"crossing_found", m.crossing_found}}.dump() << '\n';
            else std::cout << m.value << (m.crossing_found ? "" : " (no crossing found up to tau-hi)") << '\n';
            return 0;
        }

        if (*region) {
            sys = load_system(in.system);
            const auto c = load_controller(in.controller, &sys);
            AnalysisOptions ao;
            ao.spectrum = sf.options();
            ao.integrator = integrator_for(c);
            const AxisRange tr{t_range[0], t_range[1], static_cast<int>(t_range[2])};
            const AxisRange ur{tau_range[0], tau_range[1], static_cast<int>(tau_range[2])};
            const auto reg = stability_region(sys, c.Kp, c.Ki, c.Kd, tr, ur, ao);
            Output out(g.out);
            write_region_csv(out.stream(), reg);
            if (!boundary.empty()) {
                Output b(boundary);
                b.stream().precision(17);
                b.stream() << "polyline,T,tau0\n";
                for (std::size_t l = 0; l < reg.boundary.size(); ++l)
                    for (const auto& p : reg.boundary[l]) b.stream() << l << ',' << p.T << ',' << p.tau0 << '\n';
            }
            return 0;
        }

        if (*locus) {
            sys = load_system(in.system);
            const auto c = load_controller(in.controller, &sys);
            LocusOptions lo;
            lo.spectrum = sf.options();
            lo.integrator = integrator_for(c);
            lo.rightmost = k;
            const auto loc = root_locus(sys, c, param == "T" ? SweepParameter::T : SweepParameter::tau0,
                                        AxisRange{range[0], range[1], static_cast<int>(range[2])}, lo);
            Output out(g.out);
            write_locus_csv(out.stream(), loc);
            if (!loc.failed.empty() && !g.quiet) std::cerr << loc.failed.size() << " sweep point(s) failed\n";
            return 0;
        }

        if (*simulate_cmd) {
            sys = load_system(in.system);
            const auto c = load_controller(in.controller, &sys);
            const auto cl = assemble_closed_loop(sys, c, integrator_for(c));
            const auto tr = simulate(cl, InitialFunction::constant(Vector::Constant(cl.n_ext(), phi)), horizon, dt);
            Output out(g.out);
            write_trajectory_csv(out.stream(), tr);
            if (!g.quiet && !g.out.empty())
                std::cerr << "tail log-norm slope " << tr.norm_log_slope << (tr.diverged ? " (diverged)" : "") << '\n';
            return 0;
        }

        if (*repro_cmd) {
            const auto& all = repro::targets();
            std::vector<std::string> run;
            for (const auto& n : names) {
                if (n == "all") {
                    for (const auto& [name, _] : all) run.push_back(name);
                } else if (all.count(n)) {
                    run.push_back(n);
                } else {
                    std::cerr << "unknown repro target '" << n << "'; known:";
                    for (const auto& [name, _] : all) std::cerr << ' ' << name;
                    std::cerr << " all\n";
                    return 2;
                }
            }
            const repro::Context ctx{g.data_dir, g.seed};
            Json json = Json::object();
            bool ok = true;
            for (const auto& name : run) {
                const auto checks = all.at(name)(ctx);
                for (const auto& c : checks) ok = ok && c.pass;
                print_checks(name, checks, g, g.json ? &json : nullptr);
            }
            if (g.json) std::cout << json.dump(2) << '\n';
            return ok ? 0 : 1;
        }

        if (*validate) {
            sys = load_system(in.system);
            if (!in.controller.empty()) load_controller(in.controller, &sys);
            if (!g.quiet) std::cout << "ok\n";
            return 0;
        }
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const ComputationError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    }
    return 2;
}
