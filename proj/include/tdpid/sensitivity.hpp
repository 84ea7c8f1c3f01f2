#pragma once

// First-order sensitivities of characteristic roots with respect to the
// controller parameters theta = [vec(Kp), vec(Ki), vec(Kd), T] (row-major vec).
//
//   ds/dtheta = -(u^H dM/dtheta v) / (u^H dM/ds v)
//
// where u, v are left/right null vectors of M(s) at a simple root s.

#include "tdpid/spectrum.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace tdpid {

/// Flattening of PIDFilterController parameters: row-major Kp, Ki, Kd, then T.
struct ParameterLayout {
    int m = 1;
    int p = 1;

    int gains() const { return m * p; }
    int size() const { return 3 * gains() + 1; }
    int kp(int i, int j) const { return i * p + j; }
    int ki(int i, int j) const { return gains() + i * p + j; }
    int kd(int i, int j) const { return 2 * gains() + i * p + j; }
    int t() const { return 3 * gains(); }

    static ParameterLayout of(const DelaySystem& sys) { return {sys.m(), sys.p()}; }

    Vector flatten(const PIDFilterController& ctl) const {
        Vector x(size());
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < p; ++j) {
                x(kp(i, j)) = ctl.Kp(i, j);
                x(ki(i, j)) = ctl.Ki(i, j);
                x(kd(i, j)) = ctl.Kd(i, j);
            }
        x(t()) = ctl.T;
        return x;
    }

    PIDFilterController unflatten(const Vector& x) const {
        PIDFilterController ctl{Matrix(m, p), Matrix(m, p), Matrix(m, p), x(t())};
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < p; ++j) {
                ctl.Kp(i, j) = x(kp(i, j));
                ctl.Ki(i, j) = x(ki(i, j));
                ctl.Kd(i, j) = x(kd(i, j));
            }
        return ctl;
    }
};

struct RootSensitivity {
    Complex root;
    CVector left_vector;   // u^H M(root) ~ 0, unit norm
    CVector right_vector;  // M(root) v ~ 0, unit norm
    CVector derivative;    // ds/dtheta
    Vector gradient;       // d Re(s)/dtheta
    bool simple = false;
};

/// Sensitivity of the root s of a loop assembled from a plant and controller.
inline RootSensitivity root_gradient(const ClosedLoopSystem& cl, Complex s) {
    if (!cl.has_source()) throw ValidationError("root_gradient needs a loop assembled from a plant and controller");
    const auto& sys = cl.system();
    const auto& ctl = cl.controller();
    const ParameterLayout layout = ParameterLayout::of(sys);
    const int n = sys.n(), p = sys.p(), m = sys.m();

    RootSensitivity rs;
    rs.root = s;
    const CMatrix M = cl.char_matrix(s);
    const auto nv = inverse_iteration(M, 3);
    rs.left_vector = nv.u;
    rs.right_vector = nv.v;
    rs.derivative = CVector::Zero(layout.size());
    rs.gradient = Vector::Zero(layout.size());

    const CMatrix Ms = cl.char_matrix_ds(s);
    const Complex den = nv.u.dot(Ms * nv.v);

    Eigen::JacobiSVD<CMatrix> svd(M);
    const auto& sv = svd.singularValues();
    const bool rank_one_deficient = sv.size() < 2 || sv(sv.size() - 2) > 1e-6 * sv(0);
    rs.simple = rank_one_deficient && std::abs(den) > 1e-10 * std::max(1.0, Ms.norm());
    if (!rs.simple) return rs;

    const Complex f = delay_factor(sys.tau0, s);
    const CVector vx = nv.v.segment(cl.x_offset(), n);
    const CVector vz = nv.v.segment(cl.z_offset(), p);
    const CVector ux = nv.u.segment(cl.x_offset(), n);
    const CVector uz = nv.u.segment(cl.z_offset(), p);
    // a_i = u_x^H B e_i, b_j = e_j^T C v_x
    const CVector a = (ux.adjoint() * sys.B.cast<Complex>()).transpose();
    const CVector b = sys.C.cast<Complex>() * vx;

    auto ds = [&](Complex num) { return -num / den; };
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < p; ++j) {
            rs.derivative(layout.kp(i, j)) = ds(-f * a(i) * b(j));
            if (cl.has_integrator_states()) {
                const Complex vw = nv.v(cl.w_offset() + j);
                rs.derivative(layout.ki(i, j)) = ds(-f * a(i) * vw);
            }
            rs.derivative(layout.kd(i, j)) = ds(-f * a(i) * vz(j));
        }
    }
    const double iT2 = 1.0 / (ctl.T * ctl.T);
    const Complex dT = uz.dot(s * iT2 * b - iT2 * vz);
    rs.derivative(layout.t()) = ds(dT);
    rs.gradient = rs.derivative.real();
    return rs;
}

struct AbscissaGradient {
    Vector gradient;
    Complex active_root;
    bool nonsmooth = false;
};

/// Gradient of the spectral abscissa from the rightmost root; flags ties within tie_tol
/// (other than the conjugate partner) and non-simple rightmost roots as nonsmooth.
inline AbscissaGradient abscissa_subgradient(const ClosedLoopSystem& cl, const Spectrum& spec, double tie_tol = 1e-6) {
    if (spec.empty()) throw ComputationError("abscissa_subgradient: spectrum has no roots");
    Complex active = spec.roots.front().value;
    if (active.imag() < 0.0) active = std::conj(active);

    AbscissaGradient ag;
    ag.active_root = active;
    for (const auto& r : spec.roots) {
        if (r.value.real() < spec.abscissa - tie_tol) break;
        const bool self = std::abs(r.value - active) <= 1e-9 * std::max(1.0, std::abs(active));
        const bool partner = std::abs(r.value - std::conj(active)) <= 1e-9 * std::max(1.0, std::abs(active));
        if (!self && !partner) ag.nonsmooth = true;
    }
    const auto rs = root_gradient(cl, active);
    if (!rs.simple) ag.nonsmooth = true;
    ag.gradient = rs.gradient;
    return ag;
}

/// Central finite differences of the spectral abscissa over the flattened parameters.
inline Vector finite_difference_abscissa_gradient(const DelaySystem& sys, const PIDFilterController& ctl,
                                                  IntegratorStates integrator, const SpectrumOptions& opts = {},
                                                  double h = 1e-6) {
    const auto layout = ParameterLayout::of(sys);
    const Vector x = layout.flatten(ctl);
    const bool ki_frozen = integrator == IntegratorStates::drop_if_unused && !ctl.has_integral_action();
    Vector g = Vector::Zero(layout.size());
    for (int k = 0; k < layout.size(); ++k) {
        if (ki_frozen && k >= layout.gains() && k < 2 * layout.gains()) continue;
        Vector xp = x, xm = x;
        xp(k) += h;
        xm(k) -= h;
        const double fp = spectral_abscissa(assemble_closed_loop(sys, layout.unflatten(xp), integrator), opts);
        const double fm = spectral_abscissa(assemble_closed_loop(sys, layout.unflatten(xm), integrator), opts);
        g(k) = (fp - fm) / (2.0 * h);
    }
    return g;
}

}  // namespace tdpid
