#pragma once

// Characteristic roots of retarded closed loops.
//
// Roots are located by pseudospectral (Chebyshev) collocation of the
// infinitesimal generator of xi' = E^-1 M0 xi + sum_j E^-1 D_j xi(t - tau_j)
// on [-tau_max, 0], then polished by Newton's method on det M(s) = 0 using
// left/right null vectors of M(s).

#include "tdpid/model.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>
#include <string>
#include <vector>

namespace tdpid {

struct SpectrumOptions {
    std::optional<double> search_floor;  // default: see default_search_floor()
    int degree = 30;                     // initial collocation degree
    int max_degree = 160;                // cap for adaptive doubling
    bool adaptive = true;
    int stable_count = 10;               // rightmost roots compared between degrees
    double stability_tol = 1e-8;
    double tol = 1e-10;                  // Newton step tolerance (relative to max(1, |s|))
    int max_newton = 25;
    double residual_tol = 1e-8;          // sigma_min(M(s)) / ||M(s)||
    double dedup_tol = 1e-7;
};

struct Root {
    Complex value;
    double residual = 0.0;
    bool refined = false;
};

struct Spectrum {
    std::vector<Root> roots;  // sorted by decreasing real part, then decreasing imaginary part
    double abscissa = -std::numeric_limits<double>::infinity();
    double search_floor = 0.0;
    int discretization_degree = 0;
    bool converged = false;
    int dropped_candidates = 0;
    std::vector<std::string> diagnostics;

    bool empty() const { return roots.empty(); }
    const Root& rightmost() const { return roots.front(); }
};

namespace detail {

inline double spectral_norm(const Matrix& A) {
    if (A.size() == 0) return 0.0;
    Eigen::JacobiSVD<Matrix> svd(A);
    return svd.singularValues()(0);
}

}  // namespace detail

/// Explicit retarded form: returns E^-1 M0 and E^-1 D_j.
struct RetardedForm {
    Matrix A0;
    std::vector<DelayedBlock> terms;
};

inline RetardedForm explicit_form(const ClosedLoopSystem& cl) {
    Eigen::PartialPivLU<Matrix> lu(cl.E());
    RetardedForm f;
    f.A0 = lu.solve(cl.M0());
    for (const auto& b : cl.delayed_blocks()) f.terms.push_back({b.tau, lu.solve(b.D)});
    return f;
}

/// -1/(smallest positive delay) - ||E^-1 M0||_2, clipped to >= -100.
inline double default_search_floor(const ClosedLoopSystem& cl) {
    const auto f = explicit_form(cl);
    double floor = -detail::spectral_norm(f.A0);
    if (!cl.delayed_blocks().empty()) floor -= 1.0 / cl.min_delay();
    return std::max(floor, -100.0);
}

/// Chebyshev extreme points on [-tau_max, 0] (theta_0 = 0) and the matching differentiation matrix.
struct ChebyshevGrid {
    Vector theta;
    Matrix D;
};

inline ChebyshevGrid chebyshev_grid(int N, double tau_max) {
    ChebyshevGrid g;
    Vector x(N + 1);
    for (int j = 0; j <= N; ++j) x(j) = std::cos(std::numbers::pi * j / N);
    g.theta = 0.5 * tau_max * (x.array() - 1.0);

    Vector c = Vector::Ones(N + 1);
    c(0) = c(N) = 2.0;
    Matrix D(N + 1, N + 1);
    for (int i = 0; i <= N; ++i) {
        for (int j = 0; j <= N; ++j) {
            if (i == j) continue;
            const double sign = ((i + j) % 2 == 0) ? 1.0 : -1.0;
            D(i, j) = (c(i) / c(j)) * sign / (x(i) - x(j));
        }
    }
    // negative-sum trick for the diagonal
    for (int i = 0; i <= N; ++i) {
        double s = 0.0;
        for (int j = 0; j <= N; ++j)
            if (j != i) s += D(i, j);
        D(i, i) = -s;
    }
    g.D = (2.0 / tau_max) * D;
    return g;
}

/// Lagrange basis on the Chebyshev extreme points, evaluated at theta in [-tau_max, 0].
inline Vector chebyshev_lagrange(int N, double tau_max, double theta) {
    const double x = 1.0 + 2.0 * theta / tau_max;
    Vector l = Vector::Zero(N + 1);
    double denom = 0.0;
    for (int j = 0; j <= N; ++j) {
        const double xj = std::cos(std::numbers::pi * j / N);
        if (std::abs(x - xj) < 1e-15) {
            l.setZero();
            l(j) = 1.0;
            return l;
        }
        double w = (j % 2 == 0) ? 1.0 : -1.0;
        if (j == 0 || j == N) w *= 0.5;
        l(j) = w / (x - xj);
        denom += l(j);
    }
    return l / denom;
}

/// Collocation matrix of the infinitesimal generator; size n_ext * (N + 1).
inline Matrix collocation_matrix(const ClosedLoopSystem& cl, int N) {
    const auto f = explicit_form(cl);
    const int n = cl.n_ext();
    const double tau_max = cl.max_delay();
    const auto grid = chebyshev_grid(N, tau_max);

    Matrix A = Matrix::Zero(n * (N + 1), n * (N + 1));
    A.block(0, 0, n, n) = f.A0;
    for (const auto& term : f.terms) {
        const Vector l = chebyshev_lagrange(N, tau_max, -term.tau);
        for (int k = 0; k <= N; ++k)
            if (l(k) != 0.0) A.block(0, k * n, n, n) += l(k) * term.D;
    }
    for (int i = 1; i <= N; ++i)
        for (int k = 0; k <= N; ++k)
            A.block(i * n, k * n, n, n).diagonal().setConstant(grid.D(i, k));
    return A;
}

/// Left and right approximate null vectors of a nearly singular matrix.
struct NullVectors {
    CVector u;  // u^H M ~ 0
    CVector v;  // M v ~ 0
};

namespace detail {

inline CVector seeded_start(int n, unsigned seed) {
    std::mt19937 gen(seed);
    std::normal_distribution<double> d;
    CVector x(n);
    for (int i = 0; i < n; ++i) x(i) = Complex(d(gen), d(gen));
    return x.normalized();
}

inline NullVectors svd_null_vectors(const CMatrix& M) {
    Eigen::JacobiSVD<CMatrix> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto last = M.cols() - 1;
    return {svd.matrixU().col(last), svd.matrixV().col(last)};
}

}  // namespace detail

/// Inverse iteration on M and M^H. Starts from `start` if sized, else from a seeded random vector.
inline NullVectors inverse_iteration(const CMatrix& M, int steps = 2, const NullVectors* start = nullptr) {
    const int n = static_cast<int>(M.rows());
    NullVectors nv;
    if (start && start->u.size() == n) nv = *start;
    else nv = {detail::seeded_start(n, 0x5eed1u), detail::seeded_start(n, 0x5eed2u)};

    Eigen::PartialPivLU<CMatrix> lu(M);
    for (int k = 0; k < steps; ++k) {
        CVector v = lu.solve(nv.v);
        CVector u = lu.adjoint().solve(nv.u);
        if (!v.allFinite() || !u.allFinite() || v.norm() == 0.0 || u.norm() == 0.0) return detail::svd_null_vectors(M);
        nv.v = v.normalized();
        nv.u = u.normalized();
    }
    return nv;
}

/// sigma_min(M(s)) / ||M(s)||_2.
inline double relative_residual(const ClosedLoopSystem& cl, Complex s) {
    const CMatrix M = cl.char_matrix(s);
    Eigen::JacobiSVD<CMatrix> svd(M);
    const auto& sv = svd.singularValues();
    if (sv(0) == 0.0) return 0.0;
    return sv(sv.size() - 1) / sv(0);
}

struct NewtonResult {
    Complex s;
    bool converged = false;
    int iterations = 0;
    NullVectors vectors;
};

/// Newton correction ds = -(u^H M v)/(u^H M' v) with u, v refreshed by inverse iteration.
inline NewtonResult newton_refine(const ClosedLoopSystem& cl, Complex s0, double tol = 1e-10, int max_iter = 25) {
    NewtonResult r{s0};
    const NullVectors* warm = nullptr;
    for (int it = 0; it < max_iter; ++it) {
        r.iterations = it + 1;
        const CMatrix M = cl.char_matrix(r.s);
        r.vectors = inverse_iteration(M, 2, warm);
        warm = &r.vectors;
        const Complex num = r.vectors.u.dot(M * r.vectors.v);
        const Complex den = r.vectors.u.dot(cl.char_matrix_ds(r.s) * r.vectors.v);
        if (num == Complex(0.0)) {
            r.converged = true;
            break;
        }
        if (den == Complex(0.0) || !std::isfinite(std::abs(den))) break;
        const Complex ds = -num / den;
        if (!std::isfinite(ds.real()) || !std::isfinite(ds.imag())) break;
        r.s += ds;
        if (std::abs(ds) <= tol * std::max(1.0, std::abs(r.s))) {
            r.converged = true;
            break;
        }
    }
    if (r.converged) r.vectors = inverse_iteration(cl.char_matrix(r.s), 2, &r.vectors);
    return r;
}

namespace detail {

inline bool root_order(const Root& a, const Root& b) {
    if (a.value.real() != b.value.real()) return a.value.real() > b.value.real();
    return a.value.imag() > b.value.imag();
}

/// Refines candidate eigenvalues, snaps real roots, deduplicates and restores conjugate pairs.
inline std::vector<Root> refine_candidates(const ClosedLoopSystem& cl, const std::vector<Complex>& candidates,
                                           double floor, const SpectrumOptions& opts, int& dropped) {
    std::vector<Root> upper;
    for (Complex c : candidates) {
        auto nr = newton_refine(cl, c, opts.tol, opts.max_newton);
        Complex s = nr.s;
        if (!std::isfinite(s.real()) || !std::isfinite(s.imag())) {
            ++dropped;
            continue;
        }
        if (std::abs(s.imag()) <= 1e-9 * std::max(1.0, std::abs(s))) s = {s.real(), 0.0};
        if (s.imag() < 0.0) s = std::conj(s);
        const double res = relative_residual(cl, s);
        bool refined = nr.converged && res <= opts.residual_tol;
        if (!nr.converged && res > 1e-6) {
            ++dropped;
            continue;
        }
        if (s.real() < floor) continue;
        upper.push_back({s, res, refined});
    }
    std::sort(upper.begin(), upper.end(), root_order);

    std::vector<Root> merged;
    for (const auto& r : upper) {
        auto dup = std::find_if(merged.begin(), merged.end(), [&](const Root& m) {
            return std::abs(m.value - r.value) <= opts.dedup_tol * std::max(1.0, std::abs(r.value));
        });
        if (dup == merged.end()) merged.push_back(r);
        else if (r.residual < dup->residual) *dup = r;
    }

    std::vector<Root> all;
    for (const auto& r : merged) {
        all.push_back(r);
        if (r.value.imag() != 0.0) all.push_back({std::conj(r.value), r.residual, r.refined});
    }
    std::sort(all.begin(), all.end(), root_order);
    return all;
}

inline std::vector<Root> roots_at_degree(const ClosedLoopSystem& cl, int N, double floor, const SpectrumOptions& opts,
                                         int& dropped) {
    Matrix A;
    if (cl.delayed_blocks().empty()) A = explicit_form(cl).A0;
    else A = collocation_matrix(cl, N);

    Eigen::EigenSolver<Matrix> es(A, false);
    if (es.info() != Eigen::Success) throw ComputationError("eigenvalue solver failed at degree " + std::to_string(N));

    const double margin = 1.0 + 0.1 * std::abs(floor);
    std::vector<Complex> candidates;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
        const Complex lambda = es.eigenvalues()(i);
        if (lambda.imag() < 0.0) continue;  // conjugates restored after refinement
        if (lambda.real() < floor - margin) continue;
        candidates.push_back(lambda);
    }
    return refine_candidates(cl, candidates, floor, opts, dropped);
}

inline bool same_dominant(const std::vector<Root>& a, const std::vector<Root>& b, int count, double tol) {
    auto covered = [&](const std::vector<Root>& from, const std::vector<Root>& in) {
        const auto k = std::min<std::size_t>(count, from.size());
        for (std::size_t i = 0; i < k; ++i) {
            const auto& s = from[i].value;
            bool found = std::any_of(in.begin(), in.end(), [&](const Root& r) {
                return std::abs(r.value - s) <= tol * std::max(1.0, std::abs(s));
            });
            if (!found) return false;
        }
        return true;
    };
    return covered(a, b) && covered(b, a);
}

}  // namespace detail

/// All characteristic roots with Re(s) >= search_floor, Newton-refined.
inline Spectrum compute_roots(const ClosedLoopSystem& cl, double search_floor, const SpectrumOptions& opts = {}) {
    if (!std::isfinite(search_floor)) throw ValidationError("search floor must be finite");
    if (opts.degree < 2 || opts.max_degree < opts.degree) throw ValidationError("invalid collocation degree settings");

    Spectrum sp;
    sp.search_floor = search_floor;
    int dropped = 0;

    if (cl.delayed_blocks().empty()) {
        sp.roots = detail::roots_at_degree(cl, 0, search_floor, opts, dropped);
        sp.discretization_degree = 0;
        sp.converged = true;
    } else {
        int N = opts.degree;
        auto roots = detail::roots_at_degree(cl, N, search_floor, opts, dropped);
        bool stable = !opts.adaptive;
        while (!stable && N < opts.max_degree) {
            const int next = std::min(2 * N, opts.max_degree);
            int dropped_next = 0;
            auto finer = detail::roots_at_degree(cl, next, search_floor, opts, dropped_next);
            stable = detail::same_dominant(roots, finer, opts.stable_count, opts.stability_tol);
            roots = std::move(finer);
            dropped = dropped_next;
            N = next;
        }
        sp.roots = std::move(roots);
        sp.discretization_degree = N;
        sp.converged = stable;
        if (!stable) sp.diagnostics.push_back("dominant roots did not stabilize up to degree " + std::to_string(N));
    }
    sp.dropped_candidates = dropped;
    if (dropped > 0) sp.diagnostics.push_back(std::to_string(dropped) + " candidate(s) dropped: Newton did not converge");
    if (!sp.roots.empty()) sp.abscissa = sp.roots.front().value.real();
    return sp;
}

inline Spectrum compute_roots(const ClosedLoopSystem& cl, const SpectrumOptions& opts = {}) {
    return compute_roots(cl, opts.search_floor ? *opts.search_floor : default_search_floor(cl), opts);
}

/// Max real part over the computed dominant spectrum. Throws when no root lies above the floor.
inline double spectral_abscissa(const ClosedLoopSystem& cl, const SpectrumOptions& opts = {}) {
    const auto sp = compute_roots(cl, opts);
    if (sp.empty()) throw ComputationError("no characteristic roots found above the search floor");
    return sp.abscissa;
}

/// CSV with columns re,im,residual,refined; numbers printed with 17 significant digits.
inline void write_spectrum_csv(std::ostream& os, const Spectrum& sp) {
    const auto old = os.precision(17);
    os << "re,im,residual,refined\n";
    for (const auto& r : sp.roots)
        os << r.value.real() << ',' << r.value.imag() << ',' << r.residual << ',' << (r.refined ? 1 : 0) << '\n';
    os.precision(old);
}

}  // namespace tdpid
