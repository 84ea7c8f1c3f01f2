#pragma once

// Zeros of a scalar holomorphic function inside a rectangle.
//
// The rectangle is covered by a grid; every cell whose boundary winds around
// the origin (argument principle on the corner values) seeds a Newton
// iteration. The total winding number along the outer boundary is compared
// with the multiplicity-weighted count of polished zeros; on mismatch the
// grid is doubled, up to a cap.

#include "tdpid/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

namespace tdpid {

struct ScalarQuasiPolynomial {
    std::function<Complex(Complex)> evaluate;
    std::function<Complex(Complex)> derivative;  // optional; central differences otherwise

    Complex operator()(Complex s) const { return evaluate(s); }
};

struct Rect {
    double re_lo = 0.0, re_hi = 0.0;
    double im_lo = 0.0, im_hi = 0.0;

    double width() const { return re_hi - re_lo; }
    double height() const { return im_hi - im_lo; }
    bool contains(Complex s, double pad = 0.0) const {
        return s.real() >= re_lo - pad && s.real() <= re_hi + pad && s.imag() >= im_lo - pad && s.imag() <= im_hi + pad;
    }
};

struct ScanOptions {
    int nx = 400;
    int ny = 400;
    int max_refinements = 2;
    double newton_tol = 1e-13;
    int max_newton = 60;
    double dedup_tol = 1e-7;
};

class ScanError : public ComputationError {
public:
    ScanError(const std::string& what, int expected, int found)
        : ComputationError(what), expected_count(expected), found_count(found) {}
    int expected_count;
    int found_count;
};

struct ScalarRoot {
    Complex value;
    int multiplicity = 1;
};

namespace detail {

inline double wrapped_arg_step(Complex from, Complex to) {
    double d = std::arg(to) - std::arg(from);
    while (d > std::numbers::pi) d -= 2.0 * std::numbers::pi;
    while (d <= -std::numbers::pi) d += 2.0 * std::numbers::pi;
    return d;
}

/// Argument increment along a segment, subdividing until each step is below pi/4.
inline double arg_increment(const ScalarQuasiPolynomial& f, Complex a, Complex b, Complex fa, Complex fb, int depth) {
    const double d = wrapped_arg_step(fa, fb);
    if (depth <= 0 || std::abs(d) < std::numbers::pi / 4) return d;
    const Complex mid = 0.5 * (a + b);
    const Complex fm = f(mid);
    return arg_increment(f, a, mid, fa, fm, depth - 1) + arg_increment(f, mid, b, fm, fb, depth - 1);
}

inline int winding_on_circle(const ScalarQuasiPolynomial& f, Complex center, double radius, int points = 64) {
    double total = 0.0;
    Complex prev_s = center + radius;
    Complex prev = f(prev_s);
    for (int k = 1; k <= points; ++k) {
        const Complex s = center + std::polar(radius, 2.0 * std::numbers::pi * k / points);
        const Complex fs = f(s);
        total += arg_increment(f, prev_s, s, prev, fs, 8);
        prev_s = s;
        prev = fs;
    }
    return static_cast<int>(std::lround(total / (2.0 * std::numbers::pi)));
}

inline Complex derivative_at(const ScalarQuasiPolynomial& f, Complex s) {
    if (f.derivative) return f.derivative(s);
    const double h = 1e-6 * std::max(1.0, std::abs(s));
    return (f(s + h) - f(s - h)) / (2.0 * h);
}

inline bool polish(const ScalarQuasiPolynomial& f, Complex& s, const ScanOptions& opts) {
    for (int it = 0; it < opts.max_newton; ++it) {
        const Complex fs = f(s);
        if (fs == Complex(0.0)) return true;
        const Complex d = derivative_at(f, s);
        if (d == Complex(0.0)) return false;
        const Complex step = fs / d;
        if (!std::isfinite(step.real()) || !std::isfinite(step.imag())) return false;
        s -= step;
        if (std::abs(step) <= opts.newton_tol * std::max(1.0, std::abs(s))) return true;
    }
    // multiple roots converge linearly; accept when the residual has flattened out
    return std::abs(f(s)) <= 1e-10 * std::max(1.0, std::abs(derivative_at(f, s)));
}

}  // namespace detail

/// Total winding number of f along the rectangle boundary (zeros counted with multiplicity).
inline int boundary_winding(const ScalarQuasiPolynomial& f, const Rect& rect, int nx, int ny) {
    std::vector<Complex> path;
    for (int i = 0; i <= nx; ++i) path.emplace_back(rect.re_lo + rect.width() * i / nx, rect.im_lo);
    for (int j = 1; j <= ny; ++j) path.emplace_back(rect.re_hi, rect.im_lo + rect.height() * j / ny);
    for (int i = nx - 1; i >= 0; --i) path.emplace_back(rect.re_lo + rect.width() * i / nx, rect.im_hi);
    for (int j = ny - 1; j >= 0; --j) path.emplace_back(rect.re_lo, rect.im_lo + rect.height() * j / ny);
    double total = 0.0;
    Complex prev = f(path.front());
    for (std::size_t k = 1; k < path.size(); ++k) {
        const Complex cur = f(path[k]);
        total += detail::arg_increment(f, path[k - 1], path[k], prev, cur, 20);
        prev = cur;
    }
    return static_cast<int>(std::lround(total / (2.0 * std::numbers::pi)));
}

/// All zeros of qp inside rect. Throws ScanError when the grid stays too coarse to
/// account for every zero predicted by the argument principle.
inline std::vector<ScalarRoot> scan_scalar_with_multiplicity(const ScalarQuasiPolynomial& qp, const Rect& rect,
                                                             const ScanOptions& opts = {}) {
    if (!(rect.width() > 0.0) || !(rect.height() > 0.0)) throw ValidationError("scan rectangle is degenerate");
    if (opts.nx < 1 || opts.ny < 1) throw ValidationError("scan grid must have at least one cell per axis");

    int nx = opts.nx, ny = opts.ny;
    int expected = 0, found = 0;
    for (int attempt = 0; attempt <= opts.max_refinements; ++attempt, nx *= 2, ny *= 2) {
        const double hx = rect.width() / nx, hy = rect.height() / ny;
        auto node = [&](int i, int j) { return Complex(rect.re_lo + hx * i, rect.im_lo + hy * j); };

        std::vector<Complex> F((nx + 1) * (ny + 1));
        auto at = [&](int i, int j) -> Complex& { return F[i * (ny + 1) + j]; };
        for (int i = 0; i <= nx; ++i)
            for (int j = 0; j <= ny; ++j) at(i, j) = qp(node(i, j));

        std::vector<Complex> seeds;
        for (int i = 0; i <= nx; ++i)
            for (int j = 0; j <= ny; ++j)
                if (at(i, j) == Complex(0.0)) seeds.push_back(node(i, j));

        for (int i = 0; i < nx; ++i) {
            for (int j = 0; j < ny; ++j) {
                const Complex c[4] = {at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1)};
                if (std::any_of(std::begin(c), std::end(c), [](Complex z) { return z == Complex(0.0); })) continue;
                double w = 0.0;
                for (int k = 0; k < 4; ++k) w += detail::wrapped_arg_step(c[k], c[(k + 1) % 4]);
                if (std::lround(w / (2.0 * std::numbers::pi)) != 0) seeds.push_back(node(i, j) + Complex(0.5 * hx, 0.5 * hy));
            }
        }

        const double pad = 1e-9 * std::max(rect.width(), rect.height());
        std::vector<ScalarRoot> roots;
        for (Complex s : seeds) {
            if (!detail::polish(qp, s, opts) || !rect.contains(s, pad)) continue;
            const bool dup = std::any_of(roots.begin(), roots.end(), [&](const ScalarRoot& r) {
                return std::abs(r.value - s) <= opts.dedup_tol * std::max(1.0, std::abs(s));
            });
            if (!dup) roots.push_back({s, 1});
        }

        // multiplicity from a small circle that excludes neighbouring zeros
        for (auto& r : roots) {
            double radius = 0.25 * std::min(hx, hy);
            for (const auto& o : roots)
                if (&o != &r) radius = std::min(radius, 0.4 * std::abs(o.value - r.value));
            r.multiplicity = std::max(1, detail::winding_on_circle(qp, r.value, radius));
        }

        expected = boundary_winding(qp, rect, nx, ny);
        found = 0;
        for (const auto& r : roots)
            if (rect.contains(r.value)) found += r.multiplicity;

        if (found == expected) {
            std::sort(roots.begin(), roots.end(), [](const ScalarRoot& a, const ScalarRoot& b) {
                if (a.value.real() != b.value.real()) return a.value.real() > b.value.real();
                return a.value.imag() > b.value.imag();
            });
            return roots;
        }
    }
    throw ScanError("argument principle predicts " + std::to_string(expected) + " zero(s), grid located " +
                        std::to_string(found),
                    expected, found);
}

inline std::vector<Complex> scan_scalar(const ScalarQuasiPolynomial& qp, const Rect& rect, const ScanOptions& opts = {}) {
    std::vector<Complex> out;
    for (const auto& r : scan_scalar_with_multiplicity(qp, rect, opts)) out.push_back(r.value);
    return out;
}

/// Grid spacing form: cells of side ~grid_step in both directions.
inline std::vector<Complex> scan_scalar(const ScalarQuasiPolynomial& qp, const Rect& rect, double grid_step) {
    if (!(grid_step > 0.0)) throw ValidationError("grid step must be positive");
    ScanOptions opts;
    opts.nx = std::max(1, static_cast<int>(std::ceil(rect.width() / grid_step)));
    opts.ny = std::max(1, static_cast<int>(std::ceil(rect.height() / grid_step)));
    return scan_scalar(qp, rect, opts);
}

/// det M(s) of an assembled loop as a scalar function.
inline ScalarQuasiPolynomial determinant_function(const ClosedLoopSystem& cl) {
    return {[cl](Complex s) { return cl.char_matrix(s).determinant(); }, {}};
}

}  // namespace tdpid
