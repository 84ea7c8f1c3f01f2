#pragma once

#include "tdpid/tdpid.hpp"

#include <random>

namespace tdpid::testing {

inline Matrix mat(int r, int c, std::initializer_list<double> v) {
    Matrix M(r, c);
    auto it = v.begin();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) M(i, j) = *it++;
    return M;
}

inline PIDFilterController siso(double kp, double ki, double kd, double T) { return PIDFilterController::siso(kp, ki, kd, T); }
inline PIDFilterController neg(double kp, double ki, double kd, double T) { return siso(-kp, -ki, -kd, T); }

inline DelaySystem plant_ex3_1() { return {mat(2, 2, {0, 1, -3, -4}), {}, mat(2, 1, {0, 1}), mat(1, 2, {1, -1}), 0.0}; }
inline DelaySystem plant_ex3_2() {
    return {mat(3, 3, {-1, 1, 1, 1, 0, 0, 0, 1, 0}), {}, mat(3, 1, {-5, 0, 0}), mat(1, 3, {1, 0, 0}), 0.0};
}
inline DelaySystem plant_ex3_3() { return {mat(2, 2, {0, 5, 1, 0}), {}, mat(2, 1, {1, -1}), mat(1, 2, {1, 0}), 0.0}; }
inline DelaySystem plant_motivating(double tau0 = 0.2) {
    return {mat(3, 3, {-1, 1.0 / 3.0, 1, 1, 0, 0, 0, 1, 0}), {}, mat(3, 1, {2, 0, 0}), mat(1, 3, {0.5, 0, 0.5}), tau0};
}
inline DelaySystem plant_ex6_1() {
    return {mat(3, 3, {0, 1, 0, 0, 0, 1, -2, -3, -1}), {}, mat(3, 1, {0, 0, 1}), mat(1, 3, {1, 0, -0.5}), 0.0};
}
inline DelaySystem plant_ex6_2() { return {mat(2, 2, {0, 1, 1, 0}), {}, mat(2, 1, {0, 1}), mat(1, 2, {-2, 1}), 0.0}; }

inline const PIDFilterController ex6_1_classical = neg(0.6439, 0.4222, 1.9, 1e-3);
inline const PIDFilterController ex6_1_filtered = neg(0.0360, 0.5005, 0.1103, 0.1543);

struct TableRow {
    double kp, kd, T, rho, margin;
};
inline const TableRow table1[3] = {{-1.2311, -0.8927, 0.0059, -3.57769, 0.0275},
                                   {-0.8184, -0.7237, 0.0216, -1.46503, 0.1422},
                                   {-0.6618, -0.5999, 0.0729, -1.23445, 0.217}};
inline PIDFilterController table1_controller(const TableRow& r) { return neg(r.kp, 0.0, r.kd, r.T); }

inline SpectrumOptions floor_at(double f) {
    SpectrumOptions o;
    o.search_floor = f;
    return o;
}

inline Complex nearest(const Spectrum& sp, Complex target) {
    Complex best = sp.roots.front().value;
    for (const auto& r : sp.roots)
        if (std::abs(r.value - target) < std::abs(best - target)) best = r.value;
    return best;
}

inline Complex nearest(const std::vector<Complex>& roots, Complex target) {
    Complex best = roots.front();
    for (const auto& r : roots)
        if (std::abs(r - target) < std::abs(best - target)) best = r;
    return best;
}

/// SISO plant of order 1..3 with an optional state delay and input delay.
inline DelaySystem random_system(std::mt19937& rng, bool with_delays = true) {
    std::uniform_int_distribution<int> order(1, 3);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int n = order(rng);
    DelaySystem sys;
    sys.A0 = Matrix(n, n);
    sys.B = Matrix(n, 1);
    sys.C = Matrix(1, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) sys.A0(i, j) = g(rng);
        sys.A0(i, i) -= 1.5;
        sys.B(i, 0) = g(rng);
        sys.C(0, i) = g(rng);
    }
    if (with_delays) {
        sys.tau0 = 0.05 + 0.45 * u(rng);
        if (u(rng) < 0.5) sys.state_terms.push_back({0.2 + 0.8 * u(rng), 0.3 * Matrix::NullaryExpr(n, n, [&] { return g(rng); })});
    }
    return sys;
}

inline PIDFilterController random_controller(std::mt19937& rng, bool integral = true) {
    std::normal_distribution<double> g(0.0, 0.4);
    std::uniform_real_distribution<double> t(0.05, 0.5);
    return siso(g(rng), integral ? g(rng) : 0.0, g(rng), t(rng));
}

}  // namespace tdpid::testing
