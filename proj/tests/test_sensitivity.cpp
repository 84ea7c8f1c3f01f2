#include "support.hpp"

#include <gtest/gtest.h>

using namespace tdpid;
using namespace tdpid::testing;

TEST(Layout, FlattenRoundTrip) {
    const ParameterLayout layout{2, 3};
    EXPECT_EQ(layout.size(), 19);
    PIDFilterController c{Matrix::Random(2, 3), Matrix::Random(2, 3), Matrix::Random(2, 3), 0.3};
    const auto back = layout.unflatten(layout.flatten(c));
    EXPECT_EQ(back.Kp, c.Kp);
    EXPECT_EQ(back.Ki, c.Ki);
    EXPECT_EQ(back.Kd, c.Kd);
    EXPECT_EQ(back.T, c.T);
    EXPECT_EQ(layout.kp(1, 2), 5);
    EXPECT_EQ(layout.ki(0, 1), 7);
    EXPECT_EQ(layout.t(), 18);
}

TEST(RootGradient, NullVectorsAreUnitAndAnnihilate) {
    const auto cl = assemble_closed_loop(plant_ex6_1(), ex6_1_filtered);
    const auto sp = compute_roots(cl);
    const auto rs = root_gradient(cl, sp.roots.front().value);
    EXPECT_TRUE(rs.simple);
    EXPECT_NEAR(rs.left_vector.norm(), 1.0, 1e-12);
    EXPECT_NEAR(rs.right_vector.norm(), 1.0, 1e-12);
    const CMatrix M = cl.char_matrix(rs.root);
    EXPECT_LE((M * rs.right_vector).cwiseAbs().maxCoeff(), 1e-8 * M.norm());
    EXPECT_LE((rs.left_vector.adjoint() * M).cwiseAbs().maxCoeff(), 1e-8 * M.norm());
}

TEST(RootGradient, ConjugateRootsGiveSameRealGradient) {
    const auto cl = assemble_closed_loop(plant_ex6_1(), ex6_1_filtered);
    const Complex s = nearest(compute_roots(cl), Complex(-0.1011, 1.6262));
    const auto a = root_gradient(cl, s), b = root_gradient(cl, std::conj(s));
    EXPECT_LT((a.gradient - b.gradient).norm(), 1e-10);
    EXPECT_LT((a.derivative - b.derivative.conjugate()).norm(), 1e-10);
}

TEST(RootGradient, MatchesImplicitDerivativeOfCubic) {
    // filtered PD on the second-order plant, positive feedback:
    // q(s) = (s^2 + 4 s + 3)(T s + 1) + (s - 1)(kp (T s + 1) + kd s)
    const double kp = 1.0, kd = 2.0, T = 0.2;
    const auto cl = assemble_closed_loop(plant_ex3_1(), siso(kp, 0, kd, T), IntegratorStates::drop_if_unused);
    const auto sp = compute_roots(cl, floor_at(-20.0));
    const auto layout = ParameterLayout{1, 1};
    for (const auto& r : sp.roots) {
        const Complex s = r.value;
        const Complex p = s * s + 4.0 * s + 3.0, f = T * s + 1.0;
        const Complex dq_ds = (2.0 * s + 4.0) * f + p * T + (kp * f + kd * s) + (s - 1.0) * (kp * T + kd);
        const Complex dkp = -(s - 1.0) * f / dq_ds;
        const Complex dkd = -(s - 1.0) * s / dq_ds;
        const Complex dT = -(p * s + (s - 1.0) * kp * s) / dq_ds;
        const auto rs = root_gradient(cl, s);
        ASSERT_TRUE(rs.simple);
        EXPECT_LT(std::abs(rs.derivative(layout.kp(0, 0)) - dkp), 1e-9) << s;
        EXPECT_LT(std::abs(rs.derivative(layout.kd(0, 0)) - dkd), 1e-9) << s;
        EXPECT_LT(std::abs(rs.derivative(layout.t()) - dT), 1e-9) << s;
        EXPECT_EQ(rs.derivative(layout.ki(0, 0)), Complex(0.0));
    }
}

TEST(RootGradient, RequiresAssembledLoop) {
    const auto cl = ClosedLoopSystem::from_blocks(Matrix::Identity(2, 2), Matrix::Identity(2, 2), {});
    EXPECT_THROW(root_gradient(cl, 1.0), ValidationError);
}

TEST(RootGradient, DoubleRootIsNotSimple) {
    // ideal-free plant with two identical decoupled modes gives a semisimple double root
    DelaySystem sys{Matrix::Identity(2, 2) * -1.0, {}, mat(2, 1, {1, 0}), mat(1, 2, {1, 0}), 0.0};
    const auto cl = assemble_closed_loop(sys, siso(0.0, 0, 0.0, 0.5), IntegratorStates::drop_if_unused);
    EXPECT_FALSE(root_gradient(cl, -1.0).simple);
}

TEST(AbscissaGradient, MatchesFiniteDifferencesOnRandomLoops) {
    std::mt19937 rng(2024);
    int checked = 0;
    for (int attempt = 0; checked < 20 && attempt < 400; ++attempt) {
        const auto sys = random_system(rng);
        const auto ctl = random_controller(rng);
        const auto integ = IntegratorStates::keep;
        const auto cl = assemble_closed_loop(sys, ctl, integ);
        const auto sp = compute_roots(cl);
        if (sp.abscissa >= 0.0) continue;
        const auto ag = abscissa_subgradient(cl, sp);
        if (ag.nonsmooth) continue;
        // stay away from ties with the next distinct root
        bool gap = true;
        for (const auto& r : sp.roots) {
            const bool same = std::abs(r.value - ag.active_root) < 1e-9 || std::abs(r.value - std::conj(ag.active_root)) < 1e-9;
            if (!same && r.value.real() > sp.abscissa - 1e-3) gap = false;
        }
        if (!gap) continue;
        const Vector fd = finite_difference_abscissa_gradient(sys, ctl, integ, {}, 1e-6);
        for (Eigen::Index i = 0; i < fd.size(); ++i)
            EXPECT_LT(std::abs(ag.gradient(i) - fd(i)) / std::max(std::abs(fd(i)), 1e-3), 1e-5)
                << "parameter " << i << " analytic " << ag.gradient(i) << " fd " << fd(i);
        ++checked;
    }
    EXPECT_EQ(checked, 20);
}

TEST(AbscissaGradient, FrozenIntegralGainsAreZero) {
    const auto sys = plant_motivating();
    const auto ctl = siso(-1.08015, 0, -1.04045, 0.1);
    const auto cl = assemble_closed_loop(sys, ctl, IntegratorStates::drop_if_unused);
    const auto ag = abscissa_subgradient(cl, compute_roots(cl));
    EXPECT_EQ(ag.gradient(1), 0.0);
    const Vector fd = finite_difference_abscissa_gradient(sys, ctl, IntegratorStates::drop_if_unused);
    EXPECT_EQ(fd(1), 0.0);
    for (int i : {0, 2, 3}) EXPECT_NEAR(ag.gradient(i), fd(i), 1e-5 * std::max(1.0, std::abs(fd(i))));
}
