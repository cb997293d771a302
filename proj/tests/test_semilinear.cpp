#include "reference_specs.hpp"

#include <hierctl/semilinear.hpp>

#include <gtest/gtest.h>

using namespace hierctl;

namespace {

SpaceTimeField source_of(const ProblemSpec& s, const SpaceTimeField& leader, const QuasiEquilibrium& q) {
    SpaceTimeField src = restricted(leader, s.leader_region);
    src += q.control[0];
    src += q.control[1];
    return src;
}

ProblemSpec spec_2d() {
    Grid g = build_grid(2, {1.0, 1.0}, {9, 9}, 0.5, 8);
    ProblemSpec s = make_spec(g);
    s.leader_region = build_mask(g, Box{{0.2, 0.2}, {0.6, 0.6}});
    s.follower_region = {build_mask(g, Box{{0.5, 0.1}, {0.9, 0.5}}), build_mask(g, Box{{0.1, 0.5}, {0.5, 0.9}})};
    s.target_region = {build_mask(g, Box{{0.3, 0.1}, {0.9, 0.7}}), build_mask(g, Box{{0.1, 0.3}, {0.7, 0.9}})};
    s.tracking_weight = {1.0, 1.0};
    s.initial_state = sample_spatial(g, [](double x, double y) { return 16 * x * (1 - x) * y * (1 - y); });
    clamp_boundary(g, s.initial_state);
    s.target[0] = sample_field(g, [](double x, double y, double) { return 0.3 * std::sin(3.14159 * x * y); });
    s.target[1] = sample_field(g, [](double x, double, double t) { return 0.2 * x * t; });
    return s;
}

} // namespace

TEST(Nonlinearity, TanhDerivatives) {
    Nonlinearity f = Nonlinearity::grad_tanh(0.7, -0.3);
    const double h = 1e-6, u = 0.4;
    Gradient p{-0.8, 0.2};
    EXPECT_NEAR(f.du(u, p), (f.value(u + h, p) - f.value(u - h, p)) / (2 * h), 1e-9);
    EXPECT_NEAR(f.dp(u, p)[0], (f.value(u, {p[0] + h, p[1]}) - f.value(u, {p[0] - h, p[1]})) / (2 * h), 1e-9);
    EXPECT_NEAR(f.duu(u, p), (f.du(u + h, p) - f.du(u - h, p)) / (2 * h), 1e-8);
    EXPECT_NEAR(f.dpp(u, p)[0][0], (f.dp(u, {p[0] + h, p[1]})[0] - f.dp(u, {p[0] - h, p[1]})[0]) / (2 * h), 1e-8);
    EXPECT_DOUBLE_EQ(f.bound, 1.0);
    EXPECT_TRUE(Nonlinearity::zero().is_zero());
}

TEST(Nonlinearity, ExpressionMatchesPreset) {
    Nonlinearity e = Nonlinearity::from_expression(parse_state_expr("0.5*tanh(u) - 0.2*tanh(px)"), 0.7);
    Nonlinearity t = Nonlinearity::grad_tanh(0.5, -0.2);
    EXPECT_FALSE(e.has_second());
    for (double u : {-2.0, 0.0, 0.3, 1.5}) {
        Gradient p{u / 2, 0.0};
        EXPECT_NEAR(e.value(u, p), t.value(u, p), 1e-15);
        EXPECT_NEAR(e.du(u, p), t.du(u, p), 1e-9);
        EXPECT_NEAR(e.dp(u, p)[0], t.dp(u, p)[0], 1e-9);
    }
}

TEST(Nonlinearity, ExpressionRejectsSpaceTimeDependence) {
    EXPECT_THROW(Nonlinearity::from_expression(parse_state_expr("u*x"), 1.0), InvalidSpec);
    EXPECT_THROW(Nonlinearity::from_expression(parse_state_expr("sin(t)"), 1.0), InvalidSpec);
}

TEST(Nonlinearity, SampledBound) {
    BoundReport r = sample_bound(Nonlinearity::tanh(0.5), 5.0, 41);
    EXPECT_NEAR(r.max_du, 0.5, 1e-15);
    EXPECT_EQ(r.max_dp, 0.0);
    EXPECT_TRUE(r.within_bound);
    BoundReport g = sample_bound(Nonlinearity::grad_tanh(0.5, 0.2), 5.0, 21, 2);
    EXPECT_NEAR(g.max_sum, 0.7, 1e-15);
    EXPECT_TRUE(g.within_bound);
    Nonlinearity cubic = Nonlinearity::from_expression(parse_state_expr("u^3"), 10.0);
    EXPECT_FALSE(sample_bound(cubic, 5.0, 11).within_bound);
}

TEST(Secant, CoefficientReproducesIncrement) {
    ProblemSpec s = reference::nash_spec();
    const Grid& g = s.grid;
    Nonlinearity f = Nonlinearity::grad_tanh(0.8, 0.4);
    SpaceTimeField base = sample_field(g, [](double x, double, double t) { return 0.3 * std::sin(x) * (1 + t); });
    SpaceTimeField z = sample_field(g, [](double x, double, double t) { return std::cos(2 * x) * t; });
    clamp_boundary(g, base);
    clamp_boundary(g, z);
    SecantCoefficients c = eval_secant_coeffs(g, f, &base, z);
    auto pb = detail::gradient_field(g, base), pz = detail::gradient_field(g, z);
    for (int k = 0; k < g.levels(); ++k)
        for (int n = 0; n < g.nodes(); ++n) {
            Gradient b0 = detail::at(pb, n, k), dz = detail::at(pz, n, k);
            double inc = f.value(base(n, k) + z(n, k), {b0[0] + dz[0], 0.0}) - f.value(base(n, k), b0);
            EXPECT_NEAR(c.g1(n, k) * z(n, k) + c.g2[0](n, k) * dz[0], inc, 1e-9);
        }
}

TEST(QuasiEquilibrium, ZeroNonlinearityReducesToLinearNash) {
    for (const ProblemSpec& s : {reference::nash_spec(), spec_2d()}) {
        Dynamics d(s);
        SpaceTimeField leader = s.grid.dim == 1 ? reference::nash_leader(s.grid) : SpaceTimeField(s.grid, 1.0);
        clamp_boundary(s.grid, leader);
        NashSolution lin = solve_nash_fixed_point(d, leader);
        QuasiEquilibrium q = solve_quasi_equilibrium(s, Nonlinearity::zero(), leader);
        EXPECT_LT(relative_distance(s.grid, q.state, lin.state), 1e-10);
        for (int i = 0; i < 2; ++i) EXPECT_LT(relative_distance(s.grid, q.control[i], lin.control[i]), 1e-9);
    }
}

TEST(QuasiEquilibrium, TanhSolvesDiscreteSystem) {
    ProblemSpec s = reference::nash_spec();
    SpaceTimeField leader = reference::nash_leader(s.grid);
    Nonlinearity f = Nonlinearity::tanh(0.5);
    QuasiEquilibrium q = solve_quasi_equilibrium(s, f, leader);
    EXPECT_LE(q.iterations, 30);
    QuasiEquilibriumResidual r = quasi_equilibrium_residual(s, f, leader, q);
    EXPECT_LT(r.state, 1e-10);
    EXPECT_LT(r.adjoint[0], 1e-10);
    EXPECT_LT(r.adjoint[1], 1e-10);
    // Newton on each step gives the same state
    SpaceTimeField u = solve_semilinear_state(s, f, source_of(s, leader, q), s.initial_state);
    EXPECT_LT(relative_distance(s.grid, u, q.state), 1e-10);
}

TEST(QuasiEquilibrium, TwoDimensionalGradientNonlinearity) {
    ProblemSpec s = spec_2d();
    SpaceTimeField leader = sample_field(s.grid, [](double x, double y, double t) { return std::sin(6 * x * y + t); });
    clamp_boundary(s.grid, leader);
    Nonlinearity f = Nonlinearity::grad_tanh(0.5, 0.2);
    QuasiEquilibrium q = solve_quasi_equilibrium(s, f, leader);
    QuasiEquilibriumResidual r = quasi_equilibrium_residual(s, f, leader, q);
    EXPECT_LT(r.state, 1e-10);
    EXPECT_LT(std::max(r.adjoint[0], r.adjoint[1]), 1e-10);
}

TEST(QuasiEquilibrium, FollowerCostIsStationary) {
    ProblemSpec s = reference::nash_spec(0.5);
    SpaceTimeField leader = reference::nash_leader(s.grid);
    Nonlinearity f = Nonlinearity::tanh(0.5);
    QuasiEquilibrium q = solve_quasi_equilibrium(s, f, leader);
    std::mt19937_64 rng(13);
    for (int i = 0; i < 2; ++i) {
        SpaceTimeField delta = random_field(s.grid, rng);
        delta.restrict_to(s.follower_region[i]);
        delta *= 1.0 / norm_q(s.grid, delta, s.follower_region[i], TimeRule::Left);
        const double h = 1e-4;
        auto cost = [&](double t) {
            std::array<SpaceTimeField, 2> v = q.control;
            v[i].axpy(t, delta);
            return semilinear_follower_cost(s, f, i, leader, v[0], v[1]);
        };
        double slope = (cost(h) - cost(-h)) / (2 * h);
        double curv = (cost(h) - 2 * cost(0) + cost(-h)) / (h * h);
        EXPECT_LT(std::abs(slope), 1e-6 * curv) << i;
        EXPECT_NEAR(second_order_form(s, f, q, i, delta), curv, 1e-3 * curv) << i;
    }
}

TEST(QuasiEquilibrium, ContractionFailureIsReported) {
    detail::ChangeMonitor mon{3, false};
    EXPECT_FALSE(mon.step(1.0, 1.0, 1e-12, 1, "x"));
    EXPECT_FALSE(mon.step(2.0, 1.0, 1e-12, 2, "x"));
    EXPECT_FALSE(mon.step(4.0, 1.0, 1e-12, 3, "x"));
    EXPECT_THROW(mon.step(8.0, 1.0, 1e-12, 4, "x"), ContractionFailure);
    detail::ChangeMonitor outer{1, true};
    outer.step(1.0, 1.0, 1e-12, 1, "x");
    EXPECT_THROW(outer.step(2.0, 1.0, 1e-12, 2, "x"), OuterDivergence);
    EXPECT_TRUE(outer.step(0.0, 1.0, 1e-12, 3, "x"));
}

TEST(QuasiEquilibrium, IterationBudget) {
    PicardOptions opt;
    opt.max_iter = 2;
    ProblemSpec s = reference::nash_spec();
    EXPECT_THROW(solve_quasi_equilibrium(s, Nonlinearity::tanh(0.5), reference::nash_leader(s.grid), opt), MaxIterations);
}

TEST(SemilinearControl, ZeroNonlinearityMatchesLinearHum) {
    ProblemSpec s = reference::control_spec();
    s.free_initial_state = SpatialField(s.grid.nodes(), 0.0);
    SemilinearControlResult r = semilinear_null_control(s, Nonlinearity::zero(), 1e-3, 1e-10, 30);
    HumResult lin = minimize_G(Dynamics(s), 1e-3);
    EXPECT_EQ(r.outer_iterations, 2);  // second pass confirms a zero change
    EXPECT_NEAR(r.hum.terminal_norm, lin.terminal_norm, 1e-12 * lin.terminal_norm);
    EXPECT_LT(relative_distance(s.grid, r.hum.control, lin.control), 1e-12);
}

TEST(SemilinearControl, TanhConvergesAndDrivesTowardFreeTrajectory) {
    ProblemSpec s = reference::control_spec();
    s.free_initial_state = SpatialField(s.grid.nodes(), 0.0);
    Nonlinearity f = Nonlinearity::tanh(0.5);
    double prev = std::numeric_limits<double>::infinity();
    for (double eps : {1e-2, 1e-3, 1e-4}) {
        SemilinearControlResult r = semilinear_null_control(s, f, eps, 1e-10, 30);
        EXPECT_LE(r.outer_iterations, 30);
        EXPECT_LT(r.mismatch, prev);
        prev = r.mismatch;
        // state is the sum of the free trajectory and the controlled deviation
        for (int n = 0; n < s.grid.nodes(); ++n) EXPECT_EQ(r.free_trajectory(n, 0), 0.0);
        SpaceTimeField u = solve_semilinear_state(s, f, source_of(s, r.hum.control, r.equilibrium), s.initial_state);
        EXPECT_LT(relative_distance(s.grid, u, r.equilibrium.state), 1e-8);
    }
}

TEST(SemilinearControl, RequiresFreeInitialState) {
    EXPECT_THROW(semilinear_null_control(reference::control_spec(), Nonlinearity::tanh(0.5), 1e-3, 1e-10, 30),
                 InvalidSpec);
}

TEST(Sufficiency, TanhFormsArePositive) {
    ProblemSpec s = reference::nash_spec();
    SpaceTimeField leader = reference::nash_leader(s.grid);
    Nonlinearity f = Nonlinearity::tanh(0.5);
    QuasiEquilibrium q = solve_quasi_equilibrium(s, f, leader);
    SufficiencyReport a = verify_equilibrium_sufficiency(s, f, q, 6, 17, 1);
    SufficiencyReport b = verify_equilibrium_sufficiency(s, f, q, 6, 17, 3);
    EXPECT_TRUE(a.verified);
    EXPECT_TRUE(a.outside_dimension_range);
    for (int i = 0; i < 2; ++i) {
        EXPECT_EQ(a.forms[i], b.forms[i]);
        EXPECT_GT(a.min_form[i], 0.0);
        EXPECT_DOUBLE_EQ(a.coefficient[i], a.min_form[i] - s.control_weight[i]);
    }
}

TEST(Sufficiency, LinearFormIsExactQuadratic) {
    // with F = 0 the form is alpha |h|^2 + mu |w|^2
    ProblemSpec s = reference::nash_spec(0.5);
    SpaceTimeField leader = reference::nash_leader(s.grid);
    Nonlinearity f = Nonlinearity::zero();
    QuasiEquilibrium q = solve_quasi_equilibrium(s, f, leader);
    std::mt19937_64 rng(2);
    SpaceTimeField w = random_field(s.grid, rng);
    w.restrict_to(s.follower_region[1]);
    Propagator p(s.grid, s.coefficients);
    SpaceTimeField h = p.forward(w, SpatialField(s.grid.nodes(), 0.0));
    double want = 0.5 * norm2_q(s.grid, h, s.target_region[1], TimeRule::Right) +
                  norm2_q(s.grid, w, s.follower_region[1], TimeRule::Left);
    EXPECT_NEAR(second_order_form(s, f, q, 1, w), want, 1e-10 * want);
}

TEST(Sufficiency, TwoDimensionalNotOutsideRange) {
    ProblemSpec s = spec_2d();
    SpaceTimeField leader(s.grid, 0.5);
    clamp_boundary(s.grid, leader);
    Nonlinearity f = Nonlinearity::grad_tanh(0.5, 0.2);
    QuasiEquilibrium q = solve_quasi_equilibrium(s, f, leader);
    SufficiencyReport r = verify_equilibrium_sufficiency(s, f, q, 4, 3);
    EXPECT_FALSE(r.outside_dimension_range);
    EXPECT_TRUE(r.verified);
}

TEST(Sufficiency, ExpressionInputIsUnsupported) {
    ProblemSpec s = reference::nash_spec();
    Nonlinearity f = Nonlinearity::from_expression(parse_state_expr("0.5*tanh(u)"), 0.5);
    QuasiEquilibrium q = solve_quasi_equilibrium(s, f, reference::nash_leader(s.grid));
    EXPECT_THROW(verify_equilibrium_sufficiency(s, f, q, 3, 1), Unsupported);
    EXPECT_THROW(second_order_form(s, f, q, 0, SpaceTimeField(s.grid, 1.0)), Unsupported);
}
