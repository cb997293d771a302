#pragma once

#include <hierctl/expr.hpp>
#include <hierctl/hum.hpp>
#include <hierctl/parallel.hpp>

#include <functional>

namespace hierctl {

using Gradient = std::array<double, 2>;

/// Nonlinear term F(u, p) with p the spatial gradient, plus the derivatives the solvers need.
struct Nonlinearity {
    std::string name = "zero";
    std::function<double(double, Gradient)> value;
    std::function<double(double, Gradient)> du;
    std::function<Gradient(double, Gradient)> dp;
    /// Second derivatives: F_uu, grad_p F_u and the Hessian in p. Absent for expression input.
    std::function<double(double, Gradient)> duu;
    std::function<Gradient(double, Gradient)> dpu;
    std::function<std::array<Gradient, 2>(double, Gradient)> dpp;
    /// Declared bound M on |F_u| + |grad_p F|.
    double bound = 0.0;

    bool has_second() const { return static_cast<bool>(duu); }
    bool is_zero() const { return name == "zero"; }

    static Nonlinearity zero() {
        Nonlinearity f;
        f.value = [](double, Gradient) { return 0.0; };
        f.du = [](double, Gradient) { return 0.0; };
        f.dp = [](double, Gradient) { return Gradient{0.0, 0.0}; };
        f.duu = [](double, Gradient) { return 0.0; };
        f.dpu = [](double, Gradient) { return Gradient{0.0, 0.0}; };
        f.dpp = [](double, Gradient) { return std::array<Gradient, 2>{}; };
        return f;
    }

    /// F = c tanh(u)
    static Nonlinearity tanh(double c) { return grad_tanh(c, 0.0, "tanh"); }

    /// F = c1 tanh(u) + c2 tanh(p_x)
    static Nonlinearity grad_tanh(double c1, double c2, std::string name = "grad-tanh") {
        auto sech2 = [](double v) {
            double c = std::cosh(v);
            return 1.0 / (c * c);
        };
        Nonlinearity f;
        f.name = std::move(name);
        f.value = [=](double u, Gradient p) { return c1 * std::tanh(u) + c2 * std::tanh(p[0]); };
        f.du = [=](double u, Gradient) { return c1 * sech2(u); };
        f.dp = [=](double, Gradient p) { return Gradient{c2 * sech2(p[0]), 0.0}; };
        f.duu = [=](double u, Gradient) { return -2.0 * c1 * sech2(u) * std::tanh(u); };
        f.dpu = [](double, Gradient) { return Gradient{0.0, 0.0}; };
        f.dpp = [=](double, Gradient p) {
            std::array<Gradient, 2> h{};
            h[0][0] = -2.0 * c2 * sech2(p[0]) * std::tanh(p[0]);
            return h;
        };
        f.bound = std::abs(c1) + std::abs(c2);
        return f;
    }

    /// User expression in u, px, py. First derivatives by central differences; the bound is
    /// supplied by the caller.
    static Nonlinearity from_expression(const Expression& e, double bound) {
        if (e.uses(Var::X) || e.uses(Var::Y) || e.uses(Var::T))
            throw InvalidSpec("nonlinearity may only depend on u, px, py");
        Nonlinearity f;
        f.name = "expression:" + e.str();
        auto call = [e](double u, Gradient p) {
            Bindings b;
            b.u = u;
            b.px = p[0];
            b.py = p[1];
            return e.eval(b);
        };
        constexpr double step = 1e-6;
        f.value = call;
        f.du = [call](double u, Gradient p) { return (call(u + step, p) - call(u - step, p)) / (2.0 * step); };
        f.dp = [call](double u, Gradient p) {
            Gradient out{};
            for (int a = 0; a < 2; ++a) {
                Gradient hi = p, lo = p;
                hi[a] += step;
                lo[a] -= step;
                out[a] = (call(u, hi) - call(u, lo)) / (2.0 * step);
            }
            return out;
        };
        f.bound = bound;
        return f;
    }
};

struct BoundReport {
    double max_du = 0.0;
    double max_dp = 0.0;
    double max_sum = 0.0;
    bool within_bound = false;
};

/// Samples |F_u| and |grad_p F| on a uniform (u, p_x, p_y) lattice over [-range, range].
inline BoundReport sample_bound(const Nonlinearity& f, double range, int per_axis, int dim = 1) {
    BoundReport r;
    auto coord = [&](int i) { return -range + 2.0 * range * i / (per_axis - 1); };
    int ny = dim == 2 ? per_axis : 1;
    for (int i = 0; i < per_axis; ++i)
        for (int j = 0; j < per_axis; ++j)
            for (int k = 0; k < ny; ++k) {
                double u = coord(i);
                Gradient p{coord(j), dim == 2 ? coord(k) : 0.0};
                double a = std::abs(f.du(u, p));
                Gradient g = f.dp(u, p);
                double b = std::hypot(g[0], g[1]);
                r.max_du = std::max(r.max_du, a);
                r.max_dp = std::max(r.max_dp, b);
                r.max_sum = std::max(r.max_sum, a + b);
            }
    r.within_bound = r.max_sum <= f.bound * (1.0 + 1e-12);
    return r;
}

namespace detail {
inline std::vector<SpaceTimeField> gradient_field(const Grid& g, const SpaceTimeField& u) {
    std::vector<SpaceTimeField> out(g.dim, SpaceTimeField(g));
    for (int a = 0; a < g.dim; ++a)
        for (int k = 0; k < g.levels(); ++k) out[a].set_level(k, centered_difference(g, u.level(k), a));
    return out;
}

inline Gradient at(const std::vector<SpaceTimeField>& p, int n, int k) {
    Gradient out{};
    for (std::size_t a = 0; a < p.size(); ++a) out[a] = p[a](n, k);
    return out;
}

/// Discrete norm of (z, grad z) over the cylinder.
inline double h1_norm(const Grid& g, const SpaceTimeField& z) {
    double s = norm2_q(g, z, closure_mask(g));
    for (const auto& d : gradient_field(g, z)) s += norm2_q(g, d, closure_mask(g));
    return std::sqrt(s);
}

inline constexpr std::array<double, 8> gauss_nodes{
    0.019855071751231856, 0.10166676129318664, 0.2372337950418355, 0.40828267875217505,
    0.59171732124782495,  0.7627662049581645,  0.89833323870681336, 0.98014492824876814};
inline constexpr std::array<double, 8> gauss_weights{
    0.050614268145188129, 0.11119051722668724, 0.15685332293894364, 0.18134189168918099,
    0.18134189168918099,  0.15685332293894364, 0.11119051722668724, 0.050614268145188129};
} // namespace detail

struct SecantCoefficients {
    SpaceTimeField g1;
    std::vector<SpaceTimeField> g2;
};

/// G1 = int_0^1 F_u(base + tau z, grad base + tau grad z) dtau and G2 likewise with grad_p F,
/// by 8-point Gauss-Legendre. A null base means zero.
inline SecantCoefficients eval_secant_coeffs(const Grid& g, const Nonlinearity& f, const SpaceTimeField* base,
                                             const SpaceTimeField& z) {
    SecantCoefficients c{SpaceTimeField(g), std::vector<SpaceTimeField>(g.dim, SpaceTimeField(g))};
    auto pz = detail::gradient_field(g, z);
    std::vector<SpaceTimeField> pb;
    if (base) pb = detail::gradient_field(g, *base);
    for (int k = 0; k < g.levels(); ++k)
        for (int n = 0; n < g.nodes(); ++n) {
            double u0 = base ? (*base)(n, k) : 0.0;
            Gradient p0 = base ? detail::at(pb, n, k) : Gradient{};
            Gradient dz = detail::at(pz, n, k);
            double s1 = 0.0;
            Gradient s2{};
            for (int q = 0; q < 8; ++q) {
                double tau = detail::gauss_nodes[q], wq = detail::gauss_weights[q];
                double u = u0 + tau * z(n, k);
                Gradient p{p0[0] + tau * dz[0], p0[1] + tau * dz[1]};
                s1 += wq * f.du(u, p);
                Gradient d = f.dp(u, p);
                s2[0] += wq * d[0];
                s2[1] += wq * d[1];
            }
            c.g1(n, k) = s1;
            for (int a = 0; a < g.dim; ++a) c.g2[a](n, k) = s2[a];
        }
    return c;
}

/// Coefficients after moving the frozen terms to the left: a - G1, B - G2.
inline Coefficients shifted_coefficients(const Coefficients& base, const SecantCoefficients& s) {
    Coefficients c = base;
    c.reaction -= s.g1;
    for (std::size_t a = 0; a < c.drift.size(); ++a) c.drift[a] -= s.g2[a];
    return c;
}

/// a - F_u(u, grad u), B - grad_p F(u, grad u): the operator linearized at u.
inline Coefficients linearized_coefficients(const Grid& g, const Coefficients& base, const Nonlinearity& f,
                                            const SpaceTimeField& u) {
    Coefficients c = base;
    auto pu = detail::gradient_field(g, u);
    for (int k = 0; k < g.levels(); ++k)
        for (int n = 0; n < g.nodes(); ++n) {
            Gradient p = detail::at(pu, n, k);
            c.reaction(n, k) -= f.du(u(n, k), p);
            Gradient d = f.dp(u(n, k), p);
            for (int a = 0; a < g.dim; ++a) c.drift[a](n, k) -= d[a];
        }
    return c;
}

struct QuasiEquilibrium {
    SpaceTimeField state;
    std::array<SpaceTimeField, 2> adjoint;
    std::array<SpaceTimeField, 2> control;
    int iterations = 0;
    std::vector<double> history;
};

struct PicardOptions {
    double tol_rel = 1e-12;
    int max_iter = 200;
    double damping = 1.0;
    int growth_limit = 10;
};

namespace detail {
inline SpaceTimeField constant_source(const Grid& g, double v) {
    SpaceTimeField s(g, v);
    clamp_boundary(g, s);
    return s;
}

/// Picard bookkeeping shared by the loops below: returns true when converged and throws on
/// persistent growth.
struct ChangeMonitor {
    int limit;
    bool outer;
    double prev = 0.0;
    int growth = 0;
    bool step(double change, double scale, double tol, int it, const char* what) {
        if (!std::isfinite(change)) {
            if (outer) throw OuterDivergence(std::string(what) + ": iterate is not finite", 0.0, it);
            throw ContractionFailure(std::string(what) + ": iterate is not finite", 0.0, it);
        }
        if (change == 0.0 || change <= tol * scale) return true;
        if (it > 1 && change > prev) {
            if (++growth >= limit) {
                if (outer) throw OuterDivergence(std::string(what) + " keeps growing", change / prev, it);
                throw ContractionFailure(std::string(what) + " keeps growing", change / prev, it);
            }
        } else {
            growth = 0;
        }
        prev = change;
        return false;
    }
};
} // namespace detail

/// Solves the coupled semilinear optimality system for a fixed leader by Picard on the state:
/// each pass freezes z in the secant coefficients, the adjoint coefficients and the tracking
/// term, then solves the followers' adjoints and the state once.
inline QuasiEquilibrium solve_quasi_equilibrium(const ProblemSpec& spec, const Nonlinearity& f,
                                                const SpaceTimeField& leader, const PicardOptions& opt = {}) {
    validate(spec);
    const Grid& g = spec.grid;
    const double f00 = f.value(0.0, Gradient{});
    if (!std::isfinite(f00)) throw InvalidSpec("F(0,0) is not finite");
    QuasiEquilibrium q;
    SpaceTimeField z(g);
    detail::ChangeMonitor mon{opt.growth_limit, false};
    for (int it = 1; it <= opt.max_iter; ++it) {
        ProblemSpec s = spec;
        s.coefficients = shifted_coefficients(spec.coefficients, eval_secant_coeffs(g, f, nullptr, z));
        s.follower_coefficients = linearized_coefficients(g, spec.coefficients, f, z);
        Dynamics d(std::move(s));
        std::array<SpaceTimeField, 2> adj, ctl;
        SpaceTimeField src = restricted(leader, spec.leader_region);
        for (int i = 0; i < 2; ++i) {
            adj[i] = detail::follower_adjoint(d, i, z);
            ctl[i] = detail::control_from_adjoint(d, i, adj[i]);
            src += ctl[i];
        }
        if (f00 != 0.0) src += detail::constant_source(g, f00);
        SpaceTimeField u = d.state().forward(src, spec.initial_state);
        double change = detail::h1_norm(g, u - z);
        double scale = detail::h1_norm(g, u);
        q.history.push_back(change);
        q.iterations = it;
        bool done = mon.step(change, scale, opt.tol_rel, it, "semilinear Picard iteration");
        if (done || it == opt.max_iter) {
            q.state = std::move(u);
            q.adjoint = std::move(adj);
            q.control = std::move(ctl);
            if (!done) throw MaxIterations("semilinear Picard iteration did not converge", q.state.values(), change);
            return q;
        }
        if (opt.damping < 1.0) {
            z *= 1.0 - opt.damping;
            z.axpy(opt.damping, u);
        } else {
            z = std::move(u);
        }
    }
    throw MaxIterations("semilinear Picard iteration did not converge", z.values(), 0.0);
}

/// Discrete semilinear state: (I + dt L) u^{k+1} - dt F(u^{k+1}, D u^{k+1}) = u^k + dt source^k,
/// each step solved by Newton's method.
inline SpaceTimeField solve_semilinear_state(const ProblemSpec& spec, const Nonlinearity& f,
                                             const SpaceTimeField& source, std::span<const double> initial) {
    const Grid& g = spec.grid;
    InteriorIndex idx(g);
    SparseMatrix bih = assemble_biharmonic(g);
    SparseMatrix eye = SparseMatrix::identity(idx.size());
    Coefficients lin = Coefficients::zero(g);
    SpaceTimeField u(g);
    u.set_level(0, initial);
    clamp_boundary(g, u.level(0));
    for (int k = 0; k < g.nt; ++k) {
        Vector rhs = idx.gather(u.level(k));
        Vector src = idx.gather(source.level(k));
        for (std::size_t m = 0; m < rhs.size(); ++m) rhs[m] += g.dt * src[m];
        SparseMatrix base = eye.combine(1.0, assemble_generator(g, spec.coefficients, k + 1, bih), g.dt);
        SpatialField cur(u.level(k).begin(), u.level(k).end());
        for (int it = 0; it < 50; ++it) {
            std::vector<SpatialField> p;
            for (int a = 0; a < g.dim; ++a) p.push_back(centered_difference(g, cur, a));
            Vector x = idx.gather(cur);
            Vector res = base.multiply(x);
            for (int m = 0; m < idx.size(); ++m) {
                int n = idx.node_of[m];
                Gradient pn{p[0][n], g.dim == 2 ? p[1][n] : 0.0};
                res[m] -= g.dt * f.value(cur[n], pn) + rhs[m];
                lin.reaction(n, k + 1) = -f.du(cur[n], pn);
                Gradient dp = f.dp(cur[n], pn);
                for (int a = 0; a < g.dim; ++a) lin.drift[a](n, k + 1) = -dp[a];
            }
            SparseMatrix jac = eye.combine(1.0, assemble_generator(g, lin, k + 1, SparseMatrix(idx.size(), {})), g.dt);
            jac = jac.combine(1.0, base, 1.0).combine(1.0, eye, -1.0);
            Vector delta = Factorization(jac).solve(res);
            double dmax = 0.0, xmax = 0.0;
            for (int m = 0; m < idx.size(); ++m) {
                cur[idx.node_of[m]] -= delta[m];
                dmax = std::max(dmax, std::abs(delta[m]));
                xmax = std::max(xmax, std::abs(cur[idx.node_of[m]]));
            }
            if (!std::isfinite(dmax)) throw NonFiniteBreakdown("Newton step is not finite");
            if (dmax <= 1e-14 * (1.0 + xmax)) break;
        }
        u.set_level(k + 1, cur);
    }
    return u;
}

/// Follower cost evaluated on the discrete semilinear state.
inline double semilinear_follower_cost(const ProblemSpec& spec, const Nonlinearity& f, int i,
                                       const SpaceTimeField& leader, const SpaceTimeField& v1,
                                       const SpaceTimeField& v2) {
    const Grid& g = spec.grid;
    SpaceTimeField src = restricted(leader, spec.leader_region);
    src += restricted(v1, spec.follower_region[0]);
    src += restricted(v2, spec.follower_region[1]);
    SpaceTimeField u = solve_semilinear_state(spec, f, src, spec.initial_state);
    const SpaceTimeField& v = i == 0 ? v1 : v2;
    return 0.5 * spec.tracking_weight[i] * norm2_q(g, u - spec.target[i], spec.target_region[i], TimeRule::Right) +
           0.5 * spec.control_weight[i] * norm2_q(g, v, spec.follower_region[i], TimeRule::Left);
}

struct QuasiEquilibriumResidual {
    double state = 0.0;
    std::array<double, 2> adjoint{0.0, 0.0};
};

/// Plugs a solution back into the stepped equations with F evaluated directly.
inline QuasiEquilibriumResidual quasi_equilibrium_residual(const ProblemSpec& spec, const Nonlinearity& f,
                                                           const SpaceTimeField& leader, const QuasiEquilibrium& q) {
    const Grid& g = spec.grid;
    InteriorIndex idx(g);
    QuasiEquilibriumResidual r;
    Coefficients lin = linearized_coefficients(g, spec.coefficients, f, q.state);
    Propagator plain(g, spec.coefficients), follower(g, lin);
    SpaceTimeField src = restricted(leader, spec.leader_region);
    src += q.control[0];
    src += q.control[1];
    double num = 0.0, den = 0.0;
    for (int k = 0; k < g.nt; ++k) {
        Vector x = idx.gather(q.state.level(k + 1));
        Vector lhs = plain.step_matrix(k + 1).multiply(x);
        Vector prev = idx.gather(q.state.level(k));
        Vector s = idx.gather(src.level(k));
        std::vector<SpatialField> p;
        for (int a = 0; a < g.dim; ++a) p.push_back(centered_difference(g, q.state.level(k + 1), a));
        for (int m = 0; m < idx.size(); ++m) {
            int n = idx.node_of[m];
            Gradient pn{p[0][n], g.dim == 2 ? p[1][n] : 0.0};
            double fv = g.dt * f.value(q.state(n, k + 1), pn);
            double e = lhs[m] - fv - prev[m] - g.dt * s[m];
            num += e * e;
            den += prev[m] * prev[m] + g.dt * g.dt * s[m] * s[m] + fv * fv;
        }
    }
    r.state = std::sqrt(num / std::max(den, detail::tiny));
    for (int i = 0; i < 2; ++i) {
        double n2 = 0.0, d2 = 0.0;
        for (int k = 0; k < g.nt; ++k) {
            Vector lhs = follower.step_matrix(k + 1).transpose().multiply(idx.gather(q.adjoint[i].level(k)));
            Vector next = idx.gather(q.adjoint[i].level(k + 1));
            for (int m = 0; m < idx.size(); ++m) {
                int n = idx.node_of[m];
                double track = spec.target_region[i][n]
                                   ? g.dt * spec.tracking_weight[i] * (q.state(n, k + 1) - spec.target[i](n, k + 1))
                                   : 0.0;
                double e = lhs[m] - next[m] - track;
                n2 += e * e;
                d2 += next[m] * next[m] + track * track;
            }
        }
        r.adjoint[i] = d2 > 0.0 ? std::sqrt(n2 / d2) : std::sqrt(n2);
    }
    return r;
}

/// Uncontrolled semilinear trajectory from the free initial datum, by Picard on the secant
/// coefficients.
inline SpaceTimeField semilinear_free_trajectory(const ProblemSpec& spec, const Nonlinearity& f,
                                                 const PicardOptions& opt = {}) {
    if (!spec.free_initial_state) throw InvalidSpec("trajectory data missing");
    const Grid& g = spec.grid;
    const double f00 = f.value(0.0, Gradient{});
    SpaceTimeField z(g);
    detail::ChangeMonitor mon{opt.growth_limit, false};
    for (int it = 1; it <= opt.max_iter; ++it) {
        Coefficients c = shifted_coefficients(spec.coefficients, eval_secant_coeffs(g, f, nullptr, z));
        Propagator p(g, c);
        SpaceTimeField src(g);
        if (f00 != 0.0) src = detail::constant_source(g, f00);
        SpaceTimeField u = p.forward(src, *spec.free_initial_state);
        double change = detail::h1_norm(g, u - z);
        bool done = mon.step(change, detail::h1_norm(g, u), opt.tol_rel, it, "free trajectory iteration");
        z = std::move(u);
        if (done) return z;
    }
    throw MaxIterations("free trajectory iteration did not converge", z.values(), mon.prev);
}

struct SemilinearControlResult {
    HumResult hum;
    QuasiEquilibrium equilibrium;
    SpaceTimeField free_trajectory;
    int outer_iterations = 0;
    std::vector<double> outer_history;
    double mismatch = 0.0;
};

/// Null control of w = u - u_free: the outer loop freezes z in the secant coefficients (based
/// at the free trajectory) and in the follower linearization, runs the linear HUM solver on
/// that frozen system, and updates z with its state.
inline SemilinearControlResult semilinear_null_control(const ProblemSpec& spec, const Nonlinearity& f, double eps,
                                                       double outer_tol, int max_outer, const HumOptions& hum = {},
                                                       const PicardOptions& free_opt = {}, int growth_limit = 5) {
    validate(spec);
    const Grid& g = spec.grid;
    SemilinearControlResult out;
    out.free_trajectory = semilinear_free_trajectory(spec, f, free_opt);
    ProblemSpec base = spec;
    for (int n = 0; n < g.nodes(); ++n) base.initial_state[n] -= (*spec.free_initial_state)[n];
    for (int i = 0; i < 2; ++i) base.target[i] = spec.target[i] - out.free_trajectory;
    SpaceTimeField z(g);
    detail::ChangeMonitor mon{growth_limit, true};
    for (int it = 1; it <= max_outer; ++it) {
        ProblemSpec s = base;
        s.coefficients = shifted_coefficients(spec.coefficients, eval_secant_coeffs(g, f, &out.free_trajectory, z));
        s.follower_coefficients =
            linearized_coefficients(g, spec.coefficients, f, out.free_trajectory + z);
        Dynamics d(std::move(s));
        out.hum = minimize_G(d, eps, hum);
        const SpaceTimeField& w = out.hum.nash.state;
        double change = detail::h1_norm(g, w - z);
        out.outer_history.push_back(change);
        out.outer_iterations = it;
        bool done = mon.step(change, detail::h1_norm(g, w), outer_tol, it, "semilinear outer loop");
        z = w;
        if (done) break;
        if (it == max_outer) throw MaxIterations("semilinear outer loop did not converge", z.values(), change);
    }
    out.equilibrium.state = out.hum.nash.state + out.free_trajectory;
    out.equilibrium.adjoint = out.hum.nash.adjoint;
    out.equilibrium.control = out.hum.nash.control;
    out.equilibrium.iterations = out.hum.nash.iterations;
    out.equilibrium.history = out.hum.nash.history;
    out.mismatch = out.hum.terminal_norm;
    return out;
}

/// Second variation of follower i's cost in direction w at a converged quasi-equilibrium.
inline double second_order_form(const ProblemSpec& spec, const Nonlinearity& f, const QuasiEquilibrium& q, int i,
                                const SpaceTimeField& direction) {
    if (!f.has_second()) throw Unsupported("second-order check needs analytic second derivatives");
    const Grid& g = spec.grid;
    Coefficients lin = linearized_coefficients(g, spec.coefficients, f, q.state);
    Propagator p(g, lin);
    SpaceTimeField w = restricted(direction, spec.follower_region[i]);
    SpatialField zero(g.nodes(), 0.0);
    SpaceTimeField h = p.forward(w, zero);
    auto pu = detail::gradient_field(g, q.state);
    auto ph = detail::gradient_field(g, h);
    const SpaceTimeField& phi = q.adjoint[i];
    SpaceTimeField src = restricted(h, spec.target_region[i]);
    src *= spec.tracking_weight[i];
    for (int k = 1; k <= g.nt; ++k) {
        std::vector<SpatialField> flux(g.dim, SpatialField(g.nodes(), 0.0));
        for (int n = 0; n < g.nodes(); ++n) {
            if (g.on_boundary(n)) continue;
            double u = q.state(n, k);
            Gradient pn = detail::at(pu, n, k), dh = detail::at(ph, n, k);
            Gradient fpu = f.dpu(u, pn);
            auto fpp = f.dpp(u, pn);
            double ph_k = phi(n, k - 1);
            src(n, k) += (f.duu(u, pn) * h(n, k) + fpu[0] * dh[0] + fpu[1] * dh[1]) * ph_k;
            for (int a = 0; a < g.dim; ++a)
                flux[a][n] = (fpu[a] * h(n, k) + fpp[a][0] * dh[0] + fpp[a][1] * dh[1]) * ph_k;
        }
        for (int a = 0; a < g.dim; ++a) {
            SpatialField dv = centered_difference_transpose(g, flux[a], a);
            for (int n = 0; n < g.nodes(); ++n) src(n, k) += dv[n];
        }
    }
    SpaceTimeField eta = p.backward(src, zero);
    double pair = integrate(g, eta, spec.follower_region[i], &w, TimeRule::Left);
    return pair + spec.control_weight[i] * norm2_q(g, w, spec.follower_region[i], TimeRule::Left);
}

struct SufficiencyReport {
    std::array<std::vector<double>, 2> forms;
    std::array<double, 2> min_form{0.0, 0.0};
    /// min over directions of (form - mu |w|^2) / |w|^2.
    std::array<double, 2> coefficient{0.0, 0.0};
    bool verified = true;
    /// Positivity of the form is only known to imply an equilibrium from two space dimensions up.
    bool outside_dimension_range = false;
};

inline SufficiencyReport verify_equilibrium_sufficiency(const ProblemSpec& spec, const Nonlinearity& f,
                                                        const QuasiEquilibrium& q, int n_directions,
                                                        std::uint64_t seed, int threads = 1) {
    if (!f.has_second()) throw Unsupported("second-order check needs analytic second derivatives");
    const Grid& g = spec.grid;
    SufficiencyReport rep;
    rep.outside_dimension_range = g.dim < 2;
    if (n_directions <= 0) {
        rep.min_form = rep.coefficient = {0.0, 0.0};
        return rep;
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    for (int i = 0; i < 2; ++i) {
        std::vector<SpaceTimeField> dirs;
        for (int k = 0; k < n_directions; ++k) {
            SpaceTimeField w(g);
            for (double& v : w.values()) v = normal(rng);
            w.restrict_to(spec.follower_region[i]);
            for (int n = 0; n < g.nodes(); ++n) w(n, g.nt) = 0.0;
            w *= 1.0 / norm_q(g, w, spec.follower_region[i], TimeRule::Left);
            dirs.push_back(std::move(w));
        }
        rep.forms[i].resize(n_directions);
        parallel_for(n_directions, threads, [&](int k) { rep.forms[i][k] = second_order_form(spec, f, q, i, dirs[k]); });
        rep.min_form[i] = *std::min_element(rep.forms[i].begin(), rep.forms[i].end());
        rep.coefficient[i] = rep.min_form[i] - spec.control_weight[i];
        for (double v : rep.forms[i])
            if (!(v > 0.0)) rep.verified = false;
    }
    return rep;
}

} // namespace hierctl
