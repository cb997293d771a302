#pragma once

#include <hierctl/operators.hpp>

#include <array>
#include <limits>

namespace hierctl {

struct NashSolution {
    SpaceTimeField state;
    std::array<SpaceTimeField, 2> adjoint;
    std::array<SpaceTimeField, 2> control;
    int iterations = 0;
    /// Absolute L2(Q) norm of each iterate change.
    std::vector<double> history;
    /// Per-iteration first-order residuals of each follower.
    std::vector<std::array<double, 2>> residual_history;
    std::array<double, 2> residuals{0.0, 0.0};
};

struct NashDiagnostics {
    double m0_estimate = 0.0;
    double coercivity_margin = 0.0;
    double contraction_factor = 0.0;
};

struct FixedPointOptions {
    double tol_rel = 1e-12;
    int max_iter = 200;
    /// Relaxation factor in (0,1]; 1 means the plain map.
    double damping = 1.0;
    /// Consecutive growing updates that abort the iteration.
    int growth_limit = 10;
};

namespace detail {
constexpr double tiny = 1e-300;

inline double relative(double num, double den) {
    if (num == 0.0) return 0.0;
    return num / std::max(den, tiny);
}

/// Follower adjoint from a frozen state: backward solve with alpha_i (z - target_i) on the target region.
inline SpaceTimeField follower_adjoint(const Dynamics& d, int i, const SpaceTimeField& z) {
    const auto& s = d.spec();
    SpaceTimeField src = z - s.target[i];
    src.restrict_to(s.target_region[i]);
    src *= s.tracking_weight[i];
    return d.follower().backward(src, SpatialField(d.grid().nodes(), 0.0));
}

/// v_i = -phi_i / mu_i on the follower region, zero elsewhere.
inline SpaceTimeField control_from_adjoint(const Dynamics& d, int i, const SpaceTimeField& adjoint) {
    const auto& s = d.spec();
    SpaceTimeField v(d.grid());
    const double mu = s.control_weight[i];
    for (int k = 0; k < v.levels(); ++k)
        for (int n = 0; n < v.nodes(); ++n)
            if (s.follower_region[i][n]) v(n, k) = -adjoint(n, k) / mu;
    return v;
}

inline double control_norm(const Dynamics& d, int i, const SpaceTimeField& f) {
    return norm_q(d.grid(), f, d.spec().follower_region[i], TimeRule::Left);
}
} // namespace detail

/// A_i v: state response to follower i's control from zero initial data.
inline SpaceTimeField apply_response(const Dynamics& d, int i, const SpaceTimeField& control) {
    SpaceTimeField src = restricted(control, d.spec().follower_region[i]);
    return d.state().forward(src, SpatialField(d.grid().nodes(), 0.0));
}

/// Adjoint of apply_response between the control pairing (left rule) and the state pairing
/// (right rule).
inline SpaceTimeField apply_response_adjoint(const Dynamics& d, int i, const SpaceTimeField& g) {
    SpaceTimeField p = d.state().backward(g, SpatialField(d.grid().nodes(), 0.0));
    p.restrict_to(d.spec().follower_region[i]);
    return p;
}

using ControlPair = std::array<SpaceTimeField, 2>;

/// Left-hand operator of the follower equilibrium equation.
inline ControlPair apply_A(const Dynamics& d, const SpaceTimeField& v1, const SpaceTimeField& v2) {
    const auto& s = d.spec();
    SpaceTimeField src = restricted(v1, s.follower_region[0]);
    src += restricted(v2, s.follower_region[1]);
    SpaceTimeField reach = d.state().forward(src, SpatialField(d.grid().nodes(), 0.0));
    ControlPair out;
    const SpaceTimeField* v[2] = {&v1, &v2};
    for (int i = 0; i < 2; ++i) {
        SpaceTimeField g = restricted(reach, s.target_region[i]);
        out[i] = apply_response_adjoint(d, i, g);
        out[i] *= s.tracking_weight[i];
        out[i].axpy(s.control_weight[i], restricted(*v[i], s.follower_region[i]));
    }
    return out;
}

/// Right-hand side of the equilibrium equation for leader f and the problem data.
inline ControlPair compute_rhs(const Dynamics& d, const SpaceTimeField& leader) {
    const auto& s = d.spec();
    SpaceTimeField free = d.state().forward(restricted(leader, s.leader_region), s.initial_state);
    ControlPair out;
    for (int i = 0; i < 2; ++i) {
        SpaceTimeField g = s.target[i] - free;
        g.restrict_to(s.target_region[i]);
        out[i] = apply_response_adjoint(d, i, g);
        out[i] *= s.tracking_weight[i];
    }
    return out;
}

/// Relative first-order residual ||alpha_i A_i^*((w - w_id) chi) + mu_i v_i|| / ||mu_i v_i||.
inline std::array<double, 2> verify_first_order(const Dynamics& d, const NashSolution& sol) {
    const auto& s = d.spec();
    std::array<double, 2> out{};
    for (int i = 0; i < 2; ++i) {
        SpaceTimeField g = sol.state - s.target[i];
        g.restrict_to(s.target_region[i]);
        SpaceTimeField r = apply_response_adjoint(d, i, g);
        r *= s.tracking_weight[i];
        SpaceTimeField mv = restricted(sol.control[i], s.follower_region[i]);
        mv *= s.control_weight[i];
        r += mv;
        out[i] = detail::relative(detail::control_norm(d, i, r), detail::control_norm(d, i, mv));
    }
    return out;
}

/// Iterates z -> w^z: both follower adjoints backward from the frozen z, then the state forward.
inline NashSolution solve_nash_fixed_point(const Dynamics& d, const SpaceTimeField& leader,
                                           const FixedPointOptions& opt = {}) {
    const auto& s = d.spec();
    const Grid& g = d.grid();
    SpaceTimeField leader_src = restricted(leader, s.leader_region);
    NashSolution sol;
    SpaceTimeField z(g);
    std::array<SpaceTimeField, 2> adj{detail::follower_adjoint(d, 0, z), detail::follower_adjoint(d, 1, z)};
    int growth = 0;
    double prev_change = 0.0;
    for (int it = 1; it <= opt.max_iter; ++it) {
        std::array<SpaceTimeField, 2> ctl{detail::control_from_adjoint(d, 0, adj[0]),
                                          detail::control_from_adjoint(d, 1, adj[1])};
        SpaceTimeField src = leader_src;
        src += ctl[0];
        src += ctl[1];
        SpaceTimeField w = d.state().forward(src, s.initial_state);
        std::array<SpaceTimeField, 2> next{detail::follower_adjoint(d, 0, w), detail::follower_adjoint(d, 1, w)};

        std::array<double, 2> res{};
        for (int i = 0; i < 2; ++i) {
            SpaceTimeField diff = restricted(next[i] - adj[i], s.follower_region[i]);
            res[i] = detail::relative(detail::control_norm(d, i, diff),
                                      detail::control_norm(d, i, restricted(adj[i], s.follower_region[i])));
        }
        double change = norm_q(g, w - z);
        double scale = norm_q(g, w);
        sol.history.push_back(change);
        sol.residual_history.push_back(res);
        if (!std::isfinite(change))
            throw ContractionFailure("fixed-point iterate is not finite", prev_change > 0 ? change / prev_change : 0.0, it);

        bool done = change == 0.0 || change <= opt.tol_rel * scale;
        if (done || it == opt.max_iter) {
            sol.state = std::move(w);
            sol.adjoint = std::move(adj);
            sol.control = std::move(ctl);
            sol.iterations = it;
            sol.residuals = res;
            if (!done)
                throw MaxIterations("follower fixed point did not converge", sol.state.values(), change / std::max(scale, detail::tiny));
            return sol;
        }
        if (it > 1 && change > prev_change) {
            if (++growth >= opt.growth_limit)
                throw ContractionFailure("follower fixed point is not contracting", change / prev_change, it);
        } else {
            growth = 0;
        }
        prev_change = change;
        if (opt.damping < 1.0) {
            z *= (1.0 - opt.damping);
            z.axpy(opt.damping, w);
            adj = {detail::follower_adjoint(d, 0, z), detail::follower_adjoint(d, 1, z)};
        } else {
            z = std::move(w);
            adj = std::move(next);
        }
    }
    throw MaxIterations("follower fixed point did not converge", z.values(), 0.0);
}

/// Richardson iteration v <- v + omega (B - A v) / mu on the equilibrium equation.
inline NashSolution solve_nash_richardson(const Dynamics& d, const SpaceTimeField& leader, double tol_rel,
                                          int max_iter, double omega = 1.0) {
    const auto& s = d.spec();
    const Grid& g = d.grid();
    ControlPair rhs = compute_rhs(d, leader);
    ControlPair v{SpaceTimeField(g), SpaceTimeField(g)};
    NashSolution sol;
    for (int it = 1; it <= max_iter; ++it) {
        ControlPair av = apply_A(d, v[0], v[1]);
        double change = 0.0, scale = 0.0;
        for (int i = 0; i < 2; ++i) {
            SpaceTimeField step = rhs[i] - av[i];
            step *= omega / s.control_weight[i];
            v[i] += step;
            change += norm2_q(g, step, s.follower_region[i], TimeRule::Left);
            scale += norm2_q(g, v[i], s.follower_region[i], TimeRule::Left);
        }
        change = std::sqrt(change);
        sol.history.push_back(change);
        sol.iterations = it;
        if (!std::isfinite(change)) throw ContractionFailure("Richardson iterate is not finite", 0.0, it);
        if (change == 0.0 || change <= tol_rel * std::sqrt(scale)) break;
        if (it == max_iter) throw MaxIterations("Richardson iteration did not converge", v[0].values(), change);
    }
    SpaceTimeField src = restricted(leader, s.leader_region);
    src += restricted(v[0], s.follower_region[0]);
    src += restricted(v[1], s.follower_region[1]);
    SpaceTimeField w = d.state().forward(src, s.initial_state);
    for (int i = 0; i < 2; ++i) {
        sol.adjoint[i] = detail::follower_adjoint(d, i, w);
        sol.control[i] = detail::control_from_adjoint(d, i, sol.adjoint[i]);
    }
    sol.state = std::move(w);
    sol.residuals = verify_first_order(d, sol);
    return sol;
}

/// Direct solve of the stacked space-time optimality system (test oracle).
inline NashSolution dense_oracle_nash(const Dynamics& d, const SpaceTimeField& leader) {
    const auto& s = d.spec();
    const Grid& g = d.grid();
    const InteriorIndex& idx = d.state().index();
    const int m = idx.size();
    const int nt = g.nt;
    // Level k holds [w^k (k >= 1), phi_1^k, phi_2^k (k <= nt-1)], each block m unknowns.
    auto w_at = [&](int k) { return (k - 1) * 3 * m + 2 * m + 0; };
    auto phi_at = [&](int i, int k) { return k * 3 * m + i * m; };
    // Layout per level k: phi_1^k, phi_2^k, w^{k+1}. This keeps coupled unknowns close.
    const long total = 3L * m * nt;
    if (total > 20000) throw TooLarge("stacked system exceeds 20000 unknowns");
    std::vector<Triplet> t;
    Vector rhs(total, 0.0);
    const double dt = g.dt;
    Vector w0 = idx.gather(s.initial_state);
    for (int k = 0; k < nt; ++k) {
        // State step into level k+1.
        const SparseMatrix& ms = d.state().step_matrix(k + 1);
        int row0 = w_at(k + 1);
        ms.for_each([&](int i, int j, double v) { t.push_back({row0 + i, w_at(k + 1) + j, v}); });
        Vector lf = idx.gather(leader.level(k));
        for (int u = 0; u < m; ++u) {
            int node = idx.node_of[u];
            double r = s.leader_region[node] ? dt * lf[u] : 0.0;
            if (k == 0) r += w0[u];
            else t.push_back({row0 + u, w_at(k) + u, -1.0});
            for (int i = 0; i < 2; ++i)
                if (s.follower_region[i][node])
                    t.push_back({row0 + u, phi_at(i, k) + u, dt / s.control_weight[i]});
            rhs[row0 + u] = r;
        }
        // Follower adjoint step into level k.
        const SparseMatrix& mf = d.follower().step_matrix(k + 1);
        for (int i = 0; i < 2; ++i) {
            int prow = phi_at(i, k);
            mf.for_each([&](int a, int b, double v) { t.push_back({prow + b, phi_at(i, k) + a, v}); });
            Vector tgt = idx.gather(s.target[i].level(k + 1));
            for (int u = 0; u < m; ++u) {
                if (k + 1 < nt) t.push_back({prow + u, phi_at(i, k + 1) + u, -1.0});
                if (s.target_region[i][idx.node_of[u]]) {
                    double c = dt * s.tracking_weight[i];
                    t.push_back({prow + u, w_at(k + 1) + u, -c});
                    rhs[prow + u] = -c * tgt[u];
                }
            }
        }
    }
    SparseMatrix a(static_cast<int>(total), std::move(t));
    Vector x = Factorization(a).solve(rhs);
    NashSolution sol;
    sol.state = SpaceTimeField(g);
    idx.scatter(w0, sol.state.level(0));
    for (int k = 1; k <= nt; ++k)
        idx.scatter(std::span<const double>(x.data() + w_at(k), m), sol.state.level(k));
    for (int i = 0; i < 2; ++i) {
        sol.adjoint[i] = SpaceTimeField(g);
        for (int k = 0; k < nt; ++k)
            idx.scatter(std::span<const double>(x.data() + phi_at(i, k), m), sol.adjoint[i].level(k));
        sol.control[i] = detail::control_from_adjoint(d, i, sol.adjoint[i]);
    }
    sol.residuals = verify_first_order(d, sol);
    return sol;
}

/// J_i for given leader and follower controls (tracking on the right rule, control cost on the left).
inline double follower_cost(const Dynamics& d, int i, const SpaceTimeField& leader, const SpaceTimeField& v1,
                            const SpaceTimeField& v2) {
    const auto& s = d.spec();
    const Grid& g = d.grid();
    SpaceTimeField w = solve_forward(d, leader, v1, v2, s.initial_state);
    SpaceTimeField e = w - s.target[i];
    const SpaceTimeField& v = i == 0 ? v1 : v2;
    return 0.5 * s.tracking_weight[i] * norm2_q(g, e, s.target_region[i], TimeRule::Right) +
           0.5 * s.control_weight[i] * norm2_q(g, v, s.follower_region[i], TimeRule::Left);
}

inline double leader_cost(const Dynamics& d, const SpaceTimeField& leader) {
    return 0.5 * norm2_q(d.grid(), leader, d.spec().leader_region, TimeRule::Left);
}

/// Operator-norm bound, coercivity margin and measured contraction of the fixed-point map.
inline NashDiagnostics diagnostics(const Dynamics& d, int power_iters = 60, int probe_iters = 25,
                                   std::uint64_t seed = 11) {
    const auto& s = d.spec();
    const Grid& g = d.grid();
    const int size = static_cast<int>(SpaceTimeField(g).size());
    auto to_field = [&](std::span<const double> x) {
        SpaceTimeField f(g);
        std::copy(x.begin(), x.end(), f.values().begin());
        return f;
    };
    NashDiagnostics out;
    for (int i = 0; i < 2; ++i)
        for (int r = 0; r < 2; ++r) {
            const SubdomainMask& region = s.target_region[r];
            LinearMap fwd = [&](std::span<const double> x) {
                return restricted(apply_response(d, i, to_field(x)), region).values();
            };
            LinearMap adj = [&](std::span<const double> y) {
                return apply_response_adjoint(d, i, restricted(to_field(y), region)).values();
            };
            out.m0_estimate = std::max(out.m0_estimate, operator_norm(fwd, adj, size, power_iters, seed + 2 * i + r).value);
        }
    double amax = std::max(s.tracking_weight[0], s.tracking_weight[1]);
    double mumin = std::min(s.control_weight[0], s.control_weight[1]);
    out.coercivity_margin = amax > 0.0 ? 4.0 * mumin / amax - out.m0_estimate * out.m0_estimate - 4.0
                                       : std::numeric_limits<double>::max();

    // Probe: the homogeneous fixed-point map is linear, so successive update ratios approach
    // its spectral radius.
    Dynamics hom = d.homogeneous();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    SpaceTimeField z(g);
    for (double& v : z.values()) v = normal(rng);
    clamp_boundary(g, z);
    double prev = norm_q(g, z);
    double ratio = 0.0;
    for (int it = 0; it < probe_iters && prev > 0.0; ++it) {
        SpaceTimeField src(g);
        for (int i = 0; i < 2; ++i) src += detail::control_from_adjoint(hom, i, detail::follower_adjoint(hom, i, z));
        z = hom.state().forward(src, hom.spec().initial_state);
        double cur = norm_q(g, z);
        ratio = cur / prev;
        if (cur == 0.0 || !std::isfinite(cur)) break;
        z *= 1.0 / cur;
        prev = 1.0;
    }
    out.contraction_factor = ratio;
    return out;
}

} // namespace hierctl
