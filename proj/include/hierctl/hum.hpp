#pragma once

#include <hierctl/nash.hpp>

#include <string>

namespace hierctl {

enum class PenaltyMode { Quadratic, ExactNorm };

inline std::string to_string(PenaltyMode m) { return m == PenaltyMode::Quadratic ? "quadratic" : "exact-norm"; }

struct CoupledAdjointState {
    SpaceTimeField psi;
    std::array<SpaceTimeField, 2> eta;
    int sweeps = 0;
};

struct HumOptions {
    double cg_tol = 1e-10;
    int max_iter = 500;
    /// Tolerance of the nested coupled-adjoint and Nash solves; 0 means cg_tol / 10.
    double inner_tol = 0.0;
    int inner_max_iter = 400;
    PenaltyMode mode = PenaltyMode::Quadratic;

    double inner() const { return inner_tol > 0.0 ? inner_tol : cg_tol / 10.0; }
};

struct HumResult {
    SpatialField psi0;
    SpaceTimeField control;
    NashSolution nash;
    double terminal_norm = 0.0;
    /// Best relative residual reached so far, per CG iteration.
    std::vector<double> cg_history;
    std::vector<double> cg_raw_history;
    int cg_iterations = 0;
    double eps = 0.0;
    PenaltyMode mode = PenaltyMode::Quadratic;
    /// ||(Lambda + eps) psi0 + b|| / ||b|| recomputed after the solve (quadratic mode).
    double plug_back = 0.0;
    double control_norm = 0.0;
    double leader_cost = 0.0;
};

/// Fixed point over (psi, eta_1, eta_2): psi backward with the eta tracking source, then eta
/// forward with -psi / mu on each follower region.
inline CoupledAdjointState solve_coupled_adjoint(const Dynamics& d, std::span<const double> psi0, double tol_rel,
                                                 int max_iter, int growth_limit = 10) {
    const auto& s = d.spec();
    const Grid& g = d.grid();
    if (static_cast<int>(psi0.size()) != g.nodes()) throw ShapeMismatch("psi0 size differs from grid");
    for (double v : psi0)
        if (!std::isfinite(v)) throw InvalidSpec("psi0 is not finite");
    CoupledAdjointState st;
    st.eta = {SpaceTimeField(g), SpaceTimeField(g)};
    SpaceTimeField prev;
    double prev_change = 0.0;
    int growth = 0;
    SpatialField zero(g.nodes(), 0.0);
    for (int it = 1; it <= max_iter; ++it) {
        SpaceTimeField src(g);
        for (int i = 0; i < 2; ++i) src.axpy(s.tracking_weight[i], restricted(st.eta[i], s.target_region[i]));
        st.psi = d.state().backward(src, psi0);
        for (int i = 0; i < 2; ++i) {
            SpaceTimeField f = restricted(st.psi, s.follower_region[i]);
            f *= -1.0 / s.control_weight[i];
            st.eta[i] = d.follower().forward(f, zero);
        }
        st.sweeps = it;
        if (it == 1) {
            prev = st.psi;
            continue;
        }
        double change = norm_q(g, st.psi - prev);
        if (!std::isfinite(change)) throw ContractionFailure("coupled adjoint iterate is not finite", 0.0, it);
        if (change == 0.0 || change <= tol_rel * norm_q(g, st.psi)) return st;
        if (it > 2 && change > prev_change) {
            if (++growth >= growth_limit)
                throw ContractionFailure("coupled adjoint iteration is not contracting", change / prev_change, it);
        } else {
            growth = 0;
        }
        prev_change = change;
        prev = st.psi;
    }
    throw MaxIterations("coupled adjoint did not converge", st.psi.values(), prev_change);
}

/// Direct solve of the stacked coupled adjoint system (test oracle).
inline CoupledAdjointState dense_oracle_coupled_adjoint(const Dynamics& d, std::span<const double> psi0) {
    const auto& s = d.spec();
    const Grid& g = d.grid();
    const InteriorIndex& idx = d.state().index();
    const int m = idx.size();
    const int nt = g.nt;
    const long total = 3L * m * nt;
    if (total > 20000) throw TooLarge("stacked system exceeds 20000 unknowns");
    // Block k: psi^k, eta_1^{k+1}, eta_2^{k+1}.
    auto psi_at = [&](int k) { return k * 3 * m; };
    auto eta_at = [&](int i, int k) { return (k - 1) * 3 * m + (i + 1) * m; };
    std::vector<Triplet> t;
    Vector rhs(total, 0.0);
    Vector terminal = idx.gather(psi0);
    const double dt = g.dt;
    for (int k = 0; k < nt; ++k) {
        const SparseMatrix& ms = d.state().step_matrix(k + 1);
        int prow = psi_at(k);
        ms.for_each([&](int a, int b, double v) { t.push_back({prow + b, psi_at(k) + a, v}); });
        for (int u = 0; u < m; ++u) {
            if (k + 1 < nt) t.push_back({prow + u, psi_at(k + 1) + u, -1.0});
            else rhs[prow + u] = terminal[u];
            for (int i = 0; i < 2; ++i)
                if (s.target_region[i][idx.node_of[u]])
                    t.push_back({prow + u, eta_at(i, k + 1) + u, -dt * s.tracking_weight[i]});
        }
        const SparseMatrix& mf = d.follower().step_matrix(k + 1);
        for (int i = 0; i < 2; ++i) {
            int erow = eta_at(i, k + 1);
            mf.for_each([&](int a, int b, double v) { t.push_back({erow + a, eta_at(i, k + 1) + b, v}); });
            for (int u = 0; u < m; ++u) {
                if (k > 0) t.push_back({erow + u, eta_at(i, k) + u, -1.0});
                if (s.follower_region[i][idx.node_of[u]])
                    t.push_back({erow + u, psi_at(k) + u, dt / s.control_weight[i]});
            }
        }
    }
    SparseMatrix a(static_cast<int>(total), std::move(t));
    Vector x = Factorization(a).solve(rhs);
    CoupledAdjointState st;
    st.psi = SpaceTimeField(g);
    st.eta = {SpaceTimeField(g), SpaceTimeField(g)};
    idx.scatter(terminal, st.psi.level(nt));
    for (int k = 0; k < nt; ++k) {
        idx.scatter(std::span<const double>(x.data() + psi_at(k), m), st.psi.level(k));
        for (int i = 0; i < 2; ++i)
            idx.scatter(std::span<const double>(x.data() + eta_at(i, k + 1), m), st.eta[i].level(k + 1));
    }
    return st;
}

namespace detail {
inline double penalty(const Grid& g, std::span<const double> psi0, double eps, PenaltyMode mode) {
    double n = norm_h(g, psi0);
    return mode == PenaltyMode::Quadratic ? 0.5 * eps * n * n : eps * n;
}

inline SpaceTimeField leader_from_adjoint(const Dynamics& d, const SpaceTimeField& psi) {
    return restricted(psi, d.spec().leader_region);
}
} // namespace detail

/// G(psi0) = 1/2 int_O |psi|^2 + <w0, psi(0)> + penalty - sum alpha_i int_{O_id} eta_i w_id.
inline double eval_G(const Dynamics& d, std::span<const double> psi0, double eps, PenaltyMode mode,
                     double tol_rel = 1e-12, int max_iter = 400) {
    const auto& s = d.spec();
    const Grid& g = d.grid();
    CoupledAdjointState st = solve_coupled_adjoint(d, psi0, tol_rel, max_iter);
    double value = 0.5 * norm2_q(g, st.psi, s.leader_region, TimeRule::Left);
    value += inner_h(g, s.initial_state, st.psi.level(0));
    value += detail::penalty(g, psi0, eps, mode);
    for (int i = 0; i < 2; ++i)
        value -= s.tracking_weight[i] * integrate(g, st.eta[i], s.target_region[i], &s.target[i], TimeRule::Right);
    return value;
}

/// State of the follower equilibrium driven by the leader psi chi_O built from psi0.
inline NashSolution nash_for_psi0(const Dynamics& d, std::span<const double> psi0, double tol_rel, int max_iter) {
    CoupledAdjointState st = solve_coupled_adjoint(d, psi0, tol_rel, max_iter);
    FixedPointOptions opt;
    opt.tol_rel = tol_rel;
    opt.max_iter = max_iter;
    return solve_nash_fixed_point(d, detail::leader_from_adjoint(d, st.psi), opt);
}

inline SpatialField grad_G(const Dynamics& d, std::span<const double> psi0, double eps, PenaltyMode mode,
                           double tol_rel = 1e-12, int max_iter = 400) {
    const Grid& g = d.grid();
    double n = norm_h(g, psi0);
    if (mode == PenaltyMode::ExactNorm && n == 0.0)
        throw ZeroPointNonsmooth("exact-norm penalty is not differentiable at zero");
    NashSolution sol = nash_for_psi0(d, psi0, tol_rel, max_iter);
    auto wt = sol.state.level(g.nt);
    SpatialField out(wt.begin(), wt.end());
    double c = mode == PenaltyMode::Quadratic ? eps : eps / n;
    for (int k = 0; k < g.nodes(); ++k) out[k] += c * psi0[k];
    return out;
}

/// Lambda psi0: terminal state of the equilibrium with zero initial data and targets.
inline SpatialField apply_Lambda(const Dynamics& hom, std::span<const double> psi0, double tol_rel = 1e-12,
                                 int max_iter = 400) {
    return grad_G(hom, psi0, 0.0, PenaltyMode::Quadratic, tol_rel, max_iter);
}

namespace detail {
inline HumResult finish_hum(const Dynamics& d, SpatialField psi0, double eps, PenaltyMode mode, double tol,
                            int max_iter) {
    const Grid& g = d.grid();
    HumResult r;
    CoupledAdjointState st = solve_coupled_adjoint(d, psi0, tol, max_iter);
    r.control = leader_from_adjoint(d, st.psi);
    FixedPointOptions opt;
    opt.tol_rel = tol;
    opt.max_iter = max_iter;
    r.nash = solve_nash_fixed_point(d, r.control, opt);
    r.terminal_norm = norm_h(g, r.nash.state.level(g.nt));
    r.psi0 = std::move(psi0);
    r.eps = eps;
    r.mode = mode;
    r.control_norm = norm_q(g, r.control, d.spec().leader_region, TimeRule::Left);
    r.leader_cost = 0.5 * r.control_norm * r.control_norm;
    return r;
}

inline std::vector<double> running_min(const std::vector<double>& raw) {
    std::vector<double> out(raw.size());
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = best = std::min(best, raw[i]);
    return out;
}
} // namespace detail

/// Minimizes G by CG on (Lambda + eps) psi0 = -b in the discrete spatial inner product.
/// Exact-norm mode instead finds tau with tau ||(Lambda + tau)^{-1} b|| = eps by bisection.
inline HumResult minimize_G(const Dynamics& d, double eps, const HumOptions& opt = {}) {
    const Grid& g = d.grid();
    if (!(eps > 0.0) || !std::isfinite(eps)) throw InvalidSpec("penalty parameter must be positive");
    const double tol = opt.inner();
    Dynamics hom = d.homogeneous();
    SpatialField zero(g.nodes(), 0.0);
    SpatialField b = grad_G(d, zero, 0.0, PenaltyMode::Quadratic, tol, opt.inner_max_iter);
    Vector minus_b(b.size());
    for (std::size_t k = 0; k < b.size(); ++k) minus_b[k] = -b[k];
    InnerProduct ip = [&](std::span<const double> x, std::span<const double> y) { return inner_h(g, x, y); };
    auto shifted = [&](double shift) {
        return LinearMap([&, shift](std::span<const double> x) {
            SpatialField y = apply_Lambda(hom, x, tol, opt.inner_max_iter);
            for (std::size_t k = 0; k < y.size(); ++k) y[k] += shift * x[k];
            return y;
        });
    };

    if (opt.mode == PenaltyMode::Quadratic) {
        CgResult cg = conjugate_gradient(shifted(eps), minus_b, opt.cg_tol, opt.max_iter, ip);
        HumResult r = detail::finish_hum(d, cg.x, eps, opt.mode, tol, opt.inner_max_iter);
        r.cg_raw_history = cg.residual_history;
        r.cg_history = detail::running_min(cg.residual_history);
        r.cg_iterations = cg.iterations;
        double bn = norm_h(g, b);
        if (bn > 0.0) {
            SpatialField res = shifted(eps)(r.psi0);
            for (std::size_t k = 0; k < res.size(); ++k) res[k] += b[k];
            r.plug_back = norm_h(g, res) / bn;
        }
        return r;
    }

    // Exact norm: psi0 = 0 is optimal when ||b|| <= eps; otherwise (Lambda + eps/|psi0|) psi0 = -b.
    double bn = norm_h(g, b);
    if (bn <= eps) {
        HumResult r = detail::finish_hum(d, zero, eps, opt.mode, tol, opt.inner_max_iter);
        r.cg_history = r.cg_raw_history = {0.0};
        return r;
    }
    std::vector<double> raw;
    int total_iters = 0;
    auto solve_tau = [&](double tau) {
        CgResult cg = conjugate_gradient(shifted(tau), minus_b, opt.cg_tol, opt.max_iter, ip);
        raw.insert(raw.end(), cg.residual_history.begin(), cg.residual_history.end());
        total_iters += cg.iterations;
        return cg.x;
    };
    // tau ||x(tau)|| increases from 0 to ||b||; bracket in log scale.
    double lo = eps, hi = eps;
    SpatialField x = solve_tau(lo);
    while (lo * norm_h(g, x) > eps) {
        hi = lo;
        lo *= 0.1;
        x = solve_tau(lo);
    }
    if (hi == lo) {
        hi = lo * 10.0;
        for (SpatialField y = solve_tau(hi); hi * norm_h(g, y) < eps; y = solve_tau(hi)) {
            lo = hi;
            hi *= 10.0;
        }
    }
    for (int it = 0; it < 60; ++it) {
        double mid = std::sqrt(lo * hi);
        x = solve_tau(mid);
        double val = mid * norm_h(g, x);
        if (std::abs(val / eps - 1.0) <= 1e-9) break;
        (val < eps ? lo : hi) = mid;
    }
    HumResult r = detail::finish_hum(d, x, eps, opt.mode, tol, opt.inner_max_iter);
    r.cg_raw_history = raw;
    r.cg_history = detail::running_min(raw);
    r.cg_iterations = total_iters;
    return r;
}

struct TrajectoryResult {
    HumResult hum;
    SpaceTimeField free_trajectory;
    SpaceTimeField state;
    double mismatch = 0.0;
};

/// Uncontrolled solution from the free initial datum.
inline SpaceTimeField free_trajectory(const Dynamics& d) {
    const auto& s = d.spec();
    if (!s.free_initial_state) throw InvalidSpec("trajectory data missing");
    return d.state().forward(SpaceTimeField(d.grid()), *s.free_initial_state);
}

/// Steers u to the free trajectory: the problem holds u0 as initial state, the free initial
/// datum, and the original follower targets.
inline TrajectoryResult control_to_trajectory(const Dynamics& d, double eps, const HumOptions& opt = {}) {
    const auto& s = d.spec();
    const Grid& g = d.grid();
    TrajectoryResult out;
    out.free_trajectory = free_trajectory(d);
    SpatialField w0 = s.initial_state;
    for (int n = 0; n < g.nodes(); ++n) w0[n] -= (*s.free_initial_state)[n];
    std::array<SpaceTimeField, 2> targets{s.target[0] - out.free_trajectory, s.target[1] - out.free_trajectory};
    Dynamics shifted = d.with_data(std::move(w0), std::move(targets));
    out.hum = minimize_G(shifted, eps, opt);
    out.state = out.hum.nash.state + out.free_trajectory;
    out.mismatch = out.hum.terminal_norm;
    return out;
}

struct TargetCondition {
    std::array<double, 2> value{0.0, 0.0};
    std::array<bool, 2> infinite{false, false};
};

/// Weighted distance of each follower target to the free trajectory, int_{O_id} |u_free - target|^2 / theta^2.
inline TargetCondition check_target_condition(const Dynamics& d, const SpaceTimeField& theta) {
    const auto& s = d.spec();
    const Grid& g = d.grid();
    if (!theta.matches(g)) throw ShapeMismatch("weight does not match grid");
    SpaceTimeField ubar = free_trajectory(d);
    constexpr double overflow = 1e300;
    TargetCondition out;
    for (int i = 0; i < 2; ++i) {
        SpaceTimeField integrand(g);
        for (int k = 0; k < g.levels(); ++k)
            for (int n = 0; n < g.nodes(); ++n) {
                if (!s.target_region[i][n]) continue;
                double th = theta(n, k);
                if (!(th > detail::tiny) || th >= 1.0 / detail::tiny) continue;
                double diff = ubar(n, k) - s.target[i](n, k);
                double v = diff * diff / (th * th);
                if (!std::isfinite(v) || v > overflow) {
                    out.infinite[i] = true;
                    continue;
                }
                integrand(n, k) = v;
            }
        out.value[i] = out.infinite[i] ? std::numeric_limits<double>::infinity()
                                       : integrate(g, integrand, s.target_region[i]);
    }
    return out;
}

} // namespace hierctl
