#pragma once

#include <hierctl/linalg.hpp>
#include <hierctl/mesh.hpp>

#include <array>
#include <memory>
#include <optional>
#include <string>

namespace hierctl {

/// Lower-order coefficients of the operator: reaction a and drift B (one field per axis).
struct Coefficients {
    SpaceTimeField reaction;
    std::vector<SpaceTimeField> drift;

    static Coefficients zero(const Grid& g) {
        Coefficients c;
        c.reaction = SpaceTimeField(g);
        c.drift.assign(g.dim, SpaceTimeField(g));
        return c;
    }
};

struct ProblemSpec {
    Grid grid;
    Coefficients coefficients;
    SubdomainMask leader_region;
    std::array<SubdomainMask, 2> follower_region;
    std::array<SubdomainMask, 2> target_region;
    std::array<double, 2> tracking_weight{0.0, 0.0};
    std::array<double, 2> control_weight{1.0, 1.0};
    /// Follower targets (tracking data w_id, or the original targets in trajectory mode).
    std::array<SpaceTimeField, 2> target;
    SpatialField initial_state;
    std::optional<SpatialField> free_initial_state;
    /// Coefficients of the operator whose transpose drives the follower adjoints, when it
    /// differs from the state operator (frozen linearizations in the semilinear loop).
    std::optional<Coefficients> follower_coefficients;
};

/// Spec with zero coefficients, data and targets; regions default to the full interior.
inline ProblemSpec make_spec(const Grid& g) {
    ProblemSpec s;
    s.grid = g;
    s.coefficients = Coefficients::zero(g);
    s.leader_region = full_mask(g);
    s.follower_region = {full_mask(g), full_mask(g)};
    s.target_region = {full_mask(g), full_mask(g)};
    s.target = {SpaceTimeField(g), SpaceTimeField(g)};
    s.initial_state = SpatialField(g.nodes(), 0.0);
    return s;
}

namespace detail {
inline void check_coefficients(const Grid& g, const Coefficients& c, const char* what) {
    if (!c.reaction.matches(g) || static_cast<int>(c.drift.size()) != g.dim)
        throw ShapeMismatch(std::string(what) + " coefficients do not match grid");
    if (!c.reaction.all_finite()) throw InvalidSpec(std::string(what) + " reaction is not finite");
    for (const auto& b : c.drift) {
        if (!b.matches(g)) throw ShapeMismatch(std::string(what) + " drift does not match grid");
        if (!b.all_finite()) throw InvalidSpec(std::string(what) + " drift is not finite");
    }
}
} // namespace detail

/// Checks shapes, finiteness, weights and regions. With `controllability`, also requires
/// every target region to meet the leader region.
inline void validate(const ProblemSpec& s, bool controllability = false) {
    const Grid& g = s.grid;
    detail::check_coefficients(g, s.coefficients, "state");
    if (s.follower_coefficients) detail::check_coefficients(g, *s.follower_coefficients, "follower");
    auto check_mask = [&](const SubdomainMask& m, const char* name) {
        if (m.nodes() != g.nodes()) throw ShapeMismatch(std::string(name) + " mask does not match grid");
        if (m.empty()) throw EmptyMask(std::string(name) + " region is empty");
    };
    check_mask(s.leader_region, "leader");
    for (int i = 0; i < 2; ++i) {
        check_mask(s.follower_region[i], "follower");
        check_mask(s.target_region[i], "target");
        if (!(s.control_weight[i] > 0.0) || !std::isfinite(s.control_weight[i]))
            throw InvalidSpec("control weights must be positive");
        if (!(s.tracking_weight[i] >= 0.0) || !std::isfinite(s.tracking_weight[i]))
            throw InvalidSpec("tracking weights must be nonnegative");
        if (!s.target[i].matches(g) || !s.target[i].all_finite())
            throw InvalidSpec("target fields must match the grid and be finite");
        if (controllability && s.target_region[i].intersect(s.leader_region).empty())
            throw InvalidSpec("target region does not meet the leader region");
    }
    if (static_cast<int>(s.initial_state.size()) != g.nodes()) throw ShapeMismatch("initial state size");
    if (s.free_initial_state && static_cast<int>(s.free_initial_state->size()) != g.nodes())
        throw ShapeMismatch("free initial state size");
}

/// Numbering of interior nodes as unknowns.
struct InteriorIndex {
    std::vector<int> node_of;
    std::vector<int> unknown_of;

    explicit InteriorIndex(const Grid& g) : unknown_of(g.nodes(), -1) {
        for (int n = 0; n < g.nodes(); ++n)
            if (!g.on_boundary(n)) {
                unknown_of[n] = static_cast<int>(node_of.size());
                node_of.push_back(n);
            }
    }
    int size() const { return static_cast<int>(node_of.size()); }

    Vector gather(std::span<const double> full) const {
        Vector v(node_of.size());
        for (std::size_t u = 0; u < node_of.size(); ++u) v[u] = full[node_of[u]];
        return v;
    }
    void scatter(std::span<const double> interior, std::span<double> full) const {
        std::fill(full.begin(), full.end(), 0.0);
        for (std::size_t u = 0; u < node_of.size(); ++u) full[node_of[u]] = interior[u];
    }
};

namespace detail {
/// Maps a node index shifted off the grid onto the reflected interior node. Returns -1 for
/// boundary nodes, whose clamped value is zero.
inline int reflect(int i, int n) {
    if (i == -1) return 1;
    if (i == n) return n - 2;
    if (i <= 0 || i >= n - 1) return -1;
    return i;
}
} // namespace detail

/// Discrete bi-Laplacian on interior unknowns: the square of the 5-point Laplacian with
/// clamped values on the boundary and mirrored ghost values one node outside.
inline SparseMatrix assemble_biharmonic(const Grid& g) {
    InteriorIndex idx(g);
    std::vector<Triplet> t;
    const double h4x = std::pow(g.h[0], 4);
    const double h4y = std::pow(g.h[1], 4);
    const double h2xy = g.h[0] * g.h[0] * g.h[1] * g.h[1];
    auto add = [&](int row, int i, int j, double c) {
        int ri = detail::reflect(i, g.nx[0]);
        if (ri < 0) return;
        int rj = 0;
        if (g.dim == 2) {
            rj = detail::reflect(j, g.nx[1]);
            if (rj < 0) return;
        }
        t.push_back({row, idx.unknown_of[g.node(ri, rj)], c});
    };
    const double fourth[5] = {1.0, -4.0, 6.0, -4.0, 1.0};
    for (int u = 0; u < idx.size(); ++u) {
        auto [i, j] = g.index(idx.node_of[u]);
        for (int o = -2; o <= 2; ++o) add(u, i + o, j, fourth[o + 2] / h4x);
        if (g.dim == 2) {
            for (int o = -2; o <= 2; ++o) add(u, i, j + o, fourth[o + 2] / h4y);
            const double second[3] = {1.0, -2.0, 1.0};
            for (int a = -1; a <= 1; ++a)
                for (int b = -1; b <= 1; ++b) {
                    int ii = i + a, jj = j + b;
                    if (ii <= 0 || ii >= g.nx[0] - 1 || jj <= 0 || jj >= g.nx[1] - 1) continue;
                    add(u, ii, jj, 2.0 * second[a + 1] * second[b + 1] / h2xy);
                }
        }
    }
    return SparseMatrix(idx.size(), std::move(t));
}

/// Centered first difference along an axis on interior unknowns (boundary values zero).
inline SparseMatrix assemble_gradient(const Grid& g, int axis) {
    InteriorIndex idx(g);
    std::vector<Triplet> t;
    for (int u = 0; u < idx.size(); ++u) {
        auto ij = g.index(idx.node_of[u]);
        for (int s : {-1, 1}) {
            auto nb = ij;
            nb[axis] += s;
            int n = g.node(nb[0], nb[1]);
            if (g.on_boundary(n)) continue;
            t.push_back({u, idx.unknown_of[n], s / (2.0 * g.h[axis])});
        }
    }
    return SparseMatrix(idx.size(), std::move(t));
}

/// Centered difference of a full-node field, evaluated at interior nodes.
inline SpatialField centered_difference(const Grid& g, std::span<const double> f, int axis) {
    SpatialField out(g.nodes(), 0.0);
    for (int n = 0; n < g.nodes(); ++n) {
        if (g.on_boundary(n)) continue;
        auto ij = g.index(n);
        auto lo = ij, hi = ij;
        lo[axis] -= 1;
        hi[axis] += 1;
        out[n] = (f[g.node(hi[0], hi[1])] - f[g.node(lo[0], lo[1])]) / (2.0 * g.h[axis]);
    }
    return out;
}

/// Transpose of centered_difference restricted to interior nodes (a discrete -d/dx).
inline SpatialField centered_difference_transpose(const Grid& g, std::span<const double> v, int axis) {
    SpatialField out(g.nodes(), 0.0);
    for (int n = 0; n < g.nodes(); ++n) {
        if (g.on_boundary(n)) continue;
        auto ij = g.index(n);
        auto lo = ij, hi = ij;
        lo[axis] -= 1;
        hi[axis] += 1;
        int nl = g.node(lo[0], lo[1]), nh = g.node(hi[0], hi[1]);
        double vl = g.on_boundary(nl) ? 0.0 : v[nl];
        double vh = g.on_boundary(nh) ? 0.0 : v[nh];
        out[n] = (vl - vh) / (2.0 * g.h[axis]);
    }
    return out;
}

struct DiscreteOperator {
    SparseMatrix forward;
    SparseMatrix adjoint;
};

/// L = biharmonic + a + B.grad at one time level from given coefficients.
inline SparseMatrix assemble_generator(const Grid& g, const Coefficients& c, int level,
                                       const SparseMatrix& biharmonic) {
    InteriorIndex idx(g);
    std::vector<Triplet> t = biharmonic.triplets();
    for (int u = 0; u < idx.size(); ++u) t.push_back({u, u, c.reaction(idx.node_of[u], level)});
    for (int a = 0; a < g.dim; ++a) {
        SparseMatrix d = assemble_gradient(g, a);
        d.for_each([&](int i, int j, double v) {
            double b = c.drift[a](idx.node_of[i], level);
            if (b != 0.0) t.push_back({i, j, b * v});
        });
    }
    return SparseMatrix(idx.size(), std::move(t));
}

inline DiscreteOperator assemble_operators(const ProblemSpec& s, int level) {
    SparseMatrix l = assemble_generator(s.grid, s.coefficients, level, assemble_biharmonic(s.grid));
    return {l, l.transpose()};
}

/// Backward Euler marching for one set of coefficients. Step matrices I + dt L^k are
/// factorized once per distinct coefficient level and reused.
class Propagator {
public:
    Propagator(const Grid& g, const Coefficients& c) : grid_(g), index_(g) {
        detail::check_coefficients(g, c, "operator");
        SparseMatrix bih = assemble_biharmonic(g);
        SparseMatrix eye = SparseMatrix::identity(index_.size());
        slot_.assign(g.levels(), -1);
        for (int k = 1; k <= g.nt; ++k) {
            if (k > 1 && same_level(c, k, k - 1)) {
                slot_[k] = slot_[k - 1];
                continue;
            }
            SparseMatrix l = assemble_generator(g, c, k, bih);
            SparseMatrix m = eye.combine(1.0, l, g.dt);
            facts_.emplace_back(m);
            steps_.push_back(std::move(m));
            generators_.push_back(std::move(l));
            slot_[k] = static_cast<int>(steps_.size()) - 1;
        }
    }

    const Grid& grid() const { return grid_; }
    const InteriorIndex& index() const { return index_; }
    /// I + dt L^k for k = 1..nt.
    const SparseMatrix& step_matrix(int k) const { return steps_.at(slot_.at(k)); }
    const SparseMatrix& generator(int k) const { return generators_.at(slot_.at(k)); }
    int distinct_factorizations() const { return static_cast<int>(facts_.size()); }

    /// w^0 = initial, (I + dt L^{k+1}) w^{k+1} = w^k + dt source^k. Source level nt is unused.
    SpaceTimeField forward(const SpaceTimeField& source, std::span<const double> initial) const {
        check(source, initial);
        SpaceTimeField w(grid_);
        Vector cur = index_.gather(initial);
        index_.scatter(cur, w.level(0));
        for (int k = 0; k < grid_.nt; ++k) {
            Vector src = index_.gather(source.level(k));
            for (std::size_t u = 0; u < cur.size(); ++u) cur[u] += grid_.dt * src[u];
            cur = facts_[slot_[k + 1]].solve(cur);
            index_.scatter(cur, w.level(k + 1));
        }
        return w;
    }

    /// Exact transpose of forward: p^nt = terminal,
    /// (I + dt L^{k+1})^T p^k = p^{k+1} + dt source^{k+1}. Source level 0 is unused.
    SpaceTimeField backward(const SpaceTimeField& source, std::span<const double> terminal) const {
        check(source, terminal);
        SpaceTimeField p(grid_);
        Vector cur = index_.gather(terminal);
        index_.scatter(cur, p.level(grid_.nt));
        for (int k = grid_.nt - 1; k >= 0; --k) {
            Vector src = index_.gather(source.level(k + 1));
            for (std::size_t u = 0; u < cur.size(); ++u) cur[u] += grid_.dt * src[u];
            cur = facts_[slot_[k + 1]].solve_transposed(cur);
            index_.scatter(cur, p.level(k));
        }
        return p;
    }

private:
    static bool same_level(const Coefficients& c, int k1, int k2) {
        auto eq = [&](const SpaceTimeField& f) {
            auto a = f.level(k1), b = f.level(k2);
            return std::equal(a.begin(), a.end(), b.begin());
        };
        if (!eq(c.reaction)) return false;
        for (const auto& b : c.drift)
            if (!eq(b)) return false;
        return true;
    }
    void check(const SpaceTimeField& source, std::span<const double> boundary_data) const {
        if (!source.matches(grid_)) throw ShapeMismatch("source does not match grid");
        if (static_cast<int>(boundary_data.size()) != grid_.nodes())
            throw ShapeMismatch("initial/terminal data does not match grid");
    }

    Grid grid_;
    InteriorIndex index_;
    std::vector<int> slot_;
    std::vector<SparseMatrix> generators_;
    std::vector<SparseMatrix> steps_;
    std::vector<Factorization> facts_;
};

/// A validated spec together with its factorized state and follower propagators.
class Dynamics {
public:
    explicit Dynamics(ProblemSpec spec) : spec_(std::make_shared<ProblemSpec>(std::move(spec))) {
        validate(*spec_);
        state_ = std::make_shared<Propagator>(spec_->grid, spec_->coefficients);
        follower_ = spec_->follower_coefficients
                        ? std::make_shared<Propagator>(spec_->grid, *spec_->follower_coefficients)
                        : state_;
    }

    const ProblemSpec& spec() const { return *spec_; }
    const Grid& grid() const { return spec_->grid; }
    const Propagator& state() const { return *state_; }
    const Propagator& follower() const { return *follower_; }

    /// Same operators and regions with different initial state and targets.
    Dynamics with_data(SpatialField initial, std::array<SpaceTimeField, 2> targets) const {
        auto s = std::make_shared<ProblemSpec>(*spec_);
        s->initial_state = std::move(initial);
        s->target = std::move(targets);
        validate(*s);
        return Dynamics(std::move(s), state_, follower_);
    }
    Dynamics homogeneous() const {
        const Grid& g = grid();
        return with_data(SpatialField(g.nodes(), 0.0), {SpaceTimeField(g), SpaceTimeField(g)});
    }

private:
    Dynamics(std::shared_ptr<ProblemSpec> s, std::shared_ptr<Propagator> state,
             std::shared_ptr<Propagator> follower)
        : spec_(std::move(s)), state_(std::move(state)), follower_(std::move(follower)) {}

    std::shared_ptr<ProblemSpec> spec_;
    std::shared_ptr<Propagator> state_;
    std::shared_ptr<Propagator> follower_;
};

/// State under leader f and followers v1, v2 from initial data w0.
inline SpaceTimeField solve_forward(const Dynamics& d, const SpaceTimeField& leader,
                                    const SpaceTimeField& follower1, const SpaceTimeField& follower2,
                                    std::span<const double> initial) {
    const auto& s = d.spec();
    SpaceTimeField src = restricted(leader, s.leader_region);
    src += restricted(follower1, s.follower_region[0]);
    src += restricted(follower2, s.follower_region[1]);
    return d.state().forward(src, initial);
}

inline SpaceTimeField solve_adjoint(const Dynamics& d, const SpaceTimeField& sources,
                                    std::span<const double> terminal) {
    return d.state().backward(sources, terminal);
}

} // namespace hierctl
