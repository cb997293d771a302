#pragma once

#include <hierctl/hum.hpp>

#include <random>

namespace hierctl {

/// Max entry difference between the adjoint step matrix I + dt L^T, assembled from the
/// adjoint generator, and the transpose of the forward step matrix, over all levels.
inline double transpose_contract(const ProblemSpec& s) {
    const Grid& g = s.grid;
    Propagator p(g, s.coefficients);
    SparseMatrix eye = SparseMatrix::identity(p.index().size());
    double worst = 0.0;
    for (int k = 1; k <= g.nt; ++k) {
        auto fwd = p.step_matrix(k).to_dense();
        auto adj = eye.combine(1.0, assemble_operators(s, k).adjoint, g.dt).to_dense();
        const int m = static_cast<int>(fwd.size());
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < m; ++j) worst = std::max(worst, std::abs(adj[i][j] - fwd[j][i]));
    }
    return worst;
}

/// Relative defect of the discrete duality identity
///   <w^nt, p^nt> - <w^0, p^0> = sum_{k<nt} dt <s^k, p^k> - sum_{k>=1} dt <w^k, q^k>
/// on interior unknowns, for w = forward(s, w0) and p = backward(q, pT).
inline double duality_defect(const Propagator& prop, const SpaceTimeField& s, std::span<const double> w0,
                             const SpaceTimeField& q, std::span<const double> pT) {
    const Grid& g = prop.grid();
    const InteriorIndex& idx = prop.index();
    SpaceTimeField w = prop.forward(s, w0);
    SpaceTimeField p = prop.backward(q, pT);
    auto ip = [&](std::span<const double> a, std::span<const double> b) { return dot(idx.gather(a), idx.gather(b)); };
    double lhs = ip(w.level(g.nt), p.level(g.nt)) - ip(w.level(0), p.level(0));
    double rhs = 0.0, scale = std::abs(ip(w.level(g.nt), p.level(g.nt))) + std::abs(ip(w.level(0), p.level(0)));
    for (int k = 0; k < g.nt; ++k) {
        double a = g.dt * ip(s.level(k), p.level(k));
        double b = g.dt * ip(w.level(k + 1), q.level(k + 1));
        rhs += a - b;
        scale += std::abs(a) + std::abs(b);
    }
    return std::abs(lhs - rhs) / std::max(scale, detail::tiny);
}

struct ConsistencyError {
    /// |B^{-1}(B u - f)|_h: the residual measured in the discrete negative norm.
    double negative_norm = 0.0;
    double max_pointwise = 0.0;
    /// Max residual over nodes at least `margin` cells from the boundary.
    double max_interior = 0.0;
};

/// Residual of the 1D discrete bi-Laplacian on u = x^2 (1-x)^2, whose fourth derivative is 24.
inline ConsistencyError biharmonic_consistency(int nx, int margin = 2) {
    Grid g = build_grid(1, {1.0, 1.0}, {nx, 1}, 1.0, 4);
    InteriorIndex idx(g);
    SparseMatrix b = assemble_biharmonic(g);
    SpatialField u = sample_spatial(g, [](double x, double) { return x * x * (1 - x) * (1 - x); });
    Vector r = b.multiply(idx.gather(u));
    ConsistencyError e;
    for (int m = 0; m < idx.size(); ++m) {
        r[m] -= 24.0;
        e.max_pointwise = std::max(e.max_pointwise, std::abs(r[m]));
        int i = g.index(idx.node_of[m])[0];
        if (i >= margin && i <= nx - 1 - margin) e.max_interior = std::max(e.max_interior, std::abs(r[m]));
    }
    SpatialField z(g.nodes(), 0.0);
    idx.scatter(Factorization(b).solve(r), z);
    e.negative_norm = norm_h(g, z);
    return e;
}

/// Random clamped space-time field and spatial datum from a seeded engine.
inline SpaceTimeField random_field(const Grid& g, std::mt19937_64& rng) {
    std::normal_distribution<double> normal;
    SpaceTimeField f(g);
    for (double& v : f.values()) v = normal(rng);
    clamp_boundary(g, f);
    return f;
}

inline SpatialField random_spatial(const Grid& g, std::mt19937_64& rng) {
    std::normal_distribution<double> normal;
    SpatialField f(g.nodes());
    for (double& v : f) v = normal(rng);
    clamp_boundary(g, f);
    return f;
}

inline double relative_distance(const Grid& g, const SpaceTimeField& a, const SpaceTimeField& b) {
    return detail::relative(norm_q(g, a - b, closure_mask(g)), norm_q(g, b, closure_mask(g)));
}

} // namespace hierctl
