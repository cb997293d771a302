#pragma once

#include <hierctl/errors.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace hierctl {

/// Uniform tensor grid on [0,L1] (x [0,L2]) times [0,T]. Nodes include the boundary.
struct Grid {
    int dim = 1;
    std::array<double, 2> length{1.0, 1.0};
    std::array<int, 2> nx{1, 1};
    double horizon = 1.0;
    int nt = 1;
    std::array<double, 2> h{1.0, 1.0};
    double dt = 1.0;

    int nodes() const { return nx[0] * nx[1]; }
    int levels() const { return nt + 1; }
    int interior_count() const {
        return dim == 1 ? nx[0] - 2 : (nx[0] - 2) * (nx[1] - 2);
    }
    int node(int i, int j = 0) const { return i + nx[0] * j; }
    std::array<int, 2> index(int n) const { return {n % nx[0], n / nx[0]}; }

    /// Coordinate of node index i along an axis; the last node sits exactly on L.
    double coord(int axis, int i) const {
        if (i == nx[axis] - 1) return length[axis];
        return i * h[axis];
    }
    double time(int k) const { return k == nt ? horizon : k * dt; }

    bool on_boundary(int n) const {
        auto [i, j] = index(n);
        if (i == 0 || i == nx[0] - 1) return true;
        return dim == 2 && (j == 0 || j == nx[1] - 1);
    }
    double cell_volume() const { return dim == 1 ? h[0] : h[0] * h[1]; }

    /// Composite trapezoid weight of a node (h^d in the interior).
    double space_weight(int n) const {
        auto [i, j] = index(n);
        double w = cell_volume();
        if (i == 0 || i == nx[0] - 1) w *= 0.5;
        if (dim == 2 && (j == 0 || j == nx[1] - 1)) w *= 0.5;
        return w;
    }

    bool same_shape(const Grid& o) const {
        return dim == o.dim && nx == o.nx && nt == o.nt && length == o.length &&
               horizon == o.horizon;
    }
};

inline Grid build_grid(int dim, std::array<double, 2> lengths, std::array<int, 2> nx, double horizon,
                       int nt) {
    if (dim != 1 && dim != 2) throw InvalidGrid("dimension must be 1 or 2");
    if (nt < 4) throw InvalidGrid("need at least 4 time steps");
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw InvalidGrid("final time must be positive");
    Grid g;
    g.dim = dim;
    g.horizon = horizon;
    g.nt = nt;
    g.dt = horizon / nt;
    for (int a = 0; a < 2; ++a) {
        if (a >= dim) {
            g.nx[a] = 1;
            g.length[a] = 1.0;
            g.h[a] = 1.0;
            continue;
        }
        if (nx[a] < 6) throw InvalidGrid("need at least 6 nodes per axis");
        if (!(lengths[a] > 0.0) || !std::isfinite(lengths[a]))
            throw InvalidGrid("axis lengths must be positive");
        g.nx[a] = nx[a];
        g.length[a] = lengths[a];
        g.h[a] = lengths[a] / (nx[a] - 1);
    }
    return g;
}

using SpatialField = std::vector<double>;

/// Axis-aligned box, one closed interval per axis.
struct Box {
    std::array<double, 2> lo{0.0, 0.0};
    std::array<double, 2> hi{0.0, 0.0};
};

/// Node indicator. Masks from build_mask touch interior nodes only; closure_mask also
/// covers boundary nodes and exists for quadrature of data that is not clamped.
class SubdomainMask {
public:
    SubdomainMask() = default;
    SubdomainMask(const Grid& g, std::vector<std::uint8_t> flags) : nodes_(g.nodes()), flags_(std::move(flags)) {
        if (static_cast<int>(flags_.size()) != nodes_) throw ShapeMismatch("mask size differs from grid");
    }

    int nodes() const { return nodes_; }
    bool operator[](int n) const { return flags_[n] != 0; }
    int count() const {
        int c = 0;
        for (auto f : flags_) c += f != 0;
        return c;
    }
    bool empty() const { return count() == 0; }
    const std::vector<std::uint8_t>& flags() const { return flags_; }

    SubdomainMask intersect(const SubdomainMask& o) const {
        auto f = flags_;
        for (std::size_t n = 0; n < f.size(); ++n) f[n] = f[n] && o.flags_[n];
        SubdomainMask m;
        m.nodes_ = nodes_;
        m.flags_ = std::move(f);
        return m;
    }
    SubdomainMask unite(const SubdomainMask& o) const {
        auto f = flags_;
        for (std::size_t n = 0; n < f.size(); ++n) f[n] = f[n] || o.flags_[n];
        SubdomainMask m;
        m.nodes_ = nodes_;
        m.flags_ = std::move(f);
        return m;
    }
    bool operator==(const SubdomainMask& o) const { return flags_ == o.flags_; }

private:
    int nodes_ = 0;
    std::vector<std::uint8_t> flags_;
};

inline SubdomainMask build_mask(const Grid& g, const Box& box) {
    std::vector<std::uint8_t> flags(g.nodes(), 0);
    for (int n = 0; n < g.nodes(); ++n) {
        if (g.on_boundary(n)) continue;
        auto idx = g.index(n);
        bool inside = true;
        for (int a = 0; a < g.dim; ++a) {
            double x = g.coord(a, idx[a]);
            double tol = 1e-9 * g.h[a];
            if (x < box.lo[a] - tol || x > box.hi[a] + tol) inside = false;
        }
        flags[n] = inside ? 1 : 0;
    }
    SubdomainMask m(g, std::move(flags));
    if (m.empty()) throw EmptyMask("no interior node inside the box");
    return m;
}

inline SubdomainMask full_mask(const Grid& g) {
    return build_mask(g, Box{{0.0, 0.0}, {g.length[0], g.length[1]}});
}

inline SubdomainMask closure_mask(const Grid& g) {
    return SubdomainMask(g, std::vector<std::uint8_t>(g.nodes(), 1));
}

/// Scalar values on every node and time level k = 0..nt, level-major.
class SpaceTimeField {
public:
    SpaceTimeField() = default;
    explicit SpaceTimeField(const Grid& g, double value = 0.0)
        : nodes_(g.nodes()), levels_(g.levels()), data_(static_cast<std::size_t>(nodes_) * levels_, value) {}

    int nodes() const { return nodes_; }
    int levels() const { return levels_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(int n, int k) { return data_[static_cast<std::size_t>(k) * nodes_ + n]; }
    double operator()(int n, int k) const { return data_[static_cast<std::size_t>(k) * nodes_ + n]; }

    std::span<double> level(int k) { return {data_.data() + static_cast<std::size_t>(k) * nodes_, static_cast<std::size_t>(nodes_)}; }
    std::span<const double> level(int k) const {
        return {data_.data() + static_cast<std::size_t>(k) * nodes_, static_cast<std::size_t>(nodes_)};
    }
    void set_level(int k, std::span<const double> values) {
        if (static_cast<int>(values.size()) != nodes_) throw ShapeMismatch("level size differs");
        std::copy(values.begin(), values.end(), level(k).begin());
    }

    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    bool matches(const Grid& g) const { return nodes_ == g.nodes() && levels_ == g.levels(); }
    bool same_shape(const SpaceTimeField& o) const { return nodes_ == o.nodes_ && levels_ == o.levels_; }
    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    SpaceTimeField& operator+=(const SpaceTimeField& o) {
        check(o);
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    SpaceTimeField& operator-=(const SpaceTimeField& o) {
        check(o);
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }
    SpaceTimeField& operator*=(double c) {
        for (double& v : data_) v *= c;
        return *this;
    }
    /// this += c * o
    void axpy(double c, const SpaceTimeField& o) {
        check(o);
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += c * o.data_[i];
    }
    /// Zero every node outside the mask, at every level.
    void restrict_to(const SubdomainMask& m) {
        if (m.nodes() != nodes_) throw ShapeMismatch("mask and field differ");
        for (int k = 0; k < levels_; ++k)
            for (int n = 0; n < nodes_; ++n)
                if (!m[n]) (*this)(n, k) = 0.0;
    }

    bool operator==(const SpaceTimeField& o) const = default;

private:
    void check(const SpaceTimeField& o) const {
        if (!same_shape(o)) throw ShapeMismatch("field shapes differ");
    }
    int nodes_ = 0;
    int levels_ = 0;
    std::vector<double> data_;
};

inline SpaceTimeField operator+(SpaceTimeField a, const SpaceTimeField& b) { return a += b; }
inline SpaceTimeField operator-(SpaceTimeField a, const SpaceTimeField& b) { return a -= b; }
inline SpaceTimeField operator*(double c, SpaceTimeField a) { return a *= c; }

inline SpaceTimeField restricted(SpaceTimeField f, const SubdomainMask& m) {
    f.restrict_to(m);
    return f;
}

/// Pointwise product.
inline SpaceTimeField product(const SpaceTimeField& a, const SpaceTimeField& b) {
    if (!a.same_shape(b)) throw ShapeMismatch("field shapes differ");
    SpaceTimeField out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] *= b.values()[i];
    return out;
}

/// Time-constant field from a spatial field.
inline SpaceTimeField extend_in_time(const Grid& g, std::span<const double> spatial) {
    SpaceTimeField f(g);
    for (int k = 0; k < g.levels(); ++k) f.set_level(k, spatial);
    return f;
}

/// How time levels are weighted. Left pairs with control-type quantities (levels 0..nt-1),
/// Right with state-tracking quantities (levels 1..nt).
enum class TimeRule { Trapezoid, Left, Right };

inline double time_weight(const Grid& g, int k, TimeRule rule) {
    switch (rule) {
    case TimeRule::Trapezoid: return (k == 0 || k == g.nt) ? 0.5 * g.dt : g.dt;
    case TimeRule::Left: return k == g.nt ? 0.0 : g.dt;
    case TimeRule::Right: return k == 0 ? 0.0 : g.dt;
    }
    return 0.0;
}

inline double integrate(const Grid& g, const SpaceTimeField& field, const SubdomainMask& mask,
                        const SpaceTimeField* weight = nullptr, TimeRule rule = TimeRule::Trapezoid) {
    if (!field.matches(g) || mask.nodes() != g.nodes() || (weight && !weight->matches(g)))
        throw ShapeMismatch("integrand does not match grid");
    double total = 0.0;
    for (int k = 0; k < g.levels(); ++k) {
        double tw = time_weight(g, k, rule);
        if (tw == 0.0) continue;
        double s = 0.0;
        for (int n = 0; n < g.nodes(); ++n) {
            if (!mask[n]) continue;
            double v = field(n, k) * g.space_weight(n);
            if (weight) v *= (*weight)(n, k);
            s += v;
        }
        total += tw * s;
    }
    return total;
}

/// Squared space-time norm over a mask.
inline double norm2_q(const Grid& g, const SpaceTimeField& f, const SubdomainMask& mask,
                      TimeRule rule = TimeRule::Trapezoid) {
    return integrate(g, f, mask, &f, rule);
}
inline double norm_q(const Grid& g, const SpaceTimeField& f, TimeRule rule = TimeRule::Trapezoid) {
    return std::sqrt(norm2_q(g, f, closure_mask(g), rule));
}
inline double norm_q(const Grid& g, const SpaceTimeField& f, const SubdomainMask& m,
                     TimeRule rule = TimeRule::Trapezoid) {
    return std::sqrt(norm2_q(g, f, m, rule));
}
inline double inner_q(const Grid& g, const SpaceTimeField& a, const SpaceTimeField& b,
                      TimeRule rule = TimeRule::Trapezoid) {
    return integrate(g, a, closure_mask(g), &b, rule);
}

/// Discrete spatial inner product: h^d sum over nodes (trapezoid weights on the boundary).
inline double inner_h(const Grid& g, std::span<const double> a, std::span<const double> b) {
    if (static_cast<int>(a.size()) != g.nodes() || static_cast<int>(b.size()) != g.nodes())
        throw ShapeMismatch("spatial field size differs from grid");
    double s = 0.0;
    for (int n = 0; n < g.nodes(); ++n) s += g.space_weight(n) * a[n] * b[n];
    return s;
}
inline double norm_h(const Grid& g, std::span<const double> a) { return std::sqrt(inner_h(g, a, a)); }

/// Samples a function of (x, y) on every node.
template <class Fn>
SpatialField sample_spatial(const Grid& g, Fn&& fn) {
    SpatialField out(g.nodes());
    for (int n = 0; n < g.nodes(); ++n) {
        auto [i, j] = g.index(n);
        double x = g.coord(0, i);
        double y = g.dim == 2 ? g.coord(1, j) : 0.0;
        out[n] = fn(x, y);
    }
    return out;
}

/// Samples a function of (x, y, t) on every node and level.
template <class Fn>
SpaceTimeField sample_field(const Grid& g, Fn&& fn) {
    SpaceTimeField out(g);
    for (int k = 0; k < g.levels(); ++k) {
        double t = g.time(k);
        for (int n = 0; n < g.nodes(); ++n) {
            auto [i, j] = g.index(n);
            double x = g.coord(0, i);
            double y = g.dim == 2 ? g.coord(1, j) : 0.0;
            out(n, k) = fn(x, y, t);
        }
    }
    return out;
}

/// Zeroes boundary nodes, leaving a clamped-compatible field.
inline void clamp_boundary(const Grid& g, std::span<double> f) {
    for (int n = 0; n < g.nodes(); ++n)
        if (g.on_boundary(n)) f[n] = 0.0;
}
inline void clamp_boundary(const Grid& g, SpaceTimeField& f) {
    for (int k = 0; k < f.levels(); ++k) clamp_boundary(g, f.level(k));
}

} // namespace hierctl
