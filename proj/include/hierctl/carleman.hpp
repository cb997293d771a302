#pragma once

#include <hierctl/hum.hpp>
#include <hierctl/parallel.hpp>

#include <complex>
#include <optional>

namespace hierctl {

/// Piecewise cubic Hermite map through increasing knots. Construction rejects any piece that
/// fails the Fritsch-Carlson monotonicity box.
class MonotoneMap {
public:
    MonotoneMap() = default;
    MonotoneMap(std::vector<double> x, std::vector<double> y, std::vector<double> slope)
        : x_(std::move(x)), y_(std::move(y)), d_(std::move(slope)) {
        if (x_.size() < 2 || y_.size() != x_.size() || d_.size() != x_.size())
            throw InvalidCenter("monotone map needs matching knots");
        for (std::size_t k = 0; k + 1 < x_.size(); ++k) {
            double hk = x_[k + 1] - x_[k];
            double sec = (y_[k + 1] - y_[k]) / hk;
            if (!(hk > 0.0) || !(sec > 0.0)) throw InvalidCenter("knots must increase strictly");
            double a = d_[k] / sec, b = d_[k + 1] / sec;
            if (!(a > 0.0 && a <= 3.0 && b > 0.0 && b <= 3.0))
                throw InvalidCenter("cubic piece is not monotone");
        }
    }

    /// Three-knot map with m(0) = 0, m(c) = L/2, m(L) = L.
    static MonotoneMap centered(double length, double center) {
        if (!(center > 0.0 && center < length)) throw InvalidCenter("critical point must be interior");
        return through({0.0, center, length}, {0.0, 0.5 * length, length});
    }

    /// Secant slopes at the ends, harmonic mean of neighbouring secants inside.
    static MonotoneMap through(std::vector<double> x, std::vector<double> y) {
        const std::size_t n = x.size();
        std::vector<double> sec(n - 1), d(n);
        for (std::size_t k = 0; k + 1 < n; ++k) sec[k] = (y[k + 1] - y[k]) / (x[k + 1] - x[k]);
        d[0] = sec[0];
        d[n - 1] = sec[n - 2];
        for (std::size_t k = 1; k + 1 < n; ++k) d[k] = 2.0 * sec[k - 1] * sec[k] / (sec[k - 1] + sec[k]);
        return MonotoneMap(std::move(x), std::move(y), std::move(d));
    }

    template <class T>
    T value(T x) const {
        std::size_t k = piece(std::real(x));
        double hk = x_[k + 1] - x_[k];
        T t = (x - x_[k]) / hk;
        T t2 = t * t, t3 = t2 * t;
        return (2.0 * t3 - 3.0 * t2 + 1.0) * y_[k] + (t3 - 2.0 * t2 + t) * (hk * d_[k]) +
               (-2.0 * t3 + 3.0 * t2) * y_[k + 1] + (t3 - t2) * (hk * d_[k + 1]);
    }
    double derivative(double x) const {
        std::size_t k = piece(x);
        double hk = x_[k + 1] - x_[k];
        double t = (x - x_[k]) / hk;
        return (6.0 * t * t - 6.0 * t) / hk * y_[k] + (3.0 * t * t - 4.0 * t + 1.0) * d_[k] +
               (-6.0 * t * t + 6.0 * t) / hk * y_[k + 1] + (3.0 * t * t - 2.0 * t) * d_[k + 1];
    }
    const std::vector<double>& knots() const { return x_; }

private:
    std::size_t piece(double x) const {
        std::size_t k = 0;
        while (k + 2 < x_.size() && x >= x_[k + 1]) ++k;
        return k;
    }
    std::vector<double> x_, y_, d_;
};

/// Product over axes of m(x)(L - m(x)): positive inside, zero on the boundary, one critical point.
class EtaFunction {
public:
    EtaFunction() = default;
    EtaFunction(int dim, std::array<double, 2> length, std::array<MonotoneMap, 2> maps)
        : dim_(dim), length_(length), maps_(std::move(maps)) {}

    template <class T>
    T axis_value(int a, T x) const {
        T m = maps_[a].value(x);
        return m * (length_[a] - m);
    }
    template <class T>
    T value(T x, T y) const {
        T v = axis_value(0, x);
        if (dim_ == 2) v *= axis_value(1, y);
        return v;
    }
    double axis_derivative(int a, double x) const {
        double m = maps_[a].value(x);
        return maps_[a].derivative(x) * (length_[a] - 2.0 * m);
    }
    std::array<double, 2> gradient(double x, double y) const {
        if (dim_ == 1) return {axis_derivative(0, x), 0.0};
        return {axis_derivative(0, x) * axis_value(1, y), axis_value(0, x) * axis_derivative(1, y)};
    }
    /// Maximum value, reached where every axis map equals L/2.
    double sup() const {
        double v = length_[0] * length_[0] / 4.0;
        if (dim_ == 2) v *= length_[1] * length_[1] / 4.0;
        return v;
    }
    int dim() const { return dim_; }
    const MonotoneMap& map(int axis) const { return maps_[axis]; }

    SpatialField on_grid(const Grid& g) const {
        SpatialField f = sample_spatial(g, [&](double x, double y) { return value(x, y); });
        clamp_boundary(g, f);
        return f;
    }

private:
    int dim_ = 1;
    std::array<double, 2> length_{1.0, 1.0};
    std::array<MonotoneMap, 2> maps_;
};

inline EtaFunction build_eta(const Grid& g, std::array<double, 2> center) {
    std::array<MonotoneMap, 2> maps;
    for (int a = 0; a < g.dim; ++a) {
        if (!(center[a] > 0.0 && center[a] < g.length[a])) throw InvalidCenter("critical point must be interior");
        maps[a] = MonotoneMap::centered(g.length[a], center[a]);
    }
    return EtaFunction(g.dim, g.length, std::move(maps));
}

/// Two 1D weights that agree outside (lo, hi) and have critical points c1, c2 inside it. The
/// map sends lo and hi to their images under the piecewise-linear map fixing the midpoint at L/2.
inline std::array<EtaFunction, 2> build_eta_pair(const Grid& g, double lo, double hi, std::array<double, 2> centers) {
    if (g.dim != 1) throw Unsupported("paired weights are implemented in one dimension only");
    const double len = g.length[0];
    if (!(lo > 0.0 && lo < hi && hi < len)) throw InvalidCenter("pairing interval must be interior");
    const double mid = 0.5 * (lo + hi);
    const double m_lo = 0.5 * len * lo / mid;
    const double m_hi = 0.5 * len + 0.5 * len * (hi - mid) / (len - mid);
    const double d_lo = 0.5 * len / mid, d_hi = 0.5 * len / (len - mid);
    std::array<EtaFunction, 2> out;
    for (int i = 0; i < 2; ++i) {
        double c = centers[i];
        if (!(c > lo && c < hi)) throw InvalidCenter("critical point must lie inside the pairing interval");
        std::vector<double> x{0.0, lo, c, hi, len}, y{0.0, m_lo, 0.5 * len, m_hi, len};
        double s1 = (0.5 * len - m_lo) / (c - lo), s2 = (m_hi - 0.5 * len) / (hi - c);
        std::vector<double> d{d_lo, d_lo, 2.0 * s1 * s2 / (s1 + s2), d_hi, d_hi};
        out[i] = EtaFunction(1, g.length, {MonotoneMap(x, y, d), MonotoneMap()});
    }
    return out;
}

enum class WeightVariant { Sharp, Modified };
enum class TargetCase { Shared, Distinct };

inline std::string to_string(TargetCase c) { return c == TargetCase::Shared ? "shared" : "distinct"; }

/// Value standing in for the infinite limits at levels where the time denominator vanishes.
constexpr double weight_cap = 1e300;

inline double time_denominator(double t, double horizon, WeightVariant v) {
    if (v == WeightVariant::Modified && t <= 0.5 * horizon) return 0.5 * horizon;
    double p = t * (horizon - t);
    return p > 0.0 ? std::sqrt(p) : 0.0;
}

/// Numerators of the closed forms: exp(lambda (2|eta| + eta)) and that minus exp(4 lambda |eta|).
template <class T>
std::pair<T, T> weight_numerators(T eta, double sup, double lambda) {
    using std::exp;
    T nxi = exp(lambda * (2.0 * sup + eta));
    T nalpha = nxi - std::exp(4.0 * lambda * sup);
    return {nalpha, nxi};
}

struct WeightField {
    SpaceTimeField alpha;
    SpaceTimeField xi;
    WeightVariant variant = WeightVariant::Sharp;
};

inline WeightField build_weights(const Grid& g, std::span<const double> eta, double sup, double lambda, double s,
                                 WeightVariant variant) {
    if (!(lambda > 0.0) || !(s > 0.0)) throw InvalidSpec("Carleman parameters must be positive");
    (void)s;
    WeightField w{SpaceTimeField(g), SpaceTimeField(g), variant};
    for (int k = 0; k < g.levels(); ++k) {
        double den = time_denominator(g.time(k), g.horizon, variant);
        for (int n = 0; n < g.nodes(); ++n) {
            // Written through expm1 so the difference keeps its digits when eta is close to 2|eta|.
            double nalpha = std::exp(4.0 * lambda * sup) * std::expm1(lambda * (eta[n] - 2.0 * sup));
            double nxi = std::exp(lambda * (2.0 * sup + eta[n]));
            if (den == 0.0) {
                w.alpha(n, k) = -weight_cap;
                w.xi(n, k) = weight_cap;
            } else {
                w.alpha(n, k) = nalpha / den;
                w.xi(n, k) = nxi / den;
            }
        }
    }
    return w;
}

/// theta = xi^3 exp(s alpha); zero at levels carrying the cap.
inline SpaceTimeField theta_of(const WeightField& w, double s) {
    SpaceTimeField th = w.xi;
    for (std::size_t i = 0; i < th.size(); ++i) {
        double xi = w.xi.values()[i];
        th.values()[i] = xi >= weight_cap ? 0.0 : xi * xi * xi * std::exp(s * w.alpha.values()[i]);
    }
    return th;
}

struct CarlemanConfig {
    std::array<double, 2> center{0.5, 0.5};
    double lambda = 2.0;
    /// Nonpositive means the default 2 (sqrt(T) + T).
    double s = 0.0;
    TargetCase target_case = TargetCase::Shared;
    /// Region around the critical point, used as the observation set of the ratio report.
    Box omega0{{0.4, 0.4}, {0.6, 0.6}};
    /// Distinct case: interval where the paired weights may differ, and their critical points.
    double pair_lo = 0.3, pair_hi = 0.7;
    std::array<double, 2> pair_centers{0.4, 0.6};
};

struct CarlemanWeights {
    Grid grid;
    double lambda = 2.0;
    double s = 1.0;
    TargetCase target_case = TargetCase::Shared;
    std::vector<EtaFunction> eta;
    std::vector<SpatialField> eta_values;
    double eta_sup = 0.0;
    WeightField sharp;
    std::vector<WeightField> modified;
    SpaceTimeField theta;
    SubdomainMask omega0;
};

inline double default_s(double horizon) { return 2.0 * (std::sqrt(horizon) + horizon); }

inline SpaceTimeField build_theta(const CarlemanWeights& w) {
    SpaceTimeField th = theta_of(w.modified.at(0), w.s);
    if (w.target_case == TargetCase::Distinct) {
        SpaceTimeField other = theta_of(w.modified.at(1), w.s);
        for (std::size_t i = 0; i < th.size(); ++i) th.values()[i] = std::min(th.values()[i], other.values()[i]);
    }
    return th;
}

/// Case check against the problem geometry: shared needs equal target regions and targets;
/// distinct needs the target regions to meet the leader region differently.
inline void check_case(const ProblemSpec& s, TargetCase c) {
    if (c == TargetCase::Shared) {
        if (!(s.target_region[0] == s.target_region[1]) || !(s.target[0] == s.target[1]))
            throw CaseMismatch("shared case needs identical target regions and targets");
    } else {
        if (s.target_region[0].intersect(s.leader_region) == s.target_region[1].intersect(s.leader_region))
            throw CaseMismatch("distinct case needs target regions that meet the leader region differently");
    }
}

inline CarlemanWeights build_carleman_weights(const Grid& g, const CarlemanConfig& cfg) {
    CarlemanWeights w;
    w.grid = g;
    w.lambda = cfg.lambda;
    w.s = cfg.s > 0.0 ? cfg.s : default_s(g.horizon);
    w.target_case = cfg.target_case;
    w.omega0 = build_mask(g, cfg.omega0);
    if (cfg.target_case == TargetCase::Shared) {
        w.eta.push_back(build_eta(g, cfg.center));
    } else {
        auto pair = build_eta_pair(g, cfg.pair_lo, cfg.pair_hi, cfg.pair_centers);
        w.eta.assign(pair.begin(), pair.end());
    }
    w.eta_sup = w.eta[0].sup();
    for (const auto& e : w.eta) {
        w.eta_values.push_back(e.on_grid(g));
        w.modified.push_back(build_weights(g, w.eta_values.back(), w.eta_sup, w.lambda, w.s, WeightVariant::Modified));
    }
    w.sharp = build_weights(g, w.eta_values[0], w.eta_sup, w.lambda, w.s, WeightVariant::Sharp);
    w.theta = build_theta(w);
    return w;
}

struct WeightPropertyReport {
    int samples = 0;
    double gradient_rel_error = 0.0;
    bool gradient_ok = false;
    double max_xi_inverse = 0.0;
    bool xi_inverse_ok = false;
    double strict_time_ratio = 0.0;
    bool strict_time_ok = false;
    double relaxed_time_ratio = 0.0;
    bool relaxed_time_ok = false;
    double min_interior_gradient = 0.0;
};

/// Checks the weight identities at random interior points. Spatial derivatives of the closed
/// forms come from complex-step differentiation, compared with lambda xi grad eta.
inline WeightPropertyReport check_weight_properties(const CarlemanWeights& w, int samples, std::uint64_t seed,
                                                    double tol = 1e-12) {
    const Grid& g = w.grid;
    const EtaFunction& eta = w.eta.at(0);
    const double horizon = g.horizon, lambda = w.lambda, sup = w.eta_sup;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    WeightPropertyReport r;
    r.samples = samples;
    const double step = 1e-30;
    using C = std::complex<double>;
    for (int k = 0; k < samples; ++k) {
        double x = g.length[0] * (0.02 + 0.96 * unit(rng));
        double y = g.dim == 2 ? g.length[1] * (0.02 + 0.96 * unit(rng)) : 0.0;
        double t = horizon * (0.01 + 0.98 * unit(rng));
        double den = time_denominator(t, horizon, WeightVariant::Sharp);
        double e = eta.value(x, y);
        auto [na, nx] = weight_numerators(e, sup, lambda);
        double xi = nx / den;
        auto grad = eta.gradient(x, y);
        for (int a = 0; a < g.dim; ++a) {
            C cx = a == 0 ? C(x, step) : C(x, 0.0);
            C cy = a == 1 ? C(y, step) : C(y, 0.0);
            C ce = eta.value(cx, cy);
            auto [ca, cxi] = weight_numerators(ce, sup, lambda);
            double dalpha = std::imag(ca) / step / den;
            double dxi = std::imag(cxi) / step / den;
            double expected = lambda * xi * grad[a];
            double scale = std::max(std::abs(expected), 1e-300);
            r.gradient_rel_error = std::max({r.gradient_rel_error, std::abs(dalpha - expected) / scale,
                                             std::abs(dxi - expected) / scale});
        }
        r.max_xi_inverse = std::max(r.max_xi_inverse, 1.0 / xi);
        // d/dt of 1/sqrt(t(T-t)) is -(T - 2t) / (2 (t(T-t))^{3/2}).
        double dinv = -(horizon - 2.0 * t) / (2.0 * den * den * den);
        double at = std::abs(na * dinv), xt = std::abs(nx * dinv);
        double xi3 = xi * xi * xi;
        r.strict_time_ratio = std::max(r.strict_time_ratio, (at + xt) / (0.5 * horizon * xi3));
        r.relaxed_time_ratio = std::max(r.relaxed_time_ratio, (at + xt) / (horizon * xi3));
    }
    // Grid scan of xi^{-1} at every interior node and level.
    for (int k = 1; k < g.nt; ++k)
        for (int n = 0; n < g.nodes(); ++n)
            if (!g.on_boundary(n)) r.max_xi_inverse = std::max(r.max_xi_inverse, 1.0 / w.sharp.xi(n, k));
    r.gradient_ok = r.gradient_rel_error <= tol;
    r.xi_inverse_ok = r.max_xi_inverse <= 0.5 * horizon;
    r.strict_time_ok = r.strict_time_ratio <= 1.0;
    r.relaxed_time_ok = r.relaxed_time_ratio <= 1.0;
    // Smallest |grad eta| away from the critical region, corner nodes excluded.
    r.min_interior_gradient = std::numeric_limits<double>::infinity();
    for (int n = 0; n < g.nodes(); ++n) {
        if (g.on_boundary(n) || w.omega0[n]) continue;
        auto [i, j] = g.index(n);
        auto gr = eta.gradient(g.coord(0, i), g.dim == 2 ? g.coord(1, j) : 0.0);
        r.min_interior_gradient = std::min(r.min_interior_gradient, std::hypot(gr[0], gr[1]));
    }
    return r;
}

namespace detail {
/// Even reflection across the boundary node, matching clamped data.
inline int mirror(int i, int n) {
    if (i < 0) return -i;
    if (i > n - 1) return 2 * (n - 1) - i;
    return i;
}

struct Derivatives {
    SpatialField laplacian;
    std::array<SpatialField, 2> gradient;
    std::array<SpatialField, 2> grad_laplacian;
    SpatialField hessian_sq;
};

inline Derivatives derivatives(const Grid& g, std::span<const double> z) {
    auto at = [&](std::span<const double> f, int i, int j) {
        int ii = mirror(i, g.nx[0]);
        int jj = g.dim == 2 ? mirror(j, g.nx[1]) : 0;
        return f[g.node(ii, jj)];
    };
    Derivatives d;
    const int nn = g.nodes();
    d.laplacian.assign(nn, 0.0);
    d.hessian_sq.assign(nn, 0.0);
    for (int a = 0; a < 2; ++a) {
        d.gradient[a].assign(nn, 0.0);
        d.grad_laplacian[a].assign(nn, 0.0);
    }
    const double hx = g.h[0], hy = g.h[1];
    for (int n = 0; n < nn; ++n) {
        auto [i, j] = g.index(n);
        double c = at(z, i, j);
        double zxx = (at(z, i + 1, j) - 2.0 * c + at(z, i - 1, j)) / (hx * hx);
        d.gradient[0][n] = (at(z, i + 1, j) - at(z, i - 1, j)) / (2.0 * hx);
        double zyy = 0.0, zxy = 0.0;
        if (g.dim == 2) {
            zyy = (at(z, i, j + 1) - 2.0 * c + at(z, i, j - 1)) / (hy * hy);
            zxy = (at(z, i + 1, j + 1) - at(z, i + 1, j - 1) - at(z, i - 1, j + 1) + at(z, i - 1, j - 1)) /
                  (4.0 * hx * hy);
            d.gradient[1][n] = (at(z, i, j + 1) - at(z, i, j - 1)) / (2.0 * hy);
        }
        d.laplacian[n] = zxx + zyy;
        d.hessian_sq[n] = zxx * zxx + zyy * zyy + 2.0 * zxy * zxy;
    }
    for (int n = 0; n < nn; ++n) {
        auto [i, j] = g.index(n);
        d.grad_laplacian[0][n] = (at(d.laplacian, i + 1, j) - at(d.laplacian, i - 1, j)) / (2.0 * hx);
        if (g.dim == 2)
            d.grad_laplacian[1][n] = (at(d.laplacian, i, j + 1) - at(d.laplacian, i, j - 1)) / (2.0 * hy);
    }
    return d;
}
} // namespace detail

enum class RatioVariant { Plain, Divergence };

struct CarlemanSample {
    SpatialField terminal;
    /// Plain variant: the source itself. Divergence variant: one flux field per axis.
    std::vector<SpaceTimeField> source;
};

struct CarlemanRatio {
    double lhs = 0.0;
    double rhs = 0.0;
    double ratio = 0.0;
    bool skipped = false;
};

struct CarlemanReport {
    std::vector<CarlemanRatio> samples;
    int skipped = 0;
    double max_ratio = 0.0;
    double median_ratio = 0.0;
    bool all_finite_positive = true;
};

inline std::vector<CarlemanSample> random_carleman_samples(const Grid& g, int count, std::uint64_t seed,
                                                           RatioVariant variant) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    std::vector<CarlemanSample> out(count);
    for (auto& smp : out) {
        smp.terminal.resize(g.nodes());
        for (double& v : smp.terminal) v = normal(rng);
        clamp_boundary(g, smp.terminal);
        int fields = variant == RatioVariant::Plain ? 1 : g.dim;
        for (int a = 0; a < fields; ++a) {
            SpaceTimeField f(g);
            for (double& v : f.values()) v = normal(rng);
            clamp_boundary(g, f);
            smp.source.push_back(std::move(f));
        }
    }
    return out;
}

/// Weighted left and right sides of the global estimate for the backward biharmonic heat
/// equation, one ratio per sample. Weights are the sharp pair of the first weight function.
inline CarlemanReport carleman_ratio_report(const CarlemanWeights& w, const std::vector<CarlemanSample>& samples,
                                            RatioVariant variant, int threads = 1) {
    const Grid& g = w.grid;
    Propagator heat(g, Coefficients::zero(g));
    const double s = w.s, lam = w.lambda;
    const SubdomainMask all = closure_mask(g);
    CarlemanReport rep;
    rep.samples.resize(samples.size());
    parallel_for(static_cast<int>(samples.size()), threads, [&](int idx) {
        const CarlemanSample& smp = samples[idx];
        SpaceTimeField src(g);
        if (variant == RatioVariant::Plain) {
            src = smp.source.at(0);
        } else {
            // Source is the divergence of the flux, discretized as minus the difference transpose.
            for (int a = 0; a < g.dim; ++a)
                for (int k = 0; k < g.levels(); ++k) {
                    SpatialField dv = centered_difference_transpose(g, smp.source.at(a).level(k), a);
                    for (int n = 0; n < g.nodes(); ++n) src(n, k) -= dv[n];
                }
        }
        SpaceTimeField z = heat.backward(src, smp.terminal);
        CarlemanRatio out;
        if (std::all_of(z.values().begin(), z.values().end(), [](double v) { return v == 0.0; })) {
            out.skipped = true;
            rep.samples[idx] = out;
            return;
        }
        SpaceTimeField lhs_f(g), rhs_f(g), obs_f(g);
        for (int k = 0; k < g.levels(); ++k) {
            if (w.sharp.xi(0, k) >= weight_cap) continue;
            detail::Derivatives d = detail::derivatives(g, z.level(k));
            for (int n = 0; n < g.nodes(); ++n) {
                double xi = w.sharp.xi(n, k);
                double e = std::exp(2.0 * s * w.sharp.alpha(n, k));
                double zz = z(n, k) * z(n, k);
                double grad2 = 0.0, gl2 = 0.0;
                for (int a = 0; a < g.dim; ++a) {
                    grad2 += d.gradient[a][n] * d.gradient[a][n];
                    gl2 += d.grad_laplacian[a][n] * d.grad_laplacian[a][n];
                }
                double lhs = std::pow(s, 6) * std::pow(lam, 8) * std::pow(xi, 6) * zz +
                             std::pow(s, 4) * std::pow(lam, 6) * std::pow(xi, 4) * grad2 +
                             std::pow(s, 3) * std::pow(lam, 4) * std::pow(xi, 3) * d.laplacian[n] * d.laplacian[n] +
                             s * s * std::pow(lam, 4) * xi * xi * d.hessian_sq[n] + s * lam * lam * xi * gl2;
                lhs_f(n, k) = lhs * e;
                obs_f(n, k) = std::pow(s, 7) * std::pow(lam, 8) * std::pow(xi, 7) * zz * e;
                double r = 0.0;
                if (variant == RatioVariant::Plain) {
                    r = src(n, k) * src(n, k);
                } else {
                    for (int a = 0; a < g.dim; ++a) r += smp.source[a](n, k) * smp.source[a](n, k);
                    r *= s * s * lam * lam * xi * xi;
                }
                rhs_f(n, k) = r * e;
            }
        }
        out.lhs = integrate(g, lhs_f, all);
        out.rhs = integrate(g, rhs_f, all) + integrate(g, obs_f, w.omega0);
        out.ratio = out.lhs / out.rhs;
        rep.samples[idx] = out;
    });
    std::vector<double> ratios;
    for (const auto& smp : rep.samples) {
        if (smp.skipped) {
            ++rep.skipped;
            continue;
        }
        if (!std::isfinite(smp.ratio) || !(smp.ratio > 0.0) || !(smp.rhs > 0.0)) rep.all_finite_positive = false;
        ratios.push_back(smp.ratio);
    }
    if (!ratios.empty()) {
        std::sort(ratios.begin(), ratios.end());
        rep.max_ratio = ratios.back();
        std::size_t m = ratios.size();
        rep.median_ratio = m % 2 ? ratios[m / 2] : 0.5 * (ratios[m / 2 - 1] + ratios[m / 2]);
    }
    return rep;
}

struct ObservabilitySample {
    double numerator = 0.0;
    double denominator = 0.0;
    double ratio = 0.0;
};

struct ObservabilityReport {
    std::vector<ObservabilitySample> samples;
    int zero_samples = 0;
    double max_ratio = 0.0;
    double median_ratio = 0.0;
    bool all_finite = true;
    bool all_denominators_positive = true;
};

/// R(psi0) = (|psi(0)|^2 + int theta^2 |obs|^2) / int_O |psi|^2 for seeded random psi0.
inline ObservabilityReport estimate_observability(const Dynamics& d, const CarlemanWeights& w, int n_samples,
                                                  std::uint64_t seed, int threads = 1, double tol_rel = 1e-12,
                                                  int max_iter = 400) {
    const auto& s = d.spec();
    const Grid& g = d.grid();
    check_case(s, w.target_case);
    Dynamics hom = d.homogeneous();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    ObservabilityReport rep;
    std::vector<SpatialField> draws;
    while (static_cast<int>(draws.size()) < n_samples) {
        SpatialField p(g.nodes());
        for (double& v : p) v = normal(rng);
        clamp_boundary(g, p);
        if (norm_h(g, p) == 0.0) {
            ++rep.zero_samples;
            continue;
        }
        draws.push_back(std::move(p));
    }
    rep.samples.resize(n_samples);
    SpaceTimeField theta2 = product(w.theta, w.theta);
    parallel_for(n_samples, threads, [&](int k) {
        CoupledAdjointState st = solve_coupled_adjoint(hom, draws[k], tol_rel, max_iter);
        double num = norm_h(g, st.psi.level(0));
        num *= num;
        if (w.target_case == TargetCase::Shared) {
            SpaceTimeField obs = s.tracking_weight[0] * st.eta[0];
            obs.axpy(s.tracking_weight[1], st.eta[1]);
            num += integrate(g, product(obs, obs), s.target_region[0], &theta2);
        } else {
            for (int i = 0; i < 2; ++i) num += integrate(g, product(st.eta[i], st.eta[i]), s.target_region[i], &theta2);
        }
        ObservabilitySample out;
        out.numerator = num;
        out.denominator = norm2_q(g, st.psi, s.leader_region, TimeRule::Left);
        out.ratio = num / out.denominator;
        rep.samples[k] = out;
    });
    std::vector<double> ratios;
    for (const auto& smp : rep.samples) {
        if (!std::isfinite(smp.ratio)) rep.all_finite = false;
        if (!(smp.denominator > 0.0)) rep.all_denominators_positive = false;
        ratios.push_back(smp.ratio);
    }
    if (!ratios.empty()) {
        std::sort(ratios.begin(), ratios.end());
        rep.max_ratio = ratios.back();
        std::size_t m = ratios.size();
        rep.median_ratio = m % 2 ? ratios[m / 2] : 0.5 * (ratios[m / 2 - 1] + ratios[m / 2]);
    }
    return rep;
}

} // namespace hierctl
