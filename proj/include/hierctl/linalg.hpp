#pragma once

#include <hierctl/errors.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <span>
#include <tuple>
#include <utility>
#include <vector>

namespace hierctl {

using Vector = std::vector<double>;

struct Triplet {
    int row;
    int col;
    double value;
};

/// Square matrix in compressed sparse row layout. Duplicate triplets are summed.
class SparseMatrix {
public:
    SparseMatrix() = default;
    SparseMatrix(int n, std::vector<Triplet> triplets) : n_(n) {
        std::sort(triplets.begin(), triplets.end(), [](const Triplet& a, const Triplet& b) {
            return std::tie(a.row, a.col) < std::tie(b.row, b.col);
        });
        row_ptr_.assign(n + 1, 0);
        for (const auto& t : triplets) {
            if (t.row < 0 || t.row >= n || t.col < 0 || t.col >= n)
                throw ShapeMismatch("matrix index out of range");
            if (!std::isfinite(t.value)) throw NonFiniteBreakdown("non-finite matrix entry");
            if (!cols_.empty() && last_row_ == t.row && cols_.back() == t.col) {
                vals_.back() += t.value;
                continue;
            }
            cols_.push_back(t.col);
            vals_.push_back(t.value);
            last_row_ = t.row;
            ++row_ptr_[t.row + 1];
        }
        for (int i = 0; i < n; ++i) row_ptr_[i + 1] += row_ptr_[i];
    }

    static SparseMatrix identity(int n) {
        std::vector<Triplet> t;
        for (int i = 0; i < n; ++i) t.push_back({i, i, 1.0});
        return SparseMatrix(n, std::move(t));
    }

    int size() const { return n_; }
    std::size_t nonzeros() const { return vals_.size(); }

    template <class Fn>
    void for_each(Fn&& fn) const {
        for (int i = 0; i < n_; ++i)
            for (int p = row_ptr_[i]; p < row_ptr_[i + 1]; ++p) fn(i, cols_[p], vals_[p]);
    }

    std::vector<Triplet> triplets() const {
        std::vector<Triplet> t;
        for_each([&](int i, int j, double v) { t.push_back({i, j, v}); });
        return t;
    }

    double at(int i, int j) const {
        for (int p = row_ptr_[i]; p < row_ptr_[i + 1]; ++p)
            if (cols_[p] == j) return vals_[p];
        return 0.0;
    }

    Vector multiply(std::span<const double> x) const {
        if (static_cast<int>(x.size()) != n_) throw ShapeMismatch("vector size differs from matrix");
        Vector y(n_, 0.0);
        for (int i = 0; i < n_; ++i) {
            double s = 0.0;
            for (int p = row_ptr_[i]; p < row_ptr_[i + 1]; ++p) s += vals_[p] * x[cols_[p]];
            y[i] = s;
        }
        return y;
    }

    SparseMatrix transpose() const {
        std::vector<Triplet> t;
        for_each([&](int i, int j, double v) { t.push_back({j, i, v}); });
        return SparseMatrix(n_, std::move(t));
    }

    /// a*this + b*other
    SparseMatrix combine(double a, const SparseMatrix& other, double b) const {
        if (other.n_ != n_) throw ShapeMismatch("matrix sizes differ");
        std::vector<Triplet> t;
        for_each([&](int i, int j, double v) { t.push_back({i, j, a * v}); });
        other.for_each([&](int i, int j, double v) { t.push_back({i, j, b * v}); });
        return SparseMatrix(n_, std::move(t));
    }

    double max_abs() const {
        double m = 0.0;
        for (double v : vals_) m = std::max(m, std::abs(v));
        return m;
    }
    double norm_inf() const {
        double m = 0.0;
        for (int i = 0; i < n_; ++i) {
            double s = 0.0;
            for (int p = row_ptr_[i]; p < row_ptr_[i + 1]; ++p) s += std::abs(vals_[p]);
            m = std::max(m, s);
        }
        return m;
    }
    std::pair<int, int> bandwidths() const {
        int lower = 0, upper = 0;
        for_each([&](int i, int j, double v) {
            if (v == 0.0) return;
            lower = std::max(lower, i - j);
            upper = std::max(upper, j - i);
        });
        return {lower, upper};
    }

    std::vector<Vector> to_dense() const {
        std::vector<Vector> d(n_, Vector(n_, 0.0));
        for_each([&](int i, int j, double v) { d[i][j] += v; });
        return d;
    }

private:
    int n_ = 0;
    int last_row_ = -1;
    std::vector<int> row_ptr_{0};
    std::vector<int> cols_;
    std::vector<double> vals_;
};

/// Banded LU with partial pivoting; supports solves with the matrix and its transpose.
class Factorization {
public:
    Factorization() = default;

    explicit Factorization(const SparseMatrix& a) : n_(a.size()) {
        auto [kl, ku] = a.bandwidths();
        kl_ = kl;
        ku_ = ku;
        width_ = 2 * kl_ + ku_ + 1;
        band_.assign(static_cast<std::size_t>(n_) * width_, 0.0);
        a.for_each([&](int i, int j, double v) { ref(i, j) += v; });
        double scale = a.max_abs();
        piv_.resize(n_);
        const double tiny = 1e-14 * (scale > 0.0 ? scale : 1.0);
        for (int k = 0; k < n_; ++k) {
            int last = std::min(n_ - 1, k + kl_);
            int p = k;
            double best = std::abs(ref(k, k));
            for (int i = k + 1; i <= last; ++i)
                if (std::abs(ref(i, k)) > best) {
                    best = std::abs(ref(i, k));
                    p = i;
                }
            if (!(best >= tiny) || n_ == 0) throw SingularMatrix("pivot below threshold");
            piv_[k] = p;
            int jmax = std::min(n_ - 1, k + kl_ + ku_);
            if (p != k)
                for (int j = k; j <= jmax; ++j) std::swap(ref(k, j), ref(p, j));
            double pivot = ref(k, k);
            for (int i = k + 1; i <= last; ++i) {
                double l = ref(i, k) / pivot;
                ref(i, k) = l;
                if (l == 0.0) continue;
                for (int j = k + 1; j <= jmax; ++j) ref(i, j) -= l * ref(k, j);
            }
        }
    }

    int size() const { return n_; }

    Vector solve(std::span<const double> rhs) const {
        check(rhs);
        Vector b(rhs.begin(), rhs.end());
        for (int k = 0; k < n_; ++k) {
            if (piv_[k] != k) std::swap(b[k], b[piv_[k]]);
            int last = std::min(n_ - 1, k + kl_);
            for (int i = k + 1; i <= last; ++i) b[i] -= get(i, k) * b[k];
        }
        for (int i = n_ - 1; i >= 0; --i) {
            int jmax = std::min(n_ - 1, i + kl_ + ku_);
            double s = b[i];
            for (int j = i + 1; j <= jmax; ++j) s -= get(i, j) * b[j];
            b[i] = s / get(i, i);
        }
        return b;
    }

    Vector solve_transposed(std::span<const double> rhs) const {
        check(rhs);
        Vector b(rhs.begin(), rhs.end());
        for (int i = 0; i < n_; ++i) {
            int jmin = std::max(0, i - kl_ - ku_);
            double s = b[i];
            for (int j = jmin; j < i; ++j) s -= get(j, i) * b[j];
            b[i] = s / get(i, i);
        }
        for (int k = n_ - 1; k >= 0; --k) {
            int last = std::min(n_ - 1, k + kl_);
            double s = b[k];
            for (int i = k + 1; i <= last; ++i) s -= get(i, k) * b[i];
            b[k] = s;
            if (piv_[k] != k) std::swap(b[k], b[piv_[k]]);
        }
        return b;
    }

private:
    double& ref(int i, int j) { return band_[static_cast<std::size_t>(i) * width_ + (j - i + kl_)]; }
    double get(int i, int j) const { return band_[static_cast<std::size_t>(i) * width_ + (j - i + kl_)]; }
    void check(std::span<const double> rhs) const {
        if (static_cast<int>(rhs.size()) != n_) throw ShapeMismatch("right-hand side size differs");
    }

    int n_ = 0;
    int kl_ = 0;
    int ku_ = 0;
    int width_ = 1;
    std::vector<double> band_;
    std::vector<int> piv_;
};

inline Factorization factorize(const SparseMatrix& a) { return Factorization(a); }
inline Vector solve(const Factorization& f, std::span<const double> rhs) { return f.solve(rhs); }

using LinearMap = std::function<Vector(std::span<const double>)>;
using InnerProduct = std::function<double(std::span<const double>, std::span<const double>)>;

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}
inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

struct CgResult {
    Vector x;
    int iterations = 0;
    /// Relative residual norms, starting with the initial one.
    std::vector<double> residual_history;
};

/// Conjugate gradient from a zero initial guess for an operator that is SPD in `inner`.
inline CgResult conjugate_gradient(const LinearMap& apply, std::span<const double> b, double tol_rel,
                                   int max_iter, const InnerProduct& inner = dot) {
    const std::size_t n = b.size();
    CgResult out;
    out.x.assign(n, 0.0);
    Vector r(b.begin(), b.end());
    double bnorm = std::sqrt(inner(r, r));
    if (!std::isfinite(bnorm)) throw NonFiniteBreakdown("non-finite right-hand side");
    out.residual_history.push_back(bnorm > 0.0 ? 1.0 : 0.0);
    if (bnorm == 0.0) return out;
    Vector p = r;
    double rr = bnorm * bnorm;
    Vector best = out.x;
    double best_res = 1.0;
    for (int it = 1; it <= max_iter; ++it) {
        Vector ap = apply(p);
        double pap = inner(p, ap);
        if (!std::isfinite(pap) || pap <= 0.0)
            throw NonFiniteBreakdown("curvature is not positive and finite");
        double step = rr / pap;
        for (std::size_t i = 0; i < n; ++i) {
            out.x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        double rr_new = inner(r, r);
        if (!std::isfinite(rr_new)) throw NonFiniteBreakdown("non-finite residual");
        double rel = std::sqrt(rr_new) / bnorm;
        out.residual_history.push_back(rel);
        out.iterations = it;
        if (rel < best_res) {
            best_res = rel;
            best = out.x;
        }
        if (rel <= tol_rel) return out;
        double beta = rr_new / rr;
        rr = rr_new;
        for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
    }
    throw MaxIterations("conjugate gradient did not reach tolerance", best, best_res);
}

struct NormEstimate {
    double value = 0.0;
    double last_increment = 0.0;
    std::vector<double> history;
};

/// Largest singular value by power iteration on A^T A from a seeded random start.
inline NormEstimate operator_norm(const LinearMap& apply, const LinearMap& apply_adjoint, int n, int iters,
                                  std::uint64_t seed = 7) {
    NormEstimate est;
    if (n <= 0) return est;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    Vector x(n);
    for (double& v : x) v = normal(rng);
    double nx = norm2(x);
    for (double& v : x) v /= nx;
    double prev = 0.0;
    for (int it = 0; it < iters; ++it) {
        Vector y = apply(x);
        double value = std::max(prev, norm2(y));
        est.history.push_back(value);
        est.last_increment = prev > 0.0 ? (value - prev) / value : (value > 0.0 ? 1.0 : 0.0);
        est.value = value;
        if (value == 0.0) return est;
        prev = value;
        Vector z = apply_adjoint(y);
        double nz = norm2(z);
        if (nz == 0.0) return est;
        for (int i = 0; i < n; ++i) x[i] = z[i] / nz;
    }
    return est;
}

} // namespace hierctl
