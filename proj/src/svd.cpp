#include "decompnet/svd.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <string>

namespace decompnet {

namespace {

std::atomic<std::uint64_t> g_svd_calls{0};

constexpr int kMaxSweeps = 60;
constexpr double kSweepTol = 1e-15;     // relative off-diagonal target
constexpr double kRankClamp = 1e-12;    // s_i < kRankClamp * s_max -> 0

// One-sided Jacobi on b (m x n, m >= n). On return the columns of b are
// mutually orthogonal and v holds the accumulated rotations.
double jacobi_orthogonalize(DenseMatrix& b, DenseMatrix& v) {
    const std::size_t m = b.rows();
    const std::size_t n = b.cols();
    double off = 0.0;
    for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
        off = 0.0;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    const double bp = b(i, p), bq = b(i, q);
                    alpha += bp * bp;
                    beta += bq * bq;
                    gamma += bp * bq;
                }
                if (alpha == 0.0 || beta == 0.0) continue;
                const double rel = std::abs(gamma) / std::sqrt(alpha * beta);
                off = std::max(off, rel);
                if (rel <= kSweepTol) continue;

                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t i = 0; i < m; ++i) {
                    const double bp = b(i, p), bq = b(i, q);
                    b(i, p) = c * bp - s * bq;
                    b(i, q) = s * bp + c * bq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vp = v(i, p), vq = v(i, q);
                    v(i, p) = c * vp - s * vq;
                    v(i, q) = s * vp + c * vq;
                }
            }
        }
        if (off <= kSweepTol) return off;
    }
    throw NumericalFailureError(
        "svd: one-sided Jacobi did not converge within " + std::to_string(kMaxSweeps) +
            " sweeps (off-diagonal residual " + std::to_string(off) + ")",
        off);
}

// Fill u columns whose singular value clamped to 0 with an orthonormal
// completion built from standard basis vectors (Gram-Schmidt).
void complete_null_columns(DenseMatrix& u, std::vector<bool>& filled) {
    const std::size_t m = u.rows();
    const std::size_t n = u.cols();
    std::size_t next_basis = 0;
    for (std::size_t j = 0; j < n; ++j) {
        if (filled[j]) continue;
        while (true) {
            if (next_basis >= m)
                throw NumericalFailureError("svd: failed to complete orthonormal basis");
            std::vector<double> cand(m, 0.0);
            cand[next_basis++] = 1.0;
            // two rounds of classical Gram-Schmidt against the filled columns
            for (int round = 0; round < 2; ++round) {
                for (std::size_t k = 0; k < n; ++k) {
                    if (!filled[k]) continue;
                    double proj = 0.0;
                    for (std::size_t i = 0; i < m; ++i) proj += cand[i] * u(i, k);
                    for (std::size_t i = 0; i < m; ++i) cand[i] -= proj * u(i, k);
                }
            }
            double norm = frobenius_norm(cand);
            if (norm > 0.5) {
                for (std::size_t i = 0; i < m; ++i) u(i, j) = cand[i] / norm;
                filled[j] = true;
                break;
            }
        }
    }
}

SvdFactors svd_tall(const DenseMatrix& a) {
    const std::size_t m = a.rows();
    const std::size_t n = a.cols();
    DenseMatrix b = a;
    DenseMatrix v = DenseMatrix::identity(n);
    jacobi_orthogonalize(b, v);

    std::vector<double> sigma(n);
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i) s += b(i, j) * b(i, j);
        sigma[j] = std::sqrt(s);
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

    const double smax = sigma.empty() ? 0.0 : sigma[order[0]];
    SvdFactors f;
    f.u = DenseMatrix(m, n);
    f.v = DenseMatrix(n, n);
    f.s.resize(n);
    std::vector<bool> filled(n, false);
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t src = order[j];
        double s = sigma[src];
        if (s < kRankClamp * smax) s = 0.0;
        f.s[j] = s;
        for (std::size_t i = 0; i < n; ++i) f.v(i, j) = v(i, src);
        if (s > 0.0) {
            for (std::size_t i = 0; i < m; ++i) f.u(i, j) = b(i, src) / sigma[src];
            filled[j] = true;
        }
    }
    complete_null_columns(f.u, filled);
    return f;
}

// Sign convention: first entry of each u column with |x| > 1e-12 made
// non-negative; v flipped along with u so the product is unchanged.
void apply_sign_convention(SvdFactors& f) {
    const std::size_t m = f.u.rows();
    const std::size_t n = f.v.rows();
    for (std::size_t j = 0; j < f.s.size(); ++j) {
        for (std::size_t i = 0; i < m; ++i) {
            const double x = f.u(i, j);
            if (std::abs(x) > 1e-12) {
                if (x < 0.0) {
                    for (std::size_t k = 0; k < m; ++k) f.u(k, j) = -f.u(k, j);
                    for (std::size_t k = 0; k < n; ++k) f.v(k, j) = -f.v(k, j);
                }
                break;
            }
        }
    }
}

} // namespace

SvdFactors svd(const DenseMatrix& a) {
    g_svd_calls.fetch_add(1, std::memory_order_relaxed);
    if (a.rows() == 0 || a.cols() == 0)
        throw InvalidInputError("svd: empty matrix");
    a.require_finite("svd input");
    SvdFactors f;
    if (a.rows() >= a.cols()) {
        f = svd_tall(a);
    } else {
        f = svd_tall(a.transposed());
        std::swap(f.u, f.v);
    }
    apply_sign_convention(f);
    return f;
}

DenseMatrix truncate(const SvdFactors& f, std::size_t r) {
    const std::size_t R = f.full_rank();
    if (r < 1 || r > R)
        throw InvalidRankError("truncate: rank " + std::to_string(r) +
                               " outside [1, " + std::to_string(R) + "]");
    const std::size_t m = f.u.rows();
    const std::size_t n = f.v.rows();
    DenseMatrix w(m, n);
    for (std::size_t k = 0; k < r; ++k) {
        const double s = f.s[k];
        if (s == 0.0) continue;
        for (std::size_t i = 0; i < m; ++i) {
            const double us = f.u(i, k) * s;
            for (std::size_t j = 0; j < n; ++j) w(i, j) += us * f.v(j, k);
        }
    }
    return w;
}

std::uint64_t svd_invocation_count() {
    return g_svd_calls.load(std::memory_order_relaxed);
}

} // namespace decompnet
