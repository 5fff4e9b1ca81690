#pragma once

// Shared helpers for the test suites. The eigensolver here is a deliberately
// independent oracle: classic two-sided Jacobi on a symmetric matrix, used to
// cross-check the library SVD via eig(a' a).

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "decompnet/matrix.hpp"
#include "decompnet/rng.hpp"

namespace testutil {

inline decompnet::DenseMatrix random_matrix(std::size_t m, std::size_t n, decompnet::Rng& rng,
                                            double scale = 1.0) {
    decompnet::DenseMatrix a(m, n);
    for (double& v : a.storage()) v = scale * rng.normal();
    return a;
}

// Random orthonormal columns via Gram-Schmidt on gaussian vectors.
inline decompnet::DenseMatrix random_orthonormal(std::size_t m, std::size_t k,
                                                 decompnet::Rng& rng) {
    decompnet::DenseMatrix q(m, k);
    for (std::size_t j = 0; j < k; ++j) {
        std::vector<double> col(m);
        double norm = 0.0;
        while (true) {
            for (double& v : col) v = rng.normal();
            for (std::size_t p = 0; p < j; ++p) {
                double proj = 0.0;
                for (std::size_t i = 0; i < m; ++i) proj += col[i] * q(i, p);
                for (std::size_t i = 0; i < m; ++i) col[i] -= proj * q(i, p);
            }
            norm = decompnet::frobenius_norm(col);
            if (norm > 1e-3) break;
        }
        for (std::size_t i = 0; i < m; ++i) q(i, j) = col[i] / norm;
    }
    return q;
}

// Compose a matrix with prescribed singular values (descending).
inline decompnet::DenseMatrix matrix_with_singular_values(const std::vector<double>& s,
                                                          std::size_t m, std::size_t n,
                                                          decompnet::Rng& rng) {
    const std::size_t R = std::min(m, n);
    auto u = random_orthonormal(m, R, rng);
    auto v = random_orthonormal(n, R, rng);
    decompnet::DenseMatrix a(m, n);
    for (std::size_t k = 0; k < R; ++k)
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) a(i, j) += s[k] * u(i, k) * v(j, k);
    return a;
}

// Descending singular values whose consecutive ratios stay below max_ratio,
// keeping the gradient clipping inactive and gaps well separated.
inline std::vector<double> separated_singular_values(std::size_t count, decompnet::Rng& rng,
                                                     double max_ratio = 0.9) {
    std::vector<double> s(count);
    double cur = 1.0 + rng.uniform();
    for (std::size_t i = 0; i < count; ++i) {
        s[i] = cur;
        cur *= max_ratio * (0.5 + 0.5 * rng.uniform());
    }
    return s;
}

// Eigenvalues of a symmetric matrix by cyclic two-sided Jacobi. Returns
// eigenvalues in descending order.
inline std::vector<double> symmetric_eigenvalues(decompnet::DenseMatrix a) {
    const std::size_t n = a.rows();
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p + 1 < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        if (off < 1e-28) break;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(a(p, q)) < 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(1.0 + theta * theta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t i = 0; i < n; ++i) {
                    const double aip = a(i, p), aiq = a(i, q);
                    a(i, p) = c * aip - s * aiq;
                    a(i, q) = s * aip + c * aiq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double api = a(p, i), aqi = a(q, i);
                    a(p, i) = c * api - s * aqi;
                    a(q, i) = s * api + c * aqi;
                }
            }
        }
    }
    std::vector<double> eig(n);
    for (std::size_t i = 0; i < n; ++i) eig[i] = a(i, i);
    std::sort(eig.rbegin(), eig.rend());
    return eig;
}

inline double orthonormality_error(const decompnet::DenseMatrix& q) {
    const auto gram = decompnet::matmul_tn(q, q);
    return decompnet::frobenius_norm(gram - decompnet::DenseMatrix::identity(q.cols()));
}

} // namespace testutil
