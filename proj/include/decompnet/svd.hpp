#pragma once

#include <cstdint>
#include <vector>

#include "decompnet/matrix.hpp"

namespace decompnet {

// Thin SVD of an m x n matrix: u (m x R), s (R, descending), v (n x R),
// R = min(m, n). u' u = I and v' v = I; u diag(s) v' reconstructs the input.
struct SvdFactors {
    DenseMatrix u;
    std::vector<double> s;
    DenseMatrix v;

    std::size_t full_rank() const { return s.size(); }
};

// Full SVD via one-sided Jacobi (columns of the working copy are
// orthogonalized by plane rotations accumulated into V; singular values are
// the final column norms). Deterministic conventions:
//   - singular values sorted descending; values below 1e-12 * s_max clamped
//     to exactly 0,
//   - the first entry of each u column with magnitude > 1e-12 is made
//     non-negative (v flipped along with u),
//   - at most 60 sweeps; exceeding the cap raises NumericalFailureError
//     carrying the remaining off-diagonal residual.
SvdFactors svd(const DenseMatrix& a);

// Best rank-r approximation: sum of the first r singular triples.
DenseMatrix truncate(const SvdFactors& f, std::size_t r);

// Number of svd() invocations since process start (instrumentation; lets
// tests observe that the lambda = 0 training path never touches the SVD).
std::uint64_t svd_invocation_count();

} // namespace decompnet
