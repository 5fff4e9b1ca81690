#pragma once

#include <cmath>
#include <vector>

#include "decompnet/matrix.hpp"
#include "decompnet/svd.hpp"

namespace decompnet {

// Clipping parameter for the singular-value ratios in the SVD backward.
// Scale-invariant: rho is a ratio, so the clipped index set is the same for
// W and c*W, any c > 0.
struct ClipConfig {
    double delta = std::sqrt(0.99);

    void validate() const {
        if (!(delta > 0.0 && delta < 1.0))
            throw InvalidInputError("ClipConfig: delta must be in (0, 1)");
    }
};

// Everything the backward pass needs, captured at forward time. Blocks are
// stored for the internal orientation (rows >= cols); `transposed` records
// whether the original matrix was transposed on entry.
struct SvdGradWorkspace {
    std::size_t rows = 0;       // original matrix shape
    std::size_t cols = 0;
    std::size_t rank = 0;       // truncation rank r
    bool transposed = false;

    DenseMatrix u_kept;         // m' x r
    DenseMatrix u_dropped;      // m' x (R - r)
    DenseMatrix v_kept;         // n' x r
    DenseMatrix v_dropped;      // n' x (R - r)
    std::vector<double> s_kept;
    std::vector<double> s_dropped;
    DenseMatrix rho;            // r x (R - r), rho_ij = s_dropped[j] / s_kept[i]

    std::size_t full_rank() const { return s_kept.size() + s_dropped.size(); }
};

// Rank-r factorization of w: returns the truncated reconstruction together
// with the workspace for the backward pass. Matrices with rows < cols are
// handled by transposing in and out.
std::pair<DenseMatrix, SvdGradWorkspace> lowrank_forward(const DenseMatrix& w, std::size_t r);

// Entrywise min(rho_ij, delta).
DenseMatrix clip_rho(const DenseMatrix& rho, const ClipConfig& clip);

// Exact gradient of the low-rank loss with respect to the full-rank weight:
//   grad = g Vk Vk' + Uk (C1.A + C2.B) Vd' + Ud (C3.A + C1.B)' Vk'
// with A = Vk' g' Ud, B = Uk' g Vd, and the coefficient matrices
// C1 = rho/(1-rho^2), C2 = 1/(1-rho^2), C3 = rho^2/(1-rho^2) evaluated
// entrywise on the clipped ratios ('.' is the Hadamard product; k/d mark the
// kept/dropped blocks). r = R degenerates to the identity on grad_wtilde.
DenseMatrix lowrank_backward(const SvdGradWorkspace& ws, const DenseMatrix& grad_wtilde,
                             const ClipConfig& clip = {});

// lambda' = lambda * ||grad_full|| / ||grad_low||, so that
// lambda' * ||grad_low|| = lambda * ||grad_full|| (equal effective norms).
// A zero grad_low_norm leaves lambda unchanged: the rescale is undefined
// there and a zero gradient contributes nothing at any weight.
double rebalance_lambda(double lambda, double grad_full_norm, double grad_low_norm);

} // namespace decompnet
