#include "decompnet/autograd.hpp"

#include <string>
#include <utility>

namespace decompnet {

std::pair<DenseMatrix, SvdGradWorkspace> lowrank_forward(const DenseMatrix& w, std::size_t r) {
    SvdGradWorkspace ws;
    ws.rows = w.rows();
    ws.cols = w.cols();
    ws.transposed = w.rows() < w.cols();
    const DenseMatrix work = ws.transposed ? w.transposed() : w;

    const SvdFactors f = svd(work);
    const std::size_t R = f.full_rank();
    if (r < 1 || r > R)
        throw InvalidRankError("lowrank_forward: rank " + std::to_string(r) +
                               " outside [1, " + std::to_string(R) + "]");
    ws.rank = r;

    const std::size_t m = work.rows();
    const std::size_t n = work.cols();
    const std::size_t nd = R - r;
    ws.u_kept = DenseMatrix(m, r);
    ws.u_dropped = DenseMatrix(m, nd);
    ws.v_kept = DenseMatrix(n, r);
    ws.v_dropped = DenseMatrix(n, nd);
    ws.s_kept.assign(f.s.begin(), f.s.begin() + static_cast<std::ptrdiff_t>(r));
    ws.s_dropped.assign(f.s.begin() + static_cast<std::ptrdiff_t>(r), f.s.end());
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t k = 0; k < r; ++k) ws.u_kept(i, k) = f.u(i, k);
        for (std::size_t k = 0; k < nd; ++k) ws.u_dropped(i, k) = f.u(i, r + k);
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < r; ++k) ws.v_kept(i, k) = f.v(i, k);
        for (std::size_t k = 0; k < nd; ++k) ws.v_dropped(i, k) = f.v(i, r + k);
    }

    ws.rho = DenseMatrix(r, nd);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < nd; ++j) {
            // s_kept[i] == 0 implies s_dropped[j] == 0 (descending order);
            // the 0/0 ratio is pinned to 1 and handled by clipping later.
            ws.rho(i, j) = ws.s_kept[i] > 0.0 ? ws.s_dropped[j] / ws.s_kept[i] : 1.0;
        }

    DenseMatrix w_tilde = truncate(f, r);
    if (ws.transposed) w_tilde = w_tilde.transposed();
    return {std::move(w_tilde), std::move(ws)};
}

DenseMatrix clip_rho(const DenseMatrix& rho, const ClipConfig& clip) {
    clip.validate();
    DenseMatrix out = rho;
    for (double& v : out.storage()) v = std::min(v, clip.delta);
    return out;
}

DenseMatrix lowrank_backward(const SvdGradWorkspace& ws, const DenseMatrix& grad_wtilde,
                             const ClipConfig& clip) {
    if (grad_wtilde.rows() != ws.rows || grad_wtilde.cols() != ws.cols)
        throw InvalidInputError("lowrank_backward: gradient shape mismatch");
    grad_wtilde.require_finite("lowrank_backward gradient");

    // Full rank: nothing was dropped, the map is the identity.
    if (ws.rank == ws.full_rank()) return grad_wtilde;

    const DenseMatrix g = ws.transposed ? grad_wtilde.transposed() : grad_wtilde;
    const std::size_t r = ws.rank;
    const std::size_t nd = ws.full_rank() - r;

    // Projection term: g Vk Vk'
    DenseMatrix grad = matmul_nt(matmul(g, ws.v_kept), ws.v_kept);

    // Cross terms between kept and dropped subspaces.
    const DenseMatrix a = matmul_tn(ws.v_kept, matmul_tn(g, ws.u_dropped)); // r x nd
    const DenseMatrix b = matmul_tn(ws.u_kept, matmul(g, ws.v_dropped));    // r x nd

    const DenseMatrix rho = clip_rho(ws.rho, clip);
    DenseMatrix inner_kept(r, nd);    // C1.A + C2.B
    DenseMatrix inner_dropped(r, nd); // C3.A + C1.B
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < nd; ++j) {
            const double p = rho(i, j);
            const double den = 1.0 - p * p;
            const double c1 = p / den;
            const double c2 = 1.0 / den;
            const double c3 = p * p / den;
            inner_kept(i, j) = c1 * a(i, j) + c2 * b(i, j);
            inner_dropped(i, j) = c3 * a(i, j) + c1 * b(i, j);
        }

    grad += matmul_nt(matmul(ws.u_kept, inner_kept), ws.v_dropped);
    grad += matmul_nt(matmul(ws.u_dropped, inner_dropped.transposed()), ws.v_kept);

    if (ws.transposed) grad = grad.transposed();
    if (!grad.all_finite())
        throw NumericalFailureError("lowrank_backward: non-finite gradient produced");
    return grad;
}

double rebalance_lambda(double lambda, double grad_full_norm, double grad_low_norm) {
    if (grad_full_norm < 0.0 || grad_low_norm < 0.0)
        throw InvalidInputError("rebalance_lambda: norms must be non-negative");
    if (grad_low_norm == 0.0) return lambda;
    return lambda * grad_full_norm / grad_low_norm;
}

} // namespace decompnet
