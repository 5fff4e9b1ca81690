#pragma once

#include "decompnet/dataset.hpp"
#include "decompnet/model.hpp"
#include "decompnet/rank_select.hpp"

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace decompnet {

struct LayerErrorCurve {
    std::size_t layer = 0;
    // (rank, squared layer-output error) averaged over the probe batch.
    std::vector<std::pair<std::size_t, double>> points;
};

struct Prop1Report {
    std::vector<LayerErrorCurve> curves;
    // max over samples/layers/ranks of error(r+1) - error(r); <= 0 when the
    // monotonicity claim holds exactly.
    double max_monotonicity_violation = 0.0;
    // max absolute residual of error(r) - error(r+1) = (v_{r+1}^T y)^2.
    double max_identity_residual = 0.0;

    std::string to_csv() const;
};

// Layer-wise truncation error curves for every rank (or the given subset).
// Supports dense layers and channel-decomposed convolutions; the projection
// identity underlying the check does not apply to spatial decompositions.
Prop1Report check_prop1(const NetworkModel& model, const DenseMatrix& batch,
                        const std::vector<std::size_t>& rank_grid = {});

struct Prop2Sample {
    double kl = 0.0;
    double bound = 0.0;
    double slack = 0.0;  // bound - kl, >= 0 when the bound holds
};

// Per-sample KL(p_full || p_low) against the layer-error bound
// sqrt(2 (e_L + sum_l e_l * prod_{j>l} ||W_j||_2^2)), spectral norms taken
// from the full-rank matrices. Requires a dense ReLU network with softmax
// output and no batchnorm (the hypothesis class of the bound).
std::vector<Prop2Sample> check_prop2(const NetworkModel& model,
                                     const std::vector<std::size_t>& ranks,
                                     const DenseMatrix& batch);

struct LipschitzReport {
    // Indexed by layer. Empirical values are NaN for the first layer (its
    // full- and low-rank inputs coincide, so the defining ratio is 0/0).
    std::vector<double> omega_theory, omega_empirical;
    // Downstream products: Omega[l] = prod_{j>l} omega[j]; NaN for the last
    // layer.
    std::vector<double> product_theory, product_empirical;

    std::string to_csv() const;
};

// Theoretical per-layer Lipschitz constants (spectral norm; convolutions get
// an extra ceil(K/S) factor) against the empirical maximum expansion ratio of
// full-vs-low-rank activation differences over the dataset. Batchnorm models
// are outside the 1-Lipschitz analysis and are rejected.
LipschitzReport lipschitz_report(const NetworkModel& model,
                                 const std::vector<std::size_t>& ranks, const Dataset& data);

struct TradeoffRow {
    Budget budget;
    bool feasible = true;
    std::size_t params = 0;
    std::size_t macs = 0;
    double accuracy = 0.0;
    double mean_kl_bound = 0.0;  // NaN when the model is outside the bound's class
};

struct TradeoffReport {
    Criterion criterion = Criterion::sv;
    std::vector<TradeoffRow> rows;

    std::string to_csv() const;
};

// One row per budget: deployment size and accuracy on the dataset, plus the
// mean KL bound when computable. Infeasible budgets are marked, not fatal.
TradeoffReport tradeoff_sweep(const NetworkModel& model, const std::vector<Budget>& budgets,
                              const Dataset& data, Criterion criterion = Criterion::sv);

} // namespace decompnet
