#pragma once

#include "decompnet/model.hpp"

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace decompnet {

enum class Criterion { sv, energy, uniform };

enum class BudgetKind { rank_ratio, params, macs };

struct Budget {
    BudgetKind kind = BudgetKind::rank_ratio;
    double z = 1.0;            // rank_ratio
    std::size_t target = 0;    // params / macs

    static Budget rank_ratio(double z) { return {BudgetKind::rank_ratio, z, 0}; }
    static Budget params(std::size_t t) { return {BudgetKind::params, 0.0, t}; }
    static Budget macs(std::size_t t) { return {BudgetKind::macs, 0.0, t}; }
};

struct RankAssignment {
    std::vector<std::size_t> ranks;
    Criterion criterion = Criterion::sv;
    Budget budget;

    std::string to_json() const;
    static RankAssignment from_json(const std::string& text);
};

std::string criterion_name(Criterion c);
Criterion criterion_from_name(const std::string& name);

// Per-layer singular values of the decomposition matrices, descending.
std::vector<std::vector<double>> layer_singular_values(const NetworkModel& model);

// Drop the d bases with globally smallest singular values; every layer keeps
// at least one basis. Ties break lexicographically on (layer, basis index).
RankAssignment select_sv(const NetworkModel& model, std::size_t d);

// Same global walk, but each basis (l, i) is scored by its layer-local
// accumulated energy ratio sum_{k<=i} s_k^2 / sum_k s_k^2. Each drop removes
// the scored layer's current smallest-singular-value basis.
RankAssignment select_energy(const NetworkModel& model, std::size_t d);

// r_l = max(1, round(z * R_l)) per layer, 0 < z <= 1.
RankAssignment select_uniform(const NetworkModel& model, double z);

// Translate a budget into a drop count d. Rank-ratio budgets use
// d = round((1 - Z) * sum R_l); params/MACs targets take the smallest d whose
// assignment under `criterion` meets the target.
std::size_t budget_to_d(const NetworkModel& model, const Budget& budget, Criterion criterion);

// Convenience: budget_to_d + the chosen criterion in one call.
RankAssignment select(const NetworkModel& model, Criterion criterion, const Budget& budget);

// Deployment accounting. A layer whose rank is below the break-even point
// m*n/(m+n) counts (m+n)*r factorized parameters, otherwise m*n un-factorized.
// MACs multiply each layer's parameter count by its output spatial extent.
std::pair<std::size_t, std::size_t> count_params_macs(const NetworkModel& model,
                                                      const std::vector<std::size_t>& ranks);

} // namespace decompnet
