#include "decompnet/rank_select.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

namespace decompnet {

namespace {

using nlohmann::json;

struct ScoredBasis {
    double score;
    std::size_t layer;
    std::size_t basis;
};

std::size_t max_droppable(const std::vector<std::vector<double>>& sv) {
    std::size_t d = 0;
    for (const auto& s : sv) d += s.size() - 1;
    return d;
}

RankAssignment drop_scored(const NetworkModel& model, std::vector<ScoredBasis> entries,
                           std::size_t d, Criterion criterion) {
    const auto sv = layer_singular_values(model);
    if (d > max_droppable(sv))
        throw InvalidBudgetError("rank selection: cannot drop " + std::to_string(d) +
                                 " bases, at most " + std::to_string(max_droppable(sv)) +
                                 " while keeping rank 1 per layer");

    std::stable_sort(entries.begin(), entries.end(),
                     [](const ScoredBasis& a, const ScoredBasis& b) {
                         if (a.score != b.score) return a.score < b.score;
                         if (a.layer != b.layer) return a.layer < b.layer;
                         return a.basis < b.basis;
                     });

    RankAssignment out;
    out.criterion = criterion;
    out.ranks.resize(sv.size());
    for (std::size_t l = 0; l < sv.size(); ++l) out.ranks[l] = sv[l].size();
    std::size_t dropped = 0;
    for (const ScoredBasis& e : entries) {
        if (dropped == d) break;
        if (out.ranks[e.layer] <= 1) continue;
        --out.ranks[e.layer];
        ++dropped;
    }
    return out;
}

} // namespace

std::string criterion_name(Criterion c) {
    switch (c) {
        case Criterion::sv: return "sv";
        case Criterion::energy: return "energy";
        case Criterion::uniform: return "uniform";
    }
    return "sv";
}

Criterion criterion_from_name(const std::string& name) {
    if (name == "sv") return Criterion::sv;
    if (name == "energy") return Criterion::energy;
    if (name == "uniform") return Criterion::uniform;
    throw InvalidInputError("unknown criterion '" + name + "' (expected sv, energy, uniform)");
}

std::vector<std::vector<double>> layer_singular_values(const NetworkModel& model) {
    std::vector<std::vector<double>> out;
    out.reserve(model.num_layers());
    for (std::size_t l = 0; l < model.num_layers(); ++l)
        out.push_back(svd(model.decomposition_matrix(l)).s);
    return out;
}

RankAssignment select_sv(const NetworkModel& model, std::size_t d) {
    const auto sv = layer_singular_values(model);
    std::vector<ScoredBasis> entries;
    for (std::size_t l = 0; l < sv.size(); ++l)
        for (std::size_t i = 0; i < sv[l].size(); ++i) entries.push_back({sv[l][i], l, i});
    return drop_scored(model, std::move(entries), d, Criterion::sv);
}

RankAssignment select_energy(const NetworkModel& model, std::size_t d) {
    const auto sv = layer_singular_values(model);
    std::vector<ScoredBasis> entries;
    for (std::size_t l = 0; l < sv.size(); ++l) {
        double total = 0.0;
        for (double s : sv[l]) total += s * s;
        double acc = 0.0;
        for (std::size_t i = 0; i < sv[l].size(); ++i) {
            acc += sv[l][i] * sv[l][i];
            entries.push_back({total > 0.0 ? acc / total : 0.0, l, i});
        }
    }
    return drop_scored(model, std::move(entries), d, Criterion::energy);
}

RankAssignment select_uniform(const NetworkModel& model, double z) {
    if (!(z > 0.0) || z > 1.0)
        throw InvalidBudgetError("uniform selection: z must be in (0, 1]");
    RankAssignment out;
    out.criterion = Criterion::uniform;
    out.budget = Budget::rank_ratio(z);
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
        const std::size_t R = model.layer_full_rank(l);
        const auto r = static_cast<std::size_t>(
            std::llround(z * static_cast<double>(R)));
        out.ranks.push_back(std::max<std::size_t>(1, std::min(r, R)));
    }
    return out;
}

std::size_t budget_to_d(const NetworkModel& model, const Budget& budget, Criterion criterion) {
    const std::size_t total = model.total_full_rank();
    std::size_t d_max = 0;
    for (std::size_t l = 0; l < model.num_layers(); ++l) d_max += model.layer_full_rank(l) - 1;

    if (budget.kind == BudgetKind::rank_ratio) {
        if (!(budget.z > 0.0) || budget.z > 1.0)
            throw InvalidBudgetError("budget: rank ratio must be in (0, 1]");
        const auto d = static_cast<std::size_t>(
            std::llround((1.0 - budget.z) * static_cast<double>(total)));
        if (d > d_max)
            throw InvalidBudgetError("budget: rank ratio " + std::to_string(budget.z) +
                                     " needs d=" + std::to_string(d) +
                                     " drops, feasible maximum is " + std::to_string(d_max));
        return d;
    }

    auto measure = [&](std::size_t d) {
        RankAssignment a = criterion == Criterion::energy ? select_energy(model, d)
                                                          : select_sv(model, d);
        const auto [params, macs] = count_params_macs(model, a.ranks);
        return budget.kind == BudgetKind::params ? params : macs;
    };
    for (std::size_t d = 0; d <= d_max; ++d)
        if (measure(d) <= budget.target) return d;
    throw InvalidBudgetError("budget: target " + std::to_string(budget.target) + " " +
                             (budget.kind == BudgetKind::params ? "params" : "MACs") +
                             " is below the rank-1-everywhere minimum of " +
                             std::to_string(measure(d_max)));
}

RankAssignment select(const NetworkModel& model, Criterion criterion, const Budget& budget) {
    RankAssignment out;
    if (criterion == Criterion::uniform) {
        if (budget.kind != BudgetKind::rank_ratio)
            throw InvalidBudgetError("uniform selection only supports rank-ratio budgets");
        out = select_uniform(model, budget.z);
    } else {
        const std::size_t d = budget_to_d(model, budget, criterion);
        out = criterion == Criterion::energy ? select_energy(model, d) : select_sv(model, d);
    }
    out.budget = budget;
    return out;
}

std::pair<std::size_t, std::size_t> count_params_macs(const NetworkModel& model,
                                                      const std::vector<std::size_t>& ranks) {
    if (ranks.size() != model.num_layers())
        throw InvalidInputError("count_params_macs: one rank per layer required");
    std::size_t params = 0, macs = 0;
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
        const DenseMatrix dec = model.decomposition_matrix(l);
        const std::size_t m = dec.rows(), n = dec.cols();
        const std::size_t r = ranks[l];
        if (r < 1 || r > std::min(m, n))
            throw InvalidRankError("count_params_macs: invalid rank at layer " +
                                   std::to_string(l));
        const bool factorized =
            static_cast<double>(r) <
            static_cast<double>(m) * static_cast<double>(n) / static_cast<double>(m + n);
        const std::size_t p = factorized ? (m + n) * r : m * n;
        params += p;
        const LayerGeometry& g = model.geometry()[l];
        const std::size_t hw =
            model.layers[l].kind == LayerKind::conv ? g.out_h * g.out_w : 1;
        macs += p * hw;
    }
    return {params, macs};
}

std::string RankAssignment::to_json() const {
    json j;
    j["criterion"] = criterion_name(criterion);
    json b;
    switch (budget.kind) {
        case BudgetKind::rank_ratio:
            b["kind"] = "rank_ratio";
            b["z"] = budget.z;
            break;
        case BudgetKind::params:
            b["kind"] = "params";
            b["target"] = budget.target;
            break;
        case BudgetKind::macs:
            b["kind"] = "macs";
            b["target"] = budget.target;
            break;
    }
    j["budget"] = b;
    j["ranks"] = ranks;
    return j.dump(2);
}

RankAssignment RankAssignment::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("rank assignment: malformed JSON: ") + e.what());
    }
    RankAssignment out;
    out.criterion = criterion_from_name(j.at("criterion").get<std::string>());
    const json& b = j.at("budget");
    const std::string kind = b.at("kind").get<std::string>();
    if (kind == "rank_ratio")
        out.budget = Budget::rank_ratio(b.at("z").get<double>());
    else if (kind == "params")
        out.budget = Budget::params(b.at("target").get<std::size_t>());
    else if (kind == "macs")
        out.budget = Budget::macs(b.at("target").get<std::size_t>());
    else
        throw ParseError("rank assignment: unknown budget kind '" + kind + "'");
    out.ranks = j.at("ranks").get<std::vector<std::size_t>>();
    return out;
}

} // namespace decompnet
