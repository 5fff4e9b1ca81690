#include "decompnet/analysis.hpp"

#include "decompnet/svd.hpp"
#include "decompnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace decompnet {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Rows of the layer's exec-form linear output, one vector per sample for
// dense layers and one per (sample, patch) for convolutions. Column count is
// the decomposition matrix's column count, so right singular vectors of that
// matrix act on these rows.
DenseMatrix linear_rows(const NetworkModel& model, std::size_t l, const DenseMatrix& x,
                        const DenseMatrix& w) {
    const LayerSpec& spec = model.layers[l];
    if (spec.kind == LayerKind::dense) return matmul(x, w);
    const LayerGeometry& g = model.geometry()[l];
    const std::size_t hw = g.out_h * g.out_w;
    DenseMatrix out(x.rows() * hw, spec.conv.c_out);
    for (std::size_t b = 0; b < x.rows(); ++b) {
        const DenseMatrix cols = im2col(x.row(b), g.in_h, g.in_w, spec.conv);
        const DenseMatrix y = matmul(cols, w);
        for (std::size_t p = 0; p < hw; ++p)
            for (std::size_t co = 0; co < spec.conv.c_out; ++co)
                out(b * hw + p, co) = y(p, co);
    }
    return out;
}

double sq_row_distance(const DenseMatrix& a, const DenseMatrix& b, std::size_t row) {
    double e = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) {
        const double d = a(row, j) - b(row, j);
        e += d * d;
    }
    return e;
}

bool prop2_class(const NetworkModel& model) {
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
        const LayerSpec& s = model.layers[l];
        if (s.kind != LayerKind::dense || s.has_batchnorm) return false;
        const bool last = l + 1 == model.num_layers();
        if (last && s.activation != Activation::softmax_output) return false;
        if (!last && s.activation != Activation::relu) return false;
    }
    return true;
}

// Per-sample sqrt(2 (e_L + sum_l e_l prod_{j>l} ||W_j||_2^2)) where e_l is
// the error of truncating only layer l while feeding it the full-rank path
// input. Assumes prop2_class(model).
std::vector<double> kl_bounds(const NetworkModel& model, const std::vector<std::size_t>& ranks,
                              const ForwardTrace& full) {
    const std::size_t L = model.num_layers();
    std::vector<double> spec_norm(L);
    for (std::size_t l = 0; l < L; ++l) spec_norm[l] = svd(model.weights[l]).s[0];

    const std::size_t n = full.output.rows();
    std::vector<double> acc(n, 0.0);
    for (std::size_t l = 0; l < L; ++l) {
        const DenseMatrix hat = matmul(full.inputs[l], model.truncated_weight(l, ranks[l]));
        const DenseMatrix ref = matmul(full.inputs[l], model.weights[l]);
        double amp = 1.0;
        for (std::size_t j = l + 1; j < L; ++j) amp *= spec_norm[j] * spec_norm[j];
        for (std::size_t i = 0; i < n; ++i) acc[i] += amp * sq_row_distance(ref, hat, i);
    }
    for (double& v : acc) v = std::sqrt(2.0 * v);
    return acc;
}

} // namespace

Prop1Report check_prop1(const NetworkModel& model, const DenseMatrix& batch,
                        const std::vector<std::size_t>& rank_grid) {
    if (batch.rows() == 0) throw InvalidInputError("check_prop1: empty probe batch");
    for (const LayerSpec& s : model.layers)
        if (s.kind == LayerKind::conv && s.decomposition == ConvDecomposition::spatial)
            throw UnsupportedModelError(
                "check_prop1: spatial conv decompositions lack the per-output projection "
                "structure this check relies on");

    const ForwardTrace full = forward_full(model, batch);
    Prop1Report report;

    for (std::size_t l = 0; l < model.num_layers(); ++l) {
        const DenseMatrix w = model.decomposition_matrix(l);
        const SvdFactors f = svd(w);
        const std::size_t R = f.s.size();
        const DenseMatrix y = linear_rows(model, l, full.inputs[l], w);
        const std::size_t rows_per_sample = y.rows() / batch.rows();

        // Per-sample squared error at every rank.
        std::vector<std::vector<double>> err(R + 1, std::vector<double>(batch.rows(), 0.0));
        for (std::size_t r = 1; r <= R; ++r) {
            const DenseMatrix yh = linear_rows(model, l, full.inputs[l], truncate(f, r));
            for (std::size_t row = 0; row < y.rows(); ++row)
                err[r][row / rows_per_sample] += sq_row_distance(y, yh, row);
        }

        for (std::size_t r = 1; r < R; ++r) {
            // sum over rows of (v_{r+1}^T y_row)^2, per sample
            std::vector<double> drop(batch.rows(), 0.0);
            for (std::size_t row = 0; row < y.rows(); ++row) {
                double dot = 0.0;
                for (std::size_t j = 0; j < y.cols(); ++j) dot += f.v(j, r) * y(row, j);
                drop[row / rows_per_sample] += dot * dot;
            }
            for (std::size_t i = 0; i < batch.rows(); ++i) {
                report.max_monotonicity_violation =
                    std::max(report.max_monotonicity_violation, err[r + 1][i] - err[r][i]);
                report.max_identity_residual =
                    std::max(report.max_identity_residual,
                             std::abs(err[r][i] - err[r + 1][i] - drop[i]));
            }
        }

        LayerErrorCurve curve;
        curve.layer = l;
        for (std::size_t r = 1; r <= R; ++r) {
            if (!rank_grid.empty() &&
                std::find(rank_grid.begin(), rank_grid.end(), r) == rank_grid.end())
                continue;
            double mean = 0.0;
            for (double e : err[r]) mean += e;
            curve.points.emplace_back(r, mean / static_cast<double>(batch.rows()));
        }
        report.curves.push_back(std::move(curve));
    }
    return report;
}

std::string Prop1Report::to_csv() const {
    std::ostringstream os;
    os << "layer,rank,mean_squared_error\n";
    for (const LayerErrorCurve& c : curves)
        for (const auto& [r, e] : c.points)
            os << c.layer << "," << r << "," << format_double(e) << "\n";
    return os.str();
}

std::vector<Prop2Sample> check_prop2(const NetworkModel& model,
                                     const std::vector<std::size_t>& ranks,
                                     const DenseMatrix& batch) {
    if (!prop2_class(model))
        throw UnsupportedModelError(
            "check_prop2: bound requires a dense ReLU network with softmax output and no "
            "batchnorm");
    if (batch.rows() == 0) throw InvalidInputError("check_prop2: empty probe batch");

    const ForwardTrace full = forward_full(model, batch);
    const ForwardTrace low = forward_lowrank(model, ranks, batch);
    const std::vector<double> bounds = kl_bounds(model, ranks, full);

    std::vector<Prop2Sample> out(batch.rows());
    for (std::size_t i = 0; i < batch.rows(); ++i) {
        double kl = 0.0;
        for (std::size_t k = 0; k < full.probs.cols(); ++k) {
            const double p = std::max(full.probs(i, k), 1e-300);
            const double q = std::max(low.probs(i, k), 1e-300);
            kl += p * std::log(p / q);
        }
        out[i] = {kl, bounds[i], bounds[i] - kl};
    }
    return out;
}

LipschitzReport lipschitz_report(const NetworkModel& model,
                                 const std::vector<std::size_t>& ranks, const Dataset& data) {
    if (data.size() == 0) throw InvalidInputError("lipschitz_report: empty dataset");
    if (model.has_any_batchnorm())
        throw UnsupportedModelError(
            "lipschitz_report: batchnorm layers are not 1-Lipschitz; analysis unsupported");

    const std::size_t L = model.num_layers();
    const ForwardTrace full = forward_full(model, data.features);
    const ForwardTrace low = forward_lowrank(model, ranks, data.features);

    LipschitzReport rep;
    rep.omega_theory.resize(L);
    rep.omega_empirical.assign(L, kNaN);
    for (std::size_t l = 0; l < L; ++l) {
        const LayerSpec& spec = model.layers[l];
        double omega = svd(model.weights[l]).s[0];
        if (spec.kind == LayerKind::conv) {
            const double K = static_cast<double>(std::max(spec.conv.k_h, spec.conv.k_w));
            omega *= std::ceil(K / static_cast<double>(spec.conv.stride));
        }
        rep.omega_theory[l] = omega;

        if (l == 0) continue;
        const DenseMatrix wt = model.truncated_weight(l, ranks[l]);
        DenseMatrix diff_in = full.inputs[l];
        diff_in -= low.inputs[l];
        const DenseMatrix num_rows = linear_rows(model, l, diff_in, wt);
        const std::size_t rows_per_sample = num_rows.rows() / data.size();

        double best = kNaN;
        for (std::size_t i = 0; i < data.size(); ++i) {
            double denom = 0.0;
            for (std::size_t j = 0; j < full.linear[l - 1].cols(); ++j) {
                const double d = full.linear[l - 1](i, j) - low.linear[l - 1](i, j);
                denom += d * d;
            }
            if (denom == 0.0) continue;
            double num = 0.0;
            for (std::size_t rr = 0; rr < rows_per_sample; ++rr)
                for (std::size_t j = 0; j < num_rows.cols(); ++j) {
                    const double v = num_rows(i * rows_per_sample + rr, j);
                    num += v * v;
                }
            const double ratio = std::sqrt(num) / std::sqrt(denom);
            if (std::isnan(best) || ratio > best) best = ratio;
        }
        if (std::isnan(best))
            throw InvalidInputError("lipschitz_report: layer " + std::to_string(l) +
                                    ": all samples have identical full- and low-rank inputs "
                                    "(degenerate input)");
        rep.omega_empirical[l] = best;
    }

    rep.product_theory.assign(L, kNaN);
    rep.product_empirical.assign(L, kNaN);
    for (std::size_t l = 0; l + 1 < L; ++l) {
        double pt = 1.0, pe = 1.0;
        for (std::size_t j = l + 1; j < L; ++j) {
            pt *= rep.omega_theory[j];
            pe *= rep.omega_empirical[j];
        }
        rep.product_theory[l] = pt;
        rep.product_empirical[l] = pe;
    }
    return rep;
}

std::string LipschitzReport::to_csv() const {
    std::ostringstream os;
    os << "layer,omega_theory,omega_empirical,product_theory,product_empirical\n";
    for (std::size_t l = 0; l < omega_theory.size(); ++l)
        os << l << "," << format_double(omega_theory[l]) << ","
           << format_double(omega_empirical[l]) << "," << format_double(product_theory[l])
           << "," << format_double(product_empirical[l]) << "\n";
    return os.str();
}

TradeoffReport tradeoff_sweep(const NetworkModel& model, const std::vector<Budget>& budgets,
                              const Dataset& data, Criterion criterion) {
    if (data.size() == 0) throw InvalidInputError("tradeoff_sweep: empty dataset");
    TradeoffReport rep;
    rep.criterion = criterion;
    const bool bound_computable = prop2_class(model);

    for (const Budget& b : budgets) {
        TradeoffRow row;
        row.budget = b;
        try {
            const RankAssignment a = select(model, criterion, b);
            const auto [params, macs] = count_params_macs(model, a.ranks);
            row.params = params;
            row.macs = macs;
            row.accuracy = evaluate(model, a.ranks, data).second;
            if (bound_computable) {
                const auto samples = check_prop2(model, a.ranks, data.features);
                double mean = 0.0;
                for (const Prop2Sample& s : samples) mean += s.bound;
                row.mean_kl_bound = mean / static_cast<double>(samples.size());
            } else {
                row.mean_kl_bound = kNaN;
            }
        } catch (const InvalidBudgetError&) {
            row.feasible = false;
            row.accuracy = kNaN;
            row.mean_kl_bound = kNaN;
        }
        rep.rows.push_back(row);
    }
    return rep;
}

std::string TradeoffReport::to_csv() const {
    std::ostringstream os;
    os << "criterion,budget_kind,budget_value,feasible,params,macs,accuracy,mean_kl_bound\n";
    for (const TradeoffRow& r : rows) {
        std::string kind, value;
        switch (r.budget.kind) {
            case BudgetKind::rank_ratio:
                kind = "rank_ratio";
                value = format_double(r.budget.z);
                break;
            case BudgetKind::params:
                kind = "params";
                value = std::to_string(r.budget.target);
                break;
            case BudgetKind::macs:
                kind = "macs";
                value = std::to_string(r.budget.target);
                break;
        }
        os << criterion_name(criterion) << "," << kind << "," << value << ","
           << (r.feasible ? 1 : 0) << "," << r.params << "," << r.macs << ","
           << format_double(r.accuracy) << "," << format_double(r.mean_kl_bound) << "\n";
    }
    return os.str();
}

} // namespace decompnet
