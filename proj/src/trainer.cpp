#include "decompnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace decompnet {

namespace {

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct MomentumState {
    std::vector<DenseMatrix> weights;
    std::vector<std::vector<double>> biases, bn_gamma, bn_beta;

    explicit MomentumState(const NetworkModel& model) {
        for (std::size_t l = 0; l < model.num_layers(); ++l) {
            weights.emplace_back(model.weights[l].rows(), model.weights[l].cols());
            biases.emplace_back(model.biases[l].size(), 0.0);
            bn_gamma.emplace_back(model.bn[l].gamma.size(), 0.0);
            bn_beta.emplace_back(model.bn[l].beta.size(), 0.0);
        }
    }
};

void nesterov_step(std::vector<double>& param, std::vector<double>& buf,
                   const std::vector<double>& grad, double lr, double mu) {
    for (std::size_t i = 0; i < param.size(); ++i) {
        buf[i] = mu * buf[i] + grad[i];
        param[i] -= lr * (grad[i] + mu * buf[i]);
    }
}

DenseMatrix batch_rows(const DenseMatrix& features, const std::vector<std::size_t>& order,
                       std::size_t begin, std::size_t end) {
    DenseMatrix out(end - begin, features.cols());
    for (std::size_t i = begin; i < end; ++i)
        std::copy(features.row(order[i]), features.row(order[i]) + features.cols(),
                  out.row(i - begin));
    return out;
}

std::vector<std::size_t> ranks_for_ratio(const NetworkModel& model, Criterion criterion,
                                         double z) {
    if (criterion == Criterion::uniform) return select_uniform(model, z).ranks;
    const std::size_t total = model.total_full_rank();
    std::size_t d_max = 0;
    for (std::size_t l = 0; l < model.num_layers(); ++l) d_max += model.layer_full_rank(l) - 1;
    // Round like Algorithm 1 but clamp so tiny nets stay feasible (rank >= 1).
    auto d = static_cast<std::size_t>(std::llround((1.0 - z) * static_cast<double>(total)));
    d = std::min(d, d_max);
    return (criterion == Criterion::energy ? select_energy(model, d) : select_sv(model, d))
        .ranks;
}

} // namespace

void TrainConfig::validate() const {
    if (lambda < 0.0 || lambda > 1.0) throw InvalidInputError("config: lambda must be in [0,1]");
    if (!(alpha_l > 0.0) || !(alpha_l <= alpha_u) || alpha_u > 1.0)
        throw InvalidInputError("config: need 0 < alpha_l <= alpha_u <= 1");
    if (eta < 0.0) throw InvalidInputError("config: eta must be >= 0");
    if (batch_size == 0) throw InvalidInputError("config: batch_size must be >= 1");
    if (epochs == 0) throw InvalidInputError("config: epochs must be >= 1");
    if (!(lr > 0.0)) throw InvalidInputError("config: lr must be > 0");
    if (lr_decay <= 0.0 || lr_decay > 1.0)
        throw InvalidInputError("config: lr_decay must be in (0,1]");
    if (momentum < 0.0 || momentum >= 1.0)
        throw InvalidInputError("config: momentum must be in [0,1)");
    for (double f : milestone_fractions)
        if (f <= 0.0 || f >= 1.0)
            throw InvalidInputError("config: milestone fractions must be in (0,1)");
    for (double z : probe_ratios)
        if (!(z > 0.0) || z > 1.0)
            throw InvalidInputError("config: probe ratios must be in (0,1]");
    clip.validate();
}

std::vector<std::size_t> TrainConfig::milestones() const {
    std::vector<std::size_t> out;
    for (double f : milestone_fractions)
        out.push_back(static_cast<std::size_t>(std::floor(f * static_cast<double>(epochs))));
    std::sort(out.begin(), out.end());
    return out;
}

std::string TrainLog::to_csv() const {
    std::ostringstream os;
    os << "epoch,lr,loss_full,loss_low,mean_z";
    for (double z : probe_ratios) os << ",acc_z" << format_double(z);
    os << "\n";
    for (const TrainLogRow& r : rows) {
        os << r.epoch << "," << format_double(r.lr) << "," << format_double(r.loss_full) << ","
           << format_double(r.loss_low) << "," << format_double(r.mean_z);
        for (double a : r.probe_accuracy) os << "," << format_double(a);
        os << "\n";
    }
    return os.str();
}

TrainLog train(NetworkModel& model, const Dataset& data, const TrainConfig& config,
               const Dataset* validation, const EpochCallback& on_epoch) {
    config.validate();
    if (data.size() == 0) throw InvalidInputError("train: empty dataset");
    if (data.features.cols() != model.input.features())
        throw InvalidInputError("train: dataset feature count does not match model input");

    Rng rng_shuffle(config.seed, 0);
    Rng rng_z(config.seed, 1);
    Rng rng_init(config.seed, 2);
    if (config.initialize_weights) model.init_he_normal(rng_init);

    MomentumState momentum(model);
    const std::vector<std::size_t> milestones = config.milestones();
    const Dataset& val = validation ? *validation : data;

    TrainLog log;
    log.probe_ratios = config.probe_ratios;

    double lr = config.lr;
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    JointGradOptions opts;
    opts.lambda = config.lambda;
    opts.eta = config.eta;
    opts.clip = config.clip;
    opts.rebalance = config.rebalance;

    std::size_t global_step = 0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t m : milestones)
            if (m == epoch && epoch > 0) lr *= config.lr_decay;

        rng_shuffle.shuffle(order);
        double sum_full = 0.0, sum_low = 0.0, sum_z = 0.0;
        std::size_t steps = 0;

        for (std::size_t begin = 0; begin < data.size(); begin += config.batch_size) {
            const std::size_t end = std::min(begin + config.batch_size, data.size());
            const DenseMatrix batch = batch_rows(data.features, order, begin, end);
            std::vector<int> labels(end - begin);
            for (std::size_t i = begin; i < end; ++i) labels[i - begin] = data.labels[order[i]];

            const double z = rng_z.uniform(config.alpha_l, config.alpha_u);
            std::vector<std::size_t> ranks;
            if (config.lambda > 0.0) ranks = ranks_for_ratio(model, config.criterion, z);

            JointResult res;
            try {
                res = joint_loss_and_grads(model, ranks, batch, labels, opts);
            } catch (const NumericalFailureError& e) {
                throw NumericalFailureError("train: step " + std::to_string(global_step) +
                                                ": " + e.what(),
                                            e.residual());
            }
            if (!std::isfinite(res.loss))
                throw NumericalFailureError("train: non-finite loss at step " +
                                            std::to_string(global_step));

            for (std::size_t l = 0; l < model.num_layers(); ++l) {
                nesterov_step(model.weights[l].storage(), momentum.weights[l].storage(),
                              res.grads.weights[l].storage(), lr, config.momentum);
                nesterov_step(model.biases[l], momentum.biases[l], res.grads.biases[l], lr,
                              config.momentum);
                nesterov_step(model.bn[l].gamma, momentum.bn_gamma[l], res.grads.bn_gamma[l],
                              lr, config.momentum);
                nesterov_step(model.bn[l].beta, momentum.bn_beta[l], res.grads.bn_beta[l], lr,
                              config.momentum);
            }

            sum_full += res.loss_full;
            sum_low += res.loss_low;
            sum_z += z;
            ++steps;
            ++global_step;
        }

        TrainLogRow row;
        row.epoch = epoch;
        row.lr = lr;
        row.loss_full = sum_full / static_cast<double>(steps);
        row.loss_low = sum_low / static_cast<double>(steps);
        row.mean_z = sum_z / static_cast<double>(steps);
        for (double z : config.probe_ratios) {
            const auto ranks = z == 1.0
                                   ? [&] {
                                         std::vector<std::size_t> full;
                                         for (std::size_t l = 0; l < model.num_layers(); ++l)
                                             full.push_back(model.layer_full_rank(l));
                                         return full;
                                     }()
                                   : ranks_for_ratio(model, config.criterion, z);
            row.probe_accuracy.push_back(evaluate(model, ranks, val).second);
        }
        log.rows.push_back(std::move(row));
        if (on_epoch) on_epoch(epoch, model, log);
    }
    return log;
}

std::pair<double, double> evaluate(const NetworkModel& model,
                                   const std::vector<std::size_t>& ranks, const Dataset& data) {
    if (data.size() == 0) throw InvalidInputError("evaluate: empty dataset");
    NetworkModel local = model;
    if (local.has_any_batchnorm()) recalibrate_bn(local, ranks, data.features);
    const ForwardTrace trace =
        forward_lowrank(local, ranks, data.features, BnMode::running_stats);
    const double loss = cross_entropy(trace.probs, data.labels);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < trace.probs.cols(); ++j)
            if (trace.probs(i, j) > trace.probs(i, best)) best = j;
        if (static_cast<int>(best) == data.labels[i]) ++correct;
    }
    return {loss, static_cast<double>(correct) / static_cast<double>(data.size())};
}

} // namespace decompnet
