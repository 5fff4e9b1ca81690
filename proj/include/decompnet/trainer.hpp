#pragma once

#include "decompnet/dataset.hpp"
#include "decompnet/model.hpp"
#include "decompnet/rank_select.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace decompnet {

struct TrainConfig {
    double lambda = 0.5;
    double alpha_l = 0.01;   // lower rank-ratio sampling bound
    double alpha_u = 0.25;   // upper rank-ratio sampling bound
    double eta = 5e-4;       // L2 strength on weight matrices
    std::size_t batch_size = 128;
    std::size_t epochs = 200;
    double lr = 0.1;
    // Step decay: lr multiplied by lr_decay at floor(fraction * epochs).
    std::vector<double> milestone_fractions = {0.3, 0.6, 0.8};
    double lr_decay = 0.2;
    double momentum = 0.9;   // Nesterov
    Criterion criterion = Criterion::sv;
    std::uint64_t seed = 0;
    bool initialize_weights = true;
    // Rank ratios at which validation accuracy is probed each epoch.
    std::vector<double> probe_ratios = {0.05, 0.1, 0.25, 0.5, 1.0};
    ClipConfig clip;
    bool rebalance = true;

    void validate() const;
    std::vector<std::size_t> milestones() const;
};

struct TrainLogRow {
    std::size_t epoch = 0;
    double lr = 0.0;
    double loss_full = 0.0;   // epoch mean
    double loss_low = 0.0;    // epoch mean (0 when lambda == 0)
    double mean_z = 0.0;      // mean sampled rank ratio
    std::vector<double> probe_accuracy;  // aligned with TrainConfig::probe_ratios
};

struct TrainLog {
    std::vector<double> probe_ratios;
    std::vector<TrainLogRow> rows;

    std::string to_csv() const;
};

using EpochCallback =
    std::function<void(std::size_t epoch, const NetworkModel& model, const TrainLog& log)>;

// Joint full/low-rank SGD training with Nesterov momentum and per-step
// rank-ratio sampling. Deterministic given (config, seed): data order, rank
// sampling, and initialization each use their own seeded stream.
TrainLog train(NetworkModel& model, const Dataset& data, const TrainConfig& config,
               const Dataset* validation = nullptr, const EpochCallback& on_epoch = nullptr);

// Mean cross-entropy and top-1 accuracy at the given ranks. Models with
// batchnorm are recalibrated on the evaluation set at those ranks first.
std::pair<double, double> evaluate(const NetworkModel& model,
                                   const std::vector<std::size_t>& ranks, const Dataset& data);

} // namespace decompnet
