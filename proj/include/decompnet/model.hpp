#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "decompnet/autograd.hpp"
#include "decompnet/conv.hpp"
#include "decompnet/matrix.hpp"
#include "decompnet/rng.hpp"

namespace decompnet {

enum class LayerKind { dense, conv };
enum class Activation { relu, identity, softmax_output };
enum class ConvDecomposition { channel, spatial };

struct LayerSpec {
    LayerKind kind = LayerKind::dense;
    std::size_t in_dim = 0;   // dense; inferred during finalize if 0
    std::size_t out_dim = 0;  // dense
    ConvKernelShape conv;     // conv only
    ConvDecomposition decomposition = ConvDecomposition::channel;
    bool has_bias = true;
    bool has_batchnorm = false;
    Activation activation = Activation::relu;
};

struct InputShape {
    std::size_t channels = 1;
    std::size_t height = 1;
    std::size_t width = 1;
    std::size_t features() const { return channels * height * width; }
};

// gamma/beta are trainable and shared between the full- and low-rank paths;
// mean/var are inference statistics, produced only by recalibrate_bn.
struct BatchNormState {
    std::vector<double> gamma, beta, mean, var;
};

constexpr double kBnEpsilon = 1e-5;

// Per-layer geometry resolved from the input shape.
struct LayerGeometry {
    std::size_t in_features = 0, out_features = 0;
    std::size_t in_h = 1, in_w = 1, out_h = 1, out_w = 1;
    std::size_t bn_groups = 0;  // dense: out_features; conv: c_out
};

// Ordered layer graph plus the parameter store. Weights are always kept
// full-rank; conv weights are stored in channel-matricized form
// (k_h*k_w*c_in) x c_out, which is also the execution form for im2col.
class NetworkModel {
public:
    InputShape input;
    std::vector<LayerSpec> layers;
    std::vector<DenseMatrix> weights;
    std::vector<std::vector<double>> biases;  // empty vector when !has_bias
    std::vector<BatchNormState> bn;           // empty state when !has_batchnorm

    // Validates the layer chain, allocates zero parameters for layers that
    // have none yet, and resolves geometry. Must be called before use.
    void finalize();

    std::size_t num_layers() const { return layers.size(); }
    const std::vector<LayerGeometry>& geometry() const { return geom_; }

    // The matrix the SVD machinery operates on: dense weight as-is; conv
    // weight in the layer's decomposition form (1x1 kernels always channel).
    DenseMatrix decomposition_matrix(std::size_t l) const;
    // Full rank R of the decomposition matrix.
    std::size_t layer_full_rank(std::size_t l) const;
    std::size_t total_full_rank() const;

    // Rank-r weight in execution form (dense or channel-matricized conv).
    DenseMatrix truncated_weight(std::size_t l, std::size_t r) const;

    bool has_any_batchnorm() const;
    void init_he_normal(Rng& rng);

private:
    std::vector<LayerGeometry> geom_;
    bool finalized_ = false;

    friend struct ModelExecution;
};

struct ForwardTrace {
    std::vector<DenseMatrix> inputs;  // x_l entering each layer (batch x in)
    std::vector<DenseMatrix> linear;  // y_l = linear output, pre-BN (batch x out)
    DenseMatrix output;               // post-activation of the last layer
    DenseMatrix probs;                // softmax probabilities when applicable
};

enum class BnMode { batch_stats, running_stats };

// Full-rank forward pass over a batch (rows are samples, features flattened
// as [c][h][w]).
ForwardTrace forward_full(const NetworkModel& model, const DenseMatrix& batch,
                          BnMode bn_mode = BnMode::batch_stats);

// Low-rank forward with each weight replaced by its rank-r_l truncation.
// Theta (biases, BN gamma/beta) is the same storage as the full path.
ForwardTrace forward_lowrank(const NetworkModel& model, const std::vector<std::size_t>& ranks,
                             const DenseMatrix& batch, BnMode bn_mode = BnMode::batch_stats);

struct Gradients {
    std::vector<DenseMatrix> weights;
    std::vector<std::vector<double>> biases;
    std::vector<std::vector<double>> bn_gamma;
    std::vector<std::vector<double>> bn_beta;
};

struct JointGradOptions {
    double lambda = 0.5;
    double eta = 5e-4;
    ClipConfig clip{};
    bool rebalance = true;  // per-layer gradient-norm rebalancing of lambda
};

struct JointResult {
    double loss = 0.0;       // (1-lambda) L_full + lambda L_low + eta/2 sum ||W||^2
    double loss_full = 0.0;  // cross-entropy of the full-rank network
    double loss_low = 0.0;   // cross-entropy of the low-rank network (0 if skipped)
    Gradients grads;
};

// Joint objective and gradients. `ranks` may be empty when lambda == 0 (the
// low-rank path, including all SVD machinery, is skipped entirely).
JointResult joint_loss_and_grads(const NetworkModel& model, const std::vector<std::size_t>& ranks,
                                 const DenseMatrix& batch, const std::vector<int>& labels,
                                 const JointGradOptions& opts);

// Recompute BN inference statistics (mean/var) by a whole-dataset pass at the
// given ranks. gamma/beta untouched. Pass full ranks for the full network.
void recalibrate_bn(NetworkModel& model, const std::vector<std::size_t>& ranks,
                    const DenseMatrix& dataset);

// Mean cross-entropy of softmax probabilities against integer labels.
double cross_entropy(const DenseMatrix& probs, const std::vector<int>& labels);

// --- serialization (versioned binary container, JSON header + f64 LE blocks;
// byte layout documented in docs/formats.md) ---

void save_model(const NetworkModel& model, const std::string& path,
                const std::string& meta_json = "{}");
NetworkModel load_model(const std::string& path, std::string* meta_json = nullptr);

} // namespace decompnet
