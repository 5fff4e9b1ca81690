#include "decompnet/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace decompnet {

namespace {

DenseMatrix channel_to_spatial(const DenseMatrix& m, const ConvKernelShape& shape) {
    return matricize_spatial(dematricize_channel(m, shape));
}

DenseMatrix spatial_to_channel(const DenseMatrix& m, const ConvKernelShape& shape) {
    return matricize_channel(dematricize_spatial(m, shape));
}

} // namespace

void NetworkModel::finalize() {
    if (layers.empty()) throw InvalidInputError("NetworkModel: no layers");
    if (input.features() == 0) throw InvalidInputError("NetworkModel: empty input shape");

    geom_.clear();
    geom_.resize(layers.size());
    std::size_t cur_c = input.channels, cur_h = input.height, cur_w = input.width;

    for (std::size_t l = 0; l < layers.size(); ++l) {
        LayerSpec& spec = layers[l];
        LayerGeometry& g = geom_[l];
        if (spec.activation == Activation::softmax_output && l + 1 != layers.size())
            throw InvalidInputError("NetworkModel: softmax only allowed on the final layer");

        if (spec.kind == LayerKind::dense) {
            g.in_features = cur_c * cur_h * cur_w;
            if (spec.in_dim == 0) spec.in_dim = g.in_features;
            if (spec.in_dim != g.in_features)
                throw InvalidInputError("NetworkModel: layer " + std::to_string(l) +
                                        " expects " + std::to_string(spec.in_dim) +
                                        " inputs, gets " + std::to_string(g.in_features));
            if (spec.out_dim == 0)
                throw InvalidInputError("NetworkModel: dense layer needs out_dim");
            g.out_features = spec.out_dim;
            g.in_h = g.in_w = g.out_h = g.out_w = 1;
            g.bn_groups = spec.out_dim;
            cur_c = spec.out_dim;
            cur_h = cur_w = 1;
        } else {
            if (spec.conv.c_in != 0 && spec.conv.c_in != cur_c)
                throw InvalidInputError("NetworkModel: conv layer " + std::to_string(l) +
                                        " c_in mismatch");
            spec.conv.c_in = cur_c;
            spec.conv.validate();
            // 1x1 kernels have no spatial redundancy; always channel-wise.
            if (spec.conv.is_1x1()) spec.decomposition = ConvDecomposition::channel;
            g.in_h = cur_h;
            g.in_w = cur_w;
            g.out_h = conv_out_extent(cur_h, spec.conv.k_h, spec.conv.stride);
            g.out_w = conv_out_extent(cur_w, spec.conv.k_w, spec.conv.stride);
            g.in_features = cur_c * cur_h * cur_w;
            g.out_features = spec.conv.c_out * g.out_h * g.out_w;
            g.bn_groups = spec.conv.c_out;
            cur_c = spec.conv.c_out;
            cur_h = g.out_h;
            cur_w = g.out_w;
        }
    }

    weights.resize(layers.size());
    biases.resize(layers.size());
    bn.resize(layers.size());
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const LayerSpec& spec = layers[l];
        const LayerGeometry& g = geom_[l];
        const std::size_t wr = spec.kind == LayerKind::dense
                                   ? spec.in_dim
                                   : spec.conv.k_h * spec.conv.k_w * spec.conv.c_in;
        const std::size_t wc = spec.kind == LayerKind::dense ? spec.out_dim : spec.conv.c_out;
        if (weights[l].rows() != wr || weights[l].cols() != wc) {
            if (weights[l].size() != 0)
                throw InvalidInputError("NetworkModel: weight shape mismatch at layer " +
                                        std::to_string(l));
            weights[l] = DenseMatrix(wr, wc);
        }
        if (spec.has_bias) {
            if (biases[l].empty()) biases[l].assign(g.bn_groups, 0.0);
            if (biases[l].size() != g.bn_groups)
                throw InvalidInputError("NetworkModel: bias size mismatch at layer " +
                                        std::to_string(l));
        } else {
            biases[l].clear();
        }
        if (spec.has_batchnorm) {
            auto& s = bn[l];
            if (s.gamma.empty()) {
                s.gamma.assign(g.bn_groups, 1.0);
                s.beta.assign(g.bn_groups, 0.0);
                s.mean.assign(g.bn_groups, 0.0);
                s.var.assign(g.bn_groups, 1.0);
            }
            if (s.gamma.size() != g.bn_groups)
                throw InvalidInputError("NetworkModel: batchnorm size mismatch at layer " +
                                        std::to_string(l));
        } else {
            bn[l] = BatchNormState{};
        }
    }
    finalized_ = true;
}

DenseMatrix NetworkModel::decomposition_matrix(std::size_t l) const {
    const LayerSpec& spec = layers[l];
    if (spec.kind == LayerKind::dense || spec.decomposition == ConvDecomposition::channel)
        return weights[l];
    return channel_to_spatial(weights[l], spec.conv);
}

std::size_t NetworkModel::layer_full_rank(std::size_t l) const {
    const DenseMatrix w = decomposition_matrix(l);
    return std::min(w.rows(), w.cols());
}

std::size_t NetworkModel::total_full_rank() const {
    std::size_t total = 0;
    for (std::size_t l = 0; l < num_layers(); ++l) total += layer_full_rank(l);
    return total;
}

DenseMatrix NetworkModel::truncated_weight(std::size_t l, std::size_t r) const {
    const LayerSpec& spec = layers[l];
    const DenseMatrix dec = decomposition_matrix(l);
    if (r == std::min(dec.rows(), dec.cols())) return weights[l];
    DenseMatrix trunc = truncate(svd(dec), r);
    if (spec.kind == LayerKind::conv && spec.decomposition == ConvDecomposition::spatial)
        trunc = spatial_to_channel(trunc, spec.conv);
    return trunc;
}

bool NetworkModel::has_any_batchnorm() const {
    return std::any_of(layers.begin(), layers.end(),
                       [](const LayerSpec& s) { return s.has_batchnorm; });
}

void NetworkModel::init_he_normal(Rng& rng) {
    if (!finalized_) finalize();
    for (std::size_t l = 0; l < num_layers(); ++l) {
        const double fan_in = static_cast<double>(weights[l].rows());
        const double stddev = std::sqrt(2.0 / fan_in);
        for (double& v : weights[l].storage()) v = stddev * rng.normal();
    }
}

// ---------------------------------------------------------------------------
// execution
// ---------------------------------------------------------------------------

namespace {

struct LayerCache {
    DenseMatrix x;   // input
    DenseMatrix y;   // linear output (pre-BN)
    DenseMatrix z;   // post-BN pre-activation
    DenseMatrix a;   // post-activation
    std::vector<DenseMatrix> cols;  // conv: per-sample im2col patches
    std::vector<double> mu, var;    // BN batch statistics actually used
};

std::size_t bn_group_of(const LayerSpec& spec, const LayerGeometry& g, std::size_t feature) {
    return spec.kind == LayerKind::dense ? feature : feature / (g.out_h * g.out_w);
}

DenseMatrix linear_apply(const LayerSpec& spec, const LayerGeometry& g, const DenseMatrix& w,
                         const DenseMatrix& x, std::vector<DenseMatrix>* cols_out) {
    if (spec.kind == LayerKind::dense) return matmul(x, w);

    const std::size_t batch = x.rows();
    const std::size_t hw = g.out_h * g.out_w;
    DenseMatrix y(batch, g.out_features);
    for (std::size_t b = 0; b < batch; ++b) {
        DenseMatrix cols = im2col(x.row(b), g.in_h, g.in_w, spec.conv);
        const DenseMatrix out = matmul(cols, w);  // (oh*ow) x c_out
        for (std::size_t p = 0; p < hw; ++p)
            for (std::size_t co = 0; co < spec.conv.c_out; ++co)
                y(b, co * hw + p) = out(p, co);
        if (cols_out) cols_out->push_back(std::move(cols));
    }
    return y;
}

void run_forward(const NetworkModel& model, const std::vector<DenseMatrix>& exec_weights,
                 const DenseMatrix& batch, BnMode bn_mode, std::vector<LayerCache>& caches) {
    if (batch.cols() != model.input.features())
        throw InvalidInputError("forward: batch has " + std::to_string(batch.cols()) +
                                " features, model expects " +
                                std::to_string(model.input.features()));
    if (batch.rows() == 0) throw InvalidInputError("forward: empty batch");
    batch.require_finite("forward batch");

    caches.clear();
    caches.resize(model.num_layers());
    DenseMatrix cur = batch;
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
        const LayerSpec& spec = model.layers[l];
        const LayerGeometry& g = model.geometry()[l];
        LayerCache& c = caches[l];
        c.x = std::move(cur);

        c.y = linear_apply(spec, g, exec_weights[l], c.x,
                           spec.kind == LayerKind::conv ? &c.cols : nullptr);
        if (spec.has_bias) {
            const auto& bvec = model.biases[l];
            for (std::size_t b = 0; b < c.y.rows(); ++b)
                for (std::size_t j = 0; j < c.y.cols(); ++j)
                    c.y(b, j) += bvec[bn_group_of(spec, g, j)];
        }

        if (spec.has_batchnorm) {
            const auto& state = model.bn[l];
            const std::size_t groups = g.bn_groups;
            if (bn_mode == BnMode::batch_stats) {
                c.mu.assign(groups, 0.0);
                c.var.assign(groups, 0.0);
                std::vector<double> count(groups, 0.0);
                for (std::size_t b = 0; b < c.y.rows(); ++b)
                    for (std::size_t j = 0; j < c.y.cols(); ++j) {
                        const std::size_t gi = bn_group_of(spec, g, j);
                        c.mu[gi] += c.y(b, j);
                        count[gi] += 1.0;
                    }
                for (std::size_t gi = 0; gi < groups; ++gi) c.mu[gi] /= count[gi];
                for (std::size_t b = 0; b < c.y.rows(); ++b)
                    for (std::size_t j = 0; j < c.y.cols(); ++j) {
                        const std::size_t gi = bn_group_of(spec, g, j);
                        const double d = c.y(b, j) - c.mu[gi];
                        c.var[gi] += d * d;
                    }
                for (std::size_t gi = 0; gi < groups; ++gi) c.var[gi] /= count[gi];
            } else {
                c.mu = state.mean;
                c.var = state.var;
            }
            c.z = DenseMatrix(c.y.rows(), c.y.cols());
            for (std::size_t b = 0; b < c.y.rows(); ++b)
                for (std::size_t j = 0; j < c.y.cols(); ++j) {
                    const std::size_t gi = bn_group_of(spec, g, j);
                    const double xhat = (c.y(b, j) - c.mu[gi]) / std::sqrt(c.var[gi] + kBnEpsilon);
                    c.z(b, j) = state.gamma[gi] * xhat + state.beta[gi];
                }
        } else {
            c.z = c.y;
        }

        switch (spec.activation) {
            case Activation::identity:
                c.a = c.z;
                break;
            case Activation::relu:
                c.a = c.z;
                for (double& v : c.a.storage()) v = std::max(v, 0.0);
                break;
            case Activation::softmax_output: {
                c.a = DenseMatrix(c.z.rows(), c.z.cols());
                for (std::size_t b = 0; b < c.z.rows(); ++b) {
                    double mx = c.z(b, 0);
                    for (std::size_t j = 1; j < c.z.cols(); ++j) mx = std::max(mx, c.z(b, j));
                    double denom = 0.0;
                    for (std::size_t j = 0; j < c.z.cols(); ++j)
                        denom += std::exp(c.z(b, j) - mx);
                    for (std::size_t j = 0; j < c.z.cols(); ++j)
                        c.a(b, j) = std::exp(c.z(b, j) - mx) / denom;
                }
                break;
            }
        }
        if (!c.a.all_finite())
            throw NumericalFailureError("forward: non-finite activation at layer " +
                                        std::to_string(l));
        cur = c.a;
    }
}

ForwardTrace trace_from_caches(const NetworkModel& model, std::vector<LayerCache>& caches) {
    ForwardTrace t;
    t.inputs.reserve(caches.size());
    t.linear.reserve(caches.size());
    for (auto& c : caches) {
        t.inputs.push_back(std::move(c.x));
        t.linear.push_back(c.y);
    }
    t.output = caches.back().a;
    if (model.layers.back().activation == Activation::softmax_output) t.probs = t.output;
    return t;
}

std::vector<DenseMatrix> exec_weights_at_ranks(const NetworkModel& model,
                                               const std::vector<std::size_t>& ranks) {
    if (ranks.size() != model.num_layers())
        throw InvalidInputError("ranks: expected one entry per layer");
    std::vector<DenseMatrix> w;
    w.reserve(model.num_layers());
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
        const std::size_t R = model.layer_full_rank(l);
        if (ranks[l] < 1 || ranks[l] > R)
            throw InvalidRankError("ranks: layer " + std::to_string(l) + " rank " +
                                   std::to_string(ranks[l]) + " outside [1, " +
                                   std::to_string(R) + "]");
        w.push_back(model.truncated_weight(l, ranks[l]));
    }
    return w;
}

// Backpropagation through the cached forward pass. Returns gradients with
// respect to the execution-form weights and Theta. The final layer must be
// softmax_output; the loss is mean cross-entropy.
Gradients backward_cross_entropy(const NetworkModel& model,
                                 const std::vector<DenseMatrix>& exec_weights,
                                 const std::vector<LayerCache>& caches,
                                 const std::vector<int>& labels) {
    const std::size_t L = model.num_layers();
    if (model.layers.back().activation != Activation::softmax_output)
        throw UnsupportedModelError("loss: final layer must be softmax output");
    const std::size_t batch = caches[0].x.rows();
    if (labels.size() != batch) throw InvalidInputError("labels: size mismatch with batch");

    Gradients grads;
    grads.weights.resize(L);
    grads.biases.resize(L);
    grads.bn_gamma.resize(L);
    grads.bn_beta.resize(L);

    // d(mean CE)/d(logits) = (probs - onehot) / batch
    DenseMatrix dz = caches.back().a;
    for (std::size_t b = 0; b < batch; ++b) {
        const int lab = labels[b];
        if (lab < 0 || static_cast<std::size_t>(lab) >= dz.cols())
            throw InvalidInputError("labels: label out of range");
        dz(b, static_cast<std::size_t>(lab)) -= 1.0;
    }
    dz *= 1.0 / static_cast<double>(batch);

    for (std::size_t li = L; li-- > 0;) {
        const LayerSpec& spec = model.layers[li];
        const LayerGeometry& g = model.geometry()[li];
        const LayerCache& c = caches[li];

        // activation backward (softmax handled jointly with CE above)
        if (li + 1 < L) {
            DenseMatrix da = std::move(dz);
            switch (spec.activation) {
                case Activation::identity:
                    dz = std::move(da);
                    break;
                case Activation::relu:
                    dz = std::move(da);
                    for (std::size_t i = 0; i < dz.size(); ++i)
                        if (c.z.storage()[i] <= 0.0) dz.storage()[i] = 0.0;
                    break;
                case Activation::softmax_output:
                    throw UnsupportedModelError("loss: softmax on non-final layer");
            }
        }

        // batchnorm backward (batch-statistics mode)
        DenseMatrix dy;
        if (spec.has_batchnorm) {
            const auto& state = model.bn[li];
            const std::size_t groups = g.bn_groups;
            grads.bn_gamma[li].assign(groups, 0.0);
            grads.bn_beta[li].assign(groups, 0.0);
            std::vector<double> sum_dz(groups, 0.0), sum_dz_xhat(groups, 0.0),
                count(groups, 0.0);
            DenseMatrix xhat(c.y.rows(), c.y.cols());
            for (std::size_t b = 0; b < c.y.rows(); ++b)
                for (std::size_t j = 0; j < c.y.cols(); ++j) {
                    const std::size_t gi = bn_group_of(spec, g, j);
                    xhat(b, j) = (c.y(b, j) - c.mu[gi]) / std::sqrt(c.var[gi] + kBnEpsilon);
                    sum_dz[gi] += dz(b, j);
                    sum_dz_xhat[gi] += dz(b, j) * xhat(b, j);
                    count[gi] += 1.0;
                }
            for (std::size_t gi = 0; gi < groups; ++gi) {
                grads.bn_beta[li][gi] = sum_dz[gi];
                grads.bn_gamma[li][gi] = sum_dz_xhat[gi];
            }
            dy = DenseMatrix(c.y.rows(), c.y.cols());
            for (std::size_t b = 0; b < c.y.rows(); ++b)
                for (std::size_t j = 0; j < c.y.cols(); ++j) {
                    const std::size_t gi = bn_group_of(spec, g, j);
                    const double inv_std = 1.0 / std::sqrt(c.var[gi] + kBnEpsilon);
                    dy(b, j) = state.gamma[gi] * inv_std *
                               (dz(b, j) - sum_dz[gi] / count[gi] -
                                xhat(b, j) * sum_dz_xhat[gi] / count[gi]);
                }
        } else {
            dy = std::move(dz);
        }

        if (spec.has_bias) {
            grads.biases[li].assign(g.bn_groups, 0.0);
            for (std::size_t b = 0; b < dy.rows(); ++b)
                for (std::size_t j = 0; j < dy.cols(); ++j)
                    grads.biases[li][bn_group_of(spec, g, j)] += dy(b, j);
        }

        // linear backward
        if (spec.kind == LayerKind::dense) {
            grads.weights[li] = matmul_tn(c.x, dy);
            if (li > 0) dz = matmul_nt(dy, exec_weights[li]);
        } else {
            const std::size_t hw = g.out_h * g.out_w;
            DenseMatrix dw(exec_weights[li].rows(), exec_weights[li].cols());
            DenseMatrix dx(c.x.rows(), c.x.cols());
            for (std::size_t b = 0; b < dy.rows(); ++b) {
                DenseMatrix dout(hw, spec.conv.c_out);
                for (std::size_t p = 0; p < hw; ++p)
                    for (std::size_t co = 0; co < spec.conv.c_out; ++co)
                        dout(p, co) = dy(b, co * hw + p);
                dw += matmul_tn(c.cols[b], dout);
                if (li > 0) {
                    const DenseMatrix dcols = matmul_nt(dout, exec_weights[li]);
                    col2im_add(dcols, g.in_h, g.in_w, spec.conv, dx.row(b));
                }
            }
            grads.weights[li] = std::move(dw);
            if (li > 0) dz = std::move(dx);
        }
    }
    return grads;
}

} // namespace

ForwardTrace forward_full(const NetworkModel& model, const DenseMatrix& batch, BnMode bn_mode) {
    std::vector<LayerCache> caches;
    run_forward(model, model.weights, batch, bn_mode, caches);
    return trace_from_caches(model, caches);
}

ForwardTrace forward_lowrank(const NetworkModel& model, const std::vector<std::size_t>& ranks,
                             const DenseMatrix& batch, BnMode bn_mode) {
    std::vector<LayerCache> caches;
    run_forward(model, exec_weights_at_ranks(model, ranks), batch, bn_mode, caches);
    return trace_from_caches(model, caches);
}

double cross_entropy(const DenseMatrix& probs, const std::vector<int>& labels) {
    if (labels.size() != probs.rows()) throw InvalidInputError("cross_entropy: size mismatch");
    double loss = 0.0;
    for (std::size_t b = 0; b < probs.rows(); ++b) {
        const double p = std::max(probs(b, static_cast<std::size_t>(labels[b])), 1e-300);
        loss -= std::log(p);
    }
    return loss / static_cast<double>(probs.rows());
}

JointResult joint_loss_and_grads(const NetworkModel& model, const std::vector<std::size_t>& ranks,
                                 const DenseMatrix& batch, const std::vector<int>& labels,
                                 const JointGradOptions& opts) {
    if (opts.lambda < 0.0 || opts.lambda > 1.0)
        throw InvalidInputError("joint loss: lambda must be in [0, 1]");
    if (opts.eta < 0.0) throw InvalidInputError("joint loss: eta must be >= 0");
    opts.clip.validate();
    const std::size_t L = model.num_layers();

    // Full-rank path.
    std::vector<LayerCache> caches_full;
    run_forward(model, model.weights, batch, BnMode::batch_stats, caches_full);
    const double loss_full = cross_entropy(caches_full.back().a, labels);
    Gradients grads_full = backward_cross_entropy(model, model.weights, caches_full, labels);

    JointResult res;
    res.loss_full = loss_full;
    res.grads.weights.resize(L);
    res.grads.biases.resize(L);
    res.grads.bn_gamma.resize(L);
    res.grads.bn_beta.resize(L);

    // Low-rank path (skipped entirely at lambda == 0; no SVD is touched).
    Gradients grads_low;
    std::vector<SvdGradWorkspace> workspaces;
    if (opts.lambda > 0.0) {
        if (ranks.size() != L)
            throw InvalidInputError("joint loss: ranks required when lambda > 0");
        std::vector<DenseMatrix> exec_low(L);
        workspaces.resize(L);
        for (std::size_t l = 0; l < L; ++l) {
            const LayerSpec& spec = model.layers[l];
            const std::size_t R = model.layer_full_rank(l);
            if (ranks[l] < 1 || ranks[l] > R)
                throw InvalidRankError("joint loss: invalid rank at layer " + std::to_string(l));
            auto [wt, ws] = lowrank_forward(model.decomposition_matrix(l), ranks[l]);
            workspaces[l] = std::move(ws);
            if (spec.kind == LayerKind::conv &&
                spec.decomposition == ConvDecomposition::spatial)
                wt = spatial_to_channel(wt, spec.conv);
            exec_low[l] = std::move(wt);
        }
        std::vector<LayerCache> caches_low;
        run_forward(model, exec_low, batch, BnMode::batch_stats, caches_low);
        res.loss_low = cross_entropy(caches_low.back().a, labels);
        grads_low = backward_cross_entropy(model, exec_low, caches_low, labels);

        // Route the low-rank weight gradients back through the truncated SVD.
        for (std::size_t l = 0; l < L; ++l) {
            const LayerSpec& spec = model.layers[l];
            const bool spatial = spec.kind == LayerKind::conv &&
                                 spec.decomposition == ConvDecomposition::spatial;
            DenseMatrix g_tilde = std::move(grads_low.weights[l]);
            if (spatial) g_tilde = channel_to_spatial(g_tilde, spec.conv);
            DenseMatrix g_w;
            try {
                g_w = lowrank_backward(workspaces[l], g_tilde, opts.clip);
            } catch (const NumericalFailureError& e) {
                throw NumericalFailureError("layer " + std::to_string(l) + ": " + e.what(),
                                            e.residual());
            }
            if (spatial) g_w = spatial_to_channel(g_w, spec.conv);
            grads_low.weights[l] = std::move(g_w);
        }
    }

    res.loss = (1.0 - opts.lambda) * loss_full + opts.lambda * res.loss_low;
    double reg = 0.0;
    for (std::size_t l = 0; l < L; ++l) {
        const double n = frobenius_norm(model.weights[l]);
        reg += n * n;
    }
    res.loss += opts.eta * 0.5 * reg;

    for (std::size_t l = 0; l < L; ++l) {
        // W-gradient: (1-lambda) full + lambda' low + eta W.
        DenseMatrix gw = grads_full.weights[l] * (1.0 - opts.lambda);
        if (opts.lambda > 0.0) {
            double lam = opts.lambda;
            if (opts.rebalance)
                lam = rebalance_lambda(opts.lambda, frobenius_norm(grads_full.weights[l]),
                                       frobenius_norm(grads_low.weights[l]));
            gw += grads_low.weights[l] * lam;
        }
        gw += model.weights[l] * opts.eta;
        res.grads.weights[l] = std::move(gw);

        // Theta gradients: lambda-weighted average of both paths.
        auto combine = [&](const std::vector<double>& full, const std::vector<double>& low) {
            std::vector<double> out(full.size());
            for (std::size_t i = 0; i < full.size(); ++i)
                out[i] = (1.0 - opts.lambda) * full[i] +
                         (opts.lambda > 0.0 && !low.empty() ? opts.lambda * low[i] : 0.0);
            return out;
        };
        res.grads.biases[l] = combine(grads_full.biases[l],
                                      opts.lambda > 0.0 ? grads_low.biases[l]
                                                        : std::vector<double>{});
        res.grads.bn_gamma[l] = combine(grads_full.bn_gamma[l],
                                        opts.lambda > 0.0 ? grads_low.bn_gamma[l]
                                                          : std::vector<double>{});
        res.grads.bn_beta[l] = combine(grads_full.bn_beta[l],
                                       opts.lambda > 0.0 ? grads_low.bn_beta[l]
                                                         : std::vector<double>{});
    }
    return res;
}

void recalibrate_bn(NetworkModel& model, const std::vector<std::size_t>& ranks,
                    const DenseMatrix& dataset) {
    if (!model.has_any_batchnorm())
        throw InvalidInputError("recalibrate_bn: model has no batchnorm layers");
    if (dataset.rows() == 0) throw InvalidInputError("recalibrate_bn: empty dataset");
    std::vector<LayerCache> caches;
    run_forward(model, exec_weights_at_ranks(model, ranks), dataset, BnMode::batch_stats,
                caches);
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
        if (!model.layers[l].has_batchnorm) continue;
        model.bn[l].mean = caches[l].mu;
        model.bn[l].var = caches[l].var;
    }
}

} // namespace decompnet
