#include <doctest.h>

#include <cmath>

#include "decompnet/analysis.hpp"
#include "decompnet/svd.hpp"
#include "decompnet/trainer.hpp"
#include "test_util.hpp"

using namespace decompnet;

namespace {

NetworkModel random_mlp(const std::vector<std::size_t>& widths, std::uint64_t seed,
                        bool bias = false) {
    Rng rng(seed, 0);
    NetworkModel m;
    m.input = InputShape{widths.front(), 1, 1};
    for (std::size_t l = 1; l < widths.size(); ++l) {
        LayerSpec spec;
        spec.out_dim = widths[l];
        spec.has_bias = bias;
        spec.activation =
            l + 1 == widths.size() ? Activation::softmax_output : Activation::relu;
        m.layers.push_back(spec);
    }
    m.finalize();
    m.init_he_normal(rng);
    return m;
}

} // namespace

TEST_CASE("prop1: errors non-increasing, zero at full rank, identity verified") {
    Rng rng(21, 0);
    NetworkModel m = random_mlp({6, 8, 5, 3}, 21);
    const DenseMatrix batch = testutil::random_matrix(16, 6, rng);
    const Prop1Report rep = check_prop1(m, batch);

    CHECK(rep.max_monotonicity_violation <= 1e-10);
    CHECK(rep.max_identity_residual <= 1e-9);
    REQUIRE(rep.curves.size() == 3);
    for (const LayerErrorCurve& c : rep.curves) {
        CHECK(c.points.back().second <= 1e-10);  // r = R
        for (std::size_t i = 1; i < c.points.size(); ++i)
            CHECK(c.points[i].second <= c.points[i - 1].second + 1e-10);
    }
}

TEST_CASE("prop1 curve values match brute-force norm computations") {
    Rng rng(22, 0);
    NetworkModel m = random_mlp({5, 4, 2}, 22);
    const DenseMatrix batch = testutil::random_matrix(8, 5, rng);
    const Prop1Report rep = check_prop1(m, batch);

    const ForwardTrace full = forward_full(m, batch);
    for (std::size_t l = 0; l < m.num_layers(); ++l) {
        const SvdFactors f = svd(m.weights[l]);
        for (const auto& [r, err] : rep.curves[l].points) {
            const DenseMatrix y = matmul(full.inputs[l], m.weights[l]);
            const DenseMatrix yh = matmul(full.inputs[l], truncate(f, r));
            double mean = 0.0;
            for (std::size_t i = 0; i < y.rows(); ++i)
                for (std::size_t j = 0; j < y.cols(); ++j) {
                    const double d = y(i, j) - yh(i, j);
                    mean += d * d;
                }
            mean /= static_cast<double>(y.rows());
            CHECK(err == doctest::Approx(mean).epsilon(1e-9));
        }
    }
}

TEST_CASE("prop1: rank-1 weight has zero error for every rank") {
    Rng rng(23, 0);
    NetworkModel m = random_mlp({4, 4, 2}, 23);
    m.weights[0] = testutil::matrix_with_singular_values({2.0, 0.0, 0.0, 0.0}, 4, 4, rng);
    const Prop1Report rep = check_prop1(m, testutil::random_matrix(6, 4, rng));
    for (const auto& [r, err] : rep.curves[0].points) CHECK(err <= 1e-18);
}

TEST_CASE("prop1 handles channel conv layers and rejects spatial ones") {
    Rng rng(24, 0);
    NetworkModel m;
    m.input = InputShape{2, 5, 5};
    LayerSpec conv;
    conv.kind = LayerKind::conv;
    conv.conv = ConvKernelShape{2, 2, 0, 3, 1};
    conv.activation = Activation::relu;
    LayerSpec top;
    top.kind = LayerKind::dense;
    top.out_dim = 2;
    top.activation = Activation::softmax_output;
    m.layers = {conv, top};
    m.finalize();
    m.init_he_normal(rng);

    const DenseMatrix batch = testutil::random_matrix(4, m.input.features(), rng);
    const Prop1Report rep = check_prop1(m, batch);
    CHECK(rep.max_monotonicity_violation <= 1e-10);
    CHECK(rep.max_identity_residual <= 1e-9);

    m.layers[0].decomposition = ConvDecomposition::spatial;
    CHECK_THROWS_AS(check_prop1(m, batch), UnsupportedModelError);
}

TEST_CASE("prop2: bound holds on random dense ReLU nets") {
    Rng rng(25, 0);
    for (int instance = 0; instance < 8; ++instance) {
        NetworkModel m = random_mlp({6, 10, 8, 4}, 200 + instance);
        const DenseMatrix batch = testutil::random_matrix(32, 6, rng);
        std::vector<std::size_t> ranks;
        for (std::size_t l = 0; l < m.num_layers(); ++l)
            ranks.push_back(1 + rng.uniform_index(m.layer_full_rank(l)));
        for (const Prop2Sample& s : check_prop2(m, ranks, batch)) {
            CHECK(s.slack >= 0.0);
            CHECK(s.kl >= 0.0);
        }
    }
}

TEST_CASE("prop2: full ranks give zero kl and zero bound") {
    Rng rng(26, 0);
    NetworkModel m = random_mlp({5, 7, 3}, 26);
    const auto samples =
        check_prop2(m, {5, 3}, testutil::random_matrix(8, 5, rng));
    for (const Prop2Sample& s : samples) {
        CHECK(s.kl <= 1e-12);
        CHECK(s.bound <= 1e-9);
    }
}

TEST_CASE("prop2 single layer collapses to sqrt(2) * logit error") {
    Rng rng(27, 0);
    NetworkModel m = random_mlp({6, 3}, 27);
    const DenseMatrix batch = testutil::random_matrix(5, 6, rng);
    const auto samples = check_prop2(m, {2}, batch);

    const DenseMatrix y = matmul(batch, m.weights[0]);
    const DenseMatrix yh = matmul(batch, m.truncated_weight(0, 2));
    for (std::size_t i = 0; i < samples.size(); ++i) {
        double e = 0.0;
        for (std::size_t j = 0; j < y.cols(); ++j) {
            const double d = y(i, j) - yh(i, j);
            e += d * d;
        }
        CHECK(samples[i].bound == doctest::Approx(std::sqrt(2.0 * e)).epsilon(1e-9));
    }
}

TEST_CASE("prop2 rejects models outside the hypothesis class") {
    Rng rng(28, 0);
    NetworkModel conv_model;
    conv_model.input = InputShape{2, 4, 4};
    LayerSpec conv;
    conv.kind = LayerKind::conv;
    conv.conv = ConvKernelShape{2, 2, 0, 2, 1};
    conv.activation = Activation::softmax_output;
    conv_model.layers = {conv};
    conv_model.finalize();
    conv_model.init_he_normal(rng);
    CHECK_THROWS_AS(check_prop2(conv_model, {4}, testutil::random_matrix(2, 32, rng)),
                    UnsupportedModelError);

    NetworkModel bn_model = random_mlp({4, 4, 2}, 28);
    bn_model.layers[0].has_batchnorm = true;
    bn_model.finalize();
    CHECK_THROWS_AS(check_prop2(bn_model, {4, 2}, testutil::random_matrix(2, 4, rng)),
                    UnsupportedModelError);
}

TEST_CASE("lipschitz: identity weights give omega = 1 and empirical 1") {
    NetworkModel m;
    m.input = InputShape{3, 1, 1};
    for (int l = 0; l < 3; ++l) {
        LayerSpec spec;
        spec.out_dim = 3;
        spec.has_bias = false;
        spec.activation = l == 2 ? Activation::softmax_output : Activation::identity;
        m.layers.push_back(spec);
    }
    m.finalize();
    // make layer 0 rank deficient so low-rank and full paths diverge
    Rng rng(31, 0);
    m.weights[0] = testutil::matrix_with_singular_values({3.0, 2.0, 1.0}, 3, 3, rng);
    m.weights[1] = DenseMatrix::identity(3);
    m.weights[2] = DenseMatrix::identity(3);

    Dataset data;
    data.shape = m.input;
    data.features = testutil::random_matrix(10, 3, rng);
    data.labels.assign(10, 0);
    data.num_classes = 3;

    const LipschitzReport rep = lipschitz_report(m, {1, 3, 3}, data);
    CHECK(rep.omega_theory[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rep.omega_theory[2] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rep.omega_empirical[1] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(rep.omega_empirical[2] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(std::isnan(rep.omega_empirical[0]));
    CHECK(std::isnan(rep.product_theory[2]));
    CHECK(rep.product_theory[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("lipschitz: empirical below theoretical on a trained net at every probe") {
    const Dataset data = make_two_moons(128, 0.1, 6, 32);
    TrainConfig cfg;
    cfg.epochs = 15;
    cfg.batch_size = 32;
    cfg.seed = 5;
    cfg.probe_ratios = {};
    NetworkModel m;
    m.input = InputShape{6, 1, 1};
    LayerSpec l1;
    l1.out_dim = 10;
    l1.activation = Activation::relu;
    LayerSpec l2;
    l2.out_dim = 8;
    l2.activation = Activation::relu;
    LayerSpec l3;
    l3.out_dim = 2;
    l3.activation = Activation::softmax_output;
    m.layers = {l1, l2, l3};
    m.finalize();
    train(m, data, cfg);

    // every layer truncated so every layer sees perturbed inputs
    for (const std::vector<std::size_t>& ranks :
         {std::vector<std::size_t>{5, 7, 1}, {3, 4, 1}, {2, 2, 1}}) {
        const LipschitzReport rep = lipschitz_report(m, ranks, data);
        for (std::size_t l = 1; l < rep.omega_theory.size(); ++l)
            CHECK(rep.omega_empirical[l] <= rep.omega_theory[l] * (1.0 + 1e-8));
        for (std::size_t l = 0; l + 1 < rep.omega_theory.size(); ++l)
            CHECK(rep.product_empirical[l] <= rep.product_theory[l] * (1.0 + 1e-8));
    }
}

TEST_CASE("lipschitz rejects batchnorm models and degenerate inputs") {
    Rng rng(33, 0);
    NetworkModel bn = random_mlp({4, 4, 2}, 33);
    bn.layers[0].has_batchnorm = true;
    bn.finalize();
    Dataset data;
    data.shape = InputShape{4, 1, 1};
    data.features = testutil::random_matrix(4, 4, rng);
    data.labels.assign(4, 0);
    data.num_classes = 2;
    CHECK_THROWS_AS(lipschitz_report(bn, {4, 2}, data), UnsupportedModelError);

    NetworkModel m = random_mlp({4, 4, 2}, 34);
    // full ranks: low-rank path identical everywhere -> every sample skipped
    CHECK_THROWS_AS(lipschitz_report(m, {4, 2}, data), InvalidInputError);
}

TEST_CASE("tradeoff sweep matches independent per-budget evaluation") {
    const Dataset data = make_two_moons(96, 0.1, 5, 35);
    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.batch_size = 32;
    cfg.seed = 2;
    cfg.probe_ratios = {};
    NetworkModel m;
    m.input = InputShape{5, 1, 1};
    LayerSpec l1;
    l1.out_dim = 8;
    l1.activation = Activation::relu;
    LayerSpec l2;
    l2.out_dim = 2;
    l2.activation = Activation::softmax_output;
    m.layers = {l1, l2};
    m.finalize();
    train(m, data, cfg);

    const std::vector<Budget> budgets = {Budget::rank_ratio(0.4), Budget::rank_ratio(0.7),
                                         Budget::rank_ratio(1.0)};
    const TradeoffReport rep = tradeoff_sweep(m, budgets, data);
    REQUIRE(rep.rows.size() == budgets.size());
    CHECK(rep.rows[1].macs >= rep.rows[0].macs);
    CHECK(rep.rows[2].macs >= rep.rows[1].macs);

    for (std::size_t i = 0; i < budgets.size(); ++i) {
        const auto a = select(m, Criterion::sv, budgets[i]);
        const auto [params, macs] = count_params_macs(m, a.ranks);
        CHECK(rep.rows[i].feasible);
        CHECK(rep.rows[i].params == params);
        CHECK(rep.rows[i].macs == macs);
        CHECK(rep.rows[i].accuracy == doctest::Approx(evaluate(m, a.ranks, data).second));
    }

    // full-rank row equals the plain full evaluation
    CHECK(rep.rows[2].accuracy ==
          doctest::Approx(evaluate(m, {5, 2}, data).second));
}

TEST_CASE("tradeoff sweep marks infeasible budgets instead of failing") {
    Rng rng(36, 0);
    NetworkModel m = random_mlp({4, 4, 2}, 36);
    Dataset data;
    data.shape = InputShape{4, 1, 1};
    data.features = testutil::random_matrix(8, 4, rng);
    data.labels.assign(8, 0);
    for (std::size_t i = 0; i < 8; ++i) data.labels[i] = static_cast<int>(i % 2);
    data.num_classes = 2;

    const TradeoffReport rep =
        tradeoff_sweep(m, {Budget::params(1), Budget::rank_ratio(1.0)}, data);
    REQUIRE(rep.rows.size() == 2);
    CHECK_FALSE(rep.rows[0].feasible);
    CHECK(rep.rows[1].feasible);
    CHECK(rep.to_csv().find("params,1,0") != std::string::npos);
}
