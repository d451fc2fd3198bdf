#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "mlse/gradcheck.hpp"
#include "mlse/network.hpp"
#include "mlse/optimizer.hpp"

using namespace mlse;

namespace {

Tensor<float> random_batch(std::size_t n, const Shape& in, std::uint64_t seed) {
    Shape s{n};
    s.insert(s.end(), in.begin(), in.end());
    Tensor<float> t(s);
    Rng rng(seed);
    for (auto& v : t.values()) v = static_cast<float>(rng.uniform());
    return t;
}

NetworkConfig tiny_config() {
    // exercises input dropout, strided conv, padded pooling and fc dropout
    NetworkConfig cfg;
    cfg.in_channels = 2;
    cfg.in_height = 9;
    cfg.in_width = 8;
    cfg.classes = 4;
    cfg.layers = {LayerSpec::drop(0.1),        LayerSpec::conv(3, 3, 2, 1), LayerSpec::maxpool(3, 1, 2),
                  LayerSpec::conv(4, 3, 1, 1), LayerSpec::maxpool(2, 2),    LayerSpec::fc(6, 0.5),
                  LayerSpec::fc(5, 0.0)};
    return cfg;
}

} // namespace

TEST(NetworkConfig, DeskPresetShapes) {
    const auto cfg = NetworkConfig::desk(20);
    const auto shapes = cfg.layer_shapes();
    EXPECT_EQ(shapes[0], (Shape{16, 32, 32}));
    EXPECT_EQ(shapes[1], (Shape{16, 16, 16}));
    EXPECT_EQ(shapes[3], (Shape{32, 8, 8}));
    EXPECT_EQ(cfg.feature_width(), 128u);
}

TEST(NetworkConfig, PaperPresetGeometry) {
    const auto cfg = NetworkConfig::paper(115);
    ASSERT_EQ(cfg.layers.size(), 11u);
    EXPECT_EQ(cfg.layers[0], LayerSpec::drop(0.1));
    EXPECT_EQ(cfg.layers[1], LayerSpec::conv(96, 11, 4, 0));
    EXPECT_EQ(cfg.layers[3], LayerSpec::conv(256, 5, 1, 2));
    EXPECT_EQ(cfg.layers[5], LayerSpec::conv(384, 3, 1, 1));
    EXPECT_EQ(cfg.layers[7], LayerSpec::conv(256, 3, 1, 1));
    EXPECT_EQ(cfg.layers[9], LayerSpec::fc(2048, 0.5));
    EXPECT_EQ(cfg.layers[10], LayerSpec::fc(2048, 0.5));
    EXPECT_EQ(cfg.feature_width(), 2048u);
    EXPECT_EQ(cfg.layer_shapes()[8], (Shape{256, 9, 13}));
}

TEST(NetworkConfig, TextRoundTrip) {
    for (const auto& cfg : {NetworkConfig::desk(7), NetworkConfig::paper(30), tiny_config()}) {
        EXPECT_EQ(NetworkConfig::from_text(cfg.to_text()), cfg);
    }
}

TEST(NetworkConfig, InconsistentLayersNameThePair) {
    NetworkConfig cfg = NetworkConfig::desk(5);
    cfg.layers.insert(cfg.layers.begin() + 5, LayerSpec::conv(4, 3, 1, 1));
    try {
        cfg.validate();
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("between layer 4 (fc) and layer 5 (conv)"), std::string::npos)
            << e.what();
    }
    NetworkConfig big = NetworkConfig::desk(5);
    big.in_height = big.in_width = 3;
    EXPECT_THROW(big.validate(), ConfigError);
    EXPECT_THROW(init_network(big, 1), ConfigError);
}

TEST(InitNetwork, DeterministicAndZeroBiases) {
    const auto cfg = NetworkConfig::desk(20);
    const auto a = init_network(cfg, 42);
    const auto b = init_network(cfg, 42);
    EXPECT_TRUE(a == b);
    const auto c = init_network(cfg, 43);
    EXPECT_FALSE(a == c);
    for (const auto& [name, t] : a.params) {
        if (name.ends_with(".bias") || name.ends_with(".beta")) {
            for (float v : t.values()) EXPECT_EQ(v, 0.0f) << name;
        }
        if (name.ends_with(".gamma")) {
            for (float v : t.values()) EXPECT_EQ(v, 1.0f) << name;
        }
    }
    for (const auto& [name, t] : a.running) {
        for (float v : t.values()) EXPECT_EQ(v, name.ends_with(".var") ? 1.0f : 0.0f) << name;
    }
}

TEST(InitNetwork, HeNormalVarianceForThreeByThreeBySixtyFour) {
    NetworkConfig cfg;
    cfg.in_channels = 64;
    cfg.in_height = cfg.in_width = 4;
    cfg.classes = 2;
    cfg.layers = {LayerSpec::conv(256, 3, 1, 1), LayerSpec::fc(2, 0.0)};
    const auto state = init_network(cfg, 7);
    const auto& w = state.params.at(names::trunk(0, "weight"));
    ASSERT_GE(w.size(), 100000u);
    double sum = 0.0, sq = 0.0;
    for (float v : w.values()) {
        sum += v;
        sq += static_cast<double>(v) * v;
    }
    const double n = static_cast<double>(w.size());
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    const double expected = 2.0 / 576.0;
    EXPECT_NEAR(var, expected, 0.1 * expected);
    EXPECT_NEAR(mean, 0.0, 0.01 * std::sqrt(expected) * 10);
}

TEST(NetworkForward, ZeroWeightsGiveZeroHeads) {
    const auto cfg = NetworkConfig::desk(20);
    auto state = init_network(cfg, 1);
    for (auto& [name, t] : state.params) {
        if (!name.ends_with(".gamma")) t.fill(0.0f);
    }
    const auto batch = random_batch(4, cfg.input_shape(), 3);
    for (Mode mode : {Mode::Train, Mode::Eval}) {
        Rng rng(5);
        const auto out = network_forward(state, batch, mode, rng);
        for (const auto& h : out.heads) {
            for (float v : h.values()) EXPECT_EQ(v, 0.0f);
        }
    }
}

TEST(NetworkForward, DeskShapesAndEvalDeterminism) {
    const auto cfg = NetworkConfig::desk(20);
    const auto state = init_network(cfg, 11);
    const auto batch = random_batch(5, cfg.input_shape(), 2);
    Rng r1(1), r2(999);
    const auto a = network_forward(state, batch, Mode::Eval, r1);
    const auto b = network_forward(state, batch, Mode::Eval, r2);
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_EQ(a.heads[k].shape(), (Shape{5, 20}));
        EXPECT_TRUE(a.heads[k] == b.heads[k]);
    }
    EXPECT_EQ(a.features.shape(), (Shape{5, 128}));
    EXPECT_TRUE(a.features == b.features);
    EXPECT_TRUE(a.features.all_finite());
}

TEST(NetworkForward, RejectsShapeMismatch) {
    const auto state = init_network(NetworkConfig::desk(3), 1);
    Rng rng(0);
    EXPECT_THROW(network_forward(state, Tensor<float>({2, 1, 31, 32}), Mode::Eval, rng), DimensionError);
    EXPECT_THROW(network_forward(state, Tensor<float>({2, 32, 32}), Mode::Eval, rng), DimensionError);
    EXPECT_THROW(network_forward(state, Tensor<float>({1, 1, 32, 32}), Mode::Train, rng), DimensionError);
}

TEST(NetworkBackward, ZeroHeadGradsGiveZeroGradients) {
    const auto cfg = tiny_config();
    const auto state = init_network(cfg, 3);
    Rng rng(8);
    const auto fwd = network_forward(state, random_batch(3, cfg.input_shape(), 4), Mode::Train, rng);
    std::array<Tensor<float>, 3> zero{Tensor<float>({3, 4}), Tensor<float>({3, 4}), Tensor<float>({3, 4})};
    const auto grads = network_backward(state, fwd.cache, zero);
    require_congruent(grads, state.params, "grads");
    for (const auto& [name, g] : grads) {
        for (float v : g.values()) EXPECT_EQ(v, 0.0f) << name;
    }
}

TEST(NetworkBackward, SingleFcHandOracle) {
    // y = W x with x = (1, 2, 3); loss = sum(y) -> dW[i][j] = x[j]
    Tensor<double> x({1, 3}, {1.0, 2.0, 3.0});
    Tensor<double> w({2, 3}, {0.5, -1.0, 2.0, 0.25, 0.0, -3.0});
    Tensor<double> dy({1, 2}, {1.0, 1.0});
    Tensor<double> dw({2, 3});
    Tensor<double> db({2});
    const auto dx = kernels::fc_backward(x, w, dy, dw, db);
    for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(dw[i * 3 + j], x[j]);
    }
    EXPECT_EQ(db[0], 1.0);
    EXPECT_EQ(dx[0], 0.75);
    EXPECT_EQ(dx[2], -1.0);
}

TEST(NetworkBackward, RejectsMismatchedCache) {
    const auto cfg = tiny_config();
    const auto state = init_network(cfg, 3);
    const auto batch = random_batch(3, cfg.input_shape(), 4);
    std::array<Tensor<float>, 3> g{Tensor<float>({3, 4}), Tensor<float>({3, 4}), Tensor<float>({3, 4})};
    Rng rng(1);
    const auto eval = network_forward(state, batch, Mode::Eval, rng);
    EXPECT_THROW(network_backward(state, eval.cache, g), ConsistencyError);
    const auto train = network_forward(state, batch, Mode::Train, rng);
    auto other_cfg = cfg;
    other_cfg.classes = 5;
    const auto other = init_network(other_cfg, 3);
    EXPECT_THROW(network_backward(other, train.cache, g), ConsistencyError);
    std::array<Tensor<float>, 3> bad{Tensor<float>({2, 4}), Tensor<float>({3, 4}), Tensor<float>({3, 4})};
    EXPECT_THROW(network_backward(state, train.cache, bad), DimensionError);
}

TEST(NetworkBackward, TinyNetworkMatchesFiniteDifferences) {
    const auto cfg = tiny_config();
    const auto state = init_network(cfg, 21);
    const auto batch = random_batch(5, cfg.input_shape(), 22);
    const std::vector<std::size_t> targets{0, 3, 1, 2, 3};
    // every coordinate, including conv weights whose h=1e-3 differences straddle pooling switches
    for (std::size_t t = 0; t < 3; ++t) {
        const double err = check_all_network_gradients(state, batch, targets, loss_weights_for_trial(t), 1e-5, 5 + t);
        EXPECT_LT(err, 1e-6) << "rotation " << t;
    }
}

TEST(NetworkBackward, DeskNetworkMatchesFiniteDifferences) {
    const auto cfg = NetworkConfig::desk(6);
    const auto state = init_network(cfg, 31);
    const auto batch = random_batch(4, cfg.input_shape(), 32);
    const std::vector<std::size_t> targets{5, 0, 2, 2};
    const auto check = check_network_gradients(state, batch, targets, loss_weights_for_trial(1), 40, 1e-3, 9);
    EXPECT_EQ(check.checked, 40u);
    EXPECT_LT(check.max_error, 1e-4);
}

TEST(RunningStats, MovingAverageWithFactorPointOne) {
    NetworkConfig cfg;
    cfg.in_channels = 1;
    cfg.in_height = cfg.in_width = 1;
    cfg.classes = 2;
    cfg.layers = {LayerSpec::fc(1, 0.0)};
    auto state = init_network<double>(cfg, 1);
    state.params.at(names::trunk(0, "weight"))[0] = 1.0;
    Tensor<double> batch({2, 1, 1, 1}, {1.0, 3.0});
    Rng rng(0);
    const auto fwd = network_forward(state, batch, Mode::Train, rng);
    update_running_stats(state, fwd.cache);
    // batch mean 2, unbiased variance 2
    EXPECT_NEAR(state.running.at(names::trunk(0, "mean"))[0], 0.2, 1e-12);
    EXPECT_NEAR(state.running.at(names::trunk(0, "var"))[0], 0.9 + 0.2, 1e-12);
}

TEST(Dropout, MaskEdgeCases) {
    Rng rng(3);
    const auto ones = make_dropout_mask<float>({100}, 0.0, rng);
    for (float v : ones.values()) EXPECT_EQ(v, 1.0f);
    const auto zeros = make_dropout_mask<float>({100}, 1.0, rng);
    for (float v : zeros.values()) EXPECT_EQ(v, 0.0f);
    EXPECT_THROW(make_dropout_mask<float>({4}, -0.1, rng), ParameterError);
    EXPECT_THROW(make_dropout_mask<float>({4}, 1.5, rng), ParameterError);
}

TEST(Dropout, HalfMaskFractionWithinBinomialBound) {
    Rng rng(17);
    const auto m = make_dropout_mask<float>({100000}, 0.5, rng);
    const double zeros = static_cast<double>(std::count(m.values().begin(), m.values().end(), 0.0f));
    EXPECT_GE(zeros / 1e5, 0.49);
    EXPECT_LE(zeros / 1e5, 0.51);
    Rng a(4), b(4);
    EXPECT_TRUE(make_dropout_mask<float>({50}, 0.3, a) == make_dropout_mask<float>({50}, 0.3, b));
}

TEST(Nesterov, ScalarHandOracle) {
    ParamMap<double> params{{"w", Tensor<double>({1}, {1.0})}};
    const ParamMap<double> grads{{"w", Tensor<double>({1}, {1.0})}};
    auto opt = OptimizerState<double>::for_params(params, 0.1, 0.9);
    nesterov_step(params, opt, grads);
    EXPECT_NEAR(opt.velocity.at("w")[0], 1.0, 1e-15);
    EXPECT_NEAR(params.at("w")[0], 0.81, 1e-15);
    nesterov_step(params, opt, grads);
    EXPECT_NEAR(opt.velocity.at("w")[0], 1.9, 1e-15);
    EXPECT_NEAR(params.at("w")[0], 0.539, 1e-15);
}

TEST(Nesterov, ReductionsAndErrors) {
    ParamMap<double> params{{"a", Tensor<double>({2}, {1.0, -2.0})}};
    const ParamMap<double> grads{{"a", Tensor<double>({2}, {0.5, 4.0})}};
    auto plain = OptimizerState<double>::for_params(params, 0.1, 0.0);
    auto p1 = params;
    nesterov_step(p1, plain, grads);
    EXPECT_DOUBLE_EQ(p1.at("a")[0], 1.0 - 0.1 * 0.5);
    EXPECT_DOUBLE_EQ(p1.at("a")[1], -2.0 - 0.1 * 4.0);

    auto frozen = OptimizerState<double>::for_params(params, 0.0, 0.9);
    auto p2 = params;
    nesterov_step(p2, frozen, grads);
    EXPECT_TRUE(p2 == params);
    EXPECT_EQ(frozen.velocity.at("a")[1], 4.0);

    ParamMap<double> bad{{"a", Tensor<double>({2}, {0.0, std::nan("")})}};
    try {
        nesterov_step(p2, frozen, bad);
        FAIL();
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("'a'"), std::string::npos);
    }
    EXPECT_TRUE(p2 == params);
    ParamMap<double> wrong{{"b", Tensor<double>({2})}};
    EXPECT_THROW(nesterov_step(p2, frozen, wrong), ConsistencyError);
}

TEST(FiniteDiff, QuadraticAndConstant) {
    const ParamMap<double> params{{"w", Tensor<double>({1}, {3.0})}};
    const ParamMap<double> analytic{{"w", Tensor<double>({1}, {6.0})}};
    const std::vector<ParamCoord> coords{{"w", 0}};
    const double err = finite_diff_check([](const ParamMap<double>& p) { return p.at("w")[0] * p.at("w")[0]; },
                                         params, analytic, coords, 1e-3);
    EXPECT_LT(err, 1e-9);
    const ParamMap<double> zero{{"w", Tensor<double>({1}, {0.0})}};
    EXPECT_EQ(finite_diff_check([](const ParamMap<double>&) { return 4.0; }, params, zero, coords, 1e-3), 0.0);
    EXPECT_THROW(finite_diff_check([](const ParamMap<double>&) { return 0.0; }, params, zero, coords, 0.0),
                 ParameterError);
}
