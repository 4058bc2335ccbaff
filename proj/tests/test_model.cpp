#include <gtest/gtest.h>

#include <cstring>

#include "oracles.hpp"
#include "tbu/model.hpp"

using namespace tbu;

namespace {

Dataset blobs(std::size_t n_per_class, double gap, double std, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, std);
    Dataset d;
    d.num_classes = 2;
    d.features.resize(static_cast<Eigen::Index>(2 * n_per_class), 2);
    for (std::size_t i = 0; i < 2 * n_per_class; ++i) {
        const int y = static_cast<int>(i % 2);
        d.features(static_cast<Eigen::Index>(i), 0) = (y == 0 ? -gap : gap) + normal(rng);
        d.features(static_cast<Eigen::Index>(i), 1) = normal(rng);
        d.labels.push_back(y);
    }
    return d;
}

IndexList all_rows(const Dataset& d) {
    IndexList idx(d.size());
    std::iota(idx.begin(), idx.end(), RowIndex{0});
    return idx;
}

bool bit_equal(const ModelParams& a, const ModelParams& b) {
    if (a.layers.size() != b.layers.size()) return false;
    for (std::size_t k = 0; k < a.layers.size(); ++k) {
        if (a.layers[k].rows() != b.layers[k].rows() || a.layers[k].cols() != b.layers[k].cols()) return false;
        if (std::memcmp(a.layers[k].data(), b.layers[k].data(), sizeof(double) * a.layers[k].size()) != 0) return false;
    }
    return true;
}

double relative_error(double a, double b) { return std::abs(a - b) / std::max({1e-8, std::abs(a), std::abs(b)}); }

}  // namespace

TEST(Softmax, ZeroLogitsAreUniform) {
    const Vector p = softmax(Vector::Zero(4));
    for (Eigen::Index c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(p[c], 0.25);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
    Vector z(2);
    z << 1000, 0;
    const Vector p = softmax(z);
    EXPECT_TRUE(p.allFinite());
    EXPECT_DOUBLE_EQ(p[0], 1.0);
    EXPECT_GE(p[1], 0.0);
    EXPECT_LT(p[1], 1e-300);
}

TEST(Softmax, TwoZeroByHand) {
    Vector z(2);
    z << 2, 0;
    const Vector p = softmax(z);
    const auto ref = oracle::softmax({2.0, 0.0});
    EXPECT_NEAR(p[0], 0.880797, 1e-6);
    EXPECT_NEAR(p[1], 0.119203, 1e-6);
    EXPECT_NEAR(p[0], ref[0], 1e-12);
    EXPECT_NEAR(p[1], ref[1], 1e-12);
}

TEST(Softmax, RowsSumToOneAndStayInsideUnitInterval) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> normal(0.0, 5.0);
    Matrix z(500, 6);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = normal(rng);
    const Matrix p = softmax_rows(z);
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-12);
        std::vector<double> zi(z.row(i).data(), z.row(i).data() + 6);
        const auto ref = oracle::softmax(zi);
        for (Eigen::Index c = 0; c < 6; ++c) {
            EXPECT_GT(p(i, c), 0.0);
            EXPECT_LT(p(i, c), 1.0);
            EXPECT_NEAR(p(i, c), ref[static_cast<std::size_t>(c)], 1e-12);
        }
    }
}

TEST(Features, LinearModelAppendsOne) {
    const auto params = init_params(MlpSpec{}, 3, 2, 1);
    const std::vector<double> x{0.5, -2.0, 7.0};
    const Vector phi = forward_features(params, x);
    ASSERT_EQ(phi.size(), 4);
    EXPECT_EQ(phi[0], 0.5);
    EXPECT_EQ(phi[1], -2.0);
    EXPECT_EQ(phi[2], 7.0);
    EXPECT_EQ(phi[3], 1.0);
    EXPECT_EQ(params.feature_dim(), 4u);
}

TEST(Features, ZeroWeightsGiveUnitBiasOnly) {
    for (auto act : {Activation::relu, Activation::tanh}) {
        auto params = init_params(MlpSpec{{4, 3}, act}, 2, 3, 1);
        for (auto& m : params.layers) m.setZero();
        const Vector phi = forward_features(params, std::vector<double>{1.0, -1.0});
        ASSERT_EQ(phi.size(), 4);
        EXPECT_EQ(phi.head(3).norm(), 0.0);
        EXPECT_EQ(phi[3], 1.0);
    }
}

TEST(Features, BatchMatchesPerRow) {
    const auto params = init_params(MlpSpec{{7, 5}, Activation::tanh}, 4, 3, 9);
    const Matrix x = Matrix::Random(40, 4);
    const Matrix phi = forward_features(params, x);
    const Matrix p = predict_softmax(params, x);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const Vector row_phi = forward_features(params, std::span<const double>(x.row(i).data(), 4));
        const Vector row_p = predict_softmax(params, std::span<const double>(x.row(i).data(), 4));
        EXPECT_LE((phi.row(i).transpose() - row_phi).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_LE((p.row(i).transpose() - row_p).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_EQ(phi(i, phi.cols() - 1), 1.0);
    }
}

TEST(Features, WidthMismatchIsShapeError) {
    const auto params = init_params(MlpSpec{{3}, Activation::relu}, 4, 2, 1);
    EXPECT_THROW(forward_features(params, Matrix::Zero(2, 5)), ShapeError);
}

TEST(Loss, LinearLossMatchesHandComputation) {
    auto params = init_params(MlpSpec{}, 2, 3, 4);
    const Matrix x = Matrix::Random(6, 2);
    const std::vector<int> y{0, 1, 2, 2, 1, 0};
    const std::vector<double> w(6, 1.0 / 6.0);
    const double wd = 0.01;
    const auto lg = loss_and_gradient(params, x, y, w, wd);
    double expected = 0;
    for (Eigen::Index i = 0; i < 6; ++i) {
        std::vector<double> z(3);
        for (int c = 0; c < 3; ++c) {
            z[static_cast<std::size_t>(c)] = x(i, 0) * params.layers[0](0, c) + x(i, 1) * params.layers[0](1, c) + params.layers[0](2, c);
        }
        expected -= std::log(oracle::softmax(z)[static_cast<std::size_t>(y[static_cast<std::size_t>(i)])]) / 6.0;
    }
    expected += 0.5 * wd * params.layers[0].squaredNorm();
    EXPECT_NEAR(lg.loss, expected, 1e-12);
}

TEST(Loss, GradientMatchesCentralDifferences) {
    // 5 features, 3 classes, 4 hidden units.
    for (auto act : {Activation::tanh, Activation::relu}) {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            auto params = init_params(MlpSpec{{4}, act}, 5, 3, seed);
            std::mt19937_64 rng(seed + 100);
            std::normal_distribution<double> normal(0.0, 1.0);
            for (auto& m : params.layers) {
                for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
            }
            Matrix x(8, 5);
            for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
            std::vector<int> y{0, 1, 2, 0, 1, 2, 2, 1};
            std::vector<double> w{0.1, 0.2, 0.05, 0.15, 0.1, 0.1, 0.2, 0.1};
            const double wd = 0.03;
            const auto lg = loss_and_gradient(params, x, y, w, wd);
            const double h = 1e-6;
            double worst = 0;
            for (std::size_t k = 0; k < params.layers.size(); ++k) {
                for (Eigen::Index i = 0; i < params.layers[k].size(); ++i) {
                    auto plus = params, minus = params;
                    plus.layers[k].data()[i] += h;
                    minus.layers[k].data()[i] -= h;
                    const double fd = (loss_and_gradient(plus, x, y, w, wd).loss - loss_and_gradient(minus, x, y, w, wd).loss) / (2 * h);
                    worst = std::max(worst, relative_error(fd, lg.gradient[k].data()[i]));
                }
            }
            EXPECT_LE(worst, 1e-4) << to_string(act) << " seed " << seed;
        }
    }
}

TEST(TrainSupervised, SeparableBlobsReachNearPerfectAccuracy) {
    const Dataset d = blobs(200, 4.0, 0.5, 1);
    // Separability oracle: the plane x0 = 0 splits the classes.
    for (std::size_t i = 0; i < d.size(); ++i) {
        ASSERT_EQ(d.features(static_cast<Eigen::Index>(i), 0) > 0 ? 1 : 0, d.labels[i]);
    }
    TrainConfig cfg;
    cfg.epochs = 20;
    const auto params = train_supervised(d, all_rows(d), MlpSpec{}, cfg);
    EXPECT_GE(evaluate_accuracy(params, d, all_rows(d)), 0.99);
}

TEST(TrainSupervised, HeavyWeightDecayGivesUniformPredictions) {
    const Dataset d = blobs(50, 2.0, 1.0, 2);
    TrainConfig cfg;
    cfg.epochs = 40;
    cfg.weight_decay = 100.0;
    cfg.learning_rate = 0.005;
    const auto params = train_supervised(d, all_rows(d), MlpSpec{{8}, Activation::tanh}, cfg);
    const Matrix p = predict_softmax(params, d.features);
    EXPECT_LT((p.array() - 0.5).abs().maxCoeff(), 0.02);
    EXPECT_LT(params.squared_norm(), 1e-3);
}

TEST(TrainSupervised, SameSeedSameParameters) {
    const Dataset d = blobs(60, 1.0, 1.0, 3);
    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.seed = 42;
    const MlpSpec spec{{6}, Activation::relu};
    EXPECT_TRUE(bit_equal(train_supervised(d, all_rows(d), spec, cfg), train_supervised(d, all_rows(d), spec, cfg)));
    auto other = cfg;
    other.seed = 43;
    EXPECT_FALSE(bit_equal(train_supervised(d, all_rows(d), spec, cfg), train_supervised(d, all_rows(d), spec, other)));
}

TEST(TrainSupervised, DivergenceNamesTheEpoch) {
    const Dataset d = blobs(20, 1.0, 1.0, 4);
    TrainConfig cfg;
    cfg.epochs = 8;
    cfg.learning_rate = 1e300;
    try {
        train_supervised(d, all_rows(d), MlpSpec{{4}, Activation::relu}, cfg);
        FAIL() << "expected divergence";
    } catch (const TrainingError& e) {
        EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
    }
}

TEST(TrainConfig, Invariants) {
    TrainConfig c;
    c.epochs = 7;
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrainConfig{};
    c.weight_decay = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrainConfig{};
    c.ema_eta = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrainConfig{};
    c.epochs = 10;
    EXPECT_DOUBLE_EQ(c.learning_rate_at(5), c.learning_rate);
    EXPECT_DOUBLE_EQ(c.learning_rate_at(6), c.learning_rate * 0.5);
    EXPECT_DOUBLE_EQ(c.learning_rate_at(8), c.learning_rate * 0.25);
}

TEST(Checkpoints, EightEpochsAtCeilingFractions) {
    const auto e40 = checkpoint_epochs(40);
    EXPECT_EQ(e40, (std::array<std::size_t, 8>{5, 10, 15, 20, 25, 30, 35, 40}));
    const auto e10 = checkpoint_epochs(10);
    EXPECT_EQ(e10, (std::array<std::size_t, 8>{2, 3, 4, 5, 7, 8, 9, 10}));
    for (std::size_t E = 8; E < 100; ++E) {
        const auto e = checkpoint_epochs(E);
        for (std::size_t k = 1; k <= 8; ++k) {
            EXPECT_EQ(e[k - 1], static_cast<std::size_t>(std::ceil(static_cast<double>(k * E) / 8.0)));
        }
    }
}

TEST(TrainSemi, MaskedOutLimitEqualsSupervised) {
    const Dataset d = blobs(80, 1.5, 1.0, 5);
    PoolState pool;
    for (RowIndex i = 0; i < d.size(); ++i) (i < 40 ? pool.labeled : pool.unlabeled).push_back(i);
    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.steps_per_epoch = 4;
    cfg.seed = 17;
    cfg.threshold_floor = 1.5;  // no confidence can reach it
    const MlpSpec spec{{6}, Activation::tanh};
    const auto semi = train_semisupervised(d, pool, spec, cfg);
    const auto sup = train_supervised(d, pool.labeled, spec, cfg);
    EXPECT_TRUE(bit_equal(semi.params, sup));
}

TEST(TrainSemi, TraceShapeAndInitialThresholds) {
    const auto init = ThresholdState::initial(4, 0.99);
    for (double t : class_threshold(init)) EXPECT_DOUBLE_EQ(t, 0.25);

    const Dataset d = blobs(60, 1.5, 1.0, 6);
    PoolState pool;
    for (RowIndex i = 0; i < d.size(); ++i) (i % 3 == 0 ? pool.labeled : pool.unlabeled).push_back(i);
    TrainConfig cfg;
    cfg.epochs = 12;
    const auto r = train_semisupervised(d, pool, MlpSpec{{5}, Activation::relu}, cfg);
    ASSERT_EQ(r.trace.checkpoints.size(), 8u);
    EXPECT_NO_THROW(r.trace.validate());
    const auto marks = checkpoint_epochs(12);
    for (std::size_t k = 0; k < 8; ++k) {
        EXPECT_EQ(r.trace.checkpoints[k].epoch, marks[k]);
        EXPECT_EQ(r.trace.checkpoints[k].confidence.size(), pool.unlabeled.size());
    }
    EXPECT_EQ(r.trace.rows, pool.unlabeled);
    // The last snapshot is the final model on clean inputs.
    const Matrix p = predict_softmax(r.params, d.rows(pool.unlabeled));
    for (std::size_t i = 0; i < pool.unlabeled.size(); ++i) {
        EXPECT_EQ(r.trace.checkpoints.back().confidence[i], p.row(static_cast<Eigen::Index>(i)).maxCoeff());
    }
    PoolState empty = pool;
    empty.unlabeled.clear();
    EXPECT_THROW(train_semisupervised(d, empty, MlpSpec{}, cfg), ConfigError);
}

TEST(Accuracy, CountsAndIdentities) {
    Dataset d;
    d.num_classes = 2;
    d.features = Matrix::Zero(4, 1);
    d.labels = {0, 1, 1, 0};
    auto params = init_params(MlpSpec{}, 1, 2, 0);
    for (auto& m : params.layers) m.setZero();  // uniform: ties go to class 0
    EXPECT_DOUBLE_EQ(evaluate_accuracy(params, d, {0, 1, 2, 3}), 0.5);
    EXPECT_DOUBLE_EQ(evaluate_accuracy(params, d, {1, 2}), 0.0);
    EXPECT_THROW(evaluate_accuracy(params, d, {}), ConfigError);

    // Memorizing a handful of separable points.
    const Dataset b = blobs(5, 3.0, 0.2, 7);
    TrainConfig cfg;
    cfg.epochs = 60;
    cfg.batch_size = 10;
    const auto fit = train_supervised(b, all_rows(b), MlpSpec{{16}, Activation::tanh}, cfg);
    EXPECT_DOUBLE_EQ(evaluate_accuracy(fit, b, all_rows(b)), 1.0);

    std::mt19937_64 rng(1);
    const RowTransform level0 = [&](const Matrix& x) {
        return apply_perturbation(x, PerturbationSpec{}, Perturbation::corrupt(CorruptionKind::additive_noise, 0), rng);
    };
    EXPECT_EQ(evaluate_accuracy(fit, b, all_rows(b), level0), evaluate_accuracy(fit, b, all_rows(b)));
}

TEST(ModelJson, RoundTripIsExact) {
    const auto params = init_params(MlpSpec{{3, 2}, Activation::tanh}, 4, 3, 12);
    const auto text = to_json(params).dump();
    const auto back = model_from_json(nlohmann::json::parse(text));
    EXPECT_TRUE(bit_equal(params, back));
    EXPECT_EQ(back.spec, params.spec);
    EXPECT_THROW(model_from_json(nlohmann::json::parse(R"({"spec":{}})")), ParseError);
}
