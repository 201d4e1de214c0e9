#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "afr/head.hpp"
#include "afr/random.hpp"

using namespace afr;
namespace fs = std::filesystem;

namespace {

LinearHead random_head(Rng& rng, std::size_t classes, std::size_t dims) {
    Matrix w(classes, dims);
    for (double& v : w.data()) v = rng.normal();
    std::vector<double> b(classes);
    for (double& v : b) v = rng.normal();
    return LinearHead(std::move(w), std::move(b));
}

Matrix random_features(Rng& rng, std::size_t n, std::size_t dims) {
    Matrix x(n, dims);
    for (double& v : x.data()) v = rng.normal();
    return x;
}

std::vector<std::uint32_t> random_labels(Rng& rng, std::size_t n, std::uint32_t classes) {
    std::vector<std::uint32_t> y(n);
    for (auto& v : y) v = static_cast<std::uint32_t>(rng.below(classes));
    return y;
}

// Central finite differences over the flat parameter vector.
template <typename LossFn>
std::vector<double> finite_difference(const LinearHead& head, LossFn loss, double eps = 1e-6) {
    std::vector<double> fd(head.num_params());
    for (std::size_t i = 0; i < head.num_params(); ++i) {
        LinearHead plus = head, minus = head;
        double* p = i < head.weights.size() ? &plus.weights.data()[i]
                                            : &plus.bias[i - head.weights.size()];
        double* m = i < head.weights.size() ? &minus.weights.data()[i]
                                            : &minus.bias[i - head.weights.size()];
        *p += eps;
        *m -= eps;
        fd[i] = (loss(plus) - loss(minus)) / (2.0 * eps);
    }
    return fd;
}

double relative_error(std::span<const double> a, std::span<const double> b) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        den += a[i] * a[i];
    }
    return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

// The two-class 1-D head with w = (1, -1), b = 0: p(class 0 | x) = sigmoid(2x).
LinearHead symmetric_head() {
    return LinearHead(Matrix(2, 1, {1.0, -1.0}), {0.0, 0.0});
}

double x_for_p0(double p) { return 0.5 * std::log(p / (1.0 - p)); }

std::string temp_file(const std::string& name) {
    auto dir = fs::temp_directory_path() / "afr_head_tests";
    fs::create_directories(dir);
    return (dir / name).string();
}

}  // namespace

TEST(PredictProbs, ZeroHeadIsUniform) {
    LinearHead head(Matrix(3, 2, 0.0), {0.0, 0.0, 0.0});
    Matrix x(2, 2, {1.0, -1.0, 0.5, 2.0});
    Matrix p = predict_probs(head, x);
    for (std::size_t i = 0; i < p.rows(); ++i)
        for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(p(i, c), 1.0 / 3.0, 1e-15);
}

TEST(PredictProbs, SymmetricHeadAtOrigin) {
    Matrix x(1, 1, {0.0});
    Matrix p = predict_probs(symmetric_head(), x);
    EXPECT_DOUBLE_EQ(p(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(p(0, 1), 0.5);
}

TEST(PredictProbs, MatchesPerRowOracle) {
    Rng rng(101);
    auto head = random_head(rng, 3, 4);
    auto x = random_features(rng, 10, 4);
    Matrix p = predict_probs(head, x);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        std::vector<double> logits(3);
        for (std::size_t c = 0; c < 3; ++c) {
            logits[c] = head.bias[c];
            for (std::size_t d = 0; d < 4; ++d) logits[c] += head.weights(c, d) * x(i, d);
        }
        double denom = 0.0;
        for (double z : logits) denom += std::exp(z);
        for (std::size_t c = 0; c < 3; ++c)
            EXPECT_NEAR(p(i, c), std::exp(logits[c]) / denom, 1e-12);
        double sum = 0.0;
        for (std::size_t c = 0; c < 3; ++c) sum += p(i, c);
        EXPECT_NEAR(sum, 1.0, 1e-12);
    }
}

TEST(PredictProbs, DimensionMismatchThrows) {
    LinearHead head(Matrix(2, 3, 0.0), {0.0, 0.0});
    Matrix x(1, 2, {1.0, 2.0});
    EXPECT_THROW(predict_probs(head, x), InvalidInput);
}

TEST(LossErm, UniformPredictionsGiveLn2) {
    LinearHead head(Matrix(2, 1, 0.0), {0.0, 0.0});
    Matrix x(4, 1, {1.0, -2.0, 0.5, 3.0});
    std::vector<std::uint32_t> y{0, 1, 0, 1};
    EXPECT_NEAR(loss_erm(head, x, y), std::log(2.0), 1e-15);
}

TEST(LossErm, ConfidentCorrectPredictionsNearZero) {
    LinearHead head(Matrix(2, 1, {50.0, -50.0}), {0.0, 0.0});
    Matrix x(2, 1, {1.0, -1.0});
    std::vector<std::uint32_t> y{0, 1};
    EXPECT_LT(loss_erm(head, x, y), 1e-12);
}

TEST(LossErm, HandValue) {
    // p_hat = (0.5, 0.25) -> -(ln 0.5 + ln 0.25)/2
    Matrix x(2, 1, {x_for_p0(0.5), x_for_p0(0.25)});
    std::vector<std::uint32_t> y{0, 0};
    EXPECT_NEAR(loss_erm(symmetric_head(), x, y), -(std::log(0.5) + std::log(0.25)) / 2.0,
                1e-12);
}

TEST(LossAfr, UniformWeightsNoPenaltyEqualsErmExactly) {
    Rng rng(103);
    auto head = random_head(rng, 3, 4);
    auto x = random_features(rng, 8, 4);
    auto y = random_labels(rng, 8, 3);
    WeightVector uniform{std::vector<double>(8, 1.0 / 8.0)};
    EXPECT_EQ(loss_afr(head, x, y, uniform, 0.0), loss_erm(head, x, y));
}

TEST(LossAfr, PenaltyVanishesAtAnchor) {
    Rng rng(107);
    auto head = random_head(rng, 2, 3);  // anchor == parameters
    auto x = random_features(rng, 5, 3);
    auto y = random_labels(rng, 5, 2);
    WeightVector mu{std::vector<double>(5, 0.2)};
    EXPECT_EQ(loss_afr(head, x, y, mu, 1e6), loss_afr(head, x, y, mu, 0.0));
}

TEST(LossAfr, HandValue) {
    Matrix x(2, 1, {x_for_p0(0.5), x_for_p0(0.25)});
    std::vector<std::uint32_t> y{0, 0};
    WeightVector mu{{0.75, 0.25}};
    EXPECT_NEAR(loss_afr(symmetric_head(), x, y, mu, 0.0),
                0.75 * std::log(2.0) + 0.25 * std::log(4.0), 1e-12);
}

TEST(LossGdro, SingleGroupEqualsErm) {
    Rng rng(109);
    auto head = random_head(rng, 2, 3);
    auto x = random_features(rng, 6, 3);
    auto y = random_labels(rng, 6, 2);
    std::vector<std::uint32_t> groups(6, 0);
    EXPECT_NEAR(loss_gdro(head, x, y, groups, 1), loss_erm(head, x, y), 1e-12);
}

TEST(LossGdro, IdenticalGroupLossesEqualErm) {
    // both groups see the same example, so every group mean equals the
    // overall mean
    Matrix x(2, 1, {x_for_p0(0.4), x_for_p0(0.4)});
    std::vector<std::uint32_t> y{0, 0};
    std::vector<std::uint32_t> groups{0, 1};
    EXPECT_NEAR(loss_gdro(symmetric_head(), x, y, groups, 2),
                loss_erm(symmetric_head(), x, y), 1e-12);
}

TEST(LossGdro, TakesWorstGroupMean) {
    Matrix x(2, 1, {x_for_p0(0.25), x_for_p0(0.5)});
    std::vector<std::uint32_t> y{0, 0};
    std::vector<std::uint32_t> groups{0, 1};
    EXPECT_NEAR(loss_gdro(symmetric_head(), x, y, groups, 2), std::log(4.0), 1e-12);
}

TEST(LossGdro, DominatesGroupAverageAndEveryGroupLoss) {
    Rng rng(111);
    for (int trial = 0; trial < 50; ++trial) {
        std::size_t n = 6 + rng.below(20);
        auto head = random_head(rng, 2, 3);
        auto x = random_features(rng, n, 3);
        auto y = random_labels(rng, n, 2);
        std::uint32_t num_groups = 2 + static_cast<std::uint32_t>(rng.below(2));
        std::vector<std::uint32_t> groups(n);
        for (std::size_t i = 0; i < n; ++i) groups[i] = i % num_groups;

        double gdro = loss_gdro(head, x, y, groups, num_groups);
        double group_avg = 0.0;
        for (std::uint32_t g = 0; g < num_groups; ++g) {
            std::vector<std::size_t> rows;
            for (std::size_t i = 0; i < n; ++i)
                if (groups[i] == g) rows.push_back(i);
            Matrix gx(rows.size(), 3);
            std::vector<std::uint32_t> gy(rows.size());
            for (std::size_t k = 0; k < rows.size(); ++k) {
                std::copy(x.row(rows[k]).begin(), x.row(rows[k]).end(), gx.row(k).begin());
                gy[k] = y[rows[k]];
            }
            double group_loss = loss_erm(head, gx, gy);
            EXPECT_GE(gdro, group_loss - 1e-12);
            group_avg += group_loss;
        }
        EXPECT_GE(gdro, group_avg / num_groups - 1e-12);
    }
}

TEST(LossGdro, EmptyGroupThrows) {
    Matrix x(2, 1, {0.0, 1.0});
    std::vector<std::uint32_t> y{0, 1};
    std::vector<std::uint32_t> groups{0, 0};
    EXPECT_THROW(loss_gdro(symmetric_head(), x, y, groups, 2), InvalidInput);
}

TEST(Gradients, ErmMatchesFiniteDifferences) {
    Rng rng(113);
    for (int trial = 0; trial < 20; ++trial) {
        std::size_t n = 2 + rng.below(7), d = 1 + rng.below(5), c = 2 + rng.below(2);
        auto head = random_head(rng, c, d);
        auto x = random_features(rng, n, d);
        auto y = random_labels(rng, n, static_cast<std::uint32_t>(c));
        auto analytic = grad_erm(head, x, y);
        auto fd = finite_difference(head, [&](const LinearHead& h) { return loss_erm(h, x, y); });
        EXPECT_LT(relative_error(analytic, fd), 1e-5);
    }
}

TEST(Gradients, AfrWithAnchorPenaltyMatchesFiniteDifferences) {
    Rng rng(127);
    for (int trial = 0; trial < 20; ++trial) {
        std::size_t n = 2 + rng.below(7), d = 1 + rng.below(5), c = 2 + rng.below(2);
        auto anchor = random_head(rng, c, d);
        // move away from the anchor so the penalty gradient is active
        LinearHead head = anchor;
        for (double& v : head.weights.data()) v += 0.3 * rng.normal();
        for (double& v : head.bias) v += 0.3 * rng.normal();
        auto x = random_features(rng, n, d);
        auto y = random_labels(rng, n, static_cast<std::uint32_t>(c));
        std::vector<double> raw(n);
        for (double& v : raw) v = 0.1 + rng.uniform();
        double sum = 0.0;
        for (double v : raw) sum += v;
        for (double& v : raw) v /= sum;
        WeightVector mu{raw};
        double lambda = rng.uniform() * 2.0;

        auto analytic = grad_afr(head, x, y, mu, lambda);
        auto fd = finite_difference(
            head, [&](const LinearHead& h) { return loss_afr(h, x, y, mu, lambda); });
        EXPECT_LT(relative_error(analytic, fd), 1e-5);
    }
}

TEST(Gradients, GdroMatchesFiniteDifferences) {
    Rng rng(131);
    for (int trial = 0; trial < 20; ++trial) {
        std::size_t n = 4 + rng.below(5), d = 1 + rng.below(5);
        auto head = random_head(rng, 2, d);
        auto x = random_features(rng, n, d);
        auto y = random_labels(rng, n, 2);
        std::vector<std::uint32_t> groups(n);
        for (std::size_t i = 0; i < n; ++i) groups[i] = i % 2;
        auto analytic = grad_gdro(head, x, y, groups, 2);
        auto fd = finite_difference(
            head, [&](const LinearHead& h) { return loss_gdro(h, x, y, groups, 2); });
        EXPECT_LT(relative_error(analytic, fd), 1e-5);
    }
}

TEST(Gradients, AfrAtAnchorWithUniformWeightsEqualsErm) {
    Rng rng(137);
    auto head = random_head(rng, 3, 4);  // parameters == anchor
    auto x = random_features(rng, 6, 4);
    auto y = random_labels(rng, 6, 3);
    WeightVector uniform{std::vector<double>(6, 1.0 / 6.0)};
    EXPECT_EQ(grad_afr(head, x, y, uniform, 123.0), grad_erm(head, x, y));
}

TEST(Gradients, PenaltyComponentLinearInLambda) {
    Rng rng(139);
    auto anchor = random_head(rng, 2, 3);
    LinearHead head = anchor;
    for (double& v : head.weights.data()) v += rng.normal();
    auto x = random_features(rng, 5, 3);
    auto y = random_labels(rng, 5, 2);
    WeightVector mu{std::vector<double>(5, 0.2)};

    auto g0 = grad_afr(head, x, y, mu, 0.0);
    auto g1 = grad_afr(head, x, y, mu, 1.5);
    auto g2 = grad_afr(head, x, y, mu, 3.0);
    for (std::size_t i = 0; i < g0.size(); ++i)
        EXPECT_NEAR(g2[i] - g1[i], g1[i] - g0[i], 1e-12);
}

namespace {

struct TrainFixture {
    Matrix train_x{0, 0};
    std::vector<std::uint32_t> train_y;
    std::vector<std::uint32_t> train_groups;
    Matrix val_x{0, 0};
    std::vector<std::uint32_t> val_y;
    std::vector<std::uint32_t> val_groups;
    WeightVector mu;
    LinearHead head{Matrix(2, 2, 0.0), {0.0, 0.0}};
};

TrainFixture make_train_fixture(std::uint64_t seed, std::size_t n = 24) {
    Rng rng(seed);
    TrainFixture f;
    f.train_x = random_features(rng, n, 2);
    f.val_x = random_features(rng, n, 2);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t y = static_cast<std::uint32_t>(rng.below(2));
        f.train_y.push_back(y);
        f.train_x(i, 0) += y == 0 ? -1.0 : 1.0;
        std::uint32_t vy = static_cast<std::uint32_t>(rng.below(2));
        f.val_y.push_back(vy);
        f.val_x(i, 0) += vy == 0 ? -1.0 : 1.0;
        f.train_groups.push_back(i % 2);
        f.val_groups.push_back(i % 2);
    }
    f.mu = WeightVector{std::vector<double>(n, 1.0 / static_cast<double>(n))};
    f.head = random_head(rng, 2, 2);
    return f;
}

}  // namespace

TEST(TrainHead, HugeLambdaPinsParametersToAnchor) {
    auto f = make_train_fixture(149);
    TrainConfig cfg{.learning_rate = 1e-4, .max_epochs = 60, .lambda = 1e6,
                    .early_stopping = false, .objective = Objective::Afr};
    auto report = train_head(f.head, f.train_x, f.train_y, &f.train_groups, &f.mu, cfg, f.val_x,
                             f.val_y, f.val_groups, 2);
    EXPECT_LT(report.head->anchor_distance(), 1e-3);
}

TEST(TrainHead, OneStepMovesAtMostLrTimesClip) {
    auto f = make_train_fixture(151);
    TrainConfig cfg{.learning_rate = 0.25, .max_epochs = 1, .lambda = 0.0, .grad_clip_norm = 1.0,
                    .early_stopping = false, .objective = Objective::Afr};
    auto report = train_head(f.head, f.train_x, f.train_y, nullptr, &f.mu, cfg, f.val_x, f.val_y,
                             f.val_groups, 2);
    double moved = 0.0;
    for (std::size_t i = 0; i < f.head.weights.size(); ++i) {
        double d = report.head->weights.data()[i] - f.head.weights.data()[i];
        moved += d * d;
    }
    for (std::size_t c = 0; c < f.head.bias.size(); ++c) {
        double d = report.head->bias[c] - f.head.bias[c];
        moved += d * d;
    }
    EXPECT_LE(std::sqrt(moved), 0.25 * 1.0 + 1e-12);
}

TEST(TrainHead, EarlyStoppingSelectsBestRecordedEpoch) {
    auto f = make_train_fixture(157);
    TrainConfig cfg{.learning_rate = 0.1, .max_epochs = 40, .lambda = 0.0,
                    .early_stopping = true, .objective = Objective::Afr};
    auto report = train_head(f.head, f.train_x, f.train_y, nullptr, &f.mu, cfg, f.val_x, f.val_y,
                             f.val_groups, 2);
    ASSERT_EQ(report.val_wga.size(), 41u);
    EXPECT_TRUE(report.selection_consistent());
    // first occurrence on ties
    for (std::size_t e = 0; e < report.selected_epoch; ++e)
        EXPECT_LT(report.val_wga[e], report.val_wga[report.selected_epoch]);
    EXPECT_EQ(report.train_loss.size(), 41u);
    EXPECT_EQ(report.val_group_accuracy.size(), 41u);
}

TEST(TrainHead, DeterministicAcrossRuns) {
    auto f = make_train_fixture(163);
    TrainConfig cfg{.learning_rate = 0.1, .max_epochs = 30, .lambda = 0.01,
                    .early_stopping = true, .objective = Objective::Afr};
    auto a = train_head(f.head, f.train_x, f.train_y, nullptr, &f.mu, cfg, f.val_x, f.val_y,
                        f.val_groups, 2);
    auto b = train_head(f.head, f.train_x, f.train_y, nullptr, &f.mu, cfg, f.val_x, f.val_y,
                        f.val_groups, 2);
    EXPECT_EQ(a.train_loss, b.train_loss);
    EXPECT_EQ(a.val_wga, b.val_wga);
    EXPECT_EQ(a.selected_epoch, b.selected_epoch);
    EXPECT_EQ(a.head->weights, b.head->weights);
    EXPECT_EQ(a.head->bias, b.head->bias);
}

TEST(TrainHead, GdroObjectiveTrains) {
    auto f = make_train_fixture(167);
    TrainConfig cfg{.learning_rate = 0.1, .max_epochs = 20, .lambda = 0.0,
                    .early_stopping = true, .objective = Objective::Gdro};
    auto report = train_head(f.head, f.train_x, f.train_y, &f.train_groups, nullptr, cfg, f.val_x,
                             f.val_y, f.val_groups, 2);
    EXPECT_EQ(report.train_loss.size(), 21u);
    EXPECT_THROW(train_head(f.head, f.train_x, f.train_y, nullptr, nullptr, cfg, f.val_x, f.val_y,
                            f.val_groups, 2),
                 InvalidInput);
}

TEST(TrainHead, RejectsHeadAwayFromAnchor) {
    auto f = make_train_fixture(171);
    LinearHead drifted(f.head.weights, f.head.bias, f.head.anchor_weights(),
                       f.head.anchor_bias());
    drifted.weights(0, 0) += 1.0;
    TrainConfig cfg{.learning_rate = 0.1, .max_epochs = 5, .objective = Objective::Afr};
    EXPECT_THROW(train_head(drifted, f.train_x, f.train_y, nullptr, &f.mu, cfg, f.val_x, f.val_y,
                            f.val_groups, 2),
                 InvalidInput);
}

TEST(TrainHead, DivergenceReportsEpoch) {
    auto f = make_train_fixture(173);
    TrainConfig cfg{.learning_rate = 1e308, .max_epochs = 10, .lambda = 0.0,
                    .early_stopping = false, .objective = Objective::Afr};
    try {
        train_head(f.head, f.train_x, f.train_y, nullptr, &f.mu, cfg, f.val_x, f.val_y,
                   f.val_groups, 2);
        FAIL() << "expected DivergenceError";
    } catch (const DivergenceError& e) {
        EXPECT_GE(e.epoch(), 1u);
    }
}

TEST(HeadCheckpoint, RoundTripIsBitExact) {
    Rng rng(179);
    auto anchor = random_head(rng, 3, 5);
    LinearHead head = anchor;
    for (double& v : head.weights.data()) v += rng.normal();  // parameters differ from anchor
    auto path = temp_file("head.afrh");
    write_head_file(head, path);
    auto back = read_head_file(path);
    EXPECT_EQ(back.weights, head.weights);
    EXPECT_EQ(back.bias, head.bias);
    EXPECT_EQ(back.anchor_weights(), head.anchor_weights());
    EXPECT_EQ(back.anchor_bias(), head.anchor_bias());
}

TEST(HeadCheckpoint, CorruptMagicThrowsAtOffsetZero) {
    Rng rng(181);
    auto head = random_head(rng, 2, 2);
    auto path = temp_file("corrupt.afrh");
    write_head_file(head, path);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.put('Z');
    }
    try {
        read_head_file(path);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.offset(), 0u);
    }
}
