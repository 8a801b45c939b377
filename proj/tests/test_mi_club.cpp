#include "singsynth/acoustic_model.hpp"
#include "singsynth/mi_club.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

using namespace singsynth;
using namespace singsynth::mi;

namespace {

void set_param(VariationalApprox& q, const std::string& name, const Matrix& value) {
    ag::Var p = q.parameters().get(name);
    p.mutable_value() = value;
}

double estimate(const VariationalApprox& q, const Matrix& spk, const Matrix& sty) {
    ag::NoGradGuard guard;
    return vclub_estimate(q, ag::Var::constant(spk), ag::Var::constant(sty)).item();
}

double loglik(const VariationalApprox& q, const Matrix& spk, const Matrix& sty) {
    ag::NoGradGuard guard;
    return q_loglik(q, ag::Var::constant(spk), ag::Var::constant(sty)).item();
}

Matrix permute_rows(const Matrix& m, const std::vector<int>& order) {
    Matrix out(m.rows(), m.cols());
    for (size_t i = 0; i < order.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = m.row(order[i]);
    }
    return out;
}

constexpr double kAnalyticMi = 2.0433024950639633;  // -(4/2) log(1 - 0.8^2)
constexpr double kOptimalQClub = 7.111111111111111;  // E rho^2 / (1 - rho^2)

}  // namespace

TEST(QLoglik, MeanMatchUnitVariance) {
    VariationalApprox q(32, 1);
    set_param(q, "q.logvar.weight", Matrix::Zero(32, 32));
    set_param(q, "q.logvar.bias", Matrix::Zero(1, 32));
    nn::Rng rng(2);
    const Matrix spk = rng.normal_matrix(5, 32);
    Matrix sty;
    {
        ag::NoGradGuard guard;
        sty = q.mean(ag::Var::constant(spk)).value();
    }
    EXPECT_NEAR(loglik(q, spk, sty), -16.0 * std::log(2 * std::numbers::pi), 1e-4);
    EXPECT_NEAR(loglik(q, spk, sty), -29.40603, 1e-4);
}

TEST(QLoglik, DecreasesWithDistance) {
    VariationalApprox q(4, 3);
    nn::Rng rng(4);
    const Matrix spk = rng.normal_matrix(1, 4);
    Matrix centre;
    {
        ag::NoGradGuard guard;
        centre = q.mean(ag::Var::constant(spk)).value();
    }
    const Matrix dir = rng.normal_matrix(1, 4);
    double previous = loglik(q, spk, centre);
    for (double r = 0.25; r <= 3.0; r += 0.25) {
        const double v = loglik(q, spk, centre + dir * static_cast<Scalar>(r));
        EXPECT_LT(v, previous) << r;
        previous = v;
    }
}

TEST(QLoglik, BatchOfOneIsSingleDensity) {
    VariationalApprox q(3, 5);
    nn::Rng rng(6);
    const Matrix spk = rng.normal_matrix(1, 3);
    const Matrix sty = rng.normal_matrix(1, 3);
    Matrix mu;
    Matrix lv;
    {
        ag::NoGradGuard guard;
        mu = q.mean(ag::Var::constant(spk)).value();
        lv = q.logvar(ag::Var::constant(spk)).value();
    }
    double want = 0;
    for (int k = 0; k < 3; ++k) {
        const double var = std::exp(static_cast<double>(lv(0, k)));
        const double d = static_cast<double>(sty(0, k) - mu(0, k));
        want += -0.5 * std::log(2 * std::numbers::pi * var) - d * d / (2 * var);
    }
    EXPECT_NEAR(loglik(q, spk, sty), want, 1e-4);
}

TEST(QLoglik, RejectsEmptyOrMismatchedBatch) {
    VariationalApprox q(3, 7);
    EXPECT_THROW(loglik(q, Matrix(0, 3), Matrix(0, 3)), InvalidInput);
    EXPECT_THROW(loglik(q, Matrix::Zero(2, 3), Matrix::Zero(3, 3)), InvalidInput);
    EXPECT_THROW(estimate(q, Matrix(0, 3), Matrix(0, 3)), InvalidInput);
}

TEST(QLogvar, ClampedToRange) {
    VariationalApprox q(2, 8);
    set_param(q, "q.logvar.bias", Matrix::Constant(1, 2, 50.0f));
    ag::NoGradGuard guard;
    const Matrix lv = q.logvar(ag::Var::constant(Matrix::Zero(1, 2))).value();
    EXPECT_EQ(lv.maxCoeff(), kLogvarMax);
    set_param(q, "q.logvar.bias", Matrix::Constant(1, 2, -50.0f));
    EXPECT_EQ(q.logvar(ag::Var::constant(Matrix::Zero(1, 2))).value().minCoeff(), kLogvarMin);
}

TEST(Vclub, SinglePairIsExactlyZero) {
    VariationalApprox q(4, 9);
    nn::Rng rng(10);
    EXPECT_EQ(estimate(q, rng.normal_matrix(1, 4), rng.normal_matrix(1, 4)), 0.0);
}

TEST(Vclub, IdenticalStylesGiveExactlyZero) {
    VariationalApprox q(4, 11);
    nn::Rng rng(12);
    const Matrix row = rng.normal_matrix(1, 4);
    const Matrix sty = row.replicate(9, 1);
    EXPECT_EQ(estimate(q, rng.normal_matrix(9, 4), sty), 0.0);
}

TEST(Vclub, InvariantToJointPermutation) {
    VariationalApprox q(4, 13);
    nn::Rng rng(14);
    const Matrix spk = rng.normal_matrix(20, 4);
    const Matrix sty = rng.normal_matrix(20, 4);
    std::vector<int> order(20);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng.engine());
    EXPECT_NEAR(estimate(q, permute_rows(spk, order), permute_rows(sty, order)), estimate(q, spk, sty), 1e-9);
}

TEST(Vclub, GradientsSkipVariationalParameters) {
    VariationalApprox q(4, 15);
    nn::Rng rng(16);
    ag::Var spk = ag::Var::leaf(rng.normal_matrix(6, 4));
    ag::Var sty = ag::Var::leaf(rng.normal_matrix(6, 4));
    ag::backward(vclub_estimate(q, spk, sty));
    for (const auto& p : q.parameters().parameters()) {
        EXPECT_EQ(p.var.grad().size(), 0) << p.name;
    }
    EXPECT_GT(spk.grad().norm(), 0);
    EXPECT_GT(sty.grad().norm(), 0);
}

TEST(Vclub, ShuffledPairsAverageToZero) {
    const auto q = support::fit_q(4, 0.8, 300, 17);
    const auto data = support::gaussian_pairs(512, 4, 0.8, 18);
    std::vector<int> order(512);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 gen(19);
    std::vector<double> values;
    for (int i = 0; i < 100; ++i) {
        std::shuffle(order.begin(), order.end(), gen);
        values.push_back(estimate(q, data.spk, permute_rows(data.sty, order)));
    }
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / values.size();
    double var = 0;
    for (double v : values) {
        var += (v - mean) * (v - mean);
    }
    const double se = std::sqrt(var / (values.size() - 1) / values.size());
    EXPECT_LT(std::abs(mean), 3 * se);
}

TEST(Vclub, TrainedQMatchesOptimalClubValue) {
    const auto q = support::fit_q(4, 0.8, 1500, 20);
    const auto data = support::gaussian_pairs(512, 4, 0.8, 21);
    // With the exact conditional as q the estimator's expectation is E rho^2 / (1 - rho^2) (N - 1) / N.
    EXPECT_NEAR(estimate(q, data.spk, data.sty), kOptimalQClub * 511.0 / 512.0, 0.1 * kOptimalQClub);
}

TEST(Vclub, TrainedQWithinFifteenPercentOfAnalyticMi) {
    const auto q = support::fit_q(4, 0.8, 1500, 20);
    const auto data = support::gaussian_pairs(512, 4, 0.8, 21);
    EXPECT_NEAR(estimate(q, data.spk, data.sty), kAnalyticMi, 0.15 * kAnalyticMi);
}

TEST(UpdateQ, LoglikImprovesOnFixedBatch) {
    VariationalApprox q(4, 22);
    nn::Adam opt = make_q_optimizer(q, 1e-2);
    const auto data = support::gaussian_pairs(64, 4, 0.8, 23);
    const double initial = loglik(q, data.spk, data.sty);
    double returned_first = 0;
    for (int i = 0; i < 100; ++i) {
        const double before = update_q(q, data.spk, data.sty, opt);
        if (i == 0) {
            returned_first = before;
        }
    }
    EXPECT_DOUBLE_EQ(returned_first, initial);
    EXPECT_GT(loglik(q, data.spk, data.sty), initial);
}

TEST(UpdateQ, LeavesMainModelUntouched) {
    model::ModelConfig cfg;
    cfg.embed_dim = 4;
    model::AcousticModel net(cfg, 24);
    std::vector<Matrix> before;
    for (const auto& p : net.parameters().parameters()) {
        before.push_back(p.var.value());
    }
    VariationalApprox q(4, 25);
    nn::Adam opt = make_q_optimizer(q, 1e-2);
    const Matrix spk = net.speaker_embeddings({0, 1, 2, 1}).value();
    const Matrix sty = net.style_embeddings({1, 0, 0, 0}).value();
    for (int i = 0; i < 5; ++i) {
        update_q(q, spk, sty, opt);
    }
    for (size_t i = 0; i < before.size(); ++i) {
        EXPECT_EQ(net.parameters().parameters()[i].var.value(), before[i]) << net.parameters().parameters()[i].name;
        EXPECT_EQ(net.parameters().parameters()[i].var.grad().size(), 0);
    }
}

TEST(UpdateQ, ZeroLearningRateKeepsParameters) {
    VariationalApprox q(4, 26);
    std::vector<Matrix> before;
    for (const auto& p : q.parameters().parameters()) {
        before.push_back(p.var.value());
    }
    nn::Adam opt = make_q_optimizer(q, 0.0);
    const auto data = support::gaussian_pairs(16, 4, 0.5, 27);
    update_q(q, data.spk, data.sty, opt);
    for (size_t i = 0; i < before.size(); ++i) {
        EXPECT_EQ(q.parameters().parameters()[i].var.value(), before[i]);
    }
}
