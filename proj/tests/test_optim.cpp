#include <gtest/gtest.h>

#include <Eigen/SVD>
#include <cmath>

#include "epm/gradcheck.hpp"
#include "epm/lora.hpp"
#include "support.hpp"

using namespace epm;
using namespace epm::optim;

namespace {

std::vector<double> random_rewards(rng_t& rng, std::size_t k)
{
    std::vector<double> r(k);
    for (auto& x : r) x = uniform_index(rng, 3) == 0 ? 0.25 * static_cast<double>(uniform_index(rng, 5)) : uniform01(rng);
    return r;
}

RolloutGroup group_of(std::vector<double> rewards, std::vector<double> logprobs, std::vector<double> old = {})
{
    RolloutGroup g;
    g.rewards = std::move(rewards);
    g.advantages = group_advantages(g.rewards);
    g.logprobs = std::move(logprobs);
    if (!old.empty()) g.old_logprobs = std::move(old);
    return g;
}

}  // namespace

TEST(Advantages, HandCase)
{
    const std::vector<double> r{1.0, 0.0, 0.5, 0.5};
    const auto a = group_advantages(r);
    const double sd = std::sqrt((0.25 + 0.25 + 0 + 0) / 4.0);
    EXPECT_NEAR(a[0], 0.5 / (sd + 1e-8), 1e-15);
    EXPECT_NEAR(a[1], -0.5 / (sd + 1e-8), 1e-15);
    EXPECT_EQ(a[2], 0.0);
    const auto raw = group_advantages(r, false);
    EXPECT_EQ(raw, (std::vector<double>{0.5, -0.5, 0.0, 0.0}));
}

TEST(Advantages, ZeroVarianceAndSingletons)
{
    EXPECT_EQ(group_advantages(std::vector<double>{0.7, 0.7, 0.7, 0.7}), std::vector<double>(4, 0.0));
    EXPECT_EQ(group_advantages(std::vector<double>{0.3}), std::vector<double>{0.0});
    EXPECT_THROW(group_advantages(std::vector<double>{}), validation_error);
}

TEST(Advantages, RandomizedProperties)
{
    rng_t rng(4);
    for (int i = 0; i < 5000; ++i) {
        const auto k = 2 + uniform_index(rng, 7);
        const auto r = random_rewards(rng, k);
        const auto a = group_advantages(r);
        double sum = 0.0;
        for (double x : a) sum += x;
        EXPECT_LT(std::abs(sum), 1e-9);

        const double c = uniform_real(rng, -10, 10);
        auto shifted = r;
        for (auto& x : shifted) x += c;
        const auto b = group_advantages(shifted);
        for (std::size_t j = 0; j < k; ++j) EXPECT_NEAR(a[j], b[j], 1e-6);

        double mean = 0.0;
        for (double x : r) mean += x;
        mean /= static_cast<double>(k);
        double var = 0.0;
        for (double x : r) var += (x - mean) * (x - mean);
        const double sd = std::sqrt(var / static_cast<double>(k));
        double m2 = 0.0;
        for (double x : a) m2 += x * x;
        EXPECT_NEAR(std::sqrt(m2 / static_cast<double>(k)), sd / (sd + 1e-8), 1e-9);
        if (sd > 1e-2) { EXPECT_NEAR(std::sqrt(m2 / static_cast<double>(k)), 1.0, 1e-6); }
    }
}

TEST(GrpoLoss, MatchesDirectFormula)
{
    const auto g1 = group_of({1, 0, 0.5, 0.5}, {-1.0, -2.0, -0.5, -3.0});
    const auto g2 = group_of({0.2, 0.2, 0.9, 0.1}, {-0.1, -0.2, -0.3, -0.4});
    const std::vector<RolloutGroup> groups{g1, g2};
    double expect = 0.0;
    for (const auto& g : groups) {
        double s = 0.0;
        for (std::size_t k = 0; k < 4; ++k) s += (*g.advantages)[k] * g.logprobs[k];
        expect += s / 4.0;
    }
    expect = -expect / 2.0;
    EXPECT_NEAR(grpo_loss(groups), expect, 1e-15);
    const auto grad = grpo_loss_grad(groups);
    EXPECT_NEAR(grad[1][2], -(*g2.advantages)[2] / 8.0, 1e-15);
    EXPECT_EQ(grpo_loss({}), 0.0);
}

TEST(GrpoLoss, ZeroVarianceGroupContributesNothing)
{
    const std::vector<RolloutGroup> groups{group_of({0.5, 0.5, 0.5, 0.5}, {-1, -2, -3, -4})};
    EXPECT_EQ(grpo_loss(groups), 0.0);
    const auto grad = grpo_loss_grad(groups);
    for (double g : grad[0]) EXPECT_EQ(g, 0.0);
}

TEST(ClippedLoss, ReducesToPlainSurrogateInsideTrustRegion)
{
    // With old == current, rho = 1 and the clipped objective equals mean(A).
    const auto g = group_of({1, 0, 0.2, 0.9}, {-1, -2, -3, -4}, {-1, -2, -3, -4});
    const std::vector<RolloutGroup> groups{g};
    double mean_a = 0.0;
    for (double a : *g.advantages) mean_a += a;
    EXPECT_NEAR(clipped_grpo_loss(groups), -mean_a / 4.0, 1e-15);
    // And its gradient equals the plain GRPO gradient.
    const auto a = clipped_grpo_loss_grad(groups);
    const auto b = grpo_loss_grad(groups);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(a[0][k], b[0][k], 1e-15);
}

TEST(ClippedLoss, ClippedTermsHaveNoGradient)
{
    // rho = e^0.5 > 1.1 with A > 0: clipped, gradient 0. rho = e^-0.5 < 0.9 with
    // A > 0: min picks the unclipped term, gradient nonzero.
    auto g = group_of({1, 0}, {0.5, 0.0}, {0.0, 0.0});
    const std::vector<RolloutGroup> groups{g};
    const auto grad = clipped_grpo_loss_grad(groups, 0.1);
    EXPECT_EQ(grad[0][0], 0.0);
    EXPECT_NEAR(clipped_grpo_loss(groups, 0.1), -((1.1 * (*g.advantages)[0]) + 1.0 * (*g.advantages)[1]) / 2.0, 1e-12);

    auto h = group_of({1, 0}, {-0.5, 0.0}, {0.0, 0.0});
    const std::vector<RolloutGroup> hs{h};
    EXPECT_NEAR(clipped_grpo_loss_grad(hs, 0.1)[0][0], -std::exp(-0.5) * (*h.advantages)[0] / 2.0, 1e-12);
    EXPECT_THROW(clipped_grpo_loss(hs, -0.1), validation_error);
}

TEST(Losses, ShapeChecks)
{
    RolloutGroup g;
    g.rewards = {1, 0};
    g.logprobs = {-1, -1};
    const std::vector<RolloutGroup> no_adv{g};
    EXPECT_THROW(grpo_loss(no_adv), validation_error);
    g.advantages = std::vector<double>{1.0};
    const std::vector<RolloutGroup> bad{g};
    EXPECT_THROW(grpo_loss(bad), shape_error);
    g.advantages = std::vector<double>{1.0, -1.0};
    const std::vector<RolloutGroup> no_old{g};
    EXPECT_THROW(clipped_grpo_loss(no_old), validation_error);
}

TEST(Nll, SumOverTokens)
{
    EXPECT_DOUBLE_EQ(nll_loss({{-0.5, -1.0}, {-2.0}}), 3.5);
    EXPECT_THROW(nll_loss({}), validation_error);
    EXPECT_THROW(nll_loss({{}, {}}), validation_error);
}

TEST(FiniteDiff, DetectsWrongGradient)
{
    const ScalarFn f = [](std::span<const double> x) { return x[0] * x[0] + 3 * x[1]; };
    const GradientFn right = [](std::span<const double> x) { return std::vector<double>{2 * x[0], 3.0}; };
    const GradientFn wrong = [](std::span<const double> x) { return std::vector<double>{x[0], 3.0}; };
    EXPECT_LT(finite_diff_check(f, right, {1.5, -2.0}), 1e-8);
    EXPECT_GT(finite_diff_check(f, wrong, {1.5, -2.0}), 0.5);
}

TEST(FiniteDiff, AllLossesPass)
{
    for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
        const auto r = run_gradient_checks(seed);
        EXPECT_LT(r.grpo, 1e-4) << seed;
        EXPECT_LT(r.clipped_grpo, 1e-4) << seed;
        EXPECT_LT(r.nll, 1e-4) << seed;
        EXPECT_LT(r.bce, 1e-4) << seed;
    }
}

TEST(ToyPolicyTest, ProbabilitiesNormalize)
{
    const ToyPolicy p(3, 5);
    rng_t rng(1);
    std::vector<double> theta(p.parameter_count());
    for (auto& x : theta) x = uniform_real(rng, -20, 20);
    for (std::size_t c = 0; c < 3; ++c) {
        const auto probs = p.probabilities(theta, c);
        double s = 0.0;
        for (std::size_t v = 0; v < 5; ++v) {
            s += probs[v];
            EXPECT_NEAR(std::exp(p.token_logprob(theta, c, v)), probs[v], 1e-12);
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
    const std::vector<std::size_t> seq{0, 4, 4};
    EXPECT_NEAR(p.sequence_logprob(theta, 1, seq),
                p.token_logprob(theta, 1, 0) + 2 * p.token_logprob(theta, 1, 4), 1e-12);
}

TEST(Lora, WorkedExample)
{
    LoraFactors f{Eigen::MatrixXd{{3, 4}}, Eigen::MatrixXd{{1}, {2}}, 1.0};
    const Eigen::MatrixXd w = Eigen::MatrixXd::Zero(2, 2);
    const Eigen::MatrixXd expect{{3, 4}, {6, 8}};
    EXPECT_EQ(lora_apply(w, f), expect);
    f.alpha = 2.0;
    EXPECT_EQ(lora_delta(f), 2.0 * expect);
}

TEST(Lora, RankBoundAndAlphaLinearity)
{
    rng_t rng(77);
    auto random_matrix = [&](Eigen::Index r, Eigen::Index c) {
        Eigen::MatrixXd m(r, c);
        for (Eigen::Index i = 0; i < r; ++i)
            for (Eigen::Index j = 0; j < c; ++j) m(i, j) = uniform_real(rng, -1, 1);
        return m;
    };
    for (int t = 0; t < 200; ++t) {
        const auto d = static_cast<Eigen::Index>(1 + uniform_index(rng, 8));
        const auto k = static_cast<Eigen::Index>(1 + uniform_index(rng, 8));
        const auto r = static_cast<Eigen::Index>(1 + uniform_index(rng, 8));
        LoraFactors f{random_matrix(r, k), random_matrix(d, r), uniform_real(rng, 0.5, 64)};
        const auto delta = lora_delta(f);
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(delta);
        const auto& sv = svd.singularValues();
        for (Eigen::Index i = r; i < sv.size(); ++i) EXPECT_LT(sv(i), 1e-10);

        auto g = f;
        g.alpha = 2.5 * f.alpha;
        EXPECT_LT((lora_delta(g) - 2.5 * delta).cwiseAbs().maxCoeff(), 1e-12);
        const auto w = random_matrix(d, k);
        EXPECT_LT((lora_apply(w, f) - w - delta).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Lora, ShapeErrors)
{
    LoraFactors f{Eigen::MatrixXd::Ones(2, 3), Eigen::MatrixXd::Ones(4, 2), 1.0};
    EXPECT_NO_THROW(lora_apply(Eigen::MatrixXd::Zero(4, 3), f));
    EXPECT_THROW(lora_apply(Eigen::MatrixXd::Zero(3, 3), f), shape_error);
    f.b = Eigen::MatrixXd::Ones(4, 3);
    EXPECT_THROW(lora_delta(f), shape_error);
    f.a = Eigen::MatrixXd(0, 3);
    EXPECT_THROW(lora_delta(f), shape_error);
}

TEST(Logistic, BceConventions)
{
    EXPECT_EQ(bce(1.0, 1), 0.0);
    EXPECT_EQ(bce(0.0, 0), 0.0);
    EXPECT_TRUE(std::isinf(bce(0.0, 1)));
    EXPECT_NEAR(bce(0.25, 1), std::log(4.0), 1e-15);
    EXPECT_NEAR(bce(0.25, 0), -std::log(0.75), 1e-15);
    EXPECT_EQ(sigmoid(0), 0.5);
    EXPECT_GE(sigmoid(-800), 0.0);
    EXPECT_EQ(sigmoid(800), 1.0);
}

TEST(Logistic, SeparableSetIsLearnedMonotonically)
{
    rng_t rng(10);
    std::vector<std::vector<double>> x;
    std::vector<int> y;
    const std::vector<double> w_true{1.0, -2.0, 0.5};
    while (x.size() < 200) {
        std::vector<double> p{uniform_real(rng, -1, 1), uniform_real(rng, -1, 1), uniform_real(rng, -1, 1)};
        const double m = w_true[0] * p[0] + w_true[1] * p[1] + w_true[2] * p[2];
        // Keep a geometric margin of 0.2 around the true hyperplane.
        if (std::abs(m) / std::sqrt(5.25) < 0.2) continue;
        x.push_back(p);
        y.push_back(m > 0 ? 1 : 0);
    }
    const auto fit = fit_logistic_head(x, y, 500, 0.1);
    for (std::size_t e = 1; e < fit.loss_history.size(); ++e) EXPECT_LE(fit.loss_history[e], fit.loss_history[e - 1]);
    EXPECT_NEAR(fit.loss_history.front(), std::log(2.0), 1e-12);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < x.size(); ++i) correct += fit.head.predict(x[i]) == y[i] ? 1 : 0;
    EXPECT_GE(static_cast<double>(correct) / 200.0, 0.99);
    EXPECT_THROW(fit_logistic_head({}, {}, 1, 0.1), validation_error);
    EXPECT_THROW(fit_logistic_head({{1.0}}, {2}, 1, 0.1), validation_error);
    EXPECT_THROW(fit_logistic_head({{1.0}, {1.0, 2.0}}, {0, 1}, 1, 0.1), shape_error);
}

TEST(Logistic, HashedFeatures)
{
    const auto p = make_pair("Cola 355mL", "Cola 500mL");
    const auto h = hashed_pair_features(p, 1024);
    double norm = 0.0;
    for (double v : h) norm += v * v;
    EXPECT_NEAR(norm, 1.0, 1e-12);
    EXPECT_EQ(h, hashed_pair_features(p, 1024));
    EXPECT_NE(h, hashed_pair_features(make_pair("Cola 500mL", "Cola 355mL"), 1024));
    EXPECT_THROW(hashed_pair_features(p, 0), validation_error);
}

TEST(Presets, Values)
{
    const auto peft = to_json(PeftPreset{});
    EXPECT_EQ(peft.at("learning_rate"), 1e-5);
    EXPECT_EQ(peft.at("lora_rank"), 32);
    EXPECT_EQ(peft.at("lora_alpha"), 64.0);
    const auto rl = to_json(RlPreset{});
    EXPECT_EQ(rl.at("rollouts_per_input"), 4);
    EXPECT_EQ(rl.at("clip"), 0.1);
}
