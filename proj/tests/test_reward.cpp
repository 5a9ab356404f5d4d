#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "epm/reward.hpp"
#include "support.hpp"

using namespace epm;
using namespace epm::reward;
using judges::JudgeKind;
using judges::JudgeScore;

namespace {

judges::JudgeProvider constant_judge(double core, double id, double var)
{
    return [=](JudgeKind kind, const ProductPair&, const std::string&) {
        const double s = kind == JudgeKind::core_identity ? core : kind == JudgeKind::model_identifier ? id : var;
        return JudgeScore{kind, s, "", false};
    };
}

const ProductPair pair = make_pair("Volt Power Bank 10000mAh, Gray", "Volt Power Bank 10000mAh Gray Imported", "Volt");

}  // namespace

TEST(Aggregate, FixedCases)
{
    EXPECT_EQ(aggregate_reward(1, 1, 1), 1.0);
    EXPECT_EQ(aggregate_reward(1, 0, 0), 0.25);
    EXPECT_EQ(aggregate_reward(0, 1, 0), 0.5);
    EXPECT_EQ(aggregate_reward(0, 0, 1), 0.25);
    EXPECT_EQ(aggregate_reward(0, 0, 0), 0.0);
}

TEST(Aggregate, RandomizedProperties)
{
    rng_t rng(17);
    for (int i = 0; i < 10000; ++i) {
        const double f = uniform01(rng), c = uniform01(rng), j = uniform01(rng);
        const RewardWeights w{uniform_real(rng, 0.01, 5), uniform_real(rng, 0.01, 5), uniform_real(rng, 0.01, 5)};
        const double r = aggregate_reward(f, c, j, w);
        ASSERT_GE(r, 0.0);
        ASSERT_LE(r, 1.0);
        const double s = uniform_real(rng, 0.1, 100);
        EXPECT_NEAR(aggregate_reward(f, c, j, {w.format * s, w.correctness * s, w.judge * s}), r, 1e-12);
        const double d = uniform_real(rng, 0.0, 0.5);
        EXPECT_GE(aggregate_reward(std::min(1.0, f + d), c, j, w), r);
        EXPECT_GE(aggregate_reward(f, std::min(1.0, c + d), j, w), r);
        EXPECT_GE(aggregate_reward(f, c, std::min(1.0, j + d), w), r);
    }
}

TEST(Aggregate, WeightValidation)
{
    EXPECT_THROW(aggregate_reward(1, 1, 1, {-1, 1, 1}), validation_error);
    EXPECT_THROW(aggregate_reward(1, 1, 1, {0, 0, 0}), validation_error);
    EXPECT_THROW(weights_from_json({{"judge", -0.5}}), validation_error);
    EXPECT_EQ(aggregate_reward(0.3, 0.7, 0.9, {0, 1, 0}), 0.7);
    const auto w = weights_from_json({{"correctness", 3}});
    EXPECT_EQ(w.format, 1.0);
    EXPECT_EQ(w.correctness, 3.0);
    EXPECT_EQ(to_json(w), (json{{"format", 1.0}, {"correctness", 3.0}, {"judge", 1.0}}));
}

TEST(FourTerm, LinearUnnormalized)
{
    EXPECT_EQ(four_term_reward(1, 1, 1, 1, {}), 4.0);
    EXPECT_EQ(four_term_reward(1, 0.5, 0.25, 0, {2, 2, 4, 8}), 2.0 + 1.0 + 1.0);
    rng_t rng(2);
    for (int i = 0; i < 1000; ++i) {
        const FourTermWeights l{uniform01(rng), uniform01(rng), uniform01(rng), uniform01(rng)};
        const double a = uniform01(rng), b = uniform01(rng), c = uniform01(rng), d = uniform01(rng);
        EXPECT_NEAR(four_term_reward(2 * a, 2 * b, 2 * c, 2 * d, l), 2 * four_term_reward(a, b, c, d, l), 1e-12);
    }
    EXPECT_THROW(four_term_reward(1, 1, 1, 1, {1, -1, 1, 1}), validation_error);
}

TEST(ScoreRollout, WellFormedCorrect)
{
    const auto b = score_rollout(pair, "<reason>same \"10000mAh\"</reason><label>1</label>", 1, constant_judge(1, 0.5, 0));
    EXPECT_EQ(b.s_fmt, 1);
    EXPECT_EQ(b.s_cls, 1);
    EXPECT_DOUBLE_EQ(b.s_judge, 0.5);
    EXPECT_DOUBLE_EQ(b.reward, (1 + 2 + 0.5) / 4.0);
}

TEST(ScoreRollout, MalformedStillEarnsCorrectness)
{
    const auto b = score_rollout(pair, "<label>1</label><reason>r</reason>", 1, constant_judge(1, 1, 1));
    EXPECT_EQ(b.s_fmt, 0);
    EXPECT_EQ(b.s_cls, 1);
    EXPECT_EQ(b.s_judge, 1.0);
    EXPECT_DOUBLE_EQ(b.reward, 0.75);
}

TEST(ScoreRollout, EmptyReasoningZeroesJudgesWithoutCalls)
{
    int calls = 0;
    judges::JudgeProvider counting = [&](JudgeKind k, const ProductPair&, const std::string&) {
        ++calls;
        return JudgeScore{k, 1.0, "", false};
    };
    for (const char* text : {"<reason>  </reason><label>0</label>", "<label>0</label>", "garbage"}) {
        const auto b = score_rollout(pair, text, 0, counting);
        EXPECT_EQ(b.s_judge, 0.0) << text;
    }
    EXPECT_EQ(calls, 0);
    EXPECT_EQ(score_rollout(pair, "garbage", 0, counting).reward, 0.0);
}

TEST(ScoreRollout, OutOfRangeJudgeIsClampedAndFlagged)
{
    const auto b = score_rollout(pair, "<reason>r</reason><label>0</label>", 1,
                                 constant_judge(1.7, -0.3, std::numeric_limits<double>::quiet_NaN()));
    EXPECT_EQ(b.judge_scores[0].score, 1.0);
    EXPECT_EQ(b.judge_scores[1].score, 0.0);
    EXPECT_EQ(b.judge_scores[2].score, 0.0);
    EXPECT_TRUE(b.judge_scores[0].clamped && b.judge_scores[1].clamped && b.judge_scores[2].clamped);
    EXPECT_EQ(b.s_cls, 0);
    EXPECT_GE(b.reward, 0.0);
    EXPECT_LE(b.reward, 1.0);
    const auto j = to_json(b);
    EXPECT_EQ(j.at("judge_clamped").at("variant"), true);
    EXPECT_EQ(j.at("judge_scores").at("core"), 1.0);
}

TEST(ScoreRollout, JudgeFailurePropagates)
{
    judges::JudgeProvider failing = [](JudgeKind, const ProductPair&, const std::string&) -> JudgeScore {
        throw transport_error("down");
    };
    EXPECT_THROW(score_rollout(pair, "<reason>r</reason><label>0</label>", 0, failing), transport_error);
    EXPECT_THROW(score_rollout(pair, "<reason>r</reason><label>0</label>", 2, constant_judge(0, 0, 0)),
                 validation_error);
}

TEST(ScoreRollout, RewardAlwaysInUnitInterval)
{
    rng_t rng(12);
    const std::vector<std::string> parts{"<reason>", "</reason>", "<label>", "</label>", "0", "1", "\"Volt\"",
                                         "\"10000mAh\"", " text ", "\"Gray\""};
    const auto judge = judges::mock_judge_provider();
    for (int i = 0; i < 3000; ++i) {
        std::string s;
        for (std::size_t k = uniform_index(rng, 9); k > 0; --k) s += pick(parts, rng);
        const RewardWeights w{uniform01(rng) + 0.01, uniform01(rng), uniform01(rng)};
        const auto b = score_rollout(pair, s, static_cast<int>(uniform_index(rng, 2)), judge, w);
        ASSERT_GE(b.reward, 0.0) << s;
        ASSERT_LE(b.reward, 1.0) << s;
    }
}
