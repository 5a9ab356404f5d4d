#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "epm/judges.hpp"
#include "epm/parsing.hpp"

namespace epm::reward {

struct RewardWeights {
    double format = 1.0;
    double correctness = 2.0;
    double judge = 1.0;

    void validate() const
    {
        if (!(format >= 0.0 && correctness >= 0.0 && judge >= 0.0))
            throw validation_error("reward weights must be nonnegative");
        if (!(format + correctness + judge > 0.0)) throw validation_error("reward weights must not all be zero");
    }
};

struct RewardBreakdown {
    int s_fmt = 0;
    int s_cls = 0;
    std::array<judges::JudgeScore, 3> judge_scores{};
    double s_judge = 0.0;
    double reward = 0.0;
};

inline int correctness_score(const parsing::ParsedOutput& parsed, int gold)
{
    if (gold != 0 && gold != 1) throw validation_error("gold label must be 0 or 1");
    return parsed.label && *parsed.label == gold ? 1 : 0;
}

/// Weighted mean of the three components; lies in [0, 1] when they do.
inline double aggregate_reward(double s_fmt, double s_cls, double s_judge, const RewardWeights& w = {})
{
    w.validate();
    return (w.format * s_fmt + w.correctness * s_cls + w.judge * s_judge) / (w.format + w.correctness + w.judge);
}

struct FourTermWeights {
    double verifiable = 1.0;
    double core = 1.0;
    double identifier = 1.0;
    double variant = 1.0;
};

/// Unnormalized linear reward over a verifiable score and the three judge
/// scores.
inline double four_term_reward(double s_ver, double s_core, double s_id, double s_var, const FourTermWeights& l)
{
    if (l.verifiable < 0.0 || l.core < 0.0 || l.identifier < 0.0 || l.variant < 0.0)
        throw validation_error("reward weights must be nonnegative");
    return l.verifiable * s_ver + l.core * s_core + l.identifier * s_id + l.variant * s_var;
}

inline double mean_judge(const std::array<judges::JudgeScore, 3>& scores)
{
    return (scores[0].score + scores[1].score + scores[2].score) / 3.0;
}

/// Parses one rollout and scores it. Correctness uses the best-effort label
/// even when the format check fails. Judge failures propagate.
inline RewardBreakdown score_rollout(const ProductPair& pair, const std::string& rollout_text, int gold,
                                     const judges::JudgeProvider& judge, const RewardWeights& weights = {})
{
    const auto parsed = parsing::parse_structured_output(rollout_text);
    RewardBreakdown out;
    out.s_fmt = parsing::format_score(parsed);
    out.s_cls = correctness_score(parsed, gold);
    const std::string reasoning = parsed.reasoning.value_or("");
    const bool empty = text::trim(reasoning).empty();
    for (std::size_t j = 0; j < 3; ++j) {
        const auto kind = judges::all_kinds[j];
        out.judge_scores[j] = empty ? judges::JudgeScore{kind, 0.0, {}, false} : judge(kind, pair, reasoning);
        auto& js = out.judge_scores[j];
        js.kind = kind;
        if (!(js.score >= 0.0 && js.score <= 1.0)) {
            js.score = std::isnan(js.score) ? 0.0 : std::clamp(js.score, 0.0, 1.0);
            js.clamped = true;
        }
    }
    out.s_judge = mean_judge(out.judge_scores);
    out.reward = aggregate_reward(out.s_fmt, out.s_cls, out.s_judge, weights);
    return out;
}

inline json to_json(const RewardBreakdown& b)
{
    return {{"s_fmt", b.s_fmt},
            {"s_cls", b.s_cls},
            {"s_judge", b.s_judge},
            {"reward", b.reward},
            {"judge_scores",
             {{"core", b.judge_scores[0].score},
              {"identifier", b.judge_scores[1].score},
              {"variant", b.judge_scores[2].score}}},
            {"judge_clamped",
             {{"core", b.judge_scores[0].clamped},
              {"identifier", b.judge_scores[1].clamped},
              {"variant", b.judge_scores[2].clamped}}}};
}

inline json to_json(const RewardWeights& w)
{
    return {{"format", w.format}, {"correctness", w.correctness}, {"judge", w.judge}};
}

inline RewardWeights weights_from_json(const json& j)
{
    RewardWeights w;
    w.format = j.value("format", w.format);
    w.correctness = j.value("correctness", w.correctness);
    w.judge = j.value("judge", w.judge);
    w.validate();
    return w;
}

}  // namespace epm::reward
