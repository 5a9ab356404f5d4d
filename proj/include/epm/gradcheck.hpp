#pragma once

#include <vector>

#include "epm/logistic.hpp"
#include "epm/optim.hpp"

namespace epm::optim {

struct GradcheckReport {
    double grpo = 0.0;
    double clipped_grpo = 0.0;
    double nll = 0.0;
    double bce = 0.0;

    double worst() const { return std::max({grpo, clipped_grpo, nll, bce}); }
};

inline json to_json(const GradcheckReport& r)
{
    return {{"grpo_loss", r.grpo}, {"clipped_grpo_loss", r.clipped_grpo}, {"nll_loss", r.nll}, {"bce", r.bce}};
}

namespace detail {

struct toy_rollout {
    std::size_t context;
    std::vector<std::size_t> tokens;
};

inline std::vector<std::size_t> random_tokens(rng_t& rng, std::size_t vocab, std::size_t min_len, std::size_t max_len)
{
    std::vector<std::size_t> t(min_len + uniform_index(rng, max_len - min_len + 1));
    for (auto& x : t) x = uniform_index(rng, vocab);
    return t;
}

}  // namespace detail

/// Finite-difference checks of every hand-derived gradient, run on a toy
/// softmax policy (GRPO and NLL losses) and on a small logistic problem.
inline GradcheckReport run_gradient_checks(std::uint64_t seed = 1, double h = 1e-5, std::size_t contexts = 4,
                                           std::size_t vocab = 4, std::size_t k = 4, double clip = 0.1)
{
    rng_t rng(seed);
    const ToyPolicy policy(contexts, vocab);
    std::vector<double> theta(policy.parameter_count());
    for (auto& x : theta) x = uniform_real(rng, -1.0, 1.0);

    // One group of K rollouts per context.
    std::vector<std::vector<detail::toy_rollout>> spec(contexts);
    std::vector<RolloutGroup> groups(contexts);
    for (std::size_t c = 0; c < contexts; ++c) {
        auto& g = groups[c];
        g.input_id = "ctx" + std::to_string(c);
        for (std::size_t i = 0; i < k; ++i) {
            spec[c].push_back({c, detail::random_tokens(rng, vocab, 1, 3)});
            g.rewards.push_back(uniform01(rng));
        }
        g.advantages = group_advantages(g.rewards);
        std::vector<double> old;
        for (const auto& r : spec[c]) old.push_back(policy.sequence_logprob(theta, c, r.tokens) + uniform_real(rng, -0.05, 0.05));
        g.old_logprobs = std::move(old);
    }

    auto with_logprobs = [&](std::span<const double> th) {
        auto out = groups;
        for (std::size_t c = 0; c < contexts; ++c) {
            out[c].logprobs.clear();
            for (const auto& r : spec[c]) out[c].logprobs.push_back(policy.sequence_logprob(th, c, r.tokens));
        }
        return out;
    };
    auto chain = [&](std::span<const double> th, const std::vector<std::vector<double>>& dlogp) {
        std::vector<double> grad(th.size(), 0.0);
        for (std::size_t c = 0; c < contexts; ++c)
            for (std::size_t i = 0; i < spec[c].size(); ++i)
                policy.accumulate_logprob_grad(th, c, spec[c][i].tokens, dlogp[c][i], grad);
        return grad;
    };

    GradcheckReport report;
    report.grpo = finite_diff_check([&](auto th) { return grpo_loss(with_logprobs(th)); },
                                    [&](auto th) { return chain(th, grpo_loss_grad(with_logprobs(th))); }, theta, h);
    report.clipped_grpo = finite_diff_check(
        [&](auto th) { return clipped_grpo_loss(with_logprobs(th), clip); },
        [&](auto th) { return chain(th, clipped_grpo_loss_grad(with_logprobs(th), clip)); }, theta, h);

    // NLL over four target sequences.
    std::vector<detail::toy_rollout> targets;
    for (std::size_t i = 0; i < 4; ++i) targets.push_back({i % contexts, detail::random_tokens(rng, vocab, 2, 4)});
    auto nll_of = [&](std::span<const double> th) {
        std::vector<std::vector<double>> lp;
        for (const auto& t : targets) {
            auto& row = lp.emplace_back();
            for (auto tok : t.tokens) row.push_back(policy.token_logprob(th, t.context, tok));
        }
        return nll_loss(lp);
    };
    report.nll = finite_diff_check(nll_of,
                                   [&](std::span<const double> th) {
                                       std::vector<double> grad(th.size(), 0.0);
                                       for (const auto& t : targets)
                                           policy.accumulate_logprob_grad(th, t.context, t.tokens, -1.0, grad);
                                       return grad;
                                   },
                                   theta, h);

    // Mean BCE of a logistic head on ten random points.
    const std::size_t dim = 3;
    std::vector<std::vector<double>> features(10, std::vector<double>(dim));
    std::vector<int> labels(10);
    for (std::size_t i = 0; i < features.size(); ++i) {
        for (auto& x : features[i]) x = uniform_real(rng, -1.0, 1.0);
        labels[i] = static_cast<int>(uniform_index(rng, 2));
    }
    std::vector<double> head_params(dim + 1);
    for (auto& x : head_params) x = uniform_real(rng, -1.0, 1.0);
    auto as_head = [&](std::span<const double> p) {
        LogisticHead head(dim);
        std::copy(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(dim), head.w.begin());
        head.b = p[dim];
        return head;
    };
    report.bce = finite_diff_check([&](auto p) { return mean_bce(as_head(p), features, labels); },
                                   [&](auto p) { return mean_bce_grad(as_head(p), features, labels); }, head_params, h);
    return report;
}

}  // namespace epm::optim
