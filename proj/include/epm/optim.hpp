#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "epm/rng.hpp"
#include "epm/types.hpp"

namespace epm::optim {

/// K rollouts for one input. `logprobs` are sequence log-probabilities (sum
/// over output tokens) under the current policy.
struct RolloutGroup {
    std::string input_id;
    std::vector<std::string> rollouts;
    std::vector<double> rewards;
    std::vector<double> logprobs;
    std::optional<std::vector<double>> old_logprobs;
    std::optional<std::vector<double>> advantages;

    std::size_t size() const { return rewards.size(); }
};

inline constexpr double advantage_epsilon = 1e-8;

/// Group-relative advantages: reward minus the group mean, divided by the
/// population standard deviation plus epsilon when `normalize_std`. A group
/// whose rewards are all equal gets all-zero advantages.
inline std::vector<double> group_advantages(std::span<const double> rewards, bool normalize_std = true)
{
    const std::size_t k = rewards.size();
    std::vector<double> adv(k, 0.0);
    if (k == 0) throw validation_error("a group needs at least one reward");
    if (std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards.front(); })) return adv;

    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= static_cast<double>(k);
    double var = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        adv[i] = rewards[i] - mean;
        var += adv[i] * adv[i];
    }
    if (normalize_std) {
        const double denom = std::sqrt(var / static_cast<double>(k)) + advantage_epsilon;
        for (auto& a : adv) a /= denom;
    }
    return adv;
}

namespace detail {

inline void check_group(const RolloutGroup& g)
{
    if (!g.advantages) throw validation_error("group " + g.input_id + " has no advantages");
    if (g.advantages->size() != g.logprobs.size() || g.logprobs.empty())
        throw shape_error("group " + g.input_id + ": advantages and logprobs must have the same nonzero length");
}

inline void check_old(const RolloutGroup& g)
{
    check_group(g);
    if (!g.old_logprobs) throw validation_error("group " + g.input_id + " has no old_logprobs");
    if (g.old_logprobs->size() != g.logprobs.size())
        throw shape_error("group " + g.input_id + ": old_logprobs length mismatch");
}

}  // namespace detail

/// L = -mean_groups (1/K) sum_k A_k * logp_k, advantages held constant.
inline double grpo_loss(std::span<const RolloutGroup> groups)
{
    if (groups.empty()) return 0.0;
    double total = 0.0;
    for (const auto& g : groups) {
        detail::check_group(g);
        double s = 0.0;
        for (std::size_t k = 0; k < g.logprobs.size(); ++k) s += (*g.advantages)[k] * g.logprobs[k];
        total += s / static_cast<double>(g.logprobs.size());
    }
    return -total / static_cast<double>(groups.size());
}

/// dL/dlogp for every rollout, shaped like the groups.
inline std::vector<std::vector<double>> grpo_loss_grad(std::span<const RolloutGroup> groups)
{
    std::vector<std::vector<double>> grad;
    const double scale = groups.empty() ? 0.0 : -1.0 / static_cast<double>(groups.size());
    for (const auto& g : groups) {
        detail::check_group(g);
        const double kinv = 1.0 / static_cast<double>(g.logprobs.size());
        auto& row = grad.emplace_back(g.logprobs.size());
        for (std::size_t k = 0; k < row.size(); ++k) row[k] = scale * kinv * (*g.advantages)[k];
    }
    return grad;
}

/// Ratio-clipped surrogate with rho_k = exp(logp_k - old_logp_k):
/// L = -mean_groups (1/K) sum_k min(rho_k A_k, clamp(rho_k, 1-clip, 1+clip) A_k).
inline double clipped_grpo_loss(std::span<const RolloutGroup> groups, double clip = 0.1)
{
    if (!(clip >= 0.0)) throw validation_error("clip must be nonnegative");
    if (groups.empty()) return 0.0;
    double total = 0.0;
    for (const auto& g : groups) {
        detail::check_old(g);
        double s = 0.0;
        for (std::size_t k = 0; k < g.logprobs.size(); ++k) {
            const double rho = std::exp(g.logprobs[k] - (*g.old_logprobs)[k]);
            const double a = (*g.advantages)[k];
            s += std::min(rho * a, std::clamp(rho, 1.0 - clip, 1.0 + clip) * a);
        }
        total += s / static_cast<double>(g.logprobs.size());
    }
    return -total / static_cast<double>(groups.size());
}

inline std::vector<std::vector<double>> clipped_grpo_loss_grad(std::span<const RolloutGroup> groups,
                                                               double clip = 0.1)
{
    std::vector<std::vector<double>> grad;
    const double scale = groups.empty() ? 0.0 : -1.0 / static_cast<double>(groups.size());
    for (const auto& g : groups) {
        detail::check_old(g);
        const double kinv = 1.0 / static_cast<double>(g.logprobs.size());
        auto& row = grad.emplace_back(g.logprobs.size());
        for (std::size_t k = 0; k < row.size(); ++k) {
            const double rho = std::exp(g.logprobs[k] - (*g.old_logprobs)[k]);
            const double a = (*g.advantages)[k];
            const double clipped = std::clamp(rho, 1.0 - clip, 1.0 + clip);
            double d = 0.0;
            if (rho * a <= clipped * a) {
                d = rho * a;
            } else if (rho >= 1.0 - clip && rho <= 1.0 + clip) {
                d = rho * a;
            }
            row[k] = scale * kinv * d;
        }
    }
    return grad;
}

/// Negative log-likelihood summed over every example and position.
inline double nll_loss(const std::vector<std::vector<double>>& token_logprobs)
{
    std::size_t tokens = 0;
    double total = 0.0;
    for (const auto& seq : token_logprobs) {
        tokens += seq.size();
        for (double lp : seq) total += lp;
    }
    if (tokens == 0) throw validation_error("nll_loss needs at least one token");
    return -total;
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

using ScalarFn = std::function<double(std::span<const double>)>;
using GradientFn = std::function<std::vector<double>(std::span<const double>)>;

/// Max over coordinates of |central difference - analytic| / max(|analytic|, 1e-8).
inline double finite_diff_check(const ScalarFn& loss, const GradientFn& gradient, std::vector<double> params,
                                double h = 1e-5)
{
    const auto analytic = gradient(params);
    if (analytic.size() != params.size()) throw shape_error("gradient size does not match parameter count");
    double worst = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double saved = params[i];
        params[i] = saved + h;
        const double up = loss(params);
        params[i] = saved - h;
        const double down = loss(params);
        params[i] = saved;
        if (!std::isfinite(up) || !std::isfinite(down)) throw validation_error("loss is not finite near parameters");
        const double numeric = (up - down) / (2.0 * h);
        const double err = std::abs(numeric - analytic[i]) / std::max(std::abs(analytic[i]), 1e-8);
        worst = std::max(worst, err);
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Toy policy: per-context softmax over a small vocabulary. Stands in for the
// language model when checking loss gradients end to end.
// ---------------------------------------------------------------------------

class ToyPolicy {
  public:
    ToyPolicy(std::size_t contexts, std::size_t vocab) : contexts_(contexts), vocab_(vocab) {}

    std::size_t contexts() const { return contexts_; }
    std::size_t vocab() const { return vocab_; }
    std::size_t parameter_count() const { return contexts_ * vocab_; }

    std::vector<double> probabilities(std::span<const double> theta, std::size_t context) const
    {
        std::vector<double> p(vocab_);
        const auto row = theta.subspan(context * vocab_, vocab_);
        const double mx = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (std::size_t v = 0; v < vocab_; ++v) z += p[v] = std::exp(row[v] - mx);
        for (auto& x : p) x /= z;
        return p;
    }

    double token_logprob(std::span<const double> theta, std::size_t context, std::size_t token) const
    {
        const auto row = theta.subspan(context * vocab_, vocab_);
        const double mx = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (double x : row) z += std::exp(x - mx);
        return row[token] - mx - std::log(z);
    }

    double sequence_logprob(std::span<const double> theta, std::size_t context,
                            std::span<const std::size_t> tokens) const
    {
        double s = 0.0;
        for (auto t : tokens) s += token_logprob(theta, context, t);
        return s;
    }

    /// Adds `weight * d logp(sequence)/d theta` into `grad`.
    void accumulate_logprob_grad(std::span<const double> theta, std::size_t context,
                                 std::span<const std::size_t> tokens, double weight, std::span<double> grad) const
    {
        const auto p = probabilities(theta, context);
        for (auto t : tokens) {
            for (std::size_t v = 0; v < vocab_; ++v)
                grad[context * vocab_ + v] += weight * ((v == t ? 1.0 : 0.0) - p[v]);
        }
    }

  private:
    std::size_t contexts_;
    std::size_t vocab_;
};

// ---------------------------------------------------------------------------
// Hyperparameter presets (recorded for configuration fidelity).
// ---------------------------------------------------------------------------

struct PeftPreset {
    double learning_rate = 1e-5;
    int batch_size = 4;
    int lora_rank = 32;
    double lora_alpha = 64.0;
    int epochs = 5;
};

struct RlPreset {
    double learning_rate = 5e-5;
    int batch_size = 4;
    int rollouts_per_input = 4;
    double clip = 0.1;
    double dropout = 0.05;
    int epochs = 1;
};

inline json to_json(const PeftPreset& p)
{
    return {{"learning_rate", p.learning_rate}, {"batch_size", p.batch_size}, {"lora_rank", p.lora_rank},
            {"lora_alpha", p.lora_alpha},       {"epochs", p.epochs}};
}

inline json to_json(const RlPreset& p)
{
    return {{"learning_rate", p.learning_rate}, {"batch_size", p.batch_size},
            {"rollouts_per_input", p.rollouts_per_input}, {"clip", p.clip},
            {"dropout", p.dropout}, {"epochs", p.epochs}};
}

}  // namespace epm::optim
