#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "epm/types.hpp"

namespace epm::optim {

inline double sigmoid(double z)
{
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

/// Per-example binary cross-entropy, with 0 * log 0 taken as 0.
inline double bce(double p_hat, int y)
{
    if (y == 1) return p_hat <= 0.0 ? INFINITY : -std::log(p_hat);
    return p_hat >= 1.0 ? INFINITY : -std::log1p(-p_hat);
}

/// Probability head p = sigmoid(w.h + b) over a fixed feature vector h.
struct LogisticHead {
    std::vector<double> w;
    double b = 0.0;

    explicit LogisticHead(std::size_t dim = 0) : w(dim, 0.0) {}

    double logit(std::span<const double> h) const
    {
        if (h.size() != w.size()) throw shape_error("feature dimension mismatch");
        double z = b;
        for (std::size_t i = 0; i < w.size(); ++i) z += w[i] * h[i];
        return z;
    }
    double predict_proba(std::span<const double> h) const { return sigmoid(logit(h)); }
    int predict(std::span<const double> h) const { return predict_proba(h) >= 0.5 ? 1 : 0; }
};

namespace detail {

inline void check_training_set(const std::vector<std::vector<double>>& features, const std::vector<int>& labels)
{
    if (features.empty()) throw validation_error("training set is empty");
    if (features.size() != labels.size()) throw shape_error("features and labels differ in length");
    for (const auto& h : features)
        if (h.size() != features.front().size()) throw shape_error("inconsistent feature dimensions");
    for (int y : labels)
        if (y != 0 && y != 1) throw validation_error("labels must be 0 or 1");
}

// log(1 + e^z) without overflow.
inline double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace detail

/// Mean BCE over the set, evaluated from logits for numerical stability.
inline double mean_bce(const LogisticHead& head, const std::vector<std::vector<double>>& features,
                       const std::vector<int>& labels)
{
    detail::check_training_set(features, labels);
    double total = 0.0;
    for (std::size_t i = 0; i < features.size(); ++i) {
        const double z = head.logit(features[i]);
        total += detail::softplus(z) - labels[i] * z;
    }
    return total / static_cast<double>(features.size());
}

/// Gradient of mean_bce, laid out as [w..., b].
inline std::vector<double> mean_bce_grad(const LogisticHead& head, const std::vector<std::vector<double>>& features,
                                         const std::vector<int>& labels)
{
    detail::check_training_set(features, labels);
    std::vector<double> g(head.w.size() + 1, 0.0);
    const double n = static_cast<double>(features.size());
    for (std::size_t i = 0; i < features.size(); ++i) {
        const double r = (head.predict_proba(features[i]) - labels[i]) / n;
        for (std::size_t j = 0; j < head.w.size(); ++j) g[j] += r * features[i][j];
        g.back() += r;
    }
    return g;
}

struct LogisticFit {
    LogisticHead head;
    std::vector<double> loss_history;  // loss before each epoch, then the final loss
};

/// Full-batch gradient descent from a zero-initialized head.
inline LogisticFit fit_logistic_head(const std::vector<std::vector<double>>& features, const std::vector<int>& labels,
                                     int epochs, double learning_rate)
{
    detail::check_training_set(features, labels);
    if (epochs < 0) throw validation_error("epochs must be nonnegative");
    LogisticFit fit{LogisticHead(features.front().size()), {}};
    fit.loss_history.reserve(static_cast<std::size_t>(epochs) + 1);
    for (int e = 0; e < epochs; ++e) {
        fit.loss_history.push_back(mean_bce(fit.head, features, labels));
        const auto g = mean_bce_grad(fit.head, features, labels);
        for (std::size_t j = 0; j < fit.head.w.size(); ++j) fit.head.w[j] -= learning_rate * g[j];
        fit.head.b -= learning_rate * g.back();
    }
    fit.loss_history.push_back(mean_bce(fit.head, features, labels));
    return fit;
}

inline LogisticHead train_logistic_head(const std::vector<std::vector<double>>& features,
                                        const std::vector<int>& labels, int epochs, double learning_rate)
{
    return fit_logistic_head(features, labels, epochs, learning_rate).head;
}

inline constexpr std::size_t default_feature_dim = std::size_t{1} << 15;

/// Signed hashed bag-of-words over the packed pair
/// "[CLS] base [SEP] compared [SEP]", plus tokens shared by both titles and
/// tokens found on only one side. L2-normalized.
inline std::vector<double> hashed_pair_features(const ProductPair& pair, std::size_t dim = default_feature_dim)
{
    if (dim == 0) throw validation_error("feature dimension must be positive");
    std::vector<double> h(dim, 0.0);
    auto add = [&](std::string_view prefix, const std::string& token) {
        const auto x = text::fnv1a(token, text::fnv1a(prefix));
        h[static_cast<std::size_t>(x % dim)] += (x >> 63) != 0 ? -1.0 : 1.0;
    };
    const auto a = text::tokenize(pair.base_title);
    const auto b = text::tokenize(pair.compared_title);
    for (const auto& t : a) add("a:", t);
    for (const auto& t : b) add("b:", t);
    for (const auto& t : a) add(std::find(b.begin(), b.end(), t) != b.end() ? "both:" : "only:", t);
    for (const auto& t : b)
        if (std::find(a.begin(), a.end(), t) == a.end()) add("only:", t);
    double norm = 0.0;
    for (double v : h) norm += v * v;
    if (norm > 0.0) {
        norm = std::sqrt(norm);
        for (auto& v : h) v /= norm;
    }
    return h;
}

}  // namespace epm::optim
