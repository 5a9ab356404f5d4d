#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdlib>
#include <functional>
#include <regex>
#include <set>
#include <string>
#include <unordered_set>

#include "epm/backend.hpp"
#include "epm/types.hpp"

namespace epm::judges {

enum class JudgeKind { core_identity, model_identifier, variant_conflict };

inline constexpr std::array<JudgeKind, 3> all_kinds{JudgeKind::core_identity, JudgeKind::model_identifier,
                                                    JudgeKind::variant_conflict};

inline const char* name(JudgeKind k)
{
    switch (k) {
    case JudgeKind::core_identity: return "core_identity";
    case JudgeKind::model_identifier: return "model_identifier";
    case JudgeKind::variant_conflict: return "variant_conflict";
    }
    return "?";
}

struct JudgeScore {
    JudgeKind kind = JudgeKind::core_identity;
    double score = 0.0;
    std::string raw_response;
    bool clamped = false;
};

/// (kind, pair, reasoning) -> score. Must be callable concurrently.
using JudgeProvider = std::function<JudgeScore(JudgeKind, const ProductPair&, const std::string&)>;

// ---------------------------------------------------------------------------
// Prompts
// ---------------------------------------------------------------------------

inline std::string rubric(JudgeKind kind)
{
    switch (kind) {
    case JudgeKind::core_identity:
        return "Sub-skill: CORE IDENTITY.\n"
               "Score whether the reasoning correctly identifies and compares the core product/category identity "
               "of the two titles: the central product type and the main anchor tokens that the titles share or "
               "do not share. Ignore brand names, model codes and variant attributes.\n"
               "Rubric:\n"
               "- 0.0: no core comparison, or the core identity is wrong.\n"
               "- 0.5: generic or weak core comparison that is not grounded in title tokens.\n"
               "- 1.0: token-grounded and correct core identification.\n";
    case JudgeKind::model_identifier:
        return "Sub-skill: MODEL IDENTIFIER.\n"
               "Score whether the reasoning correctly handles brand and model identifiers: brand prefixes, model "
               "lines and explicit model codes. A good answer distinguishes ignorable prefixes from true identifiers "
               "(for example a seller tag versus a model number) and grounds every identifier comparison in tokens "
               "that appear in the base and compared titles. Do not judge variant conflicts such as size or count "
               "differences.\n"
               "Rubric:\n"
               "- 0.0: identifiers ignored or compared incorrectly.\n"
               "- 0.5: identifiers mentioned generically without grounding.\n"
               "- 1.0: identifiers compared correctly using title tokens.\n";
    case JudgeKind::variant_conflict:
        return "Sub-skill: VARIANT CONFLICT.\n"
               "Score whether the reasoning checks variant attributes and detects conflicts or consistency between "
               "the titles: size, color, capacity, count, specification, option, bundle composition (set versus "
               "single item) and version. Reward reasoning that cites the relevant tokens completely and correctly "
               "decides whether a variant-level difference implies a mismatch.\n"
               "Rubric:\n"
               "- 0.0: variant attributes not checked, or a conflict is missed or invented.\n"
               "- 0.5: partial or generic variant check.\n"
               "- 1.0: every relevant variant token cited and the conflict decision is correct.\n";
    }
    return {};
}

inline std::string build_judge_prompt(JudgeKind kind, const ProductPair& pair, const std::string& reasoning)
{
    std::string p;
    p += "You are a strict evaluator of product-matching reasoning. Evaluate ONLY the sub-skill below.\n\n";
    p += rubric(kind);
    p += "\nRules:\n"
         "- Penalize hallucinated tokens: any cited token that is not present in either input title.\n"
         "- If the reasoning is missing or empty, return 0.0.\n"
         "- Intermediate values between the rubric anchors are allowed.\n\n";
    p += "Base product: " + pair.base_title + "\n";
    p += "Compared product: " + pair.compared_title + "\n";
    p += "Reasoning:\n" + reasoning + "\n\n";
    p += "Return a single float in [0, 1] and nothing else. No explanation.\n";
    return p;
}

// ---------------------------------------------------------------------------
// Score parsing
// ---------------------------------------------------------------------------

struct ParsedScore {
    double score = 0.0;
    bool clamped = false;
};

/// First decimal number in the text, clamped to [0, 1]. A leading sign
/// belongs to the number only when it is not glued to a preceding word.
inline ParsedScore parse_judge_score(std::string_view raw)
{
    auto digit = [](char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; };
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const bool starts = digit(raw[i]) || (raw[i] == '.' && i + 1 < raw.size() && digit(raw[i + 1]));
        if (!starts) continue;
        std::size_t begin = i;
        if (i > 0 && (raw[i - 1] == '-' || raw[i - 1] == '+')) {
            const bool glued = i > 1 && std::isalnum(static_cast<unsigned char>(raw[i - 2]));
            if (!glued) begin = i - 1;
        }
        std::size_t end = i;
        while (end < raw.size() && digit(raw[end])) ++end;
        if (end < raw.size() && raw[end] == '.') {
            ++end;
            while (end < raw.size() && digit(raw[end])) ++end;
        }
        const std::string token(raw.substr(begin, end - begin));
        const double v = std::strtod(token.c_str(), nullptr);
        ParsedScore out{std::clamp(v, 0.0, 1.0), false};
        out.clamped = out.score != v;
        return out;
    }
    throw unparseable_score_error("no numeric score in judge response: \"" + std::string(raw) + "\"");
}

/// Judge call against a live backend at temperature 0. Empty reasoning
/// scores 0.0 without contacting the backend. An unparseable reply is
/// retried once before failing.
inline JudgeScore score_with_judge(JudgeKind kind, const ProductPair& pair, const std::string& reasoning,
                                   backend::ChatClient& client, const backend::ChatBackend& config = {})
{
    if (text::trim(reasoning).empty()) return {kind, 0.0, {}, false};
    auto decoding = config.decoding();
    decoding.temperature = 0.0;
    const auto prompt = build_judge_prompt(kind, pair, reasoning);
    for (int attempt = 0;; ++attempt) {
        auto raw = client.complete(prompt, decoding);
        try {
            auto parsed = parse_judge_score(raw);
            return {kind, parsed.score, std::move(raw), parsed.clamped};
        } catch (const unparseable_score_error&) {
            if (attempt >= 1) throw;
        }
    }
}

inline JudgeProvider backend_judge_provider(backend::ChatClient& client, backend::ChatBackend config = {})
{
    return [&client, config](JudgeKind kind, const ProductPair& pair, const std::string& reasoning) {
        return score_with_judge(kind, pair, reasoning, client, config);
    };
}

// ---------------------------------------------------------------------------
// Offline mock judges
// ---------------------------------------------------------------------------

namespace detail {

inline const std::unordered_set<std::string>& variant_words()
{
    static const std::unordered_set<std::string> w{
        "ml", "l", "g", "kg", "mg", "oz", "lb", "iu", "mah", "gb", "tb", "cm", "mm", "inch", "count", "ct",
        "pack", "pcs", "pieces", "tablets", "capsules", "cans", "bottles", "set", "bundle", "gift", "single",
        "size", "gen", "edition", "version", "black", "white", "blue", "red", "pink", "gray", "grey", "navy",
        "green", "refill", "pouch", "sample", "bag"};
    return w;
}

inline bool has_digit(const std::string& t)
{
    return std::any_of(t.begin(), t.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}
inline bool has_alpha(const std::string& t)
{
    return std::any_of(t.begin(), t.end(), [](char c) { return std::isalpha(static_cast<unsigned char>(c)); });
}

}  // namespace detail

/// Tokens the reasoning explicitly cites: the contents of "double-quoted",
/// `backticked` or 'single-quoted' spans, tokenized and deduplicated.
inline std::vector<std::string> cited_tokens(const std::string& reasoning)
{
    static const std::regex spans(R"re("([^"]+)"|`([^`]+)`|(?:^|[^A-Za-z0-9])'([^']+)'(?=$|[^A-Za-z0-9]))re");
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (auto it = std::sregex_iterator(reasoning.begin(), reasoning.end(), spans); it != std::sregex_iterator(); ++it) {
        for (std::size_t g = 1; g <= 3; ++g) {
            if (!(*it)[g].matched) continue;
            for (auto& t : text::tokenize((*it)[g].str()))
                if (seen.insert(t).second) out.push_back(std::move(t));
        }
    }
    return out;
}

/// Deterministic stand-in for a judge model. Non-empty reasoning starts at
/// 0.5 and rises to 1.0 once it cites two title tokens relevant to the
/// judge's sub-skill; every cited token found in neither title costs 0.25.
inline JudgeScore mock_judge_score(JudgeKind kind, const ProductPair& pair, const std::string& reasoning)
{
    if (text::trim(reasoning).empty()) return {kind, 0.0, "mock", false};

    const auto base_tokens = text::tokenize(pair.base_title);
    const auto cmp_tokens = text::tokenize(pair.compared_title);
    const std::unordered_set<std::string> base(base_tokens.begin(), base_tokens.end());
    const std::unordered_set<std::string> cmp(cmp_tokens.begin(), cmp_tokens.end());
    std::unordered_set<std::string> brand;
    if (pair.brand)
        for (auto& t : text::tokenize(*pair.brand)) brand.insert(t);
    if (!base_tokens.empty()) brand.insert(base_tokens.front());
    if (!cmp_tokens.empty()) brand.insert(cmp_tokens.front());

    int relevant = 0;
    int hallucinated = 0;
    for (const auto& t : cited_tokens(reasoning)) {
        const bool in_base = base.count(t) != 0;
        const bool in_cmp = cmp.count(t) != 0;
        if (!in_base && !in_cmp) {
            ++hallucinated;
            continue;
        }
        bool fits = false;
        switch (kind) {
        case JudgeKind::core_identity:
            fits = in_base && in_cmp && detail::has_alpha(t) && !detail::has_digit(t) &&
                   detail::variant_words().count(t) == 0;
            break;
        case JudgeKind::model_identifier:
            fits = (detail::has_alpha(t) && detail::has_digit(t)) || brand.count(t) != 0;
            break;
        case JudgeKind::variant_conflict:
            fits = detail::has_digit(t) || detail::variant_words().count(t) != 0;
            break;
        }
        relevant += fits ? 1 : 0;
    }
    double score = relevant >= 2 ? 1.0 : 0.5;
    score = std::max(0.0, score - 0.25 * hallucinated);
    return {kind, score, "mock", false};
}

inline JudgeProvider mock_judge_provider()
{
    return [](JudgeKind kind, const ProductPair& pair, const std::string& reasoning) {
        return mock_judge_score(kind, pair, reasoning);
    };
}

}  // namespace epm::judges
