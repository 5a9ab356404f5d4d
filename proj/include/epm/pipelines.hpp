#pragma once

#include <atomic>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "epm/backend.hpp"
#include "epm/logistic.hpp"
#include "epm/optim.hpp"
#include "epm/parsing.hpp"
#include "epm/retrieval.hpp"
#include "epm/reward.hpp"

namespace epm::pipelines {

enum class Strategy { zero_shot, cot, entity_attr, reason_label, rag, marag };

inline const char* name(Strategy s)
{
    switch (s) {
    case Strategy::zero_shot: return "zero_shot";
    case Strategy::cot: return "cot";
    case Strategy::entity_attr: return "entity_attr";
    case Strategy::reason_label: return "reason_label";
    case Strategy::rag: return "rag";
    case Strategy::marag: return "marag";
    }
    return "?";
}

inline Strategy strategy_from_name(std::string_view s)
{
    for (auto st : {Strategy::zero_shot, Strategy::cot, Strategy::entity_attr, Strategy::reason_label, Strategy::rag,
                    Strategy::marag})
        if (s == name(st)) return st;
    throw validation_error("unknown strategy " + std::string(s));
}

/// A pair the pipeline could not label (backend down, or no parseable
/// label after one retry).
struct prediction_failure : error {
    using error::error;
};

struct Prediction {
    std::string pair_id;
    int predicted = 0;
    Strategy strategy = Strategy::zero_shot;
    std::string raw_output;
    std::optional<std::vector<std::string>> evidence;
    std::map<std::string, int> intermediate;
};

// ---------------------------------------------------------------------------
// Prompts
// ---------------------------------------------------------------------------

/// Shared instruction block; every baseline prompt starts with exactly these bytes.
inline const std::string& baseline_instruction()
{
    static const std::string s =
        "You are a product matching classifier. Decide whether Product A and Product B refer to the same sellable "
        "product. Output only 1 if matched, otherwise output only 0.\n"
        "1. Different product family, series, or model name means 0.\n"
        "2. Different variant attributes that change the sellable SKU (such as color, size, capacity, count, "
        "edition, generation, set composition, pack size) means 0.\n"
        "3. Ignore only minor formatting differences, spacing, punctuation, obvious spelling noise, or "
        "packaging-only phrases.\n"
        "4. If uncertain, output 0.\n"
        "Output only one character: 0 or 1.\n";
    return s;
}

inline constexpr std::string_view final_line_marker = "Then put the final answer alone on the last line: 0 or 1.";

inline std::string strategy_instruction(Strategy s)
{
    switch (s) {
    case Strategy::cot:
        return "\nBefore answering, think step by step and write a short rationale. " + std::string(final_line_marker) +
               "\n";
    case Strategy::entity_attr:
        return "\nBefore answering, extract the salient attributes of each product (brand, product type, "
               "specification, quantity, and option-related cues) and compare them attribute by attribute. " +
               std::string(final_line_marker) + "\n";
    default: return {};
    }
}

inline std::string products_block(const ProductPair& pair)
{
    return "\nProduct A: " + pair.base_title + "\nProduct B: " + pair.compared_title + "\n";
}

inline std::string baseline_prompt(const ProductPair& pair, Strategy s = Strategy::zero_shot)
{
    return baseline_instruction() + products_block(pair) + strategy_instruction(s);
}

inline std::string evidence_block(const std::vector<std::string>& evidence)
{
    std::string out = "\nEvidence:\n";
    for (std::size_t i = 0; i < evidence.size(); ++i) out += "[" + std::to_string(i + 1) + "] " + evidence[i] + "\n";
    return out;
}

inline std::string rag_prompt(const ProductPair& pair, const std::vector<std::string>& evidence)
{
    return baseline_prompt(pair, Strategy::zero_shot) + evidence_block(evidence);
}

inline constexpr std::string_view coordinator_marker = "The two agents disagree.";

inline std::string coordinator_prompt(const ProductPair& pair, int direct, int indirect)
{
    return baseline_instruction() + products_block(pair) + "\n" + std::string(coordinator_marker) +
           "\nDirect agent (titles only) label: " + std::to_string(direct) +
           "\nIndirect agent (with BM25 evidence) label: " + std::to_string(indirect) +
           "\nDecide the final label for the pair. Output only one character: 0 or 1.\n";
}

namespace detail {

inline std::string peft_constraints()
{
    return "Important constraints:\n"
           "1. Do NOT use any external label column or hidden metadata. Decide only from the two product names.\n"
           "2. Compare step by step before concluding.\n"
           "3. Treat differences in model code, capacity, size, color, quantity, option, bundle composition "
           "(set/single item), edition/origin/version as potentially critical.\n"
           "4. Ignore minor wording differences such as spacing, punctuation, seller prefix/brand prefix, and "
           "marketing words when core identity is still the same.\n"
           "5. If core product identity or key variant conflicts, output 0.\n"
           "6. If core product identity and key variant are consistent (or one side is only less specific without "
           "contradiction), output 1.\n";
}

inline std::string peft_steps()
{
    return "1. First, <identify the core product/category and main tokens in both names>.\n"
           "2. Second, <compare brand/model line/model number and key identifiers>.\n"
           "3. Third, <compare variant attributes: size/color/count/spec/option/bundle, and check for conflicts>.\n"
           "4. So, the final answer is: <0 or 1>.\n";
}

}  // namespace detail

/// Structured reasoning-then-label prompt used for fine-tuning and for the
/// reason_label strategy.
inline std::string peft_prompt(const ProductPair& pair)
{
    return "You are a product-title matching analyst.\n\n"
           "Task: Given two product names, decide whether they refer to the same sellable product variant.\n"
           "- Product A: " + pair.base_title + "\n"
           "- Product B: " + pair.compared_title + "\n\n" +
           detail::peft_constraints() + "\nOutput format (must follow exactly):\n" + detail::peft_steps() +
           "\nLabel meaning:\n"
           "- 1 = matched (same sellable product variant)\n"
           "- 0 = not matched (different product or conflicting variant)\n\n"
           "Expected output: <reason>evidence</reason><label>0/1</label>\n";
}

inline constexpr std::string_view trace_marker = "The human-verified label for this pair is";

/// Reverse-generation prompt: reveals the gold label and asks for a
/// justification grounded only in the two titles.
inline std::string trace_prompt(const ProductPair& pair, int gold)
{
    return "You are a product-title matching analyst writing a reasoning trace for training data.\n\n"
           "- Product A: " + pair.base_title + "\n"
           "- Product B: " + pair.compared_title + "\n\n" +
           std::string(trace_marker) + " " + std::to_string(gold) +
           (gold == 1 ? " (matched: same sellable product variant).\n"
                      : " (not matched: different product or conflicting variant).\n") +
           "Write the reasoning that reaches this label in a blinded setting: argue only from information present "
           "in the two product names, as if the label had not been given.\n\n" +
           detail::peft_constraints() + "\nOutput format (must follow exactly):\n" + detail::peft_steps() +
           "\nReturn only the reasoning text.\n";
}

// ---------------------------------------------------------------------------
// Inference strategies
// ---------------------------------------------------------------------------

namespace detail {

inline std::string last_nonempty_line(std::string_view text)
{
    auto t = text::trim(text);
    const auto nl = t.find_last_of('\n');
    return std::string(nl == std::string_view::npos ? t : t.substr(nl + 1));
}

/// Calls the backend, parses, and retries once on an unparseable reply.
template <typename Parse>
std::pair<int, std::string> ask_label(backend::ChatClient& client, const std::string& prompt,
                                      const backend::Decoding& decoding, Parse parse)
{
    std::string last;
    for (int attempt = 0; attempt < 2; ++attempt) {
        try {
            last = client.complete(prompt, decoding);
        } catch (const error& e) {
            throw prediction_failure(std::string("backend failure: ") + e.what());
        }
        if (auto label = parse(last)) return {*label, last};
    }
    throw prediction_failure("no parseable label after retry; last reply: \"" + std::string(text::trim(last)) + "\"");
}

inline std::optional<int> bare(const std::string& reply)
{
    try {
        return parsing::parse_bare_label(reply);
    } catch (const invalid_label_error&) {
        return std::nullopt;
    }
}

inline std::optional<int> final_line(const std::string& reply) { return bare(last_nonempty_line(reply)); }

inline std::optional<int> structured(const std::string& reply) { return parsing::parse_structured_output(reply).label; }

}  // namespace detail

inline Prediction run_single_inference(const ProductPair& pair, Strategy strategy, backend::ChatClient& client,
                                       const backend::ChatBackend& config = {})
{
    Prediction p{pair.pair_id, 0, strategy, {}, std::nullopt, {}};
    std::pair<int, std::string> r;
    switch (strategy) {
    case Strategy::zero_shot: r = detail::ask_label(client, baseline_prompt(pair), config.decoding(), detail::bare); break;
    case Strategy::cot:
    case Strategy::entity_attr:
        r = detail::ask_label(client, baseline_prompt(pair, strategy), config.decoding(), detail::final_line);
        break;
    case Strategy::reason_label:
        r = detail::ask_label(client, peft_prompt(pair), config.decoding(), detail::structured);
        break;
    default: throw validation_error(std::string("not a single-inference strategy: ") + name(strategy));
    }
    p.predicted = r.first;
    p.raw_output = std::move(r.second);
    return p;
}

inline Prediction run_rag(const ProductPair& pair, const retrieval::Bm25Index& index, backend::ChatClient& client,
                          std::size_t k = 5, const backend::ChatBackend& config = {})
{
    std::vector<std::string> evidence;
    for (const auto& hit : retrieval::retrieve_top_k(index, retrieval::build_pair_query(pair), k))
        evidence.push_back(index.document(hit.doc_id).text);
    auto [label, raw] = detail::ask_label(client, rag_prompt(pair, evidence), config.decoding(), detail::bare);
    return {pair.pair_id, label, Strategy::rag, std::move(raw), std::move(evidence), {}};
}

/// Direct agent (titles only) and indirect agent (RAG). A coordinator call
/// is made only when the two disagree.
inline Prediction run_multi_agent_rag(const ProductPair& pair, const retrieval::Bm25Index& index,
                                      backend::ChatClient& client, std::size_t k = 5,
                                      const backend::ChatBackend& config = {})
{
    const auto direct = run_single_inference(pair, Strategy::zero_shot, client, config);
    const auto indirect = run_rag(pair, index, client, k, config);
    Prediction p{pair.pair_id, direct.predicted, Strategy::marag, direct.raw_output, indirect.evidence,
                 {{"direct", direct.predicted}, {"indirect", indirect.predicted}}};
    if (direct.predicted == indirect.predicted) return p;
    auto [label, raw] = detail::ask_label(client, coordinator_prompt(pair, direct.predicted, indirect.predicted),
                                          config.decoding(), detail::bare);
    p.predicted = label;
    p.raw_output = std::move(raw);
    p.intermediate["coordinator"] = label;
    return p;
}

/// Returns the reasoning body (the <reason> contents when the reply is
/// tagged, otherwise the trimmed reply).
inline std::string synthesize_reasoning_trace(const ProductPair& pair, int gold, backend::ChatClient& client,
                                              const backend::ChatBackend& config = {})
{
    if (gold != 0 && gold != 1) throw validation_error("gold label must be 0 or 1");
    const auto reply = client.complete(trace_prompt(pair, gold), config.decoding());
    const auto parsed = parsing::parse_structured_output(reply);
    if (parsed.reasoning) return std::string(text::trim(*parsed.reasoning));
    return std::string(text::trim(reply));
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct EvalReport {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    double accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;
    bool precision_undefined = false;
    bool recall_undefined = false;
    bool f1_undefined = false;
    bool accuracy_undefined = false;

    std::size_t total() const { return tp + fp + fn + tn; }
};

inline EvalReport report_from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn)
{
    EvalReport r{tp, fp, fn, tn};
    auto ratio = [](std::size_t num, std::size_t den, bool& undefined) {
        undefined = den == 0;
        return undefined ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
    };
    r.precision = ratio(tp, tp + fp, r.precision_undefined);
    r.recall = ratio(tp, tp + fn, r.recall_undefined);
    r.accuracy = ratio(tp + tn, r.total(), r.accuracy_undefined);
    r.f1_undefined = r.precision + r.recall == 0.0;
    r.f1 = r.f1_undefined ? 0.0 : 2.0 * r.precision * r.recall / (r.precision + r.recall);
    return r;
}

/// Confusion counts and Acc/Prec/Rec/F1 with the positive class = 1.
/// A zero denominator yields 0 and sets the matching *_undefined flag.
inline EvalReport evaluate(const std::vector<Prediction>& predictions, const std::map<std::string, int>& gold)
{
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (const auto& p : predictions) {
        auto it = gold.find(p.pair_id);
        if (it == gold.end()) throw validation_error("no gold label for pair_id " + p.pair_id);
        if (p.predicted == 1) (it->second == 1 ? tp : fp)++;
        else (it->second == 1 ? fn : tn)++;
    }
    return report_from_counts(tp, fp, fn, tn);
}

inline json to_json(const EvalReport& r)
{
    return {{"accuracy", r.accuracy},
            {"precision", r.precision},
            {"recall", r.recall},
            {"f1", r.f1},
            {"tp", r.tp},
            {"fp", r.fp},
            {"fn", r.fn},
            {"tn", r.tn},
            {"undefined", {{"accuracy", r.accuracy_undefined}, {"precision", r.precision_undefined},
                           {"recall", r.recall_undefined}, {"f1", r.f1_undefined}}}};
}

// ---------------------------------------------------------------------------
// Batched evaluation
// ---------------------------------------------------------------------------

struct FailureRecord {
    std::string pair_id;
    std::string message;
};

struct EvalRun {
    Strategy strategy = Strategy::zero_shot;
    std::vector<Prediction> predictions;
    std::vector<FailureRecord> failures;
    EvalReport report;
    std::size_t backend_calls = 0;

    double failure_rate() const
    {
        const auto n = predictions.size() + failures.size();
        return n == 0 ? 0.0 : static_cast<double>(failures.size()) / static_cast<double>(n);
    }
};

/// Runs `fn(i)` for i in [0, n) on up to `workers` threads.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn)
{
    const auto threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = next++; i < n; i = next++) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

/// Predicts every pair with one strategy. Pairs are processed concurrently
/// up to the backend's in-flight cap and reported in input order. Failed
/// pairs are excluded from the metrics and listed separately.
inline EvalRun run_evaluation(const std::vector<LabeledPair>& data, Strategy strategy, backend::ChatClient& client,
                              const retrieval::Bm25Index* index = nullptr, const backend::ChatBackend& config = {},
                              std::size_t k = 5)
{
    if ((strategy == Strategy::rag || strategy == Strategy::marag) && index == nullptr)
        throw validation_error(std::string(name(strategy)) + " needs a retrieval index");
    const auto calls_before = client.call_count();
    std::vector<std::optional<Prediction>> slots(data.size());
    std::vector<std::optional<std::string>> errors(data.size());
    parallel_for(data.size(), client.in_flight_cap(), [&](std::size_t i) {
        const auto& pair = data[i].pair;
        try {
            switch (strategy) {
            case Strategy::rag: slots[i] = run_rag(pair, *index, client, k, config); break;
            case Strategy::marag: slots[i] = run_multi_agent_rag(pair, *index, client, k, config); break;
            default: slots[i] = run_single_inference(pair, strategy, client, config);
            }
        } catch (const error& e) {
            errors[i] = e.what();
        }
    });

    EvalRun run;
    run.strategy = strategy;
    std::map<std::string, int> gold;
    for (std::size_t i = 0; i < data.size(); ++i) {
        gold[data[i].pair.pair_id] = data[i].label;
        if (slots[i]) run.predictions.push_back(std::move(*slots[i]));
        else run.failures.push_back({data[i].pair.pair_id, *errors[i]});
    }
    run.report = evaluate(run.predictions, gold);
    run.backend_calls = client.call_count() - calls_before;
    return run;
}

inline json to_json(const EvalRun& run)
{
    json j = to_json(run.report);
    j["strategy"] = name(run.strategy);
    j["evaluated"] = run.predictions.size();
    j["failures"] = run.failures.size();
    j["failure_rate"] = run.failure_rate();
    j["backend_calls"] = run.backend_calls;
    json f = json::array();
    for (const auto& x : run.failures) f.push_back({{"pair_id", x.pair_id}, {"error", x.message}});
    j["failed_pairs"] = std::move(f);
    return j;
}

/// Encoder-style baseline: hashed pair features and a logistic head.
inline std::vector<Prediction> run_logistic_baseline(const std::vector<LabeledPair>& train,
                                                     const std::vector<LabeledPair>& test, int epochs = 200,
                                                     double learning_rate = 0.5,
                                                     std::size_t dim = optim::default_feature_dim)
{
    std::vector<std::vector<double>> x;
    std::vector<int> y;
    for (const auto& lp : train) {
        x.push_back(optim::hashed_pair_features(lp.pair, dim));
        y.push_back(lp.label);
    }
    const auto head = optim::train_logistic_head(x, y, epochs, learning_rate);
    std::vector<Prediction> out;
    for (const auto& lp : test) {
        const auto h = optim::hashed_pair_features(lp.pair, dim);
        out.push_back({lp.pair.pair_id, head.predict(h), Strategy::zero_shot, std::to_string(head.predict_proba(h)),
                       std::nullopt, {}});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Rollout scoring: the entry point for external GRPO trainers.
// ---------------------------------------------------------------------------

struct RolloutItem {
    ProductPair pair;
    int gold = 0;
    std::vector<std::string> rollouts;
};

struct ScoredGroup {
    optim::RolloutGroup group;
    std::vector<reward::RewardBreakdown> breakdowns;
};

/// Rewards every rollout, then computes group-relative advantages per item.
/// `workers` > 1 scores rollouts concurrently; results do not depend on it.
inline std::vector<ScoredGroup> score_rollout_batch(const std::vector<RolloutItem>& items,
                                                    const judges::JudgeProvider& judge,
                                                    const reward::RewardWeights& weights = {}, int workers = 1,
                                                    bool normalize_std = true)
{
    weights.validate();
    std::vector<std::pair<std::size_t, std::size_t>> jobs;
    std::vector<ScoredGroup> out(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto& item = items[i];
        if (item.rollouts.empty()) throw validation_error("item " + std::to_string(i) + " has no rollouts");
        if (item.gold != 0 && item.gold != 1) throw validation_error("item " + std::to_string(i) + ": gold must be 0 or 1");
        out[i].group.input_id = item.pair.pair_id;
        out[i].group.rollouts = item.rollouts;
        out[i].group.rewards.assign(item.rollouts.size(), 0.0);
        out[i].breakdowns.resize(item.rollouts.size());
        for (std::size_t k = 0; k < item.rollouts.size(); ++k) jobs.emplace_back(i, k);
    }
    parallel_for(jobs.size(), workers, [&](std::size_t j) {
        const auto [i, k] = jobs[j];
        out[i].breakdowns[k] = reward::score_rollout(items[i].pair, items[i].rollouts[k], items[i].gold, judge, weights);
        out[i].group.rewards[k] = out[i].breakdowns[k].reward;
    });
    for (auto& g : out) g.group.advantages = optim::group_advantages(g.group.rewards, normalize_std);
    return out;
}

// ---------------------------------------------------------------------------
// Offline backends for evaluation runs
// ---------------------------------------------------------------------------

namespace detail {

inline std::optional<std::string> line_after(const std::string& prompt, std::string_view key)
{
    const auto pos = prompt.find(key);
    if (pos == std::string::npos) return std::nullopt;
    const auto start = pos + key.size();
    const auto end = prompt.find('\n', start);
    return prompt.substr(start, end == std::string::npos ? std::string::npos : end - start);
}

}  // namespace detail

/// Responder that knows the gold label of every pair in `data` and answers
/// each prompt kind in its expected format.
inline backend::ScriptedBackend::Responder oracle_responder(const std::vector<LabeledPair>& data)
{
    auto gold = std::make_shared<std::map<std::pair<std::string, std::string>, int>>();
    for (const auto& lp : data) (*gold)[{lp.pair.base_title, lp.pair.compared_title}] = lp.label;
    return [gold](const std::string& prompt) -> std::optional<std::string> {
        auto a = detail::line_after(prompt, "Product A: ");
        auto b = detail::line_after(prompt, "Product B: ");
        if (!a || !b) return std::nullopt;
        auto it = gold->find({*a, *b});
        if (it == gold->end()) return std::nullopt;
        const std::string y = std::to_string(it->second);
        if (prompt.find(trace_marker) != std::string::npos)
            return "First, the core product is \"" + *a + "\". Second, identifiers compared. Third, variants "
                   "compared. So, the final answer is: " + y + ".";
        if (prompt.find("Expected output: <reason>") != std::string::npos)
            return parsing::render_structured_output("First, core products compared. Second, identifiers compared. "
                                                     "Third, variant attributes compared. So, the final answer is: " + y + ".",
                                                     it->second);
        if (prompt.find(final_line_marker) != std::string::npos) return "Attributes compared step by step.\n" + y;
        return y;
    };
}

}  // namespace epm::pipelines
