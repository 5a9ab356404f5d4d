#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "epm/types.hpp"

namespace epm::retrieval {

struct ScoredDoc {
    std::string doc_id;
    double score = 0.0;

    bool operator==(const ScoredDoc&) const = default;
};

/// Okapi BM25 over title documents, with IDF(t) = ln((N - df + 0.5)/(df + 0.5) + 1).
/// The +1 inside the log keeps every term weight nonnegative. Immutable
/// once built; concurrent readers need no synchronization.
class Bm25Index {
  public:
    struct Document {
        std::string id;
        std::string text;
        std::vector<std::string> tokens;
    };

    Bm25Index() = default;

    Bm25Index(std::vector<Document> docs, double k1, double b) : docs_(std::move(docs)), k1_(k1), b_(b)
    {
        if (!(k1 >= 0.0)) throw validation_error("k1 must be nonnegative");
        if (!(b >= 0.0 && b <= 1.0)) throw validation_error("b must be in [0, 1]");
        std::size_t total_len = 0;
        for (std::size_t d = 0; d < docs_.size(); ++d) {
            if (!by_id_.emplace(docs_[d].id, d).second) throw validation_error("duplicate doc_id " + docs_[d].id);
            std::unordered_map<std::string, unsigned> tf;
            for (const auto& t : docs_[d].tokens) ++tf[t];
            for (const auto& [term, f] : tf) {
                ++df_[term];
                postings_[term].emplace_back(d, f);
            }
            total_len += docs_[d].tokens.size();
        }
        if (!docs_.empty()) avgdl_ = static_cast<double>(total_len) / static_cast<double>(docs_.size());
        for (auto& [term, list] : postings_) std::sort(list.begin(), list.end());
    }

    std::size_t size() const { return docs_.size(); }
    bool empty() const { return docs_.empty(); }
    double k1() const { return k1_; }
    double b() const { return b_; }
    double average_doc_length() const { return avgdl_; }
    const std::vector<Document>& documents() const { return docs_; }

    std::size_t document_frequency(const std::string& term) const
    {
        auto it = df_.find(term);
        return it == df_.end() ? 0 : it->second;
    }

    double idf(const std::string& term) const
    {
        const auto n = static_cast<double>(docs_.size());
        const auto df = static_cast<double>(document_frequency(term));
        return std::log((n - df + 0.5) / (df + 0.5) + 1.0);
    }

    /// One summand of the BM25 sum for a term with frequency `tf` in a
    /// document of length `doc_len`.
    double term_weight(const std::string& term, double tf, double doc_len) const
    {
        if (tf <= 0.0) return 0.0;
        const double norm = 1.0 - b_ + b_ * (avgdl_ > 0.0 ? doc_len / avgdl_ : 0.0);
        return idf(term) * (tf * (k1_ + 1.0)) / (tf + k1_ * norm);
    }

    const Document& document(const std::string& doc_id) const
    {
        auto it = by_id_.find(doc_id);
        if (it == by_id_.end()) throw validation_error("unknown doc_id " + doc_id);
        return docs_[it->second];
    }

    // Postings are (document index, term frequency) sorted by index.
    const std::vector<std::pair<std::size_t, unsigned>>* postings(const std::string& term) const
    {
        auto it = postings_.find(term);
        return it == postings_.end() ? nullptr : &it->second;
    }

  private:
    std::vector<Document> docs_;
    std::unordered_map<std::string, std::size_t> by_id_;
    std::unordered_map<std::string, std::size_t> df_;
    std::unordered_map<std::string, std::vector<std::pair<std::size_t, unsigned>>> postings_;
    double avgdl_ = 0.0;
    double k1_ = 1.2;
    double b_ = 0.75;
};

inline Bm25Index build_index(const std::vector<std::pair<std::string, std::string>>& corpus, double k1 = 1.2,
                             double b = 0.75)
{
    std::vector<Bm25Index::Document> docs;
    docs.reserve(corpus.size());
    for (const auto& [id, body] : corpus) docs.push_back({id, body, text::tokenize(body)});
    return Bm25Index(std::move(docs), k1, b);
}

/// Score of one document. Query tokens are summed in query order, repeated
/// tokens counted each time.
inline double bm25_score(const Bm25Index& index, std::string_view query, const std::string& doc_id)
{
    const auto& doc = index.document(doc_id);
    std::unordered_map<std::string, unsigned> tf;
    for (const auto& t : doc.tokens) ++tf[t];
    const auto len = static_cast<double>(doc.tokens.size());
    double score = 0.0;
    for (const auto& term : text::tokenize(query)) {
        auto it = tf.find(term);
        score += it == tf.end() ? 0.0 : index.term_weight(term, it->second, len);
    }
    return score;
}

/// Top-k by descending score, ties by ascending doc_id. Only documents that
/// share at least one token with the query are candidates.
inline std::vector<ScoredDoc> retrieve_top_k(const Bm25Index& index, std::string_view query, std::size_t k = 5)
{
    if (k == 0) throw validation_error("k must be at least 1");
    std::vector<double> acc(index.size(), 0.0);
    std::vector<char> touched(index.size(), 0);
    const auto& docs = index.documents();
    for (const auto& term : text::tokenize(query)) {
        const auto* list = index.postings(term);
        if (list == nullptr) continue;
        for (const auto& [d, f] : *list) {
            acc[d] += index.term_weight(term, f, static_cast<double>(docs[d].tokens.size()));
            touched[d] = 1;
        }
    }
    std::vector<ScoredDoc> hits;
    for (std::size_t d = 0; d < docs.size(); ++d)
        if (touched[d]) hits.push_back({docs[d].id, acc[d]});
    auto better = [](const ScoredDoc& a, const ScoredDoc& b) {
        return a.score != b.score ? a.score > b.score : a.doc_id < b.doc_id;
    };
    const auto keep = std::min(k, hits.size());
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(), better);
    hits.resize(keep);
    return hits;
}

inline std::string build_pair_query(const ProductPair& pair)
{
    return pair.base_title + " [SEP] " + pair.compared_title;
}

/// Every distinct title of the given records becomes one document.
inline std::vector<std::pair<std::string, std::string>> title_corpus(const std::vector<LabeledPair>& data)
{
    std::map<std::string, std::string> by_id;
    for (const auto& lp : data)
        for (const auto* title : {&lp.pair.base_title, &lp.pair.compared_title})
            by_id.emplace("t" + text::hex64(text::fnv1a(*title)), *title);
    return {by_id.begin(), by_id.end()};
}

// ---------------------------------------------------------------------------
// Persistence: self-describing versioned JSON.
//   {"format": "epm-bm25-index", "version": 1, "k1": .., "b": ..,
//    "tokenizer": "lower-alnum-v1", "documents": [{"id": .., "text": ..}, ..]}
// Token statistics are recomputed on load.
// ---------------------------------------------------------------------------

inline constexpr const char* index_format_name = "epm-bm25-index";
inline constexpr int index_format_version = 1;

inline json to_json(const Bm25Index& index)
{
    json docs = json::array();
    for (const auto& d : index.documents()) docs.push_back({{"id", d.id}, {"text", d.text}});
    return {{"format", index_format_name}, {"version", index_format_version}, {"k1", index.k1()},
            {"b", index.b()},           {"tokenizer", "lower-alnum-v1"},       {"documents", std::move(docs)}};
}

inline Bm25Index index_from_json(const json& j)
{
    if (!j.is_object() || j.value("format", "") != index_format_name)
        throw validation_error("not a BM25 index file");
    if (j.value("version", 0) != index_format_version)
        throw validation_error("unsupported index version " + j.value("version", json()).dump());
    std::vector<std::pair<std::string, std::string>> corpus;
    for (const auto& d : j.at("documents")) corpus.emplace_back(d.at("id").get<std::string>(), d.at("text").get<std::string>());
    return build_index(corpus, j.at("k1").get<double>(), j.at("b").get<double>());
}

inline void save_index(const Bm25Index& index, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw validation_error("cannot write " + path.string());
    out << to_json(index).dump() << '\n';
}

inline Bm25Index load_index(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw validation_error("cannot open " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw validation_error(std::string("malformed index file: ") + e.what());
    }
    return index_from_json(j);
}

}  // namespace epm::retrieval
