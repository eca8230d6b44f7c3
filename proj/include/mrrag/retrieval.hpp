#pragma once

// Per-query cosine and MMR search over a release's search chunks, mapped to
// deduplicated context chunks.

#include "mrrag/corpus/corpus.hpp"
#include "mrrag/error.hpp"
#include "mrrag/llm/backend.hpp"
#include "mrrag/rewrite.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace mrrag::retrieval {

enum class Method { cosine, mmr };
enum class SourceQuery { base, filtered, versionless };

inline const char* to_string(Method m) { return m == Method::cosine ? "cosine" : "mmr"; }

inline const char* to_string(SourceQuery q) {
    switch (q) {
    case SourceQuery::base: return "base";
    case SourceQuery::filtered: return "filtered";
    case SourceQuery::versionless: return "versionless";
    }
    return "base";
}

struct ScoredChunk {
    std::string search_chunk_id;
    double score = 0.0;
    Method method = Method::cosine;
    SourceQuery source_query = SourceQuery::base;
};

struct RetrievalConfig {
    std::size_t n_cosine = 2;
    std::size_t n_mmr = 2;
    double mmr_lambda = 0.5;

    void validate() const {
        if (n_cosine + n_mmr == 0) throw ValidationError("retrieval needs at least one chunk per query");
        if (!(mmr_lambda >= 0.0 && mmr_lambda <= 1.0)) throw ValidationError("mmr_lambda must be in [0, 1]");
    }
};

struct RetrievalResult {
    std::vector<corpus::ContextChunk> context_chunks;
    std::map<std::string, std::vector<ScoredChunk>> provenance;
};

/// Top-n rows by cosine similarity, descending; equal scores ordered by id.
inline std::vector<ScoredChunk> cosine_top(std::span<const float> query, const corpus::VectorStore& store,
                                           std::size_t n) {
    std::vector<ScoredChunk> all;
    all.reserve(store.size());
    for (std::size_t i = 0; i < store.size(); ++i) {
        all.push_back({store.id(i), corpus::cosine(query, store.row(i)), Method::cosine, SourceQuery::base});
    }
    const std::size_t take = std::min(n, all.size());
    auto better = [](const ScoredChunk& a, const ScoredChunk& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.search_chunk_id < b.search_chunk_id;
    };
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(), better);
    all.resize(take);
    return all;
}

/// Greedy maximal marginal relevance. The reported score is the MMR criterion
/// value at the time of the pick.
inline std::vector<ScoredChunk> mmr_select(std::span<const float> query, const corpus::VectorStore& store,
                                           std::size_t n, double lambda) {
    const std::size_t size = store.size();
    std::vector<double> relevance(size);
    for (std::size_t i = 0; i < size; ++i) relevance[i] = corpus::cosine(query, store.row(i));
    // max similarity to any selected chunk, updated incrementally
    std::vector<double> redundancy(size, -std::numeric_limits<double>::infinity());
    std::vector<bool> taken(size, false);
    std::vector<ScoredChunk> out;
    const std::size_t take = std::min(n, size);
    for (std::size_t step = 0; step < take; ++step) {
        std::size_t best = size;
        double best_score = 0.0;
        for (std::size_t i = 0; i < size; ++i) {
            if (taken[i]) continue;
            const double score = step == 0 ? relevance[i] : lambda * relevance[i] - (1.0 - lambda) * redundancy[i];
            if (best == size || score > best_score || (score == best_score && store.id(i) < store.id(best))) {
                best = i;
                best_score = score;
            }
        }
        taken[best] = true;
        out.push_back({store.id(best), best_score, Method::mmr, SourceQuery::base});
        for (std::size_t i = 0; i < size; ++i) {
            if (!taken[i]) redundancy[i] = std::max(redundancy[i], corpus::cosine(store.row(i), store.row(best)));
        }
    }
    return out;
}

/// Query texts tagged with their role, in base, filtered, versionless order.
inline std::vector<std::pair<SourceQuery, std::string>> labelled(const rewrite::StandaloneQueries& q) {
    std::vector<std::pair<SourceQuery, std::string>> out{{SourceQuery::base, q.base}, {SourceQuery::filtered, q.filtered}};
    if (q.versionless) out.emplace_back(SourceQuery::versionless, *q.versionless);
    return out;
}

/// Retrieves context chunks for every standalone query. A query text equal to
/// an earlier one is skipped, so duplicates never change the result.
inline RetrievalResult retrieve(const std::vector<std::pair<SourceQuery, std::string>>& queries,
                                const corpus::ChunkIndex& index, const RetrievalConfig& cfg,
                                llm::EmbeddingBackend& embedder) {
    cfg.validate();
    RetrievalResult result;
    if (index.store().empty()) return result;

    std::vector<std::pair<SourceQuery, std::string>> unique;
    std::set<std::string> seen_text;
    for (const auto& q : queries) {
        if (text::is_blank(q.second)) continue;
        if (seen_text.insert(q.second).second) unique.push_back(q);
    }
    if (unique.empty()) return result;

    std::vector<std::string> texts;
    for (const auto& q : unique) texts.push_back(q.second);
    const auto vectors = embedder.embed(texts);
    if (vectors.size() != texts.size()) throw BackendError("embedding backend returned wrong row count", true);
    llm::check_dimensions(vectors, index.store().dim());

    std::map<std::string, std::size_t> row_of;
    for (std::size_t i = 0; i < index.search_chunks().size(); ++i) row_of[index.search_chunks()[i].id] = i;
    std::set<std::string> seen_context;

    for (std::size_t qi = 0; qi < unique.size(); ++qi) {
        auto hits = cosine_top(vectors[qi], index.store(), cfg.n_cosine);
        auto mmr = mmr_select(vectors[qi], index.store(), cfg.n_mmr, cfg.mmr_lambda);
        hits.insert(hits.end(), mmr.begin(), mmr.end());
        // a chunk found by both methods keeps both records
        for (auto& hit : hits) {
            hit.source_query = unique[qi].first;
            const auto& sc = index.search_chunks()[row_of.at(hit.search_chunk_id)];
            const auto& cc = index.context_of(sc);
            result.provenance[cc.id].push_back(hit);
            if (seen_context.insert(cc.id).second) result.context_chunks.push_back(cc);
        }
    }
    return result;
}

inline RetrievalResult retrieve(const rewrite::StandaloneQueries& queries, const corpus::ChunkIndex& index,
                                const RetrievalConfig& cfg, llm::EmbeddingBackend& embedder) {
    return retrieve(labelled(queries), index, cfg, embedder);
}

inline void to_json(nlohmann::json& j, const ScoredChunk& s) {
    j = {{"search_chunk_id", s.search_chunk_id},
         {"score", s.score},
         {"method", to_string(s.method)},
         {"source_query", to_string(s.source_query)}};
}

} // namespace mrrag::retrieval
