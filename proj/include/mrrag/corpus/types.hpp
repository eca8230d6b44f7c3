#pragma once

#include "mrrag/release.hpp"

#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace mrrag::corpus {

/// One preprocessed page. Pages whose text is empty after stripping are kept so
/// page numbering stays contiguous, but they produce no chunks.
struct DocumentPage {
    std::string doc_id;
    std::string doc_title;
    ReleaseId release;
    std::size_t page_index = 0;
    std::string text;
};

/// Pages of one document, ordered by page_index.
struct Document {
    std::string doc_id;
    std::string title;
    std::vector<DocumentPage> pages;
};

struct SearchChunk {
    std::string id;
    std::string doc_id;
    std::size_t page_index = 0;
    std::size_t ordinal = 0;
    std::string text;
    /// Traceability key of the context chunk this search chunk resolves to.
    std::string context_id;
};

struct ContextChunk {
    std::string id;
    std::string doc_id;
    std::size_t page_index = 0;
    std::string text;
    std::string metadata_title;
    std::size_t prev_pad_len = 0;
    std::size_t next_pad_len = 0;
};

struct CorpusManifest {
    ReleaseId release;
    std::size_t k = 2;
    std::size_t ps = 500;
    std::size_t doc_count = 0;
    /// Pages that produced chunks (non-empty after preprocessing).
    std::size_t page_count = 0;
    std::size_t empty_page_count = 0;
    std::size_t search_chunk_count = 0;
    std::size_t context_chunk_count = 0;
    std::size_t baseline_chunk_count = 0;
    std::size_t baseline_cap = 3000;
    double baseline_overlap = 0.25;
    std::string embedding_model_id;
    std::size_t embedding_dim = 0;
};

inline std::string search_chunk_id(const std::string& doc_id, std::size_t page, std::size_t ordinal) {
    return doc_id + ":" + std::to_string(page) + ":" + std::to_string(ordinal);
}

inline std::string context_chunk_id(const std::string& doc_id, std::size_t page) {
    return doc_id + ":" + std::to_string(page);
}

inline std::string baseline_chunk_id(const std::string& doc_id, std::size_t page, std::size_t window) {
    return doc_id + ":" + std::to_string(page) + ":w" + std::to_string(window);
}

// JSON mappings used by the corpus directory format.

inline void to_json(nlohmann::json& j, const SearchChunk& c) {
    j = {{"id", c.id}, {"doc_id", c.doc_id}, {"page_index", c.page_index},
         {"ordinal", c.ordinal}, {"text", c.text}, {"context_id", c.context_id}};
}

inline void from_json(const nlohmann::json& j, SearchChunk& c) {
    j.at("id").get_to(c.id);
    j.at("doc_id").get_to(c.doc_id);
    j.at("page_index").get_to(c.page_index);
    j.at("ordinal").get_to(c.ordinal);
    j.at("text").get_to(c.text);
    c.context_id = j.value("context_id", context_chunk_id(c.doc_id, c.page_index));
}

inline void to_json(nlohmann::json& j, const ContextChunk& c) {
    j = {{"id", c.id}, {"doc_id", c.doc_id}, {"page_index", c.page_index}, {"text", c.text},
         {"metadata_title", c.metadata_title}, {"prev_pad_len", c.prev_pad_len},
         {"next_pad_len", c.next_pad_len}};
}

inline void from_json(const nlohmann::json& j, ContextChunk& c) {
    j.at("id").get_to(c.id);
    j.at("doc_id").get_to(c.doc_id);
    j.at("page_index").get_to(c.page_index);
    j.at("text").get_to(c.text);
    j.at("metadata_title").get_to(c.metadata_title);
    c.prev_pad_len = j.value("prev_pad_len", std::size_t{0});
    c.next_pad_len = j.value("next_pad_len", std::size_t{0});
}

inline void to_json(nlohmann::json& j, const CorpusManifest& m) {
    j = {{"release", m.release.canonical},
         {"release_raw", m.release.raw},
         {"k", m.k},
         {"ps", m.ps},
         {"doc_count", m.doc_count},
         {"page_count", m.page_count},
         {"empty_page_count", m.empty_page_count},
         {"search_chunk_count", m.search_chunk_count},
         {"context_chunk_count", m.context_chunk_count},
         {"baseline_chunk_count", m.baseline_chunk_count},
         {"baseline_cap", m.baseline_cap},
         {"baseline_overlap", m.baseline_overlap},
         {"embedding_model_id", m.embedding_model_id},
         {"embedding_dim", m.embedding_dim}};
}

inline void from_json(const nlohmann::json& j, CorpusManifest& m) {
    m.release = ReleaseId::parse(j.value("release_raw", j.at("release").get<std::string>()));
    j.at("k").get_to(m.k);
    j.at("ps").get_to(m.ps);
    j.at("doc_count").get_to(m.doc_count);
    j.at("page_count").get_to(m.page_count);
    m.empty_page_count = j.value("empty_page_count", std::size_t{0});
    j.at("search_chunk_count").get_to(m.search_chunk_count);
    m.context_chunk_count = j.value("context_chunk_count", m.page_count);
    m.baseline_chunk_count = j.value("baseline_chunk_count", std::size_t{0});
    m.baseline_cap = j.value("baseline_cap", std::size_t{3000});
    m.baseline_overlap = j.value("baseline_overlap", 0.25);
    j.at("embedding_model_id").get_to(m.embedding_model_id);
    j.at("embedding_dim").get_to(m.embedding_dim);
}

} // namespace mrrag::corpus
