#pragma once

#include "mrrag/corpus/types.hpp"
#include "mrrag/error.hpp"
#include "mrrag/text.hpp"

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace mrrag::corpus {

struct DualChunks {
    std::vector<SearchChunk> search;
    std::vector<ContextChunk> context;
};

/// Code point boundaries splitting `length` characters into `k` parts whose
/// sizes differ by at most one: part i spans [floor(i*n/k), floor((i+1)*n/k)).
inline std::vector<std::size_t> balanced_boundaries(std::size_t length, std::size_t k) {
    std::vector<std::size_t> bounds(k + 1);
    for (std::size_t i = 0; i <= k; ++i) bounds[i] = (i * length) / k;
    return bounds;
}

/// Dual chunking: every non-empty page yields k search chunks of (near) equal
/// size and one context chunk padded with up to `ps` characters from the end of
/// the previous page and the start of the next page of the same document. Both
/// chunk kinds share the (doc_id, page_index) traceability key.
inline DualChunks dual_chunk(const std::vector<Document>& docs, std::size_t k, std::size_t ps) {
    if (k == 0) throw ValidationError("k must be at least 1");
    DualChunks out;
    for (const auto& doc : docs) {
        const auto& pages = doc.pages;
        for (const auto& page : pages) {
            if (page.text.empty()) continue;
            const auto offsets = text::codepoint_offsets(page.text);
            const std::size_t n = offsets.size() - 1;
            const auto bounds = balanced_boundaries(n, k);
            for (std::size_t ord = 0; ord < k; ++ord) {
                SearchChunk sc;
                sc.id = search_chunk_id(doc.doc_id, page.page_index, ord);
                sc.doc_id = doc.doc_id;
                sc.page_index = page.page_index;
                sc.ordinal = ord;
                sc.text = page.text.substr(offsets[bounds[ord]], offsets[bounds[ord + 1]] - offsets[bounds[ord]]);
                sc.context_id = context_chunk_id(doc.doc_id, page.page_index);
                out.search.push_back(std::move(sc));
            }
        }
        for (std::size_t j = 0; j < pages.size(); ++j) {
            const auto& page = pages[j];
            if (page.text.empty()) continue;
            ContextChunk cc;
            cc.id = context_chunk_id(doc.doc_id, page.page_index);
            cc.doc_id = doc.doc_id;
            cc.page_index = page.page_index;
            cc.metadata_title = doc.title;
            std::string prefix;
            std::string suffix;
            if (j > 0) {
                prefix = text::char_suffix(pages[j - 1].text, ps);
                cc.prev_pad_len = text::char_length(prefix);
            }
            if (j + 1 < pages.size()) {
                suffix = text::char_prefix(pages[j + 1].text, ps);
                cc.next_pad_len = text::char_length(suffix);
            }
            cc.text = prefix + page.text + suffix;
            out.context.push_back(std::move(cc));
        }
    }
    return out;
}

/// Single-chunk (baseline) windowing of one page of `length` characters:
/// pages up to `cap` are one window; longer pages are split into cap-sized
/// windows that start every round(cap * (1 - overlap)) characters.
inline std::vector<std::pair<std::size_t, std::size_t>> baseline_windows(std::size_t length, std::size_t cap,
                                                                         double overlap) {
    if (cap == 0) throw ValidationError("baseline cap must be positive");
    if (!(overlap >= 0.0 && overlap < 0.5)) throw ValidationError("baseline overlap must be in [0, 0.5)");
    std::vector<std::pair<std::size_t, std::size_t>> windows;
    if (length <= cap) {
        windows.emplace_back(0, length);
        return windows;
    }
    const auto step = static_cast<std::size_t>(
        std::max<long long>(1, std::llround(static_cast<double>(cap) * (1.0 - overlap))));
    for (std::size_t start = 0;; start += step) {
        const std::size_t end = std::min(start + cap, length);
        windows.emplace_back(start, end);
        if (end == length) break;
    }
    return windows;
}

/// Baseline corpus chunks: the same chunk serves search and generation, so each
/// chunk appears both as a SearchChunk and as the ContextChunk it resolves to.
inline DualChunks build_baseline_chunks(const std::vector<Document>& docs, std::size_t cap, double overlap) {
    DualChunks out;
    for (const auto& doc : docs) {
        for (const auto& page : doc.pages) {
            if (page.text.empty()) continue;
            const auto offsets = text::codepoint_offsets(page.text);
            const auto windows = baseline_windows(offsets.size() - 1, cap, overlap);
            for (std::size_t w = 0; w < windows.size(); ++w) {
                const auto [b, e] = windows[w];
                ContextChunk cc;
                cc.id = baseline_chunk_id(doc.doc_id, page.page_index, w);
                cc.doc_id = doc.doc_id;
                cc.page_index = page.page_index;
                cc.metadata_title = doc.title;
                cc.text = page.text.substr(offsets[b], offsets[e] - offsets[b]);

                SearchChunk sc;
                sc.id = cc.id;
                sc.doc_id = doc.doc_id;
                sc.page_index = page.page_index;
                sc.ordinal = w;
                sc.text = cc.text;
                sc.context_id = cc.id;

                out.search.push_back(std::move(sc));
                out.context.push_back(std::move(cc));
            }
        }
    }
    return out;
}

} // namespace mrrag::corpus
