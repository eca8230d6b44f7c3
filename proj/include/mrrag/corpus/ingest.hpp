#pragma once

#include "mrrag/corpus/preprocess.hpp"
#include "mrrag/corpus/types.hpp"
#include "mrrag/error.hpp"
#include "mrrag/release.hpp"
#include "mrrag/text.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace mrrag::corpus {

/// A source document before preprocessing.
struct RawDocument {
    std::string doc_id;
    std::string title;
    std::optional<std::string> release;
    std::vector<RawPage> pages;
};

struct IngestOptions {
    std::vector<std::string> strip_patterns;
    /// Page-break marker used when a document descriptor does not name one.
    std::string default_page_break = "\f";
    /// Window used to paginate text that carries no page-break marker.
    std::size_t page_window = 3000;
};

/// Splits plain text into pages at `marker`; text without any marker is cut into
/// fixed windows of `window` characters.
inline std::vector<std::string> paginate(const std::string& body, const std::string& marker, std::size_t window) {
    std::vector<std::string> pages;
    if (!marker.empty() && body.find(marker) != std::string::npos) {
        std::size_t start = 0;
        while (true) {
            const std::size_t pos = body.find(marker, start);
            pages.push_back(body.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
            if (pos == std::string::npos) break;
            start = pos + marker.size();
        }
        // a trailing marker does not open a new page
        if (pages.size() > 1 && text::is_blank(pages.back())) pages.pop_back();
        return pages;
    }
    const std::size_t n = text::char_length(body);
    if (window == 0 || n <= window) {
        pages.push_back(body);
        return pages;
    }
    for (std::size_t start = 0; start < n; start += window) pages.push_back(text::char_slice(body, start, start + window));
    return pages;
}

inline RawPage parse_raw_page(const nlohmann::json& j) {
    RawPage page;
    if (j.is_string()) {
        page.regions.push_back({RegionKind::text, j.get<std::string>(), {}});
        return page;
    }
    for (const auto& r : j.at("regions")) {
        Region region;
        region.kind = region_kind_from_string(r.value("kind", std::string("text")));
        region.text = r.value("text", std::string{});
        if (r.contains("cells")) {
            for (const auto& c : r.at("cells")) {
                region.cells.push_back({c.at("row").get<int>(), c.at("col").get<int>(), c.at("text").get<std::string>()});
            }
        } else if (r.contains("rows")) {
            // rows: [["A1","B1"],["A2","B2"]] shorthand
            int row = 0;
            for (const auto& cells : r.at("rows")) {
                int col = 0;
                for (const auto& cell : cells) region.cells.push_back({row, col++, cell.get<std::string>()});
                ++row;
            }
        }
        page.regions.push_back(std::move(region));
    }
    return page;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Reads `<dir>/docs.json`: a list (or {"documents": [...]}) of
/// {doc_id, title, file, release?, page_break?}. Files ending in `.json` hold
/// structured pages ({"pages": [{"regions": [...]}, ...]}); any other file is
/// plain text split at the page-break marker.
inline std::vector<RawDocument> read_document_set(const std::filesystem::path& dir, const IngestOptions& opts) {
    const auto descriptor_path = dir / "docs.json";
    nlohmann::json descriptor;
    try {
        descriptor = nlohmann::json::parse(read_file(descriptor_path));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("invalid " + descriptor_path.string() + ": " + e.what());
    }
    const nlohmann::json& entries = descriptor.is_object() ? descriptor.at("documents") : descriptor;
    std::vector<RawDocument> docs;
    for (const auto& entry : entries) {
        RawDocument doc;
        try {
            doc.doc_id = entry.at("doc_id").get<std::string>();
            doc.title = entry.value("title", doc.doc_id);
            if (entry.contains("release")) doc.release = entry.at("release").get<std::string>();
            const auto file = dir / entry.at("file").get<std::string>();
            const std::string body = read_file(file);
            if (file.extension() == ".json") {
                const auto parsed = nlohmann::json::parse(body);
                for (const auto& p : parsed.at("pages")) doc.pages.push_back(parse_raw_page(p));
            } else {
                const std::string marker = entry.value("page_break", opts.default_page_break);
                for (auto& page_text : paginate(body, marker, opts.page_window)) {
                    doc.pages.push_back(RawPage{{Region{RegionKind::text, std::move(page_text), {}}}});
                }
            }
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("invalid document entry in " + descriptor_path.string() + ": " + e.what());
        }
        docs.push_back(std::move(doc));
    }
    return docs;
}

/// Preprocesses the documents that belong to `release` (documents without a
/// release tag are taken as belonging to every release).
inline std::vector<Document> preprocess_documents(const std::vector<RawDocument>& raw, const ReleaseId& release,
                                                  const StripPatterns& strip) {
    std::vector<Document> docs;
    for (const auto& rd : raw) {
        if (rd.release && ReleaseId::parse(*rd.release) != release) continue;
        Document doc{rd.doc_id, rd.title, {}};
        for (std::size_t i = 0; i < rd.pages.size(); ++i) {
            doc.pages.push_back(preprocess_page(rd.pages[i], strip, rd.doc_id, rd.title, release, i));
        }
        docs.push_back(std::move(doc));
    }
    return docs;
}

} // namespace mrrag::corpus
