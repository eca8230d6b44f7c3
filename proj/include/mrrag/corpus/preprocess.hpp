#pragma once

#include "mrrag/corpus/types.hpp"
#include "mrrag/error.hpp"
#include "mrrag/text.hpp"

#include <algorithm>
#include <regex>
#include <string>
#include <vector>

namespace mrrag::corpus {

/// Geometric cell of a table, diagram or schematic region.
struct Cell {
    int row = 0;
    int col = 0;
    std::string text;
};

enum class RegionKind { text, table, figure, header, footer, page_number };

struct Region {
    RegionKind kind = RegionKind::text;
    std::string text;
    std::vector<Cell> cells;
};

/// A page as extracted from the source document, before cleanup.
struct RawPage {
    std::vector<Region> regions;
};

inline RegionKind region_kind_from_string(const std::string& s) {
    const std::string k = text::to_lower(s);
    if (k == "text" || k == "paragraph") return RegionKind::text;
    if (k == "table") return RegionKind::table;
    if (k == "figure" || k == "diagram" || k == "schematic") return RegionKind::figure;
    if (k == "header") return RegionKind::header;
    if (k == "footer") return RegionKind::footer;
    if (k == "page_number") return RegionKind::page_number;
    throw ValidationError("unknown region kind: " + s);
}

/// Compiled boilerplate patterns. Each pattern is searched line by line.
class StripPatterns {
public:
    StripPatterns() = default;

    explicit StripPatterns(const std::vector<std::string>& patterns) {
        for (const auto& p : patterns) {
            try {
                regexes_.emplace_back(p, std::regex::ECMAScript | std::regex::optimize);
            } catch (const std::regex_error& e) {
                throw ConfigError("invalid strip pattern '" + p + "': " + e.what());
            }
        }
    }

    bool matches(const std::string& line) const {
        return std::any_of(regexes_.begin(), regexes_.end(),
                           [&](const std::regex& re) { return std::regex_search(line, re); });
    }

    bool empty() const { return regexes_.empty(); }

private:
    std::vector<std::regex> regexes_;
};

inline constexpr std::string_view region_delimiter = "---";

namespace detail {

inline std::string strip_lines(const std::string& body, const StripPatterns& strip) {
    std::vector<std::string> kept;
    for (auto& line : text::split_lines(body)) {
        if (!strip.empty() && strip.matches(line)) continue;
        kept.push_back(std::move(line));
    }
    while (!kept.empty() && text::is_blank(kept.back())) kept.pop_back();
    while (!kept.empty() && text::is_blank(kept.front())) kept.erase(kept.begin());
    return text::join(kept, "\n");
}

/// Reconstructs lines top-left to bottom-right: rows in order, cells within a
/// row by column, one newline-terminated line per row.
inline std::string linearize_cells(std::vector<Cell> cells, const StripPatterns& strip) {
    std::stable_sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) {
        return a.row != b.row ? a.row < b.row : a.col < b.col;
    });
    std::string out;
    std::size_t i = 0;
    while (i < cells.size()) {
        const int row = cells[i].row;
        std::vector<std::string> parts;
        for (; i < cells.size() && cells[i].row == row; ++i) {
            std::string cell = text::collapse_spaces(cells[i].text);
            if (cell.empty() || (!strip.empty() && strip.matches(cell))) continue;
            parts.push_back(std::move(cell));
        }
        if (parts.empty()) continue;
        out += text::join(parts, " ");
        out += '\n';
    }
    return out;
}

} // namespace detail

/// Cleans one page: drops header/footer/page-number regions and any line or cell
/// matching a strip pattern, linearizes tabular content, and joins the surviving
/// regions with a "---" delimiter line.
inline DocumentPage preprocess_page(const RawPage& raw, const StripPatterns& strip, const std::string& doc_id,
                                    const std::string& doc_title, const ReleaseId& release,
                                    std::size_t page_index) {
    std::vector<std::string> rendered;
    for (const auto& region : raw.regions) {
        std::string body;
        switch (region.kind) {
        case RegionKind::header:
        case RegionKind::footer:
        case RegionKind::page_number:
            continue;
        case RegionKind::text:
            body = detail::strip_lines(region.text, strip);
            break;
        case RegionKind::table:
        case RegionKind::figure:
            body = region.cells.empty() ? detail::strip_lines(region.text, strip)
                                        : detail::linearize_cells(region.cells, strip);
            break;
        }
        if (!text::is_blank(body)) rendered.push_back(std::move(body));
    }

    std::string out;
    for (std::size_t i = 0; i < rendered.size(); ++i) {
        if (i > 0) {
            if (out.back() != '\n') out.push_back('\n');
            out.append(region_delimiter);
            out.push_back('\n');
        }
        out += rendered[i];
    }
    return DocumentPage{doc_id, doc_title, release, page_index, std::move(out)};
}

} // namespace mrrag::corpus
