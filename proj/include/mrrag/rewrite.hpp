#pragma once

// Query rewriting: release extraction and the Base / Filtered / Versionless
// standalone queries.

#include "mrrag/error.hpp"
#include "mrrag/llm/backend.hpp"
#include "mrrag/prompts.hpp"
#include "mrrag/release.hpp"
#include "mrrag/text.hpp"

#include <algorithm>
#include <deque>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

namespace mrrag::rewrite {

struct Turn {
    llm::Role role = llm::Role::user;
    std::string text;
};

/// Alternating user/assistant turns, oldest evicted first once over the cap.
class ConversationHistory {
public:
    explicit ConversationHistory(std::size_t max_turns = 10) : max_turns_(std::max<std::size_t>(2, max_turns)) {}

    void append_exchange(std::string user_text, std::string assistant_text) {
        turns_.push_back({llm::Role::user, std::move(user_text)});
        turns_.push_back({llm::Role::assistant, std::move(assistant_text)});
        // evict whole exchanges so the history keeps starting with a user turn
        while (turns_.size() > max_turns_) {
            turns_.pop_front();
            if (!turns_.empty() && turns_.front().role == llm::Role::assistant) turns_.pop_front();
        }
    }

    const std::deque<Turn>& turns() const { return turns_; }
    bool empty() const { return turns_.empty(); }
    std::size_t size() const { return turns_.size(); }
    std::size_t max_turns() const { return max_turns_; }
    void clear() { turns_.clear(); }

    std::string render() const {
        std::vector<std::string> lines;
        for (const auto& t : turns_) {
            lines.push_back(std::string(t.role == llm::Role::user ? "User: " : "Assistant: ") + t.text);
        }
        return lines.empty() ? std::string("(no previous conversation)") : text::join(lines, "\n");
    }

private:
    std::size_t max_turns_;
    std::deque<Turn> turns_;
};

struct ExtractedRelease {
    bool found = false;
    std::optional<std::string> canonical;
    std::optional<std::string> matched_text;
    /// Set when the question names a release that has no corpus.
    std::optional<std::string> unregistered;
};

struct StandaloneQueries {
    std::string base;
    std::string filtered;
    std::optional<std::string> versionless;

    std::vector<std::string> all() const {
        std::vector<std::string> out{base, filtered};
        if (versionless) out.push_back(*versionless);
        return out;
    }
};

enum class FilterStrategy { llm, static_stopwords };

struct RewriteOptions {
    FilterStrategy filtered = FilterStrategy::llm;
    double temperature = llm::default_temperature;
    int max_tokens = 256;
};

namespace detail {

/// First non-blank line with wrapping quotes and a leading "label:" removed.
inline std::string clean_line(const std::string& reply, const std::vector<std::string>& labels = {}) {
    std::string line;
    for (const auto& l : text::split_lines(reply)) {
        if (!text::is_blank(l)) {
            line = text::trim(l);
            break;
        }
    }
    for (const auto& label : labels) {
        if (text::starts_with_icase(line, label)) {
            line = text::trim(line.substr(label.size()));
            break;
        }
    }
    if (line.size() >= 2 && ((line.front() == '"' && line.back() == '"') || (line.front() == '\'' && line.back() == '\''))) {
        line = text::trim(line.substr(1, line.size() - 2));
    }
    return line;
}

inline const std::regex& release_mention_regex() {
    static const std::regex re(R"(\b(?:release|rel\.?|r)\s?\d+(?:\.\d+)*\b)", std::regex::icase);
    return re;
}

} // namespace detail

/// First release-like mention ("R17.2", "Rel 17.20", "release 12") in `query`.
inline std::optional<std::string> find_release_mention(const std::string& query) {
    std::smatch m;
    if (std::regex_search(query, m, detail::release_mention_regex())) return m.str(0);
    return std::nullopt;
}

/// Parses a release-extraction reply ("Release 17.20 | R17.2", "UNKNOWN: R99", "NONE")
/// against the registered releases.
inline ExtractedRelease parse_release_reply(const std::string& reply, const std::string& query,
                                            const std::vector<ReleaseId>& known) {
    ExtractedRelease out;
    const std::string line = detail::clean_line(reply, {"release:", "answer:"});
    std::string upper = line;
    std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
    if (line.empty() || upper.rfind("NONE", 0) == 0) return out;

    if (upper.rfind("UNKNOWN", 0) == 0) {
        const auto colon = line.find(':');
        std::string named = colon == std::string::npos ? std::string{} : text::trim(line.substr(colon + 1));
        if (named.empty()) named = find_release_mention(query).value_or("");
        if (!named.empty()) out.unregistered = named;
        return out;
    }

    std::string name = line;
    std::string span;
    if (const auto bar = line.find('|'); bar != std::string::npos) {
        name = text::trim(line.substr(0, bar));
        span = text::trim(line.substr(bar + 1));
    }

    std::optional<ReleaseId> hit;
    for (const auto& r : known) {
        if (text::to_lower(r.canonical) == text::to_lower(name) || text::to_lower(r.raw) == text::to_lower(name)) {
            hit = r;
            break;
        }
    }
    if (!hit) {
        try {
            const auto parsed = ReleaseId::parse(name);
            for (const auto& r : known) {
                if (r.canonical == parsed.canonical) hit = r;
            }
        } catch (const ValidationError&) {
        }
    }
    if (!hit) {
        spdlog::warn("release extraction named '{}', which is not a registered release", name);
        if (auto mention = find_release_mention(query)) out.unregistered = *mention;
        return out;
    }

    out.found = true;
    out.canonical = hit->canonical;
    if (!span.empty() && text::contains_icase(query, span)) {
        const auto pos = text::find_icase(query, span);
        out.matched_text = query.substr(pos, span.size());
    } else if (auto mention = find_release_mention(query)) {
        out.matched_text = *mention;
    }
    return out;
}

inline ExtractedRelease extract_release(const std::string& query, const std::vector<ReleaseId>& known_releases,
                                        llm::ChatBackend& backend, const PromptSet& prompts,
                                        const RewriteOptions& opts = {}) {
    std::vector<std::string> names;
    for (const auto& r : known_releases) names.push_back("- " + r.canonical);
    const std::string prompt = text::render(prompts.get("release_extract"),
                                            {{"query", query}, {"known_releases", text::join(names, "\n")}});
    const std::string reply =
        backend.chat(llm::make_request(prompt, llm::tags::release_extract, opts.temperature, opts.max_tokens));
    return parse_release_reply(reply, query, known_releases);
}

inline const std::set<std::string>& stop_words() {
    static const std::set<std::string> words{
        "a",     "about", "an",    "and",   "any",   "are",   "as",    "at",    "be",     "been",  "but",
        "by",    "can",   "could", "do",    "does",  "for",   "from",  "get",   "has",    "have",  "how",
        "i",     "if",    "in",    "into",  "is",    "it",    "its",   "me",    "my",     "of",    "on",
        "or",    "our",   "please", "should", "so",  "tell",  "that",  "the",   "their",  "them",  "then",
        "there", "these", "they",  "this",  "those", "to",    "us",    "was",   "we",     "what",  "when",
        "where", "which", "who",   "why",   "will",  "with",  "would", "you",   "your",   "know",  "need",
        "want",  "way",   "use",   "using", "there's", "what's", "how's", "i'm", "s"};
    return words;
}

/// Deterministic Filtered-query fallback: drops stop words, keeps every other
/// word, and keeps the release mention intact.
inline std::string static_filter(const std::string& base, const std::optional<std::string>& release_span = {}) {
    std::string working = base;
    const std::string placeholder = "\x01REL\x01";
    if (release_span && !release_span->empty()) {
        if (const auto pos = text::find_icase(working, *release_span); pos != std::string::npos) {
            working.replace(pos, release_span->size(), " " + placeholder + " ");
        }
    }
    std::vector<std::string> kept;
    for (auto& raw_word : text::split(text::collapse_spaces(working), ' ')) {
        if (raw_word == placeholder) {
            kept.push_back(*release_span);
            continue;
        }
        std::string word = raw_word;
        while (!word.empty() && std::ispunct(static_cast<unsigned char>(word.back()))) word.pop_back();
        while (!word.empty() && std::ispunct(static_cast<unsigned char>(word.front()))) word.erase(word.begin());
        if (word.empty() || stop_words().contains(text::to_lower(word))) continue;
        kept.push_back(word);
    }
    return text::join(kept, " ");
}

/// Removes the extracted release (canonical form and as written) from a query.
inline std::string strip_release(std::string q, const ExtractedRelease& release) {
    std::string before;
    do {
        before = q;
        if (release.matched_text) q = text::erase_icase(std::move(q), *release.matched_text);
        if (release.canonical) q = text::erase_icase(std::move(q), *release.canonical);
        q = text::collapse_spaces(q);
        while (!q.empty() && (q.back() == '?' || q.back() == ',' || q.back() == ' ')) q.pop_back();
    } while (q != before);
    return q;
}

/// Rewrites the question into standalone queries: Base (history-resolved),
/// Filtered (content words of Base) and, only when a release was extracted,
/// Versionless (Filtered without the release).
inline StandaloneQueries rewrite_queries(const std::string& query, const ConversationHistory& history,
                                         const ExtractedRelease& release, llm::ChatBackend& backend,
                                         const PromptSet& prompts, const RewriteOptions& opts = {}) {
    const std::string release_text = release.canonical.value_or("none");
    StandaloneQueries q;

    const std::string base_prompt = text::render(
        prompts.get("base"), {{"query", query}, {"history", history.render()}, {"release", release_text}});
    q.base = detail::clean_line(
        backend.chat(llm::make_request(base_prompt, llm::tags::rewrite_base, opts.temperature, opts.max_tokens)),
        {"base query:", "base:", "query:", "rewritten question:"});
    if (q.base.empty()) q.base = query;

    if (opts.filtered == FilterStrategy::llm) {
        const std::string prompt = text::render(prompts.get("filtered"), {{"base_query", q.base}, {"release", release_text}});
        q.filtered = detail::clean_line(
            backend.chat(llm::make_request(prompt, llm::tags::rewrite_filtered, opts.temperature, opts.max_tokens)),
            {"filtered query:", "filtered:", "query:"});
    } else {
        q.filtered = static_filter(q.base, release.matched_text);
    }
    if (q.filtered.empty()) q.filtered = q.base;

    if (release.found) {
        std::string versionless;
        if (opts.filtered == FilterStrategy::llm) {
            const std::string prompt =
                text::render(prompts.get("versionless"), {{"filtered_query", q.filtered}, {"release", release_text}});
            versionless = detail::clean_line(
                backend.chat(llm::make_request(prompt, llm::tags::rewrite_versionless, opts.temperature, opts.max_tokens)),
                {"versionless query:", "versionless:", "query:"});
        } else {
            versionless = q.filtered;
        }
        // the release must not survive in the versionless query, whatever the model returned
        versionless = strip_release(versionless, release);
        if (versionless.empty()) versionless = strip_release(q.base, release);
        q.versionless = versionless;
    }
    return q;
}

} // namespace mrrag::rewrite
