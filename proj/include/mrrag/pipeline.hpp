#pragma once

// The five-step answer pipeline: rewrite, retrieve, reduce, select, generate.

#include "mrrag/corpus/corpus.hpp"
#include "mrrag/error.hpp"
#include "mrrag/llm/backend.hpp"
#include "mrrag/llm/structured.hpp"
#include "mrrag/prompts.hpp"
#include "mrrag/retrieval.hpp"
#include "mrrag/rewrite.hpp"
#include "mrrag/text.hpp"
#include "mrrag/timing.hpp"

#include <algorithm>
#include <future>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

namespace mrrag::pipeline {

/// Timing keys, one per pipeline step.
namespace steps {
inline constexpr const char* rewrite = "rewrite";
inline constexpr const char* retrieval = "retrieval";
inline constexpr const char* reduce = "reduce";
inline constexpr const char* select = "select";
inline constexpr const char* generate = "generate";
} // namespace steps

struct ReducedChunk {
    std::string context_chunk_id;
    std::string doc_id;
    std::string doc_title;
    std::size_t page_index = 0;
    std::string text;
    bool empty = false;
};

struct PipelineConfig {
    std::size_t k = 2;
    std::size_t ps = 500;
    retrieval::RetrievalConfig retrieval;
    std::size_t top_m = 3;
    bool enable_rewrite = true;
    bool enable_dual_chunk = true;
    bool enable_reduce = true;
    bool enable_select = true;
    bool baseline_mode = false;
    std::size_t baseline_chunk_cap = 3000;
    double baseline_overlap = 0.25;
    std::string abstention_phrase = "I don't know";
    std::size_t history_turns = 10;
    rewrite::FilterStrategy filtered_strategy = rewrite::FilterStrategy::llm;
    double temperature = llm::default_temperature;
    int max_tokens = 512;
    /// Reductions in flight at once within one answer.
    std::size_t reduce_jobs = 1;
    ClockFactory clock = steady_clock_factory();

    void validate() const {
        retrieval.validate();
        if (top_m == 0) throw ValidationError("top_m must be at least 1");
        if (baseline_mode && (enable_dual_chunk || enable_reduce)) {
            throw ValidationError("baseline mode requires dual chunking and reduction to be disabled");
        }
        if (baseline_chunk_cap == 0) throw ValidationError("baseline cap must be positive");
        if (!(baseline_overlap >= 0.0 && baseline_overlap < 0.5)) {
            throw ValidationError("baseline overlap must be in [0, 0.5)");
        }
        if (text::is_blank(abstention_phrase)) throw ValidationError("abstention phrase must not be empty");
    }

    nlohmann::json flags_json() const {
        return {{"enable_rewrite", enable_rewrite},
                {"enable_dual_chunk", enable_dual_chunk},
                {"enable_reduce", enable_reduce},
                {"enable_select", enable_select},
                {"baseline_mode", baseline_mode}};
    }
};

struct Source {
    std::string doc_title;
    std::size_t page_index = 0;
    std::string doc_id;

    friend bool operator==(const Source&, const Source&) = default;
};

enum class AnswerStatus { ok, unknown_release, failed };

struct Answer {
    std::string text;
    bool abstained = false;
    std::vector<Source> sources;
    /// Ids of the chunks given to generation, in the order they were given.
    std::vector<std::string> used_chunks;
    std::vector<std::string> used_chunk_texts;
    std::map<std::string, double> timings;
    double total_ms = 0.0;
    rewrite::StandaloneQueries standalone_queries;
    std::optional<std::string> release;
    std::size_t retrieved_chunks = 0;
    AnswerStatus status = AnswerStatus::ok;
    std::optional<std::string> error;
    std::optional<std::string> error_step;
    bool select_fallback = false;
    std::vector<std::string> warnings;

    bool ok() const { return status == AnswerStatus::ok; }
};

/// Conversation state carried across answers for one user.
struct Conversation {
    rewrite::ConversationHistory history;
    std::optional<ReleaseId> pinned_release;

    explicit Conversation(std::size_t max_turns = 10) : history(max_turns) {}
};

/// Everything the pipeline reads besides the conversation.
struct Engine {
    const corpus::CorpusRegistry& registry;
    llm::ChatBackend& chat;
    llm::EmbeddingBackend& embedder;
    const PromptSet& prompts;
    PipelineConfig cfg;
};

namespace detail {

/// Text after the last `label` (case-insensitive), or nullopt when absent.
inline std::optional<std::string> after_label(const std::string& reply, const std::string& label) {
    const std::string lower = text::to_lower(reply);
    const auto pos = lower.rfind(text::to_lower(label));
    if (pos == std::string::npos) return std::nullopt;
    return text::trim(reply.substr(pos + label.size()));
}

inline bool is_none_sentinel(std::string s) {
    s = text::trim(s);
    while (!s.empty() && (s.back() == '.' || s.back() == '"')) s.pop_back();
    while (!s.empty() && s.front() == '"') s.erase(s.begin());
    return text::to_lower(s) == "none";
}

inline std::string normalize_apostrophes(std::string s) { return text::replace_all(std::move(s), "’", "'"); }

inline std::string numbered(const std::vector<std::string>& texts) {
    std::vector<std::string> parts;
    for (std::size_t i = 0; i < texts.size(); ++i) parts.push_back("[" + std::to_string(i + 1) + "] " + texts[i]);
    return text::join(parts, "\n\n");
}

} // namespace detail

/// Whether a generated reply is the abstention phrase (case-insensitive prefix).
inline bool is_abstention(const std::string& reply, const std::string& phrase) {
    std::string r = text::trim(detail::normalize_apostrophes(reply));
    while (!r.empty() && (r.front() == '"' || r.front() == '\'')) r.erase(r.begin());
    return text::starts_with_icase(r, text::trim(detail::normalize_apostrophes(phrase)));
}

inline ReducedChunk passthrough(const corpus::ContextChunk& chunk) {
    return {chunk.id, chunk.doc_id, chunk.metadata_title, chunk.page_index, chunk.text, text::is_blank(chunk.text)};
}

/// Parses a reduction reply: the text after the final "EXTRACT:" line.
inline std::optional<std::string> parse_extract(const std::string& reply) {
    return detail::after_label(reply, "EXTRACT:");
}

/// Extracts the query-relevant part of one context chunk. A backend failure
/// keeps the chunk unreduced and records a warning.
inline ReducedChunk reduce_context(const std::string& query, const corpus::ContextChunk& chunk,
                                   llm::ChatBackend& backend, const PromptSet& prompts,
                                   const PipelineConfig& cfg = {}, std::vector<std::string>* warnings = nullptr) {
    ReducedChunk out = passthrough(chunk);
    const std::string prompt = text::render(prompts.get("reduce"), {{"query", query}, {"chunk", chunk.text}});
    try {
        const std::string extract = llm::ask_structured(
            backend, llm::make_request(prompt, llm::tags::reduce, cfg.temperature, cfg.max_tokens), parse_extract,
            "end the reply with a line \"EXTRACT:\" followed by the relevant text, or \"EXTRACT: NONE\".");
        if (detail::is_none_sentinel(extract) || text::is_blank(extract)) {
            out.text.clear();
            out.empty = true;
        } else {
            out.text = extract;
            out.empty = false;
        }
    } catch (const Error& e) {
        spdlog::warn("reduction of {} failed, using the chunk unreduced: {}", chunk.id, e.what());
        if (warnings) warnings->push_back("reduce " + chunk.id + ": " + e.what());
    }
    return out;
}

/// Parses "RANKING: 3,1,4" into zero-based indexes below `count`, dropping
/// repeats and out-of-range numbers.
inline std::optional<std::vector<std::size_t>> parse_ranking(const std::string& reply, std::size_t count) {
    const auto tail = detail::after_label(reply, "RANKING:");
    if (!tail) return std::nullopt;
    const std::string first_line = text::split_lines(*tail).front();
    static const std::regex number(R"(\d+)");
    std::vector<std::size_t> order;
    std::set<std::size_t> seen;
    for (auto it = std::sregex_iterator(first_line.begin(), first_line.end(), number); it != std::sregex_iterator();
         ++it) {
        const auto n = std::stoull(it->str());
        if (n >= 1 && n <= count && seen.insert(n - 1).second) order.push_back(n - 1);
    }
    if (order.empty()) return std::nullopt;
    return order;
}

struct Selection {
    std::vector<ReducedChunk> chunks;
    bool fallback = false;
};

/// Ranks chunks with the model and keeps the top `m`. Chunks the ranking left
/// out follow in retrieval order; an unusable ranking falls back to retrieval order.
inline Selection select_context(const std::string& query, const std::vector<ReducedChunk>& reduced, std::size_t m,
                                llm::ChatBackend& backend, const PromptSet& prompts, const PipelineConfig& cfg = {}) {
    Selection sel;
    if (reduced.empty()) return sel;
    std::vector<std::string> texts;
    for (const auto& r : reduced) texts.push_back(r.text);
    const std::string prompt =
        text::render(prompts.get("select"), {{"query", query}, {"chunks", detail::numbered(texts)}});
    std::vector<std::size_t> order;
    try {
        order = llm::ask_structured(
            backend, llm::make_request(prompt, llm::tags::select, cfg.temperature, cfg.max_tokens),
            [&](const std::string& reply) { return parse_ranking(reply, reduced.size()); },
            "end the reply with a line \"RANKING:\" followed by excerpt numbers separated by commas.");
    } catch (const MalformedOutputError& e) {
        spdlog::warn("context selection fell back to retrieval order: {}", e.what());
        sel.fallback = true;
    }
    std::set<std::size_t> used(order.begin(), order.end());
    for (std::size_t i = 0; i < reduced.size(); ++i) {
        if (!used.contains(i)) order.push_back(i);
    }
    for (std::size_t i = 0; i < order.size() && sel.chunks.size() < m; ++i) sel.chunks.push_back(reduced[order[i]]);
    return sel;
}

struct Generated {
    std::string text;
    bool abstained = false;
};

inline Generated generate_answer(const std::string& query, const std::vector<ReducedChunk>& selected,
                                 llm::ChatBackend& backend, const PromptSet& prompts, const PipelineConfig& cfg = {}) {
    if (selected.empty()) return {cfg.abstention_phrase, true};
    std::vector<std::string> texts;
    for (const auto& r : selected) texts.push_back(r.text);
    const std::string prompt =
        text::render(prompts.get("generate"), {{"query", query},
                                               {"chunks", detail::numbered(texts)},
                                               {"abstention", cfg.abstention_phrase}});
    const std::string reply =
        text::trim(backend.chat(llm::make_request(prompt, llm::tags::generate, cfg.temperature, cfg.max_tokens)));
    if (is_abstention(reply, cfg.abstention_phrase)) return {cfg.abstention_phrase, true};
    return {reply, false};
}

namespace detail {

template <typename Fn>
auto run_step(const char* step, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const UnknownReleaseError&) {
        throw;
    } catch (const StepError&) {
        throw;
    } catch (const std::exception& e) {
        throw StepError(step, e.what());
    }
}

inline std::vector<ReducedChunk> reduce_all(const std::string& query, const std::vector<corpus::ContextChunk>& chunks,
                                            const Engine& engine, std::vector<std::string>& warnings) {
    std::vector<ReducedChunk> out(chunks.size());
    const std::size_t jobs = std::max<std::size_t>(1, engine.cfg.reduce_jobs);
    if (jobs == 1) {
        for (std::size_t i = 0; i < chunks.size(); ++i) {
            out[i] = reduce_context(query, chunks[i], engine.chat, engine.prompts, engine.cfg, &warnings);
        }
        return out;
    }
    std::vector<std::vector<std::string>> per_chunk(chunks.size());
    for (std::size_t start = 0; start < chunks.size(); start += jobs) {
        std::vector<std::future<ReducedChunk>> batch;
        for (std::size_t i = start; i < std::min(chunks.size(), start + jobs); ++i) {
            batch.push_back(std::async(std::launch::async, [&, i] {
                return reduce_context(query, chunks[i], engine.chat, engine.prompts, engine.cfg, &per_chunk[i]);
            }));
        }
        for (std::size_t j = 0; j < batch.size(); ++j) out[start + j] = batch[j].get();
    }
    for (auto& w : per_chunk) warnings.insert(warnings.end(), w.begin(), w.end());
    return out;
}

/// The release named by an override, the query, the pinned session release,
/// or none (latest). Throws UnknownReleaseError for unregistered names.
inline rewrite::ExtractedRelease resolve_release(const std::string& query, const Conversation& conv,
                                                 const Engine& engine, const std::optional<std::string>& release_override) {
    rewrite::ExtractedRelease rel;
    auto pinned = [&](const ReleaseId& id) {
        rel.found = true;
        rel.canonical = id.canonical;
        if (auto mention = rewrite::find_release_mention(query)) {
            try {
                if (ReleaseId::parse(*mention) == id) rel.matched_text = *mention;
            } catch (const ValidationError&) {
            }
        }
    };
    if (release_override && !text::is_blank(*release_override)) {
        auto id = engine.registry.resolve(*release_override);
        if (!id) throw UnknownReleaseError(*release_override);
        pinned(*id);
        return rel;
    }
    if (engine.cfg.enable_rewrite) {
        rewrite::RewriteOptions opts;
        opts.filtered = engine.cfg.filtered_strategy;
        opts.temperature = engine.cfg.temperature;
        rel = rewrite::extract_release(query, engine.registry.releases(), engine.chat, engine.prompts, opts);
        if (rel.unregistered) throw UnknownReleaseError(*rel.unregistered);
        if (rel.found) return rel;
        rel = {};
    }
    if (conv.pinned_release) pinned(*conv.pinned_release);
    return rel;
}

} // namespace detail

/// Answers one question and, on success, appends the exchange to the conversation.
inline Answer answer(const std::string& query, Conversation& conv, const Engine& engine,
                     const std::optional<std::string>& release_override = std::nullopt) {
    const auto& cfg = engine.cfg;
    cfg.validate();
    if (text::is_blank(query)) throw ValidationError("query must not be empty");
    if (engine.registry.empty()) throw ConfigError("no corpora are registered");

    auto clock = cfg.clock ? cfg.clock() : std::make_unique<SteadyClock>();
    StepTimer timer(*clock);
    Answer ans;
    auto finish = [&] {
        ans.timings = timer.milliseconds();
        ans.total_ms = timer.total_ms();
    };

    try {
        rewrite::ExtractedRelease release;
        if (cfg.enable_rewrite) {
            detail::run_step(steps::rewrite, [&] {
                release = detail::resolve_release(query, conv, engine, release_override);
                rewrite::RewriteOptions opts;
                opts.filtered = cfg.filtered_strategy;
                opts.temperature = cfg.temperature;
                ans.standalone_queries =
                    rewrite::rewrite_queries(query, conv.history, release, engine.chat, engine.prompts, opts);
            });
            timer.mark(steps::rewrite);
        } else {
            release = detail::resolve_release(query, conv, engine, release_override);
            ans.standalone_queries = {query, query, std::nullopt};
        }

        retrieval::RetrievalResult retrieved;
        detail::run_step(steps::retrieval, [&] {
            std::optional<ReleaseId> wanted;
            if (release.found) wanted = ReleaseId::parse(*release.canonical);
            const auto corpus = corpus::select_corpus(wanted, engine.registry);
            ans.release = corpus->manifest.release.canonical;
            const bool single = cfg.baseline_mode || !cfg.enable_dual_chunk;
            if (single && (corpus->manifest.baseline_cap != cfg.baseline_chunk_cap ||
                           corpus->manifest.baseline_overlap != cfg.baseline_overlap)) {
                throw ConfigError("corpus " + corpus->manifest.release.canonical +
                                  " was built with different baseline window settings");
            }
            retrieved =
                retrieval::retrieve(ans.standalone_queries, single ? corpus->single : corpus->dual, cfg.retrieval,
                                    engine.embedder);
            ans.retrieved_chunks = retrieved.context_chunks.size();
        });
        timer.mark(steps::retrieval);

        std::vector<ReducedChunk> reduced;
        if (cfg.enable_reduce) {
            reduced = detail::run_step(steps::reduce, [&] {
                return detail::reduce_all(query, retrieved.context_chunks, engine, ans.warnings);
            });
            timer.mark(steps::reduce);
        } else {
            for (const auto& c : retrieved.context_chunks) reduced.push_back(passthrough(c));
        }
        std::erase_if(reduced, [](const ReducedChunk& r) { return r.empty; });

        std::vector<ReducedChunk> selected;
        if (cfg.enable_select) {
            if (!reduced.empty()) {
                auto sel = detail::run_step(steps::select, [&] {
                    return select_context(query, reduced, cfg.top_m, engine.chat, engine.prompts, cfg);
                });
                selected = std::move(sel.chunks);
                ans.select_fallback = sel.fallback;
                if (sel.fallback) ans.warnings.push_back("select: ranking unusable, retrieval order used");
                timer.mark(steps::select);
            }
        } else {
            selected.assign(reduced.begin(), reduced.begin() + static_cast<std::ptrdiff_t>(std::min(cfg.top_m, reduced.size())));
        }

        const auto generated = detail::run_step(
            steps::generate, [&] { return generate_answer(query, selected, engine.chat, engine.prompts, cfg); });
        timer.mark(steps::generate);

        ans.text = generated.text;
        ans.abstained = generated.abstained;
        for (const auto& s : selected) {
            ans.used_chunks.push_back(s.context_chunk_id);
            ans.used_chunk_texts.push_back(s.text);
            Source src{s.doc_title, s.page_index, s.doc_id};
            if (std::find(ans.sources.begin(), ans.sources.end(), src) == ans.sources.end()) ans.sources.push_back(src);
        }
        finish();
        conv.history.append_exchange(query, ans.text);
        return ans;
    } catch (const UnknownReleaseError& e) {
        timer.mark(cfg.enable_rewrite ? steps::rewrite : steps::retrieval);
        ans.status = AnswerStatus::unknown_release;
        ans.text = e.what();
        ans.error = e.what();
        ans.error_step = cfg.enable_rewrite ? steps::rewrite : steps::retrieval;
    } catch (const StepError& e) {
        timer.mark(e.step());
        ans.status = AnswerStatus::failed;
        ans.error = e.what();
        ans.error_step = e.step();
        ans.text = "The " + e.step() + " step failed: " + e.what();
    }
    ans.abstained = false;
    finish();
    return ans;
}

inline void to_json(nlohmann::json& j, const Source& s) {
    j = {{"doc_title", s.doc_title}, {"page_index", s.page_index}, {"doc_id", s.doc_id}};
}

inline nlohmann::json queries_json(const rewrite::StandaloneQueries& q) {
    nlohmann::json j = {{"base", q.base}, {"filtered", q.filtered}, {"versionless", nullptr}};
    if (q.versionless) j["versionless"] = *q.versionless;
    return j;
}

inline const char* to_string(AnswerStatus s) {
    switch (s) {
    case AnswerStatus::ok: return "ok";
    case AnswerStatus::unknown_release: return "unknown_release";
    case AnswerStatus::failed: return "failed";
    }
    return "ok";
}

inline void to_json(nlohmann::json& j, const Answer& a) {
    j = {{"answer", a.text},
         {"abstained", a.abstained},
         {"sources", a.sources},
         {"used_chunks", a.used_chunks},
         {"standalone_queries", queries_json(a.standalone_queries)},
         {"timings", a.timings},
         {"total_ms", a.total_ms},
         {"release", a.release ? nlohmann::json(*a.release) : nlohmann::json(nullptr)},
         {"retrieved_chunks", a.retrieved_chunks},
         {"status", to_string(a.status)},
         {"select_fallback", a.select_fallback},
         {"warnings", a.warnings}};
    if (a.error) j["error"] = *a.error;
    if (a.error_step) j["step"] = *a.error_step;
}

} // namespace mrrag::pipeline
