#pragma once

#include "mrrag/corpus/chunking.hpp"
#include "mrrag/corpus/ingest.hpp"
#include "mrrag/corpus/types.hpp"
#include "mrrag/corpus/vector_store.hpp"
#include "mrrag/error.hpp"
#include "mrrag/llm/backend.hpp"
#include "mrrag/release.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

namespace mrrag::corpus {

struct CorpusConfig {
    std::size_t k = 2;
    std::size_t ps = 500;
    std::vector<std::string> strip_patterns;
    std::size_t page_window = 3000;
    std::string default_page_break = "\f";
    std::size_t baseline_cap = 3000;
    double baseline_overlap = 0.25;
    std::size_t embed_batch = 64;
};

/// Search chunks, the context chunks they resolve to, and one embedding per search chunk.
class ChunkIndex {
public:
    ChunkIndex() = default;

    ChunkIndex(std::vector<SearchChunk> search, std::vector<ContextChunk> context, VectorStore store)
        : search_(std::move(search)), context_(std::move(context)), store_(std::move(store)) {
        if (store_.size() != search_.size()) throw Error("every search chunk needs exactly one vector");
        for (std::size_t i = 0; i < context_.size(); ++i) {
            if (!by_id_.emplace(context_[i].id, i).second) throw Error("duplicate context chunk id " + context_[i].id);
        }
        for (std::size_t i = 0; i < search_.size(); ++i) {
            if (store_.id(i) != search_[i].id) throw Error("vector row order does not match search chunks");
            if (!by_id_.contains(search_[i].context_id)) {
                throw Error("search chunk " + search_[i].id + " has no context chunk");
            }
        }
    }

    const std::vector<SearchChunk>& search_chunks() const { return search_; }
    const std::vector<ContextChunk>& context_chunks() const { return context_; }
    const VectorStore& store() const { return store_; }

    const ContextChunk& context_of(const SearchChunk& sc) const { return context_[by_id_.at(sc.context_id)]; }

    const ContextChunk* find_context(const std::string& id) const {
        const auto it = by_id_.find(id);
        return it == by_id_.end() ? nullptr : &context_[it->second];
    }

private:
    std::vector<SearchChunk> search_;
    std::vector<ContextChunk> context_;
    VectorStore store_;
    std::unordered_map<std::string, std::size_t> by_id_;
};

/// One release's built corpus: the dual-chunk index plus the single-chunk
/// (baseline) index over the same pages. Immutable once built.
struct Corpus {
    CorpusManifest manifest;
    ChunkIndex dual;
    ChunkIndex single;
};

/// Embeds every search chunk, `batch` texts per backend call. Context chunks
/// are never embedded.
inline VectorStore embed_corpus(const std::vector<SearchChunk>& chunks, llm::EmbeddingBackend& backend,
                                std::size_t batch = 64) {
    if (chunks.empty()) return {};
    std::vector<std::string> ids;
    std::vector<llm::Embedding> rows;
    ids.reserve(chunks.size());
    rows.reserve(chunks.size());
    batch = std::max<std::size_t>(1, batch);
    for (std::size_t start = 0; start < chunks.size(); start += batch) {
        std::vector<std::string> texts;
        for (std::size_t i = start; i < std::min(chunks.size(), start + batch); ++i) texts.push_back(chunks[i].text);
        auto vectors = backend.embed(texts);
        if (vectors.size() != texts.size()) throw BackendError("embedding backend returned wrong row count", true);
        for (auto& v : vectors) rows.push_back(std::move(v));
    }
    for (const auto& c : chunks) ids.push_back(c.id);
    if (!rows.empty()) llm::check_dimensions(rows, rows.front().size());
    return VectorStore::from_rows(std::move(ids), rows);
}

/// Chunks and embeds preprocessed documents into an in-memory corpus.
inline std::shared_ptr<const Corpus> make_corpus(const ReleaseId& release, const std::vector<Document>& docs,
                                                 const CorpusConfig& cfg, llm::EmbeddingBackend& embedder) {
    auto dual = dual_chunk(docs, cfg.k, cfg.ps);
    auto single = build_baseline_chunks(docs, cfg.baseline_cap, cfg.baseline_overlap);
    auto dual_store = embed_corpus(dual.search, embedder, cfg.embed_batch);
    auto single_store = embed_corpus(single.search, embedder, cfg.embed_batch);
    if (!dual_store.empty() && !single_store.empty() && dual_store.dim() != single_store.dim()) {
        throw Error("embedding dimension drift between chunk sets");
    }

    auto corpus = std::make_shared<Corpus>();
    auto& m = corpus->manifest;
    m.release = release;
    m.k = cfg.k;
    m.ps = cfg.ps;
    m.doc_count = docs.size();
    for (const auto& d : docs) {
        for (const auto& p : d.pages) (p.text.empty() ? m.empty_page_count : m.page_count)++;
    }
    m.search_chunk_count = dual.search.size();
    m.context_chunk_count = dual.context.size();
    m.baseline_chunk_count = single.context.size();
    m.baseline_cap = cfg.baseline_cap;
    m.baseline_overlap = cfg.baseline_overlap;
    m.embedding_model_id = embedder.model_id();
    m.embedding_dim = dual_store.empty() ? single_store.dim() : dual_store.dim();

    corpus->dual = ChunkIndex(std::move(dual.search), std::move(dual.context), std::move(dual_store));
    corpus->single = ChunkIndex(std::move(single.search), std::move(single.context), std::move(single_store));
    return corpus;
}

namespace detail {

template <typename T>
void write_jsonl(const std::filesystem::path& path, const std::vector<T>& items) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    for (const auto& item : items) out << nlohmann::json(item).dump() << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

template <typename T>
std::vector<T> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    std::vector<T> items;
    std::string line;
    while (std::getline(in, line)) {
        if (text::is_blank(line)) continue;
        items.push_back(nlohmann::json::parse(line).get<T>());
    }
    return items;
}

inline std::vector<std::string> ids_of(const std::vector<SearchChunk>& chunks) {
    std::vector<std::string> ids;
    ids.reserve(chunks.size());
    for (const auto& c : chunks) ids.push_back(c.id);
    return ids;
}

} // namespace detail

/// Corpus directory layout:
///   manifest.json, search_chunks.jsonl, context_chunks.jsonl,
///   embeddings.f32 + embeddings.json,
///   baseline_chunks.jsonl, baseline_embeddings.f32 + baseline_embeddings.json
inline void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "manifest.json");
        out << nlohmann::json(corpus.manifest).dump(2) << '\n';
        if (!out) throw IoError("failed writing manifest");
    }
    detail::write_jsonl(dir / "search_chunks.jsonl", corpus.dual.search_chunks());
    detail::write_jsonl(dir / "context_chunks.jsonl", corpus.dual.context_chunks());
    corpus.dual.store().save(dir, "embeddings");
    detail::write_jsonl(dir / "baseline_chunks.jsonl", corpus.single.context_chunks());
    corpus.single.store().save(dir, "baseline_embeddings");
}

inline std::shared_ptr<const Corpus> load_corpus(const std::filesystem::path& dir) {
    auto corpus = std::make_shared<Corpus>();
    try {
        corpus->manifest = nlohmann::json::parse(read_file(dir / "manifest.json")).get<CorpusManifest>();
        auto search = detail::read_jsonl<SearchChunk>(dir / "search_chunks.jsonl");
        auto context = detail::read_jsonl<ContextChunk>(dir / "context_chunks.jsonl");
        auto store = VectorStore::load(dir, "embeddings", detail::ids_of(search));
        corpus->dual = ChunkIndex(std::move(search), std::move(context), std::move(store));

        auto single_context = detail::read_jsonl<ContextChunk>(dir / "baseline_chunks.jsonl");
        std::vector<SearchChunk> single_search;
        for (const auto& cc : single_context) {
            single_search.push_back({cc.id, cc.doc_id, cc.page_index, 0, cc.text, cc.id});
        }
        auto single_store = VectorStore::load(dir, "baseline_embeddings", detail::ids_of(single_search));
        corpus->single = ChunkIndex(std::move(single_search), std::move(single_context), std::move(single_store));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("corrupt corpus at " + dir.string() + ": " + e.what());
    }
    if (corpus->manifest.search_chunk_count != corpus->manifest.k * corpus->manifest.page_count) {
        throw IoError("corpus manifest violates search_chunk_count = k * page_count at " + dir.string());
    }
    return corpus;
}

/// Known releases and their corpora. Lookups take a shared lock; registration
/// is exclusive. Corpora load lazily and are cached as immutable snapshots.
class CorpusRegistry {
public:
    struct Entry {
        ReleaseId release;
        std::optional<std::filesystem::path> dir;
        std::shared_ptr<const Corpus> corpus;
    };

    CorpusRegistry() = default;

    /// Opens (or starts) a registry rooted at `root`, reading `registry.json` when present.
    static CorpusRegistry open(const std::filesystem::path& root) {
        CorpusRegistry reg;
        reg.root_ = root;
        const auto index = root / "registry.json";
        if (std::filesystem::exists(index)) {
            const auto j = nlohmann::json::parse(read_file(index));
            for (const auto& r : j.at("releases")) {
                auto id = ReleaseId::parse(r.value("raw", r.at("release").get<std::string>()));
                reg.entries_[id.canonical] = Entry{id, root / r.at("dir").get<std::string>(), nullptr};
            }
        }
        return reg;
    }

    CorpusRegistry(CorpusRegistry&& other) noexcept {
        std::unique_lock lock(other.mutex_);
        root_ = std::move(other.root_);
        entries_ = std::move(other.entries_);
    }

    CorpusRegistry& operator=(CorpusRegistry&& other) noexcept {
        if (this != &other) {
            std::scoped_lock lock(mutex_, other.mutex_);
            root_ = std::move(other.root_);
            entries_ = std::move(other.entries_);
        }
        return *this;
    }

    const std::optional<std::filesystem::path>& root() const { return root_; }

    bool contains(const ReleaseId& release) const {
        std::shared_lock lock(mutex_);
        return entries_.contains(release.canonical);
    }

    bool empty() const {
        std::shared_lock lock(mutex_);
        return entries_.empty();
    }

    /// Registered releases in ascending release order.
    std::vector<ReleaseId> releases() const {
        std::shared_lock lock(mutex_);
        std::vector<ReleaseId> out;
        for (const auto& [_, e] : entries_) out.push_back(e.release);
        std::sort(out.begin(), out.end());
        return out;
    }

    std::optional<ReleaseId> latest() const {
        auto all = releases();
        if (all.empty()) return std::nullopt;
        return all.back();
    }

    /// Resolves a release name against registered canonical forms.
    std::optional<ReleaseId> resolve(const std::string& name) const {
        if (text::is_blank(name)) return std::nullopt;
        const auto wanted = ReleaseId::parse(name);
        std::shared_lock lock(mutex_);
        for (const auto& [canonical, e] : entries_) {
            if (text::to_lower(canonical) == text::to_lower(wanted.canonical) ||
                text::to_lower(e.release.raw) == text::to_lower(wanted.raw)) {
                return e.release;
            }
        }
        return std::nullopt;
    }

    /// Registers an in-memory corpus (used by tests and by build_corpus).
    void add(std::shared_ptr<const Corpus> corpus, bool overwrite = false) {
        std::unique_lock lock(mutex_);
        const auto& rel = corpus->manifest.release;
        if (entries_.contains(rel.canonical) && !overwrite) {
            throw ValidationError(rel.canonical + " is already registered (use overwrite)");
        }
        std::optional<std::filesystem::path> dir;
        if (root_) dir = *root_ / rel.slug();
        entries_[rel.canonical] = Entry{rel, dir, std::move(corpus)};
    }

    std::shared_ptr<const Corpus> get(const ReleaseId& release) const {
        {
            std::shared_lock lock(mutex_);
            const auto it = entries_.find(release.canonical);
            if (it == entries_.end()) throw UnknownReleaseError(release.raw);
            if (it->second.corpus) return it->second.corpus;
        }
        std::unique_lock lock(mutex_);
        auto& entry = entries_.at(release.canonical);
        if (!entry.corpus) {
            if (!entry.dir) throw IoError("no corpus data for " + release.canonical);
            entry.corpus = load_corpus(*entry.dir);
        }
        return entry.corpus;
    }

    /// Writes registry.json under the root (no-op for in-memory registries).
    void persist_index() const {
        if (!root_) return;
        std::shared_lock lock(mutex_);
        nlohmann::json j = {{"releases", nlohmann::json::array()}};
        for (const auto& [canonical, e] : entries_) {
            j["releases"].push_back({{"release", canonical}, {"raw", e.release.raw}, {"dir", e.release.slug()}});
        }
        std::filesystem::create_directories(*root_);
        const auto tmp = *root_ / "registry.json.tmp";
        {
            std::ofstream out(tmp);
            out << j.dump(2) << '\n';
            if (!out) throw IoError("failed writing registry index");
        }
        std::filesystem::rename(tmp, *root_ / "registry.json");
    }

private:
    std::optional<std::filesystem::path> root_;
    mutable std::shared_mutex mutex_;
    mutable std::map<std::string, Entry> entries_;
};

/// Builds, persists and registers one release's corpus. Output is staged in a
/// temporary directory and moved into place only after every file is written.
inline CorpusManifest build_corpus(const ReleaseId& release, const std::vector<RawDocument>& raw_docs,
                                   const CorpusConfig& cfg, llm::EmbeddingBackend& embedder,
                                   CorpusRegistry& registry, bool overwrite = false) {
    if (registry.contains(release) && !overwrite) {
        throw ValidationError(release.canonical + " is already registered; pass --overwrite to rebuild");
    }
    const StripPatterns strip(cfg.strip_patterns);
    const auto docs = preprocess_documents(raw_docs, release, strip);
    if (docs.empty()) throw ValidationError("no documents for " + release.canonical);
    auto corpus = make_corpus(release, docs, cfg, embedder);

    if (registry.root()) {
        const auto final_dir = *registry.root() / release.slug();
        const auto staging = *registry.root() / (".staging-" + release.slug());
        std::error_code ec;
        std::filesystem::remove_all(staging, ec);
        try {
            save_corpus(*corpus, staging);
            std::filesystem::remove_all(final_dir);
            std::filesystem::rename(staging, final_dir);
        } catch (...) {
            std::filesystem::remove_all(staging, ec);
            throw;
        }
    }
    registry.add(corpus, overwrite);
    registry.persist_index();
    spdlog::info("built corpus {}: {} docs, {} pages, {} search chunks", release.canonical,
                 corpus->manifest.doc_count, corpus->manifest.page_count, corpus->manifest.search_chunk_count);
    return corpus->manifest;
}

/// The corpus for `release`, or the latest registered release when none is given.
inline std::shared_ptr<const Corpus> select_corpus(const std::optional<ReleaseId>& release,
                                                   const CorpusRegistry& registry) {
    if (registry.empty()) throw ConfigError("no corpora are registered");
    if (release) {
        if (!registry.contains(*release)) throw UnknownReleaseError(release->raw);
        return registry.get(*release);
    }
    return registry.get(*registry.latest());
}

} // namespace mrrag::corpus
