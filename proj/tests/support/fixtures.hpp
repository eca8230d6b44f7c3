#pragma once

// Shared fixture plumbing for the unit and acceptance suites.

#include "mrrag/config.hpp"
#include "mrrag/corpus/corpus.hpp"
#include "mrrag/llm/scripted.hpp"
#include "mrrag/pipeline.hpp"
#include "mrrag/prompts.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#ifndef MRRAG_FIXTURE_DIR
#error "MRRAG_FIXTURE_DIR must point at tests/fixtures"
#endif

namespace mrrag::testing {

inline std::filesystem::path fixture_dir() { return MRRAG_FIXTURE_DIR; }

inline std::filesystem::path fixture(const std::string& name) { return fixture_dir() / name; }

inline nlohmann::json read_json(const std::filesystem::path& p) { return nlohmann::json::parse(corpus::read_file(p)); }

/// Directory removed on destruction.
class TempDir {
public:
    TempDir() {
        std::random_device rd;
        std::mt19937_64 rng((static_cast<std::uint64_t>(rd()) << 32) ^ rd());
        path_ = std::filesystem::temp_directory_path() / ("mrrag-test-" + std::to_string(rng()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

/// Chat backend answering through a callable; records tags in call order.
class FnBackend : public llm::ChatBackend {
public:
    explicit FnBackend(std::function<std::string(const llm::ChatRequest&)> fn) : fn_(std::move(fn)) {}

    std::string chat(const llm::ChatRequest& request) override {
        request.validate();
        tags_.push_back(request.tag);
        prompts_.push_back(request.rendered());
        return fn_(request);
    }

    const std::vector<std::string>& tags() const { return tags_; }
    const std::vector<std::string>& prompts() const { return prompts_; }

private:
    std::function<std::string(const llm::ChatRequest&)> fn_;
    std::vector<std::string> tags_;
    std::vector<std::string> prompts_;
};

/// Text between <name> and </name>, or empty.
inline std::string element(const std::string& prompt, const std::string& name) {
    const auto open = "<" + name + ">";
    const auto b = prompt.find(open);
    if (b == std::string::npos) return {};
    const auto e = prompt.find("</" + name + ">", b);
    if (e == std::string::npos) return {};
    return prompt.substr(b + open.size(), e - b - open.size());
}

/// Fixture configuration with the corpus root moved under `root`.
inline config::AppConfig fixture_config(const std::filesystem::path& root = {}) {
    auto cfg = config::load(fixture("config.json"), [](const std::string&) { return std::nullopt; });
    if (!root.empty()) cfg = config::with_overrides(cfg, {{"corpus", {{"root", root.string()}}}});
    return cfg;
}

inline std::vector<corpus::RawDocument> fixture_docs(const std::string& dir, const config::AppConfig& cfg) {
    corpus::IngestOptions opts{cfg.corpus.strip_patterns, cfg.corpus.default_page_break, cfg.corpus.page_window};
    return corpus::read_document_set(fixture("docs") / dir, opts);
}

inline const char* const release_12 = "Release 12";
inline const char* const release_17_20 = "Release 17.20";

/// Both fixture releases built in memory, with the scripted chat and judge
/// backends and the hash embedder the fixture config selects.
struct World {
    config::AppConfig cfg;
    corpus::CorpusRegistry registry;
    llm::ScriptedBackend chat;
    llm::ScriptedBackend judge;
    llm::HashEmbedder embedder;
    PromptSet prompts;

    World()
        : cfg(fixture_config()),
          chat(llm::BackendScript::load(fixture("mock_script.json").string())),
          judge(llm::BackendScript::load(fixture("judge_script.json").string())),
          embedder(cfg.backend.embedding.dim),
          prompts(PromptSet::defaults()) {
        corpus::build_corpus(ReleaseId::parse(release_12), fixture_docs("r12", cfg), cfg.corpus, embedder, registry);
        corpus::build_corpus(ReleaseId::parse(release_17_20), fixture_docs("r17_20", cfg), cfg.corpus, embedder,
                             registry);
    }

    pipeline::Engine engine(const pipeline::PipelineConfig& p) { return {registry, chat, embedder, prompts, p}; }
    pipeline::Engine engine() { return engine(cfg.pipeline); }
};

/// Copies the fixture config and scripts into `dir`, so the corpus root and the
/// report directory land under it.
inline std::filesystem::path stage_fixture_config(const std::filesystem::path& dir) {
    for (const char* f : {"config.json", "mock_script.json", "judge_script.json"}) {
        std::filesystem::copy_file(fixture(f), dir / f, std::filesystem::copy_options::overwrite_existing);
    }
    return dir / "config.json";
}

} // namespace mrrag::testing
