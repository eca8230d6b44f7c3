#pragma once

// Application configuration: JSON file, then MRRAG_* environment overrides,
// then command-line flags (applied by the CLI).

#include "mrrag/corpus/corpus.hpp"
#include "mrrag/error.hpp"
#include "mrrag/llm/http_backend.hpp"
#include "mrrag/llm/scripted.hpp"
#include "mrrag/pipeline.hpp"

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace mrrag::config {

struct EmbeddingConfig {
    std::string kind = "hash";
    std::string url;
    std::string model;
    std::size_t dim = 64;
};

struct BackendConfig {
    std::string kind = "mock";
    std::string url = "http://127.0.0.1:8000/v1/chat/completions";
    std::string model = "local-model";
    std::string api_key_env = "MRRAG_API_KEY";
    double temperature = llm::default_temperature;
    int max_tokens = 512;
    int retries = 3;
    int backoff_ms = 1000;
    int concurrency = 4;
    int timeout_s = 120;
    std::string mock_script;
    std::string judge_script;
    std::string judge_url;
    std::string judge_model;
    EmbeddingConfig embedding;
};

struct EvalConfig {
    /// "llm" asks the judge to split statements; "sentence" uses the local splitter.
    std::string statement_strategy = "llm";
    std::string no_answer_marker = "NO_ANSWER";
    int jobs = 1;
};

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::vector<std::string> cors_origins;
    long long session_ttl_s = 86400;
    std::string session_log;
    std::string reports_dir = "reports";
};

struct AppConfig {
    BackendConfig backend;
    std::string corpora_root = "corpora";
    corpus::CorpusConfig corpus;
    pipeline::PipelineConfig pipeline;
    std::string prompts_dir;
    EvalConfig eval;
    ServiceConfig service;
    /// Directory relative paths are resolved against (the config file's directory).
    std::filesystem::path base_dir = ".";
    nlohmann::json effective;

    std::filesystem::path resolve(const std::string& p) const {
        if (p.empty()) return {};
        const std::filesystem::path path(p);
        return path.is_absolute() ? path : base_dir / path;
    }
};

inline nlohmann::json defaults_json() {
    const BackendConfig b;
    const corpus::CorpusConfig c;
    const pipeline::PipelineConfig p;
    const EvalConfig e;
    const ServiceConfig s;
    return {
        {"backend",
         {{"kind", b.kind},
          {"url", b.url},
          {"model", b.model},
          {"api_key_env", b.api_key_env},
          {"temperature", b.temperature},
          {"max_tokens", b.max_tokens},
          {"retries", b.retries},
          {"backoff_ms", b.backoff_ms},
          {"concurrency", b.concurrency},
          {"timeout_s", b.timeout_s},
          {"mock_script", b.mock_script},
          {"judge_script", b.judge_script},
          {"judge_url", b.judge_url},
          {"judge_model", b.judge_model},
          {"embedding", {{"kind", b.embedding.kind}, {"url", b.embedding.url}, {"model", b.embedding.model}, {"dim", b.embedding.dim}}}}},
        {"corpus",
         {{"root", "corpora"},
          {"k", c.k},
          {"ps", c.ps},
          {"strip_patterns", c.strip_patterns},
          {"page_window", c.page_window},
          {"page_break", c.default_page_break},
          {"embed_batch", c.embed_batch}}},
        {"retrieval", {{"n_cosine", p.retrieval.n_cosine}, {"n_mmr", p.retrieval.n_mmr}, {"mmr_lambda", p.retrieval.mmr_lambda}}},
        {"pipeline",
         {{"top_m", p.top_m},
          {"enable_rewrite", p.enable_rewrite},
          {"enable_dual_chunk", p.enable_dual_chunk},
          {"enable_reduce", p.enable_reduce},
          {"enable_select", p.enable_select},
          {"baseline_mode", p.baseline_mode},
          {"history_turns", p.history_turns},
          {"filtered_strategy", "llm"},
          {"reduce_jobs", p.reduce_jobs},
          {"prompts_dir", ""}}},
        {"baseline", {{"cap", p.baseline_chunk_cap}, {"overlap", p.baseline_overlap}}},
        {"abstention_phrase", p.abstention_phrase},
        {"eval", {{"statement_strategy", e.statement_strategy}, {"no_answer_marker", e.no_answer_marker}, {"jobs", e.jobs}}},
        {"service",
         {{"host", s.host},
          {"port", s.port},
          {"cors_origins", s.cors_origins},
          {"session_ttl_s", s.session_ttl_s},
          {"session_log", s.session_log},
          {"reports_dir", s.reports_dir}}},
    };
}

namespace detail {

inline void check_known_keys(const nlohmann::json& value, const nlohmann::json& schema, const std::string& prefix) {
    if (!value.is_object()) throw ValidationError("config section '" + prefix + "' must be an object");
    for (const auto& [key, v] : value.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (!schema.contains(key)) throw ValidationError("unknown config key '" + path + "'");
        if (schema.at(key).is_object()) check_known_keys(v, schema.at(key), path);
    }
}

inline void collect_leaves(const nlohmann::json& j, const std::string& prefix,
                           std::map<std::string, std::string>& out) {
    for (const auto& [key, v] : j.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (v.is_object()) {
            collect_leaves(v, path, out);
        } else {
            std::string env = "MRRAG_";
            for (char c : path) env.push_back(c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
            out[env] = path;
        }
    }
}

inline nlohmann::json parse_like(const std::string& raw, const nlohmann::json& like, const std::string& name) {
    try {
        if (like.is_string()) return raw;
        if (like.is_boolean()) {
            const auto v = text::to_lower(text::trim(raw));
            if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
            if (v == "0" || v == "false" || v == "no" || v == "off") return false;
            throw ValidationError("expected a boolean");
        }
        if (like.is_number_integer() || like.is_number_unsigned()) {
            std::size_t used = 0;
            const long long v = std::stoll(raw, &used);
            if (used != text::trim(raw).size()) throw ValidationError("expected an integer");
            return v;
        }
        if (like.is_number()) {
            std::size_t used = 0;
            const double v = std::stod(raw, &used);
            if (used != text::trim(raw).size()) throw ValidationError("expected a number");
            return v;
        }
        return nlohmann::json::parse(raw);
    } catch (const std::exception& e) {
        throw ValidationError("invalid value for " + name + ": " + e.what());
    }
}

inline nlohmann::json& at_path(nlohmann::json& j, const std::string& path) {
    nlohmann::json* cur = &j;
    for (const auto& part : text::split(path, '.')) cur = &(*cur)[part];
    return *cur;
}

inline rewrite::FilterStrategy filter_strategy(const std::string& s) {
    if (s == "llm") return rewrite::FilterStrategy::llm;
    if (s == "static") return rewrite::FilterStrategy::static_stopwords;
    throw ValidationError("pipeline.filtered_strategy must be 'llm' or 'static'");
}

} // namespace detail

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

inline EnvLookup process_env() {
    return [](const std::string& name) -> std::optional<std::string> {
        if (const char* v = std::getenv(name.c_str())) return std::string(v);
        return std::nullopt;
    };
}

/// Applies MRRAG_<SECTION>_<KEY> variables to the matching leaf keys.
inline void apply_env_overrides(nlohmann::json& j, const EnvLookup& env) {
    nlohmann::json defaults = defaults_json();
    std::map<std::string, std::string> leaves;
    detail::collect_leaves(defaults, "", leaves);
    for (const auto& [var, path] : leaves) {
        if (auto value = env(var)) detail::at_path(j, path) = detail::parse_like(*value, detail::at_path(defaults, path), var);
    }
}

/// Builds the typed configuration from a fully merged JSON document.
inline AppConfig from_effective(const nlohmann::json& j, const std::filesystem::path& base_dir) {
    AppConfig cfg;
    cfg.base_dir = base_dir;
    cfg.effective = j;
    try {
        const auto& b = j.at("backend");
        cfg.backend.kind = b.at("kind").get<std::string>();
        cfg.backend.url = b.at("url").get<std::string>();
        cfg.backend.model = b.at("model").get<std::string>();
        cfg.backend.api_key_env = b.at("api_key_env").get<std::string>();
        cfg.backend.temperature = b.at("temperature").get<double>();
        cfg.backend.max_tokens = b.at("max_tokens").get<int>();
        cfg.backend.retries = b.at("retries").get<int>();
        cfg.backend.backoff_ms = b.at("backoff_ms").get<int>();
        cfg.backend.concurrency = b.at("concurrency").get<int>();
        cfg.backend.timeout_s = b.at("timeout_s").get<int>();
        cfg.backend.mock_script = b.at("mock_script").get<std::string>();
        cfg.backend.judge_script = b.at("judge_script").get<std::string>();
        cfg.backend.judge_url = b.at("judge_url").get<std::string>();
        cfg.backend.judge_model = b.at("judge_model").get<std::string>();
        const auto& e = b.at("embedding");
        cfg.backend.embedding.kind = e.at("kind").get<std::string>();
        cfg.backend.embedding.url = e.at("url").get<std::string>();
        cfg.backend.embedding.model = e.at("model").get<std::string>();
        cfg.backend.embedding.dim = e.at("dim").get<std::size_t>();

        const auto& c = j.at("corpus");
        cfg.corpora_root = c.at("root").get<std::string>();
        cfg.corpus.k = c.at("k").get<std::size_t>();
        cfg.corpus.ps = c.at("ps").get<std::size_t>();
        cfg.corpus.strip_patterns = c.at("strip_patterns").get<std::vector<std::string>>();
        cfg.corpus.page_window = c.at("page_window").get<std::size_t>();
        cfg.corpus.default_page_break = c.at("page_break").get<std::string>();
        cfg.corpus.embed_batch = c.at("embed_batch").get<std::size_t>();
        cfg.corpus.baseline_cap = j.at("baseline").at("cap").get<std::size_t>();
        cfg.corpus.baseline_overlap = j.at("baseline").at("overlap").get<double>();

        auto& p = cfg.pipeline;
        const auto& r = j.at("retrieval");
        p.retrieval.n_cosine = r.at("n_cosine").get<std::size_t>();
        p.retrieval.n_mmr = r.at("n_mmr").get<std::size_t>();
        p.retrieval.mmr_lambda = r.at("mmr_lambda").get<double>();
        const auto& pj = j.at("pipeline");
        p.top_m = pj.at("top_m").get<std::size_t>();
        p.enable_rewrite = pj.at("enable_rewrite").get<bool>();
        p.enable_dual_chunk = pj.at("enable_dual_chunk").get<bool>();
        p.enable_reduce = pj.at("enable_reduce").get<bool>();
        p.enable_select = pj.at("enable_select").get<bool>();
        p.baseline_mode = pj.at("baseline_mode").get<bool>();
        p.history_turns = pj.at("history_turns").get<std::size_t>();
        p.filtered_strategy = detail::filter_strategy(pj.at("filtered_strategy").get<std::string>());
        p.reduce_jobs = pj.at("reduce_jobs").get<std::size_t>();
        cfg.prompts_dir = pj.at("prompts_dir").get<std::string>();
        p.k = cfg.corpus.k;
        p.ps = cfg.corpus.ps;
        p.baseline_chunk_cap = cfg.corpus.baseline_cap;
        p.baseline_overlap = cfg.corpus.baseline_overlap;
        p.abstention_phrase = j.at("abstention_phrase").get<std::string>();
        p.temperature = cfg.backend.temperature;
        p.max_tokens = cfg.backend.max_tokens;

        const auto& ev = j.at("eval");
        cfg.eval.statement_strategy = ev.at("statement_strategy").get<std::string>();
        cfg.eval.no_answer_marker = ev.at("no_answer_marker").get<std::string>();
        cfg.eval.jobs = ev.at("jobs").get<int>();

        const auto& s = j.at("service");
        cfg.service.host = s.at("host").get<std::string>();
        cfg.service.port = s.at("port").get<int>();
        cfg.service.cors_origins = s.at("cors_origins").get<std::vector<std::string>>();
        cfg.service.session_ttl_s = s.at("session_ttl_s").get<long long>();
        cfg.service.session_log = s.at("session_log").get<std::string>();
        cfg.service.reports_dir = s.at("reports_dir").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("invalid configuration: ") + e.what());
    }

    if (cfg.backend.kind != "mock" && cfg.backend.kind != "http") {
        throw ValidationError("backend.kind must be 'mock' or 'http'");
    }
    if (cfg.backend.embedding.kind != "hash" && cfg.backend.embedding.kind != "http") {
        throw ValidationError("backend.embedding.kind must be 'hash' or 'http'");
    }
    if (cfg.eval.statement_strategy != "llm" && cfg.eval.statement_strategy != "sentence") {
        throw ValidationError("eval.statement_strategy must be 'llm' or 'sentence'");
    }
    if (cfg.corpus.k == 0) throw ValidationError("corpus.k must be at least 1");
    if (cfg.backend.temperature < 0) throw ValidationError("backend.temperature must be >= 0");
    if (cfg.backend.max_tokens <= 0) throw ValidationError("backend.max_tokens must be > 0");
    if (cfg.backend.retries < 1) throw ValidationError("backend.retries must be >= 1");
    if (cfg.service.port < 0 || cfg.service.port > 65535) throw ValidationError("service.port out of range");
    cfg.pipeline.validate();
    return cfg;
}

/// Loads defaults, overlays the optional config file, then the environment.
inline AppConfig load(const std::optional<std::filesystem::path>& path, const EnvLookup& env = process_env()) {
    nlohmann::json j = defaults_json();
    std::filesystem::path base = ".";
    if (path) {
        nlohmann::json file;
        try {
            file = nlohmann::json::parse(corpus::read_file(*path));
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("invalid config file " + path->string() + ": " + e.what());
        }
        detail::check_known_keys(file, j, "");
        j.merge_patch(file);
        base = path->parent_path().empty() ? std::filesystem::path(".") : path->parent_path();
    }
    apply_env_overrides(j, env);
    return from_effective(j, base);
}

/// Rebuilds the typed config after the effective JSON was edited (CLI flags).
inline AppConfig with_overrides(const AppConfig& cfg, const nlohmann::json& patch) {
    nlohmann::json j = cfg.effective;
    detail::check_known_keys(patch, defaults_json(), "");
    j.merge_patch(patch);
    return from_effective(j, cfg.base_dir);
}

struct Backends {
    std::unique_ptr<llm::ChatBackend> chat;
    std::unique_ptr<llm::ChatBackend> judge;
    std::unique_ptr<llm::EmbeddingBackend> embedder;
};

namespace detail {

inline llm::RetryPolicy retry_policy(const BackendConfig& b) {
    llm::RetryPolicy retry;
    retry.attempts = b.retries;
    retry.initial_backoff = std::chrono::milliseconds(b.backoff_ms);
    return retry;
}

inline std::string api_key(const BackendConfig& b) {
    const char* key = b.api_key_env.empty() ? nullptr : std::getenv(b.api_key_env.c_str());
    return key ? key : "";
}

} // namespace detail

inline std::unique_ptr<llm::EmbeddingBackend> make_embedder(const AppConfig& cfg) {
    const auto& b = cfg.backend;
    if (b.embedding.kind == "hash") return std::make_unique<llm::HashEmbedder>(b.embedding.dim);
    if (b.embedding.url.empty()) throw ConfigError("backend.embedding.url is required for http embeddings");
    llm::HttpBackendConfig ec{b.embedding.url, b.embedding.model, detail::retry_policy(b), b.concurrency};
    return std::make_unique<llm::HttpEmbeddingBackend>(
        ec, std::make_unique<llm::HttplibTransport>(ec.url, detail::api_key(b), std::chrono::seconds(b.timeout_s)));
}

inline Backends make_backends(const AppConfig& cfg) {
    Backends out;
    const auto& b = cfg.backend;
    const auto retry = detail::retry_policy(b);
    const std::string api_key = detail::api_key(b);
    const auto timeout = std::chrono::seconds(b.timeout_s);

    if (b.kind == "mock") {
        if (b.mock_script.empty()) throw ConfigError("backend.mock_script is required for the mock backend");
        out.chat = std::make_unique<llm::ScriptedBackend>(llm::BackendScript::load(cfg.resolve(b.mock_script).string()));
        const std::string judge = b.judge_script.empty() ? b.mock_script : b.judge_script;
        out.judge = std::make_unique<llm::ScriptedBackend>(llm::BackendScript::load(cfg.resolve(judge).string()));
    } else {
        llm::HttpBackendConfig hc{b.url, b.model, retry, b.concurrency};
        out.chat = std::make_unique<llm::HttpChatBackend>(
            hc, std::make_unique<llm::HttplibTransport>(b.url, api_key, timeout));
        llm::HttpBackendConfig jc{b.judge_url.empty() ? b.url : b.judge_url,
                                  b.judge_model.empty() ? b.model : b.judge_model, retry, b.concurrency};
        out.judge = std::make_unique<llm::HttpChatBackend>(
            jc, std::make_unique<llm::HttplibTransport>(jc.url, api_key, timeout));
    }
    out.embedder = make_embedder(cfg);
    return out;
}

} // namespace mrrag::config
