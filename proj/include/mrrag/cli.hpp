#pragma once

// Subcommands ingest | chat | serve | eval. Exit codes: 0 success, 1 runtime
// failure, 2 validation failure.

#include "mrrag/config.hpp"
#include "mrrag/corpus/corpus.hpp"
#include "mrrag/error.hpp"
#include "mrrag/eval/benchmark.hpp"
#include "mrrag/pipeline.hpp"
#include "mrrag/service/server.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

namespace mrrag::cli {

inline constexpr int exit_ok = 0;
inline constexpr int exit_runtime = 1;
inline constexpr int exit_validation = 2;

struct Io {
    std::istream& in;
    std::ostream& out;
    std::ostream& err;
    /// serve returns once this becomes true (set from a signal handler in the binary).
    const std::atomic<bool>* stop = nullptr;
    /// Called with the bound port once serve is listening.
    std::function<void(int)> on_listening;
};

namespace detail {

struct GlobalOptions {
    std::string config;
};

struct IngestOptions {
    std::string release;
    std::string docs;
    std::optional<std::size_t> k;
    std::optional<std::size_t> ps;
    bool overwrite = false;
};

struct ChatOptions {
    std::optional<std::string> release;
    bool verbose = false;
};

struct ServeOptions {
    std::optional<std::string> host;
    std::optional<int> port;
};

struct EvalOptions {
    std::string dataset;
    std::size_t runs = 10;
    std::vector<std::string> systems;
    std::optional<std::string> labels;
    std::optional<std::string> out;
    bool fixed_clock = false;
    std::optional<std::size_t> jobs;
};

inline config::AppConfig load_config(const GlobalOptions& g, const nlohmann::json& patch, std::ostream& err) {
    std::optional<std::filesystem::path> path;
    if (!g.config.empty()) path = g.config;
    auto cfg = config::load(path);
    if (!patch.empty()) cfg = config::with_overrides(cfg, patch);
    err << "effective config: " << cfg.effective.dump() << "\n";
    return cfg;
}

inline std::string page_label(const pipeline::Source& s) { return s.doc_title + ", page " + std::to_string(s.page_index + 1); }

inline void print_answer(const pipeline::Answer& a, bool verbose, std::ostream& out) {
    out << a.text << "\n";
    if (a.ok()) {
        if (a.sources.empty()) {
            out << "Sources: none\n";
        } else {
            out << "Sources:\n";
            for (const auto& s : a.sources) out << "  - " << page_label(s) << "\n";
        }
    }
    if (!verbose) return;
    out << "Standalone queries:\n";
    out << "  Base: " << a.standalone_queries.base << "\n";
    out << "  Filtered: " << a.standalone_queries.filtered << "\n";
    out << "  Versionless: " << a.standalone_queries.versionless.value_or("(none)") << "\n";
    if (a.release) out << "Release: " << *a.release << "\n";
    out << "Timings (ms):";
    for (const auto& [step, ms] : a.timings) out << " " << step << "=" << ms;
    out << " total=" << a.total_ms << "\n";
    for (const auto& w : a.warnings) out << "Warning: " << w << "\n";
}

inline int cmd_ingest(const GlobalOptions& g, const IngestOptions& o, Io& io) {
    nlohmann::json patch = nlohmann::json::object();
    if (o.k) patch["corpus"]["k"] = *o.k;
    if (o.ps) patch["corpus"]["ps"] = *o.ps;
    const auto cfg = load_config(g, patch, io.err);
    if (text::is_blank(o.release)) throw ValidationError("--release must not be empty");
    const auto docs_dir = std::filesystem::path(o.docs);
    if (!std::filesystem::is_directory(docs_dir)) throw ValidationError("document directory not found: " + o.docs);

    corpus::IngestOptions ingest{cfg.corpus.strip_patterns, cfg.corpus.default_page_break, cfg.corpus.page_window};
    const auto raw = corpus::read_document_set(docs_dir, ingest);
    auto embedder = config::make_embedder(cfg);
    auto registry = corpus::CorpusRegistry::open(cfg.resolve(cfg.corpora_root));
    const auto m = corpus::build_corpus(ReleaseId::parse(o.release), raw, cfg.corpus, *embedder, registry, o.overwrite);

    io.out << "release: " << m.release.canonical << "\n"
           << "documents: " << m.doc_count << "\n"
           << "pages: " << m.page_count << "\n"
           << "empty pages: " << m.empty_page_count << "\n"
           << "search chunks: " << m.search_chunk_count << "\n"
           << "context chunks: " << m.context_chunk_count << "\n"
           << "baseline chunks: " << m.baseline_chunk_count << "\n"
           << "k: " << m.k << "\n"
           << "ps: " << m.ps << "\n"
           << "embedding: " << m.embedding_model_id << " (dim " << m.embedding_dim << ")\n"
           << "stored in: " << (*registry.root() / m.release.slug()).string() << "\n";
    return exit_ok;
}

/// Shared runtime objects for chat, serve and eval.
struct Runtime {
    config::AppConfig cfg;
    config::Backends backends;
    corpus::CorpusRegistry registry;
    PromptSet prompts;

    explicit Runtime(config::AppConfig c)
        : cfg(std::move(c)),
          backends(config::make_backends(cfg)),
          registry(corpus::CorpusRegistry::open(cfg.resolve(cfg.corpora_root))),
          prompts(PromptSet::load(cfg.resolve(cfg.prompts_dir))) {}
};

inline int cmd_chat(const GlobalOptions& g, const ChatOptions& o, Io& io) {
    Runtime rt(load_config(g, nlohmann::json::object(), io.err));
    if (rt.registry.empty()) throw ConfigError("no corpora are registered; run ingest first");
    pipeline::Conversation conv(rt.cfg.pipeline.history_turns);
    if (o.release) {
        conv.pinned_release = rt.registry.resolve(*o.release);
        if (!conv.pinned_release) throw UnknownReleaseError(*o.release);
    }
    const pipeline::Engine engine{rt.registry, *rt.backends.chat, *rt.backends.embedder, rt.prompts, rt.cfg.pipeline};
    io.out << "Type a question, or /quit to leave.\n";
    std::string line;
    while (true) {
        io.out << "> " << std::flush;
        if (!std::getline(io.in, line)) break;
        const auto q = text::trim(line);
        if (q.empty()) continue;
        if (q == "/quit" || q == "/exit") break;
        const auto a = pipeline::answer(q, conv, engine);
        if (a.status == pipeline::AnswerStatus::failed) {
            io.err << "error in step " << a.error_step.value_or("unknown") << ": " << a.error.value_or("") << "\n";
            continue;
        }
        print_answer(a, o.verbose, io.out);
    }
    io.out << "\n";
    return exit_ok;
}

inline int cmd_serve(const GlobalOptions& g, const ServeOptions& o, Io& io) {
    nlohmann::json patch = nlohmann::json::object();
    if (o.host) patch["service"]["host"] = *o.host;
    if (o.port) patch["service"]["port"] = *o.port;
    Runtime rt(load_config(g, patch, io.err));
    if (rt.registry.empty()) spdlog::warn("no corpora are registered; chat endpoints will answer 409");

    service::Service svc(service::ServiceDeps{rt.registry, *rt.backends.chat, *rt.backends.embedder, rt.prompts,
                                              rt.cfg.pipeline, rt.cfg.service,
                                              rt.cfg.resolve(rt.cfg.service.reports_dir)});
    const auto& host = rt.cfg.service.host;
    if (!svc.bind(host, rt.cfg.service.port)) {
        io.err << "cannot listen on " << host << ":" << rt.cfg.service.port << " (address in use or unavailable)\n";
        return exit_runtime;
    }
    std::thread server([&] { svc.listen(); });
    svc.wait_until_ready();
    io.out << "listening on http://" << host << ":" << svc.port() << "/api/v1" << std::endl;
    if (io.on_listening) io.on_listening(svc.port());
    while (svc.running() && !(io.stop && io.stop->load())) std::this_thread::sleep_for(std::chrono::milliseconds(50));
    io.out << "shutting down" << std::endl;
    svc.stop();
    server.join();
    return exit_ok;
}

inline int cmd_eval(const GlobalOptions& g, const EvalOptions& o, Io& io) {
    nlohmann::json patch = nlohmann::json::object();
    if (o.jobs) patch["eval"]["jobs"] = *o.jobs;
    Runtime rt(load_config(g, patch, io.err));
    if (o.runs == 0) throw ValidationError("--runs must be at least 1");
    if (rt.cfg.eval.jobs < 1) throw ValidationError("--jobs must be at least 1");

    const auto dataset = eval::load_dataset(o.dataset);
    std::optional<std::map<std::string, double>> labels;
    if (o.labels) labels = eval::load_labels(*o.labels);

    std::vector<eval::SystemSpec> systems;
    const std::vector<std::string> names = o.systems.empty() ? std::vector<std::string>{"full"} : o.systems;
    for (const auto& name : names) systems.push_back(eval::parse_system(name, rt.cfg.pipeline));

    eval::BenchmarkOptions opts;
    opts.runs = o.runs;
    opts.jobs = static_cast<std::size_t>(rt.cfg.eval.jobs);
    opts.fixed_clock = o.fixed_clock;
    opts.judge.statements = rt.cfg.eval.statement_strategy == "sentence" ? eval::StatementStrategy::sentence
                                                                         : eval::StatementStrategy::llm;
    opts.judge.no_answer_marker = rt.cfg.eval.no_answer_marker;
    opts.judge.temperature = rt.cfg.backend.temperature;
    opts.judge.max_tokens = rt.cfg.backend.max_tokens;

    nlohmann::json header = {{"command", "eval"},
                             {"dataset", std::filesystem::path(o.dataset).filename().string()},
                             {"labels", o.labels ? nlohmann::json(std::filesystem::path(*o.labels).filename().string())
                                                 : nlohmann::json(nullptr)},
                             {"fixed_clock", o.fixed_clock},
                             {"backend", rt.cfg.backend.kind},
                             {"model", rt.cfg.backend.model},
                             {"statement_strategy", rt.cfg.eval.statement_strategy}};

    const eval::BenchmarkContext ctx{rt.registry, *rt.backends.chat, *rt.backends.embedder, *rt.backends.judge,
                                     rt.prompts};
    const auto report = eval::run_benchmark(dataset, systems, ctx, opts, labels, header);

    std::filesystem::path out_dir;
    if (o.out) {
        out_dir = *o.out;
    } else {
        std::string stamp = report.generated_at;
        std::erase_if(stamp, [](char c) { return c == ':' || c == '-'; });
        out_dir = rt.cfg.resolve(rt.cfg.service.reports_dir) / ("eval-" + stamp);
    }
    eval::write_report(report, out_dir);

    io.out << eval::report_csv(report);
    if (report.comparisons) {
        for (const auto& c : *report.comparisons) {
            io.out << c.system << " vs " << c.against << ":\n";
            for (const auto& r : c.results) {
                char buf[160];
                std::snprintf(buf, sizeof buf, "  %-22s p=%.4g A12=%.3f %s%s\n", r.metric.c_str(), r.p_value, r.a12,
                              eval::to_string(r.magnitude), r.significant ? " significant" : "");
                io.out << buf;
            }
        }
    }
    if (report.correlations) {
        io.out << "Pearson r against labels:\n";
        for (const auto& c : *report.correlations) {
            io.out << "  " << c.metric << ": " << (c.r ? std::to_string(*c.r) : std::string("undefined")) << " (n=" << c.n
                   << ")\n";
        }
    }
    io.out << "report written to " << out_dir.string() << "\n";
    return exit_ok;
}

} // namespace detail

/// Parses arguments and runs one subcommand.
inline int run_cli(int argc, const char* const* argv, Io& io) {
    CLI::App app{"Multi-release documentation question answering"};
    app.set_version_flag("--version", MRRAG_VERSION);
    app.require_subcommand(1);

    detail::GlobalOptions g;
    app.add_option("-c,--config", g.config, "Configuration JSON file")->check(CLI::ExistingFile);

    detail::IngestOptions ingest;
    auto* ingest_cmd = app.add_subcommand("ingest", "Build and persist one release's corpus");
    ingest_cmd->add_option("--release", ingest.release, "Release name, e.g. \"Release 17.20\"")->required();
    ingest_cmd->add_option("--docs", ingest.docs, "Directory holding docs.json and the document files")->required();
    ingest_cmd->add_option("--k", ingest.k, "Search chunks per page");
    ingest_cmd->add_option("--ps", ingest.ps, "Context padding in characters");
    ingest_cmd->add_flag("--overwrite", ingest.overwrite, "Replace an existing corpus for the release");

    detail::ChatOptions chat;
    auto* chat_cmd = app.add_subcommand("chat", "Interactive question answering");
    chat_cmd->add_option("--release", chat.release, "Pin the session to a release");
    chat_cmd->add_flag("-v,--verbose", chat.verbose, "Show standalone queries and timings");

    detail::ServeOptions serve;
    auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP API");
    serve_cmd->add_option("--host", serve.host, "Listen address");
    serve_cmd->add_option("--port", serve.port, "Listen port (0 picks a free port)");

    detail::EvalOptions ev;
    auto* eval_cmd = app.add_subcommand("eval", "Benchmark one or more systems on a QA dataset");
    eval_cmd->add_option("--dataset", ev.dataset, "JSONL file of {id, question, ground_truth}")
        ->required()
        ->check(CLI::ExistingFile);
    eval_cmd->add_option("--runs", ev.runs, "Repetitions per question");
    eval_cmd->add_option("--system", ev.systems,
                         "full | baseline | ablation:<base|rewrite|dualchunk|reduce|select joined by +>; repeat to "
                         "compare, the first is compared against the others");
    eval_cmd->add_option("--labels", ev.labels, "JSONL of {id, label} adequacy labels")->check(CLI::ExistingFile);
    eval_cmd->add_option("--out", ev.out, "Output directory for the report files");
    eval_cmd->add_flag("--fixed-clock", ev.fixed_clock, "Deterministic timings and timestamp");
    eval_cmd->add_option("--jobs", ev.jobs, "Parallel question workers");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, io.out, io.err);
        return code == 0 ? exit_ok : exit_validation;
    }

    try {
        if (*ingest_cmd) return detail::cmd_ingest(g, ingest, io);
        if (*chat_cmd) return detail::cmd_chat(g, chat, io);
        if (*serve_cmd) return detail::cmd_serve(g, serve, io);
        if (*eval_cmd) return detail::cmd_eval(g, ev, io);
    } catch (const ValidationError& e) {
        io.err << "error: " << e.what() << "\n";
        return exit_validation;
    } catch (const ConfigError& e) {
        io.err << "error: " << e.what() << "\n";
        return exit_validation;
    } catch (const UnknownReleaseError& e) {
        io.err << "error: " << e.what() << "\n";
        return exit_validation;
    } catch (const std::exception& e) {
        io.err << "error: " << e.what() << "\n";
        return exit_runtime;
    }
    return exit_validation;
}

} // namespace mrrag::cli
