#pragma once

// Benchmark runs: pipeline answers for every (QA pair, run), judge scores,
// per-run means, statistical comparisons and persisted reports.

#include "mrrag/corpus/corpus.hpp"
#include "mrrag/error.hpp"
#include "mrrag/eval/metrics.hpp"
#include "mrrag/eval/stats.hpp"
#include "mrrag/pipeline.hpp"

#include <atomic>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

namespace mrrag::eval {

struct SystemSpec {
    std::string name;
    pipeline::PipelineConfig cfg;
};

/// "full", "baseline", or "ablation:<steps>" where steps are base, rewrite,
/// dualchunk, reduce, select joined by '+'.
inline SystemSpec parse_system(const std::string& name, const pipeline::PipelineConfig& base) {
    SystemSpec spec{name, base};
    auto& c = spec.cfg;
    c.baseline_mode = false;
    if (name == "full") {
        c.enable_rewrite = c.enable_dual_chunk = c.enable_reduce = c.enable_select = true;
        return spec;
    }
    if (name == "baseline") {
        c.baseline_mode = true;
        c.enable_dual_chunk = c.enable_reduce = false;
        c.enable_rewrite = c.enable_select = true;
        return spec;
    }
    const std::string prefix = "ablation:";
    if (!name.starts_with(prefix) || name.size() == prefix.size()) {
        throw ValidationError("unknown system '" + name + "' (expected full, baseline or ablation:<steps>)");
    }
    c.enable_rewrite = c.enable_dual_chunk = c.enable_reduce = c.enable_select = false;
    for (const auto& step : text::split(name.substr(prefix.size()), '+')) {
        if (step == "base") continue;
        if (step == "rewrite") {
            c.enable_rewrite = true;
        } else if (step == "dualchunk") {
            c.enable_dual_chunk = true;
        } else if (step == "reduce") {
            c.enable_reduce = true;
        } else if (step == "select") {
            c.enable_select = true;
        } else {
            throw ValidationError("unknown ablation step '" + step + "' (expected base, rewrite, dualchunk, reduce, select)");
        }
    }
    return spec;
}

struct RunRecord {
    std::string system;
    std::string qa_id;
    std::size_t run_index = 0;
    pipeline::Answer answer;
    /// Texts of the chunks given to generation, in selection order.
    std::vector<std::string> c_q;
    MetricScores scores;
    bool failed = false;
    std::string error;
};

struct TimingSummary {
    std::map<std::string, double> mean_ms;
    std::map<std::string, double> percent;
    double total_ms = 0.0;
};

struct SystemSummary {
    std::string name;
    nlohmann::json flags;
    std::size_t runs = 0;
    std::size_t records = 0;
    std::size_t failures = 0;
    std::map<std::string, std::optional<double>> means;
    /// One mean per run (over that run's defined scores); these are the
    /// samples compared across systems.
    std::map<std::string, std::vector<double>> per_run_means;
    TimingSummary timings;
};

struct Comparison {
    std::string system;
    std::string against;
    std::vector<StatComparison> results;
};

struct Correlation {
    std::string metric;
    std::optional<double> r;
    std::size_t n = 0;
};

struct BenchmarkOptions {
    std::size_t runs = 1;
    std::size_t jobs = 1;
    JudgeOptions judge;
    bool fixed_clock = false;
};

struct BenchmarkContext {
    const corpus::CorpusRegistry& registry;
    llm::ChatBackend& chat;
    llm::EmbeddingBackend& embedder;
    llm::ChatBackend& judge;
    const PromptSet& prompts;
};

inline std::vector<QAPair> load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read dataset " + path.string());
    std::vector<QAPair> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::is_blank(line)) continue;
        try {
            out.push_back(nlohmann::json::parse(line).get<QAPair>());
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (out.empty()) throw ValidationError("dataset " + path.string() + " is empty");
    return out;
}

/// Adequacy labels keyed by qa_id (or id): 1/"adequate", 0/"inadequate".
inline std::map<std::string, double> load_labels(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read labels " + path.string());
    std::map<std::string, double> out;
    std::string line;
    while (std::getline(in, line)) {
        if (text::is_blank(line)) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            const auto& label = j.at("label");
            double v = 0.0;
            if (label.is_string()) {
                const auto s = text::to_lower(label.get<std::string>());
                if (s == "adequate") {
                    v = 1.0;
                } else if (s == "inadequate") {
                    v = 0.0;
                } else {
                    throw ValidationError("label must be adequate/inadequate or 1/0");
                }
            } else {
                v = label.get<double>();
            }
            out[j.contains("qa_id") ? j.at("qa_id").get<std::string>() : j.at("id").get<std::string>()] = v;
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("invalid labels line in " + path.string() + ": " + e.what());
        }
    }
    return out;
}

/// Answers and scores every (run, QA pair). Records come back in (run, QA)
/// order regardless of `jobs`. Each pair gets a fresh conversation.
inline std::vector<RunRecord> run_system(const std::vector<QAPair>& dataset, const SystemSpec& system,
                                         const BenchmarkContext& ctx, const BenchmarkOptions& opts) {
    if (dataset.empty()) throw ValidationError("dataset must not be empty");
    if (opts.runs == 0) throw ValidationError("runs must be at least 1");
    pipeline::PipelineConfig cfg = system.cfg;
    if (opts.fixed_clock) cfg.clock = fixed_clock_factory();
    cfg.validate();
    const pipeline::Engine engine{ctx.registry, ctx.chat, ctx.embedder, ctx.prompts, cfg};

    const std::size_t total = dataset.size() * opts.runs;
    std::vector<RunRecord> records(total);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        Judge judge(ctx.judge, ctx.prompts, opts.judge);
        for (std::size_t i = next++; i < total; i = next++) {
            const auto& qa = dataset[i % dataset.size()];
            RunRecord& rec = records[i];
            rec.system = system.name;
            rec.qa_id = qa.id;
            rec.run_index = i / dataset.size();
            try {
                pipeline::Conversation conv(cfg.history_turns);
                rec.answer = pipeline::answer(qa.question, conv, engine);
                if (!rec.answer.ok()) {
                    rec.failed = true;
                    rec.error = rec.answer.error.value_or("answer failed");
                    continue;
                }
                rec.c_q = rec.answer.used_chunk_texts;
                rec.scores = judge.score(qa, rec.answer.text, rec.c_q);
            } catch (const std::exception& e) {
                rec.failed = true;
                rec.error = e.what();
            }
            if (rec.failed) spdlog::warn("{} {} run {} failed: {}", system.name, qa.id, rec.run_index, rec.error);
        }
    };
    const std::size_t jobs = std::clamp<std::size_t>(opts.jobs, 1, total);
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    return records;
}

inline SystemSummary summarize(const SystemSpec& system, const std::vector<RunRecord>& records, std::size_t runs) {
    SystemSummary s;
    s.name = system.name;
    s.flags = system.cfg.flags_json();
    s.runs = runs;
    s.records = records.size();
    for (const char* metric : metric_names) {
        double sum = 0.0;
        std::size_t count = 0;
        std::vector<double> run_sum(runs, 0.0);
        std::vector<std::size_t> run_count(runs, 0);
        for (const auto& r : records) {
            if (r.failed) continue;
            if (const auto v = r.scores.get(metric)) {
                sum += *v;
                ++count;
                run_sum[r.run_index] += *v;
                ++run_count[r.run_index];
            }
        }
        s.means[metric] = count ? std::optional<double>(sum / static_cast<double>(count)) : std::nullopt;
        auto& samples = s.per_run_means[metric];
        for (std::size_t i = 0; i < runs; ++i) {
            if (run_count[i]) samples.push_back(run_sum[i] / static_cast<double>(run_count[i]));
        }
    }
    std::size_t ok = 0;
    for (const auto& r : records) {
        if (r.failed) {
            ++s.failures;
            continue;
        }
        ++ok;
        for (const auto& [step, ms] : r.answer.timings) s.timings.mean_ms[step] += ms;
        s.timings.total_ms += r.answer.total_ms;
    }
    if (ok) {
        for (auto& [step, ms] : s.timings.mean_ms) ms /= static_cast<double>(ok);
        s.timings.total_ms /= static_cast<double>(ok);
        for (const auto& [step, ms] : s.timings.mean_ms) {
            s.timings.percent[step] = s.timings.total_ms > 0 ? 100.0 * ms / s.timings.total_ms : 0.0;
        }
    }
    return s;
}

/// Per-metric comparison of two systems' per-run means. Needs at least two
/// runs on each side; metrics short of that are skipped.
inline Comparison compare_systems(const SystemSummary& a, const SystemSummary& b) {
    Comparison c{a.name, b.name, {}};
    for (const char* metric : metric_names) {
        const auto& xs = a.per_run_means.at(metric);
        const auto& ys = b.per_run_means.at(metric);
        if (xs.size() < 2 || ys.size() < 2) continue;
        c.results.push_back(compare(metric, xs, ys));
    }
    return c;
}

/// Pearson correlation between adequacy labels and the ground-truth metrics,
/// over the first run of `records`.
inline std::vector<Correlation> label_correlations(const std::vector<RunRecord>& records,
                                                   const std::map<std::string, double>& labels) {
    std::vector<Correlation> out;
    for (const char* metric : {"answer_correctness", "contextual_precision", "contextual_recall"}) {
        std::vector<double> xs;
        std::vector<double> ys;
        for (const auto& r : records) {
            if (r.run_index != 0 || r.failed) continue;
            const auto label = labels.find(r.qa_id);
            const auto v = r.scores.get(metric);
            if (label == labels.end() || !v) continue;
            xs.push_back(*v);
            ys.push_back(label->second);
        }
        out.push_back({metric, pearson(xs, ys), xs.size()});
    }
    return out;
}

struct BenchmarkReport {
    std::string generated_at;
    nlohmann::json header;
    std::vector<SystemSummary> systems;
    std::optional<std::vector<Comparison>> comparisons;
    std::optional<std::vector<Correlation>> correlations;
    std::vector<RunRecord> records;
};

inline std::string utc_timestamp(bool fixed) {
    if (fixed) return "1970-01-01T00:00:00Z";
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Runs the primary system and every other system; the first entry of
/// `systems` is compared against each of the rest.
inline BenchmarkReport run_benchmark(const std::vector<QAPair>& dataset, const std::vector<SystemSpec>& systems,
                                     const BenchmarkContext& ctx, const BenchmarkOptions& opts,
                                     const std::optional<std::map<std::string, double>>& labels = std::nullopt,
                                     nlohmann::json header = nlohmann::json::object()) {
    if (systems.empty()) throw ValidationError("at least one system is required");
    BenchmarkReport report;
    report.generated_at = utc_timestamp(opts.fixed_clock);
    header["runs"] = opts.runs;
    header["jobs"] = opts.jobs;
    header["dataset_size"] = dataset.size();
    header["systems"] = nlohmann::json::array();
    for (const auto& s : systems) header["systems"].push_back({{"name", s.name}, {"flags", s.cfg.flags_json()}});
    report.header = std::move(header);

    std::vector<std::vector<RunRecord>> per_system;
    for (const auto& system : systems) {
        spdlog::info("evaluating {} ({} runs x {} questions)", system.name, opts.runs, dataset.size());
        auto records = run_system(dataset, system, ctx, opts);
        report.systems.push_back(summarize(system, records, opts.runs));
        per_system.push_back(std::move(records));
    }
    if (opts.runs >= 2 && systems.size() >= 2) {
        report.comparisons.emplace();
        for (std::size_t i = 1; i < report.systems.size(); ++i) {
            report.comparisons->push_back(compare_systems(report.systems[0], report.systems[i]));
        }
    }
    if (labels) report.correlations = label_correlations(per_system.front(), *labels);
    for (auto& recs : per_system) {
        for (auto& r : recs) report.records.push_back(std::move(r));
    }
    return report;
}

inline nlohmann::json optional_json(const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline nlohmann::json to_json(const SystemSummary& s) {
    nlohmann::json means = nlohmann::json::object();
    for (const auto& [m, v] : s.means) means[m] = optional_json(v);
    return {{"name", s.name},
            {"flags", s.flags},
            {"runs", s.runs},
            {"records", s.records},
            {"failures", s.failures},
            {"means", means},
            {"per_run_means", s.per_run_means},
            {"timings", {{"mean_ms", s.timings.mean_ms}, {"percent", s.timings.percent}, {"total_ms", s.timings.total_ms}}}};
}

inline nlohmann::json to_json(const RunRecord& r) {
    return {{"system", r.system},
            {"qa_id", r.qa_id},
            {"run_index", r.run_index},
            {"answer", r.answer},
            {"c_q", r.c_q},
            {"scores", r.scores},
            {"failed", r.failed},
            {"error", r.error}};
}

inline nlohmann::json to_json(const BenchmarkReport& report) {
    nlohmann::json j = {{"generated_at", report.generated_at}, {"header", report.header}};
    j["systems"] = nlohmann::json::array();
    for (const auto& s : report.systems) j["systems"].push_back(to_json(s));
    if (report.comparisons) {
        j["statistics"] = nlohmann::json::array();
        for (const auto& c : *report.comparisons) {
            j["statistics"].push_back({{"system", c.system}, {"against", c.against}, {"results", c.results}});
        }
    }
    if (report.correlations) {
        j["correlations"] = nlohmann::json::array();
        for (const auto& c : *report.correlations) {
            j["correlations"].push_back({{"metric", c.metric}, {"pearson_r", optional_json(c.r)}, {"n", c.n}});
        }
    }
    return j;
}

namespace detail {

inline std::string csv_number(const std::optional<double>& v) {
    if (!v) return "";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return buf;
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    return "\"" + text::replace_all(s, "\"", "\"\"") + "\"";
}

inline void write_text(const std::filesystem::path& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << body;
    if (!out) throw IoError("failed writing " + path.string());
}

} // namespace detail

inline std::string report_csv(const BenchmarkReport& report) {
    std::string out = "metric";
    for (const auto& s : report.systems) out += "," + detail::csv_field(s.name);
    out += "\n";
    for (const char* metric : metric_names) {
        out += metric;
        for (const auto& s : report.systems) out += "," + detail::csv_number(s.means.at(metric));
        out += "\n";
    }
    return out;
}

/// Writes report.json, report.csv, records.jsonl and, with labels, correlations.csv.
inline void write_report(const BenchmarkReport& report, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    detail::write_text(dir / "report.json", to_json(report).dump(2) + "\n");
    detail::write_text(dir / "report.csv", report_csv(report));
    std::string lines;
    for (const auto& r : report.records) lines += to_json(r).dump() + "\n";
    detail::write_text(dir / "records.jsonl", lines);
    if (report.correlations) {
        std::string csv = "metric,pearson_r,n\n";
        for (const auto& c : *report.correlations) {
            csv += c.metric + "," + detail::csv_number(c.r) + "," + std::to_string(c.n) + "\n";
        }
        detail::write_text(dir / "correlations.csv", csv);
    }
}

} // namespace mrrag::eval
