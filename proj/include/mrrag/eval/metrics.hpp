#pragma once

// LLM-as-judge metrics. Each ratio metric is B/A over a vector of judge
// classifications; the formulas live in the *_from functions so they can be
// checked without a judge.

#include "mrrag/error.hpp"
#include "mrrag/llm/backend.hpp"
#include "mrrag/llm/structured.hpp"
#include "mrrag/prompts.hpp"
#include "mrrag/text.hpp"

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

namespace mrrag::eval {

struct QAPair {
    std::string id;
    std::string question;
    std::string ground_truth;
    std::optional<std::string> release;
};

inline constexpr std::array<const char*, 6> metric_names{"answer_correctness",   "answer_relevancy",
                                                          "answer_faithfulness",  "contextual_precision",
                                                          "contextual_recall",    "contextual_relevancy"};

struct MetricScores {
    std::optional<double> answer_correctness;
    std::optional<double> answer_relevancy;
    std::optional<double> answer_faithfulness;
    std::optional<double> contextual_precision;
    std::optional<double> contextual_recall;
    std::optional<double> contextual_relevancy;

    std::optional<double> get(std::string_view name) const {
        if (name == "answer_correctness") return answer_correctness;
        if (name == "answer_relevancy") return answer_relevancy;
        if (name == "answer_faithfulness") return answer_faithfulness;
        if (name == "contextual_precision") return contextual_precision;
        if (name == "contextual_recall") return contextual_recall;
        if (name == "contextual_relevancy") return contextual_relevancy;
        throw ValidationError("unknown metric " + std::string(name));
    }
};

/// B/A for a classification vector; undefined when A = 0.
inline std::optional<double> ratio_from(const std::vector<bool>& verdicts) {
    if (verdicts.empty()) return std::nullopt;
    std::size_t yes = 0;
    for (bool v : verdicts) yes += v ? 1 : 0;
    return static_cast<double>(yes) / static_cast<double>(verdicts.size());
}

/// Rank-weighted precision: sum over relevant positions i of (relevant in
/// prefix i) / i, divided by the number of relevant chunks. Undefined for no
/// chunks, 0 when none is relevant.
inline std::optional<double> contextual_precision_from(const std::vector<bool>& relevant) {
    if (relevant.empty()) return std::nullopt;
    double sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < relevant.size(); ++i) {
        if (!relevant[i]) continue;
        ++hits;
        sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
    return hits == 0 ? 0.0 : sum / static_cast<double>(hits);
}

/// Sentences ending in . ! or ? followed by whitespace (or the end), and lines.
/// A dot inside a number ("17.20") never ends a sentence.
inline std::vector<std::string> split_sentences(const std::string& text) {
    std::vector<std::string> out;
    for (const auto& line : text::split_lines(text)) {
        std::string cur;
        for (std::size_t i = 0; i < line.size(); ++i) {
            cur.push_back(line[i]);
            const char c = line[i];
            const bool terminal = c == '.' || c == '!' || c == '?';
            if (terminal && (i + 1 == line.size() || text::is_space(line[i + 1]))) {
                if (!text::is_blank(cur)) out.push_back(text::trim(cur));
                cur.clear();
            }
        }
        if (!text::is_blank(cur)) out.push_back(text::trim(cur));
    }
    return out;
}

enum class StatementStrategy { llm, sentence };

struct JudgeOptions {
    StatementStrategy statements = StatementStrategy::llm;
    std::string no_answer_marker = "NO_ANSWER";
    double temperature = llm::default_temperature;
    int max_tokens = 512;
};

inline constexpr std::array<const char*, 8> correctness_prompts{
    "judge/correctness_factual_1", "judge/correctness_factual_2", "judge/correctness_units_1",
    "judge/correctness_units_2",   "judge/correctness_meaning_1", "judge/correctness_meaning_2",
    "judge/correctness_scope_1",   "judge/correctness_scope_2"};

namespace detail {

inline std::string first_word(const std::string& reply) {
    std::string word;
    for (char c : text::trim(reply)) {
        if (std::isalpha(static_cast<unsigned char>(c))) {
            word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        } else if (!word.empty()) {
            break;
        } else if (!(c == '"' || c == '\'' || c == '*' || text::is_space(c))) {
            break;
        }
    }
    return word;
}

inline std::optional<bool> parse_yes_no(const std::string& reply) {
    const auto w = first_word(reply);
    if (w == "yes") return true;
    if (w == "no") return false;
    return std::nullopt;
}

inline std::optional<bool> parse_verdict(const std::string& reply) {
    const auto w = first_word(reply);
    if (w == "correct") return true;
    if (w == "incorrect") return false;
    return std::nullopt;
}

inline std::string strip_bullet(std::string line) {
    line = text::trim(line);
    if (line.starts_with("- ") || line.starts_with("* ") || line.starts_with("• ")) {
        return text::trim(line.substr(line.find(' ') + 1));
    }
    std::size_t i = 0;
    while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
    if (i > 0 && i + 1 < line.size() && (line[i] == '.' || line[i] == ')') && line[i + 1] == ' ') {
        return text::trim(line.substr(i + 2));
    }
    return line;
}

} // namespace detail

/// Runs judge prompts. All calls carry the "judge" tag.
class Judge {
public:
    Judge(llm::ChatBackend& backend, const PromptSet& prompts, JudgeOptions opts = {})
        : backend_(backend), prompts_(prompts), opts_(std::move(opts)) {}

    const JudgeOptions& options() const { return opts_; }

    bool is_out_of_scope(const std::string& ground_truth) const {
        return text::trim(ground_truth) == opts_.no_answer_marker;
    }

    std::vector<std::string> extract_statements(const std::string& text) {
        if (text::is_blank(text)) return {};
        if (opts_.statements == StatementStrategy::sentence) return split_sentences(text);
        const std::string prompt = text::render(prompts_.get("judge/statements"), {{"text", text}});
        const std::string reply = backend_.chat(request(prompt));
        std::vector<std::string> out;
        for (const auto& line : text::split_lines(reply)) {
            auto s = detail::strip_bullet(line);
            if (!text::is_blank(s)) out.push_back(s);
        }
        if (out.empty()) out = split_sentences(text);
        return out;
    }

    /// Yes/no classification; an unusable reply after the reprompt counts as "no".
    bool classify(const std::string& prompt_name, const std::map<std::string, std::string>& vars) {
        const std::string prompt = text::render(prompts_.get(prompt_name), vars);
        try {
            return llm::ask_structured(backend_, request(prompt), detail::parse_yes_no, "reply with one word: yes or no.");
        } catch (const MalformedOutputError& e) {
            spdlog::warn("{}: {}; counted as no", prompt_name, e.what());
            return false;
        }
    }

    std::vector<bool> correctness_verdicts(const std::string& q, const std::string& response,
                                           const std::string& ground_truth) {
        const bool out_of_scope = is_out_of_scope(ground_truth);
        const std::string gt = out_of_scope ? std::string("No answer to this question exists in the documentation.") : ground_truth;
        const std::string scope = out_of_scope ? "out-of-scope" : "in-scope";
        std::vector<bool> verdicts;
        for (const char* name : correctness_prompts) {
            const std::string prompt = text::render(
                prompts_.get(name), {{"query", q}, {"ground_truth", gt}, {"response", response}, {"scope", scope}});
            try {
                verdicts.push_back(llm::ask_structured(backend_, request(prompt), detail::parse_verdict,
                                                       "reply with one word: correct or incorrect."));
            } catch (const MalformedOutputError& e) {
                spdlog::warn("{}: {}; counted as incorrect", name, e.what());
                verdicts.push_back(false);
            }
        }
        return verdicts;
    }

    std::optional<double> answer_correctness(const std::string& q, const std::string& response,
                                             const std::string& ground_truth) {
        return ratio_from(correctness_verdicts(q, response, ground_truth));
    }

    std::optional<double> answer_relevancy(const std::string& q, const std::string& response) {
        std::vector<bool> v;
        for (const auto& s : extract_statements(response)) {
            v.push_back(classify("judge/answer_relevancy", {{"query", q}, {"statement", s}}));
        }
        return ratio_from(v);
    }

    std::optional<double> answer_faithfulness(const std::string& response, const std::vector<std::string>& c_q) {
        std::vector<bool> v;
        const std::string context = joined(c_q);
        for (const auto& s : extract_statements(response)) {
            v.push_back(c_q.empty() ? false : classify("judge/faithfulness", {{"statement", s}, {"context", context}}));
        }
        return ratio_from(v);
    }

    std::optional<double> contextual_precision(const std::vector<std::string>& c_q, const std::string& q,
                                               const std::string& ground_truth) {
        std::vector<bool> b;
        for (const auto& chunk : c_q) {
            b.push_back(classify("judge/contextual_precision",
                                 {{"query", q}, {"ground_truth", ground_truth}, {"chunk", chunk}}));
        }
        return contextual_precision_from(b);
    }

    std::optional<double> contextual_recall(const std::string& ground_truth, const std::vector<std::string>& c_q) {
        std::vector<bool> v;
        const std::string context = joined(c_q);
        for (const auto& s : extract_statements(ground_truth)) {
            v.push_back(c_q.empty() ? false : classify("judge/contextual_recall", {{"statement", s}, {"context", context}}));
        }
        return ratio_from(v);
    }

    std::optional<double> contextual_relevancy(const std::string& q, const std::vector<std::string>& c_q) {
        std::vector<bool> v;
        for (const auto& chunk : c_q) {
            for (const auto& s : extract_statements(chunk)) {
                v.push_back(classify("judge/contextual_relevancy", {{"query", q}, {"statement", s}}));
            }
        }
        return ratio_from(v);
    }

    MetricScores score(const QAPair& qa, const std::string& response, const std::vector<std::string>& c_q) {
        MetricScores m;
        m.answer_correctness = answer_correctness(qa.question, response, qa.ground_truth);
        m.answer_relevancy = answer_relevancy(qa.question, response);
        m.answer_faithfulness = answer_faithfulness(response, c_q);
        m.contextual_precision = contextual_precision(c_q, qa.question, qa.ground_truth);
        m.contextual_recall = contextual_recall(qa.ground_truth, c_q);
        m.contextual_relevancy = contextual_relevancy(qa.question, c_q);
        return m;
    }

private:
    llm::ChatRequest request(const std::string& prompt) const {
        return llm::make_request(prompt, llm::tags::judge, opts_.temperature, opts_.max_tokens);
    }

    static std::string joined(const std::vector<std::string>& c_q) {
        std::vector<std::string> parts;
        for (std::size_t i = 0; i < c_q.size(); ++i) parts.push_back("(" + std::to_string(i + 1) + ") " + c_q[i]);
        return text::join(parts, "\n\n");
    }

    llm::ChatBackend& backend_;
    const PromptSet& prompts_;
    JudgeOptions opts_;
};

inline void to_json(nlohmann::json& j, const MetricScores& m) {
    j = nlohmann::json::object();
    for (const char* name : metric_names) {
        const auto v = m.get(name);
        j[name] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    }
}

inline void from_json(const nlohmann::json& j, QAPair& qa) {
    j.at("id").get_to(qa.id);
    j.at("question").get_to(qa.question);
    j.at("ground_truth").get_to(qa.ground_truth);
    if (j.contains("release") && !j.at("release").is_null()) qa.release = j.at("release").get<std::string>();
    if (text::is_blank(qa.ground_truth)) throw ValidationError("QA pair " + qa.id + " has an empty ground truth");
}

} // namespace mrrag::eval
