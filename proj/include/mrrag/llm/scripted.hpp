#pragma once

#include "mrrag/error.hpp"
#include "mrrag/llm/backend.hpp"
#include "mrrag/text.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace mrrag::llm {

/// One scripted reply. All present conditions must hold for the rule to fire:
/// `tag` equals the request tag, every `contains` entry occurs in the rendered
/// prompt (case-insensitive), every `section` entry occurs inside the named
/// <section>...</section> element of the prompt, and `match` (ECMAScript
/// regex) is found in the prompt.
/// With a regex, the response is expanded as a match format, so `$1` inserts
/// the first capture group.
struct ScriptRule {
    std::optional<std::string> tag;
    std::vector<std::string> contains;
    std::map<std::string, std::vector<std::string>> section;
    std::optional<std::string> match;
    std::string response;
    /// When set, the rule raises a BackendError with this message instead.
    std::optional<std::string> error;
    bool retryable = false;
};

struct BackendScript {
    std::vector<ScriptRule> rules;
    std::string default_response;

    static BackendScript from_json(const nlohmann::json& j) {
        BackendScript script;
        const nlohmann::json* rules = &j;
        if (j.is_object()) {
            script.default_response = j.value("default", std::string{});
            rules = &j.at("rules");
        }
        for (const auto& r : *rules) {
            ScriptRule rule;
            if (r.contains("tag")) rule.tag = r.at("tag").get<std::string>();
            if (r.contains("match")) rule.match = r.at("match").get<std::string>();
            if (r.contains("contains")) {
                if (r.at("contains").is_string()) {
                    rule.contains.push_back(r.at("contains").get<std::string>());
                } else {
                    rule.contains = r.at("contains").get<std::vector<std::string>>();
                }
            }
            if (r.contains("section")) {
                for (const auto& [name, v] : r.at("section").items()) {
                    rule.section[name] = v.is_string() ? std::vector<std::string>{v.get<std::string>()}
                                                       : v.get<std::vector<std::string>>();
                }
            }
            rule.response = r.value("response", std::string{});
            if (r.contains("error")) rule.error = r.at("error").get<std::string>();
            rule.retryable = r.value("retryable", false);
            script.rules.push_back(std::move(rule));
        }
        return script;
    }

    static BackendScript load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open mock script: " + path);
        try {
            return from_json(nlohmann::json::parse(in));
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("invalid mock script " + path + ": " + e.what());
        }
    }
};

struct CallRecord {
    std::string tag;
    std::string prompt;
    std::string response;
};

/// Deterministic offline chat backend driven by a BackendScript. Calls are
/// serialized so the call log order is the order requests were made.
class ScriptedBackend : public ChatBackend {
public:
    explicit ScriptedBackend(BackendScript script) : script_(std::move(script)) {
        for (const auto& rule : script_.rules) {
            if (rule.match) {
                try {
                    regexes_.emplace_back(std::regex(*rule.match, std::regex::ECMAScript));
                } catch (const std::regex_error& e) {
                    throw ConfigError("invalid mock rule pattern '" + *rule.match + "': " + e.what());
                }
            } else {
                regexes_.emplace_back(std::nullopt);
            }
        }
    }

    std::string chat(const ChatRequest& request) override {
        request.validate();
        std::lock_guard lock(mutex_);
        const std::string prompt = request.rendered();
        std::string response = script_.default_response;
        const ScriptRule* fired = nullptr;
        for (std::size_t i = 0; i < script_.rules.size(); ++i) {
            const auto& rule = script_.rules[i];
            if (rule.tag && *rule.tag != request.tag) continue;
            bool ok = true;
            for (const auto& needle : rule.contains) {
                if (!text::contains_icase(prompt, needle)) {
                    ok = false;
                    break;
                }
            }
            for (const auto& [name, needles] : rule.section) {
                const auto body = element(prompt, name);
                for (const auto& needle : needles) {
                    if (!body || !text::contains_icase(*body, needle)) {
                        ok = false;
                        break;
                    }
                }
                if (!ok) break;
            }
            if (!ok) continue;
            if (regexes_[i]) {
                std::smatch m;
                if (!std::regex_search(prompt, m, *regexes_[i])) continue;
                response = m.format(rule.response);
            } else {
                response = rule.response;
            }
            fired = &rule;
            break;
        }
        log_.push_back({request.tag, prompt, fired && fired->error ? std::string{} : response});
        if (fired && fired->error) throw BackendError(*fired->error, fired->retryable);
        if (text::is_blank(response)) throw BackendError("empty completion", false);
        return response;
    }

    std::vector<CallRecord> calls() const {
        std::lock_guard lock(mutex_);
        return log_;
    }

    std::vector<std::string> tag_log() const {
        std::lock_guard lock(mutex_);
        std::vector<std::string> out;
        out.reserve(log_.size());
        for (const auto& c : log_) out.push_back(c.tag);
        return out;
    }

    void clear_log() {
        std::lock_guard lock(mutex_);
        log_.clear();
    }

private:
    static std::optional<std::string> element(const std::string& prompt, const std::string& name) {
        const std::string open = "<" + name + ">";
        const std::string close = "</" + name + ">";
        const auto begin = prompt.find(open);
        if (begin == std::string::npos) return std::nullopt;
        const auto end = prompt.find(close, begin + open.size());
        if (end == std::string::npos) return std::nullopt;
        return prompt.substr(begin + open.size(), end - begin - open.size());
    }

    BackendScript script_;
    std::vector<std::optional<std::regex>> regexes_;
    mutable std::mutex mutex_;
    std::vector<CallRecord> log_;
};

/// Deterministic pseudo-embedding: each token of the text contributes signed
/// unit weights to `features_per_token` hashed dimensions (seeded FNV-1a), and
/// the sum is L2-normalized. Text with no tokens embeds to the zero vector.
class HashEmbedder : public EmbeddingBackend {
public:
    explicit HashEmbedder(std::size_t dim = 64, std::uint64_t seed = 0x6d72726167ULL, int features_per_token = 4)
        : dim_(dim), seed_(seed), features_(features_per_token) {
        if (dim_ == 0) throw ConfigError("embedding dimension must be positive");
    }

    Embedding embed_one(std::string_view s) const {
        std::vector<double> acc(dim_, 0.0);
        for (const auto& tok : text::tokenize(s)) {
            for (int f = 0; f < features_; ++f) {
                const std::uint64_t h = hash(tok, static_cast<std::uint64_t>(f));
                const std::size_t idx = static_cast<std::size_t>(h % dim_);
                acc[idx] += ((h >> 32) & 1U) ? 1.0 : -1.0;
            }
        }
        double norm = 0.0;
        for (double v : acc) norm += v * v;
        norm = std::sqrt(norm);
        Embedding out(dim_, 0.0F);
        if (norm > 0.0) {
            for (std::size_t i = 0; i < dim_; ++i) out[i] = static_cast<float>(acc[i] / norm);
        }
        return out;
    }

    std::vector<Embedding> embed(std::span<const std::string> texts) override {
        std::vector<Embedding> out;
        out.reserve(texts.size());
        for (const auto& t : texts) out.push_back(embed_one(t));
        return out;
    }

    std::string model_id() const override {
        return "hash-embedding-d" + std::to_string(dim_) + "-s" + std::to_string(seed_);
    }

    std::size_t dim() const { return dim_; }

private:
    std::uint64_t hash(std::string_view token, std::uint64_t feature) const {
        std::uint64_t h = 1469598103934665603ULL ^ seed_;
        auto mix = [&](unsigned char c) {
            h ^= c;
            h *= 1099511628211ULL;
        };
        for (char c : token) mix(static_cast<unsigned char>(c));
        mix(0xFF);
        for (int i = 0; i < 8; ++i) mix(static_cast<unsigned char>((feature >> (8 * i)) & 0xFF));
        // final avalanche (splitmix64 finalizer)
        h ^= h >> 30;
        h *= 0xbf58476d1ce4e5b9ULL;
        h ^= h >> 27;
        h *= 0x94d049bb133111ebULL;
        h ^= h >> 31;
        return h;
    }

    std::size_t dim_;
    std::uint64_t seed_;
    int features_;
};

} // namespace mrrag::llm
