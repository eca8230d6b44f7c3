#pragma once

#include "mrrag/error.hpp"

#include <chrono>
#include <cstddef>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <spdlog/spdlog.h>

namespace mrrag::llm {

enum class Role { system, user, assistant };

inline const char* to_string(Role r) {
    switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
    }
    return "user";
}

struct ChatMessage {
    Role role = Role::user;
    std::string content;
};

/// Step tags carried by every pipeline call.
namespace tags {
inline constexpr const char* release_extract = "release_extract";
inline constexpr const char* rewrite_base = "rewrite_base";
inline constexpr const char* rewrite_filtered = "rewrite_filtered";
inline constexpr const char* rewrite_versionless = "rewrite_versionless";
inline constexpr const char* reduce = "reduce";
inline constexpr const char* select = "select";
inline constexpr const char* generate = "generate";
inline constexpr const char* judge = "judge";
} // namespace tags

inline constexpr double default_temperature = 0.01;

struct ChatRequest {
    std::vector<ChatMessage> messages;
    double temperature = default_temperature;
    int max_tokens = 512;
    std::string tag;

    void validate() const {
        if (messages.empty()) throw ValidationError("chat request has no messages");
        if (temperature < 0.0) throw ValidationError("temperature must be >= 0");
        if (max_tokens <= 0) throw ValidationError("max_tokens must be > 0");
        for (const auto& m : messages) {
            if (m.role != Role::assistant && m.content.empty()) {
                throw ValidationError("system/user message content must not be empty");
            }
        }
    }

    /// The prompt text as seen by script matchers: message contents joined by blank lines.
    std::string rendered() const {
        std::string out;
        for (std::size_t i = 0; i < messages.size(); ++i) {
            if (i) out += "\n\n";
            out += messages[i].content;
        }
        return out;
    }
};

inline ChatRequest make_request(std::string prompt, std::string tag, double temperature = default_temperature,
                                int max_tokens = 512) {
    ChatRequest r;
    r.messages.push_back({Role::user, std::move(prompt)});
    r.tag = std::move(tag);
    r.temperature = temperature;
    r.max_tokens = max_tokens;
    return r;
}

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual std::string chat(const ChatRequest& request) = 0;
};

using Embedding = std::vector<float>;

class EmbeddingBackend {
public:
    virtual ~EmbeddingBackend() = default;
    virtual std::vector<Embedding> embed(std::span<const std::string> texts) = 0;
    virtual std::string model_id() const = 0;
};

struct RetryPolicy {
    int attempts = 3;
    std::chrono::milliseconds initial_backoff{1000};
    double multiplier = 2.0;
};

/// Runs `fn`, retrying retryable BackendErrors with exponential backoff.
template <typename Fn>
auto with_retries(const RetryPolicy& policy, const std::string& tag, Fn&& fn) -> decltype(fn()) {
    auto backoff = policy.initial_backoff;
    const int attempts = std::max(1, policy.attempts);
    for (int attempt = 1;; ++attempt) {
        try {
            return fn();
        } catch (const BackendError& e) {
            if (!e.retryable() || attempt >= attempts) {
                throw BackendError("[" + tag + "] " + e.what() + " (after " + std::to_string(attempt) +
                                       " attempt" + (attempt == 1 ? "" : "s") + ")",
                                   false);
            }
            spdlog::warn("[{}] attempt {}/{} failed: {}; retrying", tag, attempt, attempts, e.what());
            if (backoff.count() > 0) std::this_thread::sleep_for(backoff);
            backoff = std::chrono::milliseconds(
                static_cast<long long>(static_cast<double>(backoff.count()) * policy.multiplier));
        }
    }
}

inline void check_dimensions(const std::vector<Embedding>& vectors, std::size_t expected) {
    for (const auto& v : vectors) {
        if (v.size() != expected) {
            throw Error("embedding dimension drift: expected " + std::to_string(expected) + ", got " +
                        std::to_string(v.size()));
        }
    }
}

} // namespace mrrag::llm
