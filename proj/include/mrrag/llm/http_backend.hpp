#pragma once

#include "mrrag/error.hpp"
#include "mrrag/llm/backend.hpp"
#include "mrrag/text.hpp"

#include <atomic>
#include <chrono>
#include <memory>
#include <semaphore>
#include <string>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

namespace mrrag::llm {

struct HttpResponse {
    int status = 0;
    std::string body;
};

/// Minimal POST transport so the client can be exercised without a network.
/// Connection-level failures must be raised as retryable BackendErrors.
class HttpTransport {
public:
    virtual ~HttpTransport() = default;
    virtual HttpResponse post_json(const std::string& body) = 0;
};

struct ParsedUrl {
    std::string scheme;
    std::string host;
    int port = 80;
    std::string path = "/";

    static ParsedUrl parse(const std::string& url) {
        ParsedUrl u;
        const auto scheme_end = url.find("://");
        if (scheme_end == std::string::npos) throw ConfigError("backend url needs a scheme: " + url);
        u.scheme = text::to_lower(url.substr(0, scheme_end));
        std::string rest = url.substr(scheme_end + 3);
        const auto slash = rest.find('/');
        std::string authority = rest.substr(0, slash);
        u.path = slash == std::string::npos ? "/" : rest.substr(slash);
        const auto colon = authority.rfind(':');
        if (colon != std::string::npos) {
            u.host = authority.substr(0, colon);
            u.port = std::stoi(authority.substr(colon + 1));
        } else {
            u.host = authority;
            u.port = u.scheme == "https" ? 443 : 80;
        }
        if (u.host.empty()) throw ConfigError("backend url has no host: " + url);
        return u;
    }
};

class HttplibTransport : public HttpTransport {
public:
    HttplibTransport(const std::string& url, std::string api_key, std::chrono::seconds timeout)
        : url_(ParsedUrl::parse(url)), api_key_(std::move(api_key)), timeout_(timeout) {
        if (url_.scheme != "http") {
            throw ConfigError("only http:// model endpoints are supported by this build: " + url);
        }
    }

    HttpResponse post_json(const std::string& body) override {
        httplib::Client client(url_.host, url_.port);
        client.set_connection_timeout(timeout_);
        client.set_read_timeout(timeout_);
        client.set_write_timeout(timeout_);
        httplib::Headers headers;
        if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
        auto res = client.Post(url_.path, headers, body, "application/json");
        if (!res) {
            throw BackendError("transport failure: " + httplib::to_string(res.error()), true);
        }
        return {res->status, res->body};
    }

private:
    ParsedUrl url_;
    std::string api_key_;
    std::chrono::seconds timeout_;
};

struct HttpBackendConfig {
    std::string url;
    std::string model;
    RetryPolicy retry;
    int concurrency = 4;
};

namespace detail {

inline void raise_for_status(const HttpResponse& res) {
    if (res.status >= 200 && res.status < 300) return;
    const bool retryable = res.status == 429 || res.status >= 500;
    std::string snippet = res.body.substr(0, 200);
    throw BackendError("HTTP " + std::to_string(res.status) + ": " + snippet, retryable);
}

} // namespace detail

/// OpenAI-compatible chat-completion client:
/// POST {model, messages[], temperature, max_tokens} -> choices[0].message.content.
class HttpChatBackend : public ChatBackend {
public:
    HttpChatBackend(HttpBackendConfig cfg, std::unique_ptr<HttpTransport> transport)
        : cfg_(std::move(cfg)), transport_(std::move(transport)), slots_(std::max(1, cfg_.concurrency)) {}

    std::string chat(const ChatRequest& request) override {
        request.validate();
        nlohmann::json body = {{"model", cfg_.model},
                               {"temperature", request.temperature},
                               {"max_tokens", request.max_tokens},
                               {"messages", nlohmann::json::array()}};
        for (const auto& m : request.messages) {
            body["messages"].push_back({{"role", to_string(m.role)}, {"content", m.content}});
        }
        const std::string payload = body.dump();

        const auto started = std::chrono::steady_clock::now();
        std::string content = with_retries(cfg_.retry, request.tag, [&] {
            SlotGuard guard(slots_);
            const HttpResponse res = transport_->post_json(payload);
            detail::raise_for_status(res);
            nlohmann::json parsed;
            try {
                parsed = nlohmann::json::parse(res.body);
                return parsed.at("choices").at(0).at("message").value("content", std::string{});
            } catch (const nlohmann::json::exception& e) {
                throw BackendError(std::string("malformed completion payload: ") + e.what(), false);
            }
        });
        const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() -
                                                                              started);
        spdlog::debug("[{}] completion in {} ms", request.tag, ms.count());
        if (text::is_blank(content)) throw BackendError("[" + request.tag + "] empty completion", false);
        return content;
    }

private:
    struct SlotGuard {
        explicit SlotGuard(std::counting_semaphore<>& s) : sem(s) { sem.acquire(); }
        ~SlotGuard() { sem.release(); }
        std::counting_semaphore<>& sem;
    };

    HttpBackendConfig cfg_;
    std::unique_ptr<HttpTransport> transport_;
    std::counting_semaphore<> slots_;
};

/// OpenAI-compatible embeddings client: POST {model, input[]} -> data[i].embedding.
class HttpEmbeddingBackend : public EmbeddingBackend {
public:
    HttpEmbeddingBackend(HttpBackendConfig cfg, std::unique_ptr<HttpTransport> transport)
        : cfg_(std::move(cfg)), transport_(std::move(transport)) {}

    std::vector<Embedding> embed(std::span<const std::string> texts) override {
        if (texts.empty()) throw ValidationError("embed() needs at least one text");
        nlohmann::json body = {{"model", cfg_.model}, {"input", std::vector<std::string>(texts.begin(), texts.end())}};
        const std::string payload = body.dump();
        auto vectors = with_retries(cfg_.retry, "embed", [&] {
            const HttpResponse res = transport_->post_json(payload);
            detail::raise_for_status(res);
            try {
                const auto parsed = nlohmann::json::parse(res.body);
                std::vector<Embedding> out(texts.size());
                std::size_t position = 0;
                for (const auto& item : parsed.at("data")) {
                    const auto index = item.value("index", position++);
                    if (index >= out.size()) throw BackendError("embedding index out of range", false);
                    out[index] = item.at("embedding").get<Embedding>();
                }
                return out;
            } catch (const nlohmann::json::exception& e) {
                throw BackendError(std::string("malformed embedding payload: ") + e.what(), false);
            }
        });
        const std::size_t dim = vectors.front().size();
        if (dim == 0) throw Error("embedding backend returned an empty vector");
        std::size_t expected = 0;
        dim_.compare_exchange_strong(expected, dim);
        check_dimensions(vectors, dim_.load());
        return vectors;
    }

    std::string model_id() const override { return cfg_.model; }

private:
    HttpBackendConfig cfg_;
    std::unique_ptr<HttpTransport> transport_;
    std::atomic<std::size_t> dim_{0};
};

} // namespace mrrag::llm
