#pragma once

// JSON API under /api/v1 for sessions, chat, releases, health and reports.

#include "mrrag/config.hpp"
#include "mrrag/corpus/corpus.hpp"
#include "mrrag/error.hpp"
#include "mrrag/pipeline.hpp"
#include "mrrag/service/sessions.hpp"

#include <algorithm>
#include <filesystem>
#include <memory>
#include <regex>
#include <string>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#ifndef MRRAG_VERSION
#define MRRAG_VERSION "0.0.0"
#endif

namespace mrrag::service {

struct ServiceDeps {
    const corpus::CorpusRegistry& registry;
    llm::ChatBackend& chat;
    llm::EmbeddingBackend& embedder;
    const PromptSet& prompts;
    pipeline::PipelineConfig pipeline;
    config::ServiceConfig service;
    std::filesystem::path reports_dir;
};

class Service {
public:
    explicit Service(ServiceDeps deps)
        : deps_(std::move(deps)),
          engine_{deps_.registry, deps_.chat, deps_.embedder, deps_.prompts, deps_.pipeline},
          sessions_(deps_.pipeline.history_turns, std::chrono::seconds(deps_.service.session_ttl_s),
                    deps_.service.session_log) {
        deps_.pipeline.validate();
        // httplib's default adds SO_REUSEPORT, which lets a second server share a busy port
        server_.set_socket_options([](socket_t sock) {
            int yes = 1;
            setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
        });
        install_routes();
    }

    httplib::Server& http() { return server_; }
    SessionStore& sessions() { return sessions_; }

    /// Binds the listening socket; false when the address is unavailable.
    bool bind(const std::string& host, int port) {
        if (port == 0) {
            bound_port_ = server_.bind_to_any_port(host);
            return bound_port_ > 0;
        }
        if (!server_.bind_to_port(host, port)) return false;
        bound_port_ = port;
        return true;
    }

    int port() const { return bound_port_; }

    /// Serves until stop() is called.
    bool listen() { return server_.listen_after_bind(); }

    /// Stops accepting connections; requests already running complete first.
    void stop() { server_.stop(); }

    bool running() const { return server_.is_running(); }

    void wait_until_ready() const { server_.wait_until_ready(); }

private:
    static void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    static void send_error(httplib::Response& res, int status, const std::string& message,
                           const std::optional<std::string>& step = std::nullopt) {
        nlohmann::json body = {{"error", message}};
        if (step) body["step"] = *step;
        send_json(res, status, body);
    }

    static std::optional<nlohmann::json> parse_body(const httplib::Request& req, httplib::Response& res,
                                                    bool allow_empty) {
        if (text::is_blank(req.body)) {
            if (allow_empty) return nlohmann::json::object();
            send_error(res, 400, "request body must be a JSON object");
            return std::nullopt;
        }
        try {
            auto j = nlohmann::json::parse(req.body);
            if (!j.is_object()) {
                send_error(res, 400, "request body must be a JSON object");
                return std::nullopt;
            }
            return j;
        } catch (const nlohmann::json::exception& e) {
            send_error(res, 400, std::string("malformed JSON: ") + e.what());
            return std::nullopt;
        }
    }

    bool origin_allowed(const std::string& origin) const {
        const auto& allow = deps_.service.cors_origins;
        return std::find(allow.begin(), allow.end(), "*") != allow.end() ||
               std::find(allow.begin(), allow.end(), origin) != allow.end();
    }

    void apply_cors(const httplib::Request& req, httplib::Response& res) const {
        if (!req.has_header("Origin")) return;
        const auto origin = req.get_header_value("Origin");
        if (!origin_allowed(origin)) return;
        res.set_header("Access-Control-Allow-Origin", origin);
        res.set_header("Vary", "Origin");
        res.set_header("Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
    }

    bool require_corpora(httplib::Response& res) const {
        if (!deps_.registry.empty()) return true;
        send_error(res, 409, "the engine has no corpora; run ingest first");
        return false;
    }

    void install_routes() {
        server_.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
            apply_cors(req, res);
            if (req.method == "OPTIONS") {
                res.status = 204;
                return httplib::Server::HandlerResponse::Handled;
            }
            return httplib::Server::HandlerResponse::Unhandled;
        });
        server_.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
            try {
                std::rethrow_exception(ep);
            } catch (const std::exception& e) {
                send_error(res, 500, e.what());
            } catch (...) {
                send_error(res, 500, "internal error");
            }
        });

        server_.Post("/api/v1/sessions", [this](const httplib::Request& req, httplib::Response& res) {
            if (!require_corpora(res)) return;
            const auto body = parse_body(req, res, true);
            if (!body) return;
            std::optional<ReleaseId> pinned;
            if (body->contains("release") && !body->at("release").is_null()) {
                if (!body->at("release").is_string()) return send_error(res, 400, "release must be a string");
                pinned = deps_.registry.resolve(body->at("release").get<std::string>());
                if (!pinned) {
                    return send_error(res, 400, "release " + body->at("release").get<std::string>() + " is not available");
                }
            }
            const auto s = sessions_.create(pinned);
            send_json(res, 201, {{"session_id", s->id}});
        });

        server_.Post(R"(/api/v1/sessions/([^/]+)/messages)", [this](const httplib::Request& req, httplib::Response& res) {
            const auto session = sessions_.find(req.matches[1]);
            if (!session) return send_error(res, 404, "unknown session");
            if (!require_corpora(res)) return;
            const auto body = parse_body(req, res, false);
            if (!body) return;
            if (!body->contains("query") || !body->at("query").is_string() ||
                text::is_blank(body->at("query").get<std::string>())) {
                return send_error(res, 400, "body needs a non-empty string field 'query'");
            }
            std::optional<std::string> release;
            if (body->contains("release") && !body->at("release").is_null()) {
                if (!body->at("release").is_string()) return send_error(res, 400, "release must be a string");
                release = body->at("release").get<std::string>();
            }
            const std::string query = body->at("query").get<std::string>();

            pipeline::Answer answer;
            {
                TurnGuard turn(*session);
                pipeline::Conversation working = [&] {
                    std::lock_guard lock(session->meta);
                    return session->conversation;
                }();
                answer = pipeline::answer(query, working, engine_, release);
                {
                    std::lock_guard lock(session->meta);
                    session->conversation = std::move(working);
                }
                if (answer.ok()) sessions_.record_exchange(*session, query, answer.text);
                sessions_.touch(*session);
            }
            if (answer.status == pipeline::AnswerStatus::failed) {
                nlohmann::json body_out = answer;
                body_out["error"] = answer.error.value_or("pipeline failure");
                body_out["step"] = answer.error_step.value_or("unknown");
                return send_json(res, 500, body_out);
            }
            send_json(res, 200, answer);
        });

        server_.Get(R"(/api/v1/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            const auto session = sessions_.find(req.matches[1]);
            if (!session) return send_error(res, 404, "unknown session");
            send_json(res, 200, session->snapshot());
        });

        server_.Delete(R"(/api/v1/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            if (!sessions_.erase(req.matches[1])) return send_error(res, 404, "unknown session");
            send_json(res, 200, {{"deleted", std::string(req.matches[1])}});
        });

        server_.Get("/api/v1/releases", [this](const httplib::Request&, httplib::Response& res) {
            nlohmann::json list = nlohmann::json::array();
            const auto latest = deps_.registry.latest();
            for (const auto& r : deps_.registry.releases()) {
                nlohmann::json item = {{"release", r.canonical}, {"raw", r.raw}, {"latest", latest && *latest == r}};
                try {
                    const auto& m = deps_.registry.get(r)->manifest;
                    item["doc_count"] = m.doc_count;
                    item["page_count"] = m.page_count;
                    item["search_chunk_count"] = m.search_chunk_count;
                } catch (const Error& e) {
                    item["error"] = e.what();
                }
                list.push_back(item);
            }
            send_json(res, 200, {{"releases", list}});
        });

        server_.Get("/api/v1/health", [this](const httplib::Request&, httplib::Response& res) {
            nlohmann::json releases = nlohmann::json::array();
            for (const auto& r : deps_.registry.releases()) releases.push_back(r.canonical);
            const auto latest = deps_.registry.latest();
            send_json(res, 200,
                      {{"status", deps_.registry.empty() ? "no_corpora" : "ok"},
                       {"version", MRRAG_VERSION},
                       {"corpora", releases.size()},
                       {"releases", releases},
                       {"latest", latest ? nlohmann::json(latest->canonical) : nlohmann::json(nullptr)},
                       {"sessions", sessions_.size()},
                       {"flags", deps_.pipeline.flags_json()}});
        });

        server_.Get("/api/v1/reports", [this](const httplib::Request&, httplib::Response& res) {
            nlohmann::json list = nlohmann::json::array();
            std::error_code ec;
            if (std::filesystem::is_directory(deps_.reports_dir, ec)) {
                std::vector<std::filesystem::path> dirs;
                for (const auto& entry : std::filesystem::directory_iterator(deps_.reports_dir)) {
                    if (entry.is_directory() && std::filesystem::exists(entry.path() / "report.json")) {
                        dirs.push_back(entry.path());
                    }
                }
                std::sort(dirs.begin(), dirs.end());
                for (const auto& d : dirs) {
                    nlohmann::json item = {{"id", d.filename().string()}};
                    try {
                        const auto j = nlohmann::json::parse(corpus::read_file(d / "report.json"));
                        item["generated_at"] = j.value("generated_at", "");
                        item["systems"] = nlohmann::json::array();
                        for (const auto& s : j.value("systems", nlohmann::json::array())) item["systems"].push_back(s.value("name", ""));
                    } catch (const std::exception& e) {
                        item["error"] = e.what();
                    }
                    list.push_back(item);
                }
            }
            send_json(res, 200, {{"reports", list}});
        });

        server_.Get(R"(/api/v1/reports/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            static const std::regex safe(R"([A-Za-z0-9._-]+)");
            const std::string id = req.matches[1];
            if (!std::regex_match(id, safe) || id == "." || id == "..") return send_error(res, 404, "unknown report");
            const auto path = deps_.reports_dir / id / "report.json";
            if (!std::filesystem::exists(path)) return send_error(res, 404, "unknown report");
            try {
                send_json(res, 200, nlohmann::json::parse(corpus::read_file(path)));
            } catch (const std::exception& e) {
                send_error(res, 500, std::string("unreadable report: ") + e.what());
            }
        });
    }

    ServiceDeps deps_;
    pipeline::Engine engine_;
    SessionStore sessions_;
    httplib::Server server_;
    int bound_port_ = 0;
};

} // namespace mrrag::service
