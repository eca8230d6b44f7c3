#pragma once

#include "mrrag/error.hpp"
#include "mrrag/pipeline.hpp"

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

namespace mrrag::service {

using SystemTime = std::chrono::system_clock::time_point;

inline std::string iso8601(SystemTime t) {
    const std::time_t tt = std::chrono::system_clock::to_time_t(t);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Admits holders strictly in the order they took their tickets.
class TicketLock {
public:
    std::uint64_t take() {
        std::lock_guard lock(mutex_);
        return next_++;
    }

    void wait(std::uint64_t ticket) {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return serving_ == ticket; });
    }

    void release() {
        {
            std::lock_guard lock(mutex_);
            ++serving_;
        }
        cv_.notify_all();
    }

private:
    std::mutex mutex_;
    std::condition_variable cv_;
    std::uint64_t next_ = 0;
    std::uint64_t serving_ = 0;
};

struct Session {
    std::string id;
    pipeline::Conversation conversation;
    SystemTime created_at;
    SystemTime last_active;
    TicketLock turn;
    mutable std::mutex meta;

    Session(std::string sid, std::size_t history_turns, SystemTime now)
        : id(std::move(sid)), conversation(history_turns), created_at(now), last_active(now) {}

    nlohmann::json snapshot() const {
        std::lock_guard lock(meta);
        nlohmann::json history = nlohmann::json::array();
        for (const auto& t : conversation.history.turns()) {
            history.push_back({{"role", t.role == llm::Role::user ? "user" : "assistant"}, {"text", t.text}});
        }
        return {{"session_id", id},
                {"created_at", iso8601(created_at)},
                {"last_active", iso8601(last_active)},
                {"pinned_release", conversation.pinned_release ? nlohmann::json(conversation.pinned_release->canonical)
                                                               : nlohmann::json(nullptr)},
                {"history", history}};
    }
};

/// Holds one session's turn for the lifetime of the guard.
class TurnGuard {
public:
    explicit TurnGuard(Session& s) : s_(s) { s_.turn.wait(s_.turn.take()); }
    ~TurnGuard() { s_.turn.release(); }
    TurnGuard(const TurnGuard&) = delete;
    TurnGuard& operator=(const TurnGuard&) = delete;

private:
    Session& s_;
};

inline std::string random_session_id() {
    static thread_local std::mt19937_64 rng{std::random_device{}() ^
                                            (static_cast<std::uint64_t>(std::random_device{}()) << 32)};
    char buf[33];
    std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(rng()),
                  static_cast<unsigned long long>(rng()));
    return buf;
}

/// In-memory sessions with idle expiry and an optional append-only JSONL log
/// that is replayed on startup.
class SessionStore {
public:
    SessionStore(std::size_t history_turns, std::chrono::seconds ttl, std::string log_path = {})
        : history_turns_(history_turns), ttl_(ttl), log_path_(std::move(log_path)) {
        if (!log_path_.empty()) replay();
    }

    std::shared_ptr<Session> create(const std::optional<ReleaseId>& pinned) {
        const auto now = std::chrono::system_clock::now();
        auto s = std::make_shared<Session>(random_session_id(), history_turns_, now);
        s->conversation.pinned_release = pinned;
        {
            std::unique_lock lock(mutex_);
            sessions_[s->id] = s;
        }
        nlohmann::json ev = {{"event", "create"}, {"id", s->id}, {"at", iso8601(now)}};
        if (pinned) ev["release"] = pinned->raw;
        log(ev);
        return s;
    }

    std::shared_ptr<Session> find(const std::string& id) {
        expire();
        std::shared_lock lock(mutex_);
        const auto it = sessions_.find(id);
        return it == sessions_.end() ? nullptr : it->second;
    }

    bool erase(const std::string& id) {
        std::size_t removed = 0;
        {
            std::unique_lock lock(mutex_);
            removed = sessions_.erase(id);
        }
        if (removed) log({{"event", "delete"}, {"id", id}});
        return removed > 0;
    }

    void touch(Session& s) {
        std::lock_guard lock(s.meta);
        s.last_active = std::chrono::system_clock::now();
    }

    void record_exchange(const Session& s, const std::string& user, const std::string& assistant) {
        log({{"event", "exchange"}, {"id", s.id}, {"user", user}, {"assistant", assistant}});
    }

    std::size_t size() const {
        std::shared_lock lock(mutex_);
        return sessions_.size();
    }

    /// Drops sessions idle for longer than the TTL.
    void expire() {
        const auto cutoff = std::chrono::system_clock::now() - ttl_;
        std::vector<std::string> gone;
        {
            std::unique_lock lock(mutex_);
            for (auto it = sessions_.begin(); it != sessions_.end();) {
                bool stale = false;
                {
                    std::lock_guard meta(it->second->meta);
                    stale = it->second->last_active < cutoff;
                }
                if (stale) {
                    gone.push_back(it->first);
                    it = sessions_.erase(it);
                } else {
                    ++it;
                }
            }
        }
        for (const auto& id : gone) log({{"event", "expire"}, {"id", id}});
    }

private:
    void log(const nlohmann::json& ev) {
        if (log_path_.empty()) return;
        std::lock_guard lock(log_mutex_);
        std::ofstream out(log_path_, std::ios::app);
        if (!out) {
            spdlog::warn("cannot append to session log {}", log_path_);
            return;
        }
        out << ev.dump() << '\n';
    }

    void replay() {
        std::ifstream in(log_path_);
        if (!in) return;
        std::string line;
        std::size_t restored = 0;
        const auto now = std::chrono::system_clock::now();
        while (std::getline(in, line)) {
            if (text::is_blank(line)) continue;
            try {
                const auto ev = nlohmann::json::parse(line);
                const auto type = ev.at("event").get<std::string>();
                const auto id = ev.at("id").get<std::string>();
                if (type == "create") {
                    auto s = std::make_shared<Session>(id, history_turns_, now);
                    if (ev.contains("release")) s->conversation.pinned_release = ReleaseId::parse(ev.at("release").get<std::string>());
                    sessions_[id] = s;
                    ++restored;
                } else if (type == "exchange") {
                    if (auto it = sessions_.find(id); it != sessions_.end()) {
                        it->second->conversation.history.append_exchange(ev.at("user").get<std::string>(),
                                                                         ev.at("assistant").get<std::string>());
                    }
                } else if (type == "delete" || type == "expire") {
                    sessions_.erase(id);
                }
            } catch (const std::exception& e) {
                spdlog::warn("skipping unreadable session log line: {}", e.what());
            }
        }
        if (restored) spdlog::info("restored {} sessions from {}", sessions_.size(), log_path_);
    }

    std::size_t history_turns_;
    std::chrono::seconds ttl_;
    std::string log_path_;
    mutable std::shared_mutex mutex_;
    std::mutex log_mutex_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
};

} // namespace mrrag::service
