#pragma once

#include "mrrag/error.hpp"
#include "mrrag/llm/backend.hpp"

#include <optional>
#include <string>

#include <spdlog/spdlog.h>

namespace mrrag::llm {

/// Sends `request` and parses the reply; an unparseable reply gets exactly one
/// reprompt with `reminder` appended to the last message. Throws
/// MalformedOutputError when the second reply is unparseable as well.
template <typename Parser>
auto ask_structured(ChatBackend& backend, ChatRequest request, Parser&& parse, const std::string& reminder)
    -> typename std::invoke_result_t<Parser, const std::string&>::value_type {
    const std::string first = backend.chat(request);
    if (auto parsed = parse(first)) return *parsed;
    spdlog::warn("[{}] malformed reply, reprompting with a format reminder", request.tag);
    request.messages.back().content += "\n\nFormat reminder: " + reminder;
    const std::string second = backend.chat(request);
    if (auto parsed = parse(second)) return *parsed;
    throw MalformedOutputError("[" + request.tag + "] reply did not follow the requested format");
}

} // namespace mrrag::llm
