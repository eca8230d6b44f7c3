#pragma once

#include "mrrag/corpus/ingest.hpp"
#include "mrrag/embedded_prompts.hpp"
#include "mrrag/error.hpp"

#include <filesystem>
#include <map>
#include <string>

namespace mrrag {

/// Named prompt templates ("reduce", "judge/statements", ...). Defaults are
/// compiled in from prompts/; a directory on disk overrides them file by file.
class PromptSet {
public:
    static PromptSet defaults() {
        PromptSet set;
        for (const auto& [name, body] : embedded::prompts) set.templates_[std::string(name)] = std::string(body);
        return set;
    }

    /// Defaults overlaid with every `*.txt` found under `dir` (recursively).
    static PromptSet load(const std::filesystem::path& dir) {
        PromptSet set = defaults();
        if (dir.empty()) return set;
        if (!std::filesystem::is_directory(dir)) throw ConfigError("prompt directory not found: " + dir.string());
        for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
            if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
            auto rel = std::filesystem::relative(entry.path(), dir);
            rel.replace_extension();
            set.templates_[rel.generic_string()] = corpus::read_file(entry.path());
        }
        return set;
    }

    const std::string& get(const std::string& name) const {
        const auto it = templates_.find(name);
        if (it == templates_.end()) throw ConfigError("missing prompt asset: " + name);
        return it->second;
    }

    bool has(const std::string& name) const { return templates_.contains(name); }

    void set(const std::string& name, std::string body) { templates_[name] = std::move(body); }

private:
    std::map<std::string, std::string> templates_;
};

} // namespace mrrag
