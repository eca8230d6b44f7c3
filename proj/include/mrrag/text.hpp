#pragma once

// Small string helpers shared by every module. Character counts are in
// Unicode code points; invalid UTF-8 bytes count as one character each.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace mrrag::text {

namespace detail {

inline std::size_t sequence_length(unsigned char lead) {
    if (lead < 0x80) return 1;
    if ((lead >> 5) == 0x6) return 2;
    if ((lead >> 4) == 0xE) return 3;
    if ((lead >> 3) == 0x1E) return 4;
    return 1;
}

} // namespace detail

/// Byte offsets of every code point start, plus a trailing entry equal to s.size().
inline std::vector<std::size_t> codepoint_offsets(std::string_view s) {
    std::vector<std::size_t> offsets;
    offsets.reserve(s.size() + 1);
    std::size_t i = 0;
    while (i < s.size()) {
        offsets.push_back(i);
        std::size_t len = detail::sequence_length(static_cast<unsigned char>(s[i]));
        if (i + len > s.size()) len = 1;
        for (std::size_t j = 1; j < len; ++j) {
            if ((static_cast<unsigned char>(s[i + j]) & 0xC0) != 0x80) {
                len = 1;
                break;
            }
        }
        i += len;
    }
    offsets.push_back(s.size());
    return offsets;
}

inline std::size_t char_length(std::string_view s) { return codepoint_offsets(s).size() - 1; }

/// Substring by code point positions [begin, end).
inline std::string char_slice(std::string_view s, std::size_t begin, std::size_t end) {
    const auto offsets = codepoint_offsets(s);
    const std::size_t n = offsets.size() - 1;
    begin = std::min(begin, n);
    end = std::clamp(end, begin, n);
    return std::string(s.substr(offsets[begin], offsets[end] - offsets[begin]));
}

inline std::string char_prefix(std::string_view s, std::size_t count) { return char_slice(s, 0, count); }

inline std::string char_suffix(std::string_view s, std::size_t count) {
    const std::size_t n = char_length(s);
    return char_slice(s, n - std::min(count, n), n);
}

inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

inline std::string trim(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && is_space(s[b])) ++b;
    while (e > b && is_space(s[e - 1])) --e;
    return std::string(s.substr(b, e - b));
}

inline bool is_blank(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](char c) { return is_space(c); });
}

inline std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

inline bool starts_with_icase(std::string_view s, std::string_view prefix) {
    return s.size() >= prefix.size() && to_lower(s.substr(0, prefix.size())) == to_lower(prefix);
}

inline std::size_t find_icase(std::string_view haystack, std::string_view needle, std::size_t from = 0) {
    if (needle.empty()) return from <= haystack.size() ? from : std::string::npos;
    const std::string h = to_lower(haystack);
    const std::string n = to_lower(needle);
    return h.find(n, from);
}

inline bool contains_icase(std::string_view haystack, std::string_view needle) {
    return find_icase(haystack, needle) != std::string::npos;
}

inline std::vector<std::string> split(std::string_view s, char delim) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = s.find(delim, start);
        if (pos == std::string_view::npos) {
            parts.emplace_back(s.substr(start));
            break;
        }
        parts.emplace_back(s.substr(start, pos - start));
        start = pos + 1;
    }
    return parts;
}

inline std::vector<std::string> split_lines(std::string_view s) {
    auto lines = split(s, '\n');
    for (auto& line : lines) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
    }
    return lines;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out.append(sep);
        out.append(parts[i]);
    }
    return out;
}

inline std::string replace_all(std::string s, std::string_view from, std::string_view to) {
    if (from.empty()) return s;
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
    return s;
}

/// Removes every case-insensitive occurrence of `needle`.
inline std::string erase_icase(std::string s, std::string_view needle) {
    if (needle.empty()) return s;
    std::size_t pos = 0;
    // restart from the front: an erase can splice a new occurrence together
    while ((pos = find_icase(s, needle)) != std::string::npos) s.erase(pos, needle.size());
    return s;
}

inline std::string collapse_spaces(std::string_view s) {
    std::string out;
    bool pending = false;
    for (char c : s) {
        if (is_space(c)) {
            pending = !out.empty();
            continue;
        }
        if (pending) out.push_back(' ');
        pending = false;
        out.push_back(c);
    }
    return out;
}

/// Substitutes `{name}` placeholders. Unknown placeholders are left untouched.
inline std::string render(std::string_view tmpl, const std::map<std::string, std::string>& vars) {
    std::string out;
    out.reserve(tmpl.size());
    std::size_t i = 0;
    while (i < tmpl.size()) {
        if (tmpl[i] == '{') {
            const std::size_t close = tmpl.find('}', i + 1);
            if (close != std::string_view::npos) {
                const auto it = vars.find(std::string(tmpl.substr(i + 1, close - i - 1)));
                if (it != vars.end()) {
                    out.append(it->second);
                    i = close + 1;
                    continue;
                }
            }
        }
        out.push_back(tmpl[i++]);
    }
    return out;
}

/// Lower-cased alphanumeric tokens; dots between digits stay inside the token ("17.20").
inline std::vector<std::string> tokenize(std::string_view s) {
    std::vector<std::string> tokens;
    std::string cur;
    auto is_alnum = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };
    auto is_digit = [](char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; };
    for (std::size_t i = 0; i < s.size(); ++i) {
        const char c = s[i];
        if (is_alnum(c) || (static_cast<unsigned char>(c) >= 0x80)) {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        } else if (c == '.' && !cur.empty() && is_digit(cur.back()) && i + 1 < s.size() && is_digit(s[i + 1])) {
            cur.push_back(c);
        } else if (!cur.empty()) {
            tokens.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
}

} // namespace mrrag::text
