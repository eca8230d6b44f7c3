#pragma once

#include "mrrag/error.hpp"
#include "mrrag/text.hpp"

#include <cctype>
#include <compare>
#include <cstdint>
#include <string>
#include <vector>

namespace mrrag {

/// A documentation release as configured ("R17.20", "Release 17.20", "17.20").
///
/// `canonical` always reads "Release <number>" with the number kept exactly as
/// written, so "17.2" and "17.20" stay distinct; mapping surface variants onto
/// a registered form is the release-extraction prompt's job. Releases order by
/// the numeric tuple of their dotted components.
struct ReleaseId {
    std::string raw;
    std::string canonical;
    std::vector<std::int64_t> ordering_key;

    static ReleaseId parse(std::string_view input) {
        ReleaseId id;
        id.raw = text::trim(input);
        if (id.raw.empty()) throw ValidationError("release id must not be empty");

        const auto first_digit = id.raw.find_first_of("0123456789");
        if (first_digit == std::string::npos) {
            id.canonical = id.raw;
            return id;
        }
        std::size_t end = first_digit;
        while (end < id.raw.size() &&
               (std::isdigit(static_cast<unsigned char>(id.raw[end])) || id.raw[end] == '.')) {
            ++end;
        }
        std::string number = id.raw.substr(first_digit, end - first_digit);
        while (!number.empty() && number.back() == '.') number.pop_back();

        id.canonical = "Release " + number;
        for (const auto& part : text::split(number, '.')) {
            if (part.empty()) continue;
            id.ordering_key.push_back(std::stoll(part));
        }
        return id;
    }

    /// Filesystem-safe directory name, e.g. "release-17.20".
    std::string slug() const {
        std::string out;
        for (char c : text::to_lower(canonical)) {
            if (std::isalnum(static_cast<unsigned char>(c)) || c == '.') {
                out.push_back(c);
            } else if (!out.empty() && out.back() != '-') {
                out.push_back('-');
            }
        }
        while (!out.empty() && out.back() == '-') out.pop_back();
        return out;
    }

    friend bool operator==(const ReleaseId& a, const ReleaseId& b) { return a.canonical == b.canonical; }

    /// Numeric tuple order, canonical string as tie-breaker so the order is total.
    friend std::strong_ordering operator<=>(const ReleaseId& a, const ReleaseId& b) {
        if (auto c = a.ordering_key <=> b.ordering_key; c != 0) return c;
        return a.canonical <=> b.canonical;
    }
};

} // namespace mrrag
