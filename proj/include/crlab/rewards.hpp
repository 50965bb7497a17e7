#pragma once

#include <cctype>
#include <optional>
#include <string>
#include <string_view>

#include "crlab/errors.hpp"

namespace crlab {

// Binary outcome reward: 1 for an exact final-answer match, else 0.
using Reward = int;

namespace detail {

inline std::string_view rstrip(std::string_view s) {
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

inline std::string_view lstrip(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    return s;
}

// Parses one line against the answer directive "Answer: <LABEL>". The keyword
// is case-insensitive; the label must be a single uppercase option letter.
inline std::optional<char> parse_answer_line(std::string_view line) {
    line = lstrip(rstrip(line));
    static constexpr std::string_view kKeyword = "answer";
    if (line.size() < kKeyword.size() + 2) {
        return std::nullopt;
    }
    for (std::size_t i = 0; i < kKeyword.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(line[i])) != kKeyword[i]) {
            return std::nullopt;
        }
    }
    std::string_view rest = line.substr(kKeyword.size());
    if (rest.empty() || rest.front() != ':') {
        return std::nullopt;
    }
    rest = lstrip(rest.substr(1));
    if (rest.size() != 1) {
        return std::nullopt;
    }
    const char label = rest.front();
    if (label < 'A' || label > 'Z') {
        return std::nullopt;
    }
    return label;
}

}  // namespace detail

// Label from the LAST line matching the answer directive, or absent. Trailing
// whitespace and keyword case are tolerated; mid-text candidates are
// superseded by the terminal commitment.
inline std::optional<char> extract_answer(std::string_view text) {
    std::optional<char> found;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        if (auto label = detail::parse_answer_line(text.substr(start, end - start))) {
            found = label;
        }
        start = end + 1;
    }
    return found;
}

// 1 iff a prediction is present and equals gold. Absent predictions score 0:
// format violations are penalized, never resampled.
inline Reward exact_match(const std::optional<char>& predicted, char gold) {
    if (gold < 'A' || gold > 'Z') {
        throw ValidationError("gold label must be an uppercase option letter");
    }
    return (predicted.has_value() && *predicted == gold) ? 1 : 0;
}

}  // namespace crlab
