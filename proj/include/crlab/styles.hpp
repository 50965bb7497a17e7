#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "crlab/errors.hpp"
#include "crlab/paradigm.hpp"

namespace crlab {

enum class ReasoningStyle : int {
    Deductive = 0,
    Inductive,
    Abductive,
    Causal,
    Decompositional,
    Comparative,
};

constexpr int kStyleCount = 6;

inline const char* style_name(ReasoningStyle s) {
    switch (s) {
        case ReasoningStyle::Deductive: return "Deductive";
        case ReasoningStyle::Inductive: return "Inductive";
        case ReasoningStyle::Abductive: return "Abductive";
        case ReasoningStyle::Causal: return "Causal";
        case ReasoningStyle::Decompositional: return "Decompositional";
        case ReasoningStyle::Comparative: return "Comparative";
    }
    return "?";
}

// Lowercase marker phrases per style; matched as case-insensitive substrings.
struct StyleLexicon {
    std::array<std::vector<std::string>, kStyleCount> markers;
};

inline StyleLexicon builtin_lexicon() {
    StyleLexicon lex;
    lex.markers[static_cast<int>(ReasoningStyle::Deductive)] = {
        "therefore", "it follows", "thus we conclude", "which implies", "must be",
    };
    lex.markers[static_cast<int>(ReasoningStyle::Inductive)] = {
        "in general", "pattern suggests", "usually", "tends to", "across the examples",
    };
    lex.markers[static_cast<int>(ReasoningStyle::Abductive)] = {
        "most likely explanation", "best explains", "best explanation", "plausible cause",
    };
    lex.markers[static_cast<int>(ReasoningStyle::Causal)] = {
        "because", "leads to", "causes", "results in", "due to",
    };
    lex.markers[static_cast<int>(ReasoningStyle::Decompositional)] = {
        "break this into", "break the question into", "sub-problem", "first part",
        "step by step", "component",
    };
    lex.markers[static_cast<int>(ReasoningStyle::Comparative)] = {
        "compared to", "compared with", "similarly", "in contrast", "whereas",
    };
    return lex;
}

// One file per style, lowercase file names, one marker phrase per line.
inline StyleLexicon load_lexicon(const std::string& dir) {
    StyleLexicon lex;
    for (int i = 0; i < kStyleCount; ++i) {
        std::string fname = style_name(static_cast<ReasoningStyle>(i));
        for (auto& c : fname) {
            c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        }
        const std::filesystem::path path = std::filesystem::path(dir) / (fname + ".txt");
        std::ifstream in(path);
        if (!in) {
            throw IoError("cannot open lexicon file '" + path.string() + "'");
        }
        std::string line;
        while (std::getline(in, line)) {
            while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) {
                line.pop_back();
            }
            if (!line.empty() && line.front() != '#') {
                lex.markers[i].push_back(line);
            }
        }
    }
    return lex;
}

namespace detail {

inline std::string to_lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) {
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return out;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (std::isspace(static_cast<unsigned char>(s.back())) ||
                          s.back() == '.' || s.back() == '!' || s.back() == '?')) {
        s.remove_suffix(1);
    }
    return s;
}

inline bool style_from_tag(std::string_view tag, ReasoningStyle& out) {
    const std::string lower = to_lower(tag);
    for (int i = 0; i < kStyleCount; ++i) {
        if (lower == to_lower(style_name(static_cast<ReasoningStyle>(i)))) {
            out = static_cast<ReasoningStyle>(i);
            return true;
        }
    }
    return false;
}

}  // namespace detail

// Two tiers: leading in-band bracket tags ("[Deductive] ...") are
// authoritative when present; otherwise lexicon markers decide. Empty set when
// nothing matches.
inline std::set<ReasoningStyle> tag_sentence(std::string_view sentence,
                                             const StyleLexicon& lexicon) {
    std::string_view s = detail::trim(sentence);

    // tier 1: consume every leading [Tag] group
    std::set<ReasoningStyle> tagged;
    std::string_view rest = s;
    while (!rest.empty() && rest.front() == '[') {
        const std::size_t close = rest.find(']');
        if (close == std::string_view::npos) {
            break;
        }
        ReasoningStyle style;
        if (detail::style_from_tag(rest.substr(1, close - 1), style)) {
            tagged.insert(style);
        }
        rest.remove_prefix(close + 1);
        while (!rest.empty() && rest.front() == ' ') {
            rest.remove_prefix(1);
        }
    }
    if (!tagged.empty()) {
        return tagged;
    }

    // tier 2: lexicon substring match, case-insensitive
    const std::string lower = detail::to_lower(s);
    std::set<ReasoningStyle> matched;
    for (int i = 0; i < kStyleCount; ++i) {
        for (const auto& marker : lexicon.markers[i]) {
            if (lower.find(detail::to_lower(marker)) != std::string::npos) {
                matched.insert(static_cast<ReasoningStyle>(i));
                break;
            }
        }
    }
    return matched;
}

// Splits trajectory text into sentences at '.', '!', '?' and newlines.
inline std::vector<std::string> split_sentences(std::string_view text) {
    std::vector<std::string> out;
    std::string current;
    for (const char c : text) {
        if (c == '.' || c == '!' || c == '?' || c == '\n') {
            if (c != '\n') {
                current += c;
            }
            const std::string_view t = detail::trim(current);
            if (!t.empty()) {
                out.emplace_back(t);
            }
            current.clear();
        } else {
            current += c;
        }
    }
    const std::string_view t = detail::trim(current);
    if (!t.empty()) {
        out.emplace_back(t);
    }
    return out;
}

enum class Stage { PreGrpo = 0, PostGrpo = 1 };

inline const char* stage_name(Stage s) {
    return s == Stage::PreGrpo ? "pre-grpo" : "post-grpo";
}

struct StyleDistribution {
    Paradigm paradigm = Paradigm::Direct;
    Stage stage = Stage::PreGrpo;
    std::array<double, kStyleCount> fraction{};  // over tagged sentences
    double untagged_fraction = 0.0;              // over all sentences
    int corpus_size = 0;                         // trajectory count
    long sentence_count = 0;
};

// Sentence-level aggregation with 1/k fractional weight for k-label
// sentences, so tagged fractions stay normalized.
inline StyleDistribution distribution(const std::vector<std::string>& corpus, Paradigm paradigm,
                                      Stage stage, const StyleLexicon& lexicon) {
    if (corpus.empty()) {
        throw EmptyCorpusError("style analysis corpus is empty");
    }
    StyleDistribution dist;
    dist.paradigm = paradigm;
    dist.stage = stage;
    dist.corpus_size = static_cast<int>(corpus.size());

    std::array<double, kStyleCount> weight{};
    long tagged = 0;
    long untagged = 0;
    for (const auto& text : corpus) {
        for (const auto& sentence : split_sentences(text)) {
            ++dist.sentence_count;
            const auto styles = tag_sentence(sentence, lexicon);
            if (styles.empty()) {
                ++untagged;
                continue;
            }
            ++tagged;
            const double w = 1.0 / static_cast<double>(styles.size());
            for (const auto s : styles) {
                weight[static_cast<std::size_t>(static_cast<int>(s))] += w;
            }
        }
    }
    if (tagged > 0) {
        for (int i = 0; i < kStyleCount; ++i) {
            dist.fraction[static_cast<std::size_t>(i)] =
                weight[static_cast<std::size_t>(i)] / static_cast<double>(tagged);
        }
    }
    dist.untagged_fraction =
        dist.sentence_count == 0
            ? 0.0
            : static_cast<double>(untagged) / static_cast<double>(dist.sentence_count);
    return dist;
}

struct StyleShift {
    std::array<double, kStyleCount> delta{};  // post - pre
    std::vector<ReasoningStyle> ranked;       // by |delta|, descending
    ReasoningStyle top_amplified = ReasoningStyle::Deductive;
    ReasoningStyle top_suppressed = ReasoningStyle::Deductive;
    std::string report;
};

// Per-style deltas between two distributions of the same paradigm.
inline StyleShift compare(const StyleDistribution& pre, const StyleDistribution& post) {
    if (pre.paradigm != post.paradigm) {
        throw ComparisonError("style comparison requires matching paradigms");
    }
    StyleShift shift;
    for (int i = 0; i < kStyleCount; ++i) {
        shift.delta[static_cast<std::size_t>(i)] = post.fraction[static_cast<std::size_t>(i)] -
                                                   pre.fraction[static_cast<std::size_t>(i)];
    }
    shift.ranked.resize(kStyleCount);
    for (int i = 0; i < kStyleCount; ++i) {
        shift.ranked[static_cast<std::size_t>(i)] = static_cast<ReasoningStyle>(i);
    }
    std::stable_sort(shift.ranked.begin(), shift.ranked.end(),
                     [&](ReasoningStyle a, ReasoningStyle b) {
                         return std::abs(shift.delta[static_cast<std::size_t>(static_cast<int>(a))]) >
                                std::abs(shift.delta[static_cast<std::size_t>(static_cast<int>(b))]);
                     });
    int amp = 0;
    int sup = 0;
    for (int i = 1; i < kStyleCount; ++i) {
        if (shift.delta[static_cast<std::size_t>(i)] > shift.delta[static_cast<std::size_t>(amp)]) {
            amp = i;
        }
        if (shift.delta[static_cast<std::size_t>(i)] < shift.delta[static_cast<std::size_t>(sup)]) {
            sup = i;
        }
    }
    shift.top_amplified = static_cast<ReasoningStyle>(amp);
    shift.top_suppressed = static_cast<ReasoningStyle>(sup);

    std::ostringstream os;
    os << "Style shift (" << paradigm_name(pre.paradigm) << ", " << stage_name(pre.stage)
       << " -> " << stage_name(post.stage) << ")\n";
    for (const auto s : shift.ranked) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%+.4f", shift.delta[static_cast<std::size_t>(static_cast<int>(s))]);
        os << "  " << style_name(s) << ": " << buf << "\n";
    }
    os << "Top amplified: " << style_name(shift.top_amplified) << "\n";
    os << "Top suppressed: " << style_name(shift.top_suppressed) << "\n";
    shift.report = os.str();
    return shift;
}

}  // namespace crlab
