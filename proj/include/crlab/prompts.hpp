#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "crlab/errors.hpp"
#include "crlab/paradigm.hpp"
#include "crlab/rewards.hpp"
#include "crlab/tasks.hpp"
#include "crlab/tokenizer.hpp"

namespace crlab {

// Fixed answer-format directive; the terminal "Answer: <LABEL>" line is what
// extract_answer parses, so every paradigm shares it verbatim.
inline const char* kAnswerDirective =
    "Finish with a final line of the form \"Answer: <LABEL>\" naming your chosen option.";

// Per-paradigm elicitation text. Direct deliberately carries none.
struct TemplateSet {
    std::array<std::string, kParadigmCount> instruction;

    const std::string& for_paradigm(Paradigm p) const {
        return instruction[static_cast<std::size_t>(p)];
    }
};

inline TemplateSet builtin_templates() {
    TemplateSet t;
    t.instruction[static_cast<std::size_t>(Paradigm::Direct)] = "";
    t.instruction[static_cast<std::size_t>(Paradigm::ChainOfThought)] =
        "Think step-by-step about the question before answering. Lay out your reasoning, then "
        "commit to exactly one option.";
    t.instruction[static_cast<std::size_t>(Paradigm::SelfRefine)] =
        "Work through this problem with full deliberation. First restate the question in your "
        "own words. Then consider every option in turn, explaining why it is right or wrong. "
        "After eliminating the wrong options, verify the surviving choice against the question "
        "once more before answering.";
    t.instruction[static_cast<std::size_t>(Paradigm::CompositeReasoning)] =
        "Solve the problem by combining multiple reasoning styles: deduction, induction, "
        "abduction, causal reasoning, decompositional analysis, and comparison. Start each "
        "sentence with a bracketed tag naming the style in use, such as [Deductive] or "
        "[Abductive], and weave the styles together into one argument.";
    return t;
}

// One plain-text file per paradigm: direct.txt, cot.txt, sr.txt, cr.txt.
inline TemplateSet load_templates(const std::string& dir) {
    TemplateSet t;
    for (int i = 0; i < kParadigmCount; ++i) {
        const auto p = static_cast<Paradigm>(i);
        const std::filesystem::path path =
            std::filesystem::path(dir) / (std::string(paradigm_name(p)) + ".txt");
        std::ifstream in(path);
        if (!in) {
            throw IoError("cannot open template file '" + path.string() + "'");
        }
        std::ostringstream buf;
        buf << in.rdbuf();
        std::string text = buf.str();
        while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) {
            text.pop_back();
        }
        t.instruction[static_cast<std::size_t>(i)] = text;
    }
    return t;
}

// Deterministic prompt: instruction (if any), stem, labeled options, answer
// directive. Ends with a newline so generation starts on a fresh line.
inline std::string build_prompt(const McqItem& item, Paradigm paradigm,
                                const TemplateSet& templates) {
    item.validate();
    std::string p;
    const std::string& instruction = templates.for_paradigm(paradigm);
    if (!instruction.empty()) {
        p += instruction;
        p += "\n\n";
    }
    p += "Question: ";
    p += item.stem;
    p += "\nOptions:\n";
    for (const auto& [label, text] : item.options) {
        p += label;
        p += ") ";
        p += text;
        p += '\n';
    }
    p += kAnswerDirective;
    p += '\n';
    return p;
}

// ---------------------------------------------------------------------------
// SFT targets
// ---------------------------------------------------------------------------

struct SftTarget {
    std::vector<TokenId> ids;        // BOS + prompt + reasoning + EOS
    std::vector<std::uint8_t> mask;  // 1 where the token is supervised (reasoning + EOS)
    int prompt_tokens = 0;           // BOS + prompt span
    int supervised_tokens = 0;       // reasoning + EOS span

    void check_invariant() const {
        if (prompt_tokens + supervised_tokens != static_cast<int>(ids.size()) ||
            ids.size() != mask.size()) {
            throw ValidationError("sft target mask arithmetic is inconsistent");
        }
    }
};

namespace detail {

inline void require_terminal_answer_line(const std::string& reasoning) {
    std::string_view text(reasoning);
    while (!text.empty() && (text.back() == '\n' || text.back() == '\r' || text.back() == ' ' ||
                             text.back() == '\t')) {
        text.remove_suffix(1);
    }
    const std::size_t nl = text.rfind('\n');
    const std::string_view last =
        (nl == std::string_view::npos) ? text : text.substr(nl + 1);
    if (!parse_answer_line(last)) {
        throw ValidationError("reasoning text must end with an \"Answer: <LABEL>\" line");
    }
}

// Core target assembly from already-built prompt and reasoning strings.
inline SftTarget make_sft_target(const std::string& prompt, const std::string& reasoning) {
    require_terminal_answer_line(reasoning);
    const std::vector<TokenId> prompt_ids = encode(prompt);
    const std::vector<TokenId> reasoning_ids = encode(reasoning);

    SftTarget t;
    t.ids.reserve(prompt_ids.size() + reasoning_ids.size() + 2);
    t.ids.push_back(Vocab::kBos);
    t.ids.insert(t.ids.end(), prompt_ids.begin(), prompt_ids.end());
    const std::size_t prompt_span = t.ids.size();
    t.ids.insert(t.ids.end(), reasoning_ids.begin(), reasoning_ids.end());
    t.ids.push_back(Vocab::kEos);

    t.mask.assign(t.ids.size(), 0);
    for (std::size_t i = prompt_span; i < t.ids.size(); ++i) {
        t.mask[i] = 1;
    }
    t.prompt_tokens = static_cast<int>(prompt_span);
    t.supervised_tokens = static_cast<int>(t.ids.size() - prompt_span);
    t.check_invariant();
    return t;
}

}  // namespace detail

// Token ids plus a loss mask: prompt tokens unsupervised, reasoning + EOS
// supervised. The reasoning must end with a parseable answer line.
inline SftTarget build_sft_target(const McqItem& item, Paradigm paradigm,
                                  const std::string& reasoning, const TemplateSet& templates) {
    return detail::make_sft_target(build_prompt(item, paradigm, templates), reasoning);
}

// Same assembly for pre-rendered prompt text (trajectory files store prompts).
inline SftTarget build_sft_target_from_text(const std::string& prompt,
                                            const std::string& reasoning) {
    return detail::make_sft_target(prompt, reasoning);
}

// ---------------------------------------------------------------------------
// Template-synthesized reasoning
// ---------------------------------------------------------------------------

namespace detail {

inline std::string gold_text(const McqItem& item) {
    for (const auto& [label, text] : item.options) {
        if (label == item.gold) {
            return text;
        }
    }
    throw ValidationError("item '" + item.id + "' has no gold option text");
}

}  // namespace detail

// Deterministic reasoning text for one item under one paradigm; arrives at the
// gold answer. Verbosity rises Direct < CoT < CR < SR by construction, giving
// the corpus-level token-length ordering SR > CR > CoT > Direct.
inline std::string synth_reasoning(const McqItem& item, Paradigm paradigm) {
    item.validate();
    const std::string g(1, item.gold);
    const std::string gt = detail::gold_text(item);
    const std::string answer_line = "Answer: " + g;
    switch (paradigm) {
        case Paradigm::Direct:
            return answer_line;
        case Paradigm::ChainOfThought: {
            std::string r;
            r += "Let's think step by step. The question asks: " + item.stem + "\n";
            r += "Weighing the options, option " + g + " (" + gt + ") is the one that fits. ";
            r += "Therefore the answer is " + g + ".\n";
            r += answer_line;
            return r;
        }
        case Paradigm::SelfRefine: {
            std::string r;
            r += "Let me restate the problem to be sure I understand it. ";
            r += "The question is: " + item.stem + "\n";
            for (const auto& [label, text] : item.options) {
                if (label == item.gold) {
                    r += std::string("Option ") + label + " (" + text +
                         ") looks correct because it matches what the question requires.\n";
                } else {
                    r += std::string("Option ") + label + " (" + text +
                         ") does not hold up under scrutiny, so I eliminate it.\n";
                }
            }
            r += "Let me verify once more: re-reading the question, option " + g +
                 " remains consistent with every requirement, and no eliminated option can be "
                 "rescued. I am confident in this choice.\n";
            r += answer_line;
            return r;
        }
        case Paradigm::CompositeReasoning: {
            std::string r;
            r += "[Decompositional] Break the question into its parts: " + item.stem + "\n";
            r += "[Deductive] From the stated facts it follows that option " + g + " (" + gt +
                 ") satisfies the requirement.\n";
            r += "[Comparative] Compared with the alternatives, every other option fails where "
                 "option " + g + " succeeds.\n";
            r += "[Abductive] The best explanation of all the clues is option " + g + ".\n";
            r += answer_line;
            return r;
        }
    }
    throw ConfigError("unknown paradigm");
}

}  // namespace crlab
