#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "crlab/errors.hpp"
#include "crlab/rng.hpp"

namespace crlab {

struct McqItem {
    std::string id;
    std::string stem;
    std::vector<std::pair<char, std::string>> options;  // label -> text, labels A,B,C,...
    char gold = 'A';

    void validate() const {
        if (options.size() < 2) {
            throw ValidationError("item '" + id + "' needs at least 2 options");
        }
        bool gold_found = false;
        for (std::size_t i = 0; i < options.size(); ++i) {
            const char label = options[i].first;
            if (label < 'A' || label > 'Z') {
                throw ValidationError("item '" + id + "' has a non-letter option label");
            }
            for (std::size_t j = i + 1; j < options.size(); ++j) {
                if (options[j].first == label) {
                    throw ValidationError("item '" + id + "' has duplicate option labels");
                }
            }
            if (label == gold) {
                gold_found = true;
            }
        }
        if (!gold_found) {
            throw ValidationError("item '" + id + "' gold label '" + std::string(1, gold) +
                                  "' is not among its options");
        }
    }
};

// ---------------------------------------------------------------------------
// JSONL ingestion
// ---------------------------------------------------------------------------

struct LoadReport {
    std::vector<McqItem> items;
    std::vector<std::pair<int, std::string>> rejected;  // 1-based line number, message
    std::string report_path;                            // empty when nothing was rejected
};

namespace detail {

inline McqItem item_from_json(const nlohmann::json& j) {
    McqItem item;
    item.id = j.at("id").get<std::string>();
    item.stem = j.at("question").get<std::string>();
    const auto& opts = j.at("options");
    if (!opts.is_object()) {
        throw ValidationError("'options' must be an object of label -> text");
    }
    for (auto it = opts.begin(); it != opts.end(); ++it) {  // nlohmann objects iterate sorted
        if (it.key().size() != 1) {
            throw ValidationError("option label '" + it.key() + "' is not a single letter");
        }
        item.options.emplace_back(it.key()[0], it.value().get<std::string>());
    }
    const auto answer = j.at("answer").get<std::string>();
    if (answer.size() != 1) {
        throw ValidationError("'answer' must be a single letter");
    }
    item.gold = answer[0];
    item.validate();
    return item;
}

}  // namespace detail

// Parses a JSONL corpus; every line either yields an item or a line-numbered
// rejection. Rejections are written beside the input as "<name>.errors.txt".
inline LoadReport load_jsonl_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open '" + path + "'");
    }
    LoadReport report;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;  // blank lines are not errors
        }
        try {
            report.items.push_back(detail::item_from_json(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            report.rejected.emplace_back(line_no, e.what());
        }
    }
    if (!report.rejected.empty()) {
        std::filesystem::path p(path);
        p.replace_extension(".errors.txt");
        report.report_path = p.string();
        std::ofstream out(report.report_path, std::ios::trunc);
        for (const auto& [no, msg] : report.rejected) {
            out << "line " << no << ": " << msg << "\n";
        }
    }
    if (report.items.empty()) {
        throw EmptyCorpusError("'" + path + "' contains no valid items");
    }
    return report;
}

inline std::vector<McqItem> load_jsonl(const std::string& path) {
    return load_jsonl_report(path).items;
}

// ---------------------------------------------------------------------------
// Synthetic families
// ---------------------------------------------------------------------------

enum class TaskFamily { Modular, Syllogism, Lookup, Marker };

inline const char* task_family_name(TaskFamily f) {
    switch (f) {
        case TaskFamily::Modular: return "modular";
        case TaskFamily::Syllogism: return "syllogism";
        case TaskFamily::Lookup: return "lookup";
        case TaskFamily::Marker: return "marker";
    }
    return "?";
}

inline TaskFamily task_family_from_name(const std::string& name) {
    if (name == "modular") return TaskFamily::Modular;
    if (name == "syllogism") return TaskFamily::Syllogism;
    if (name == "lookup") return TaskFamily::Lookup;
    if (name == "marker") return TaskFamily::Marker;
    throw ConfigError("unknown task family '" + name +
                      "' (expected modular|syllogism|lookup|marker)");
}

namespace detail {

inline const std::array<const char*, 12> kCategoryWords = {
    "blorps", "krins",  "zorths", "plims",  "drells", "quints",
    "snorfs", "trells", "glims",  "vrants", "mirps",  "fodds",
};

inline const std::array<const char*, 12> kLookupKeys = {
    "alpha", "bravo", "delta", "echo",  "faro",  "golf",
    "hotel", "india", "kilo",  "lima",  "mike",  "nova",
};

// Assigns the 4 candidate texts to labels A-D with the gold text at a
// shuffled slot; returns the gold label.
inline char assign_options(McqItem& item, const std::string& correct,
                           const std::vector<std::string>& wrong, Rng& rng) {
    std::vector<std::string> texts = wrong;
    texts.insert(texts.begin() + static_cast<long>(rng.below(wrong.size() + 1)), correct);
    char gold = '?';
    for (std::size_t i = 0; i < texts.size(); ++i) {
        const char label = static_cast<char>('A' + i);
        item.options.emplace_back(label, texts[i]);
        if (texts[i] == correct && gold == '?') {
            gold = label;
        }
    }
    return gold;
}

inline McqItem gen_modular(Rng& rng, int index) {
    McqItem item;
    item.id = "modular-" + std::to_string(index);
    const int m = 5 + static_cast<int>(rng.below(16));   // 5..20
    const int a = 2 + static_cast<int>(rng.below(98));   // 2..99
    const int b = 2 + static_cast<int>(rng.below(98));
    const int v = (a + b) % m;
    item.stem = "What is (" + std::to_string(a) + " + " + std::to_string(b) + ") mod " +
                std::to_string(m) + "?";
    std::vector<std::string> wrong;
    while (wrong.size() < 3) {
        const int w = static_cast<int>(rng.below(static_cast<std::uint64_t>(m)));
        if (w == v) {
            continue;
        }
        const std::string ws = std::to_string(w);
        bool dup = false;
        for (const auto& x : wrong) {
            if (x == ws) {
                dup = true;
                break;
            }
        }
        if (!dup) {
            wrong.push_back(ws);
        }
    }
    item.gold = assign_options(item, std::to_string(v), wrong, rng);
    return item;
}

inline McqItem gen_syllogism(Rng& rng, int index) {
    McqItem item;
    item.id = "syllogism-" + std::to_string(index);
    // three distinct category names
    std::array<const char*, 3> cats{};
    std::array<std::size_t, 3> picked{};
    for (int i = 0; i < 3; ++i) {
        for (;;) {
            const std::size_t c = rng.below(kCategoryWords.size());
            bool dup = false;
            for (int j = 0; j < i; ++j) {
                if (picked[static_cast<std::size_t>(j)] == c) {
                    dup = true;
                    break;
                }
            }
            if (!dup) {
                picked[static_cast<std::size_t>(i)] = c;
                cats[static_cast<std::size_t>(i)] = kCategoryWords[c];
                break;
            }
        }
    }
    const std::string x = cats[0];
    const std::string y = cats[1];
    const std::string z = cats[2];
    item.stem = "Premise 1: All " + x + " are " + y + ". Premise 2: All " + y + " are " + z +
                ". Which conclusion follows necessarily?";
    const std::string correct = "All " + x + " are " + z + ".";
    const std::vector<std::string> wrong = {
        "No " + x + " are " + z + ".",
        "All " + z + " are " + x + ".",
        "Some " + y + " are not " + x + ".",
    };
    item.gold = assign_options(item, correct, wrong, rng);
    return item;
}

inline McqItem gen_lookup(Rng& rng, int index) {
    McqItem item;
    item.id = "lookup-" + std::to_string(index);
    // four distinct keys with four distinct values
    std::array<std::size_t, 4> keys{};
    for (int i = 0; i < 4; ++i) {
        for (;;) {
            const std::size_t k = rng.below(kLookupKeys.size());
            bool dup = false;
            for (int j = 0; j < i; ++j) {
                if (keys[static_cast<std::size_t>(j)] == k) {
                    dup = true;
                    break;
                }
            }
            if (!dup) {
                keys[static_cast<std::size_t>(i)] = k;
                break;
            }
        }
    }
    std::array<int, 4> values{};
    for (int i = 0; i < 4; ++i) {
        for (;;) {
            const int v = 1 + static_cast<int>(rng.below(49));
            bool dup = false;
            for (int j = 0; j < i; ++j) {
                if (values[static_cast<std::size_t>(j)] == v) {
                    dup = true;
                    break;
                }
            }
            if (!dup) {
                values[static_cast<std::size_t>(i)] = v;
                break;
            }
        }
    }
    std::string table;
    for (int i = 0; i < 4; ++i) {
        if (i > 0) {
            table += ", ";
        }
        table += std::string(kLookupKeys[keys[static_cast<std::size_t>(i)]]) + " = " +
                 std::to_string(values[static_cast<std::size_t>(i)]);
    }
    const int pick = static_cast<int>(rng.below(4));
    item.stem = "Consider the table: " + table + ". What is the value of " +
                kLookupKeys[keys[static_cast<std::size_t>(pick)]] + "?";
    std::vector<std::string> wrong;
    for (int i = 0; i < 4; ++i) {
        if (i != pick) {
            wrong.push_back(std::to_string(values[static_cast<std::size_t>(i)]));
        }
    }
    item.gold =
        assign_options(item, std::to_string(values[static_cast<std::size_t>(pick)]), wrong, rng);
    return item;
}

// Answer is printed in the stem at a fixed byte offset, so the task is
// learnable by a tiny model reading one prompt position.
inline McqItem gen_marker(Rng& rng, int index) {
    McqItem item;
    item.id = "marker-" + std::to_string(index);
    const char marker = static_cast<char>('A' + rng.below(4));
    item.stem = std::string("Marker: ") + marker +
                ". Select the option whose label matches the marker.";
    item.options = {{'A', "alpha"}, {'B', "beta"}, {'C', "gamma"}, {'D', "delta"}};
    item.gold = marker;
    return item;
}

}  // namespace detail

// Gold answers are correct by construction; deterministic for a fixed seed.
inline std::vector<McqItem> gen_synthetic(TaskFamily family, int count, std::uint64_t seed) {
    if (count < 1) {
        throw ConfigError("synthetic count must be >= 1");
    }
    Rng rng(derive_seed(seed, "tasks.synthetic", static_cast<std::uint64_t>(family)));
    std::vector<McqItem> items;
    items.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        McqItem item;
        switch (family) {
            case TaskFamily::Modular: item = detail::gen_modular(rng, i); break;
            case TaskFamily::Syllogism: item = detail::gen_syllogism(rng, i); break;
            case TaskFamily::Lookup: item = detail::gen_lookup(rng, i); break;
            case TaskFamily::Marker: item = detail::gen_marker(rng, i); break;
        }
        item.validate();
        items.push_back(std::move(item));
    }
    return items;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

struct SplitSpec {
    int train_cap = 1500;
    int eval_size = 0;
    std::uint64_t shuffle_seed = 0;
};

struct TrainEvalSplit {
    std::vector<McqItem> train;
    std::vector<McqItem> eval;
};

// Deterministic shuffle, then disjoint prefix/suffix ranges; no id can land
// in both splits.
inline TrainEvalSplit split_corpus(const std::vector<McqItem>& items, const SplitSpec& spec) {
    if (spec.train_cap < 0 || spec.eval_size < 0) {
        throw ConfigError("split sizes must be non-negative");
    }
    if (static_cast<std::size_t>(spec.train_cap) > items.size()) {
        throw ValidationError("train cap " + std::to_string(spec.train_cap) +
                              " exceeds corpus size " + std::to_string(items.size()));
    }
    if (static_cast<std::size_t>(spec.train_cap) + static_cast<std::size_t>(spec.eval_size) >
        items.size()) {
        throw ValidationError("train cap + eval size exceeds corpus size");
    }
    std::vector<std::size_t> order(items.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    Rng rng(derive_seed(spec.shuffle_seed, "tasks.split"));
    rng.shuffle(order);
    TrainEvalSplit out;
    out.train.reserve(static_cast<std::size_t>(spec.train_cap));
    out.eval.reserve(static_cast<std::size_t>(spec.eval_size));
    for (int i = 0; i < spec.train_cap; ++i) {
        out.train.push_back(items[order[static_cast<std::size_t>(i)]]);
    }
    for (int i = 0; i < spec.eval_size; ++i) {
        out.eval.push_back(items[order[static_cast<std::size_t>(spec.train_cap + i)]]);
    }
    return out;
}

}  // namespace crlab
