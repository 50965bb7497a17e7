#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "crlab/errors.hpp"
#include "crlab/model.hpp"
#include "crlab/prompts.hpp"
#include "crlab/rewards.hpp"
#include "crlab/rng.hpp"
#include "crlab/tasks.hpp"

namespace crlab {

struct EvalItemRecord {
    std::string id;
    std::optional<char> predicted;
    char gold = '?';
    Reward reward = 0;
    int gen_tokens = 0;
    std::string text;
};

struct EvalReport {
    std::string method;  // Prompt | SFT | GRPO | SFT+GRPO
    Paradigm paradigm = Paradigm::Direct;
    std::string dataset;
    double accuracy = 0.0;          // percent
    double avg_token_length = 0.0;  // generated tokens only
    int item_count = 0;
    std::vector<EvalItemRecord> records;
};

struct EvalParams {
    double temperature = 0.0;  // greedy by default
    int max_new_tokens = 256;
    std::uint64_t seed = 0;
};

// Greedy-by-default scoring of every item; prompt tokens never count toward
// the reported generation length.
inline EvalReport evaluate(const Policy& policy, const std::vector<McqItem>& items,
                           Paradigm paradigm, const TemplateSet& templates,
                           const EvalParams& params, const std::string& method,
                           const std::string& dataset) {
    if (items.empty()) {
        throw EmptyCorpusError("evaluation item list is empty");
    }
    EvalReport report;
    report.method = method;
    report.paradigm = paradigm;
    report.dataset = dataset;
    report.item_count = static_cast<int>(items.size());

    long reward_sum = 0;
    long token_sum = 0;
    for (std::size_t i = 0; i < items.size(); ++i) {
        const McqItem& item = items[i];
        std::vector<TokenId> prompt_ids;
        prompt_ids.push_back(Vocab::kBos);
        const std::vector<TokenId> body = encode(build_prompt(item, paradigm, templates));
        prompt_ids.insert(prompt_ids.end(), body.begin(), body.end());

        Trajectory traj = sample_trajectory(policy, prompt_ids, params.temperature,
                                            params.max_new_tokens,
                                            derive_seed(params.seed, "eval.item", i));
        traj.paradigm = paradigm;

        EvalItemRecord rec;
        rec.id = item.id;
        rec.gold = item.gold;
        rec.predicted = extract_answer(traj.text);
        rec.reward = exact_match(rec.predicted, item.gold);
        rec.gen_tokens = traj.token_count;
        rec.text = traj.text;
        reward_sum += rec.reward;
        token_sum += rec.gen_tokens;
        report.records.push_back(std::move(rec));
    }
    report.accuracy =
        100.0 * static_cast<double>(reward_sum) / static_cast<double>(report.item_count);
    report.avg_token_length =
        static_cast<double>(token_sum) / static_cast<double>(report.item_count);
    return report;
}

struct ReportTable {
    std::string text;
    std::string csv;
};

namespace detail {

inline int method_rank(const std::string& m) {
    if (m == "Prompt") return 0;
    if (m == "SFT") return 1;
    if (m == "GRPO") return 2;
    if (m == "SFT+GRPO") return 3;
    return 4;
}

inline std::string fmt2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

}  // namespace detail

// Method-major rows; per-dataset Accuracy / Avg Token Length columns in the
// text rendering. The CSV is one row per report and byte-stable.
inline ReportTable report_table(const std::vector<EvalReport>& reports) {
    if (reports.empty()) {
        throw ValidationError("report table needs at least one report");
    }
    std::vector<std::size_t> order(reports.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto& ra = reports[a];
        const auto& rb = reports[b];
        const int ma = detail::method_rank(ra.method);
        const int mb = detail::method_rank(rb.method);
        if (ma != mb) return ma < mb;
        if (ra.method != rb.method) return ra.method < rb.method;
        if (ra.paradigm != rb.paradigm) return ra.paradigm < rb.paradigm;
        return ra.dataset < rb.dataset;
    });

    ReportTable out;
    out.csv = "method,paradigm,dataset,accuracy,avg_token_length,items\n";
    for (const std::size_t i : order) {
        const auto& r = reports[i];
        out.csv += r.method;
        out.csv += ',';
        out.csv += paradigm_name(r.paradigm);
        out.csv += ',';
        out.csv += r.dataset;
        out.csv += ',';
        out.csv += detail::fmt2(r.accuracy);
        out.csv += ',';
        out.csv += detail::fmt2(r.avg_token_length);
        out.csv += ',';
        out.csv += std::to_string(r.item_count);
        out.csv += '\n';
    }

    // text layout: one row per (method, paradigm), dataset column groups
    std::vector<std::string> datasets;
    for (const auto& r : reports) {
        if (std::find(datasets.begin(), datasets.end(), r.dataset) == datasets.end()) {
            datasets.push_back(r.dataset);
        }
    }
    std::sort(datasets.begin(), datasets.end());

    auto pad = [](std::string s, std::size_t w) {
        while (s.size() < w) {
            s += ' ';
        }
        return s;
    };
    // column widths cover headers and values, plus two spaces of separation
    std::size_t wm = std::string("Method").size();
    for (const auto& r : reports) {
        wm = std::max(wm, r.method.size());
    }
    wm += 2;
    const std::size_t wp = std::string("Paradigm").size() + 2;
    std::vector<std::size_t> wc(datasets.size());
    for (std::size_t j = 0; j < datasets.size(); ++j) {
        wc[j] = std::max<std::size_t>(datasets[j].size() + 7, 8) + 2;
    }
    out.text = pad("Method", wm) + pad("Paradigm", wp);
    for (std::size_t j = 0; j < datasets.size(); ++j) {
        out.text += pad(datasets[j] + " Acc%", wc[j]) + pad(datasets[j] + " AvgTok", wc[j]);
    }
    out.text += '\n';
    std::vector<std::pair<std::string, Paradigm>> seen;
    for (const std::size_t i : order) {
        const auto key = std::make_pair(reports[i].method, reports[i].paradigm);
        if (std::find(seen.begin(), seen.end(), key) != seen.end()) {
            continue;
        }
        seen.push_back(key);
        out.text += pad(key.first, wm) + pad(paradigm_name(key.second), wp);
        for (std::size_t j = 0; j < datasets.size(); ++j) {
            bool found = false;
            for (const auto& r : reports) {
                if (r.method == key.first && r.paradigm == key.second &&
                    r.dataset == datasets[j]) {
                    out.text += pad(detail::fmt2(r.accuracy), wc[j]) +
                                pad(detail::fmt2(r.avg_token_length), wc[j]);
                    found = true;
                    break;
                }
            }
            if (!found) {
                out.text += pad("-", wc[j]) + pad("-", wc[j]);
            }
        }
        out.text += '\n';
    }
    return out;
}

}  // namespace crlab
