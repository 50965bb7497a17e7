#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "crlab/config.hpp"
#include "crlab/errors.hpp"
#include "crlab/eval.hpp"
#include "crlab/grpo.hpp"
#include "crlab/model.hpp"
#include "crlab/prompts.hpp"
#include "crlab/sft.hpp"
#include "crlab/styles.hpp"
#include "crlab/tasks.hpp"

namespace crlab {

inline std::string default_out_root() {
    if (const char* env = std::getenv("CRLAB_OUT_ROOT")) {
        return env;
    }
    return "runs";
}

// --out pins the exact directory; otherwise a fresh one is derived under the
// output root, suffixed to avoid collisions. Artifact contents carry no
// timestamps so identical runs produce byte-identical files.
inline std::string resolve_out_dir(const RunConfig& cfg, const std::string& stage) {
    std::filesystem::path dir;
    if (!cfg.out_dir.empty()) {
        dir = cfg.out_dir;
    } else {
        const std::filesystem::path base =
            std::filesystem::path(default_out_root()) /
            (stage + "-" + paradigm_name(cfg.paradigm) + "-seed" + std::to_string(cfg.seed));
        dir = base;
        int suffix = 2;
        while (std::filesystem::exists(dir)) {
            dir = base;
            dir += "-" + std::to_string(suffix++);
        }
    }
    std::filesystem::create_directories(dir);
    return dir.string();
}

namespace detail {

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) {
        throw IoError("cannot open '" + path + "' for writing");
    }
    out << content;
    if (!out) {
        throw IoError("short write to '" + path + "'");
    }
}

inline std::string join_path(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

// Model output is raw bytes and need not be valid UTF-8; invalid sequences
// are replaced (deterministically) rather than aborting the dump.
inline std::string dump_row(const nlohmann::ordered_json& row) {
    return row.dump(-1, ' ', false, nlohmann::ordered_json::error_handler_t::replace);
}

}  // namespace detail

struct CorpusBundle {
    std::vector<McqItem> train;
    std::vector<McqItem> eval;
    std::string dataset_label;
};

inline CorpusBundle load_corpus(const RunConfig& cfg) {
    CorpusBundle b;
    std::vector<McqItem> all;
    if (cfg.data_source == "synthetic") {
        all = gen_synthetic(task_family_from_name(cfg.data_family), cfg.data_count, cfg.seed);
        b.dataset_label = cfg.data_family;
    } else if (cfg.data_source == "jsonl") {
        if (cfg.data_jsonl_path.empty()) {
            throw ConfigError("data.source = jsonl requires data.jsonl_path");
        }
        all = load_jsonl(cfg.data_jsonl_path);
        b.dataset_label = std::filesystem::path(cfg.data_jsonl_path).stem().string();
    } else {
        throw ConfigError("data.source must be synthetic or jsonl");
    }
    SplitSpec spec;
    spec.eval_size = std::min<int>(cfg.data_eval_size, static_cast<int>(all.size()));
    // the training cap never exceeds what the corpus can offer
    spec.train_cap = std::min<int>(cfg.data_train_cap,
                                   static_cast<int>(all.size()) - spec.eval_size);
    spec.shuffle_seed = cfg.seed;
    auto split = split_corpus(all, spec);
    b.train = std::move(split.train);
    b.eval = std::move(split.eval);
    return b;
}

inline TemplateSet resolve_templates(const RunConfig& cfg) {
    return cfg.templates_dir.empty() ? builtin_templates() : load_templates(cfg.templates_dir);
}

inline StyleLexicon resolve_lexicon(const RunConfig& cfg) {
    return cfg.lexicons_dir.empty() ? builtin_lexicon() : load_lexicon(cfg.lexicons_dir);
}

// ---------------------------------------------------------------------------
// gen-trajectories
// ---------------------------------------------------------------------------

struct GenOutcome {
    std::string out_dir;
    int kept = 0;
    int dropped = 0;
};

// Builds one trajectory per training item (template-synthesized by default,
// or sampled from a checkpoint policy) and keeps those whose extracted answer
// matches gold, unless incorrect ones are explicitly kept.
inline GenOutcome cmd_gen_trajectories(const RunConfig& cfg) {
    const CorpusBundle corpus = load_corpus(cfg);
    const TemplateSet templates = resolve_templates(cfg);
    GenOutcome outcome;
    outcome.out_dir = resolve_out_dir(cfg, "gen");
    save_config_file(cfg, detail::join_path(outcome.out_dir, "config.txt"));

    Policy policy;
    const bool from_policy = cfg.gen_source == "policy";
    if (from_policy) {
        if (cfg.gen_checkpoint.empty()) {
            throw DependencyError("gen.source = policy requires gen.checkpoint");
        }
        policy = load_checkpoint(cfg.gen_checkpoint);
    } else if (cfg.gen_source != "template") {
        throw ConfigError("gen.source must be template or policy");
    }

    std::string jsonl;
    for (std::size_t i = 0; i < corpus.train.size(); ++i) {
        const McqItem& item = corpus.train[i];
        const std::string prompt = build_prompt(item, cfg.paradigm, templates);
        std::string reasoning;
        if (from_policy) {
            std::vector<TokenId> prompt_ids;
            prompt_ids.push_back(Vocab::kBos);
            const auto body = encode(prompt);
            prompt_ids.insert(prompt_ids.end(), body.begin(), body.end());
            reasoning = sample_trajectory(policy, prompt_ids, 1.0, cfg.gen_max_new_tokens,
                                          derive_seed(cfg.seed, "gen.item", i))
                            .text;
        } else {
            reasoning = synth_reasoning(item, cfg.paradigm);
        }
        const auto extracted = extract_answer(reasoning);
        const bool correct = exact_match(extracted, item.gold) == 1;
        if (!correct && !cfg.gen_keep_incorrect) {
            ++outcome.dropped;
            continue;
        }
        ++outcome.kept;
        nlohmann::ordered_json row;
        row["id"] = item.id;
        row["paradigm"] = paradigm_name(cfg.paradigm);
        row["prompt"] = prompt;
        row["reasoning"] = reasoning;
        row["gold"] = std::string(1, item.gold);
        row["extracted"] = extracted ? std::string(1, *extracted) : std::string();
        jsonl += detail::dump_row(row);
        jsonl += '\n';
    }
    if (outcome.kept == 0) {
        throw PipelineError("no trajectories kept (" + std::to_string(outcome.dropped) +
                            " dropped as incorrect); check the generator or set "
                            "gen.keep_incorrect = true");
    }
    detail::write_text_file(detail::join_path(outcome.out_dir, "trajectories.jsonl"), jsonl);
    detail::write_text_file(detail::join_path(outcome.out_dir, "gen_stats.txt"),
                            "kept " + std::to_string(outcome.kept) + "\ndropped " +
                                std::to_string(outcome.dropped) + "\n");
    return outcome;
}

// ---------------------------------------------------------------------------
// sft
// ---------------------------------------------------------------------------

struct TrajectoryRow {
    std::string id;
    Paradigm paradigm = Paradigm::Direct;
    std::string prompt;
    std::string reasoning;
    char gold = '?';
};

inline std::vector<TrajectoryRow> load_trajectories(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open trajectory file '" + path + "'");
    }
    std::vector<TrajectoryRow> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        const auto j = nlohmann::json::parse(line);
        TrajectoryRow row;
        row.id = j.at("id").get<std::string>();
        row.paradigm = paradigm_from_name(j.at("paradigm").get<std::string>());
        row.prompt = j.at("prompt").get<std::string>();
        row.reasoning = j.at("reasoning").get<std::string>();
        const auto gold = j.at("gold").get<std::string>();
        row.gold = gold.empty() ? '?' : gold[0];
        rows.push_back(std::move(row));
    }
    if (rows.empty()) {
        throw EmptyCorpusError("'" + path + "' contains no trajectories");
    }
    return rows;
}

struct SftOutcome {
    std::string out_dir;
    std::string checkpoint_path;
    double final_loss = 0.0;
    double token_accuracy = 0.0;
};

inline SftOutcome cmd_sft(const RunConfig& cfg) {
    if (cfg.sft_trajectories.empty()) {
        throw DependencyError("sft requires sft.trajectories (output of gen-trajectories)");
    }
    if (!std::filesystem::exists(cfg.sft_trajectories)) {
        throw DependencyError("missing trajectory file '" + cfg.sft_trajectories + "'");
    }
    const auto rows = load_trajectories(cfg.sft_trajectories);
    std::vector<SftTarget> corpus;
    corpus.reserve(rows.size());
    for (const auto& row : rows) {
        corpus.push_back(build_sft_target_from_text(row.prompt, row.reasoning));
    }

    SftOutcome outcome;
    outcome.out_dir = resolve_out_dir(cfg, "sft");
    save_config_file(cfg, detail::join_path(outcome.out_dir, "config.txt"));

    const Policy start = init_policy(cfg.model, cfg.lora, cfg.seed);
    SftConfig sft_cfg = cfg.sft;
    sft_cfg.seed = derive_seed(cfg.seed, "sft");
    const SftResult result = sft_train(start, corpus, sft_cfg);

    std::string csv = "step,lr,loss\n";
    for (const auto& p : result.curve) {
        csv += std::to_string(p.step);
        csv += ',';
        csv += detail::format_double(p.lr);
        csv += ',';
        csv += detail::format_double(p.loss);
        csv += '\n';
    }
    detail::write_text_file(detail::join_path(outcome.out_dir, "loss_curve.csv"), csv);

    outcome.checkpoint_path = detail::join_path(outcome.out_dir, "checkpoint.bin");
    save_checkpoint(result.policy, outcome.checkpoint_path);
    outcome.final_loss = result.curve.empty() ? 0.0 : result.curve.back().loss;
    outcome.token_accuracy = sft_token_accuracy(result.policy, corpus);
    detail::write_text_file(
        detail::join_path(outcome.out_dir, "metrics.txt"),
        "final_loss " + detail::format_double(outcome.final_loss) + "\ntoken_accuracy " +
            detail::format_double(outcome.token_accuracy) + "\n");
    return outcome;
}

// ---------------------------------------------------------------------------
// grpo
// ---------------------------------------------------------------------------

struct GrpoOutcome {
    std::string out_dir;
    std::string checkpoint_path;
    double final_mean_reward = 0.0;
};

inline GrpoOutcome cmd_grpo(const RunConfig& cfg) {
    Policy start;
    if (cfg.grpo_from_scratch) {
        start = init_policy(cfg.model, cfg.lora, cfg.seed);
    } else {
        if (cfg.grpo_init_checkpoint.empty()) {
            throw DependencyError(
                "grpo requires grpo.init_checkpoint (an SFT checkpoint) unless "
                "grpo.from_scratch = true");
        }
        if (!std::filesystem::exists(cfg.grpo_init_checkpoint)) {
            throw DependencyError("missing checkpoint '" + cfg.grpo_init_checkpoint + "'");
        }
        // fold the SFT adapter into the base and start a fresh one for RL
        start = merge_and_reset_adapter(load_checkpoint(cfg.grpo_init_checkpoint),
                                        derive_seed(cfg.seed, "grpo.adapter"));
    }

    const CorpusBundle corpus = load_corpus(cfg);
    const TemplateSet templates = resolve_templates(cfg);

    GrpoOutcome outcome;
    outcome.out_dir = resolve_out_dir(cfg, "grpo");
    save_config_file(cfg, detail::join_path(outcome.out_dir, "config.txt"));

    GrpoConfig grpo_cfg = cfg.grpo;
    grpo_cfg.seed = derive_seed(cfg.seed, "grpo");

    std::ofstream dump;
    if (cfg.grpo_dump_trajectories) {
        dump.open(detail::join_path(outcome.out_dir, "trajectories.jsonl"),
                  std::ios::trunc | std::ios::binary);
    }
    outcome.checkpoint_path = detail::join_path(outcome.out_dir, "checkpoint.bin");

    const auto on_step = [&](int step, const Policy& current,
                             const std::vector<GroupSample>& batch, const GrpoStepMetrics&) {
        if (dump.is_open()) {
            for (const auto& g : batch) {
                for (std::size_t m = 0; m < g.members.size(); ++m) {
                    nlohmann::ordered_json row;
                    row["step"] = step;
                    row["id"] = g.prompt_id;
                    row["member"] = m;
                    row["reward"] = g.rewards[m];
                    row["advantage"] = g.advantages[m];
                    row["best"] = (static_cast<int>(m) == g.tau_star);
                    row["text"] = g.members[m].trajectory.text;
                    dump << detail::dump_row(row) << '\n';
                }
            }
        }
        if (cfg.grpo_checkpoint_interval > 0 && (step + 1) % cfg.grpo_checkpoint_interval == 0 &&
            step + 1 < grpo_cfg.total_steps) {
            save_checkpoint(current, detail::join_path(outcome.out_dir,
                                                       "checkpoint-step" +
                                                           std::to_string(step + 1) + ".bin"));
        }
        return true;
    };

    const GrpoResult result = grpo_train(start, corpus.train, cfg.paradigm, templates, grpo_cfg,
                                         on_step);

    std::string csv = "step,mean_reward,zero_group_fraction,kl,mean_gen_length\n";
    for (const auto& p : result.curve) {
        csv += std::to_string(p.step);
        csv += ',';
        csv += detail::format_double(p.mean_reward);
        csv += ',';
        csv += detail::format_double(p.zero_group_fraction);
        csv += ',';
        csv += detail::format_double(p.kl_estimate);
        csv += ',';
        csv += detail::format_double(p.mean_gen_length);
        csv += '\n';
    }
    detail::write_text_file(detail::join_path(outcome.out_dir, "reward_curve.csv"), csv);
    save_checkpoint(result.policy, outcome.checkpoint_path);
    outcome.final_mean_reward = result.curve.empty() ? 0.0 : result.curve.back().mean_reward;
    return outcome;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalOutcome {
    std::string out_dir;
    EvalReport report;
};

inline EvalOutcome cmd_eval(const RunConfig& cfg) {
    Policy policy;
    std::string method = cfg.eval_method;
    if (cfg.eval_checkpoint.empty()) {
        policy = init_policy(cfg.model, cfg.lora, cfg.seed);
        if (method.empty()) {
            method = "Prompt";
        }
    } else {
        if (!std::filesystem::exists(cfg.eval_checkpoint)) {
            throw DependencyError("missing checkpoint '" + cfg.eval_checkpoint + "'");
        }
        policy = load_checkpoint(cfg.eval_checkpoint);
        if (method.empty()) {
            method = (policy.provenance == Provenance::FromSft) ? "SFT+GRPO" : "SFT";
        }
    }

    const CorpusBundle corpus = load_corpus(cfg);
    if (corpus.eval.empty()) {
        throw EmptyCorpusError("eval split is empty; set data.eval_size > 0");
    }
    const TemplateSet templates = resolve_templates(cfg);

    EvalParams params;
    params.max_new_tokens = cfg.eval_max_new_tokens;
    params.seed = derive_seed(cfg.seed, "eval");

    EvalOutcome outcome;
    outcome.out_dir = resolve_out_dir(cfg, "eval");
    save_config_file(cfg, detail::join_path(outcome.out_dir, "config.txt"));

    const std::string dataset =
        cfg.eval_dataset.empty() ? corpus.dataset_label : cfg.eval_dataset;
    outcome.report = evaluate(policy, corpus.eval, cfg.paradigm, templates, params, method,
                              dataset);

    const ReportTable table = report_table({outcome.report});
    detail::write_text_file(detail::join_path(outcome.out_dir, "report.csv"), table.csv);
    detail::write_text_file(detail::join_path(outcome.out_dir, "report.txt"), table.text);

    std::string jsonl;
    for (const auto& rec : outcome.report.records) {
        nlohmann::ordered_json row;
        row["id"] = rec.id;
        row["predicted"] = rec.predicted ? std::string(1, *rec.predicted) : std::string();
        row["gold"] = std::string(1, rec.gold);
        row["reward"] = rec.reward;
        row["gen_tokens"] = rec.gen_tokens;
        row["text"] = rec.text;
        jsonl += detail::dump_row(row);
        jsonl += '\n';
    }
    detail::write_text_file(detail::join_path(outcome.out_dir, "transcripts.jsonl"), jsonl);
    return outcome;
}

// ---------------------------------------------------------------------------
// analyze-styles
// ---------------------------------------------------------------------------

inline std::vector<std::string> load_transcript_texts(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open transcript file '" + path + "'");
    }
    std::vector<std::string> texts;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        texts.push_back(nlohmann::json::parse(line).at("text").get<std::string>());
    }
    if (texts.empty()) {
        throw EmptyCorpusError("'" + path + "' contains no transcripts");
    }
    return texts;
}

struct StylesOutcome {
    std::string out_dir;
    StyleDistribution pre;
    StyleDistribution post;  // meaningful only when a post path was given
    bool compared = false;
    StyleShift shift;
};

// Tags one transcript corpus (pre), optionally a second (post), and writes
// the distribution CSV plus the ranked shift report when both are present.
inline StylesOutcome cmd_analyze_styles(const RunConfig& cfg, const std::string& pre_path,
                                        const std::string& post_path) {
    const StyleLexicon lexicon = resolve_lexicon(cfg);
    StylesOutcome outcome;
    outcome.out_dir = resolve_out_dir(cfg, "styles");
    save_config_file(cfg, detail::join_path(outcome.out_dir, "config.txt"));

    outcome.pre = distribution(load_transcript_texts(pre_path), cfg.paradigm, Stage::PreGrpo,
                               lexicon);

    std::string csv = "paradigm,stage,style,fraction\n";
    auto add_rows = [&csv](const StyleDistribution& d) {
        for (int i = 0; i < kStyleCount; ++i) {
            csv += paradigm_name(d.paradigm);
            csv += ',';
            csv += stage_name(d.stage);
            csv += ',';
            csv += style_name(static_cast<ReasoningStyle>(i));
            csv += ',';
            csv += detail::format_double(d.fraction[static_cast<std::size_t>(i)]);
            csv += '\n';
        }
        csv += paradigm_name(d.paradigm);
        csv += ',';
        csv += stage_name(d.stage);
        csv += ",untagged,";
        csv += detail::format_double(d.untagged_fraction);
        csv += '\n';
    };
    add_rows(outcome.pre);

    if (!post_path.empty()) {
        outcome.post = distribution(load_transcript_texts(post_path), cfg.paradigm,
                                    Stage::PostGrpo, lexicon);
        add_rows(outcome.post);
        outcome.shift = compare(outcome.pre, outcome.post);
        outcome.compared = true;
        detail::write_text_file(detail::join_path(outcome.out_dir, "style_shift.txt"),
                                outcome.shift.report);
    }
    detail::write_text_file(detail::join_path(outcome.out_dir, "style_distribution.csv"), csv);
    return outcome;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

// Merges eval report CSVs (as written by cmd_eval) into one table.
inline ReportTable cmd_report(const RunConfig& cfg, const std::vector<std::string>& csv_paths) {
    if (csv_paths.empty()) {
        throw ConfigError("report needs at least one eval report csv");
    }
    std::vector<EvalReport> reports;
    for (const auto& path : csv_paths) {
        std::ifstream in(path);
        if (!in) {
            throw IoError("cannot open report '" + path + "'");
        }
        std::string line;
        bool first = true;
        while (std::getline(in, line)) {
            if (first) {  // header
                first = false;
                continue;
            }
            if (line.empty()) {
                continue;
            }
            std::vector<std::string> fields;
            std::size_t start = 0;
            while (start <= line.size()) {
                std::size_t end = line.find(',', start);
                if (end == std::string::npos) {
                    end = line.size();
                }
                fields.push_back(line.substr(start, end - start));
                start = end + 1;
            }
            if (fields.size() != 6) {
                throw ValidationError("malformed report row in '" + path + "'");
            }
            EvalReport r;
            r.method = fields[0];
            r.paradigm = paradigm_from_name(fields[1]);
            r.dataset = fields[2];
            r.accuracy = detail::parse_double("accuracy", fields[3]);
            r.avg_token_length = detail::parse_double("avg_token_length", fields[4]);
            r.item_count = detail::parse_int("items", fields[5]);
            reports.push_back(std::move(r));
        }
    }
    const ReportTable table = report_table(reports);
    const std::string out_dir = resolve_out_dir(cfg, "report");
    save_config_file(cfg, detail::join_path(out_dir, "config.txt"));
    detail::write_text_file(detail::join_path(out_dir, "report.csv"), table.csv);
    detail::write_text_file(detail::join_path(out_dir, "report.txt"), table.text);
    return table;
}

}  // namespace crlab
