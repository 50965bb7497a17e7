// crlab: command-line front-end for the composite-reasoning training lab.
//
// One subcommand per process; each writes its artifacts into a fresh run
// directory (config snapshot, checkpoints, CSV curves, JSONL dumps) so a run
// can be reproduced bit-for-bit from what it leaves on disk.

#include <cstdint>
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "crlab/pipeline.hpp"

namespace {

// Flags shared by every subcommand. Option pointers let us tell "explicitly
// set on the command line" apart from "left at default", so overrides only
// apply when the user actually passed them.
struct CommonArgs {
    std::string config_path;
    std::uint64_t seed = 0;
    std::string out_dir;
    std::string paradigm;
    CLI::Option* config_opt = nullptr;
    CLI::Option* seed_opt = nullptr;
    CLI::Option* out_opt = nullptr;
    CLI::Option* paradigm_opt = nullptr;
};

void add_common(CLI::App* sub, CommonArgs& args) {
    args.config_opt = sub->add_option("--config", args.config_path,
                                      "Run config file (flat dotted-key text)");
    args.seed_opt = sub->add_option("--seed", args.seed, "Global seed override");
    args.out_opt = sub->add_option("--out", args.out_dir, "Pin the run output directory");
    args.paradigm_opt =
        sub->add_option("--paradigm", args.paradigm, "Reasoning paradigm: direct|cot|sr|cr");
}

crlab::RunConfig build_config(const CommonArgs& args) {
    crlab::RunConfig cfg;
    if (args.config_opt->count() > 0) {
        cfg = crlab::load_config_file(args.config_path);
    }
    if (args.seed_opt->count() > 0) {
        cfg.seed = args.seed;
    }
    if (args.out_opt->count() > 0) {
        cfg.out_dir = args.out_dir;
    }
    if (args.paradigm_opt->count() > 0) {
        cfg.paradigm = crlab::paradigm_from_name(args.paradigm);
    }
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"composite-reasoning training lab"};
    app.require_subcommand(1);

    // --- gen-trajectories ---
    auto* gen = app.add_subcommand("gen-trajectories",
                                   "Build one reasoning trajectory per training item");
    CommonArgs gen_args;
    add_common(gen, gen_args);
    std::string gen_source;
    std::string gen_checkpoint;
    bool keep_incorrect = false;
    auto* gen_source_opt =
        gen->add_option("--source", gen_source, "Trajectory source: template|policy");
    auto* gen_ckpt_opt = gen->add_option("--checkpoint", gen_checkpoint,
                                         "Policy checkpoint when --source=policy");
    gen->add_flag("--keep-incorrect", keep_incorrect,
                  "Keep trajectories whose answer does not match gold");

    // --- sft ---
    auto* sft = app.add_subcommand("sft", "Supervised fine-tuning on a trajectory file");
    CommonArgs sft_args;
    add_common(sft, sft_args);
    std::string sft_trajectories;
    auto* sft_traj_opt = sft->add_option("--trajectories", sft_trajectories,
                                         "Trajectory JSONL from gen-trajectories");

    // --- grpo ---
    auto* grpo = app.add_subcommand("grpo", "Group-relative policy optimization");
    CommonArgs grpo_args;
    add_common(grpo, grpo_args);
    std::string init_checkpoint;
    bool from_scratch = false;
    auto* grpo_ckpt_opt = grpo->add_option("--init-checkpoint", init_checkpoint,
                                           "SFT checkpoint to start from");
    grpo->add_flag("--from-scratch", from_scratch,
                   "Start from a fresh policy instead of an SFT checkpoint");

    // --- eval ---
    auto* eval = app.add_subcommand("eval", "Greedy exact-match evaluation");
    CommonArgs eval_args;
    add_common(eval, eval_args);
    std::string eval_checkpoint;
    std::string eval_method;
    auto* eval_ckpt_opt =
        eval->add_option("--checkpoint", eval_checkpoint, "Checkpoint to evaluate");
    auto* eval_method_opt =
        eval->add_option("--method", eval_method, "Method label for the report row");

    // --- analyze-styles ---
    auto* styles = app.add_subcommand("analyze-styles",
                                      "Reasoning-style distribution over eval transcripts");
    CommonArgs styles_args;
    add_common(styles, styles_args);
    std::string pre_path;
    std::string post_path;
    styles->add_option("--pre", pre_path, "Transcript JSONL before policy optimization")
        ->required();
    styles->add_option("--post", post_path,
                       "Transcript JSONL after policy optimization (enables the shift report)");

    // --- report ---
    auto* report = app.add_subcommand("report", "Merge eval report CSVs into one table");
    CommonArgs report_args;
    add_common(report, report_args);
    std::vector<std::string> csv_paths;
    report->add_option("csv", csv_paths, "Eval report CSV files")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            crlab::RunConfig cfg = build_config(gen_args);
            if (gen_source_opt->count() > 0) {
                cfg.gen_source = gen_source;
            }
            if (gen_ckpt_opt->count() > 0) {
                cfg.gen_checkpoint = gen_checkpoint;
            }
            if (keep_incorrect) {
                cfg.gen_keep_incorrect = true;
            }
            const crlab::GenOutcome out = crlab::cmd_gen_trajectories(cfg);
            std::printf("gen-trajectories: kept %d, dropped %d -> %s\n", out.kept, out.dropped,
                        out.out_dir.c_str());
        } else if (sft->parsed()) {
            crlab::RunConfig cfg = build_config(sft_args);
            if (sft_traj_opt->count() > 0) {
                cfg.sft_trajectories = sft_trajectories;
            }
            const crlab::SftOutcome out = crlab::cmd_sft(cfg);
            std::printf("sft: final_loss=%.6f token_accuracy=%.2f%% -> %s\n", out.final_loss,
                        out.token_accuracy * 100.0, out.out_dir.c_str());
        } else if (grpo->parsed()) {
            crlab::RunConfig cfg = build_config(grpo_args);
            if (grpo_ckpt_opt->count() > 0) {
                cfg.grpo_init_checkpoint = init_checkpoint;
            }
            if (from_scratch) {
                cfg.grpo_from_scratch = true;
            }
            const crlab::GrpoOutcome out = crlab::cmd_grpo(cfg);
            std::printf("grpo: final_mean_reward=%.4f -> %s\n", out.final_mean_reward,
                        out.out_dir.c_str());
        } else if (eval->parsed()) {
            crlab::RunConfig cfg = build_config(eval_args);
            if (eval_ckpt_opt->count() > 0) {
                cfg.eval_checkpoint = eval_checkpoint;
            }
            if (eval_method_opt->count() > 0) {
                cfg.eval_method = eval_method;
            }
            const crlab::EvalOutcome out = crlab::cmd_eval(cfg);
            std::printf("eval: %s/%s on %s accuracy=%.2f%% avg_tokens=%.2f (%d items) -> %s\n",
                        out.report.method.c_str(), crlab::paradigm_name(out.report.paradigm),
                        out.report.dataset.c_str(), out.report.accuracy,
                        out.report.avg_token_length, out.report.item_count, out.out_dir.c_str());
        } else if (styles->parsed()) {
            crlab::RunConfig cfg = build_config(styles_args);
            const crlab::StylesOutcome out = crlab::cmd_analyze_styles(cfg, pre_path, post_path);
            std::printf("analyze-styles: %lld pre sentences -> %s\n",
                        static_cast<long long>(out.pre.sentence_count), out.out_dir.c_str());
            if (out.compared) {
                std::fputs(out.shift.report.c_str(), stdout);
            }
        } else if (report->parsed()) {
            crlab::RunConfig cfg = build_config(report_args);
            const crlab::ReportTable table = crlab::cmd_report(cfg, csv_paths);
            std::fputs(table.text.c_str(), stdout);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
