// End-to-end exercises of the stage commands: gen-trajectories -> sft -> grpo
// -> eval -> analyze-styles -> report, plus the dependency and determinism
// contracts between them. Everything runs on a deliberately tiny model so the
// whole file finishes in seconds.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "json.hpp"

#include "crlab/pipeline.hpp"

namespace fs = std::filesystem;

using crlab::cmd_analyze_styles;
using crlab::cmd_eval;
using crlab::cmd_gen_trajectories;
using crlab::cmd_grpo;
using crlab::cmd_report;
using crlab::cmd_sft;
using crlab::load_corpus;
using crlab::load_trajectories;
using crlab::Paradigm;
using crlab::Provenance;
using crlab::ReasoningStyle;
using crlab::resolve_out_dir;
using crlab::RunConfig;

namespace {

// Fresh scratch directory per test, wiped up front so reruns start clean.
std::string scratch(const std::string& name) {
  const fs::path dir = fs::path(::testing::TempDir()) / ("pipeline_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

std::string sub(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  EXPECT_TRUE(in.is_open()) << "missing " << path;
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int data_lines(const std::string& text) {
  int n = 0;
  for (char c : text) {
    n += (c == '\n');
  }
  return n;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  ASSERT_TRUE(out.is_open()) << path;
  out << content;
}

// Small enough that every stage completes in well under a second.
RunConfig tiny_config(const std::string& out_dir) {
  RunConfig cfg;
  cfg.seed = 7;
  cfg.paradigm = Paradigm::Direct;
  cfg.out_dir = out_dir;
  cfg.data_family = "marker";
  cfg.data_count = 8;
  cfg.data_train_cap = 4;
  cfg.data_eval_size = 2;
  cfg.model.dim = 16;
  cfg.model.layers = 1;
  cfg.model.heads = 2;
  cfg.model.ffw_dim = 32;
  cfg.model.max_seq_len = 320;
  cfg.lora.rank = 2;
  cfg.lora.alpha = 4.0;
  cfg.sft.lr = 1e-3;
  cfg.sft.batch_size = 4;
  cfg.sft.epochs = 2;
  cfg.grpo.group_size = 2;
  cfg.grpo.prompt_batch = 1;
  cfg.grpo.total_steps = 2;
  cfg.grpo.max_new_tokens = 6;
  cfg.grpo.kl_beta = 0.0;
  cfg.gen_max_new_tokens = 4;
  cfg.eval_max_new_tokens = 8;
  return cfg;
}

}  // namespace

TEST(OutDirResolution, ExplicitDirectoryIsUsedVerbatim) {
  const std::string root = scratch("outdir_explicit");
  RunConfig cfg = tiny_config(sub(root, "nested/run"));
  EXPECT_EQ(resolve_out_dir(cfg, "gen"), sub(root, "nested/run"));
  EXPECT_TRUE(fs::is_directory(sub(root, "nested/run")));
}

TEST(OutDirResolution, DerivedDirectoriesGetCollisionSuffixes) {
  const std::string root = scratch("outdir_derived");
  ASSERT_EQ(setenv("CRLAB_OUT_ROOT", root.c_str(), 1), 0);
  RunConfig cfg = tiny_config("");
  cfg.seed = 3;
  cfg.paradigm = Paradigm::ChainOfThought;
  EXPECT_EQ(resolve_out_dir(cfg, "gen"), sub(root, "gen-cot-seed3"));
  EXPECT_EQ(resolve_out_dir(cfg, "gen"), sub(root, "gen-cot-seed3-2"));
  EXPECT_EQ(resolve_out_dir(cfg, "gen"), sub(root, "gen-cot-seed3-3"));
  EXPECT_EQ(resolve_out_dir(cfg, "eval"), sub(root, "eval-cot-seed3"));
  ASSERT_EQ(unsetenv("CRLAB_OUT_ROOT"), 0);
}

TEST(CorpusLoading, SyntheticSourceHonorsCountsAndCaps) {
  RunConfig cfg = tiny_config("");
  const auto bundle = load_corpus(cfg);
  EXPECT_EQ(bundle.dataset_label, "marker");
  EXPECT_EQ(bundle.train.size(), 4u);
  EXPECT_EQ(bundle.eval.size(), 2u);
  std::set<std::string> ids;
  for (const auto& item : bundle.train) {
    ids.insert(item.id);
  }
  for (const auto& item : bundle.eval) {
    EXPECT_EQ(ids.count(item.id), 0u) << item.id;
  }
}

TEST(CorpusLoading, JsonlSourceUsesFileStemAsLabel) {
  const std::string root = scratch("corpus_jsonl");
  const std::string path = sub(root, "night_quiz.jsonl");
  nlohmann::ordered_json row;
  row["id"] = "q1";
  row["question"] = "Pick the first option.";
  row["options"] = {{"A", "first"}, {"B", "second"}};
  row["answer"] = "A";
  write_file(path, row.dump() + "\n" + row.dump() + "\n" + row.dump() + "\n");

  RunConfig cfg = tiny_config("");
  cfg.data_source = "jsonl";
  cfg.data_jsonl_path = path;
  cfg.data_eval_size = 1;
  cfg.data_train_cap = 2;
  const auto bundle = load_corpus(cfg);
  EXPECT_EQ(bundle.dataset_label, "night_quiz");
  EXPECT_EQ(bundle.train.size(), 2u);
  EXPECT_EQ(bundle.eval.size(), 1u);
}

TEST(CorpusLoading, RejectsUnknownSourceAndMissingJsonlPath) {
  RunConfig cfg = tiny_config("");
  cfg.data_source = "jsonl";
  EXPECT_THROW(load_corpus(cfg), crlab::ConfigError);
  cfg.data_source = "parquet";
  EXPECT_THROW(load_corpus(cfg), crlab::ConfigError);
}

TEST(GenTrajectories, TemplateSourceKeepsEveryRowAndRoundTrips) {
  const std::string root = scratch("gen_template");
  RunConfig cfg = tiny_config(sub(root, "gen"));
  const auto outcome = cmd_gen_trajectories(cfg);
  EXPECT_EQ(outcome.out_dir, sub(root, "gen"));
  EXPECT_EQ(outcome.kept, 4);
  EXPECT_EQ(outcome.dropped, 0);
  EXPECT_TRUE(fs::exists(sub(outcome.out_dir, "config.txt")));
  EXPECT_EQ(read_file(sub(outcome.out_dir, "gen_stats.txt")), "kept 4\ndropped 0\n");

  const auto rows = load_trajectories(sub(outcome.out_dir, "trajectories.jsonl"));
  const auto bundle = load_corpus(cfg);
  const auto templates = crlab::builtin_templates();
  ASSERT_EQ(rows.size(), bundle.train.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& item = bundle.train[i];
    EXPECT_EQ(rows[i].id, item.id);
    EXPECT_EQ(rows[i].paradigm, Paradigm::Direct);
    EXPECT_EQ(rows[i].prompt, crlab::build_prompt(item, Paradigm::Direct, templates));
    EXPECT_EQ(rows[i].reasoning, crlab::synth_reasoning(item, Paradigm::Direct));
    EXPECT_EQ(rows[i].gold, item.gold);
  }
}

TEST(GenTrajectories, PolicySourceNeedsCheckpointAndKeepFlagRescuesWrongAnswers) {
  const std::string root = scratch("gen_policy");
  RunConfig cfg = tiny_config(sub(root, "gen"));
  cfg.gen_source = "policy";
  EXPECT_THROW(cmd_gen_trajectories(cfg), crlab::DependencyError);

  // A freshly initialised net emits noise; with a 4-token budget no sample can
  // even spell an answer line, so strict filtering leaves nothing.
  const std::string ckpt = sub(root, "fresh.bin");
  crlab::save_checkpoint(crlab::init_policy(cfg.model, cfg.lora, cfg.seed), ckpt);
  cfg.gen_checkpoint = ckpt;
  cfg.out_dir = sub(root, "gen_strict");
  EXPECT_THROW(cmd_gen_trajectories(cfg), crlab::PipelineError);

  cfg.gen_keep_incorrect = true;
  cfg.out_dir = sub(root, "gen_keep");
  const auto outcome = cmd_gen_trajectories(cfg);
  EXPECT_EQ(outcome.kept, 4);
  EXPECT_EQ(outcome.dropped, 0);
  const auto rows = load_trajectories(sub(outcome.out_dir, "trajectories.jsonl"));
  ASSERT_EQ(rows.size(), 4u);

  cfg.gen_source = "telepathy";
  cfg.out_dir = sub(root, "gen_bad_source");
  EXPECT_THROW(cmd_gen_trajectories(cfg), crlab::ConfigError);
}

TEST(Sft, RequiresTrajectoryFile) {
  const std::string root = scratch("sft_deps");
  RunConfig cfg = tiny_config(sub(root, "sft"));
  EXPECT_THROW(cmd_sft(cfg), crlab::DependencyError);
  cfg.sft_trajectories = sub(root, "absent.jsonl");
  EXPECT_THROW(cmd_sft(cfg), crlab::DependencyError);
}

TEST(Sft, TrainsFromGeneratedTrajectoriesAndWritesArtifacts) {
  const std::string root = scratch("sft_run");
  RunConfig cfg = tiny_config(sub(root, "gen"));
  const auto gen = cmd_gen_trajectories(cfg);

  cfg.out_dir = sub(root, "sft");
  cfg.sft_trajectories = sub(gen.out_dir, "trajectories.jsonl");
  const auto outcome = cmd_sft(cfg);
  EXPECT_EQ(outcome.checkpoint_path, sub(outcome.out_dir, "checkpoint.bin"));
  EXPECT_TRUE(std::isfinite(outcome.final_loss));
  EXPECT_GT(outcome.final_loss, 0.0);
  EXPECT_GE(outcome.token_accuracy, 0.0);
  EXPECT_LE(outcome.token_accuracy, 1.0);

  // 4 rows, batch 4 -> 1 step per epoch, 2 epochs.
  const std::string curve = read_file(sub(outcome.out_dir, "loss_curve.csv"));
  EXPECT_EQ(curve.rfind("step,lr,loss\n", 0), 0u);
  EXPECT_EQ(data_lines(curve), 3);

  const std::string metrics = read_file(sub(outcome.out_dir, "metrics.txt"));
  EXPECT_NE(metrics.find("final_loss "), std::string::npos);
  EXPECT_NE(metrics.find("token_accuracy "), std::string::npos);

  const auto restored = crlab::load_checkpoint(outcome.checkpoint_path, cfg.model, cfg.lora);
  EXPECT_EQ(restored.provenance, Provenance::Fresh);
  EXPECT_EQ(restored.config.param_seed, cfg.seed);
}

TEST(Grpo, FromScratchWritesCurveCheckpointAndTrajectoryDump) {
  const std::string root = scratch("grpo_scratch");
  RunConfig cfg = tiny_config(sub(root, "grpo"));
  cfg.grpo_from_scratch = true;
  const auto outcome = cmd_grpo(cfg);

  const std::string curve = read_file(sub(outcome.out_dir, "reward_curve.csv"));
  EXPECT_EQ(curve.rfind("step,mean_reward,zero_group_fraction,kl,mean_gen_length\n", 0), 0u);
  EXPECT_EQ(data_lines(curve), 3);  // header + one row per step

  // steps * prompt_batch * group_size sampled trajectories, all dumped.
  const std::string dump = read_file(sub(outcome.out_dir, "trajectories.jsonl"));
  EXPECT_EQ(data_lines(dump), 4);
  std::istringstream lines(dump);
  std::string line;
  while (std::getline(lines, line)) {
    const auto row = nlohmann::json::parse(line);
    EXPECT_TRUE(row.contains("step"));
    EXPECT_TRUE(row.contains("id"));
    EXPECT_TRUE(row.contains("member"));
    EXPECT_TRUE(row.contains("reward"));
    EXPECT_TRUE(row.contains("advantage"));
    EXPECT_TRUE(row.contains("best"));
    EXPECT_TRUE(row.contains("text"));
  }

  const auto restored = crlab::load_checkpoint(outcome.checkpoint_path, cfg.model, cfg.lora);
  EXPECT_EQ(restored.provenance, Provenance::Fresh);

  cfg.out_dir = sub(root, "grpo_nodump");
  cfg.grpo_dump_trajectories = false;
  const auto quiet = cmd_grpo(cfg);
  EXPECT_FALSE(fs::exists(sub(quiet.out_dir, "trajectories.jsonl")));
}

TEST(Grpo, StartsFromSftCheckpointAndMarksProvenance) {
  const std::string root = scratch("grpo_from_sft");
  RunConfig cfg = tiny_config(sub(root, "gen"));
  const auto gen = cmd_gen_trajectories(cfg);
  cfg.out_dir = sub(root, "sft");
  cfg.sft_trajectories = sub(gen.out_dir, "trajectories.jsonl");
  const auto sft = cmd_sft(cfg);

  RunConfig bad = tiny_config(sub(root, "grpo_bad"));
  EXPECT_THROW(cmd_grpo(bad), crlab::DependencyError);
  bad.grpo_init_checkpoint = sub(root, "absent.bin");
  EXPECT_THROW(cmd_grpo(bad), crlab::DependencyError);

  cfg.out_dir = sub(root, "grpo");
  cfg.grpo_init_checkpoint = sft.checkpoint_path;
  cfg.grpo_checkpoint_interval = 1;
  const auto outcome = cmd_grpo(cfg);
  const auto restored = crlab::load_checkpoint(outcome.checkpoint_path);
  EXPECT_EQ(restored.provenance, Provenance::FromSft);
  // Interval checkpoints cover interior steps only; the final state is
  // already checkpoint.bin.
  EXPECT_TRUE(fs::exists(sub(outcome.out_dir, "checkpoint-step1.bin")));
  EXPECT_FALSE(fs::exists(sub(outcome.out_dir, "checkpoint-step2.bin")));
}

TEST(Eval, InfersMethodFromCheckpointProvenance) {
  const std::string root = scratch("eval_methods");
  RunConfig cfg = tiny_config(sub(root, "eval_prompt"));
  const auto prompt_eval = cmd_eval(cfg);
  EXPECT_EQ(prompt_eval.report.method, "Prompt");
  EXPECT_EQ(prompt_eval.report.item_count, 2);
  EXPECT_EQ(prompt_eval.report.records.size(), 2u);

  // Transcript rows mirror the report records one-to-one.
  const std::string transcripts = read_file(sub(prompt_eval.out_dir, "transcripts.jsonl"));
  EXPECT_EQ(data_lines(transcripts), 2);
  EXPECT_TRUE(fs::exists(sub(prompt_eval.out_dir, "report.csv")));
  EXPECT_TRUE(fs::exists(sub(prompt_eval.out_dir, "report.txt")));

  cfg.out_dir = sub(root, "gen");
  const auto gen = cmd_gen_trajectories(cfg);
  cfg.out_dir = sub(root, "sft");
  cfg.sft_trajectories = sub(gen.out_dir, "trajectories.jsonl");
  const auto sft = cmd_sft(cfg);

  cfg.out_dir = sub(root, "eval_sft");
  cfg.eval_checkpoint = sft.checkpoint_path;
  EXPECT_EQ(cmd_eval(cfg).report.method, "SFT");

  RunConfig grpo_cfg = tiny_config(sub(root, "grpo"));
  grpo_cfg.grpo_init_checkpoint = sft.checkpoint_path;
  const auto grpo = cmd_grpo(grpo_cfg);
  cfg.out_dir = sub(root, "eval_grpo");
  cfg.eval_checkpoint = grpo.checkpoint_path;
  EXPECT_EQ(cmd_eval(cfg).report.method, "SFT+GRPO");

  cfg.out_dir = sub(root, "eval_custom");
  cfg.eval_method = "Ablation";
  EXPECT_EQ(cmd_eval(cfg).report.method, "Ablation");
}

TEST(Eval, MissingCheckpointOrEmptySplitFails) {
  const std::string root = scratch("eval_errors");
  RunConfig cfg = tiny_config(sub(root, "eval"));
  cfg.eval_checkpoint = sub(root, "absent.bin");
  EXPECT_THROW(cmd_eval(cfg), crlab::DependencyError);

  cfg.eval_checkpoint.clear();
  cfg.data_eval_size = 0;
  EXPECT_THROW(cmd_eval(cfg), crlab::EmptyCorpusError);
}

TEST(AnalyzeStyles, TagsOneCorpusOrComparesTwo) {
  const std::string root = scratch("styles");
  auto make_jsonl = [&](const std::string& name,
                        const std::vector<std::string>& texts) {
    std::string body;
    for (const auto& t : texts) {
      nlohmann::ordered_json row;
      row["text"] = t;
      body += row.dump() + "\n";
    }
    const std::string path = sub(root, name);
    write_file(path, body);
    return path;
  };
  const std::string pre = make_jsonl(
      "pre.jsonl", {"Therefore the claim holds.", "Because it rained, the road is wet."});
  const std::string post = make_jsonl(
      "post.jsonl", {"In general the rule repeats.", "Plain filler text with no markers."});

  RunConfig cfg = tiny_config(sub(root, "solo"));
  const auto solo = cmd_analyze_styles(cfg, pre, "");
  EXPECT_FALSE(solo.compared);
  EXPECT_FALSE(fs::exists(sub(solo.out_dir, "style_shift.txt")));
  const std::string solo_csv = read_file(sub(solo.out_dir, "style_distribution.csv"));
  EXPECT_EQ(data_lines(solo_csv), 8);  // header + 6 styles + untagged
  EXPECT_DOUBLE_EQ(solo.pre.fraction[static_cast<int>(ReasoningStyle::Deductive)], 0.5);
  EXPECT_DOUBLE_EQ(solo.pre.fraction[static_cast<int>(ReasoningStyle::Causal)], 0.5);
  EXPECT_DOUBLE_EQ(solo.pre.untagged_fraction, 0.0);

  cfg.out_dir = sub(root, "pair");
  const auto pair = cmd_analyze_styles(cfg, pre, post);
  EXPECT_TRUE(pair.compared);
  EXPECT_DOUBLE_EQ(pair.post.fraction[static_cast<int>(ReasoningStyle::Inductive)], 1.0);
  EXPECT_DOUBLE_EQ(pair.post.untagged_fraction, 0.5);
  EXPECT_EQ(pair.shift.top_amplified, ReasoningStyle::Inductive);
  EXPECT_EQ(pair.shift.top_suppressed, ReasoningStyle::Deductive);
  const std::string pair_csv = read_file(sub(pair.out_dir, "style_distribution.csv"));
  EXPECT_EQ(data_lines(pair_csv), 15);  // header + 7 rows per stage
  EXPECT_EQ(read_file(sub(pair.out_dir, "style_shift.txt")), pair.shift.report);

  EXPECT_THROW(cmd_analyze_styles(cfg, sub(root, "absent.jsonl"), ""), crlab::IoError);
}

TEST(Report, MergesEvalCsvsIntoOneTable) {
  const std::string root = scratch("report");
  RunConfig cfg = tiny_config(sub(root, "eval_a"));
  const auto a = cmd_eval(cfg);
  cfg.out_dir = sub(root, "eval_b");
  cfg.eval_method = "SFT";
  const auto b = cmd_eval(cfg);

  RunConfig report_cfg = tiny_config(sub(root, "merged"));
  const auto table =
      cmd_report(report_cfg, {sub(a.out_dir, "report.csv"), sub(b.out_dir, "report.csv")});
  EXPECT_EQ(data_lines(table.csv), 3);
  EXPECT_NE(table.csv.find("Prompt,direct,marker"), std::string::npos);
  EXPECT_NE(table.csv.find("SFT,direct,marker"), std::string::npos);
  EXPECT_EQ(read_file(sub(root, "merged/report.csv")), table.csv);
  EXPECT_EQ(read_file(sub(root, "merged/report.txt")), table.text);

  EXPECT_THROW(cmd_report(report_cfg, {}), crlab::ConfigError);
  report_cfg.out_dir = sub(root, "merged_missing");
  EXPECT_THROW(cmd_report(report_cfg, {sub(root, "absent.csv")}), crlab::IoError);

  const std::string bad = sub(root, "bad.csv");
  write_file(bad, "method,paradigm,dataset,accuracy,avg_token_length,items\noops,row\n");
  report_cfg.out_dir = sub(root, "merged_bad");
  EXPECT_THROW(cmd_report(report_cfg, {bad}), crlab::ValidationError);
}

TEST(Determinism, RerunsProduceByteIdenticalArtifacts) {
  const std::string root = scratch("determinism");

  RunConfig gen_cfg = tiny_config(sub(root, "gen_a"));
  const auto gen_a = cmd_gen_trajectories(gen_cfg);
  gen_cfg.out_dir = sub(root, "gen_b");
  const auto gen_b = cmd_gen_trajectories(gen_cfg);
  EXPECT_EQ(read_file(sub(gen_a.out_dir, "trajectories.jsonl")),
            read_file(sub(gen_b.out_dir, "trajectories.jsonl")));

  RunConfig sft_cfg = tiny_config(sub(root, "sft_a"));
  sft_cfg.sft_trajectories = sub(gen_a.out_dir, "trajectories.jsonl");
  const auto sft_a = cmd_sft(sft_cfg);
  sft_cfg.out_dir = sub(root, "sft_b");
  const auto sft_b = cmd_sft(sft_cfg);
  EXPECT_EQ(read_file(sft_a.checkpoint_path), read_file(sft_b.checkpoint_path));
  EXPECT_EQ(read_file(sub(sft_a.out_dir, "loss_curve.csv")),
            read_file(sub(sft_b.out_dir, "loss_curve.csv")));

  RunConfig grpo_cfg = tiny_config(sub(root, "grpo_a"));
  grpo_cfg.grpo_from_scratch = true;
  const auto grpo_a = cmd_grpo(grpo_cfg);
  grpo_cfg.out_dir = sub(root, "grpo_b");
  const auto grpo_b = cmd_grpo(grpo_cfg);
  EXPECT_EQ(read_file(grpo_a.checkpoint_path), read_file(grpo_b.checkpoint_path));
  EXPECT_EQ(read_file(sub(grpo_a.out_dir, "reward_curve.csv")),
            read_file(sub(grpo_b.out_dir, "reward_curve.csv")));
  EXPECT_EQ(read_file(sub(grpo_a.out_dir, "trajectories.jsonl")),
            read_file(sub(grpo_b.out_dir, "trajectories.jsonl")));

  RunConfig eval_cfg = tiny_config(sub(root, "eval_a"));
  eval_cfg.eval_checkpoint = sft_a.checkpoint_path;
  const auto eval_a = cmd_eval(eval_cfg);
  eval_cfg.out_dir = sub(root, "eval_b");
  const auto eval_b = cmd_eval(eval_cfg);
  EXPECT_EQ(read_file(sub(eval_a.out_dir, "report.csv")),
            read_file(sub(eval_b.out_dir, "report.csv")));
  EXPECT_EQ(read_file(sub(eval_a.out_dir, "transcripts.jsonl")),
            read_file(sub(eval_b.out_dir, "transcripts.jsonl")));
}
