// Prompt assembly, template files, SFT target masks, and synthesized
// reasoning texts.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "crlab/prompts.hpp"
#include "crlab/rewards.hpp"
#include "crlab/tasks.hpp"
#include "crlab/tokenizer.hpp"

namespace {

using crlab::build_prompt;
using crlab::build_sft_target;
using crlab::build_sft_target_from_text;
using crlab::builtin_templates;
using crlab::load_templates;
using crlab::McqItem;
using crlab::Paradigm;
using crlab::synth_reasoning;

const std::vector<Paradigm> kAllParadigms = {
    Paradigm::Direct, Paradigm::ChainOfThought, Paradigm::SelfRefine,
    Paradigm::CompositeReasoning};

McqItem sample_item() {
  return McqItem{"q0",
                 "What is 2 + 2?",
                 {{'A', "3"}, {'B', "4"}, {'C', "5"}, {'D', "22"}},
                 'B'};
}

// --- templates --------------------------------------------------------------

TEST(Templates, BuiltinDirectCarriesNoInstruction) {
  const auto t = builtin_templates();
  EXPECT_TRUE(t.for_paradigm(Paradigm::Direct).empty());
  EXPECT_FALSE(t.for_paradigm(Paradigm::ChainOfThought).empty());
  EXPECT_FALSE(t.for_paradigm(Paradigm::SelfRefine).empty());
  EXPECT_FALSE(t.for_paradigm(Paradigm::CompositeReasoning).empty());
}

TEST(Templates, ShippedTemplateFilesMatchBuiltins) {
  const auto from_files =
      load_templates(std::string(CRLAB_ASSET_DIR) + "/templates");
  const auto builtin = builtin_templates();
  for (auto p : kAllParadigms) {
    EXPECT_EQ(from_files.for_paradigm(p), builtin.for_paradigm(p))
        << crlab::paradigm_name(p);
  }
}

TEST(Templates, LoadStripsTrailingNewlinesOnly) {
  const std::string dir = ::testing::TempDir() + "tmpl_strip";
  std::filesystem::create_directories(dir);
  for (const char* name : {"direct", "cot", "sr", "cr"}) {
    std::ofstream out(dir + "/" + name + ".txt", std::ios::trunc);
    out << "  keep inner\nlines  \n\n";
  }
  const auto t = load_templates(dir);
  for (auto p : kAllParadigms) {
    EXPECT_EQ(t.for_paradigm(p), "  keep inner\nlines  ");
  }
}

TEST(Templates, MissingFileThrows) {
  const std::string dir = ::testing::TempDir() + "tmpl_missing";
  std::filesystem::create_directories(dir);
  std::ofstream(dir + "/direct.txt") << "";
  // cot.txt et al. absent
  EXPECT_THROW(load_templates(dir), crlab::IoError);
}

// --- prompt assembly --------------------------------------------------------

TEST(PromptBuild, ContainsStemOptionsAndDirective) {
  const auto item = sample_item();
  const auto t = builtin_templates();
  for (auto p : kAllParadigms) {
    const std::string prompt = build_prompt(item, p, t);
    EXPECT_NE(prompt.find("Question: What is 2 + 2?\n"), std::string::npos);
    EXPECT_NE(prompt.find("Options:\n"), std::string::npos);
    EXPECT_NE(prompt.find("A) 3\n"), std::string::npos);
    EXPECT_NE(prompt.find("B) 4\n"), std::string::npos);
    EXPECT_NE(prompt.find("C) 5\n"), std::string::npos);
    EXPECT_NE(prompt.find("D) 22\n"), std::string::npos);
    const std::string tail = std::string(crlab::kAnswerDirective) + "\n";
    ASSERT_GE(prompt.size(), tail.size());
    EXPECT_EQ(prompt.substr(prompt.size() - tail.size()), tail);
  }
}

TEST(PromptBuild, InstructionPrefixesEveryParadigmButDirect) {
  const auto item = sample_item();
  const auto t = builtin_templates();
  EXPECT_EQ(build_prompt(item, Paradigm::Direct, t).rfind("Question: ", 0), 0u);
  for (auto p : {Paradigm::ChainOfThought, Paradigm::SelfRefine,
                 Paradigm::CompositeReasoning}) {
    const std::string prompt = build_prompt(item, p, t);
    const std::string& instr = t.for_paradigm(p);
    EXPECT_EQ(prompt.rfind(instr + "\n\n", 0), 0u) << crlab::paradigm_name(p);
  }
}

TEST(PromptBuild, DeterministicAndValidating) {
  const auto item = sample_item();
  const auto t = builtin_templates();
  EXPECT_EQ(build_prompt(item, Paradigm::ChainOfThought, t),
            build_prompt(item, Paradigm::ChainOfThought, t));
  McqItem bad = item;
  bad.gold = 'Z';
  EXPECT_THROW(build_prompt(bad, Paradigm::Direct, t), crlab::ValidationError);
}

// --- SFT targets ------------------------------------------------------------

TEST(SftTargets, MaskArithmeticAndSpecialTokens) {
  const auto item = sample_item();
  const auto t = builtin_templates();
  for (auto p : kAllParadigms) {
    const std::string prompt = build_prompt(item, p, t);
    const std::string reasoning = synth_reasoning(item, p);
    const auto target = build_sft_target(item, p, reasoning, t);

    ASSERT_EQ(target.ids.size(), target.mask.size());
    EXPECT_EQ(target.prompt_tokens + target.supervised_tokens,
              static_cast<int>(target.ids.size()));
    EXPECT_NO_THROW(target.check_invariant());

    // Byte-level tokens: spans are 1 (BOS) + prompt bytes + reasoning bytes
    // + 1 (EOS).
    EXPECT_EQ(target.prompt_tokens, 1 + static_cast<int>(prompt.size()));
    EXPECT_EQ(target.supervised_tokens,
              static_cast<int>(reasoning.size()) + 1);
    EXPECT_EQ(target.ids.front(), crlab::Vocab::kBos);
    EXPECT_EQ(target.ids.back(), crlab::Vocab::kEos);

    for (int i = 0; i < target.prompt_tokens; ++i) {
      EXPECT_EQ(target.mask[static_cast<std::size_t>(i)], 0);
    }
    for (std::size_t i = static_cast<std::size_t>(target.prompt_tokens);
         i < target.mask.size(); ++i) {
      EXPECT_EQ(target.mask[i], 1);
    }

    // The same target built from pre-rendered text must be identical.
    const auto from_text = build_sft_target_from_text(prompt, reasoning);
    EXPECT_EQ(from_text.ids, target.ids);
    EXPECT_EQ(from_text.mask, target.mask);
  }
}

TEST(SftTargets, RejectsReasoningWithoutTerminalAnswerLine) {
  const auto item = sample_item();
  const auto t = builtin_templates();
  EXPECT_THROW(build_sft_target(item, Paradigm::Direct, "Therefore B.", t),
               crlab::ValidationError);
  // A valid answer line that is not terminal does not count.
  EXPECT_THROW(
      build_sft_target(item, Paradigm::Direct, "Answer: B\nbut wait", t),
      crlab::ValidationError);
  // Trailing whitespace after the terminal line is tolerated.
  EXPECT_NO_THROW(
      build_sft_target(item, Paradigm::Direct, "Answer: B\n  \n", t));
}

// --- synthesized reasoning --------------------------------------------------

TEST(SynthReasoning, ArrivesAtGoldForEveryFamilyAndParadigm) {
  for (auto family :
       {crlab::TaskFamily::Modular, crlab::TaskFamily::Syllogism,
        crlab::TaskFamily::Lookup, crlab::TaskFamily::Marker}) {
    for (const auto& item : crlab::gen_synthetic(family, 10, 99)) {
      for (auto p : kAllParadigms) {
        const std::string reasoning = synth_reasoning(item, p);
        const auto got = crlab::extract_answer(reasoning);
        ASSERT_TRUE(got.has_value()) << item.id;
        EXPECT_EQ(*got, item.gold) << item.id;
      }
    }
  }
}

TEST(SynthReasoning, CompositeLinesKeepBracketedStyleTags) {
  const auto item = sample_item();
  const std::string r = synth_reasoning(item, Paradigm::CompositeReasoning);
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < r.size()) {
    std::size_t end = r.find('\n', start);
    if (end == std::string::npos) end = r.size();
    lines.push_back(r.substr(start, end - start));
    start = end + 1;
  }
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_EQ(lines[0].rfind("[Decompositional] ", 0), 0u);
  EXPECT_EQ(lines[1].rfind("[Deductive] ", 0), 0u);
  EXPECT_EQ(lines[2].rfind("[Comparative] ", 0), 0u);
  EXPECT_EQ(lines[3].rfind("[Abductive] ", 0), 0u);
  EXPECT_EQ(lines[4], "Answer: B");
}

TEST(SynthReasoning, DirectIsBareCommitmentLine) {
  EXPECT_EQ(synth_reasoning(sample_item(), Paradigm::Direct), "Answer: B");
}

TEST(SynthReasoning, TargetLengthsOrderDirectCotCrSr) {
  // Verbosity is Direct < CoT < CR < SR per item, across every family.
  const auto t = builtin_templates();
  for (auto family :
       {crlab::TaskFamily::Modular, crlab::TaskFamily::Syllogism,
        crlab::TaskFamily::Lookup, crlab::TaskFamily::Marker}) {
    for (const auto& item : crlab::gen_synthetic(family, 10, 123)) {
      std::vector<std::size_t> len;
      for (auto p : {Paradigm::Direct, Paradigm::ChainOfThought,
                     Paradigm::CompositeReasoning, Paradigm::SelfRefine}) {
        len.push_back(
            build_sft_target(item, p, synth_reasoning(item, p), t).ids.size());
      }
      EXPECT_LT(len[0], len[1]) << item.id;  // direct < cot
      EXPECT_LT(len[1], len[2]) << item.id;  // cot < cr
      EXPECT_LT(len[2], len[3]) << item.id;  // cr < sr
    }
  }
}

}  // namespace
