#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "crlab/errors.hpp"
#include "crlab/model.hpp"
#include "crlab/optim.hpp"
#include "crlab/prompts.hpp"
#include "crlab/rewards.hpp"
#include "crlab/rng.hpp"
#include "crlab/tasks.hpp"

namespace crlab {

struct GrpoConfig {
    int group_size = 8;  // M trajectories per prompt
    double lr = 1e-4;
    int prompt_batch = 2;
    int total_steps = 1500;
    double temperature = 1.0;
    double clip_ratio = 0.2;
    double kl_beta = 0.01;
    double adv_eps = 1e-8;
    int max_new_tokens = 256;
    int ref_refresh_interval = 0;  // 0 keeps the initial reference throughout
    double weight_decay = 0.001;   // optimizer mirrors the SFT stage
    std::uint64_t seed = 0;

    void validate() const {
        if (group_size < 2) {
            throw ConfigError("group size must be >= 2");
        }
        if (!(clip_ratio > 0.0 && clip_ratio <= 1.0)) {
            throw ConfigError("clip ratio must lie in (0, 1]");
        }
        if (kl_beta < 0.0) {
            throw ConfigError("kl coefficient must be >= 0");
        }
        if (!(adv_eps > 0.0)) {
            throw ConfigError("advantage epsilon must be positive");
        }
        if (!(lr > 0.0) || prompt_batch < 1 || total_steps < 0 || max_new_tokens < 0) {
            throw ConfigError("grpo config has out-of-range fields");
        }
    }
};

struct GroupSample {
    std::string prompt_id;
    char gold = '?';
    std::vector<TokenId> prompt_ids;
    std::vector<SampleResult> members;
    std::vector<Reward> rewards;      // filled by score_group
    std::vector<double> advantages;   // filled by group_advantages
    int tau_star = -1;                // first index attaining the max reward
    bool no_correct = false;          // all-zero-reward group
    bool scored = false;
};

// M independently seeded samples from one prompt. Greedy sampling is rejected:
// identical group members defeat relative comparison.
inline GroupSample sample_group(const Policy& policy, const std::string& prompt_id,
                                const std::vector<TokenId>& prompt_ids, int group_size,
                                double temperature, int max_new_tokens, std::uint64_t seed) {
    if (group_size < 2) {
        throw ConfigError("group size must be >= 2");
    }
    if (!(temperature > 0.0)) {
        throw ConfigError("group sampling requires temperature > 0");
    }
    GroupSample g;
    g.prompt_id = prompt_id;
    g.prompt_ids = prompt_ids;
    g.members.reserve(static_cast<std::size_t>(group_size));
    for (int m = 0; m < group_size; ++m) {
        g.members.push_back(sample_with_logprobs(
            policy, prompt_ids, temperature, max_new_tokens,
            derive_seed(seed, "grpo.member", static_cast<std::uint64_t>(m))));
    }
    return g;
}

// Binary rewards plus the best-trajectory index: lowest index among maximal
// rewards; an all-zero group yields index 0 and the no-correct flag.
inline void score_group(GroupSample& g, char gold) {
    g.gold = gold;
    g.rewards.clear();
    g.rewards.reserve(g.members.size());
    for (auto& m : g.members) {
        m.trajectory.extracted_answer = extract_answer(m.trajectory.text);
        g.rewards.push_back(exact_match(m.trajectory.extracted_answer, gold));
    }
    int best = 0;
    for (std::size_t i = 1; i < g.rewards.size(); ++i) {
        if (g.rewards[i] > g.rewards[best]) {
            best = static_cast<int>(i);
        }
    }
    g.tau_star = best;
    g.no_correct = true;
    for (Reward r : g.rewards) {
        if (r != 0) {
            g.no_correct = false;
            break;
        }
    }
    g.scored = true;
}

// (r - mean) / (std + eps) with population std; all-equal groups return exact
// zeros so they can never produce an update.
inline std::vector<double> group_advantages(const std::vector<Reward>& rewards, double adv_eps) {
    if (rewards.empty()) {
        throw ConfigError("advantage computation needs a non-empty group");
    }
    bool all_equal = true;
    for (const Reward r : rewards) {
        if (r != rewards.front()) {
            all_equal = false;
            break;
        }
    }
    if (all_equal) {
        return std::vector<double>(rewards.size(), 0.0);
    }
    const double n = static_cast<double>(rewards.size());
    double mean = 0.0;
    for (const Reward r : rewards) {
        mean += static_cast<double>(r);
    }
    mean /= n;
    double var = 0.0;
    for (const Reward r : rewards) {
        const double d = static_cast<double>(r) - mean;
        var += d * d;
    }
    var /= n;
    const double denom = std::sqrt(var) + adv_eps;
    std::vector<double> adv(rewards.size());
    for (std::size_t i = 0; i < rewards.size(); ++i) {
        adv[i] = (static_cast<double>(rewards[i]) - mean) / denom;
    }
    return adv;
}

struct GrpoStepMetrics {
    double mean_reward = 0.0;
    double zero_group_fraction = 0.0;
    double mean_abs_advantage = 0.0;
    double kl_estimate = 0.0;
    double mean_gen_length = 0.0;
    double surrogate = 0.0;  // batch-mean clipped surrogate value
    bool updated = false;    // false when every member contributed exactly zero
};

// Objective evaluation and gradient accumulation for a batch of scored
// groups: per-token clipped importance surrogate, optional KL penalty against
// the reference. Groups with all-equal rewards contribute nothing. The
// returned metrics carry updated=true iff any member added a gradient term;
// callers skip the optimizer entirely otherwise so the adapter stays bitwise
// unchanged. The scalar being minimized is
// -(surrogate - beta * KL) / total generated tokens.
inline GrpoStepMetrics grpo_objective_and_grads(const Policy& policy, const Policy& reference,
                                                std::vector<GroupSample>& batch,
                                                const GrpoConfig& cfg, AdapterGrads& grads) {
    cfg.validate();
    if (batch.empty()) {
        throw DegenerateBatchError("grpo step needs at least one group");
    }

    GrpoStepMetrics metrics;
    long total_tokens = 0;
    long member_count = 0;
    int zero_groups = 0;
    for (auto& g : batch) {
        if (!g.scored) {
            throw ValidationError("grpo step received an unscored group");
        }
        g.advantages = group_advantages(g.rewards, cfg.adv_eps);
        if (g.no_correct) {
            ++zero_groups;
        }
        for (std::size_t m = 0; m < g.members.size(); ++m) {
            metrics.mean_reward += static_cast<double>(g.rewards[m]);
            metrics.mean_abs_advantage += std::abs(g.advantages[m]);
            metrics.mean_gen_length += static_cast<double>(g.members[m].trajectory.token_count);
            total_tokens += g.members[m].trajectory.token_count;
            ++member_count;
        }
    }
    metrics.mean_reward /= static_cast<double>(member_count);
    metrics.mean_abs_advantage /= static_cast<double>(member_count);
    metrics.mean_gen_length /= static_cast<double>(member_count);
    metrics.zero_group_fraction = static_cast<double>(zero_groups) / static_cast<double>(batch.size());

    if (total_tokens == 0) {
        return metrics;  // nothing was generated anywhere; no update possible
    }
    const double inv_tokens = 1.0 / static_cast<double>(total_tokens);

    bool contributed = false;
    double surrogate_sum = 0.0;
    double kl_sum = 0.0;

    for (const auto& g : batch) {
        const int prompt_len = static_cast<int>(g.prompt_ids.size());
        for (std::size_t m = 0; m < g.members.size(); ++m) {
            const double adv = g.advantages[m];
            if (adv == 0.0 && cfg.kl_beta == 0.0) {
                continue;  // exactly zero contribution
            }
            const auto& gen = g.members[m].trajectory.token_ids;
            const auto& behavior_lp = g.members[m].logprobs;
            if (gen.empty()) {
                continue;
            }
            std::vector<TokenId> ids = g.prompt_ids;
            ids.insert(ids.end(), gen.begin(), gen.end());
            const std::vector<TokenId> feed(ids.begin(), ids.end() - 1);

            const ForwardTrace trace = forward_recorded(policy, feed);
            Matrix ref_probs;
            if (cfg.kl_beta > 0.0) {
                ref_probs = forward(reference, feed);
            }

            std::vector<TokenId> targets(feed.size());
            std::vector<double> seeds(feed.size(), 0.0);
            for (std::size_t t = 0; t < feed.size(); ++t) {
                targets[t] = ids[t + 1];
            }
            for (std::size_t i = 0; i < gen.size(); ++i) {
                const std::size_t row = static_cast<std::size_t>(prompt_len) - 1 + i;
                const auto tok = static_cast<std::size_t>(gen[i]);
                const double cur_lp = std::log(trace.probs.at(row, tok));
                const double ratio = std::exp(cur_lp - behavior_lp[i]);
                const double clipped =
                    std::min(std::max(ratio, 1.0 - cfg.clip_ratio), 1.0 + cfg.clip_ratio);
                surrogate_sum += std::min(ratio * adv, clipped * adv);

                // d surrogate / d cur_lp (0 when the clipped branch is active)
                double dsurr = 0.0;
                if ((adv >= 0.0 && ratio <= 1.0 + cfg.clip_ratio) ||
                    (adv < 0.0 && ratio >= 1.0 - cfg.clip_ratio)) {
                    dsurr = ratio * adv;
                }
                double dkl = 0.0;
                if (cfg.kl_beta > 0.0) {
                    const double ref_lp = std::log(ref_probs.at(row, tok));
                    const double delta = ref_lp - cur_lp;
                    kl_sum += std::exp(delta) - delta - 1.0;
                    dkl = 1.0 - std::exp(delta);
                }
                // minimize L = -(surrogate - beta * KL) / total_tokens
                seeds[row] = -inv_tokens * (dsurr - cfg.kl_beta * dkl);
            }
            backward(policy, feed, trace, targets, seeds, grads);
            contributed = true;
        }
    }

    metrics.surrogate = surrogate_sum * inv_tokens;
    metrics.kl_estimate = (cfg.kl_beta > 0.0) ? kl_sum * inv_tokens : 0.0;
    if (!std::isfinite(metrics.surrogate) || !std::isfinite(metrics.kl_estimate)) {
        throw NumericFaultError("non-finite grpo objective");
    }
    metrics.updated = contributed;
    return metrics;
}

// One policy update: gradients as above, then AdamW — unless the whole batch
// is degenerate, in which case the optimizer is not advanced at all.
inline GrpoStepMetrics grpo_step(Policy& policy, const Policy& reference,
                                 std::vector<GroupSample>& batch, const GrpoConfig& cfg,
                                 AdamW& optimizer, double lr) {
    AdapterGrads grads(policy.adapter);
    GrpoStepMetrics metrics = grpo_objective_and_grads(policy, reference, batch, cfg, grads);
    if (!metrics.updated) {
        return metrics;  // all-degenerate batch: skip the optimizer entirely
    }
    if (!grads.finite()) {
        throw NumericFaultError("non-finite gradient in " +
                                first_nonfinite_grad(policy.adapter, grads));
    }
    optimizer.step(policy.adapter, grads, lr);
    return metrics;
}

struct GrpoCurvePoint {
    int step = 0;
    double mean_reward = 0.0;
    double zero_group_fraction = 0.0;
    double kl_estimate = 0.0;
    double mean_gen_length = 0.0;
};

struct GrpoResult {
    Policy policy;
    std::vector<GrpoCurvePoint> curve;
};

// Full training loop: per step, draw a prompt batch, sample and score a group
// per prompt, update. on_step (optional) sees every step's groups, metrics,
// and the post-update policy, and may return false to stop early.
// Deterministic for a fixed seed.
using GrpoStepHook = std::function<bool(int, const Policy&, const std::vector<GroupSample>&,
                                        const GrpoStepMetrics&)>;

inline GrpoResult grpo_train(const Policy& start, const std::vector<McqItem>& items,
                             Paradigm paradigm, const TemplateSet& templates,
                             const GrpoConfig& cfg, const GrpoStepHook& on_step = nullptr) {
    cfg.validate();
    if (items.empty()) {
        throw EmptyCorpusError("grpo corpus is empty");
    }

    GrpoResult out;
    out.policy = start;
    if (cfg.total_steps == 0) {
        return out;
    }

    AdamWConfig opt_cfg;
    opt_cfg.lr = cfg.lr;
    opt_cfg.weight_decay = cfg.weight_decay;
    AdamW optimizer(out.policy.adapter, opt_cfg);

    Policy reference = out.policy;
    const int n = static_cast<int>(items.size());

    for (int step = 0; step < cfg.total_steps; ++step) {
        if (cfg.ref_refresh_interval > 0 && step > 0 && step % cfg.ref_refresh_interval == 0) {
            reference = out.policy;
        }

        // deterministic prompt draw, without replacement when possible
        Rng draw(derive_seed(cfg.seed, "grpo.prompt", static_cast<std::uint64_t>(step)));
        std::vector<int> picks;
        while (static_cast<int>(picks.size()) < cfg.prompt_batch) {
            const int idx = static_cast<int>(draw.below(static_cast<std::uint64_t>(n)));
            bool dup = false;
            if (n >= cfg.prompt_batch) {
                for (int p : picks) {
                    if (p == idx) {
                        dup = true;
                        break;
                    }
                }
            }
            if (!dup) {
                picks.push_back(idx);
            }
        }

        std::vector<GroupSample> batch;
        batch.reserve(picks.size());
        for (std::size_t slot = 0; slot < picks.size(); ++slot) {
            const McqItem& item = items[static_cast<std::size_t>(picks[slot])];
            std::vector<TokenId> prompt_ids;
            prompt_ids.push_back(Vocab::kBos);
            const std::vector<TokenId> body = encode(build_prompt(item, paradigm, templates));
            prompt_ids.insert(prompt_ids.end(), body.begin(), body.end());
            GroupSample g = sample_group(
                out.policy, item.id, prompt_ids, cfg.group_size, cfg.temperature,
                cfg.max_new_tokens,
                derive_seed(cfg.seed, "grpo.group",
                            static_cast<std::uint64_t>(step) *
                                    static_cast<std::uint64_t>(cfg.prompt_batch) +
                                slot));
            for (auto& member : g.members) {
                member.trajectory.paradigm = paradigm;
            }
            score_group(g, item.gold);
            batch.push_back(std::move(g));
        }

        const double lr_now = scheduled_lr(cfg.lr, step, cfg.total_steps);
        const GrpoStepMetrics m = grpo_step(out.policy, reference, batch, cfg, optimizer, lr_now);
        out.curve.push_back(
            {step, m.mean_reward, m.zero_group_fraction, m.kl_estimate, m.mean_gen_length});
        if (on_step && !on_step(step, out.policy, batch, m)) {
            break;
        }
    }
    return out;
}

}  // namespace crlab
