#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "crlab/errors.hpp"
#include "crlab/model.hpp"
#include "crlab/optim.hpp"
#include "crlab/prompts.hpp"
#include "crlab/rng.hpp"

namespace crlab {

struct SftConfig {
    double lr = 1e-4;
    int batch_size = 8;
    int epochs = 12;
    double weight_decay = 0.001;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(lr > 0.0)) {
            throw ConfigError("sft learning rate must be positive");
        }
        if (batch_size < 1) {
            throw ConfigError("sft batch size must be >= 1");
        }
        if (epochs < 0) {
            throw ConfigError("sft epochs must be >= 0");
        }
        if (weight_decay < 0.0) {
            throw ConfigError("sft weight decay must be >= 0");
        }
    }
};

// Sequences padded to the batch maximum with PAD; padded positions carry a
// zero mask, so they can never contribute loss.
struct SftBatch {
    std::vector<std::vector<TokenId>> ids;
    std::vector<std::vector<std::uint8_t>> mask;
    std::vector<int> true_len;
    std::size_t max_len = 0;
};

inline SftBatch make_batch(const std::vector<SftTarget>& rows) {
    if (rows.empty()) {
        throw DegenerateBatchError("batch must contain at least one sequence");
    }
    SftBatch b;
    for (const auto& r : rows) {
        b.max_len = std::max(b.max_len, r.ids.size());
    }
    for (const auto& r : rows) {
        r.check_invariant();
        std::vector<TokenId> ids = r.ids;
        std::vector<std::uint8_t> mask = r.mask;
        ids.resize(b.max_len, Vocab::kPad);
        mask.resize(b.max_len, 0);
        b.true_len.push_back(static_cast<int>(r.ids.size()));
        b.ids.push_back(std::move(ids));
        b.mask.push_back(std::move(mask));
    }
    return b;
}

namespace detail {

// Supervised next-token positions: position t predicts ids[t+1] and counts
// iff mask[t+1] is set. Padding never counts (its mask is zero).
inline int supervised_count(const SftBatch& batch) {
    int n = 0;
    for (std::size_t r = 0; r < batch.ids.size(); ++r) {
        for (int t = 1; t < batch.true_len[r]; ++t) {
            n += batch.mask[r][static_cast<std::size_t>(t)] ? 1 : 0;
        }
    }
    return n;
}

}  // namespace detail

// Mean negative log-likelihood over supervised positions.
inline double sft_loss(const Policy& policy, const SftBatch& batch) {
    const int count = detail::supervised_count(batch);
    if (count == 0) {
        throw DegenerateBatchError("batch has zero supervised positions");
    }
    double sum = 0.0;
    for (std::size_t r = 0; r < batch.ids.size(); ++r) {
        const int len = batch.true_len[r];
        const std::vector<TokenId> feed(batch.ids[r].begin(),
                                        batch.ids[r].begin() + (len - 1));
        const Matrix probs = forward(policy, feed);
        for (int t = 0; t + 1 < len; ++t) {
            if (!batch.mask[r][static_cast<std::size_t>(t + 1)]) {
                continue;
            }
            const auto target = static_cast<std::size_t>(batch.ids[r][static_cast<std::size_t>(t + 1)]);
            sum -= std::log(probs.at(static_cast<std::size_t>(t), target));
        }
    }
    return sum / static_cast<double>(count);
}

struct SftStepMetrics {
    double loss = 0.0;
    int supervised_tokens = 0;
};

// Accumulates d(mean NLL)/d(adapter) into grads and returns the loss. The
// scalar it differentiates is exactly sft_loss on the same batch.
inline SftStepMetrics sft_grads(const Policy& policy, const SftBatch& batch,
                                AdapterGrads& grads) {
    const int count = detail::supervised_count(batch);
    if (count == 0) {
        throw DegenerateBatchError("batch has zero supervised positions");
    }
    const double inv_count = 1.0 / static_cast<double>(count);

    double loss_sum = 0.0;
    for (std::size_t r = 0; r < batch.ids.size(); ++r) {
        const int len = batch.true_len[r];
        const std::vector<TokenId> feed(batch.ids[r].begin(),
                                        batch.ids[r].begin() + (len - 1));
        const ForwardTrace trace = forward_recorded(policy, feed);
        std::vector<TokenId> targets(feed.size());
        std::vector<double> seeds(feed.size(), 0.0);
        for (std::size_t t = 0; t + 1 < static_cast<std::size_t>(len); ++t) {
            targets[t] = batch.ids[r][t + 1];
            if (batch.mask[r][t + 1]) {
                seeds[t] = -inv_count;  // d(mean NLL)/d logprob
                loss_sum -= std::log(trace.probs.at(t, static_cast<std::size_t>(targets[t])));
            }
        }
        backward(policy, feed, trace, targets, seeds, grads);
    }

    SftStepMetrics m;
    m.loss = loss_sum * inv_count;
    m.supervised_tokens = count;
    return m;
}

// One AdamW step at the given (already scheduled) learning rate. Only the
// adapter moves; loss reported is the pre-update value.
inline SftStepMetrics sft_step(Policy& policy, const SftBatch& batch, AdamW& optimizer,
                               double lr) {
    AdapterGrads grads(policy.adapter);
    const SftStepMetrics m = sft_grads(policy, batch, grads);
    if (!grads.finite()) {
        throw NumericFaultError("non-finite gradient in " +
                                first_nonfinite_grad(policy.adapter, grads));
    }
    optimizer.step(policy.adapter, grads, lr);
    return m;
}

// Fraction of supervised positions whose greedy prediction equals the target.
inline double sft_token_accuracy(const Policy& policy, const std::vector<SftTarget>& corpus) {
    long correct = 0;
    long total = 0;
    for (const auto& row : corpus) {
        row.check_invariant();
        const std::vector<TokenId> feed(row.ids.begin(), row.ids.end() - 1);
        const Matrix probs = forward(policy, feed);
        for (std::size_t t = 0; t + 1 < row.ids.size(); ++t) {
            if (!row.mask[t + 1]) {
                continue;
            }
            const double* prow = probs.row(t);
            std::size_t best = 0;
            for (std::size_t j = 1; j < probs.cols; ++j) {
                if (prow[j] > prow[best]) {
                    best = j;
                }
            }
            correct += (static_cast<TokenId>(best) == row.ids[t + 1]) ? 1 : 0;
            ++total;
        }
    }
    if (total == 0) {
        throw DegenerateBatchError("corpus has zero supervised positions");
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

struct SftCurvePoint {
    int step = 0;
    double lr = 0.0;
    double loss = 0.0;
};

struct SftResult {
    Policy policy;
    std::vector<SftCurvePoint> curve;
};

// Epoch loop with per-epoch shuffling; deterministic for a fixed seed.
inline SftResult sft_train(const Policy& start, const std::vector<SftTarget>& corpus,
                           const SftConfig& cfg) {
    cfg.validate();
    if (corpus.empty()) {
        throw EmptyCorpusError("sft corpus is empty");
    }
    SftResult out;
    out.policy = start;
    if (cfg.epochs == 0) {
        return out;
    }

    const int n = static_cast<int>(corpus.size());
    const int steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const int total_steps = steps_per_epoch * cfg.epochs;

    AdamWConfig opt_cfg;
    opt_cfg.lr = cfg.lr;
    opt_cfg.weight_decay = cfg.weight_decay;
    AdamW optimizer(out.policy.adapter, opt_cfg);

    std::vector<std::size_t> order(corpus.size());
    int step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) {
            order[i] = i;
        }
        Rng rng(derive_seed(cfg.seed, "sft.epoch", static_cast<std::uint64_t>(epoch)));
        rng.shuffle(order);
        for (int b = 0; b < steps_per_epoch; ++b) {
            std::vector<SftTarget> rows;
            for (int k = b * cfg.batch_size; k < std::min(n, (b + 1) * cfg.batch_size); ++k) {
                rows.push_back(corpus[order[static_cast<std::size_t>(k)]]);
            }
            const SftBatch batch = make_batch(rows);
            const double lr_now = scheduled_lr(cfg.lr, step, total_steps);
            const SftStepMetrics m = sft_step(out.policy, batch, optimizer, lr_now);
            out.curve.push_back({step, lr_now, m.loss});
            ++step;
        }
    }
    return out;
}

}  // namespace crlab
