#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "crlab/errors.hpp"
#include "crlab/matrix.hpp"
#include "crlab/paradigm.hpp"
#include "crlab/rng.hpp"
#include "crlab/tokenizer.hpp"

namespace crlab {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class LoraTarget : int {
    QProj = 0,
    KProj,
    VProj,
    OProj,
    GateProj,
    UpProj,
    DownProj,
};

constexpr int kLoraTargetCount = 7;

inline const char* lora_target_name(LoraTarget t) {
    switch (t) {
        case LoraTarget::QProj: return "q-proj";
        case LoraTarget::KProj: return "k-proj";
        case LoraTarget::VProj: return "v-proj";
        case LoraTarget::OProj: return "o-proj";
        case LoraTarget::GateProj: return "gate-proj";
        case LoraTarget::UpProj: return "up-proj";
        case LoraTarget::DownProj: return "down-proj";
    }
    return "?";
}

inline LoraTarget lora_target_from_name(const std::string& name) {
    for (int i = 0; i < kLoraTargetCount; ++i) {
        const auto t = static_cast<LoraTarget>(i);
        if (name == lora_target_name(t)) {
            return t;
        }
    }
    throw ConfigError("unknown lora target '" + name + "'");
}

using LoraTargetMask = std::uint32_t;

constexpr LoraTargetMask kAllLoraTargets = (1u << kLoraTargetCount) - 1;

constexpr LoraTargetMask target_bit(LoraTarget t) { return 1u << static_cast<int>(t); }

constexpr bool mask_has(LoraTargetMask m, LoraTarget t) { return (m & target_bit(t)) != 0; }

struct ModelConfig {
    int vocab_size = Vocab::kSize;
    int dim = 128;
    int layers = 4;
    int heads = 4;
    int ffw_dim = 512;
    // Fits the longest built-in prompt+reasoning pair (self-refine on the
    // syllogism family, ~1.3k byte tokens) with headroom.
    int max_seq_len = 1536;
    std::uint64_t param_seed = 0;

    void validate() const {
        if (vocab_size < 1 || dim < 1 || layers < 1 || heads < 1 || ffw_dim < 1) {
            throw ConfigError("model dimensions must be positive");
        }
        if (dim % heads != 0) {
            throw ConfigError("model dim must be divisible by head count");
        }
        if (max_seq_len < 64) {
            throw ConfigError("max sequence length must be at least 64");
        }
    }

    int head_dim() const { return dim / heads; }

    bool operator==(const ModelConfig&) const = default;
};

struct LoraConfig {
    int rank = 32;
    double alpha = 64.0;
    LoraTargetMask targets = kAllLoraTargets;

    double scaling() const { return alpha / static_cast<double>(rank); }

    void validate() const {
        if (rank < 1) {
            throw ConfigError("lora rank must be >= 1");
        }
        if (!(alpha > 0.0)) {
            throw ConfigError("lora alpha must be positive");
        }
        if (targets == 0 || (targets & ~kAllLoraTargets) != 0) {
            throw ConfigError("lora target set must be a non-empty subset of the seven projections");
        }
    }

    bool operator==(const LoraConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct BaseLayer {
    Matrix wq, wk, wv, wo;  // dim x dim
    Matrix w_gate, w_up;    // ffw x dim
    Matrix w_down;          // dim x ffw
};

struct BaseWeights {
    Matrix tok_emb;  // vocab x dim
    Matrix pos_emb;  // max_seq x dim
    Matrix lm_head;  // vocab x dim
    std::vector<BaseLayer> layers;
};

// One adapted projection: W_eff = W + s * B * A with A (rank x in), B (out x rank).
// B starts at zero so a fresh adapter is an exact identity around the base.
struct LoraEntry {
    int layer = 0;
    LoraTarget target = LoraTarget::QProj;
    Matrix a;  // rank x in
    Matrix b;  // out x rank
};

struct AdapterSet {
    std::vector<LoraEntry> entries;  // layer-major, targets in enum order

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& e : entries) {
            n += e.a.size() + e.b.size();
        }
        return n;
    }
};

enum class Provenance : std::uint8_t { Fresh = 0, FromSft = 1 };

// Base weights stay frozen through every training step; only the adapter moves.
struct Policy {
    ModelConfig config;
    LoraConfig lora;
    BaseWeights base;
    AdapterSet adapter;
    Provenance provenance = Provenance::Fresh;
};

namespace detail {

constexpr double kBaseInitStd = 0.08;
constexpr double kRmsEps = 1e-6;

inline void fill_gaussian(Matrix& m, Rng& rng, double std) {
    for (double& v : m.data) {
        v = rng.gaussian(0.0, std);
    }
}

inline void shape_for_target(const ModelConfig& cfg, LoraTarget t, std::size_t& out, std::size_t& in) {
    const auto d = static_cast<std::size_t>(cfg.dim);
    const auto f = static_cast<std::size_t>(cfg.ffw_dim);
    switch (t) {
        case LoraTarget::QProj:
        case LoraTarget::KProj:
        case LoraTarget::VProj:
        case LoraTarget::OProj: out = d; in = d; break;
        case LoraTarget::GateProj:
        case LoraTarget::UpProj: out = f; in = d; break;
        case LoraTarget::DownProj: out = d; in = f; break;
    }
}

inline void init_adapter(AdapterSet& adapter, const ModelConfig& cfg, const LoraConfig& lora, Rng& rng) {
    adapter.entries.clear();
    for (int l = 0; l < cfg.layers; ++l) {
        for (int t = 0; t < kLoraTargetCount; ++t) {
            const auto target = static_cast<LoraTarget>(t);
            if (!mask_has(lora.targets, target)) {
                continue;
            }
            std::size_t out = 0;
            std::size_t in = 0;
            shape_for_target(cfg, target, out, in);
            LoraEntry e;
            e.layer = l;
            e.target = target;
            e.a = Matrix(static_cast<std::size_t>(lora.rank), in);
            e.b = Matrix(out, static_cast<std::size_t>(lora.rank));
            fill_gaussian(e.a, rng, 1.0 / std::sqrt(static_cast<double>(in)));
            // b stays zero: adapted model == base model at init.
            adapter.entries.push_back(std::move(e));
        }
    }
}

}  // namespace detail

// Deterministic for a fixed seed; fresh adapters have zero B matrices.
inline Policy init_policy(const ModelConfig& cfg, const LoraConfig& lora, std::uint64_t seed) {
    cfg.validate();
    lora.validate();

    Policy p;
    p.config = cfg;
    p.config.param_seed = seed;
    p.lora = lora;

    Rng base_rng(derive_seed(seed, "model.base"));
    const auto v = static_cast<std::size_t>(cfg.vocab_size);
    const auto d = static_cast<std::size_t>(cfg.dim);
    const auto f = static_cast<std::size_t>(cfg.ffw_dim);
    const auto s = static_cast<std::size_t>(cfg.max_seq_len);

    p.base.tok_emb = Matrix(v, d);
    detail::fill_gaussian(p.base.tok_emb, base_rng, detail::kBaseInitStd);
    p.base.pos_emb = Matrix(s, d);
    detail::fill_gaussian(p.base.pos_emb, base_rng, detail::kBaseInitStd);
    p.base.lm_head = Matrix(v, d);
    detail::fill_gaussian(p.base.lm_head, base_rng, detail::kBaseInitStd);

    p.base.layers.resize(static_cast<std::size_t>(cfg.layers));
    for (auto& layer : p.base.layers) {
        layer.wq = Matrix(d, d);
        layer.wk = Matrix(d, d);
        layer.wv = Matrix(d, d);
        layer.wo = Matrix(d, d);
        layer.w_gate = Matrix(f, d);
        layer.w_up = Matrix(f, d);
        layer.w_down = Matrix(d, f);
        detail::fill_gaussian(layer.wq, base_rng, detail::kBaseInitStd);
        detail::fill_gaussian(layer.wk, base_rng, detail::kBaseInitStd);
        detail::fill_gaussian(layer.wv, base_rng, detail::kBaseInitStd);
        detail::fill_gaussian(layer.wo, base_rng, detail::kBaseInitStd);
        detail::fill_gaussian(layer.w_gate, base_rng, detail::kBaseInitStd);
        detail::fill_gaussian(layer.w_up, base_rng, detail::kBaseInitStd);
        detail::fill_gaussian(layer.w_down, base_rng, detail::kBaseInitStd);
    }

    Rng lora_rng(derive_seed(seed, "model.lora"));
    detail::init_adapter(p.adapter, p.config, p.lora, lora_rng);
    return p;
}

// W + s * (B * A). Pure function.
inline Matrix effective_weight(const Matrix& w, const Matrix& a, const Matrix& b, double scaling) {
    if (b.cols != a.rows || b.rows != w.rows || a.cols != w.cols) {
        throw DimensionError("lora factors do not conform to the wrapped matrix");
    }
    Matrix out = w;
    for (std::size_t r = 0; r < b.rows; ++r) {
        double* orow = out.row(r);
        const double* brow = b.row(r);
        for (std::size_t k = 0; k < b.cols; ++k) {
            const double bv = scaling * brow[k];
            if (bv == 0.0) {
                continue;
            }
            const double* arow = a.row(k);
            for (std::size_t c = 0; c < a.cols; ++c) {
                orow[c] += bv * arow[c];
            }
        }
    }
    return out;
}

// Folds the active adapter into the base weights and installs a fresh
// zero-initialized adapter on top. Used between the SFT and GRPO stages.
inline Policy merge_and_reset_adapter(const Policy& p, std::uint64_t adapter_seed) {
    Policy out = p;
    for (const auto& e : p.adapter.entries) {
        BaseLayer& layer = out.base.layers[static_cast<std::size_t>(e.layer)];
        Matrix* w = nullptr;
        switch (e.target) {
            case LoraTarget::QProj: w = &layer.wq; break;
            case LoraTarget::KProj: w = &layer.wk; break;
            case LoraTarget::VProj: w = &layer.wv; break;
            case LoraTarget::OProj: w = &layer.wo; break;
            case LoraTarget::GateProj: w = &layer.w_gate; break;
            case LoraTarget::UpProj: w = &layer.w_up; break;
            case LoraTarget::DownProj: w = &layer.w_down; break;
        }
        *w = effective_weight(*w, e.a, e.b, p.lora.scaling());
    }
    Rng lora_rng(derive_seed(adapter_seed, "model.lora.reset"));
    detail::init_adapter(out.adapter, out.config, out.lora, lora_rng);
    out.provenance = Provenance::FromSft;
    return out;
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

namespace detail {

inline double sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

inline double silu(double z) { return z * sigmoid(z); }

inline double silu_grad(double z) {
    const double s = sigmoid(z);
    return s * (1.0 + z * (1.0 - s));
}

// y[i] = x[i] / sqrt(mean(x^2) + eps); returns the reciprocal norm factor.
inline double rmsnorm_row(const double* x, double* y, std::size_t n) {
    double ms = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ms += x[i] * x[i];
    }
    ms /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(ms + kRmsEps);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = x[i] * inv;
    }
    return inv;
}

// dx += backward of rmsnorm given x, dy, and the stored reciprocal factor.
inline void rmsnorm_backward_row(const double* x, const double* dy, double inv, std::size_t n,
                                 double* dx) {
    double dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        dot += dy[i] * x[i];
    }
    const double k = inv * inv * inv * dot / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        dx[i] += inv * dy[i] - k * x[i];
    }
}

// Stable softmax of a row; returns nothing, overwrites out.
inline void softmax_row(const double* logits, double* out, std::size_t n) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        mx = std::max(mx, logits[i]);
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double e = std::exp(logits[i] - mx);
        out[i] = e;
        sum += e;
    }
    const double inv = 1.0 / sum;
    for (std::size_t i = 0; i < n; ++i) {
        out[i] *= inv;
    }
}

}  // namespace detail

// Activation record for one sequence, kept when gradients are needed.
struct ForwardTrace {
    int len = 0;
    int capacity = 0;  // row stride of attn_p per head; len <= capacity

    struct LayerTrace {
        Matrix h_in;      // T x d, residual stream entering the layer
        Matrix norm1;     // T x d
        std::vector<double> inv_rms1;
        Matrix q, k, v;   // T x d
        Matrix attn_p;    // T x (heads * T), causal rows
        Matrix ctx;       // T x d
        Matrix h_mid;     // T x d, after attention residual
        Matrix norm2;     // T x d
        std::vector<double> inv_rms2;
        Matrix gate, up;  // T x f (pre-activation gate)
        // adapter intermediates u = A x, one row per position, empty if untargeted
        std::array<Matrix, kLoraTargetCount> lora_u;
    };

    std::vector<LayerTrace> layers;
    Matrix h_final;                   // T x d, stream after last layer
    std::vector<double> inv_rms_out;  // final norm factors
    Matrix norm_out;                  // T x d
    Matrix probs;                     // T x vocab, next-token distributions
};

namespace detail {

// Index of a target within the adapter entry list for a layer, or nullptr.
struct AdapterIndex {
    // entry pointer per (layer, target); nullptr where untargeted
    std::vector<std::array<const LoraEntry*, kLoraTargetCount>> at;

    explicit AdapterIndex(const Policy& p)
        : at(static_cast<std::size_t>(p.config.layers), {nullptr, nullptr, nullptr, nullptr, nullptr, nullptr, nullptr}) {
        for (const auto& e : p.adapter.entries) {
            at[static_cast<std::size_t>(e.layer)][static_cast<int>(e.target)] = &e;
        }
    }
};

// y = (W + s B A) x. The rank-space vector A x is written to u (scratch or
// trace row); callers keep it when the backward pass needs it.
inline void adapted_matvec(const Matrix& w, const LoraEntry* e, double scaling, const double* x,
                           double* y, double* u) {
    matvec(w, x, y);
    if (e == nullptr) {
        return;
    }
    const std::size_t r = e->a.rows;
    matvec(e->a, x, u);
    for (std::size_t o = 0; o < e->b.rows; ++o) {
        const double* brow = e->b.row(o);
        double acc = 0.0;
        for (std::size_t k = 0; k < r; ++k) {
            acc += brow[k] * u[k];
        }
        y[o] += scaling * acc;
    }
}

}  // namespace detail

// Incremental per-sequence transformer state. The same position loop backs
// teacher-forced scoring and autoregressive sampling, so log-probabilities
// agree bitwise between the two uses.
class SequenceRunner {
public:
    // capacity bounds the sequence this runner will accept; buffers are sized
    // to it so short sequences do not pay for the model-wide maximum.
    // capacity <= 0 means "use the model maximum".
    explicit SequenceRunner(const Policy& policy, bool record, int capacity = 0)
        : policy_(policy), index_(policy), record_(record) {
        if (capacity <= 0 || capacity > policy.config.max_seq_len) {
            capacity = policy.config.max_seq_len;
        }
        capacity_ = capacity;
        const auto d = static_cast<std::size_t>(policy.config.dim);
        const auto f = static_cast<std::size_t>(policy.config.ffw_dim);
        const auto t = static_cast<std::size_t>(capacity);
        const auto v = static_cast<std::size_t>(policy.config.vocab_size);
        const auto layers = static_cast<std::size_t>(policy.config.layers);

        k_cache_.assign(layers, Matrix(t, d));
        v_cache_.assign(layers, Matrix(t, d));
        x_.resize(d);
        xn_.resize(d);
        q_.resize(d);
        k_.resize(d);
        vv_.resize(d);
        ctx_.resize(d);
        attn_out_.resize(d);
        gate_.resize(f);
        up_.resize(f);
        act_.resize(f);
        ff_out_.resize(d);
        scores_.resize(t);
        logits_.resize(v);
        probs_row_.resize(v);
        u_scratch_.resize(static_cast<std::size_t>(policy.lora.rank));

        if (record_) {
            trace_.capacity = capacity;
            trace_.layers.resize(layers);
            for (auto& lt : trace_.layers) {
                lt.h_in = Matrix(t, d);
                lt.norm1 = Matrix(t, d);
                lt.inv_rms1.assign(t, 0.0);
                lt.q = Matrix(t, d);
                lt.k = Matrix(t, d);
                lt.v = Matrix(t, d);
                lt.attn_p = Matrix(t, static_cast<std::size_t>(policy.config.heads) * t);
                lt.ctx = Matrix(t, d);
                lt.h_mid = Matrix(t, d);
                lt.norm2 = Matrix(t, d);
                lt.inv_rms2.assign(t, 0.0);
                lt.gate = Matrix(t, f);
                lt.up = Matrix(t, f);
            }
            trace_.h_final = Matrix(t, d);
            trace_.inv_rms_out.assign(t, 0.0);
            trace_.norm_out = Matrix(t, d);
            trace_.probs = Matrix(t, v);
            const auto r = static_cast<std::size_t>(policy.lora.rank);
            for (std::size_t l = 0; l < layers; ++l) {
                for (int tgt = 0; tgt < kLoraTargetCount; ++tgt) {
                    if (index_.at[l][tgt] != nullptr) {
                        trace_.layers[l].lora_u[tgt] = Matrix(t, r);
                    }
                }
            }
        }
    }

    int len() const { return len_; }

    // Feeds one token; afterwards logits()/probs() describe the next-token
    // distribution. Throws once the configured maximum length is exceeded.
    void step(TokenId token) {
        const auto& cfg = policy_.config;
        if (len_ >= capacity_) {
            throw SequenceLengthError("sequence exceeds max length " + std::to_string(capacity_));
        }
        if (token < 0 || token >= cfg.vocab_size) {
            throw MalformedTokenError("token id " + std::to_string(token) + " outside vocab");
        }
        const auto d = static_cast<std::size_t>(cfg.dim);
        const auto f = static_cast<std::size_t>(cfg.ffw_dim);
        const int heads = cfg.heads;
        const auto hd = static_cast<std::size_t>(cfg.head_dim());
        const double attn_scale = 1.0 / std::sqrt(static_cast<double>(hd));
        const double s = policy_.lora.scaling();
        const int t = len_;

        const double* te = policy_.base.tok_emb.row(static_cast<std::size_t>(token));
        const double* pe = policy_.base.pos_emb.row(static_cast<std::size_t>(t));
        for (std::size_t i = 0; i < d; ++i) {
            x_[i] = te[i] + pe[i];
        }

        for (std::size_t l = 0; l < policy_.base.layers.size(); ++l) {
            const BaseLayer& layer = policy_.base.layers[l];
            const auto& adapters = index_.at[l];
            ForwardTrace::LayerTrace* lt = record_ ? &trace_.layers[l] : nullptr;

            if (lt) {
                std::memcpy(lt->h_in.row(t), x_.data(), d * sizeof(double));
            }
            const double inv1 = detail::rmsnorm_row(x_.data(), xn_.data(), d);
            if (lt) {
                lt->inv_rms1[static_cast<std::size_t>(t)] = inv1;
                std::memcpy(lt->norm1.row(t), xn_.data(), d * sizeof(double));
            }

            auto u_slot = [&](LoraTarget tgt) -> double* {
                if (lt) {
                    Matrix& m = lt->lora_u[static_cast<int>(tgt)];
                    if (m.size()) {
                        return m.row(t);
                    }
                }
                return u_scratch_.data();
            };

            detail::adapted_matvec(layer.wq, adapters[static_cast<int>(LoraTarget::QProj)], s,
                                   xn_.data(), q_.data(), u_slot(LoraTarget::QProj));
            detail::adapted_matvec(layer.wk, adapters[static_cast<int>(LoraTarget::KProj)], s,
                                   xn_.data(), k_.data(), u_slot(LoraTarget::KProj));
            detail::adapted_matvec(layer.wv, adapters[static_cast<int>(LoraTarget::VProj)], s,
                                   xn_.data(), vv_.data(), u_slot(LoraTarget::VProj));

            std::memcpy(k_cache_[l].row(t), k_.data(), d * sizeof(double));
            std::memcpy(v_cache_[l].row(t), vv_.data(), d * sizeof(double));
            if (lt) {
                std::memcpy(lt->q.row(t), q_.data(), d * sizeof(double));
                std::memcpy(lt->k.row(t), k_.data(), d * sizeof(double));
                std::memcpy(lt->v.row(t), vv_.data(), d * sizeof(double));
            }

            for (int h = 0; h < heads; ++h) {
                const std::size_t off = static_cast<std::size_t>(h) * hd;
                for (int u = 0; u <= t; ++u) {
                    const double* krow = k_cache_[l].row(static_cast<std::size_t>(u));
                    double dot = 0.0;
                    for (std::size_t j = 0; j < hd; ++j) {
                        dot += q_[off + j] * krow[off + j];
                    }
                    scores_[static_cast<std::size_t>(u)] = dot * attn_scale;
                }
                detail::softmax_row(scores_.data(), scores_.data(), static_cast<std::size_t>(t + 1));
                if (lt) {
                    double* prow = lt->attn_p.row(t) +
                                   static_cast<std::size_t>(h) * static_cast<std::size_t>(capacity_);
                    std::memcpy(prow, scores_.data(), static_cast<std::size_t>(t + 1) * sizeof(double));
                }
                for (std::size_t j = 0; j < hd; ++j) {
                    double acc = 0.0;
                    for (int u = 0; u <= t; ++u) {
                        acc += scores_[static_cast<std::size_t>(u)] *
                               v_cache_[l].at(static_cast<std::size_t>(u), off + j);
                    }
                    ctx_[off + j] = acc;
                }
            }
            if (lt) {
                std::memcpy(lt->ctx.row(t), ctx_.data(), d * sizeof(double));
            }

            detail::adapted_matvec(layer.wo, adapters[static_cast<int>(LoraTarget::OProj)], s,
                                   ctx_.data(), attn_out_.data(), u_slot(LoraTarget::OProj));
            for (std::size_t i = 0; i < d; ++i) {
                x_[i] += attn_out_[i];
            }
            if (lt) {
                std::memcpy(lt->h_mid.row(t), x_.data(), d * sizeof(double));
            }

            const double inv2 = detail::rmsnorm_row(x_.data(), xn_.data(), d);
            if (lt) {
                lt->inv_rms2[static_cast<std::size_t>(t)] = inv2;
                std::memcpy(lt->norm2.row(t), xn_.data(), d * sizeof(double));
            }

            detail::adapted_matvec(layer.w_gate, adapters[static_cast<int>(LoraTarget::GateProj)], s,
                                   xn_.data(), gate_.data(), u_slot(LoraTarget::GateProj));
            detail::adapted_matvec(layer.w_up, adapters[static_cast<int>(LoraTarget::UpProj)], s,
                                   xn_.data(), up_.data(), u_slot(LoraTarget::UpProj));
            if (lt) {
                std::memcpy(lt->gate.row(t), gate_.data(), f * sizeof(double));
                std::memcpy(lt->up.row(t), up_.data(), f * sizeof(double));
            }
            for (std::size_t i = 0; i < f; ++i) {
                act_[i] = detail::silu(gate_[i]) * up_[i];
            }
            detail::adapted_matvec(layer.w_down, adapters[static_cast<int>(LoraTarget::DownProj)], s,
                                   act_.data(), ff_out_.data(), u_slot(LoraTarget::DownProj));
            for (std::size_t i = 0; i < d; ++i) {
                x_[i] += ff_out_[i];
            }
        }

        if (record_) {
            std::memcpy(trace_.h_final.row(t), x_.data(), d * sizeof(double));
        }
        const double inv_out = detail::rmsnorm_row(x_.data(), xn_.data(), d);
        if (record_) {
            trace_.inv_rms_out[static_cast<std::size_t>(t)] = inv_out;
            std::memcpy(trace_.norm_out.row(t), xn_.data(), d * sizeof(double));
        }
        matvec(policy_.base.lm_head, xn_.data(), logits_.data());
        detail::softmax_row(logits_.data(), probs_row_.data(), logits_.size());
        if (record_) {
            std::memcpy(trace_.probs.row(t), probs_row_.data(),
                        probs_row_.size() * sizeof(double));
            trace_.len = t + 1;
        }
        len_ = t + 1;
    }

    const std::vector<double>& logits() const { return logits_; }
    const std::vector<double>& next_probs() const { return probs_row_; }
    const ForwardTrace& trace() const { return trace_; }
    ForwardTrace take_trace() { return std::move(trace_); }

private:
    const Policy& policy_;
    detail::AdapterIndex index_;
    bool record_;
    int capacity_ = 0;
    int len_ = 0;

    std::vector<Matrix> k_cache_, v_cache_;
    std::vector<double> x_, xn_, q_, k_, vv_, ctx_, attn_out_, gate_, up_, act_, ff_out_;
    std::vector<double> scores_, logits_, probs_row_, u_scratch_;
    ForwardTrace trace_;
};

// Per-position next-token probability rows for a full sequence. Row i is the
// distribution over the token following ids[0..i]; rows are causal.
inline Matrix forward(const Policy& policy, const std::vector<TokenId>& ids) {
    if (static_cast<int>(ids.size()) > policy.config.max_seq_len) {
        throw SequenceLengthError("input length " + std::to_string(ids.size()) +
                                  " exceeds max sequence length " +
                                  std::to_string(policy.config.max_seq_len));
    }
    SequenceRunner runner(policy, false, static_cast<int>(ids.size()));
    Matrix probs(ids.size(), static_cast<std::size_t>(policy.config.vocab_size));
    for (std::size_t i = 0; i < ids.size(); ++i) {
        runner.step(ids[i]);
        std::memcpy(probs.row(i), runner.next_probs().data(),
                    runner.next_probs().size() * sizeof(double));
    }
    return probs;
}

// Teacher-forced scoring pass that records every activation needed by
// backward(). Returns the trace; trace.probs holds the distribution rows.
inline ForwardTrace forward_recorded(const Policy& policy, const std::vector<TokenId>& ids) {
    if (static_cast<int>(ids.size()) > policy.config.max_seq_len) {
        throw SequenceLengthError("input length exceeds max sequence length");
    }
    SequenceRunner runner(policy, true, static_cast<int>(ids.size()));
    for (TokenId id : ids) {
        runner.step(id);
    }
    return runner.take_trace();
}

// ---------------------------------------------------------------------------
// Backward pass (adapter gradients only; the base stays frozen)
// ---------------------------------------------------------------------------

struct AdapterGrads {
    std::vector<Matrix> a;  // parallel to AdapterSet.entries
    std::vector<Matrix> b;

    explicit AdapterGrads(const AdapterSet& adapter) {
        a.reserve(adapter.entries.size());
        b.reserve(adapter.entries.size());
        for (const auto& e : adapter.entries) {
            a.emplace_back(e.a.rows, e.a.cols);
            b.emplace_back(e.b.rows, e.b.cols);
        }
    }

    void zero() {
        for (auto& m : a) m.zero();
        for (auto& m : b) m.zero();
    }

    bool all_zero() const {
        for (const auto& m : a) {
            for (double v : m.data) {
                if (v != 0.0) return false;
            }
        }
        for (const auto& m : b) {
            for (double v : m.data) {
                if (v != 0.0) return false;
            }
        }
        return true;
    }

    bool finite() const {
        for (const auto& m : a) {
            for (double v : m.data) {
                if (!std::isfinite(v)) return false;
            }
        }
        for (const auto& m : b) {
            for (double v : m.data) {
                if (!std::isfinite(v)) return false;
            }
        }
        return true;
    }
};

// Name of the first adapter tensor holding a non-finite gradient, or empty.
inline std::string first_nonfinite_grad(const AdapterSet& adapter, const AdapterGrads& grads) {
    auto bad = [](const Matrix& m) {
        for (double v : m.data) {
            if (!std::isfinite(v)) return true;
        }
        return false;
    };
    for (std::size_t i = 0; i < adapter.entries.size(); ++i) {
        const auto& e = adapter.entries[i];
        const std::string name =
            "layer" + std::to_string(e.layer) + "." + lora_target_name(e.target);
        if (bad(grads.a[i])) return name + ".lora_a";
        if (bad(grads.b[i])) return name + ".lora_b";
    }
    return {};
}

namespace detail {

// dL/d logprob(target at row t) = seed[t]; rows with seed 0 contribute nothing.
// Accumulates adapter gradients for one traced sequence into grads.
inline void backward_from_seeds(const Policy& policy, const std::vector<TokenId>& ids,
                                const ForwardTrace& trace, const std::vector<TokenId>& targets,
                                const std::vector<double>& seeds, AdapterGrads& grads) {
    const auto& cfg = policy.config;
    const int T = trace.len;
    const auto d = static_cast<std::size_t>(cfg.dim);
    const auto f = static_cast<std::size_t>(cfg.ffw_dim);
    const auto v = static_cast<std::size_t>(cfg.vocab_size);
    const int heads = cfg.heads;
    const auto hd = static_cast<std::size_t>(cfg.head_dim());
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const double s = policy.lora.scaling();

    AdapterIndex index(policy);
    // grads index per (layer,target)
    std::vector<std::array<int, kLoraTargetCount>> gidx(
        static_cast<std::size_t>(cfg.layers), {-1, -1, -1, -1, -1, -1, -1});
    for (std::size_t i = 0; i < policy.adapter.entries.size(); ++i) {
        const auto& e = policy.adapter.entries[i];
        gidx[static_cast<std::size_t>(e.layer)][static_cast<int>(e.target)] = static_cast<int>(i);
    }

    Matrix dh(static_cast<std::size_t>(T), d);  // residual-stream gradient
    std::vector<double> dlogits(v);
    std::vector<double> dn(d);
    std::vector<double> buf_d(d);
    std::vector<double> buf_d2(d);
    std::vector<double> buf_f(f);
    std::vector<double> buf_f2(f);
    std::vector<double> rank_buf(static_cast<std::size_t>(policy.lora.rank));
    Matrix dq(static_cast<std::size_t>(T), d);
    Matrix dk(static_cast<std::size_t>(T), d);
    Matrix dv(static_cast<std::size_t>(T), d);
    Matrix dctx(static_cast<std::size_t>(T), d);
    std::vector<double> dp(static_cast<std::size_t>(T));
    std::vector<double> dscore(static_cast<std::size_t>(T));

    // Head + final norm backward.
    for (int t = 0; t < T; ++t) {
        const double seed = seeds[static_cast<std::size_t>(t)];
        if (seed == 0.0) {
            continue;
        }
        const double* prow = trace.probs.row(static_cast<std::size_t>(t));
        const auto tgt = static_cast<std::size_t>(targets[static_cast<std::size_t>(t)]);
        for (std::size_t j = 0; j < v; ++j) {
            dlogits[j] = seed * (((j == tgt) ? 1.0 : 0.0) - prow[j]);
        }
        matvec_transpose(policy.base.lm_head, dlogits.data(), dn.data());
        rmsnorm_backward_row(trace.h_final.row(static_cast<std::size_t>(t)), dn.data(),
                             trace.inv_rms_out[static_cast<std::size_t>(t)], d,
                             dh.row(static_cast<std::size_t>(t)));
    }

    // Walk the layers in reverse.
    for (int l = cfg.layers - 1; l >= 0; --l) {
        const auto lu = static_cast<std::size_t>(l);
        const BaseLayer& layer = policy.base.layers[lu];
        const auto& lt = trace.layers[lu];
        const auto& adapters = index.at[lu];

        // Helper: gradient through an adapted linear. dy is the output-side
        // gradient at position t; x is the recorded input row. Adds W^T dy
        // (plus the adapter path) into dx, and accumulates dA/dB.
        auto linear_backward = [&](LoraTarget tgt, const Matrix& w, const double* x,
                                   const double* dy, const double* u_row, double* dx) {
            matvec_transpose_add(w, dy, dx);
            const LoraEntry* e = adapters[static_cast<int>(tgt)];
            if (e == nullptr) {
                return;
            }
            const int gi = gidx[lu][static_cast<int>(tgt)];
            Matrix& ga = grads.a[static_cast<std::size_t>(gi)];
            Matrix& gb = grads.b[static_cast<std::size_t>(gi)];
            // rank_buf = B^T dy
            for (std::size_t r = 0; r < e->a.rows; ++r) {
                double acc = 0.0;
                for (std::size_t o = 0; o < e->b.rows; ++o) {
                    acc += e->b.at(o, r) * dy[o];
                }
                rank_buf[r] = acc;
            }
            // dB += s * dy u^T ; dA += s * (B^T dy) x^T ; dx += s * A^T (B^T dy)
            for (std::size_t o = 0; o < gb.rows; ++o) {
                const double g = s * dy[o];
                if (g == 0.0) {
                    continue;
                }
                double* gbrow = gb.row(o);
                for (std::size_t r = 0; r < gb.cols; ++r) {
                    gbrow[r] += g * u_row[r];
                }
            }
            for (std::size_t r = 0; r < ga.rows; ++r) {
                const double g = s * rank_buf[r];
                if (g == 0.0) {
                    continue;
                }
                double* garow = ga.row(r);
                const double* arow = e->a.row(r);
                for (std::size_t i = 0; i < ga.cols; ++i) {
                    garow[i] += g * x[i];
                    dx[i] += g * arow[i];
                }
            }
        };

        dq.zero();
        dk.zero();
        dv.zero();
        dctx.zero();

        for (int t = T - 1; t >= 0; --t) {
            const auto tu = static_cast<std::size_t>(t);
            const double* dh_row = dh.row(tu);

            // FFN: h_out = h_mid + W_down (silu(gate) * up)
            const double* grow = lt.gate.row(tu);
            const double* urow = lt.up.row(tu);
            for (std::size_t i = 0; i < f; ++i) {
                buf_f[i] = silu(grow[i]) * urow[i];  // recomputed activation
            }
            std::fill(buf_f2.begin(), buf_f2.end(), 0.0);
            const double* u_down =
                adapters[static_cast<int>(LoraTarget::DownProj)] ? lt.lora_u[static_cast<int>(LoraTarget::DownProj)].row(tu) : nullptr;
            linear_backward(LoraTarget::DownProj, layer.w_down, buf_f.data(), dh_row, u_down,
                            buf_f2.data());
            // buf_f2 = d f; translate to d gate and d up
            std::fill(buf_d.begin(), buf_d.end(), 0.0);
            for (std::size_t i = 0; i < f; ++i) {
                const double dgate = buf_f2[i] * urow[i] * silu_grad(grow[i]);
                const double dup = buf_f2[i] * silu(grow[i]);
                buf_f[i] = dgate;
                buf_f2[i] = dup;
            }
            const double* u_gate =
                adapters[static_cast<int>(LoraTarget::GateProj)] ? lt.lora_u[static_cast<int>(LoraTarget::GateProj)].row(tu) : nullptr;
            const double* u_up =
                adapters[static_cast<int>(LoraTarget::UpProj)] ? lt.lora_u[static_cast<int>(LoraTarget::UpProj)].row(tu) : nullptr;
            linear_backward(LoraTarget::GateProj, layer.w_gate, lt.norm2.row(tu), buf_f.data(),
                            u_gate, buf_d.data());
            linear_backward(LoraTarget::UpProj, layer.w_up, lt.norm2.row(tu), buf_f2.data(), u_up,
                            buf_d.data());
            // through norm2 into h_mid, plus the residual path
            std::memcpy(buf_d2.data(), dh_row, d * sizeof(double));
            rmsnorm_backward_row(lt.h_mid.row(tu), buf_d.data(), lt.inv_rms2[tu], d, buf_d2.data());
            // buf_d2 = d h_mid; split into residual (continues) and attention output
            std::fill(buf_d.begin(), buf_d.end(), 0.0);
            const double* u_o =
                adapters[static_cast<int>(LoraTarget::OProj)] ? lt.lora_u[static_cast<int>(LoraTarget::OProj)].row(tu) : nullptr;
            linear_backward(LoraTarget::OProj, layer.wo, lt.ctx.row(tu), buf_d2.data(), u_o,
                            buf_d.data());
            for (std::size_t i = 0; i < d; ++i) {
                dctx.row(tu)[i] += buf_d[i];
            }
            // stash d h_mid into dh row (residual into attention input path)
            std::memcpy(dh.row(tu), buf_d2.data(), d * sizeof(double));
        }

        // Attention backward over the whole sequence, head by head.
        const auto max_t = static_cast<std::size_t>(trace.capacity);
        for (int h = 0; h < heads; ++h) {
            const std::size_t off = static_cast<std::size_t>(h) * hd;
            for (int t = 0; t < T; ++t) {
                const auto tu = static_cast<std::size_t>(t);
                const double* prow = lt.attn_p.row(tu) + static_cast<std::size_t>(h) * max_t;
                const double* dctx_row = dctx.row(tu);
                // dp[u] = dctx_h . v_h[u]; dv_h[u] += p[u] * dctx_h
                double pdot = 0.0;
                for (int u = 0; u <= t; ++u) {
                    const auto uu = static_cast<std::size_t>(u);
                    const double* vrow = lt.v.row(uu);
                    double acc = 0.0;
                    for (std::size_t j = 0; j < hd; ++j) {
                        acc += dctx_row[off + j] * vrow[off + j];
                    }
                    dp[uu] = acc;
                    pdot += prow[uu] * acc;
                    double* dvrow = dv.row(uu);
                    const double pv = prow[uu];
                    if (pv != 0.0) {
                        for (std::size_t j = 0; j < hd; ++j) {
                            dvrow[off + j] += pv * dctx_row[off + j];
                        }
                    }
                }
                // softmax backward, then into q and k
                double* dqrow = dq.row(tu);
                const double* qrow = lt.q.row(tu);
                for (int u = 0; u <= t; ++u) {
                    const auto uu = static_cast<std::size_t>(u);
                    const double ds = prow[uu] * (dp[uu] - pdot) * attn_scale;
                    if (ds == 0.0) {
                        continue;
                    }
                    const double* krow = lt.k.row(uu);
                    double* dkrow = dk.row(uu);
                    for (std::size_t j = 0; j < hd; ++j) {
                        dqrow[off + j] += ds * krow[off + j];
                        dkrow[off + j] += ds * qrow[off + j];
                    }
                }
            }
        }

        // Project q/k/v gradients back to the normed input, then through norm1.
        for (int t = T - 1; t >= 0; --t) {
            const auto tu = static_cast<std::size_t>(t);
            std::fill(buf_d.begin(), buf_d.end(), 0.0);
            const double* u_q =
                adapters[static_cast<int>(LoraTarget::QProj)] ? lt.lora_u[static_cast<int>(LoraTarget::QProj)].row(tu) : nullptr;
            const double* u_k =
                adapters[static_cast<int>(LoraTarget::KProj)] ? lt.lora_u[static_cast<int>(LoraTarget::KProj)].row(tu) : nullptr;
            const double* u_v =
                adapters[static_cast<int>(LoraTarget::VProj)] ? lt.lora_u[static_cast<int>(LoraTarget::VProj)].row(tu) : nullptr;
            linear_backward(LoraTarget::QProj, layer.wq, lt.norm1.row(tu), dq.row(tu), u_q,
                            buf_d.data());
            linear_backward(LoraTarget::KProj, layer.wk, lt.norm1.row(tu), dk.row(tu), u_k,
                            buf_d.data());
            linear_backward(LoraTarget::VProj, layer.wv, lt.norm1.row(tu), dv.row(tu), u_v,
                            buf_d.data());
            rmsnorm_backward_row(lt.h_in.row(tu), buf_d.data(), lt.inv_rms1[tu], d, dh.row(tu));
        }
    }
    (void)ids;
}

}  // namespace detail

// Accumulates dL/d(adapter) into grads for one sequence, where
// L = sum_t seeds[t] * log P(targets[t] | ids[0..t]).
inline void backward(const Policy& policy, const std::vector<TokenId>& ids,
                     const ForwardTrace& trace, const std::vector<TokenId>& targets,
                     const std::vector<double>& seeds, AdapterGrads& grads) {
    if (static_cast<int>(targets.size()) != trace.len ||
        static_cast<int>(seeds.size()) != trace.len) {
        throw DimensionError("targets/seeds must match the traced length");
    }
    detail::backward_from_seeds(policy, ids, trace, targets, seeds, grads);
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

struct Trajectory {
    Paradigm paradigm = Paradigm::Direct;
    std::vector<TokenId> token_ids;  // generated tokens only, prompt excluded
    std::string text;                // decoded generation
    std::optional<char> extracted_answer;
    int token_count = 0;             // == token_ids.size()
};

struct SampleResult {
    Trajectory trajectory;
    std::vector<double> logprobs;  // log P(token) under the policy, per generated token
};

// Greedy at temperature 0 (lowest id wins ties); otherwise softmax sampling at
// the given temperature. Logprobs are always recorded at temperature 1 so
// importance ratios are well-defined regardless of the exploration setting.
inline SampleResult sample_with_logprobs(const Policy& policy, const std::vector<TokenId>& prompt,
                                         double temperature, int max_new_tokens,
                                         std::uint64_t seed) {
    if (temperature < 0.0) {
        throw ConfigError("temperature must be >= 0");
    }
    if (static_cast<int>(prompt.size()) > policy.config.max_seq_len) {
        throw SequenceLengthError("prompt exceeds max sequence length");
    }

    SampleResult out;
    if (prompt.empty()) {
        throw ConfigError("prompt must be non-empty (include BOS)");
    }

    // The run can never outgrow prompt + max_new_tokens; sizing the runner to
    // that keeps short generations cheap on large-context models.
    const long long want = static_cast<long long>(prompt.size()) + max_new_tokens;
    const int cap = static_cast<int>(
        std::min<long long>(want, policy.config.max_seq_len));
    SequenceRunner runner(policy, false, cap);
    for (TokenId id : prompt) {
        runner.step(id);
    }

    Rng rng(seed);
    const auto v = static_cast<std::size_t>(policy.config.vocab_size);
    std::vector<double> tempered(v);

    for (int n = 0; n < max_new_tokens; ++n) {
        if (runner.len() >= policy.config.max_seq_len) {
            break;  // context full
        }
        const std::vector<double>& logits = runner.logits();
        TokenId chosen = 0;
        if (temperature == 0.0) {
            double best = logits[0];
            for (std::size_t i = 1; i < v; ++i) {
                if (logits[i] > best) {
                    best = logits[i];
                    chosen = static_cast<TokenId>(i);
                }
            }
        } else {
            for (std::size_t i = 0; i < v; ++i) {
                tempered[i] = logits[i] / temperature;
            }
            detail::softmax_row(tempered.data(), tempered.data(), v);
            const double r = rng.uniform01();
            double cdf = 0.0;
            chosen = static_cast<TokenId>(v - 1);
            for (std::size_t i = 0; i < v; ++i) {
                cdf += tempered[i];
                if (r < cdf) {
                    chosen = static_cast<TokenId>(i);
                    break;
                }
            }
        }
        out.logprobs.push_back(std::log(runner.next_probs()[static_cast<std::size_t>(chosen)]));
        out.trajectory.token_ids.push_back(chosen);
        if (chosen == Vocab::kEos) {
            break;
        }
        if (n + 1 < max_new_tokens) {
            runner.step(chosen);  // the last token's successor dist is never used
        }
    }

    out.trajectory.token_count = static_cast<int>(out.trajectory.token_ids.size());
    out.trajectory.text = decode(out.trajectory.token_ids);
    return out;
}

inline Trajectory sample_trajectory(const Policy& policy, const std::vector<TokenId>& prompt,
                                    double temperature, int max_new_tokens, std::uint64_t seed) {
    return sample_with_logprobs(policy, prompt, temperature, max_new_tokens, seed).trajectory;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts are unsupported");

constexpr std::uint32_t kCheckpointMagic = 0x424C5243;  // "CRLB"
constexpr std::uint32_t kCheckpointVersion = 1;

inline std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

struct ByteWriter {
    std::vector<std::uint8_t> buf;

    template <typename T>
    void put(T v) {
        static_assert(std::is_trivially_copyable_v<T>);
        const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
        buf.insert(buf.end(), p, p + sizeof(T));
    }

    void put_string(const std::string& s) {
        put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        buf.insert(buf.end(), s.begin(), s.end());
    }

    void put_matrix(const std::string& name, const Matrix& m) {
        put_string(name);
        put<std::uint64_t>(m.rows);
        put<std::uint64_t>(m.cols);
        const auto* p = reinterpret_cast<const std::uint8_t*>(m.data.data());
        buf.insert(buf.end(), p, p + m.data.size() * sizeof(double));
    }
};

struct ByteReader {
    const std::uint8_t* data;
    std::size_t size;
    std::size_t pos = 0;

    template <typename T>
    T get() {
        static_assert(std::is_trivially_copyable_v<T>);
        if (pos + sizeof(T) > size) {
            throw IntegrityError("checkpoint truncated");
        }
        T v;
        std::memcpy(&v, data + pos, sizeof(T));
        pos += sizeof(T);
        return v;
    }

    std::string get_string() {
        const auto n = get<std::uint32_t>();
        if (pos + n > size) {
            throw IntegrityError("checkpoint truncated");
        }
        std::string s(reinterpret_cast<const char*>(data + pos), n);
        pos += n;
        return s;
    }

    Matrix get_matrix(const std::string& expect_name) {
        const std::string name = get_string();
        if (name != expect_name) {
            throw IntegrityError("unexpected tensor '" + name + "', wanted '" + expect_name + "'");
        }
        const auto rows = get<std::uint64_t>();
        const auto cols = get<std::uint64_t>();
        const std::size_t n = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
        if (pos + n * sizeof(double) > size) {
            throw IntegrityError("checkpoint truncated");
        }
        Matrix m(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
        std::memcpy(m.data.data(), data + pos, n * sizeof(double));
        pos += n * sizeof(double);
        return m;
    }
};

inline void for_each_named_tensor(const Policy& p,
                                  const std::function<void(const std::string&, const Matrix&)>& fn) {
    fn("tok_emb", p.base.tok_emb);
    fn("pos_emb", p.base.pos_emb);
    fn("lm_head", p.base.lm_head);
    for (std::size_t l = 0; l < p.base.layers.size(); ++l) {
        const auto& layer = p.base.layers[l];
        const std::string prefix = "layer" + std::to_string(l) + ".";
        fn(prefix + "q-proj", layer.wq);
        fn(prefix + "k-proj", layer.wk);
        fn(prefix + "v-proj", layer.wv);
        fn(prefix + "o-proj", layer.wo);
        fn(prefix + "gate-proj", layer.w_gate);
        fn(prefix + "up-proj", layer.w_up);
        fn(prefix + "down-proj", layer.w_down);
    }
    for (const auto& e : p.adapter.entries) {
        const std::string prefix =
            "layer" + std::to_string(e.layer) + "." + lora_target_name(e.target);
        fn(prefix + ".lora_a", e.a);
        fn(prefix + ".lora_b", e.b);
    }
}

}  // namespace detail

inline void save_checkpoint(const Policy& p, const std::string& path) {
    detail::ByteWriter w;
    w.put<std::int64_t>(p.config.vocab_size);
    w.put<std::int64_t>(p.config.dim);
    w.put<std::int64_t>(p.config.layers);
    w.put<std::int64_t>(p.config.heads);
    w.put<std::int64_t>(p.config.ffw_dim);
    w.put<std::int64_t>(p.config.max_seq_len);
    w.put<std::uint64_t>(p.config.param_seed);
    w.put<std::int64_t>(p.lora.rank);
    w.put<double>(p.lora.alpha);
    w.put<std::uint32_t>(p.lora.targets);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(p.provenance));

    std::uint32_t count = 0;
    detail::for_each_named_tensor(p, [&](const std::string&, const Matrix&) { ++count; });
    w.put<std::uint32_t>(count);
    detail::for_each_named_tensor(p, [&](const std::string& name, const Matrix& m) {
        w.put_matrix(name, m);
    });

    const std::uint64_t checksum = detail::fnv1a64(w.buf.data(), w.buf.size());

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open '" + path + "' for writing");
    }
    auto put32 = [&out](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    put32(detail::kCheckpointMagic);
    put32(detail::kCheckpointVersion);
    out.write(reinterpret_cast<const char*>(&checksum), 8);
    out.write(reinterpret_cast<const char*>(w.buf.data()),
              static_cast<std::streamsize>(w.buf.size()));
    if (!out) {
        throw IoError("short write to '" + path + "'");
    }
}

inline Policy load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path + "' for reading");
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (bytes.size() < 16) {
        throw IntegrityError("checkpoint too small");
    }
    std::uint32_t magic = 0;
    std::uint32_t version = 0;
    std::uint64_t checksum = 0;
    std::memcpy(&magic, bytes.data(), 4);
    std::memcpy(&version, bytes.data() + 4, 4);
    std::memcpy(&checksum, bytes.data() + 8, 8);
    if (magic != detail::kCheckpointMagic) {
        throw IntegrityError("bad checkpoint magic");
    }
    if (version != detail::kCheckpointVersion) {
        throw IntegrityError("unsupported checkpoint version " + std::to_string(version));
    }
    const std::uint8_t* payload = bytes.data() + 16;
    const std::size_t payload_size = bytes.size() - 16;
    if (detail::fnv1a64(payload, payload_size) != checksum) {
        throw IntegrityError("checkpoint checksum mismatch");
    }

    detail::ByteReader r{payload, payload_size};
    ModelConfig cfg;
    cfg.vocab_size = static_cast<int>(r.get<std::int64_t>());
    cfg.dim = static_cast<int>(r.get<std::int64_t>());
    cfg.layers = static_cast<int>(r.get<std::int64_t>());
    cfg.heads = static_cast<int>(r.get<std::int64_t>());
    cfg.ffw_dim = static_cast<int>(r.get<std::int64_t>());
    cfg.max_seq_len = static_cast<int>(r.get<std::int64_t>());
    cfg.param_seed = r.get<std::uint64_t>();
    LoraConfig lora;
    lora.rank = static_cast<int>(r.get<std::int64_t>());
    lora.alpha = r.get<double>();
    lora.targets = r.get<std::uint32_t>();
    const auto provenance = static_cast<Provenance>(r.get<std::uint8_t>());
    cfg.validate();
    lora.validate();

    Policy p;
    p.config = cfg;
    p.lora = lora;
    p.provenance = provenance;

    const auto tensor_count = r.get<std::uint32_t>();
    std::uint32_t expected = 0;

    p.base.layers.resize(static_cast<std::size_t>(cfg.layers));
    p.base.tok_emb = r.get_matrix("tok_emb");
    p.base.pos_emb = r.get_matrix("pos_emb");
    p.base.lm_head = r.get_matrix("lm_head");
    expected += 3;
    for (std::size_t l = 0; l < p.base.layers.size(); ++l) {
        const std::string prefix = "layer" + std::to_string(l) + ".";
        auto& layer = p.base.layers[l];
        layer.wq = r.get_matrix(prefix + "q-proj");
        layer.wk = r.get_matrix(prefix + "k-proj");
        layer.wv = r.get_matrix(prefix + "v-proj");
        layer.wo = r.get_matrix(prefix + "o-proj");
        layer.w_gate = r.get_matrix(prefix + "gate-proj");
        layer.w_up = r.get_matrix(prefix + "up-proj");
        layer.w_down = r.get_matrix(prefix + "down-proj");
        expected += 7;
    }
    for (int l = 0; l < cfg.layers; ++l) {
        for (int t = 0; t < kLoraTargetCount; ++t) {
            const auto target = static_cast<LoraTarget>(t);
            if (!mask_has(lora.targets, target)) {
                continue;
            }
            const std::string prefix = "layer" + std::to_string(l) + "." + lora_target_name(target);
            LoraEntry e;
            e.layer = l;
            e.target = target;
            e.a = r.get_matrix(prefix + ".lora_a");
            e.b = r.get_matrix(prefix + ".lora_b");
            p.adapter.entries.push_back(std::move(e));
            expected += 2;
        }
    }
    if (tensor_count != expected) {
        throw IntegrityError("checkpoint tensor count mismatch");
    }

    // Validate every tensor against the header-declared geometry.
    const auto d = static_cast<std::size_t>(cfg.dim);
    const auto f = static_cast<std::size_t>(cfg.ffw_dim);
    auto check = [](const Matrix& m, std::size_t rows, std::size_t cols, const char* what) {
        if (m.rows != rows || m.cols != cols) {
            throw DimensionError(std::string("checkpoint tensor '") + what + "' has wrong shape");
        }
    };
    check(p.base.tok_emb, static_cast<std::size_t>(cfg.vocab_size), d, "tok_emb");
    check(p.base.pos_emb, static_cast<std::size_t>(cfg.max_seq_len), d, "pos_emb");
    check(p.base.lm_head, static_cast<std::size_t>(cfg.vocab_size), d, "lm_head");
    for (const auto& layer : p.base.layers) {
        check(layer.wq, d, d, "q-proj");
        check(layer.wk, d, d, "k-proj");
        check(layer.wv, d, d, "v-proj");
        check(layer.wo, d, d, "o-proj");
        check(layer.w_gate, f, d, "gate-proj");
        check(layer.w_up, f, d, "up-proj");
        check(layer.w_down, d, f, "down-proj");
    }
    for (const auto& e : p.adapter.entries) {
        std::size_t out = 0;
        std::size_t in = 0;
        detail::shape_for_target(cfg, e.target, out, in);
        check(e.a, static_cast<std::size_t>(lora.rank), in, "lora_a");
        check(e.b, out, static_cast<std::size_t>(lora.rank), "lora_b");
    }
    return p;
}

// Load and insist the stored geometry matches the caller's expectation.
inline Policy load_checkpoint(const std::string& path, const ModelConfig& expect_model,
                              const LoraConfig& expect_lora) {
    Policy p = load_checkpoint(path);
    ModelConfig stored = p.config;
    ModelConfig wanted = expect_model;
    stored.param_seed = 0;
    wanted.param_seed = 0;
    if (!(stored == wanted)) {
        throw DimensionError("checkpoint model config does not match the expected config");
    }
    if (!(p.lora == expect_lora)) {
        throw DimensionError("checkpoint lora config does not match the expected config");
    }
    return p;
}

}  // namespace crlab
