#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "crlab/errors.hpp"
#include "crlab/model.hpp"

namespace crlab {

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.001;
};

// Linear warmup to the base rate over the first ~10% of steps, then linear
// decay back toward zero. step is 0-based.
inline double scheduled_lr(double base_lr, int step, int total_steps) {
    if (total_steps < 1) {
        throw ConfigError("schedule needs at least one step");
    }
    if (step < 0 || step >= total_steps) {
        throw ConfigError("schedule step out of range");
    }
    const int warmup = static_cast<int>(std::ceil(0.1 * total_steps));
    if (step < warmup) {
        return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
    }
    return base_lr * static_cast<double>(total_steps - step) /
           static_cast<double>(total_steps - warmup);
}

// AdamW over the adapter parameters. Decay is decoupled:
//   p <- p - lr * wd * p - lr * m_hat / (sqrt(v_hat) + eps)
class AdamW {
public:
    AdamW(const AdapterSet& adapter, AdamWConfig cfg) : cfg_(cfg) {
        m_.reserve(adapter.entries.size() * 2);
        v_.reserve(adapter.entries.size() * 2);
        for (const auto& e : adapter.entries) {
            m_.emplace_back(e.a.rows, e.a.cols);
            v_.emplace_back(e.a.rows, e.a.cols);
            m_.emplace_back(e.b.rows, e.b.cols);
            v_.emplace_back(e.b.rows, e.b.cols);
        }
    }

    const AdamWConfig& config() const { return cfg_; }
    int steps_taken() const { return t_; }

    // One update with the given effective learning rate (already scheduled).
    void step(AdapterSet& adapter, const AdapterGrads& grads, double lr) {
        if (adapter.entries.size() * 2 != m_.size()) {
            throw DimensionError("optimizer state does not match the adapter");
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
        const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
        for (std::size_t i = 0; i < adapter.entries.size(); ++i) {
            update_tensor(adapter.entries[i].a, grads.a[i], m_[2 * i], v_[2 * i], lr, bc1, bc2);
            update_tensor(adapter.entries[i].b, grads.b[i], m_[2 * i + 1], v_[2 * i + 1], lr, bc1,
                          bc2);
        }
    }

private:
    void update_tensor(Matrix& p, const Matrix& g, Matrix& m, Matrix& v, double lr, double bc1,
                       double bc2) {
        if (!p.same_shape(g) || !p.same_shape(m)) {
            throw DimensionError("gradient shape does not match the parameter");
        }
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            const double gi = g.data[i];
            m.data[i] = cfg_.beta1 * m.data[i] + (1.0 - cfg_.beta1) * gi;
            v.data[i] = cfg_.beta2 * v.data[i] + (1.0 - cfg_.beta2) * gi * gi;
            const double mhat = m.data[i] / bc1;
            const double vhat = v.data[i] / bc2;
            p.data[i] -= lr * cfg_.weight_decay * p.data[i];
            p.data[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }

    AdamWConfig cfg_;
    int t_ = 0;
    std::vector<Matrix> m_, v_;
};

}  // namespace crlab
