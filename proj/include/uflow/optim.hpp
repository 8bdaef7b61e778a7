#pragma once

// AdamW with decoupled weight decay plus the warmup/cosine LR schedule.

#include <deque>

#include "uflow/tape.hpp"

namespace uflow {

struct ParamStore {
    std::deque<Parameter> items;  // deque keeps addresses stable

    Parameter& create(const std::string& name, Tensor init) {
        items.emplace_back(name, std::move(init));
        return items.back();
    }
    void zero_grads() {
        for (auto& p : items) p.zero_grad();
    }
    long long total_values() const {
        long long n = 0;
        for (auto& p : items) n += p.value.numel();
        return n;
    }
    Parameter* find(const std::string& name) {
        for (auto& p : items)
            if (p.name == name) return &p;
        return nullptr;
    }
};

struct AdamConfig {
    float beta1 = 0.9f;
    float beta2 = 0.95f;
    float eps = 1e-8f;
    float weight_decay = 0.1f;
};

class AdamW {
public:
    explicit AdamW(AdamConfig cfg = {}) : cfg_(cfg) {}

    void step(ParamStore& params, float lr) {
        if (lr <= 0.0f) throw std::invalid_argument("adamw: lr must be positive");
        ++t_;
        float bc1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(t_));
        float bc2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(t_));
        for (auto& p : params.items) {
            if (p.m.shape != p.value.shape) throw std::runtime_error("adamw: uninitialized moments");
            // no weight decay on 1-d params (norm gains)
            float wd = p.value.shape.size() >= 2 ? cfg_.weight_decay : 0.0f;
            for (size_t i = 0; i < p.value.data.size(); ++i) {
                float g = p.grad.data[i];
                p.m.data[i] = cfg_.beta1 * p.m.data[i] + (1.0f - cfg_.beta1) * g;
                p.v.data[i] = cfg_.beta2 * p.v.data[i] + (1.0f - cfg_.beta2) * g * g;
                float mhat = p.m.data[i] / bc1;
                float vhat = p.v.data[i] / bc2;
                p.value.data[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + wd * p.value.data[i]);
            }
        }
    }

    const AdamConfig& config() const { return cfg_; }

private:
    AdamConfig cfg_;
    long long t_ = 0;
};

struct ScheduleConfig {
    float peak_lr = 3e-4f;
    int warmup_steps = 1000;
    int total_steps = 10000;
    float floor_fraction = 0.05f;

    void validate() const {
        if (warmup_steps >= total_steps)
            throw std::invalid_argument("schedule: warmup must be shorter than total");
        if (floor_fraction <= 0.0f || floor_fraction > 1.0f)
            throw std::invalid_argument("schedule: floor fraction must be in (0, 1]");
    }
};

inline float lr_at_step(const ScheduleConfig& cfg, int step) {
    cfg.validate();
    if (step < 0 || step > cfg.total_steps) throw std::out_of_range("lr_at_step: step out of range");
    if (step <= cfg.warmup_steps)
        return cfg.peak_lr * static_cast<float>(step) / static_cast<float>(cfg.warmup_steps);
    float floor = cfg.peak_lr * cfg.floor_fraction;
    float progress = static_cast<float>(step - cfg.warmup_steps) /
                     static_cast<float>(cfg.total_steps - cfg.warmup_steps);
    return floor + (cfg.peak_lr - floor) * 0.5f * (1.0f + std::cos(progress * static_cast<float>(M_PI)));
}

}  // namespace uflow
