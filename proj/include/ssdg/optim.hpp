#pragma once

#include "errors.hpp"
#include "params.hpp"

#include <cmath>
#include <numbers>

namespace ssdg {

// Cosine annealing from base_lr at step 0 to 0 at total_steps.
inline double lr_schedule(long step, long total_steps, double base_lr) {
    if (total_steps <= 0) throw TrainerError("lr_schedule: total_steps must be positive");
    if (step < 0 || step > total_steps) throw TrainerError("lr_schedule: step out of range");
    return base_lr * 0.5 *
           (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps)));
}

struct SgdConfig {
    double momentum = 0.9;
    double weight_decay = 5e-4;
};

// SGD with heavy-ball momentum and L2 weight decay (skipped for tensors whose
// weight_decay flag is off, i.e. classifier.sigma_raw). Learning rates are
// per parameter group.
template <typename T>
class Sgd {
public:
    Sgd() = default;
    Sgd(const ParamSet<T>& params, SgdConfig config) : config_(config), velocity_(params.zeros_like()) {}

    const SgdConfig& config() const { return config_; }
    const ParamSet<T>& velocity() const { return velocity_; }
    ParamSet<T>& velocity() { return velocity_; }

    void step(ParamSet<T>& params, const ParamSet<T>& grads, double lr_backbone, double lr_classifier) {
        if (!params.same_layout(grads) || !params.same_layout(velocity_))
            throw TrainerError("optimizer: parameter layout mismatch");
        const T mom = static_cast<T>(config_.momentum);
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto& p = params[k];
            const auto& g = grads[k];
            auto& v = velocity_[k];
            const T lr = static_cast<T>(p.group == ParamGroup::backbone ? lr_backbone : lr_classifier);
            const T wd = p.weight_decay ? static_cast<T>(config_.weight_decay) : T(0);
            for (std::size_t i = 0; i < p.values.size(); ++i) {
                const T d = g.values[i] + wd * p.values[i];
                v.values[i] = mom * v.values[i] + d;
                p.values[i] -= lr * v.values[i];
            }
        }
    }

private:
    SgdConfig config_;
    ParamSet<T> velocity_;
};

// teacher <- decay * teacher + (1 - decay) * student, per element.
template <typename T>
void ema_update(ParamSet<T>& teacher, const ParamSet<T>& student, double decay) {
    if (!teacher.same_layout(student)) throw TrainerError("ema_update: parameter shapes differ");
    if (decay < 0.0 || decay > 1.0) throw TrainerError("ema_update: decay must lie in [0, 1]");
    const T a = static_cast<T>(decay);
    const T b = static_cast<T>(1.0 - decay);
    for (std::size_t k = 0; k < teacher.size(); ++k) {
        auto& t = teacher[k].values;
        const auto& s = student[k].values;
        if (decay == 0.0) {
            t = s;
            continue;
        }
        if (decay == 1.0) continue;
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = a * t[i] + b * s[i];
    }
}

} // namespace ssdg
