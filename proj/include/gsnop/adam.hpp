#pragma once

// Adam with bias correction, global-norm gradient clipping and NaN
// diagnostics.

#include <cmath>
#include <map>
#include <string>

#include "gsnop/autodiff.hpp"
#include "gsnop/common.hpp"

namespace gsnop {

struct AdamConfig {
    double learning_rate = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double clip_norm = 5.0;  // 0 disables clipping
};

class Adam {
   public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    std::size_t step_count() const { return step_; }
    const AdamConfig& config() const { return cfg_; }
    void set_learning_rate(double lr) { cfg_.learning_rate = lr; }

    /// One update over every parameter in the store; zeroes grads afterward.
    void step(ParamStore& params) {
        for (auto& [name, p] : params)
            for (double g : p.grad)
                if (std::isnan(g)) throw DomainError("NaN gradient in parameter " + name);

        double clip_scale = 1.0;
        if (cfg_.clip_norm > 0.0) {
            double norm = params.grad_norm();
            if (norm > cfg_.clip_norm) clip_scale = cfg_.clip_norm / norm;
        }

        ++step_;
        double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (auto& [name, p] : params) {
            auto& [m, v] = moments_[name];
            if (m.size() != p.size()) {
                m.assign(p.size(), 0.0);
                v.assign(p.size(), 0.0);
            }
            for (std::size_t i = 0; i < p.size(); ++i) {
                double g = p.grad[i] * clip_scale;
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
                double mhat = m[i] / bc1;
                double vhat = v[i] / bc2;
                p.value[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
            }
        }
        params.zero_grads();
    }

   private:
    AdamConfig cfg_;
    std::size_t step_ = 0;
    std::map<std::string, std::pair<VecD, VecD>> moments_;
};

}  // namespace gsnop
