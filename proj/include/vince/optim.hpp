#pragma once

#include <cmath>
#include <vector>

#include "vince/errors.hpp"
#include "vince/tensor.hpp"

namespace vince {

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient:
///   v <- mu * v + (grad + wd * w);  w <- w - lr * v
class SgdMomentum {
public:
    SgdMomentum(float momentum = 0.9f, float weight_decay = 1e-4f) : momentum_(momentum), weight_decay_(weight_decay) {}

    void step(std::vector<Tensor>& params, float lr) {
        if (velocity_.empty()) {
            for (const auto& p : params) velocity_.emplace_back(p.size(), 0.0f);
        }
        if (velocity_.size() != params.size()) throw DimensionError("sgd: parameter list changed between steps");
        for (std::size_t p = 0; p < params.size(); ++p) {
            auto w = params[p].mutable_data();
            auto& v = velocity_[p];
            if (v.size() != w.size()) throw DimensionError("sgd: parameter size changed between steps");
            auto g = params[p].grad();
            const bool has_grad = params[p].has_grad();
            for (std::size_t i = 0; i < w.size(); ++i) {
                const float grad = (has_grad ? g[i] : 0.0f) + weight_decay_ * w[i];
                v[i] = momentum_ * v[i] + grad;
                w[i] -= lr * v[i];
            }
        }
    }

    const std::vector<std::vector<float>>& velocity() const { return velocity_; }
    void set_velocity(std::vector<std::vector<float>> v) { velocity_ = std::move(v); }

private:
    float momentum_;
    float weight_decay_;
    std::vector<std::vector<float>> velocity_;
};

/// Adam with bias correction.
class Adam {
public:
    explicit Adam(float lr = 1e-3f, float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(std::vector<Tensor>& params) {
        if (first_.empty()) {
            for (const auto& p : params) {
                first_.emplace_back(p.size(), 0.0f);
                second_.emplace_back(p.size(), 0.0f);
            }
        }
        ++t_;
        const double c1 = 1.0 - std::pow(static_cast<double>(beta1_), t_);
        const double c2 = 1.0 - std::pow(static_cast<double>(beta2_), t_);
        for (std::size_t p = 0; p < params.size(); ++p) {
            if (!params[p].has_grad()) continue;
            auto w = params[p].mutable_data();
            auto g = params[p].grad();
            for (std::size_t i = 0; i < w.size(); ++i) {
                first_[p][i] = beta1_ * first_[p][i] + (1.0f - beta1_) * g[i];
                second_[p][i] = beta2_ * second_[p][i] + (1.0f - beta2_) * g[i] * g[i];
                const double m_hat = first_[p][i] / c1;
                const double v_hat = second_[p][i] / c2;
                w[i] -= static_cast<float>(lr_ * m_hat / (std::sqrt(v_hat) + eps_));
            }
        }
    }

private:
    float lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<std::vector<float>> first_, second_;
};

inline void zero_grads(std::vector<Tensor>& params) {
    for (auto& p : params) p.zero_grad();
}

}  // namespace vince
