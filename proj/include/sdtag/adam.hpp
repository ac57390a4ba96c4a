#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "sdtag/errors.hpp"
#include "sdtag/tensor.hpp"

namespace sdtag {

struct NamedParam {
    std::string name;
    Tensor tensor;
    // Scales the base learning rate for this parameter; 0 freezes it.
    double lr_multiplier = 1.0;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// One first/second moment pair per parameter, in registration order.
class Adam {
public:
    Adam(std::vector<NamedParam> params, AdamConfig cfg = {})
        : params_(std::move(params)), cfg_(cfg) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i].tensor.numel(), 0.0);
            v_[i].assign(params_[i].tensor.numel(), 0.0);
        }
    }

    const std::vector<NamedParam>& params() const { return params_; }
    long long step_count() const { return step_; }

    void zero_grad() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

    void step() {
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            if (p.lr_multiplier == 0.0) continue;  // frozen: bitwise untouched
            if (p.tensor.node()->grad.size() != p.tensor.numel()) {
                throw ContractError("adam: missing grad for " + p.name);
            }
            const double lr = cfg_.lr * p.lr_multiplier;
            auto& data = p.tensor.data();
            const auto& g = p.tensor.grad();
            for (std::size_t j = 0; j < data.size(); ++j) {
                m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g[j];
                v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g[j] * g[j];
                const double mhat = m_[i][j] / bc1;
                const double vhat = v_[i][j] / bc2;
                data[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

private:
    std::vector<NamedParam> params_;
    AdamConfig cfg_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    long long step_ = 0;
};

}  // namespace sdtag
