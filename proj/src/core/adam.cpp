#include "core/adam.hpp"

#include <cmath>

namespace preview::nn {

void adam::attach(std::vector<param_ref> params) {
    params_ = std::move(params);
    m_.clear();
    v_.clear();
    for (const auto& p : params_) {
        m_.emplace_back(p.value->size(), 0.0f);
        v_.emplace_back(p.value->size(), 0.0f);
    }
    t_ = 0;
}

void adam::reset() {
    for (auto& m : m_) std::fill(m.begin(), m.end(), 0.0f);
    for (auto& v : v_) std::fill(v.begin(), v.end(), 0.0f);
    t_ = 0;
}

void adam::step() {
    ++t_;
    const float b1 = float(beta1), b2 = float(beta2);
    const float bc1 = 1.0f - std::pow(b1, float(t_));
    const float bc2 = 1.0f - std::pow(b2, float(t_));
    const float lr = float(learning_rate);
    const float e = float(eps);
    for (size_t i = 0; i < params_.size(); ++i) {
        float* p = params_[i].value->data();
        const float* g = params_[i].grad->data();
        float* m = m_[i].data();
        float* v = v_[i].data();
        const size_t n = params_[i].value->size();
        for (size_t j = 0; j < n; ++j) {
            m[j] = b1 * m[j] + (1.0f - b1) * g[j];
            v[j] = b2 * v[j] + (1.0f - b2) * g[j] * g[j];
            p[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + e);
        }
    }
}

}  // namespace preview::nn
