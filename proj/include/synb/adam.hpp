#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "synb/autograd.hpp"

namespace synb {

struct NanGradient : std::runtime_error {
    explicit NanGradient(const std::string& what) : std::runtime_error(what) {}
};

template <typename T>
class Adam {
public:
    T lr = T(4e-4);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    long step_count = 0;

    void attach(const std::vector<Var<T>>& params) {
        params_ = params;
        m_.clear();
        v_.clear();
        for (auto& p : params_) {
            m_.emplace_back(p.shape());
            v_.emplace_back(p.shape());
        }
    }

    // Standard bias-corrected update. A non-finite gradient aborts the step
    // before any parameter is touched.
    void step() {
        for (std::size_t pi = 0; pi < params_.size(); ++pi) {
            auto& g = params_[pi].grad();
            for (long i = 0; i < g.size(); ++i)
                if (!std::isfinite(static_cast<double>(g.at(i))))
                    throw NanGradient("non-finite gradient in parameter " + std::to_string(pi));
        }
        ++step_count;
        const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta1), static_cast<double>(step_count)));
        const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta2), static_cast<double>(step_count)));
        for (std::size_t pi = 0; pi < params_.size(); ++pi) {
            auto& p = params_[pi].val();
            auto& g = params_[pi].grad();
            auto& m = m_[pi];
            auto& v = v_[pi];
            for (long i = 0; i < p.size(); ++i) {
                const T gi = g.at(i);
                m.at(i) = beta1 * m.at(i) + (T(1) - beta1) * gi;
                v.at(i) = beta2 * v.at(i) + (T(1) - beta2) * gi * gi;
                const T mhat = m.at(i) / bc1;
                const T vhat = v.at(i) / bc2;
                p.at(i) -= lr * mhat / (static_cast<T>(std::sqrt(static_cast<double>(vhat))) + eps);
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    std::vector<Tensor<T>>& first_moments() { return m_; }
    std::vector<Tensor<T>>& second_moments() { return v_; }

private:
    std::vector<Var<T>> params_;
    std::vector<Tensor<T>> m_;
    std::vector<Tensor<T>> v_;
};

}  // namespace synb
