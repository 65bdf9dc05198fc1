#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "dnact/tensor.hpp"

namespace dnact {

/// Named collection of learnable parameters; owns the Adam state.
template <typename T>
class ParameterSetT {
public:
    void add(const std::string& name, TensorT<T> t) {
        if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
        t.set_requires_grad(true);
        index_[name] = params_.size();
        params_.push_back({name, std::move(t)});
    }

    void merge(const ParameterSetT& other, const std::string& prefix) {
        for (auto& [name, t] : other.params_) add(prefix + name, t);
    }

    size_t size() const { return params_.size(); }
    std::int64_t count_scalars() const {
        std::int64_t n = 0;
        for (auto& [_, t] : params_) n += t.numel();
        return n;
    }

    TensorT<T>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
        return params_[it->second].second;
    }

    const std::vector<std::pair<std::string, TensorT<T>>>& items() const { return params_; }

    void zero_grad() {
        for (auto& [_, t] : params_) t.zero_grad();
    }

    T grad_norm() const {
        double s = 0;
        for (auto& [_, t] : params_)
            if (t.has_grad())
                for (T g : t.grad()) s += static_cast<double>(g) * g;
        return static_cast<T>(std::sqrt(s));
    }

    /// Adam with decoupled weight decay; zeroes grads afterwards.
    /// Aborts (throws) on any non-finite gradient, naming the parameter.
    void adam_step(T lr, T weight_decay, T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8)) {
        if (m_.empty()) {
            m_.resize(params_.size());
            v_.resize(params_.size());
            for (size_t i = 0; i < params_.size(); ++i) {
                m_[i].assign(static_cast<size_t>(params_[i].second.numel()), T(0));
                v_[i].assign(static_cast<size_t>(params_[i].second.numel()), T(0));
            }
        }
        ++step_;
        const T bc1 = T(1) - std::pow(beta1, static_cast<T>(step_));
        const T bc2 = T(1) - std::pow(beta2, static_cast<T>(step_));
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& [name, t] = params_[i];
            auto& g = t.grad();
            T* p = t.data();
            for (size_t j = 0; j < g.size(); ++j) {
                if (!std::isfinite(g[j]))
                    throw std::runtime_error("non-finite gradient in parameter " + name);
                m_[i][j] = beta1 * m_[i][j] + (T(1) - beta1) * g[j];
                v_[i][j] = beta2 * v_[i][j] + (T(1) - beta2) * g[j] * g[j];
                const T mhat = m_[i][j] / bc1;
                const T vhat = v_[i][j] / bc2;
                p[j] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p[j]);
            }
        }
        zero_grad();
    }

    void reset_optimizer_state() {
        m_.clear();
        v_.clear();
        step_ = 0;
    }

private:
    std::vector<std::pair<std::string, TensorT<T>>> params_;
    std::map<std::string, size_t> index_;
    std::vector<std::vector<T>> m_, v_;
    std::int64_t step_ = 0;
};

using ParameterSet = ParameterSetT<float>;

}  // namespace dnact
