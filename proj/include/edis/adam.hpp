#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace edis {

template <class T>
struct AdamState {
    std::vector<Tensor<T>> m;
    std::vector<Tensor<T>> v;
    std::size_t step = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    AdamState() = default;

    template <class Params>
    AdamState(const Params& params, double learning_rate) : lr(learning_rate) {
        for (const auto* p : params) {
            m.emplace_back(p->shape());
            v.emplace_back(p->shape());
        }
    }
};

/// One Adam update. A gradient tensor that is identically zero decays its
/// moments but leaves its parameter untouched.
template <class T>
void adam_step(const std::vector<Tensor<T>*>& params, const std::vector<Tensor<T>>& grads, AdamState<T>& st) {
    if (params.size() != grads.size() || params.size() != st.m.size())
        throw ValidationError("adam_step: " + std::to_string(params.size()) + " parameters, " +
                              std::to_string(grads.size()) + " gradients, " + std::to_string(st.m.size()) +
                              " moment slots");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].shape() != params[i]->shape())
            throw ValidationError("adam_step: gradient " + std::to_string(i) + " has shape " +
                                  shape_str(grads[i].shape()) + ", parameter has " + shape_str(params[i]->shape()));
        if (!grads[i].all_finite())
            throw NumericError("adam_step: non-finite gradient in tensor " + std::to_string(i) + " at entry " +
                               std::to_string(grads[i].first_non_finite()));
    }
    ++st.step;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    const T b1 = static_cast<T>(st.beta1), b2 = static_cast<T>(st.beta2);
    const T step_size = static_cast<T>(st.lr / bc1);
    const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
    const T eps = static_cast<T>(st.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i]->values();
        const auto& g = grads[i].values();
        auto& m = st.m[i].values();
        auto& v = st.v[i].values();
        bool zero = true;
        for (T x : g)
            if (x != T{}) {
                zero = false;
                break;
            }
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = b1 * m[j] + (T{1} - b1) * g[j];
            v[j] = b2 * v[j] + (T{1} - b2) * g[j] * g[j];
            if (!zero) p[j] -= step_size * m[j] / (std::sqrt(v[j]) * inv_sqrt_bc2 + eps);
        }
    }
}

/// Cosine annealing from lr0 down to lr0 * floor over `total` steps.
inline double cosine_lr(double lr0, std::size_t step, std::size_t total, double floor = 0.0) {
    if (total == 0) return lr0;
    const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
    return lr0 * (floor + (1.0 - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac)));
}

}  // namespace edis
