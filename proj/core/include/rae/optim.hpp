#pragma once

#include <string>
#include <vector>

#include "rae/autodiff.hpp"

namespace rae {

template <typename T>
struct NamedParam {
    std::string name;
    Var<T> var;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

struct AdamConfig {
    double lr = 2.0e-4;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1.0e-8;
    double weight_decay = 0.0;
};

// AdamW moments. Moments are created lazily on the first step so a default
// state can be handed to any parameter list.
template <typename T>
struct AdamState {
    AdamConfig config;
    std::vector<BasicTensor<T>> first_moment;
    std::vector<BasicTensor<T>> second_moment;
    std::int64_t step = 0;
};

// Bias-corrected Adam with decoupled weight decay:
//   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
// `lr` overrides config.lr for schedules. Missing gradients count as zero.
template <typename T>
void adam_step(const ParamList<T>& params, AdamState<T>& state, double lr);

template <typename T>
void adam_step(const ParamList<T>& params, AdamState<T>& state) {
    adam_step(params, state, state.config.lr);
}

// Tensor-level form; params and grads are matched by index.
template <typename T>
void adam_step(std::span<BasicTensor<T>* const> params, std::span<const BasicTensor<T>* const> grads,
               AdamState<T>& state, double lr);

// Global L2 norm over all gradients (accumulated in double, fixed order).
template <typename T>
double global_grad_norm(const ParamList<T>& params);

// Scales every gradient by max_norm / norm when the global norm exceeds
// max_norm. Returns the norm measured before clipping.
template <typename T>
double grad_clip(const ParamList<T>& params, double max_norm);

template <typename T>
double grad_clip(std::span<BasicTensor<T>* const> grads, double max_norm);

template <typename T>
void zero_grad(const ParamList<T>& params) {
    for (const auto& p : params) p.var.zero_grad();
}

}  // namespace rae
