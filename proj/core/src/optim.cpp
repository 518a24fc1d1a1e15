#include "rae/optim.hpp"

#include <cmath>

namespace rae {

template <typename T>
void adam_step(std::span<BasicTensor<T>* const> params, std::span<const BasicTensor<T>* const> grads,
               AdamState<T>& state, double lr) {
    if (!(lr > 0.0)) throw ConfigError("adam_step: learning rate must be positive");
    if (params.size() != grads.size()) throw DimensionError("adam_step: params and grads differ in count");
    const auto& cfg = state.config;
    if (state.first_moment.empty()) {
        for (auto* p : params) {
            state.first_moment.push_back(BasicTensor<T>::zeros(p->shape()));
            state.second_moment.push_back(BasicTensor<T>::zeros(p->shape()));
        }
    }
    if (state.first_moment.size() != params.size()) throw DimensionError("adam_step: state does not match params");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = *params[i];
        const auto* g = grads[i];
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        if (!m.same_shape(p)) throw DimensionError("adam_step: moment shape differs from parameter");
        if (g && !g->empty() && !g->same_shape(p)) throw DimensionError("adam_step: gradient shape differs from parameter");
        const bool has_g = g && !g->empty();
        const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
        const T step_size = static_cast<T>(lr / bc1);
        const T inv_bc2 = static_cast<T>(1.0 / bc2);
        const T eps = static_cast<T>(cfg.eps);
        const T decay = static_cast<T>(lr * cfg.weight_decay);
        T* pd = p.data();
        T* md = m.data();
        T* vd = v.data();
        const T* gd = has_g ? g->data() : nullptr;
        const auto n = p.numel();
        for (std::int64_t k = 0; k < n; ++k) {
            const T gk = gd ? gd[k] : T(0);
            md[k] = b1 * md[k] + (T(1) - b1) * gk;
            vd[k] = b2 * vd[k] + (T(1) - b2) * gk * gk;
            pd[k] -= step_size * md[k] / (std::sqrt(vd[k] * inv_bc2) + eps) + decay * pd[k];
        }
    }
}

template <typename T>
void adam_step(const ParamList<T>& params, AdamState<T>& state, double lr) {
    std::vector<BasicTensor<T>*> ps;
    std::vector<const BasicTensor<T>*> gs;
    for (const auto& p : params) {
        const auto& var = p.var;
        ps.push_back(&var.mutable_value());
        gs.push_back(var.has_grad() ? &var.grad() : nullptr);
    }
    adam_step<T>(std::span<BasicTensor<T>* const>(ps), std::span<const BasicTensor<T>* const>(gs), state, lr);
}

template <typename T>
double global_grad_norm(const ParamList<T>& params) {
    double acc = 0.0;
    for (const auto& p : params) {
        if (!p.var.has_grad()) continue;
        for (T g : p.var.grad().span()) acc += static_cast<double>(g) * static_cast<double>(g);
    }
    return std::sqrt(acc);
}

template <typename T>
double grad_clip(std::span<BasicTensor<T>* const> grads, double max_norm) {
    if (!(max_norm > 0.0)) throw ConfigError("grad_clip: max_norm must be positive");
    double acc = 0.0;
    for (const auto* g : grads)
        for (T v : g->span()) acc += static_cast<double>(v) * static_cast<double>(v);
    const double norm = std::sqrt(acc);
    if (norm > max_norm) {
        const double s = max_norm / norm;
        for (auto* g : grads)
            for (auto& v : g->storage()) v = static_cast<T>(v * s);
    }
    return norm;
}

template <typename T>
double grad_clip(const ParamList<T>& params, double max_norm) {
    std::vector<BasicTensor<T>*> gs;
    for (const auto& p : params) {
        const auto& var = p.var;
        if (var.has_grad()) gs.push_back(&var.mutable_grad());
    }
    return grad_clip<T>(std::span<BasicTensor<T>* const>(gs), max_norm);
}

template void adam_step(std::span<BasicTensor<float>* const>, std::span<const BasicTensor<float>* const>,
                        AdamState<float>&, double);
template void adam_step(std::span<BasicTensor<double>* const>, std::span<const BasicTensor<double>* const>,
                        AdamState<double>&, double);
template void adam_step(const ParamList<float>&, AdamState<float>&, double);
template void adam_step(const ParamList<double>&, AdamState<double>&, double);
template double global_grad_norm(const ParamList<float>&);
template double global_grad_norm(const ParamList<double>&);
template double grad_clip(std::span<BasicTensor<float>* const>, double);
template double grad_clip(std::span<BasicTensor<double>* const>, double);
template double grad_clip(const ParamList<float>&, double);
template double grad_clip(const ParamList<double>&, double);

}  // namespace rae
