#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "rae/autodiff.hpp"
#include "rae/rng.hpp"

namespace rae {

// One training pair on the linear path between data and noise.
struct FlowSample {
    Tensor x;       // clean latent
    Tensor eps;     // Gaussian noise
    float t = 0.f;  // in [0, 1]; 0 is data, 1 is noise
    Tensor x_t;     // (1 - t) x + t eps
    Tensor target;  // eps - x
};

FlowSample make_flow_sample(Tensor x, Tensor eps, float t);

template <typename T>
BasicTensor<T> interpolate(const BasicTensor<T>& x, const BasicTensor<T>& eps, double t);

template <typename T>
BasicTensor<T> velocity_target(const BasicTensor<T>& x, const BasicTensor<T>& eps);

// Token count times per-token channels.
std::int64_t effective_dim(std::int64_t num_tokens, std::int64_t token_dim);

// Dimension-dependent timestep shift with alpha = sqrt(m / n_base).
struct ScheduleShift {
    std::int64_t m = 4096;
    std::int64_t n_base = 4096;

    double alpha() const;
    static ScheduleShift for_latents(std::int64_t num_tokens, std::int64_t token_dim, std::int64_t n_base = 4096);

    friend bool operator==(const ScheduleShift&, const ScheduleShift&) = default;
};

// t -> alpha t / (1 + (alpha - 1) t). Throws DomainError outside [0, 1].
double shift_timestep(double t, double alpha);
double shift_timestep(double t, const ScheduleShift& shift);

// Uniform t, then shifted when a shift is given.
double sample_training_time(Rng& rng, const std::optional<ScheduleShift>& shift);

// Exact velocity E[eps - x | x_t] for x ~ N(0, I):
// (2t - 1) x_t / ((1 - t)^2 + t^2).
template <typename T>
BasicTensor<T> analytic_gaussian_velocity(const BasicTensor<T>& x_t, double t);

// A velocity model over a batch: x_t rows for B samples, one t and one label each.
template <typename T>
using VelocityModel = std::function<Var<T>(const Var<T>& x_t, std::span<const T> t, std::span<const int> labels)>;

// Stacked model inputs and regression targets for one training step.
template <typename T>
struct FlowBatch {
    BasicTensor<T> x_t;     // same shape as the clean batch
    BasicTensor<T> target;  // eps - x
    std::vector<T> t;
};

// clean: [B, ...]; draws eps and t per sample from `rng`.
template <typename T>
FlowBatch<T> make_flow_batch(const BasicTensor<T>& clean, Rng& rng, const std::optional<ScheduleShift>& shift);

// Mean over batch and every dimension of (v_theta(x_t, t) - (eps - x))^2.
template <typename T>
Var<T> flow_matching_loss(const VelocityModel<T>& model, const FlowBatch<T>& batch, std::span<const int> labels);

Var<float> flow_matching_loss(const VelocityModel<float>& model, std::span<const FlowSample> samples,
                              std::span<const int> labels);

}  // namespace rae
