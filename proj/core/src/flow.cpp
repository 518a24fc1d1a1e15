#include "rae/flow.hpp"

#include <algorithm>
#include <cmath>

namespace rae {

FlowSample make_flow_sample(Tensor x, Tensor eps, float t) {
    FlowSample s;
    s.x_t = interpolate(x, eps, t);
    s.target = velocity_target(x, eps);
    s.x = std::move(x);
    s.eps = std::move(eps);
    s.t = t;
    return s;
}

template <typename T>
BasicTensor<T> interpolate(const BasicTensor<T>& x, const BasicTensor<T>& eps, double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw DomainError("interpolate: t must lie in [0, 1]");
    if (!x.same_shape(eps)) throw DimensionError("interpolate: x and eps differ in shape");
    BasicTensor<T> out(x.shape());
    const T a = static_cast<T>(1.0 - t);
    const T b = static_cast<T>(t);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a * x[i] + b * eps[i];
    return out;
}

template <typename T>
BasicTensor<T> velocity_target(const BasicTensor<T>& x, const BasicTensor<T>& eps) {
    if (!x.same_shape(eps)) throw DimensionError("velocity_target: x and eps differ in shape");
    BasicTensor<T> out(x.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = eps[i] - x[i];
    return out;
}

std::int64_t effective_dim(std::int64_t num_tokens, std::int64_t token_dim) {
    if (num_tokens <= 0 || token_dim <= 0) throw ConfigError("effective_dim: token count and dim must be positive");
    return num_tokens * token_dim;
}

double ScheduleShift::alpha() const {
    if (m <= 0 || n_base <= 0) throw ConfigError("schedule shift dimensions must be positive");
    return std::sqrt(static_cast<double>(m) / static_cast<double>(n_base));
}

ScheduleShift ScheduleShift::for_latents(std::int64_t num_tokens, std::int64_t token_dim, std::int64_t n_base) {
    return ScheduleShift{effective_dim(num_tokens, token_dim), n_base};
}

double shift_timestep(double t, double alpha) {
    if (!(t >= 0.0 && t <= 1.0)) throw DomainError("shift_timestep: t must lie in [0, 1]");
    if (!(alpha > 0.0)) throw DomainError("shift_timestep: alpha must be positive");
    if (alpha == 1.0) return t;
    const double shifted = alpha * t / (1.0 + (alpha - 1.0) * t);
    return std::clamp(shifted, 0.0, 1.0);
}

double shift_timestep(double t, const ScheduleShift& shift) { return shift_timestep(t, shift.alpha()); }

double sample_training_time(Rng& rng, const std::optional<ScheduleShift>& shift) {
    const double t = rng.uniform();
    return shift ? shift_timestep(t, *shift) : t;
}

template <typename T>
BasicTensor<T> analytic_gaussian_velocity(const BasicTensor<T>& x_t, double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw DomainError("analytic_gaussian_velocity: t must lie in [0, 1]");
    const double coeff = (2.0 * t - 1.0) / ((1.0 - t) * (1.0 - t) + t * t);
    BasicTensor<T> out(x_t.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = static_cast<T>(coeff * static_cast<double>(x_t[i]));
    return out;
}

template <typename T>
FlowBatch<T> make_flow_batch(const BasicTensor<T>& clean, Rng& rng, const std::optional<ScheduleShift>& shift) {
    if (clean.rank() < 1 || clean.dim(0) == 0) throw ContractError("make_flow_batch: empty batch");
    const auto batch = clean.dim(0);
    const auto per = clean.numel() / batch;
    FlowBatch<T> out;
    out.x_t = BasicTensor<T>(clean.shape());
    out.target = BasicTensor<T>(clean.shape());
    out.t.resize(static_cast<std::size_t>(batch));
    for (std::int64_t b = 0; b < batch; ++b) out.t[static_cast<std::size_t>(b)] = static_cast<T>(sample_training_time(rng, shift));
    for (std::int64_t b = 0; b < batch; ++b) {
        const double t = out.t[static_cast<std::size_t>(b)];
        for (std::int64_t i = b * per; i < (b + 1) * per; ++i) {
            const double e = rng.normal();
            const double x = clean[i];
            out.x_t[i] = static_cast<T>((1.0 - t) * x + t * e);
            out.target[i] = static_cast<T>(e - x);
        }
    }
    return out;
}

template <typename T>
Var<T> flow_matching_loss(const VelocityModel<T>& model, const FlowBatch<T>& batch, std::span<const int> labels) {
    if (batch.t.empty()) throw ContractError("flow_matching_loss: empty batch");
    auto pred = model(Var<T>::constant(batch.x_t), std::span<const T>(batch.t), labels);
    return ad::mse(pred, Var<T>::constant(batch.target));
}

Var<float> flow_matching_loss(const VelocityModel<float>& model, std::span<const FlowSample> samples,
                              std::span<const int> labels) {
    if (samples.empty()) throw ContractError("flow_matching_loss: empty batch");
    const auto& first = samples.front().x_t;
    Shape shape = first.shape();
    shape.insert(shape.begin(), static_cast<std::int64_t>(samples.size()));
    FlowBatch<float> batch{Tensor(shape), Tensor(shape), {}};
    std::int64_t offset = 0;
    for (const auto& s : samples) {
        if (!s.x_t.same_shape(first)) throw DimensionError("flow_matching_loss: samples differ in shape");
        std::copy(s.x_t.storage().begin(), s.x_t.storage().end(), batch.x_t.data() + offset);
        std::copy(s.target.storage().begin(), s.target.storage().end(), batch.target.data() + offset);
        batch.t.push_back(s.t);
        offset += s.x_t.numel();
    }
    return flow_matching_loss<float>(model, batch, labels);
}

template BasicTensor<float> interpolate(const BasicTensor<float>&, const BasicTensor<float>&, double);
template BasicTensor<double> interpolate(const BasicTensor<double>&, const BasicTensor<double>&, double);
template BasicTensor<float> velocity_target(const BasicTensor<float>&, const BasicTensor<float>&);
template BasicTensor<double> velocity_target(const BasicTensor<double>&, const BasicTensor<double>&);
template BasicTensor<float> analytic_gaussian_velocity(const BasicTensor<float>&, double);
template BasicTensor<double> analytic_gaussian_velocity(const BasicTensor<double>&, double);
template FlowBatch<float> make_flow_batch(const BasicTensor<float>&, Rng&, const std::optional<ScheduleShift>&);
template FlowBatch<double> make_flow_batch(const BasicTensor<double>&, Rng&, const std::optional<ScheduleShift>&);
template Var<float> flow_matching_loss(const VelocityModel<float>&, const FlowBatch<float>&, std::span<const int>);
template Var<double> flow_matching_loss(const VelocityModel<double>&, const FlowBatch<double>&, std::span<const int>);

}  // namespace rae
