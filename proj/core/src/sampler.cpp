#include "rae/sampler.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace rae {

std::vector<double> time_grid(const SamplerConfig& cfg) {
    if (cfg.steps < 1) throw ConfigError("sampler needs at least one step");
    std::vector<double> grid(static_cast<std::size_t>(cfg.steps) + 1);
    for (int k = 0; k <= cfg.steps; ++k) {
        const double t = 1.0 - static_cast<double>(k) / cfg.steps;
        grid[static_cast<std::size_t>(k)] = (cfg.shift && cfg.shift_grid) ? shift_timestep(t, *cfg.shift) : t;
    }
    return grid;
}

Tensor euler_sample(const VelocityField& field, const Tensor& x1, const SamplerConfig& cfg) {
    if (!all_finite(x1.span())) throw SamplingError("initial state is not finite", 0);
    const auto grid = time_grid(cfg);
    // The state is carried in 64 bits and rounded for each field evaluation.
    Tensor x = x1;
    std::vector<double> acc(x1.storage().begin(), x1.storage().end());
    for (int k = 0; k < cfg.steps; ++k) {
        const double t = grid[static_cast<std::size_t>(k)];
        const double dt = grid[static_cast<std::size_t>(k) + 1] - t;
        const Tensor v = field(x, t);
        if (!v.same_shape(x)) throw DimensionError("velocity field changed the state shape");
        if (!all_finite(v.span())) throw SamplingError("non-finite velocity", k);
        for (std::int64_t i = 0; i < x.numel(); ++i) {
            acc[static_cast<std::size_t>(i)] += static_cast<double>(v[i]) * dt;
            x[i] = static_cast<float>(acc[static_cast<std::size_t>(i)]);
        }
    }
    return x;
}

namespace {

// (1 - w) base + w target, written so that w = 0 and w = 1 return an input exactly.
Tensor extrapolate(const Tensor& target, const Tensor& base, double w) {
    Tensor out(target.shape());
    const auto s = static_cast<float>(w);
    const auto r = static_cast<float>(1.0 - w);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = r * base[i] + s * target[i];
    return out;
}

}  // namespace

Tensor cfg_velocity(const Tensor& v_cond, const Tensor& v_uncond, double w, double t, double t_lo, double t_hi) {
    if (!v_cond.same_shape(v_uncond)) throw DimensionError("cfg_velocity: shapes differ");
    if (t_lo > t_hi) throw ConfigError("cfg interval must satisfy t_lo <= t_hi");
    if (t < t_lo || t > t_hi) return v_cond;
    return extrapolate(v_cond, v_uncond, w);
}

Tensor autoguidance_velocity(const Tensor& v_strong, const Tensor& v_weak, double g) {
    if (!v_strong.same_shape(v_weak)) throw DimensionError("autoguidance_velocity: shapes differ");
    return extrapolate(v_strong, v_weak, g);
}

VelocityField model_field(const DiT<float>& model, std::vector<int> labels) {
    return [&model, labels = std::move(labels)](const Tensor& x, double t) {
        const std::vector<float> ts(labels.size(), static_cast<float>(t));
        return model.forward(Var<float>::constant(x), ts, labels).value().reshaped(x.shape());
    };
}

VelocityField guided_field(const DiT<float>& model, const std::vector<int>& labels, const GuidanceConfig& guidance,
                           const DiT<float>* weak) {
    if (guidance.scale < 0.0) throw ConfigError("guidance scale must be non-negative");
    switch (guidance.mode) {
        case GuidanceMode::none:
            return model_field(model, labels);
        case GuidanceMode::cfg_interval: {
            auto cond = model_field(model, labels);
            auto uncond = model_field(model, std::vector<int>(labels.size(), model.config().null_label()));
            return [cond, uncond, guidance](const Tensor& x, double t) {
                if (t < guidance.t_lo || t > guidance.t_hi) return cond(x, t);
                return cfg_velocity(cond(x, t), uncond(x, t), guidance.scale, t, guidance.t_lo, guidance.t_hi);
            };
        }
        case GuidanceMode::autoguidance: {
            if (weak == nullptr) throw ConfigError("autoguidance needs a weak model");
            auto strong = model_field(model, labels);
            auto weak_field = model_field(*weak, labels);
            return [strong, weak_field, g = guidance.scale](const Tensor& x, double t) {
                return autoguidance_velocity(strong(x, t), weak_field(x, t), g);
            };
        }
    }
    throw ConfigError("unknown guidance mode");
}

Tensor generate_latents(const DiT<float>& model, const std::vector<int>& labels, const SamplerConfig& sampler,
                        const GuidanceConfig& guidance, Rng& rng, const DiT<float>* weak) {
    const auto& mc = model.config();
    for (int y : labels)
        if (y < 0 || y > mc.label_count) throw ContractError("label " + std::to_string(y) + " out of range");
    const auto b = static_cast<std::int64_t>(labels.size());
    const Tensor x1 = randn<float>({b, mc.num_tokens, mc.token_dim}, rng);
    return euler_sample(guided_field(model, labels, guidance, weak), x1, sampler);
}

Tensor generate(const DiT<float>& model, const Decoder& decoder, const std::vector<int>& labels,
                const SamplerConfig& sampler, const GuidanceConfig& guidance, Rng& rng, const DiT<float>* weak) {
    return decoder.decode(generate_latents(model, labels, sampler, guidance, rng, weak));
}

}  // namespace rae
