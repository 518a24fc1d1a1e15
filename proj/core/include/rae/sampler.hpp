#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "rae/dit.hpp"
#include "rae/flow.hpp"
#include "rae/rae.hpp"

namespace rae {

// Velocity field over a batch state at one time.
using VelocityField = std::function<Tensor(const Tensor& x, double t)>;

struct SamplerConfig {
    int steps = 50;
    std::optional<ScheduleShift> shift;
    bool shift_grid = true;  // apply the shift to the inference grid knots
};

// steps + 1 knots from 1 down to 0.
std::vector<double> time_grid(const SamplerConfig& cfg);

// Euler integration from t = 1 to t = 0. Throws SamplingError naming the
// step when the field returns a non-finite value.
Tensor euler_sample(const VelocityField& field, const Tensor& x1, const SamplerConfig& cfg);

enum class GuidanceMode { none, cfg_interval, autoguidance };

struct GuidanceConfig {
    GuidanceMode mode = GuidanceMode::none;
    double scale = 1.5;
    double t_lo = 0.0;
    double t_hi = 1.0;
};

// Inside [t_lo, t_hi]: v_uncond + w (v_cond - v_uncond); outside: v_cond.
Tensor cfg_velocity(const Tensor& v_cond, const Tensor& v_uncond, double w, double t, double t_lo, double t_hi);
// v_weak + g (v_strong - v_weak).
Tensor autoguidance_velocity(const Tensor& v_strong, const Tensor& v_weak, double g);

// Field of a model for fixed labels; x is [B, N, n].
VelocityField model_field(const DiT<float>& model, std::vector<int> labels);
// Guided field; `weak` is required for autoguidance.
VelocityField guided_field(const DiT<float>& model, const std::vector<int>& labels, const GuidanceConfig& guidance,
                           const DiT<float>* weak = nullptr);

// Latents [B, N, n] for the given labels, starting from x1 ~ N(0, I).
Tensor generate_latents(const DiT<float>& model, const std::vector<int>& labels, const SamplerConfig& sampler,
                        const GuidanceConfig& guidance, Rng& rng, const DiT<float>* weak = nullptr);
// generate_latents followed by decoding to images [B, C, H, W].
Tensor generate(const DiT<float>& model, const Decoder& decoder, const std::vector<int>& labels,
                const SamplerConfig& sampler, const GuidanceConfig& guidance, Rng& rng,
                const DiT<float>* weak = nullptr);

}  // namespace rae
