#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "rae/dit.hpp"
#include "rae/flow.hpp"
#include "rae/sampler.hpp"

namespace rae {

enum class ExperimentKind { overfit_sweep, schedule_ablation, noiseaug_ablation, pipeline, generate, verify_theory };
enum class LrSchedule { constant, linear_decay };

struct ModelSection {
    std::string preset = "S";
    int width = 0;  // 0 keeps the preset value
    int depth = 0;
    int heads = 0;
    int head_depth = 0;  // DDT head, enabled when head_width > 0
    int head_width = 0;
    int head_heads = 4;
    double fourier_scale = 1.0;
};

struct FlowSection {
    bool shift = true;
    std::int64_t shift_m = 0;  // 0 derives m from the latent grid
    std::int64_t n_base = 4096;
    bool shift_grid = true;
};

struct RaeSection {
    double tau = 0.8;
    int patch = 4;
    int token_dim = 64;
    int decoder_patch = 4;
    int decoder_width = 64;
    int decoder_depth = 2;
    int decoder_steps = 1500;
    int decoder_batch = 16;
    double decoder_lr = 1e-3;
};

struct DataSection {
    std::string path;  // empty selects the procedural toy dataset
    int count = 500;
    int size = 16;
    std::uint64_t seed = 5;
};

struct TrainSection {
    int steps = 3000;
    int batch = 32;
    double lr = 2e-4;
    double lr_end = 2e-5;
    LrSchedule schedule = LrSchedule::constant;
    int warmup_epochs = 0;
    double grad_clip = 0.0;  // 0 disables clipping
    double label_dropout = 0.1;
    bool ema = true;
    double ema_beta = 0.9999;
};

struct EvalSection {
    int samples = 500;
    int features = 64;
    int reference = 1000;
    std::uint64_t reference_seed = 8;
    int weak_step = 0;  // earlier checkpoint used as the weak guide; 0 picks 3/5 of steps
};

struct OverfitSection {
    int n = 64;
    int tokens = 1;
    std::vector<int> widths{16, 32, 64, 96};
    std::vector<int> depths{4, 8};
    int steps = 1200;
    int batch = 32;
    double lr = 2e-4;
    int targets = 3;
    int runs = 3;  // seeds per cell, counted up from the first entry of `seeds`
    std::int64_t shift_m = 196608;  // 0 trains without a shift
    double lower_tol = 0.02;
    double upper_tol = 0.15;
    double ceiling = 0.1;
};

struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::pipeline;
    std::vector<std::uint64_t> seeds{0};
    ModelSection model;
    FlowSection flow;
    RaeSection rae;
    DataSection data;
    TrainSection train;
    SamplerConfig sampler;
    GuidanceConfig guidance;
    EvalSection eval;
    OverfitSection overfit;
    std::string out = "out";

    void validate() const;
};

// Parses `key = value` lines. `#` starts a comment; keys are dotted
// (section.field). Unknown keys, malformed values and invalid results raise
// ParseError with the 1-based line number (0 for whole-config checks).
ExperimentConfig parse_config(std::string_view text);
// Applies one `key=value` override on top of an existing config.
void apply_override(ExperimentConfig& cfg, std::string_view assignment);
// Every key with its current value, one per line, in a fixed order.
std::string serialize_config(const ExperimentConfig& cfg);
bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

// Known keys in serialization order.
std::vector<std::string> config_keys();

std::string to_string(ExperimentKind kind);
ModelConfig model_config(const ExperimentConfig& cfg, int token_dim, int num_tokens, int label_count);

}  // namespace rae
