#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rae/nn.hpp"

namespace rae {

// Shape of the wide, shallow transformer head appended to a backbone.
struct HeadConfig {
    int depth = 2;
    int width = 2048;
    int num_heads = 16;

    friend bool operator==(const HeadConfig&, const HeadConfig&) = default;
};

struct ModelConfig {
    std::string name = "custom";
    int dim = 384;
    int num_heads = 6;
    int depth = 12;
    int token_dim = 768;   // channel count n of each input token
    int num_tokens = 256;
    int patch_size = 1;    // 1 for representation latents
    int label_count = 1000;  // the null label is index label_count
    double mlp_ratio = 4.0;
    int fourier_features = 64;
    double fourier_scale = 1.0;
    std::optional<HeadConfig> head;

    int null_label() const { return label_count; }
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Paper-size presets S, B, L, XL, XXL, H, G, T plus desk-scale presets
// desk16 ... desk128 (depth 4, 4 heads, 64-channel tokens, 10 classes).
ModelConfig preset_config(std::string_view name);
std::vector<std::string> preset_names();

// Exact count of learnable scalars, computed from the configuration alone.
std::int64_t parameter_count(const ModelConfig& config);
// Learnable scalars contributed by one backbone block of the given config.
std::int64_t block_parameter_count(const ModelConfig& config);

// [cos(2*pi*W*t), sin(2*pi*W*t)] for each t; rows = t.size().
template <typename T>
BasicTensor<T> fourier_features(std::span<const T> t, const BasicTensor<T>& frequencies);

// Fixed 1-D sine/cosine absolute positional table [tokens x dim].
template <typename T>
BasicTensor<T> sincos_positions(std::int64_t tokens, std::int64_t dim);

// Diffusion transformer predicting a velocity for every input token. With a
// head configured, the backbone output z_t conditions a wide shallow head
// that reads x_t directly.
template <typename T>
class DiT {
   public:
    DiT(const ModelConfig& config, std::uint64_t seed);

    // tokens: [B, N, n] or [B*N, n]; t and labels have B entries.
    Var<T> forward(const Var<T>& tokens, std::span<const T> t, std::span<const int> labels) const;
    Var<T> forward_dit(const Var<T>& tokens, std::span<const T> t, std::span<const int> labels) const;
    Var<T> forward_ddt(const Var<T>& tokens, std::span<const T> t, std::span<const int> labels) const;

    // Time + label conditioning vector [B x dim], before SiLU.
    Var<T> conditioning(std::span<const T> t, std::span<const int> labels) const;
    Var<T> time_embedding(std::span<const T> t) const;

    ParamList<T> parameters() const;
    std::int64_t num_parameters() const;
    const ModelConfig& config() const { return config_; }
    const BasicTensor<T>& fourier_frequencies() const { return frequencies_; }
    // The frequencies come from the seed, not from training; copies and loads must carry them.
    void set_fourier_frequencies(const BasicTensor<T>& f);
    const BasicTensor<T>& positions() const { return positions_.value(); }
    nn::FinalLayer<T>& final_layer() { return final_; }

   private:
    std::int64_t check_inputs(const Var<T>& tokens, std::span<const T> t, std::span<const int> labels) const;
    Var<T> backbone(const Var<T>& tokens, const Var<T>& cond_silu, std::int64_t batch) const;

    ModelConfig config_;
    BasicTensor<T> frequencies_;  // frozen Gaussian Fourier frequencies
    Var<T> positions_;            // fixed, not learned
    nn::Linear<T> input_proj_;
    nn::Linear<T> time_fc1_;
    nn::Linear<T> time_fc2_;
    Var<T> label_table_;
    std::vector<nn::AdaLnBlock<T>> blocks_;
    nn::FinalLayer<T> final_;  // plain DiT only

    // Head pieces, present only when config.head is set.
    std::optional<nn::Linear<T>> bridge_;
    nn::Linear<T> head_input_;
    nn::Linear<T> head_cond_;
    std::vector<nn::AdaLnBlock<T>> head_blocks_;
    nn::FinalLayer<T> head_final_;
};

}  // namespace rae
