#include "rae/dit.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace rae {
namespace {

struct PresetRow {
    const char* name;
    int dim;
    int heads;
    int depth;
};

// Full-scale backbone and head sizes.
constexpr PresetRow kFullPresets[] = {
    {"S", 384, 6, 12},    {"B", 768, 12, 12},   {"L", 1024, 16, 24},  {"XL", 1152, 16, 28},
    {"XXL", 1280, 16, 32}, {"H", 1536, 16, 32}, {"G", 2048, 16, 40},  {"T", 2688, 21, 40},
};

constexpr int kDeskWidths[] = {16, 32, 64, 96, 128};

std::int64_t linear_count(std::int64_t in, std::int64_t out) { return in * out + out; }

std::int64_t ada_block_count(std::int64_t cond, std::int64_t dim, double mlp_ratio) {
    const auto hidden = static_cast<std::int64_t>(std::lround(mlp_ratio * static_cast<double>(dim)));
    return linear_count(cond, 6 * dim) + linear_count(dim, 3 * dim) + linear_count(dim, dim) +
           linear_count(dim, hidden) + linear_count(hidden, dim);
}

std::int64_t final_count(std::int64_t cond, std::int64_t dim, std::int64_t out) {
    return linear_count(cond, 2 * dim) + linear_count(dim, out);
}

}  // namespace

void ModelConfig::validate() const {
    if (dim <= 0 || num_heads <= 0 || depth < 0 || token_dim <= 0 || num_tokens <= 0 || patch_size <= 0 ||
        label_count <= 0 || fourier_features <= 0 || mlp_ratio <= 0.0) {
        throw ConfigError("model config '" + name + "': extents must be positive");
    }
    if (dim % num_heads != 0) {
        throw ConfigError("model config '" + name + "': dim " + std::to_string(dim) + " not divisible by " +
                          std::to_string(num_heads) + " heads");
    }
    if (head) {
        if (head->depth <= 0 || head->width <= 0 || head->num_heads <= 0) {
            throw ConfigError("model config '" + name + "': head extents must be positive");
        }
        if (head->width % head->num_heads != 0) throw ConfigError("model config '" + name + "': head width not divisible by head count");
    }
}

ModelConfig preset_config(std::string_view name) {
    for (const auto& row : kFullPresets) {
        if (name == row.name) {
            ModelConfig c;
            c.name = row.name;
            c.dim = row.dim;
            c.num_heads = row.heads;
            c.depth = row.depth;
            return c;
        }
    }
    for (int w : kDeskWidths) {
        if (name == "desk" + std::to_string(w)) {
            ModelConfig c;
            c.name = std::string(name);
            c.dim = w;
            c.num_heads = 4;
            c.depth = 4;
            c.token_dim = 64;
            c.num_tokens = 16;
            c.label_count = 10;
            return c;
        }
    }
    throw ConfigError("unknown model preset '" + std::string(name) + "'");
}

std::vector<std::string> preset_names() {
    std::vector<std::string> names;
    for (const auto& row : kFullPresets) names.emplace_back(row.name);
    for (int w : kDeskWidths) names.push_back("desk" + std::to_string(w));
    return names;
}

std::int64_t block_parameter_count(const ModelConfig& c) { return ada_block_count(c.dim, c.dim, c.mlp_ratio); }

std::int64_t parameter_count(const ModelConfig& c) {
    c.validate();
    const std::int64_t d = c.dim;
    const std::int64_t n = c.token_dim;
    std::int64_t total = linear_count(n, d);                                  // input projection
    total += linear_count(2 * c.fourier_features, d) + linear_count(d, d);    // time MLP
    total += static_cast<std::int64_t>(c.label_count + 1) * d;                // label table incl. null
    total += static_cast<std::int64_t>(c.depth) * block_parameter_count(c);
    if (!c.head) return total + final_count(d, d, n);
    const std::int64_t hw = c.head->width;
    if (hw != d) total += linear_count(d, hw);  // bridge
    total += linear_count(n, hw) + linear_count(d, hw);
    total += static_cast<std::int64_t>(c.head->depth) * ada_block_count(hw, hw, c.mlp_ratio);
    return total + final_count(hw, hw, n);
}

template <typename T>
BasicTensor<T> fourier_features(std::span<const T> t, const BasicTensor<T>& frequencies) {
    const auto f = frequencies.numel();
    BasicTensor<T> out({static_cast<std::int64_t>(t.size()), 2 * f});
    for (std::size_t i = 0; i < t.size(); ++i) {
        for (std::int64_t k = 0; k < f; ++k) {
            const double arg = 2.0 * std::numbers::pi * static_cast<double>(frequencies[k]) * static_cast<double>(t[i]);
            out.at(static_cast<std::int64_t>(i), k) = static_cast<T>(std::cos(arg));
            out.at(static_cast<std::int64_t>(i), f + k) = static_cast<T>(std::sin(arg));
        }
    }
    return out;
}

template <typename T>
BasicTensor<T> sincos_positions(std::int64_t tokens, std::int64_t dim) {
    BasicTensor<T> out({tokens, dim});
    const std::int64_t half = dim / 2;
    for (std::int64_t p = 0; p < tokens; ++p) {
        for (std::int64_t k = 0; k < half; ++k) {
            const double omega = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(std::max<std::int64_t>(half, 1)));
            out.at(p, k) = static_cast<T>(std::sin(static_cast<double>(p) * omega));
            out.at(p, half + k) = static_cast<T>(std::cos(static_cast<double>(p) * omega));
        }
    }
    return out;
}

template <typename T>
DiT<T>::DiT(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(seed, 0);
    Rng freq_rng = rng.derive(1);
    const std::int64_t d = config_.dim;
    const std::int64_t n = config_.token_dim;
    frequencies_ = randn<T>({config_.fourier_features}, freq_rng, config_.fourier_scale);
    positions_ = Var<T>::constant(sincos_positions<T>(config_.num_tokens, d));
    input_proj_ = nn::Linear<T>(n, d, rng);
    time_fc1_ = nn::Linear<T>(2 * config_.fourier_features, d, rng);
    time_fc2_ = nn::Linear<T>(d, d, rng);
    label_table_ = Var<T>::parameter(randn<T>({config_.label_count + 1, d}, rng, 0.02));
    for (int i = 0; i < config_.depth; ++i) blocks_.emplace_back(d, d, config_.num_heads, config_.mlp_ratio, rng);
    if (!config_.head) {
        final_ = nn::FinalLayer<T>(d, d, n, rng);
        return;
    }
    const std::int64_t hw = config_.head->width;
    if (hw != d) bridge_ = nn::Linear<T>(d, hw, rng);
    head_input_ = nn::Linear<T>(n, hw, rng);
    head_cond_ = nn::Linear<T>(d, hw, rng);
    for (int i = 0; i < config_.head->depth; ++i) {
        head_blocks_.emplace_back(hw, hw, config_.head->num_heads, config_.mlp_ratio, rng);
    }
    head_final_ = nn::FinalLayer<T>(hw, hw, n, rng);
}

template <typename T>
std::int64_t DiT<T>::check_inputs(const Var<T>& tokens, std::span<const T> t, std::span<const int> labels) const {
    const auto batch = static_cast<std::int64_t>(labels.size());
    if (batch == 0 || t.size() != labels.size()) {
        throw ContractError("DiT: need one time and one label per sample");
    }
    const auto& v = tokens.value();
    if (v.cols() != config_.token_dim || v.rows() != batch * config_.num_tokens) {
        throw ContractError("DiT: tokens " + shape_string(v.shape()) + " do not match " +
                            std::to_string(batch) + " x " + std::to_string(config_.num_tokens) + " x " +
                            std::to_string(config_.token_dim));
    }
    for (int y : labels) {
        if (y < 0 || y > config_.label_count) throw ContractError("DiT: label " + std::to_string(y) + " out of range");
    }
    for (T tv : t) {
        if (!(tv >= T(0) && tv <= T(1))) throw ContractError("DiT: time outside [0, 1]");
    }
    return batch;
}

template <typename T>
Var<T> DiT<T>::time_embedding(std::span<const T> t) const {
    auto feats = Var<T>::constant(fourier_features<T>(t, frequencies_));
    return time_fc2_(ad::silu(time_fc1_(feats)));
}

template <typename T>
void DiT<T>::set_fourier_frequencies(const BasicTensor<T>& f) {
    if (!f.same_shape(frequencies_)) throw DimensionError("DiT: Fourier frequencies " + shape_string(f.shape()) + " do not match the model");
    frequencies_ = f;
}

template <typename T>
Var<T> DiT<T>::conditioning(std::span<const T> t, std::span<const int> labels) const {
    return ad::add(time_embedding(t), ad::embedding(label_table_, std::vector<int>(labels.begin(), labels.end())));
}

template <typename T>
Var<T> DiT<T>::backbone(const Var<T>& tokens, const Var<T>& cond_silu, std::int64_t batch) const {
    const auto flat = ad::reshape(tokens, {tokens.value().rows(), config_.token_dim});
    auto x = ad::add_cyclic(input_proj_(flat), positions_);
    for (const auto& block : blocks_) x = block(x, cond_silu, batch, config_.num_tokens);
    return x;
}

template <typename T>
Var<T> DiT<T>::forward(const Var<T>& tokens, std::span<const T> t, std::span<const int> labels) const {
    return config_.head ? forward_ddt(tokens, t, labels) : forward_dit(tokens, t, labels);
}

template <typename T>
Var<T> DiT<T>::forward_dit(const Var<T>& tokens, std::span<const T> t, std::span<const int> labels) const {
    if (config_.head) throw ConfigError("forward_dit called on a model configured with a head");
    const auto batch = check_inputs(tokens, t, labels);
    const auto cond = ad::silu(conditioning(t, labels));
    auto x = backbone(tokens, cond, batch);
    auto out = final_(x, cond, config_.num_tokens);
    return ad::reshape(out, tokens.shape());
}

template <typename T>
Var<T> DiT<T>::forward_ddt(const Var<T>& tokens, std::span<const T> t, std::span<const int> labels) const {
    if (!config_.head) throw ConfigError("forward_ddt requires a head configuration");
    const auto batch = check_inputs(tokens, t, labels);
    const auto cond = conditioning(t, labels);
    auto z = backbone(tokens, ad::silu(cond), batch);
    if (bridge_) z = (*bridge_)(z);
    // Per-token head conditioning: bridged backbone state plus time/label.
    const auto head_cond = ad::silu(ad::add(z, ad::repeat_rows(head_cond_(cond), config_.num_tokens)));
    const auto flat = ad::reshape(tokens, {tokens.value().rows(), config_.token_dim});
    auto h = head_input_(flat);
    for (const auto& block : head_blocks_) h = block(h, head_cond, batch, 1);
    auto out = head_final_(h, head_cond, 1);
    return ad::reshape(out, tokens.shape());
}

template <typename T>
ParamList<T> DiT<T>::parameters() const {
    ParamList<T> out;
    input_proj_.collect("input_proj", out);
    time_fc1_.collect("time.fc1", out);
    time_fc2_.collect("time.fc2", out);
    out.push_back({"label_table", label_table_});
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect("blocks." + std::to_string(i), out);
    if (!config_.head) {
        final_.collect("final", out);
        return out;
    }
    if (bridge_) bridge_->collect("head.bridge", out);
    head_input_.collect("head.input", out);
    head_cond_.collect("head.cond", out);
    for (std::size_t i = 0; i < head_blocks_.size(); ++i) head_blocks_[i].collect("head.blocks." + std::to_string(i), out);
    head_final_.collect("head.final", out);
    return out;
}

template <typename T>
std::int64_t DiT<T>::num_parameters() const {
    std::int64_t total = 0;
    for (const auto& p : parameters()) total += p.var.value().numel();
    return total;
}

template BasicTensor<float> fourier_features(std::span<const float>, const BasicTensor<float>&);
template BasicTensor<double> fourier_features(std::span<const double>, const BasicTensor<double>&);
template BasicTensor<float> sincos_positions(std::int64_t, std::int64_t);
template BasicTensor<double> sincos_positions(std::int64_t, std::int64_t);
template class DiT<float>;
template class DiT<double>;

}  // namespace rae
