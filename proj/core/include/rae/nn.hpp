#pragma once

#include <string>

#include "rae/autodiff.hpp"
#include "rae/optim.hpp"
#include "rae/rng.hpp"

namespace rae::nn {

inline constexpr double kNormEps = 1e-6;

template <typename T>
struct Linear {
    Var<T> weight;  // [in x out]
    Var<T> bias;    // [out], may be undefined

    Linear() = default;
    // stddev < 0 selects 1/sqrt(in).
    Linear(std::int64_t in, std::int64_t out, Rng& rng, double stddev = -1.0, bool with_bias = true);

    Var<T> operator()(const Var<T>& x) const { return ad::linear(x, weight, bias); }
    std::int64_t in_features() const { return weight.value().dim(0); }
    std::int64_t out_features() const { return weight.value().dim(1); }
    void collect(const std::string& prefix, ParamList<T>& out) const;
};

template <typename T>
struct Mlp {
    Linear<T> fc1;
    Linear<T> fc2;

    Mlp() = default;
    Mlp(std::int64_t dim, std::int64_t hidden, Rng& rng);
    Var<T> operator()(const Var<T>& x) const { return fc2(ad::gelu(fc1(x))); }
    void collect(const std::string& prefix, ParamList<T>& out) const;
};

template <typename T>
struct SelfAttention {
    Linear<T> qkv;
    Linear<T> proj;
    std::int64_t heads = 1;

    SelfAttention() = default;
    SelfAttention(std::int64_t dim, std::int64_t heads, Rng& rng);
    Var<T> operator()(const Var<T>& x, std::int64_t batch) const {
        return proj(ad::attention(qkv(x), batch, heads));
    }
    void collect(const std::string& prefix, ParamList<T>& out) const;
};

// Pre-norm transformer block with adaptive layer-norm modulation. The
// conditioning rows are applied to `group` consecutive token rows each, so
// group = tokens gives per-sample conditioning and group = 1 per-token.
template <typename T>
struct AdaLnBlock {
    Linear<T> modulation;  // cond -> 6*dim (shift/scale/gate for attn and mlp)
    SelfAttention<T> attn;
    Mlp<T> mlp;
    std::int64_t dim = 0;

    AdaLnBlock() = default;
    AdaLnBlock(std::int64_t cond_dim, std::int64_t dim, std::int64_t heads, double mlp_ratio, Rng& rng);
    // `cond` is already passed through SiLU.
    Var<T> operator()(const Var<T>& x, const Var<T>& cond, std::int64_t batch, std::int64_t group) const;
    void collect(const std::string& prefix, ParamList<T>& out) const;
};

// Plain pre-norm transformer block (no conditioning).
template <typename T>
struct Block {
    SelfAttention<T> attn;
    Mlp<T> mlp;

    Block() = default;
    Block(std::int64_t dim, std::int64_t heads, double mlp_ratio, Rng& rng);
    Var<T> operator()(const Var<T>& x, std::int64_t batch) const;
    void collect(const std::string& prefix, ParamList<T>& out) const;
};

// Final adaptive norm + linear projection; the projection starts at zero.
template <typename T>
struct FinalLayer {
    Linear<T> modulation;  // cond -> 2*dim
    Linear<T> out;

    FinalLayer() = default;
    FinalLayer(std::int64_t cond_dim, std::int64_t dim, std::int64_t out_dim, Rng& rng);
    Var<T> operator()(const Var<T>& x, const Var<T>& cond, std::int64_t group) const;
    void collect(const std::string& prefix, ParamList<T>& out) const;
};

}  // namespace rae::nn
