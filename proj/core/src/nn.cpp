#include "rae/nn.hpp"

#include <cmath>

namespace rae::nn {

template <typename T>
Linear<T>::Linear(std::int64_t in, std::int64_t out, Rng& rng, double stddev, bool with_bias) {
    if (stddev < 0.0) stddev = 1.0 / std::sqrt(static_cast<double>(in));
    weight = Var<T>::parameter(randn<T>({in, out}, rng, stddev));
    if (with_bias) bias = Var<T>::parameter(BasicTensor<T>::zeros({out}));
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".weight", weight});
    if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

template <typename T>
Mlp<T>::Mlp(std::int64_t dim, std::int64_t hidden, Rng& rng) : fc1(dim, hidden, rng), fc2(hidden, dim, rng) {}

template <typename T>
void Mlp<T>::collect(const std::string& prefix, ParamList<T>& out) const {
    fc1.collect(prefix + ".fc1", out);
    fc2.collect(prefix + ".fc2", out);
}

template <typename T>
SelfAttention<T>::SelfAttention(std::int64_t dim, std::int64_t heads_, Rng& rng)
    : qkv(dim, 3 * dim, rng), proj(dim, dim, rng), heads(heads_) {
    if (heads <= 0 || dim % heads != 0) {
        throw ConfigError("attention width " + std::to_string(dim) + " not divisible by " + std::to_string(heads) +
                          " heads");
    }
}

template <typename T>
void SelfAttention<T>::collect(const std::string& prefix, ParamList<T>& out) const {
    qkv.collect(prefix + ".qkv", out);
    proj.collect(prefix + ".proj", out);
}

template <typename T>
AdaLnBlock<T>::AdaLnBlock(std::int64_t cond_dim, std::int64_t dim_, std::int64_t heads, double mlp_ratio, Rng& rng)
    : modulation(cond_dim, 6 * dim_, rng, 0.02),
      attn(dim_, heads, rng),
      mlp(dim_, static_cast<std::int64_t>(std::lround(mlp_ratio * static_cast<double>(dim_))), rng),
      dim(dim_) {}

template <typename T>
Var<T> AdaLnBlock<T>::operator()(const Var<T>& x, const Var<T>& cond, std::int64_t batch, std::int64_t group) const {
    const auto mod = modulation(cond);
    auto chunk = [&](int i) { return ad::slice_cols(mod, i * dim, dim); };
    const T eps = static_cast<T>(kNormEps);
    auto h = ad::modulate(ad::layer_norm(x, eps), chunk(0), chunk(1), group);
    auto y = ad::gated_add(x, chunk(2), attn(h, batch), group);
    h = ad::modulate(ad::layer_norm(y, eps), chunk(3), chunk(4), group);
    return ad::gated_add(y, chunk(5), mlp(h), group);
}

template <typename T>
void AdaLnBlock<T>::collect(const std::string& prefix, ParamList<T>& out) const {
    modulation.collect(prefix + ".adaLN", out);
    attn.collect(prefix + ".attn", out);
    mlp.collect(prefix + ".mlp", out);
}

template <typename T>
Block<T>::Block(std::int64_t dim, std::int64_t heads, double mlp_ratio, Rng& rng)
    : attn(dim, heads, rng), mlp(dim, static_cast<std::int64_t>(std::lround(mlp_ratio * static_cast<double>(dim))), rng) {}

template <typename T>
Var<T> Block<T>::operator()(const Var<T>& x, std::int64_t batch) const {
    const T eps = static_cast<T>(kNormEps);
    auto y = ad::add(x, attn(ad::layer_norm(x, eps), batch));
    return ad::add(y, mlp(ad::layer_norm(y, eps)));
}

template <typename T>
void Block<T>::collect(const std::string& prefix, ParamList<T>& out) const {
    attn.collect(prefix + ".attn", out);
    mlp.collect(prefix + ".mlp", out);
}

template <typename T>
FinalLayer<T>::FinalLayer(std::int64_t cond_dim, std::int64_t dim, std::int64_t out_dim, Rng& rng)
    : modulation(cond_dim, 2 * dim, rng, 0.02), out(dim, out_dim, rng, 0.0) {}

template <typename T>
Var<T> FinalLayer<T>::operator()(const Var<T>& x, const Var<T>& cond, std::int64_t group) const {
    const auto dim = x.value().cols();
    const auto mod = modulation(cond);
    auto h = ad::modulate(ad::layer_norm(x, static_cast<T>(kNormEps)), ad::slice_cols(mod, 0, dim),
                          ad::slice_cols(mod, dim, dim), group);
    return out(h);
}

template <typename T>
void FinalLayer<T>::collect(const std::string& prefix, ParamList<T>& out_params) const {
    modulation.collect(prefix + ".adaLN", out_params);
    out.collect(prefix + ".linear", out_params);
}

template struct Linear<float>;
template struct Linear<double>;
template struct Mlp<float>;
template struct Mlp<double>;
template struct SelfAttention<float>;
template struct SelfAttention<double>;
template struct AdaLnBlock<float>;
template struct AdaLnBlock<double>;
template struct Block<float>;
template struct Block<double>;
template struct FinalLayer<float>;
template struct FinalLayer<double>;

}  // namespace rae::nn
