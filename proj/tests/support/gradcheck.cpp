#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <utility>

#include "rae/dit.hpp"
#include "rae/rng.hpp"

namespace rae::testing {

namespace {

template <typename T>
using Leaves = std::vector<Var<T>>;

// Scalar type of a leaf list, for the generic bodies below.
template <typename L>
using scalar_t = typename std::decay_t<decltype(std::declval<L>()[0].value())>::value_type;

// One function at both precisions over leaves of identical values.
struct Problem {
    Leaves<float> leaves32;
    Leaves<double> leaves64;
    std::function<Var<float>()> loss32;
    std::function<Var<double>()> loss64;
};

// max |a - n| / max(max |a|, max |n|) over one leaf: relative error in the
// infinity norm, so entries that cancel to zero do not divide by round-off.
double leaf_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
    double scale = 1e-300, diff = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
        diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    }
    return diff / scale;
}

std::vector<double> numeric_grad(Var<double>& leaf, const std::function<Var<double>()>& loss, double h) {
    auto& v = leaf.mutable_value();
    std::vector<double> out(static_cast<std::size_t>(v.numel()));
    for (std::int64_t i = 0; i < v.numel(); ++i) {
        const double keep = v[i];
        v[i] = keep + h;
        const double up = loss().value().item();
        v[i] = keep - h;
        const double down = loss().value().item();
        v[i] = keep;
        out[static_cast<std::size_t>(i)] = (up - down) / (2.0 * h);
    }
    return out;
}

template <typename T>
std::vector<std::vector<double>> analytic_grads(const Leaves<T>& leaves, const std::function<Var<T>()>& loss) {
    for (const auto& l : leaves) l.zero_grad();
    backward(loss());
    std::vector<std::vector<double>> out;
    for (const auto& l : leaves) {
        const auto& g = l.grad();
        out.emplace_back(g.storage().begin(), g.storage().end());
    }
    return out;
}

GradCheck evaluate(const std::string& name, Problem& p) {
    GradCheck r{name, 0.0, 0.0, 0};
    const auto a32 = analytic_grads(p.leaves32, p.loss32);
    const auto a64 = analytic_grads(p.leaves64, p.loss64);
    for (std::size_t k = 0; k < p.leaves64.size(); ++k) {
        const auto n3 = numeric_grad(p.leaves64[k], p.loss64, 1e-3);
        const auto n5 = numeric_grad(p.leaves64[k], p.loss64, 1e-5);
        r.err32 = std::max(r.err32, leaf_error(a32[k], n3));
        r.err64 = std::max(r.err64, leaf_error(a64[k], n5));
        r.elements += n3.size();
    }
    return r;
}

// Values are drawn in float so both precisions see the same numbers.
Tensor draw(const Shape& shape, Rng& rng, double scale = 1.0, double offset = 0.0) {
    Tensor t(shape);
    for (auto& v : t.storage()) v = static_cast<float>(offset + scale * rng.normal());
    return t;
}

template <typename T>
Var<T> leaf(const Tensor& t) {
    return Var<T>::parameter(t.cast<T>());
}

template <typename T>
Var<T> constant(const Tensor& t) {
    return Var<T>::constant(t.cast<T>());
}

// Contracts an arbitrary output with fixed weights so every entry is checked.
template <typename T>
Var<T> project(const Var<T>& out, const Tensor& weights) {
    return ad::sum(ad::mul(out, constant<T>(weights.reshaped(out.shape()))));
}

// Builds a Problem from leaf values and a generic body, contracting the output
// with weights drawn from `rng`.
template <typename F>
Problem make_problem(const std::vector<Tensor>& values, F body, Rng& rng) {
    Problem p;
    for (const auto& v : values) {
        p.leaves32.push_back(leaf<float>(v));
        p.leaves64.push_back(leaf<double>(v));
    }
    const auto probe32 = body(p.leaves32);
    const Tensor w = draw({probe32.value().numel()}, rng);
    auto l32 = p.leaves32;
    auto l64 = p.leaves64;
    p.loss32 = [body, l32, w]() { return project<float>(body(l32), w); };
    p.loss64 = [body, l64, w]() { return project<double>(body(l64), w); };
    return p;
}

}  // namespace

std::vector<GradCheck> primitive_gradient_checks() {
    Rng rng(2718, 0);
    std::vector<GradCheck> out;
    auto run = [&](const std::string& name, const std::vector<Tensor>& values, auto body) {
        auto p = make_problem(values, body, rng);
        out.push_back(evaluate(name, p));
    };

    run("matmul", {draw({3, 4}, rng), draw({4, 5}, rng)}, [](const auto& v) { return ad::matmul(v[0], v[1]); });
    run("linear", {draw({3, 4}, rng), draw({4, 2}, rng), draw({2}, rng)},
        [](const auto& v) { return ad::linear(v[0], v[1], v[2]); });
    run("linear without bias", {draw({3, 4}, rng), draw({4, 2}, rng)},
        [](const auto& v) { return ad::linear(v[0], v[1], std::decay_t<decltype(v[0])>{}); });
    run("add", {draw({2, 3}, rng), draw({2, 3}, rng)}, [](const auto& v) { return ad::add(v[0], v[1]); });
    run("sub", {draw({2, 3}, rng), draw({2, 3}, rng)}, [](const auto& v) { return ad::sub(v[0], v[1]); });
    run("mul", {draw({2, 3}, rng), draw({2, 3}, rng)}, [](const auto& v) { return ad::mul(v[0], v[1]); });
    run("scale", {draw({2, 3}, rng)}, [](const auto& v) { return ad::scale(v[0], scalar_t<decltype(v)>(0.37)); });
    run("add_cyclic", {draw({6, 3}, rng), draw({3, 3}, rng)}, [](const auto& v) { return ad::add_cyclic(v[0], v[1]); });
    run("repeat_rows", {draw({2, 3}, rng)}, [](const auto& v) { return ad::repeat_rows(v[0], 3); });
    run("modulate", {draw({6, 4}, rng), draw({2, 4}, rng), draw({2, 4}, rng)},
        [](const auto& v) { return ad::modulate(v[0], v[1], v[2], 3); });
    run("gated_add", {draw({6, 4}, rng), draw({2, 4}, rng), draw({6, 4}, rng)},
        [](const auto& v) { return ad::gated_add(v[0], v[1], v[2], 3); });
    run("layer_norm", {draw({3, 5}, rng, 2.0, 0.5)}, [](const auto& v) { return ad::layer_norm(v[0], scalar_t<decltype(v)>(1e-6)); });
    run("gelu", {draw({3, 4}, rng, 2.0)}, [](const auto& v) { return ad::gelu(v[0]); });
    run("silu", {draw({3, 4}, rng, 2.0)}, [](const auto& v) { return ad::silu(v[0]); });
    run("tanh", {draw({3, 4}, rng)}, [](const auto& v) { return ad::tanh(v[0]); });
    run("attention", {draw({2 * 3, 3 * 4}, rng)}, [](const auto& v) { return ad::attention(v[0], 2, 2); });
    run("concat_cols", {draw({3, 2}, rng), draw({3, 4}, rng)}, [](const auto& v) { return ad::concat_cols(v[0], v[1]); });
    run("slice_cols", {draw({3, 5}, rng)}, [](const auto& v) { return ad::slice_cols(v[0], 1, 3); });
    run("prepend_row", {draw({4, 3}, rng), draw({1, 3}, rng)},
        [](const auto& v) { return ad::prepend_row(v[0], v[1], 2); });
    run("slice_rows_grouped", {draw({6, 2}, rng)}, [](const auto& v) { return ad::slice_rows_grouped(v[0], 3, 1, 2); });
    run("embedding", {draw({4, 3}, rng)}, [](const auto& v) { return ad::embedding(v[0], {2, 0, 2, 3}); });
    run("reshape", {draw({2, 6}, rng)}, [](const auto& v) { return ad::reshape(v[0], {3, 4}); });
    run("sum", {draw({2, 3}, rng)}, [](const auto& v) { return ad::sum(v[0]); });
    run("mean", {draw({2, 3}, rng)}, [](const auto& v) { return ad::mean(v[0]); });
    {
        const Tensor target = draw({2, 3}, rng);
        run("mse", {draw({2, 3}, rng)}, [target](const auto& v) {
            return ad::mse(v[0], constant<scalar_t<decltype(v)>>(target));
        });
    }
    {
        // Keep |pred - target| away from the kink.
        const Tensor pred = draw({2, 3}, rng);
        Tensor target = pred;
        for (std::int64_t i = 0; i < target.numel(); ++i) target[i] += (i % 2 ? 0.5f : -0.5f);
        run("l1", {pred}, [target](const auto& v) {
            return ad::l1(v[0], constant<scalar_t<decltype(v)>>(target));
        });
    }
    return out;
}

namespace {

// Shifts every parameter by small noise so zero-initialized projections
// pass gradient to the layers behind them.
void jitter(const ParamList<float>& params, Rng& rng) {
    for (const auto& p : params)
        for (auto& v : p.var.mutable_value().storage()) v += static_cast<float>(0.05 * rng.normal());
}

template <typename A, typename B>
void copy_values(const ParamList<A>& from, const ParamList<B>& to) {
    for (std::size_t i = 0; i < from.size(); ++i) to[i].var.mutable_value() = from[i].var.value().template cast<B>();
}

template <typename T>
Leaves<T> vars_of(const ParamList<T>& params) {
    Leaves<T> out;
    for (const auto& p : params) out.push_back(p.var);
    return out;
}

GradCheck dit_check(const std::string& name, const ModelConfig& cfg, Rng& rng) {
    DiT<float> m32(cfg, 5);
    DiT<double> m64(cfg, 5);
    const auto p32 = m32.parameters();
    const auto p64 = m64.parameters();
    jitter(p32, rng);
    copy_values(p32, p64);
    const std::int64_t batch = 2;
    const Tensor x = draw({batch, cfg.num_tokens, cfg.token_dim}, rng);
    const Tensor target = draw({batch, cfg.num_tokens, cfg.token_dim}, rng);
    const std::vector<float> t32{0.3f, 0.8f};
    const std::vector<double> t64{0.3f, 0.8f};
    const std::vector<int> labels{1, cfg.label_count};

    Problem p;
    p.leaves32 = vars_of(p32);
    p.leaves64 = vars_of(p64);
    p.loss32 = [&m32, x, target, t32, labels]() {
        return ad::mse(m32.forward(constant<float>(x), t32, labels), constant<float>(target));
    };
    p.loss64 = [&m64, x, target, t64, labels]() {
        return ad::mse(m64.forward(constant<double>(x), t64, labels), constant<double>(target));
    };
    return evaluate(name, p);
}

// Decoder-style trunk: input map, positional table, class token, two plain
// blocks, normalization, token slice and an L1 reconstruction loss.
template <typename T>
struct Trunk {
    nn::Linear<T> input;
    Var<T> pos;
    Var<T> cls;
    std::vector<nn::Block<T>> blocks;
    nn::Linear<T> output;

    Trunk(Rng& rng, const Tensor& pos_values, const Tensor& cls_values)
        : input(6, 8, rng), pos(Var<T>::parameter(pos_values.cast<T>())), cls(Var<T>::parameter(cls_values.cast<T>())),
          output(8, 5, rng) {
        for (int i = 0; i < 2; ++i) blocks.emplace_back(8, 2, 2.0, rng);
    }

    ParamList<T> parameters() const {
        ParamList<T> out;
        input.collect("input", out);
        out.push_back({"pos", pos});
        out.push_back({"cls", cls});
        for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect("block" + std::to_string(i), out);
        output.collect("output", out);
        return out;
    }

    Var<T> operator()(const Var<T>& tokens, std::int64_t batch, std::int64_t n) const {
        auto h = ad::add_cyclic(input(tokens), pos);
        h = ad::prepend_row(h, cls, n);
        for (const auto& b : blocks) h = b(h, batch);
        h = ad::slice_rows_grouped(ad::layer_norm(h, static_cast<T>(1e-6)), n + 1, 1, n);
        return output(h);
    }
};

}  // namespace

std::vector<GradCheck> network_gradient_checks() {
    Rng rng(3141, 0);
    std::vector<GradCheck> out;

    ModelConfig cfg;
    cfg.name = "gradcheck";
    cfg.dim = 16;
    cfg.num_heads = 2;
    cfg.depth = 2;
    cfg.token_dim = 8;
    cfg.num_tokens = 4;
    cfg.label_count = 3;
    cfg.mlp_ratio = 2.0;
    cfg.fourier_features = 8;
    out.push_back(dit_check("dit", cfg, rng));

    ModelConfig head = cfg;
    head.depth = 1;
    head.head = HeadConfig{1, 24, 2};
    out.push_back(dit_check("dit with head", head, rng));

    {
        const std::int64_t batch = 2, n = 4;
        const Tensor pos = draw({n, 8}, rng, 0.1), cls = draw({1, 8}, rng, 0.1);
        Rng init32(77, 0), init64(77, 0);
        Trunk<float> t32(init32, pos, cls);
        Trunk<double> t64(init64, pos, cls);
        const auto p32 = t32.parameters();
        const auto p64 = t64.parameters();
        copy_values(p32, p64);
        const Tensor tokens = draw({batch * n, 6}, rng);
        Tensor target = draw({batch * n, 5}, rng, 0.1);
        for (auto& v : target.storage()) v += rng.uniform() < 0.5 ? 3.0f : -3.0f;
        Problem p;
        p.leaves32 = vars_of(p32);
        p.leaves64 = vars_of(p64);
        p.loss32 = [&t32, tokens, target, batch, n]() {
            return ad::l1(t32(constant<float>(tokens), batch, n), constant<float>(target));
        };
        p.loss64 = [&t64, tokens, target, batch, n]() {
            return ad::l1(t64(constant<double>(tokens), batch, n), constant<double>(target));
        };
        out.push_back(evaluate("decoder trunk", p));
    }
    return out;
}

}  // namespace rae::testing
