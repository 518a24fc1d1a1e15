#include <doctest.h>

#include <cmath>
#include <vector>

#include "rae/dit.hpp"
#include "rae/theory.hpp"

using namespace rae;

namespace {

ModelConfig tiny(int dim = 16, int depth = 2) {
    ModelConfig c;
    c.dim = dim;
    c.num_heads = 2;
    c.depth = depth;
    c.token_dim = 8;
    c.num_tokens = 4;
    c.label_count = 3;
    c.fourier_features = 8;
    return c;
}

void jitter(const ParamList<float>& params, std::uint64_t seed) {
    Rng rng(seed, 0);
    for (const auto& p : params) {
        auto& v = p.var.mutable_value();
        for (std::int64_t i = 0; i < v.numel(); ++i) v[i] += 0.05f * static_cast<float>(rng.normal());
    }
}

double dist(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

}  // namespace

TEST_CASE("paper presets") {
    const auto s = preset_config("S");
    CHECK((s.dim == 384 && s.num_heads == 6 && s.depth == 12));
    const auto xl = preset_config("XL");
    CHECK((xl.dim == 1152 && xl.num_heads == 16 && xl.depth == 28));
    const auto t = preset_config("T");
    CHECK((t.dim == 2688 && t.num_heads == 21 && t.depth == 40));
    CHECK_THROWS_AS(preset_config("Q"), ConfigError);
    for (const auto& name : preset_names()) CHECK_NOTHROW(preset_config(name).validate());
    CHECK(HeadConfig{}.depth == 2);
    CHECK(HeadConfig{}.width == 2048);
}

TEST_CASE("config validation") {
    auto c = tiny();
    c.num_heads = 3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny();
    c.head = HeadConfig{1, 10, 4};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK(c.null_label() == 3);
}

TEST_CASE("parameter count") {
    const auto a = tiny(16, 2), b = tiny(16, 4);
    CHECK(parameter_count(b) - parameter_count(a) == 2 * block_parameter_count(a));
    auto empty = tiny(16, 0);
    // input 8->16, time 16->16 and 16->16, labels 4x16, final 16->32 and 16->8.
    CHECK(parameter_count(empty) == (8 * 16 + 16) + (16 * 16 + 16) * 2 + 4 * 16 + (16 * 32 + 32) + (16 * 8 + 8));
    const double ratio = double(block_parameter_count(tiny(256))) / double(block_parameter_count(tiny(128)));
    CHECK(ratio == doctest::Approx(4.0).epsilon(0.02));
    for (auto c : {tiny(16, 3), tiny(24, 1)}) CHECK(DiT<float>(c, 1).num_parameters() == parameter_count(c));
    auto h = tiny(16, 1);
    h.head = HeadConfig{2, 24, 2};
    CHECK(DiT<float>(h, 1).num_parameters() == parameter_count(h));
    h.head = HeadConfig{1, 16, 2};
    CHECK(DiT<float>(h, 1).num_parameters() == parameter_count(h));
}

TEST_CASE("fourier time features") {
    const auto w = Tensor::vector({0.3f, -1.2f, 2.5f});
    const std::vector<float> zero{0.0f};
    const auto f0 = fourier_features<float>(zero, w);
    for (int k = 0; k < 3; ++k) {
        CHECK(f0.at(0, k) == 1.0f);
        CHECK(f0.at(0, 3 + k) == 0.0f);
    }
    DiT<double> model(tiny(), 4);
    Rng rng(9, 0);
    for (int i = 0; i < 100; ++i) {
        const std::vector<double> ts{rng.uniform(), rng.uniform()};
        const auto e = model.time_embedding(ts).value();
        const std::vector<double> again{ts[0]};
        const auto e0 = model.time_embedding(again).value();
        double n0 = 0, n1 = 0;
        for (int k = 0; k < e.cols(); ++k) {
            n0 += e.at(0, k) * e.at(0, k);
            n1 += e.at(1, k) * e.at(1, k);
            CHECK(e0.at(0, k) == e.at(0, k));
        }
        CHECK(std::abs(n0 - n1) > 0.0);
    }
}

TEST_CASE("forward contracts") {
    const auto c = tiny();
    DiT<float> model(c, 3);
    Rng rng(5, 0);
    const auto x = Var<float>::constant(randn<float>({2, 4, 8}, rng));
    const std::vector<float> t{0.2f, 0.9f};
    const std::vector<int> y{0, 3};
    const auto out = model.forward(x, t, y);
    CHECK(out.value().numel() == 64);
    for (float v : out.value().storage()) CHECK(v == 0.0f);  // zero-init output projection

    CHECK_THROWS_AS(model.forward(x, t, std::vector<int>{0, 4}), ContractError);
    CHECK_THROWS_AS(model.forward(x, t, std::vector<int>{0, -1}), ContractError);
    CHECK_THROWS_AS(model.forward(x, std::vector<float>{0.1f}, y), ContractError);
    CHECK_THROWS_AS(model.forward(Var<float>::constant(randn<float>({2, 4, 7}, rng)), t, y), ContractError);
    CHECK_THROWS_AS(model.forward_ddt(x, t, y), ConfigError);

    auto h = c;
    h.head = HeadConfig{1, 24, 2};
    DiT<float> ddt(h, 3);
    CHECK(ddt.forward(x, t, y).value().shape() == out.value().shape());
}

TEST_CASE("every parameter receives gradient") {
    for (bool head : {false, true}) {
        auto c = tiny();
        if (head) c.head = HeadConfig{1, 24, 2};
        DiT<float> model(c, 7);
        const auto params = model.parameters();
        jitter(params, 8);
        Rng rng(6, 0);
        const auto x = Var<float>::constant(randn<float>({3, 4, 8}, rng));
        const auto target = Var<float>::constant(randn<float>({12, 8}, rng));
        const std::vector<float> t{0.1f, 0.5f, 0.8f};
        const std::vector<int> y{0, 1, 3};
        const auto out = model.forward(x, t, y);
        backward(ad::mse(ad::reshape(out, {12, 8}), target));
        for (const auto& p : params) {
            double norm = 0.0;
            for (float g : p.var.grad().storage()) norm += double(g) * g;
            INFO(p.name);
            CHECK(norm > 0.0);
        }
    }
}

TEST_CASE("label conditioning changes the output") {
    DiT<float> model(tiny(), 11);
    jitter(model.parameters(), 12);
    Rng rng(13, 0);
    const auto x = Var<float>::constant(randn<float>({1, 4, 8}, rng));
    const std::vector<float> t{0.4f};
    const auto a = model.forward(x, t, std::vector<int>{0}).value();
    const auto b = model.forward(x, t, std::vector<int>{2}).value();
    CHECK(dist(a, b) > 0.0);
    CHECK(dist(a, model.forward(x, t, std::vector<int>{0}).value()) == 0.0);
}

TEST_CASE("wide head rescues a narrow backbone") {
    WidthBoundConfig cfg;
    cfg.seeds = {0};
    Rng trng(cfg.target_seed, 0);
    const auto target = delta_target(1, 64, trng);
    auto narrow = preset_config("desk32");
    narrow.token_dim = 64;
    narrow.num_tokens = 1;
    narrow.label_count = 1;
    const auto plain = overfit_single_target(narrow, target, 0, cfg);
    auto headed = narrow;
    headed.head = HeadConfig{2, 96, 4};
    const auto ddt = overfit_single_target(headed, target, 0, cfg);
    MESSAGE("plain d=32: " << plain.final_loss << ", with head: " << ddt.final_loss);
    CHECK(plain.final_loss > 0.4);
    CHECK(ddt.final_loss < 0.15);
}
