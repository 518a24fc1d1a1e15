#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "rae/flow.hpp"

using namespace rae;

TEST_CASE("interpolant and velocity target") {
    const Tensor x = Tensor::vector({0.5f, -1.0f}), eps = Tensor::vector({2.0f, 3.0f});
    CHECK(interpolate(x, eps, 0.0) == x);
    CHECK(interpolate(x, eps, 1.0) == eps);
    CHECK(interpolate(Tensor::vector({0}), Tensor::vector({2}), 0.5) == Tensor::vector({1}));
    CHECK_THROWS_AS(interpolate(x, eps, 1.5), DomainError);
    CHECK_THROWS_AS(interpolate(x, eps, -0.1), DomainError);

    CHECK(velocity_target(x, x) == Tensor::vector({0, 0}));
    CHECK(velocity_target(Tensor::vector({1, 1}), Tensor::vector({3, 0})) == Tensor::vector({2, -1}));
    const Tensor v = velocity_target(x, eps);
    for (std::int64_t i = 0; i < 2; ++i) CHECK(v[i] + x[i] == eps[i]);

    const auto s = make_flow_sample(x, eps, 0.25f);
    CHECK(s.target == v);
    CHECK(s.x_t == interpolate(x, eps, 0.25));
}

TEST_CASE("effective dimension") {
    CHECK(effective_dim(256, 768) == 196608);
    CHECK(effective_dim(1, 1) == 1);
    CHECK(effective_dim(64, 4096) == 262144);
    CHECK_THROWS_AS(effective_dim(0, 4), ConfigError);
    CHECK_THROWS_AS(effective_dim(4, -1), ConfigError);
    CHECK(ScheduleShift::for_latents(256, 768).alpha() == doctest::Approx(std::sqrt(48.0)));
}

TEST_CASE("timestep shift") {
    const ScheduleShift same{4096, 4096};
    CHECK(same.alpha() == 1.0);
    for (double t : {0.0, 0.1, 0.37, 0.5, 0.99, 1.0}) CHECK(shift_timestep(t, same) == t);
    for (double a : {0.25, 0.5, 2.0, 6.93}) {
        CHECK(shift_timestep(0.0, a) == 0.0);
        CHECK(shift_timestep(1.0, a) == 1.0);
    }
    CHECK(std::abs(shift_timestep(0.5, 2.0) - 2.0 / 3.0) < 1e-4);
    for (double a : {0.3, 2.0, 7.0})
        for (int i = 0; i <= 100; ++i) {
            const double t = i / 100.0;
            CHECK(std::abs(shift_timestep(shift_timestep(t, a), 1.0 / a) - t) < 1e-6);
            if (i > 0) CHECK(shift_timestep(t, a) > shift_timestep((i - 1) / 100.0, a));
        }
    CHECK_THROWS_AS(shift_timestep(1.2, 2.0), DomainError);
}

TEST_CASE("training time distribution") {
    const int n = 100000;
    Rng rng(21, 0);
    std::vector<double> plain(n);
    for (auto& t : plain) t = sample_training_time(rng, std::nullopt);
    double mean = 0.0;
    for (double t : plain) mean += t / n;
    CHECK(std::abs(mean - 0.5) < 0.01);

    double shifted = 0.0;
    for (int i = 0; i < n; ++i) shifted += sample_training_time(rng, ScheduleShift{4 * 4096, 4096}) / n;
    CHECK(shifted > 0.5);

    // Kolmogorov-Smirnov against U[0,1] at the 1% level.
    std::vector<double> same(n);
    for (auto& t : same) t = sample_training_time(rng, ScheduleShift{4096, 4096});
    std::sort(same.begin(), same.end());
    double d = 0.0;
    for (int i = 0; i < n; ++i) d = std::max({d, std::abs((i + 1.0) / n - same[i]), std::abs(same[i] - double(i) / n)});
    CHECK(d < 1.628 / std::sqrt(double(n)));
}

TEST_CASE("closed-form gaussian velocity") {
    Rng rng(2, 0);
    const auto x = randn<double>({5}, rng);
    const auto mid = analytic_gaussian_velocity(x, 0.5);
    for (double v : mid.storage()) CHECK(v == 0.0);
    CHECK(analytic_gaussian_velocity(x, 1.0) == x);
    CHECK(analytic_gaussian_velocity(Tensor64::vector({1.0}), 0.25)[0] == doctest::Approx(-0.8).epsilon(1e-12));

    // Regression of eps - x on x_t near 1 at t = 0.25.
    double acc = 0.0;
    int hits = 0;
    for (int i = 0; i < 1000000; ++i) {
        const double x0 = rng.normal(), e = rng.normal();
        const double xt = 0.75 * x0 + 0.25 * e;
        if (std::abs(xt - 1.0) < 0.05) {
            acc += e - x0;
            ++hits;
        }
    }
    CHECK(hits > 1000);
    CHECK(std::abs(acc / hits - (-0.8)) < 0.05);
}

TEST_CASE("flow matching loss") {
    const VelocityModel<double> zero = [](const Var<double>& x, std::span<const double>, std::span<const int>) {
        return Var<double>::constant(Tensor64::zeros(x.shape()));
    };

    SUBCASE("a model equal to the target scores zero") {
        Rng rng(1, 0);
        const auto clean = randn<double>({8, 3, 4}, rng);
        const auto batch = make_flow_batch(clean, rng, std::nullopt);
        const auto target = batch.target;
        const VelocityModel<double> oracle = [target](const Var<double>&, std::span<const double>, std::span<const int>) {
            return Var<double>::constant(target);
        };
        CHECK(flow_matching_loss(oracle, batch, {}).value().item() == 0.0);
    }
    SUBCASE("zero model on delta data") {
        const std::int64_t n = 16, count = 20000;
        Rng rng(3, 0);
        const auto x0 = randn<double>({n}, rng);
        Tensor64 clean({count, 1, n});
        for (std::int64_t i = 0; i < count; ++i) std::copy_n(x0.data(), n, clean.data() + i * n);
        const auto batch = make_flow_batch(clean, rng, std::nullopt);
        double norm2 = 0.0;
        for (double v : x0.storage()) norm2 += v * v;
        const double expected = (norm2 + n) / n;
        CHECK(flow_matching_loss(zero, batch, {}).value().item() == doctest::Approx(expected).epsilon(0.01));
    }
    SUBCASE("permuting the batch keeps the loss") {
        Rng rng(4, 0);
        const auto clean = randn<double>({6, 2, 3}, rng);
        auto batch = make_flow_batch(clean, rng, std::nullopt);
        const double before = flow_matching_loss(zero, batch, {}).value().item();
        auto swap_rows = [](Tensor64& t, std::int64_t a, std::int64_t b) {
            const auto per = t.numel() / t.dim(0);
            std::swap_ranges(t.data() + a * per, t.data() + (a + 1) * per, t.data() + b * per);
        };
        swap_rows(batch.x_t, 0, 5);
        swap_rows(batch.target, 0, 5);
        std::swap(batch.t[0], batch.t[5]);
        CHECK(flow_matching_loss(zero, batch, {}).value().item() == doctest::Approx(before).epsilon(1e-14));
    }
    SUBCASE("closed-form field on gaussian data reaches pi / 2") {
        // Per-dim E[Var(eps - x | x_t)] = integral of 1 / (2t^2 - 2t + 1) over [0, 1].
        Rng rng(5, 0);
        const auto clean = randn<double>({200000, 1, 4}, rng);
        const auto batch = make_flow_batch(clean, rng, std::nullopt);
        const VelocityModel<double> field = [](const Var<double>& x, std::span<const double> t, std::span<const int>) {
            Tensor64 out(x.shape());
            const auto per = out.numel() / out.dim(0);
            for (std::int64_t b = 0; b < out.dim(0); ++b) {
                const double c = (2 * t[b] - 1) / ((1 - t[b]) * (1 - t[b]) + t[b] * t[b]);
                for (std::int64_t j = 0; j < per; ++j) out[b * per + j] = c * x.value()[b * per + j];
            }
            return Var<double>::constant(out);
        };
        const double loss = flow_matching_loss(field, batch, {}).value().item();
        CHECK(std::abs(loss / (std::numbers::pi / 2) - 1.0) < 0.02);
    }
}
