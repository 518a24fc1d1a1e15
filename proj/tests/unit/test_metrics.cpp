#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "rae/metrics.hpp"

using namespace rae;

namespace {

GaussianMoments diag(std::vector<double> mean, const std::vector<double>& var) {
    GaussianMoments m;
    const auto k = static_cast<std::int64_t>(var.size());
    m.mean = std::move(mean);
    m.cov = Tensor64::zeros({k, k});
    for (std::int64_t i = 0; i < k; ++i) m.cov.at(i, i) = var[static_cast<std::size_t>(i)];
    m.count = 100;
    return m;
}

GaussianMoments random_moments(std::int64_t k, Rng& rng) {
    return fit_moments(randn<double>({200, k}, rng));
}

}  // namespace

TEST_CASE("feature map") {
    const FeatureMap f(48, 64, 91);
    Rng rng(1, 0);
    const auto img = randn<float>({2, 3, 4, 4}, rng);
    CHECK(f(img) == f(img));
    const auto zeros = f(Tensor::zeros({1, 48})), ones = f(Tensor::ones({1, 48}));
    double d = 0.0;
    for (std::int64_t i = 0; i < 64; ++i) d += (zeros[i] - ones[i]) * (zeros[i] - ones[i]);
    CHECK(d > 0.0);
    const auto feats = f(randn<float>({1000, 48}, rng));
    const auto m = fit_moments(feats);
    for (std::int64_t i = 0; i < 64; ++i) CHECK(m.cov.at(i, i) > 0.0);
}

TEST_CASE("moment fitting") {
    Rng rng(2, 0);
    const auto same = Tensor64::matrix(2, 3, {1, 2, 3, 1, 2, 3});
    const auto flat = fit_moments(same);
    for (double v : flat.cov.storage()) CHECK(v == 0.0);
    CHECK_THROWS_AS(fit_moments(Tensor64::matrix(1, 2, {1, 2})), DataError);

    const auto m = fit_moments(randn<double>({100000, 4}, rng));
    for (double v : m.mean) CHECK(std::abs(v) < 0.02);
    for (std::int64_t i = 0; i < 4; ++i)
        for (std::int64_t j = 0; j < 4; ++j) CHECK(std::abs(m.cov.at(i, j) - (i == j ? 1.0 : 0.0)) < 0.03);

    auto rows = randn<double>({10, 3}, rng);
    auto flipped = rows;
    for (std::int64_t i = 0; i < 10; ++i)
        for (std::int64_t j = 0; j < 3; ++j) flipped.at(i, j) = rows.at(9 - i, j);
    const auto a = fit_moments(rows), b = fit_moments(flipped);
    for (std::size_t j = 0; j < 3; ++j) CHECK(a.mean[j] == doctest::Approx(b.mean[j]).epsilon(1e-14));
    for (std::int64_t i = 0; i < 9; ++i) CHECK(a.cov[i] == doctest::Approx(b.cov[i]).epsilon(1e-12));
}

TEST_CASE("frechet distance unit cases") {
    Rng rng(3, 0);
    const auto a = random_moments(6, rng), b = random_moments(6, rng);
    CHECK(std::abs(frechet_distance(a, a)) < 1e-10);
    CHECK(frechet_distance(diag({0}, {1}), diag({1}, {1})) == doctest::Approx(1.0).epsilon(1e-12));

    const std::vector<double> mu1{0.5, -1.0, 2.0}, mu2{0.0, 1.0, 2.5}, l{1.0, 4.0, 0.25}, v{2.0, 1.0, 0.5};
    double closed = 0.0;
    for (std::size_t i = 0; i < 3; ++i)
        closed += (std::sqrt(l[i]) - std::sqrt(v[i])) * (std::sqrt(l[i]) - std::sqrt(v[i])) + (mu1[i] - mu2[i]) * (mu1[i] - mu2[i]);
    CHECK(std::abs(frechet_distance(diag(mu1, l), diag(mu2, v)) - closed) < 1e-8);

    CHECK(std::abs(frechet_distance(a, b) - frechet_distance(b, a)) < 1e-8);
    CHECK(frechet_distance(a, b) > 0.0);

    double last = -1.0;
    for (double shift : {0.0, 0.5, 1.0, 2.0, 4.0}) {
        const double d = frechet_distance(diag({0}, {1.5}), diag({shift}, {0.7}));
        CHECK(d > last);
        last = d;
    }
    CHECK_THROWS_AS(frechet_distance(diag({0}, {-1}), diag({0}, {1})), DataError);
    CHECK_THROWS(frechet_distance(diag({0}, {1}), diag({0, 0}, {1, 1})));
}

TEST_CASE("label plans") {
    const auto small = balanced_labels(10, 5);
    CHECK(small.labels.size() == 50);
    for (auto c : label_histogram(small, 10)) CHECK(c == 5);
    CHECK(small.labels.front() == 0);
    CHECK(small.labels.back() == 9);

    const auto big = balanced_labels(1000, 50);
    CHECK(big.labels.size() == 50000);
    const auto h = label_histogram(big, 1000);
    CHECK(*std::max_element(h.begin(), h.end()) - *std::min_element(h.begin(), h.end()) == 0);

    Rng rng(4, 0);
    const auto u = uniform_labels(10, 100000, rng);
    CHECK(u.strategy == LabelStrategy::uniform);
    const double sd = std::sqrt(100000 * 0.1 * 0.9);
    for (auto c : label_histogram(u, 10)) CHECK(std::abs(double(c) - 10000.0) < 3 * sd);
    const auto one = uniform_labels(10, 1, rng);
    REQUIRE(one.labels.size() == 1);
    CHECK((one.labels[0] >= 0 && one.labels[0] < 10));
    Rng r1(5, 0), r2(5, 0);
    CHECK(uniform_labels(7, 300, r1).labels == uniform_labels(7, 300, r2).labels);
}
