#include "rae/metrics.hpp"

#include <cmath>

#include "rae/theory.hpp"

namespace rae {

FeatureMap::FeatureMap(std::int64_t input_dim, std::int64_t k, std::uint64_t seed, std::int64_t hidden) {
    if (input_dim <= 0 || k <= 0 || hidden <= 0) throw ConfigError("feature map dimensions must be positive");
    Rng rng(seed, 0);
    w1_ = randn<float>({input_dim, hidden}, rng, 1.0 / std::sqrt(static_cast<double>(input_dim)));
    b1_ = randn<float>({hidden}, rng, 0.5);
    w2_ = randn<float>({hidden, k}, rng, 1.0 / std::sqrt(static_cast<double>(hidden)));
}

Tensor64 FeatureMap::operator()(const Tensor& images) const {
    const auto b = images.rank() >= 2 ? images.dim(0) : 1;
    if (images.numel() != b * input_dim()) throw DimensionError("feature map: image size does not match input_dim");
    Tensor flat = images.reshaped({b, input_dim()});
    for (auto& v : flat.storage()) v -= 0.5f;
    Tensor h = matmul(flat, w1_);
    for (std::int64_t r = 0; r < b; ++r)
        for (std::int64_t c = 0; c < h.cols(); ++c) h.at(r, c) = std::tanh(h.at(r, c) + b1_[c]);
    return matmul(h, w2_).cast<double>();
}

GaussianMoments fit_moments(const Tensor64& features) {
    if (features.rank() != 2) throw DimensionError("fit_moments: expected [M x k]");
    if (features.dim(0) < 2) throw DataError("fit_moments: need at least two rows");
    GaussianMoments g;
    g.count = features.dim(0);
    const auto k = features.dim(1);
    g.mean.assign(static_cast<std::size_t>(k), 0.0);
    for (std::int64_t r = 0; r < g.count; ++r)
        for (std::int64_t c = 0; c < k; ++c) g.mean[c] += features.at(r, c);
    for (auto& m : g.mean) m /= static_cast<double>(g.count);
    g.cov = covariance(features);
    return g;
}

namespace {

// Eigen-decomposition of a symmetric PSD matrix with tiny negatives clamped.
SymmetricEigen psd_eigen(const Tensor64& m) {
    auto eig = symmetric_eigen(m);
    double scale = 1.0;
    for (double v : eig.values) scale = std::max(scale, std::abs(v));
    for (auto& v : eig.values) {
        if (v < -1e-8 * scale) throw DataError("frechet_distance: covariance is not positive semidefinite");
        v = std::max(v, 0.0);
    }
    return eig;
}

}  // namespace

double frechet_distance(const GaussianMoments& a, const GaussianMoments& b) {
    const auto k = static_cast<std::int64_t>(a.mean.size());
    if (static_cast<std::int64_t>(b.mean.size()) != k || a.cov.dim(0) != k || b.cov.dim(0) != k) {
        throw DimensionError("frechet_distance: moment dimensions differ");
    }
    double mean_term = 0.0;
    for (std::int64_t i = 0; i < k; ++i) mean_term += (a.mean[i] - b.mean[i]) * (a.mean[i] - b.mean[i]);

    const auto ea = psd_eigen(a.cov);
    psd_eigen(b.cov);
    Tensor64 root_a = Tensor64::zeros({k, k});
    for (std::int64_t r = 0; r < k; ++r)
        for (std::int64_t c = 0; c < k; ++c) {
            double acc = 0.0;
            for (std::int64_t j = 0; j < k; ++j) acc += ea.vectors.at(r, j) * std::sqrt(ea.values[j]) * ea.vectors.at(c, j);
            root_a.at(r, c) = acc;
        }
    const Tensor64 inner = matmul(matmul(root_a, b.cov), root_a);
    double root_trace = 0.0;
    for (double v : psd_eigen(inner).values) root_trace += std::sqrt(v);

    double trace = 0.0;
    for (std::int64_t i = 0; i < k; ++i) trace += a.cov.at(i, i) + b.cov.at(i, i);
    return std::max(0.0, mean_term + trace - 2.0 * root_trace);
}

LabelPlan balanced_labels(int num_classes, int per_class) {
    if (num_classes <= 0 || per_class <= 0) throw ConfigError("balanced_labels: counts must be positive");
    LabelPlan plan;
    plan.strategy = LabelStrategy::balanced;
    plan.labels.reserve(static_cast<std::size_t>(num_classes) * per_class);
    for (int c = 0; c < num_classes; ++c)
        for (int i = 0; i < per_class; ++i) plan.labels.push_back(c);
    return plan;
}

LabelPlan uniform_labels(int num_classes, int total, Rng& rng) {
    if (num_classes <= 0 || total <= 0) throw ConfigError("uniform_labels: counts must be positive");
    LabelPlan plan;
    plan.strategy = LabelStrategy::uniform;
    plan.labels.reserve(static_cast<std::size_t>(total));
    for (int i = 0; i < total; ++i) plan.labels.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(num_classes))));
    return plan;
}

std::vector<std::int64_t> label_histogram(const LabelPlan& plan, int num_classes) {
    std::vector<std::int64_t> hist(static_cast<std::size_t>(num_classes), 0);
    for (int y : plan.labels) {
        if (y < 0 || y >= num_classes) throw ContractError("label outside the class range");
        ++hist[static_cast<std::size_t>(y)];
    }
    return hist;
}

}  // namespace rae
