#pragma once

#include <cstdint>
#include <vector>

#include "rae/nn.hpp"
#include "rae/rng.hpp"

namespace rae {

// Frozen random two-layer projection of flattened images to k features.
class FeatureMap {
   public:
    FeatureMap(std::int64_t input_dim, std::int64_t k = 64, std::uint64_t seed = 91, std::int64_t hidden = 256);

    // images [B, ...] with input_dim values per image -> [B, k] in 64-bit.
    Tensor64 operator()(const Tensor& images) const;
    std::int64_t input_dim() const { return w1_.dim(0); }
    std::int64_t k() const { return w2_.dim(1); }

   private:
    Tensor w1_;
    Tensor b1_;
    Tensor w2_;
};

struct GaussianMoments {
    std::vector<double> mean;
    Tensor64 cov;  // [k x k]
    std::int64_t count = 0;
};

// Sample mean and (1/M) covariance. Throws DataError for M < 2.
GaussianMoments fit_moments(const Tensor64& features);

// ||mu1 - mu2||^2 + tr(S1 + S2 - 2 (S1 S2)^{1/2}), with the square-root trace
// taken from the eigenvalues of S1^{1/2} S2 S1^{1/2}.
double frechet_distance(const GaussianMoments& a, const GaussianMoments& b);

enum class LabelStrategy { balanced, uniform };

struct LabelPlan {
    std::vector<int> labels;
    LabelStrategy strategy = LabelStrategy::balanced;
};

// Every class exactly per_class times, class-major order.
LabelPlan balanced_labels(int num_classes, int per_class);
// total i.i.d. uniform class draws.
LabelPlan uniform_labels(int num_classes, int total, Rng& rng);
std::vector<std::int64_t> label_histogram(const LabelPlan& plan, int num_classes);

}  // namespace rae
