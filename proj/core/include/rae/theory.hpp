#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rae/dit.hpp"
#include "rae/flow.hpp"

namespace rae {

// Eigen-decomposition of a symmetric matrix, eigenvalues descending.
// vectors column j pairs with values[j].
struct SymmetricEigen {
    std::vector<double> values;
    Tensor64 vectors;  // [n x n]
};

// Cyclic Jacobi rotations in 64-bit. Throws DimensionError for non-square
// input and DataError for non-finite entries.
SymmetricEigen symmetric_eigen(const Tensor64& a, double tol = 1e-14, int max_sweeps = 100);

// Mean-centered covariance with 1/M normalization of samples [M x n].
Tensor64 covariance(const Tensor64& samples);

struct SpectralSummary {
    std::vector<double> eigenvalues;  // descending
    std::int64_t n = 0;

    // Sorts descending, clamps tiny negatives to zero, rejects values below -tol.
    static SpectralSummary from_values(std::vector<double> values, double tol = 1e-8);
    double trace() const;
};

SpectralSummary covariance_eigenvalues(const Tensor64& samples);
SpectralSummary covariance_eigenvalues(const Tensor& samples);
SpectralSummary spectrum_of(const Tensor64& cov);

// Sum of the n - d smallest eigenvalues; 0 once d >= n.
double training_loss_lower_bound(const SpectralSummary& spec, std::int64_t d);
// The same bound divided by n, the scale of a per-dimension loss.
double per_dim_lower_bound(const SpectralSummary& spec, std::int64_t d);

// min over rank-d orthogonal projections of E||W - PW||^2 = sum_{i>d} lambda_i.
double kyfan_projection_residual(const Tensor64& cov, std::int64_t d);
// tr(C) - tr(Q^T C Q) for a basis Q [n x d] with orthonormal columns.
double projection_residual(const Tensor64& cov, const Tensor64& basis);
// Residual energy of samples after projecting centered rows onto `basis`.
double sample_projection_residual(const Tensor64& samples, const Tensor64& basis);
// Leading d eigenvectors as columns.
Tensor64 top_eigenvectors(const Tensor64& cov, std::int64_t d);

// (1 - e^{-L}) / L times the training-loss bound. Throws DomainError for L <= 0.
double inference_deviation_bound(const SpectralSummary& spec, std::int64_t d, double lipschitz);

// Single-latent overfit runs of plain DiTs of varying width on delta data.
struct WidthBoundConfig {
    std::int64_t token_dim = 64;
    std::int64_t num_tokens = 1;
    std::vector<int> widths{16, 32, 64, 96};
    std::vector<int> depths{4};
    int steps = 1200;
    int batch = 32;
    double lr = 2e-4;
    int num_heads = 4;
    int targets = 3;
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::uint64_t target_seed = 2024;
    std::optional<ScheduleShift> shift = ScheduleShift{196608, 4096};
    int eval_batches = 8;
    double lower_tol = 0.02;
    double upper_tol = 0.15;
    double full_width_ceiling = 0.1;
};

struct OverfitRun {
    double final_loss = 0.0;              // held-out mean over eval_batches
    double min_running_loss = 0.0;        // smallest 50-step running mean
    std::vector<double> loss_history;
};

// Trains one model on one fixed target and evaluates it with fresh (eps, t).
OverfitRun overfit_single_target(const ModelConfig& model, const Tensor& target, std::uint64_t seed,
                                 const WidthBoundConfig& cfg);

struct WidthBoundRow {
    std::int64_t n = 0;
    int d = 0;
    int depth = 0;
    std::string seed;  // seed id, or "mean" for the cell average
    double bound = 0.0;
    double final_loss = 0.0;
    double min_running_loss = 0.0;
    std::string verdict;  // PASS / FAIL on mean rows, "-" on per-seed rows
};

struct WidthBoundReport {
    std::vector<WidthBoundRow> rows;
    double seconds = 0.0;

    bool passed() const;
    const WidthBoundRow* cell(int d, int depth) const;
    std::string to_tsv() const;
    std::string to_text() const;
};

// Runs every (width, depth, seed) cell, each averaged over cfg.targets
// latents. Throws ExperimentError on a non-finite loss.
WidthBoundReport verify_width_bound(const WidthBoundConfig& cfg);

// Delta-data targets: layer-normalized Gaussian tokens [num_tokens x n].
Tensor delta_target(std::int64_t num_tokens, std::int64_t n, Rng& rng);

}  // namespace rae
