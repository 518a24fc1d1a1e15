#include "rae/theory.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "rae/optim.hpp"

namespace rae {

namespace {

std::string fixed(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

void require_square(const Tensor64& a, const char* who) {
    if (a.rank() != 2 || a.dim(0) != a.dim(1)) {
        throw DimensionError(std::string(who) + ": expected a square matrix, got " + shape_string(a.shape()));
    }
}

}  // namespace

SymmetricEigen symmetric_eigen(const Tensor64& input, double tol, int max_sweeps) {
    require_square(input, "symmetric_eigen");
    if (!all_finite(input.span())) throw DataError("symmetric_eigen: non-finite entry");
    const auto n = input.dim(0);
    Tensor64 a = input;
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = i + 1; j < n; ++j) {
            const double s = 0.5 * (a.at(i, j) + a.at(j, i));
            a.at(i, j) = s;
            a.at(j, i) = s;
        }
    Tensor64 v = Tensor64::zeros({n, n});
    for (std::int64_t i = 0; i < n; ++i) v.at(i, i) = 1.0;

    double scale = 0.0;
    for (double x : a.storage()) scale += x * x;
    scale = std::sqrt(scale);
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = i + 1; j < n; ++j) off += a.at(i, j) * a.at(i, j);
        if (std::sqrt(off) <= tol * std::max(scale, 1e-300)) break;
        for (std::int64_t p = 0; p < n; ++p) {
            for (std::int64_t q = p + 1; q < n; ++q) {
                const double apq = a.at(p, q);
                if (apq == 0.0) continue;
                const double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
                const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::int64_t k = 0; k < n; ++k) {
                    const double akp = a.at(k, p), akq = a.at(k, q);
                    a.at(k, p) = c * akp - s * akq;
                    a.at(k, q) = s * akp + c * akq;
                }
                for (std::int64_t k = 0; k < n; ++k) {
                    const double apk = a.at(p, k), aqk = a.at(q, k);
                    a.at(p, k) = c * apk - s * aqk;
                    a.at(q, k) = s * apk + c * aqk;
                }
                for (std::int64_t k = 0; k < n; ++k) {
                    const double vkp = v.at(k, p), vkq = v.at(k, q);
                    v.at(k, p) = c * vkp - s * vkq;
                    v.at(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return a.at(i, i) > a.at(j, j); });
    SymmetricEigen out;
    out.vectors = Tensor64::zeros({n, n});
    for (std::int64_t c = 0; c < n; ++c) {
        const auto src = order[static_cast<std::size_t>(c)];
        out.values.push_back(a.at(src, src));
        for (std::int64_t r = 0; r < n; ++r) out.vectors.at(r, c) = v.at(r, src);
    }
    return out;
}

Tensor64 covariance(const Tensor64& samples) {
    if (samples.rank() != 2) throw DimensionError("covariance: expected [M x n] samples");
    const auto m = samples.dim(0), n = samples.dim(1);
    if (m < 2) throw DataError("covariance: need at least two samples");
    if (!all_finite(samples.span())) throw DataError("covariance: non-finite sample");
    std::vector<double> mean(static_cast<std::size_t>(n), 0.0);
    for (std::int64_t r = 0; r < m; ++r)
        for (std::int64_t c = 0; c < n; ++c) mean[c] += samples.at(r, c);
    for (auto& x : mean) x /= static_cast<double>(m);
    Tensor64 centered(samples.shape());
    for (std::int64_t r = 0; r < m; ++r)
        for (std::int64_t c = 0; c < n; ++c) centered.at(r, c) = samples.at(r, c) - mean[c];
    Tensor64 cov = matmul(transpose(centered), centered);
    for (auto& x : cov.storage()) x /= static_cast<double>(m);
    return cov;
}

SpectralSummary SpectralSummary::from_values(std::vector<double> values, double tol) {
    for (double& v : values) {
        if (!std::isfinite(v)) throw DataError("spectrum: non-finite eigenvalue");
        if (v < -tol) throw DataError("spectrum: covariance is not positive semidefinite");
        if (v < 0.0) v = 0.0;
    }
    std::sort(values.begin(), values.end(), std::greater<>());
    SpectralSummary s;
    s.n = static_cast<std::int64_t>(values.size());
    s.eigenvalues = std::move(values);
    return s;
}

double SpectralSummary::trace() const { return sum_sequential<double>(eigenvalues); }

SpectralSummary spectrum_of(const Tensor64& cov) {
    double scale = 1.0;
    for (double x : cov.storage()) scale = std::max(scale, std::abs(x));
    return SpectralSummary::from_values(symmetric_eigen(cov).values, 1e-8 * scale);
}

SpectralSummary covariance_eigenvalues(const Tensor64& samples) { return spectrum_of(covariance(samples)); }

SpectralSummary covariance_eigenvalues(const Tensor& samples) {
    return covariance_eigenvalues(samples.cast<double>());
}

double training_loss_lower_bound(const SpectralSummary& spec, std::int64_t d) {
    if (d < 0) throw DomainError("training_loss_lower_bound: d must be non-negative");
    if (d >= spec.n) return 0.0;
    double acc = 0.0;
    for (std::int64_t i = d; i < spec.n; ++i) acc += spec.eigenvalues[static_cast<std::size_t>(i)];
    return acc;
}

double per_dim_lower_bound(const SpectralSummary& spec, std::int64_t d) {
    if (spec.n == 0) return 0.0;
    return training_loss_lower_bound(spec, d) / static_cast<double>(spec.n);
}

double kyfan_projection_residual(const Tensor64& cov, std::int64_t d) {
    require_square(cov, "kyfan_projection_residual");
    if (d > cov.dim(0)) throw DomainError("kyfan_projection_residual: d exceeds n");
    return training_loss_lower_bound(spectrum_of(cov), d);
}

Tensor64 top_eigenvectors(const Tensor64& cov, std::int64_t d) {
    require_square(cov, "top_eigenvectors");
    const auto n = cov.dim(0);
    if (d < 0 || d > n) throw DomainError("top_eigenvectors: d outside [0, n]");
    const auto eig = symmetric_eigen(cov);
    Tensor64 q = Tensor64::zeros({n, d});
    for (std::int64_t r = 0; r < n; ++r)
        for (std::int64_t c = 0; c < d; ++c) q.at(r, c) = eig.vectors.at(r, c);
    return q;
}

double projection_residual(const Tensor64& cov, const Tensor64& basis) {
    require_square(cov, "projection_residual");
    if (basis.rank() != 2 || basis.dim(0) != cov.dim(0)) throw DimensionError("projection_residual: basis rows must equal n");
    double tr = 0.0;
    for (std::int64_t i = 0; i < cov.dim(0); ++i) tr += cov.at(i, i);
    const Tensor64 cq = matmul(cov, basis);
    double captured = 0.0;
    for (std::int64_t r = 0; r < basis.dim(0); ++r)
        for (std::int64_t c = 0; c < basis.dim(1); ++c) captured += basis.at(r, c) * cq.at(r, c);
    return tr - captured;
}

double sample_projection_residual(const Tensor64& samples, const Tensor64& basis) {
    const auto m = samples.dim(0), n = samples.dim(1);
    if (basis.dim(0) != n) throw DimensionError("sample_projection_residual: basis rows must equal n");
    std::vector<double> mean(static_cast<std::size_t>(n), 0.0);
    for (std::int64_t r = 0; r < m; ++r)
        for (std::int64_t c = 0; c < n; ++c) mean[c] += samples.at(r, c);
    for (auto& x : mean) x /= static_cast<double>(m);
    Tensor64 centered(samples.shape());
    for (std::int64_t r = 0; r < m; ++r)
        for (std::int64_t c = 0; c < n; ++c) centered.at(r, c) = samples.at(r, c) - mean[c];
    const Tensor64 coords = matmul(centered, basis);
    const Tensor64 projected = matmul(coords, transpose(basis));
    double acc = 0.0;
    for (std::int64_t i = 0; i < centered.numel(); ++i) {
        const double e = centered[i] - projected[i];
        acc += e * e;
    }
    return acc / static_cast<double>(m);
}

double inference_deviation_bound(const SpectralSummary& spec, std::int64_t d, double lipschitz) {
    if (!(lipschitz > 0.0)) throw DomainError("inference_deviation_bound: L must be positive");
    return -std::expm1(-lipschitz) / lipschitz * training_loss_lower_bound(spec, d);
}

Tensor delta_target(std::int64_t num_tokens, std::int64_t n, Rng& rng) {
    return layer_norm_no_affine(randn<float>({num_tokens, n}, rng), static_cast<float>(nn::kNormEps));
}

OverfitRun overfit_single_target(const ModelConfig& model_cfg, const Tensor& target, std::uint64_t seed,
                                 const WidthBoundConfig& cfg) {
    if (target.numel() != model_cfg.num_tokens * model_cfg.token_dim) {
        throw DimensionError("overfit target does not match the model's token grid");
    }
    DiT<float> model(model_cfg, seed);
    const auto params = model.parameters();
    AdamState<float> adam;
    adam.config.lr = cfg.lr;

    const std::int64_t per = target.numel();
    Tensor clean({cfg.batch, model_cfg.num_tokens, model_cfg.token_dim});
    for (int b = 0; b < cfg.batch; ++b) std::copy(target.storage().begin(), target.storage().end(), clean.data() + b * per);
    const std::vector<int> labels(static_cast<std::size_t>(cfg.batch), model_cfg.null_label());
    VelocityModel<float> f = [&](const Var<float>& x, std::span<const float> t, std::span<const int> y) {
        return model.forward(x, t, y);
    };

    Rng train_rng = Rng(seed, 1);
    OverfitRun run;
    run.loss_history.reserve(static_cast<std::size_t>(cfg.steps));
    constexpr int window = 50;
    double running = 0.0;
    run.min_running_loss = std::numeric_limits<double>::infinity();
    for (int step = 0; step < cfg.steps; ++step) {
        const auto batch = make_flow_batch(clean, train_rng, cfg.shift);
        const auto loss = flow_matching_loss<float>(f, batch, labels);
        const double value = loss.value().item();
        if (!std::isfinite(value)) throw ExperimentError("overfit run diverged at step " + std::to_string(step));
        zero_grad(params);
        backward(loss);
        adam_step(params, adam);
        run.loss_history.push_back(value);
        running += value;
        if (step >= window) running -= run.loss_history[static_cast<std::size_t>(step - window)];
        if (step + 1 >= window) run.min_running_loss = std::min(run.min_running_loss, running / window);
    }

    Rng eval_rng = Rng(seed, 2);
    double total = 0.0;
    for (int k = 0; k < cfg.eval_batches; ++k) {
        const auto batch = make_flow_batch(clean, eval_rng, cfg.shift);
        total += flow_matching_loss<float>(f, batch, labels).value().item();
    }
    run.final_loss = total / cfg.eval_batches;
    if (!std::isfinite(run.final_loss)) throw ExperimentError("overfit evaluation produced a non-finite loss");
    return run;
}

bool WidthBoundReport::passed() const {
    return std::none_of(rows.begin(), rows.end(), [](const auto& r) { return r.verdict == "FAIL"; });
}

const WidthBoundRow* WidthBoundReport::cell(int d, int depth) const {
    for (const auto& r : rows)
        if (r.d == d && r.depth == depth && r.seed == "mean") return &r;
    return nullptr;
}

std::string WidthBoundReport::to_tsv() const {
    std::ostringstream out;
    out << "n\td\tdepth\tseed\tbound\tfinal_loss\tmin_running_loss\tverdict\n";
    for (const auto& r : rows) {
        out << r.n << '\t' << r.d << '\t' << r.depth << '\t' << r.seed << '\t' << fixed(r.bound, 6) << '\t'
            << fixed(r.final_loss, 6) << '\t' << fixed(r.min_running_loss, 6) << '\t' << r.verdict << '\n';
    }
    return out.str();
}

std::string WidthBoundReport::to_text() const {
    std::ostringstream out;
    out << "width bound check (per-dim loss vs (n-d)/n)\n";
    out << "    n     d  depth  bound     loss      verdict\n";
    for (const auto& r : rows) {
        if (r.seed != "mean") continue;
        char line[160];
        std::snprintf(line, sizeof line, "%5lld %5d %6d  %.4f   %.4f    %s\n", static_cast<long long>(r.n), r.d,
                      r.depth, r.bound, r.final_loss, r.verdict.c_str());
        out << line;
    }
    out << "overall: " << (passed() ? "PASS" : "FAIL") << '\n';
    return out.str();
}

WidthBoundReport verify_width_bound(const WidthBoundConfig& cfg) {
    if (cfg.seeds.empty() || cfg.targets < 1) throw ConfigError("verify_width_bound: need at least one seed and target");
    const auto start = std::chrono::steady_clock::now();
    const auto n = cfg.token_dim;

    Rng target_rng(cfg.target_seed, 0);
    std::vector<Tensor> targets;
    for (int k = 0; k < cfg.targets; ++k) targets.push_back(delta_target(cfg.num_tokens, n, target_rng));

    WidthBoundReport report;
    for (int depth : cfg.depths) {
        for (int d : cfg.widths) {
            ModelConfig mc;
            mc.name = "overfit";
            mc.dim = d;
            mc.num_heads = cfg.num_heads;
            mc.depth = depth;
            mc.token_dim = static_cast<int>(n);
            mc.num_tokens = static_cast<int>(cfg.num_tokens);
            mc.label_count = 1;
            mc.validate();
            const double bound = std::max<double>(0.0, static_cast<double>(n - d)) / static_cast<double>(n);

            double cell_loss = 0.0, cell_min = std::numeric_limits<double>::infinity();
            for (auto seed : cfg.seeds) {
                double loss = 0.0, min_running = std::numeric_limits<double>::infinity();
                for (int k = 0; k < cfg.targets; ++k) {
                    const auto run = overfit_single_target(mc, targets[static_cast<std::size_t>(k)],
                                                           seed * 1000 + static_cast<std::uint64_t>(k), cfg);
                    loss += run.final_loss / cfg.targets;
                    min_running = std::min(min_running, run.min_running_loss);
                }
                report.rows.push_back({n, d, depth, std::to_string(seed), bound, loss, min_running, "-"});
                cell_loss += loss / static_cast<double>(cfg.seeds.size());
                cell_min = std::min(cell_min, min_running);
            }
            bool ok = cell_loss >= bound - cfg.lower_tol;
            ok = ok && (d < n ? cell_loss <= bound + cfg.upper_tol : cell_loss <= cfg.full_width_ceiling);
            report.rows.push_back({n, d, depth, "mean", bound, cell_loss, cell_min, ok ? "PASS" : "FAIL"});
        }
    }
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

}  // namespace rae
