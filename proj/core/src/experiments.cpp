#include "rae/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>

#include "rae/sampler.hpp"
#include "rae/train.hpp"

namespace rae {

namespace fs = std::filesystem;

std::string fmt(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

Table& Report::add_table(std::string name, std::vector<std::string> cols) {
    tables.push_back(Table{std::move(name), std::move(cols), {}});
    return tables.back();
}

const Verdict* Report::verdict(const std::string& name) const {
    for (const auto& v : verdicts)
        if (v.name == name) return &v;
    return nullptr;
}

bool Report::passed() const {
    return std::all_of(verdicts.begin(), verdicts.end(), [](const Verdict& v) { return v.pass; });
}

std::string Report::to_text() const {
    std::ostringstream out;
    out << title << '\n';
    for (const auto& n : notes) out << "  " << n << '\n';
    for (const auto& t : tables) {
        out << '\n' << t.title << '\n';
        std::vector<std::size_t> width(t.columns.size());
        for (std::size_t c = 0; c < t.columns.size(); ++c) width[c] = t.columns[c].size();
        for (const auto& r : t.rows)
            for (std::size_t c = 0; c < r.size() && c < width.size(); ++c) width[c] = std::max(width[c], r[c].size());
        auto line = [&](const std::vector<std::string>& cells) {
            std::string s;
            for (std::size_t c = 0; c < cells.size(); ++c) {
                s += cells[c];
                if (c + 1 < cells.size()) s += std::string(width[c] - cells[c].size() + 2, ' ');
            }
            out << "  " << s << '\n';
        };
        line(t.columns);
        for (const auto& r : t.rows) line(r);
    }
    if (!verdicts.empty()) {
        out << "\nverdicts\n";
        for (const auto& v : verdicts) out << "  " << (v.pass ? "PASS" : "FAIL") << "  " << v.name << ": " << v.detail << '\n';
        out << "overall: " << (passed() ? "PASS" : "FAIL") << '\n';
    }
    return out.str();
}

std::string Report::to_tsv() const {
    auto join = [](const std::vector<std::string>& cells) {
        std::string s;
        for (std::size_t i = 0; i < cells.size(); ++i) s += (i ? "\t" : "") + cells[i];
        return s + '\n';
    };
    std::ostringstream out;
    out << "# " << title << '\n';
    for (const auto& n : notes) out << "# " << n << '\n';
    for (const auto& t : tables) {
        out << "[" << t.title << "]\n" << join(t.columns);
        for (const auto& r : t.rows) out << join(r);
    }
    out << "[verdicts]\n" << join({"name", "verdict", "detail"});
    for (const auto& v : verdicts) out << join({v.name, v.pass ? "PASS" : "FAIL", v.detail});
    return out.str();
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path.string());
    f << text;
    if (!f) throw IoError("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read " + path.string());
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

}  // namespace

void Report::write(const fs::path& dir) const {
    fs::create_directories(dir);
    write_text(dir / "report.txt", to_text());
    write_text(dir / "report.tsv", to_tsv());
}

// --- building blocks -----------------------------------------------------

ImageSet load_images(const ExperimentConfig& cfg) {
    if (cfg.data.path.empty()) return make_toy_dataset(cfg.data.count, cfg.data.size, cfg.data.seed);
    if (!fs::exists(cfg.data.path)) throw IoError("dataset not found: " + cfg.data.path);
    ImageSet set = read_dataset(cfg.data.path);
    if (set.images.dim(2) % cfg.rae.patch != 0 || set.images.dim(3) % cfg.rae.patch != 0) {
        throw DataError("dataset image size is not a multiple of rae.patch");
    }
    return set;
}

EncoderConfig encoder_config(const ExperimentConfig& cfg, int channels) {
    EncoderConfig ec;
    ec.channels = channels;
    ec.patch_size = cfg.rae.patch;
    ec.token_dim = cfg.rae.token_dim;
    return ec;
}

DecoderConfig decoder_config(const ExperimentConfig& cfg, int channels) {
    DecoderConfig dc;
    dc.token_dim = cfg.rae.token_dim;
    dc.channels = channels;
    dc.patch_size = cfg.rae.decoder_patch;
    dc.width = cfg.rae.decoder_width;
    dc.depth = cfg.rae.decoder_depth;
    return dc;
}

DecoderTrainConfig decoder_train_config(const ExperimentConfig& cfg, std::uint64_t seed) {
    DecoderTrainConfig tc;
    tc.steps = cfg.rae.decoder_steps;
    tc.batch = cfg.rae.decoder_batch;
    tc.lr = cfg.rae.decoder_lr;
    tc.seed = seed;
    return tc;
}

std::optional<ScheduleShift> latent_shift(const ExperimentConfig& cfg, std::int64_t tokens, std::int64_t token_dim) {
    if (!cfg.flow.shift) return std::nullopt;
    const auto m = cfg.flow.shift_m > 0 ? cfg.flow.shift_m : effective_dim(tokens, token_dim);
    return ScheduleShift{m, cfg.flow.n_base};
}

Tensor reference_images(const ExperimentConfig& cfg, const ImageSet& data) {
    if (!cfg.data.path.empty()) return data.images;
    return make_toy_dataset(cfg.eval.reference, static_cast<int>(data.images.dim(2)), cfg.eval.reference_seed).images;
}

FrechetScorer::FrechetScorer(const ExperimentConfig& cfg, const Tensor& images)
    : features(images.numel() / images.dim(0), cfg.eval.features), reference(fit_moments(features(images))) {}

double FrechetScorer::operator()(const Tensor& images) const {
    return frechet_distance(reference, fit_moments(features(images)));
}

Checkpoint decoder_checkpoint(const Decoder& decoder, const std::string& config_text) {
    Checkpoint ckpt;
    ckpt.config_text = config_text;
    const auto& c = decoder.config();
    ckpt.tensors.emplace_back("meta/decoder", Tensor::vector({static_cast<float>(c.channels)}));
    for (const auto& p : decoder.parameters()) ckpt.tensors.emplace_back("decoder/" + p.name, p.var.value());
    return ckpt;
}

void restore_decoder(Decoder& decoder, const Checkpoint& ckpt) {
    for (const auto& p : decoder.parameters()) {
        const Tensor* t = ckpt.find("decoder/" + p.name);
        if (t == nullptr) throw LoadError("decoder checkpoint lacks tensor " + p.name, 0);
        if (!t->same_shape(p.var.value())) throw LoadError("decoder tensor " + p.name + " has the wrong shape", 0);
        p.var.mutable_value() = *t;
    }
}

namespace {

int class_count(const ImageSet& set) {
    if (set.labels.empty()) return 0;
    return *std::max_element(set.labels.begin(), set.labels.end()) + 1;
}

int wins_needed(std::size_t seeds) { return static_cast<int>(std::ceil(0.8 * static_cast<double>(seeds) - 1e-9)); }

std::string wins_detail(int wins, std::size_t seeds) {
    return std::to_string(wins) + " of " + std::to_string(seeds) + " seeds (need " + std::to_string(wins_needed(seeds)) +
           ")";
}

SamplerConfig sampler_config(const ExperimentConfig& cfg, const std::optional<ScheduleShift>& shift) {
    SamplerConfig s = cfg.sampler;
    s.shift = shift;
    s.shift_grid = cfg.flow.shift_grid;
    return s;
}

std::string shift_note(const std::optional<ScheduleShift>& shift) {
    if (!shift) return "shift = off";
    return "shift = on (m " + std::to_string(shift->m) + ", n_base " + std::to_string(shift->n_base) + ", alpha " +
           fmt(shift->alpha(), 4) + ")";
}

std::string ema_note(const ExperimentConfig& cfg) {
    return cfg.train.ema ? "ema = on (beta " + fmt(cfg.train.ema_beta, 6) + "), metrics from EMA weights"
                         : "ema = off, metrics from raw weights";
}

std::string mode_name(GuidanceMode m) {
    switch (m) {
        case GuidanceMode::none: return "none";
        case GuidanceMode::cfg_interval: return "cfg";
        case GuidanceMode::autoguidance: return "autoguidance";
    }
    return "?";
}

// Brings decoded images back to the encoder resolution when the decoder
// patch is twice the encoder patch.
Tensor at_data_resolution(const ExperimentConfig& cfg, Tensor images) {
    if (cfg.rae.decoder_patch == 2 * cfg.rae.patch) return avg_pool2(images);
    return images;
}

double mean_tail(const std::vector<double>& v, std::size_t count) {
    if (v.empty()) return 0.0;
    const auto k = std::min(count, v.size());
    double acc = 0.0;
    for (auto i = v.size() - k; i < v.size(); ++i) acc += v[i];
    return acc / static_cast<double>(k);
}

struct TrainedDit {
    std::unique_ptr<DitTrainer> trainer;
    std::unique_ptr<DiT<float>> weak;  // early snapshot used by autoguidance
};

TrainedDit train_dit(const ExperimentConfig& cfg, const Tensor& latents, const std::vector<int>& labels,
                     int label_count, const std::optional<ScheduleShift>& shift, std::uint64_t seed) {
    const auto mc = model_config(cfg, static_cast<int>(latents.dim(2)), static_cast<int>(latents.dim(1)), label_count);
    TrainedDit out;
    out.trainer = std::make_unique<DitTrainer>(mc, train_spec(cfg, shift, seed, static_cast<int>(latents.dim(0))));
    const int steps = cfg.train.steps;
    const int weak_step = cfg.eval.weak_step > 0 ? cfg.eval.weak_step : std::max(1, steps * 3 / 5);
    for (int s = 0; s < steps; ++s) {
        out.trainer->step(latents, labels);
        if (s + 1 == weak_step) out.weak = out.trainer->eval_model();
    }
    if (!out.weak) out.weak = out.trainer->eval_model();
    return out;
}

std::vector<int> sample_labels(const ExperimentConfig& cfg, int classes, int label_count, LabelStrategy strategy,
                               std::uint64_t seed) {
    if (classes == 0) return std::vector<int>(static_cast<std::size_t>(cfg.eval.samples), label_count);
    if (strategy == LabelStrategy::balanced) return balanced_labels(classes, std::max(1, cfg.eval.samples / classes)).labels;
    Rng rng(seed, 31);
    return uniform_labels(classes, cfg.eval.samples, rng).labels;
}

// Held-out images for decoder evaluation: a fresh procedural set, or the
// last fifth of a dataset read from disk (the rest is used for training).
std::pair<ImageSet, Tensor> split_holdout(const ExperimentConfig& cfg, ImageSet data) {
    if (cfg.data.path.empty()) {
        const int count = std::max(32, cfg.data.count / 5);
        return {std::move(data), make_toy_dataset(count, cfg.data.size, cfg.data.seed + 7919).images};
    }
    const auto total = data.images.dim(0);
    const auto held = std::max<std::int64_t>(1, total / 5);
    if (total - held < 2) throw DataError("dataset too small for a held-out split");
    Shape train_shape = data.images.shape(), test_shape = data.images.shape();
    train_shape[0] = total - held;
    test_shape[0] = held;
    Tensor train(train_shape), test(test_shape);
    std::copy_n(data.images.data(), train.numel(), train.data());
    std::copy_n(data.images.data() + train.numel(), test.numel(), test.data());
    ImageSet out{std::move(train), {}};
    if (!data.labels.empty()) out.labels.assign(data.labels.begin(), data.labels.begin() + (total - held));
    return {std::move(out), std::move(test)};
}

Report base_report(const ExperimentConfig& cfg, const std::string& title) {
    Report r;
    r.title = title;
    std::string seeds;
    for (auto s : cfg.seeds) seeds += (seeds.empty() ? "" : ",") + std::to_string(s);
    r.notes.push_back("seeds = " + seeds);
    return r;
}

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string hex(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace

// --- overfit sweep and theory ------------------------------------------

WidthBoundConfig width_bound_config(const ExperimentConfig& cfg) {
    const auto& o = cfg.overfit;
    WidthBoundConfig w;
    w.token_dim = o.n;
    w.num_tokens = o.tokens;
    w.widths = o.widths;
    w.depths = o.depths;
    w.steps = o.steps;
    w.batch = o.batch;
    w.lr = o.lr;
    w.num_heads = cfg.model.heads > 0 ? cfg.model.heads : 4;
    w.targets = o.targets;
    w.seeds.clear();
    for (int i = 0; i < o.runs; ++i) w.seeds.push_back(cfg.seeds.front() + static_cast<std::uint64_t>(i));
    w.shift = o.shift_m > 0 ? std::optional<ScheduleShift>(ScheduleShift{o.shift_m, cfg.flow.n_base}) : std::nullopt;
    w.lower_tol = o.lower_tol;
    w.upper_tol = o.upper_tol;
    w.full_width_ceiling = o.ceiling;
    return w;
}

Report run_overfit_sweep(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto w = width_bound_config(cfg);
    const auto result = verify_width_bound(w);

    Report report = base_report(cfg, "overfit sweep: single-target loss against the width bound (n-d)/n");
    report.notes.push_back("n = " + std::to_string(w.token_dim) + ", tokens = " + std::to_string(w.num_tokens) +
                           ", steps = " + std::to_string(w.steps) + ", batch = " + std::to_string(w.batch) +
                           ", lr = " + fmt(w.lr, 6) + ", targets = " + std::to_string(w.targets) +
                           ", runs = " + std::to_string(w.seeds.size()));
    report.notes.push_back("ema = off");
    report.notes.push_back(shift_note(w.shift));
    auto& table = report.add_table("cells", {"n", "d", "depth", "seed", "bound", "final_loss", "min_running_loss", "verdict"});
    for (const auto& r : result.rows) {
        table.rows.push_back({std::to_string(r.n), std::to_string(r.d), std::to_string(r.depth), r.seed, fmt(r.bound),
                              fmt(r.final_loss), fmt(r.min_running_loss), r.verdict});
        if (r.seed != "mean") continue;
        std::string detail = "loss " + fmt(r.final_loss) + ", bound " + fmt(r.bound);
        report.verdicts.push_back({"width bound d=" + std::to_string(r.d) + " depth=" + std::to_string(r.depth),
                                   r.verdict == "PASS", detail});
    }

    // The narrowest width stays near its bound at every depth.
    if (w.depths.size() >= 2 && !w.widths.empty()) {
        const int d = *std::min_element(w.widths.begin(), w.widths.end());
        if (d < w.token_dim) {
            const double floor = std::max<double>(0.0, static_cast<double>(w.token_dim - d)) / w.token_dim - w.lower_tol;
            double lo = 1e300, hi = -1e300;
            bool above = true;
            std::string detail;
            for (int depth : w.depths) {
                const auto* cell = result.cell(d, depth);
                if (cell == nullptr) continue;
                lo = std::min(lo, cell->final_loss);
                hi = std::max(hi, cell->final_loss);
                above = above && cell->final_loss >= floor;
                detail += "depth " + std::to_string(depth) + ": " + fmt(cell->final_loss) + "; ";
            }
            const bool pass = above && hi - lo < 0.05;
            report.verdicts.push_back({"depth cannot rescue d=" + std::to_string(d), pass,
                                       detail + "spread " + fmt(hi - lo) + " (< 0.05), floor " + fmt(floor)});
        }
    }
    return report;
}

namespace {

struct SpectralCase {
    std::string name;
    Tensor64 samples;
    std::vector<double> expected;
};

std::vector<SpectralCase> spectral_cases(std::int64_t n, std::int64_t m, std::uint64_t seed) {
    Rng rng(seed, 211);
    std::vector<SpectralCase> cases;
    const auto nu = static_cast<std::size_t>(n);

    // W = eps - x0 for one fixed x0: Cov = I.
    {
        std::vector<double> x0(nu);
        for (auto& v : x0) v = rng.normal();
        Tensor64 w({m, n});
        for (std::int64_t r = 0; r < m; ++r)
            for (std::int64_t c = 0; c < n; ++c) w.at(r, c) = rng.normal() - x0[static_cast<std::size_t>(c)];
        cases.push_back({"delta", std::move(w), std::vector<double>(nu, 1.0)});
    }
    // x ~ N(0, I): Cov = 2I.
    {
        Tensor64 w({m, n});
        for (std::int64_t r = 0; r < m; ++r)
            for (std::int64_t c = 0; c < n; ++c) w.at(r, c) = rng.normal() - rng.normal();
        cases.push_back({"gaussian", std::move(w), std::vector<double>(nu, 2.0)});
    }
    // x = s u with var(s) = 4: Cov = I + 4 u u^T.
    {
        std::vector<double> u(nu);
        double norm = 0.0;
        for (auto& v : u) {
            v = rng.normal();
            norm += v * v;
        }
        for (auto& v : u) v /= std::sqrt(norm);
        Tensor64 w({m, n});
        for (std::int64_t r = 0; r < m; ++r) {
            const double s = 2.0 * rng.normal();
            for (std::int64_t c = 0; c < n; ++c) w.at(r, c) = rng.normal() - s * u[static_cast<std::size_t>(c)];
        }
        std::vector<double> expected(nu, 1.0);
        expected[0] = 5.0;
        cases.push_back({"rank1", std::move(w), std::move(expected)});
    }
    return cases;
}

}  // namespace

Report run_verify_theory(const ExperimentConfig& cfg) {
    cfg.validate();
    constexpr std::int64_t kDim = 4;
    constexpr std::int64_t kSamples = 100000;
    constexpr double kSpectralTol = 0.02;
    constexpr double kKyFanTol = 1e-6;

    Report report = run_overfit_sweep(cfg);
    report.title = "theory checks: covariance spectra, Ky-Fan residuals and the width bound";
    report.notes.push_back("spectral cases: n = " + std::to_string(kDim) + ", M = " + std::to_string(kSamples));

    std::vector<Verdict> verdicts;
    Table spectra{"spectra", {"case", "i", "expected", "measured", "rel_err"}, {}};
    Table kyfan{"ky-fan", {"case", "d", "tail_sum", "projected", "abs_diff"}, {}};
    for (const auto& c : spectral_cases(kDim, kSamples, cfg.seeds.front())) {
        const Tensor64 cov = covariance(c.samples);
        const auto spec = spectrum_of(cov);
        double worst = 0.0;
        for (std::size_t i = 0; i < c.expected.size(); ++i) {
            const double rel = std::abs(spec.eigenvalues[i] - c.expected[i]) / c.expected[i];
            worst = std::max(worst, rel);
            spectra.rows.push_back({c.name, std::to_string(i), fmt(c.expected[i]), fmt(spec.eigenvalues[i]), fmt(rel, 5)});
        }
        verdicts.push_back({"spectrum " + c.name, worst < kSpectralTol, "max rel err " + fmt(worst, 5) + " (< 0.02)"});

        double worst_gap = 0.0;
        for (std::int64_t d = 0; d <= kDim; ++d) {
            const double tail = kyfan_projection_residual(cov, d);
            const double explicit_residual = sample_projection_residual(c.samples, top_eigenvectors(cov, d));
            const double gap = std::abs(tail - explicit_residual);
            worst_gap = std::max(worst_gap, gap);
            kyfan.rows.push_back({c.name, std::to_string(d), fmt(tail, 8), fmt(explicit_residual, 8), fmt(gap, 10)});
        }
        char buf[64];
        std::snprintf(buf, sizeof buf, "max |diff| %.3g (< 1e-6)", worst_gap);
        verdicts.push_back({"ky-fan " + c.name, worst_gap < kKyFanTol, buf});
    }
    report.tables.insert(report.tables.begin(), {std::move(spectra), std::move(kyfan)});
    report.verdicts.insert(report.verdicts.begin(), verdicts.begin(), verdicts.end());
    return report;
}

// --- pipeline ------------------------------------------------------------

Report run_pipeline(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto seed = cfg.seeds.front();
    const ImageSet data = load_images(cfg);
    const int channels = static_cast<int>(data.images.dim(1));
    const FrozenEncoder encoder(encoder_config(cfg, channels));
    const Tensor latents = encoder.encode(data.images);
    const auto tokens = latents.dim(1), dim = latents.dim(2);

    Decoder decoder(decoder_config(cfg, channels), seed);
    const auto dec_result =
        train_decoder(data.images, encoder, decoder, NoiseAugConfig{cfg.rae.tau}, decoder_train_config(cfg, seed));
    Rng l1_rng(seed, 71);
    const double recon_l1 = reconstruction_l1(at_data_resolution(cfg, data.images), latents, decoder, 0.0, l1_rng);

    const int classes = class_count(data);
    const int label_count = std::max(1, classes);
    const auto shift = latent_shift(cfg, tokens, dim);
    auto trained = train_dit(cfg, latents, data.labels, label_count, shift, seed);
    const auto model = trained.trainer->eval_model();

    const FrechetScorer scorer(cfg, reference_images(cfg, data));
    const auto sampler = sampler_config(cfg, shift);

    Report report = base_report(cfg, "pipeline: decoder, latent diffusion, generation and Frechet proxy");
    report.notes.push_back("model = " + model->config().name + " width " + std::to_string(model->config().dim) +
                           " depth " + std::to_string(model->config().depth) +
                           (model->config().head ? " + head width " + std::to_string(model->config().head->width) : ""));
    report.notes.push_back("latents = " + std::to_string(tokens) + " x " + std::to_string(dim));
    report.notes.push_back(ema_note(cfg));
    report.notes.push_back(shift_note(shift));
    report.notes.push_back("tau = " + fmt(cfg.rae.tau, 3));

    auto& train_table = report.add_table("training", {"quantity", "value"});
    train_table.rows.push_back({"decoder final loss", fmt(mean_tail(dec_result.loss_history, 50))});
    train_table.rows.push_back({"decoder train L1", fmt(recon_l1)});
    train_table.rows.push_back({"dit final loss", fmt(mean_tail(trained.trainer->losses(), 100))});

    auto& fd_table = report.add_table("generation", {"plan", "guidance", "frechet"});
    if (cfg.data.path.empty()) {
        const auto fresh = make_toy_dataset(cfg.eval.samples, static_cast<int>(data.images.dim(2)), cfg.eval.reference_seed + 1);
        fd_table.rows.push_back({"reference", "-", fmt(scorer(fresh.images))});
        const Tensor recon = at_data_resolution(cfg, decoder.decode(encoder.encode(fresh.images)));
        fd_table.rows.push_back({"reconstruction", "-", fmt(scorer(recon))});
    }
    std::map<std::pair<int, int>, double> fd;
    std::vector<GuidanceConfig> modes{GuidanceConfig{}};
    if (cfg.guidance.mode != GuidanceMode::none) modes.push_back(cfg.guidance);
    for (auto strategy : {LabelStrategy::balanced, LabelStrategy::uniform}) {
        if (classes == 0 && strategy == LabelStrategy::uniform) continue;
        const auto labels = sample_labels(cfg, classes, label_count, strategy, seed);
        for (std::size_t g = 0; g < modes.size(); ++g) {
            Rng rng(seed, 41);
            const Tensor images =
                at_data_resolution(cfg, generate(*model, decoder, labels, sampler, modes[g], rng, trained.weak.get()));
            const double score = scorer(images);
            fd[{static_cast<int>(strategy), static_cast<int>(g)}] = score;
            fd_table.rows.push_back({strategy == LabelStrategy::balanced ? "balanced" : "uniform",
                                     g == 0 ? "none" : mode_name(modes[g].mode) + " " + fmt(modes[g].scale, 2),
                                     fmt(score)});
        }
    }
    if (modes.size() > 1) {
        const double plain = fd[{0, 0}], guided = fd[{0, 1}];
        report.verdicts.push_back({"guided beats unguided", guided < plain,
                                   mode_name(cfg.guidance.mode) + " " + fmt(guided) + " vs none " + fmt(plain)});
    }

    const auto text = serialize_config(cfg);
    Checkpoint ckpt = trained.trainer->to_checkpoint(text);
    ckpt.tensors.emplace_back("meta/latent", Tensor::vector({static_cast<float>(tokens), static_cast<float>(dim),
                                                             static_cast<float>(classes), static_cast<float>(channels)}));
    for (const auto& p : trained.weak->parameters()) ckpt.tensors.emplace_back("weak/" + p.name, p.var.value());
    fs::create_directories(cfg.out);
    save_checkpoint(ckpt, fs::path(cfg.out) / "model.ckpt");
    save_checkpoint(decoder_checkpoint(decoder, text), fs::path(cfg.out) / "decoder.ckpt");
    return report;
}

// --- ablations -----------------------------------------------------------

Report run_schedule_ablation(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto first = cfg.seeds.front();
    const ImageSet data = load_images(cfg);
    const int channels = static_cast<int>(data.images.dim(1));
    const FrozenEncoder encoder(encoder_config(cfg, channels));
    const Tensor latents = encoder.encode(data.images);
    Decoder decoder(decoder_config(cfg, channels), first);
    train_decoder(data.images, encoder, decoder, NoiseAugConfig{cfg.rae.tau}, decoder_train_config(cfg, first));

    const int classes = class_count(data);
    const int label_count = std::max(1, classes);
    ExperimentConfig on = cfg;
    on.flow.shift = true;
    const auto shift = latent_shift(on, latents.dim(1), latents.dim(2));
    const FrechetScorer scorer(cfg, reference_images(cfg, data));
    const auto labels = sample_labels(cfg, classes, label_count, LabelStrategy::balanced, first);

    Report report = base_report(cfg, "schedule shift ablation: Frechet proxy with and without the timestep shift");
    report.notes.push_back(ema_note(cfg));
    report.notes.push_back(shift_note(shift));
    report.notes.push_back("train steps = " + std::to_string(cfg.train.steps) + ", guidance = none");
    auto& table = report.add_table("seeds", {"seed", "loss_off", "loss_on", "fd_off", "fd_on", "shift_wins"});
    int wins = 0;
    for (auto seed : cfg.seeds) {
        double score[2], loss[2];
        for (int k = 0; k < 2; ++k) {
            const auto s = k == 0 ? std::nullopt : shift;
            auto trained = train_dit(cfg, latents, data.labels, label_count, s, seed);
            const auto model = trained.trainer->eval_model();
            Rng rng(seed, 41);
            score[k] = scorer(at_data_resolution(cfg, generate(*model, decoder, labels, sampler_config(cfg, s),
                                                               GuidanceConfig{}, rng)));
            loss[k] = mean_tail(trained.trainer->losses(), 100);
        }
        const bool win = score[1] < score[0];
        wins += win;
        table.rows.push_back({std::to_string(seed), fmt(loss[0]), fmt(loss[1]), fmt(score[0]), fmt(score[1]),
                              win ? "yes" : "no"});
    }
    report.verdicts.push_back({"shift improves frechet", wins >= wins_needed(cfg.seeds.size()),
                               wins_detail(wins, cfg.seeds.size())});
    return report;
}

Report run_noiseaug_ablation(const ExperimentConfig& cfg) {
    cfg.validate();
    constexpr double kSigma = 0.5;
    const auto first = cfg.seeds.front();
    auto [train_set, test_images] = split_holdout(cfg, load_images(cfg));
    const int channels = static_cast<int>(train_set.images.dim(1));
    const FrozenEncoder encoder(encoder_config(cfg, channels));
    const Tensor test_latents = encoder.encode(test_images);
    const Tensor test_target = at_data_resolution(cfg, test_images);

    Report report = base_report(cfg, "noise augmentation ablation: tau = 0 against tau = " + fmt(cfg.rae.tau, 3));
    report.notes.push_back("held-out images = " + std::to_string(test_images.dim(0)) + ", sigma = " + fmt(kSigma, 2));

    // One generator shared by every decoder pair when a DiT budget is set.
    std::optional<Tensor> generated;
    std::unique_ptr<FrechetScorer> scorer;
    std::vector<int> gen_labels;
    std::optional<ScheduleShift> shift;
    std::unique_ptr<DiT<float>> model;
    const int classes = class_count(train_set);
    const int label_count = std::max(1, classes);
    if (cfg.train.steps > 0) {
        const Tensor latents = encoder.encode(train_set.images);
        shift = latent_shift(cfg, latents.dim(1), latents.dim(2));
        model = train_dit(cfg, latents, train_set.labels, label_count, shift, first).trainer->eval_model();
        scorer = std::make_unique<FrechetScorer>(cfg, reference_images(cfg, train_set));
        gen_labels = sample_labels(cfg, classes, label_count, LabelStrategy::balanced, first);
        report.notes.push_back(ema_note(cfg));
        report.notes.push_back(shift_note(shift));
    }

    auto& table = report.add_table("seeds", {"seed", "clean_l1_tau0", "clean_l1_tau", "noisy_l1_tau0", "noisy_l1_tau",
                                             "fd_tau0", "fd_tau"});
    int clean_wins = 0, noisy_wins = 0, fd_wins = 0;
    for (auto seed : cfg.seeds) {
        double clean[2], noisy[2], score[2] = {0.0, 0.0};
        Tensor latents_gen;
        if (model) {
            Rng rng(seed, 61);
            latents_gen = generate_latents(*model, gen_labels, sampler_config(cfg, shift), GuidanceConfig{}, rng);
        }
        for (int k = 0; k < 2; ++k) {
            Decoder decoder(decoder_config(cfg, channels), seed);
            const NoiseAugConfig noise{k == 0 ? 0.0 : cfg.rae.tau};
            train_decoder(train_set.images, encoder, decoder, noise, decoder_train_config(cfg, seed));
            Rng r0(seed, 73), r1(seed, 79);
            clean[k] = reconstruction_l1(test_target, test_latents, decoder, 0.0, r0);
            noisy[k] = reconstruction_l1(test_target, test_latents, decoder, kSigma, r1);
            if (model) score[k] = (*scorer)(at_data_resolution(cfg, decoder.decode(latents_gen)));
        }
        clean_wins += clean[0] < clean[1];
        noisy_wins += noisy[1] < noisy[0];
        fd_wins += score[1] < score[0];
        table.rows.push_back({std::to_string(seed), fmt(clean[0]), fmt(clean[1]), fmt(noisy[0]), fmt(noisy[1]),
                              model ? fmt(score[0]) : "-", model ? fmt(score[1]) : "-"});
    }
    const auto n = cfg.seeds.size();
    report.verdicts.push_back({"tau=0 wins on clean latents", clean_wins >= wins_needed(n), wins_detail(clean_wins, n)});
    report.verdicts.push_back(
        {"tau wins on sigma=0.5 latents", noisy_wins >= wins_needed(n), wins_detail(noisy_wins, n)});
    if (model) {
        report.verdicts.push_back({"tau wins on generated latents", fd_wins >= wins_needed(n), wins_detail(fd_wins, n)});
    }
    return report;
}

// --- generate / metrics / convert ------------------------------------------

Report run_generate(const ExperimentConfig& cfg) {
    cfg.validate();
    const fs::path dir = cfg.out;
    const Checkpoint mck = load_checkpoint(dir / "model.ckpt");
    const Checkpoint dck = load_checkpoint(dir / "decoder.ckpt");
    const ExperimentConfig trained = parse_config(mck.config_text);
    const Tensor* meta = mck.find("meta/latent");
    if (meta == nullptr || meta->numel() != 4) throw LoadError("model checkpoint lacks latent metadata", 0);
    const auto tokens = static_cast<int>((*meta)[0]), dim = static_cast<int>((*meta)[1]);
    const int classes = static_cast<int>((*meta)[2]), channels = static_cast<int>((*meta)[3]);
    const int label_count = std::max(1, classes);

    auto load_model = [&](const std::string& prefix) -> std::unique_ptr<DiT<float>> {
        auto m = std::make_unique<DiT<float>>(model_config(trained, dim, tokens, label_count), 0);
        const Tensor* freqs = mck.find("buffer/fourier");
        if (freqs == nullptr) throw LoadError("model checkpoint lacks buffer/fourier", 0);
        m->set_fourier_frequencies(*freqs);
        for (const auto& p : m->parameters()) {
            const Tensor* t = mck.find(prefix + p.name);
            if (t == nullptr) return nullptr;
            if (!t->same_shape(p.var.value())) throw LoadError("model tensor " + p.name + " has the wrong shape", 0);
            p.var.mutable_value() = *t;
        }
        return m;
    };
    auto model = load_model("ema/");
    if (!model) model = load_model("param/");
    if (!model) throw LoadError("model checkpoint lacks weights", 0);
    const auto weak = load_model("weak/");
    if (cfg.guidance.mode == GuidanceMode::autoguidance && !weak) {
        throw LoadError("autoguidance needs weak/ weights in the model checkpoint", 0);
    }
    Decoder decoder(decoder_config(trained, channels), 0);
    restore_decoder(decoder, dck);

    const auto seed = cfg.seeds.front();
    const auto labels = sample_labels(cfg, classes, label_count, LabelStrategy::balanced, seed);
    const auto shift = latent_shift(trained, tokens, dim);
    Rng rng(seed, 41);
    ImageSet samples{at_data_resolution(trained, generate(*model, decoder, labels, sampler_config(cfg, shift), cfg.guidance,
                                                          rng, weak.get())),
                     classes > 0 ? labels : std::vector<int>{}};
    fs::create_directories(dir);
    write_dataset(dir / "samples.raed", samples);

    Report report = base_report(cfg, "generate: samples from saved checkpoints");
    report.notes.push_back(shift_note(shift));
    report.notes.push_back(std::string("weights = ") + (mck.find("ema/" + model->parameters().front().name) ? "ema" : "raw"));
    auto& table = report.add_table("samples", {"quantity", "value"});
    table.rows.push_back({"count", std::to_string(samples.images.dim(0))});
    table.rows.push_back({"guidance", mode_name(cfg.guidance.mode) + " " + fmt(cfg.guidance.scale, 2)});
    table.rows.push_back({"checksum", hex(fnv1a(read_text(dir / "samples.raed")))});
    if (trained.data.path.empty()) {
        const FrechetScorer scorer(cfg, make_toy_dataset(cfg.eval.reference, static_cast<int>(samples.images.dim(2)),
                                                         cfg.eval.reference_seed).images);
        table.rows.push_back({"frechet", fmt(scorer(samples.images))});
    }
    return report;
}

namespace {

// Class c images carry pixel noise of standard deviation 0.03 c, so classes
// differ in quality.
Tensor unequal_quality_samples(const std::vector<int>& labels, int size, Rng& rng) {
    Tensor out({static_cast<std::int64_t>(labels.size()), 3, size, size});
    const auto per = 3 * static_cast<std::int64_t>(size) * size;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const Tensor img = make_toy_image(labels[i], size, rng);
        const double sd = 0.03 * labels[i];
        float* dst = out.data() + static_cast<std::int64_t>(i) * per;
        for (std::int64_t j = 0; j < per; ++j) dst[j] = static_cast<float>(img[j] + sd * rng.normal());
    }
    return out;
}

}  // namespace

Report run_metrics(const ExperimentConfig& cfg) {
    cfg.validate();
    Report report = base_report(cfg, "metrics: Frechet proxy and label-plan effect");
    const int size = cfg.data.size;

    const fs::path samples_path = cfg.data.path.empty() ? fs::path(cfg.out) / "samples.raed" : fs::path(cfg.data.path);
    auto& scores = report.add_table("scores", {"source", "count", "frechet"});
    if (fs::exists(samples_path)) {
        const ImageSet samples = read_dataset(samples_path);
        const FrechetScorer scorer(
            cfg, make_toy_dataset(cfg.eval.reference, static_cast<int>(samples.images.dim(2)), cfg.eval.reference_seed).images);
        scores.rows.push_back({samples_path.filename().string(), std::to_string(samples.images.dim(0)),
                               fmt(scorer(samples.images))});
    } else {
        report.notes.push_back("no samples at " + samples_path.string() + "; scored the label plans only");
    }

    const FrechetScorer scorer(cfg, make_toy_dataset(cfg.eval.reference, size, cfg.eval.reference_seed).images);
    auto& plans = report.add_table("label plans", {"seed", "balanced", "uniform", "gap"});
    bool all_differ = true;
    for (auto seed : cfg.seeds) {
        const auto balanced = balanced_labels(kToyClasses, std::max(1, cfg.eval.samples / kToyClasses));
        Rng plan_rng(seed, 31);
        const auto uniform = uniform_labels(kToyClasses, static_cast<int>(balanced.labels.size()), plan_rng);
        Rng r0(seed, 37), r1(seed, 37);
        const double b = scorer(unequal_quality_samples(balanced.labels, size, r0));
        const double u = scorer(unequal_quality_samples(uniform.labels, size, r1));
        all_differ = all_differ && b != u;
        plans.rows.push_back({std::to_string(seed), fmt(b), fmt(u), fmt(u - b, 5)});
    }
    report.verdicts.push_back({"label plans differ", all_differ, "gap nonzero for every seed"});

    // Closed-form checks of the distance itself.
    GaussianMoments a{{0.0}, Tensor64::matrix(1, 1, {1.0}), 2}, b{{1.0}, Tensor64::matrix(1, 1, {1.0}), 2};
    const double same = frechet_distance(a, a), unit = frechet_distance(a, b);
    report.verdicts.push_back({"frechet unit cases", same == 0.0 && std::abs(unit - 1.0) < 1e-12,
                               "d(a,a) = " + fmt(same, 12) + ", 1-D example = " + fmt(unit, 12)});
    const auto plan = balanced_labels(1000, 50);
    const auto hist = label_histogram(plan, 1000);
    const auto [lo, hi] = std::minmax_element(hist.begin(), hist.end());
    report.verdicts.push_back({"balanced plan 1000 x 50", plan.labels.size() == 50000 && *hi == *lo,
                               std::to_string(plan.labels.size()) + " labels, spread " + std::to_string(*hi - *lo)});
    return report;
}

Report run_convert_data(const ExperimentConfig& cfg) {
    cfg.validate();
    if (cfg.data.path.empty()) throw ConfigError("convert-data needs data.path");
    const fs::path src = cfg.data.path;
    if (!fs::exists(src)) throw IoError("input not found: " + src.string());

    auto is_image = [](const fs::path& p) {
        const auto ext = p.extension().string();
        return fs::is_regular_file(p) && (ext == ".pgm" || ext == ".ppm" || ext == ".pnm");
    };
    auto sorted_entries = [](const fs::path& dir) {
        std::vector<fs::path> v;
        for (const auto& e : fs::directory_iterator(dir)) v.push_back(e.path());
        std::sort(v.begin(), v.end());
        return v;
    };

    // A directory of class subdirectories gets labels in sorted name order.
    std::vector<std::pair<fs::path, int>> files;
    std::vector<std::string> class_names;
    if (fs::is_directory(src)) {
        for (const auto& p : sorted_entries(src)) {
            if (is_image(p)) files.emplace_back(p, -1);
            if (fs::is_directory(p)) {
                const int label = static_cast<int>(class_names.size());
                class_names.push_back(p.filename().string());
                for (const auto& q : sorted_entries(p))
                    if (is_image(q)) files.emplace_back(q, label);
            }
        }
    } else {
        files.emplace_back(src, -1);
    }
    if (files.empty()) throw DataError("no netpbm images under " + src.string());
    const bool labeled = !class_names.empty();
    if (labeled && std::any_of(files.begin(), files.end(), [](const auto& f) { return f.second < 0; })) {
        throw DataError("mixing loose images with class directories");
    }

    std::vector<Tensor> images;
    for (const auto& [p, label] : files) {
        images.push_back(read_netpbm(p));
        if (!images.back().same_shape(images.front())) throw DataError("image " + p.string() + " differs in shape");
    }
    const auto& s = images.front().shape();
    ImageSet set{Tensor({static_cast<std::int64_t>(images.size()), s[0], s[1], s[2]}), {}};
    for (std::size_t i = 0; i < images.size(); ++i)
        std::copy_n(images[i].data(), images[i].numel(), set.images.data() + static_cast<std::int64_t>(i) * images[i].numel());
    if (labeled)
        for (const auto& f : files) set.labels.push_back(f.second);

    fs::create_directories(cfg.out);
    const fs::path dst = fs::path(cfg.out) / "dataset.raed";
    write_dataset(dst, set);

    Report report = base_report(cfg, "convert-data: netpbm images to the planar dataset format");
    auto& table = report.add_table("dataset", {"quantity", "value"});
    table.rows.push_back({"output", dst.string()});
    table.rows.push_back({"count", std::to_string(images.size())});
    table.rows.push_back({"shape", std::to_string(s[0]) + "x" + std::to_string(s[1]) + "x" + std::to_string(s[2])});
    table.rows.push_back({"classes", std::to_string(class_names.size())});
    return report;
}

Report run_experiment(const ExperimentConfig& cfg) {
    switch (cfg.kind) {
        case ExperimentKind::overfit_sweep: return run_overfit_sweep(cfg);
        case ExperimentKind::schedule_ablation: return run_schedule_ablation(cfg);
        case ExperimentKind::noiseaug_ablation: return run_noiseaug_ablation(cfg);
        case ExperimentKind::pipeline: return run_pipeline(cfg);
        case ExperimentKind::generate: return run_generate(cfg);
        case ExperimentKind::verify_theory: return run_verify_theory(cfg);
    }
    throw ConfigError("unknown experiment kind");
}

}  // namespace rae
