#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "rae/checkpoint.hpp"
#include "rae/data.hpp"
#include "rae/experiments.hpp"
#include "rae/train.hpp"

using namespace rae;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

class Checks {
   public:
    void expect(bool ok, const std::string& what) {
        if (!ok) failures_.push_back(what);
    }
    Outcome outcome(std::string detail) const {
        if (failures_.empty()) return {true, std::move(detail)};
        std::string msg;
        for (const auto& f : failures_) msg += (msg.empty() ? "" : "; ") + f;
        return {false, msg};
    }

   private:
    std::vector<std::string> failures_;
};

std::string num(double v, int digits = 4) { return fmt(v, digits); }

std::string sci(double v) {
    std::ostringstream s;
    s << std::scientific << std::setprecision(2) << v;
    return s.str();
}

ExperimentConfig load(const std::string& name) {
    std::ifstream f(fs::path(RAE_CONFIG_DIR) / name, std::ios::binary);
    if (!f) throw IoError("missing config " + name);
    std::ostringstream s;
    s << f.rdbuf();
    return parse_config(s.str());
}

std::string verdict_text(const Report& r, const std::string& name) {
    const auto* v = r.verdict(name);
    return v == nullptr ? name + ": missing" : name + ": " + (v->pass ? "PASS " : "FAIL ") + v->detail;
}

bool verdict_pass(const Report& r, const std::string& name) {
    const auto* v = r.verdict(name);
    return v != nullptr && v->pass;
}

// --- 1, 2: width bound ---------------------------------------------------

Outcome width_bound(const fs::path& work) {
    WidthBoundConfig cfg;
    const auto report = verify_width_bound(cfg);
    fs::create_directories(work / "c1");
    std::ofstream(work / "c1" / "report.txt") << report.to_text();
    Checks c;
    std::string cells;
    for (int d : cfg.widths) {
        const auto* cell = report.cell(d, 4);
        if (cell == nullptr) {
            c.expect(false, "missing cell d=" + std::to_string(d));
            continue;
        }
        const double bound = double(cfg.token_dim - std::min<std::int64_t>(d, cfg.token_dim)) / double(cfg.token_dim);
        c.expect(cell->final_loss >= bound - 0.02, "d=" + std::to_string(d) + " undershoots");
        if (d < cfg.token_dim) c.expect(cell->final_loss <= bound + 0.15, "d=" + std::to_string(d) + " above bound + 0.15");
        else c.expect(cell->final_loss <= 0.1, "d=" + std::to_string(d) + " above 0.1");
        cells += " d" + std::to_string(d) + "=" + num(cell->final_loss);
    }
    c.expect(report.passed(), "sweep verdict");
    c.expect(report.seconds <= 600.0, "runtime " + num(report.seconds, 1) + " s over 10 min");
    return c.outcome("losses" + cells + " (" + num(report.seconds, 0) + " s)");
}

Outcome depth_cannot_rescue(const fs::path& work) {
    WidthBoundConfig cfg;
    cfg.widths = {16};
    cfg.depths = {4, 8};
    const auto report = verify_width_bound(cfg);
    fs::create_directories(work / "c2");
    std::ofstream(work / "c2" / "report.txt") << report.to_text();
    const auto* a = report.cell(16, 4);
    const auto* b = report.cell(16, 8);
    if (a == nullptr || b == nullptr) return {false, "missing cells"};
    Checks c;
    c.expect(a->final_loss >= 0.73, "depth 4 below 0.73");
    c.expect(b->final_loss >= 0.73, "depth 8 below 0.73");
    c.expect(std::abs(a->final_loss - b->final_loss) < 0.05, "depth gap >= 0.05");
    return c.outcome("depth 4 " + num(a->final_loss) + ", depth 8 " + num(b->final_loss));
}

// --- 3: spectra ------------------------------------------------------------

Outcome spectral_oracle() {
    const std::int64_t m = 100000, n = 4;
    Rng rng(211, 0);
    const auto x0 = randn<double>({n}, rng);
    Tensor64 delta({m, n}), gauss({m, n}), rank1({m, n});
    for (std::int64_t i = 0; i < m; ++i) {
        const double s = 2.0 * rng.normal();
        for (std::int64_t j = 0; j < n; ++j) {
            delta.at(i, j) = rng.normal() - x0[j];
            gauss.at(i, j) = rng.normal() - rng.normal();
            rank1.at(i, j) = rng.normal() - s * 0.5;
        }
    }
    // Cov(eps - x): I for a fixed x, 2I for Gaussian x, I + 4 u u^T for x = s u.
    const std::vector<std::pair<const Tensor64*, std::vector<double>>> cases{
        {&delta, {1, 1, 1, 1}}, {&gauss, {2, 2, 2, 2}}, {&rank1, {5, 1, 1, 1}}};
    Checks c;
    double worst = 0.0, worst_kyfan = 0.0;
    for (const auto& [samples, expected] : cases) {
        const auto spec = covariance_eigenvalues(*samples);
        for (std::size_t i = 0; i < expected.size(); ++i)
            worst = std::max(worst, std::abs(spec.eigenvalues[i] - expected[i]) / expected[i]);
        const auto cov = covariance(*samples);
        for (std::int64_t d = 1; d < n; ++d) {
            const double tail = training_loss_lower_bound(spec, d);
            worst_kyfan = std::max(worst_kyfan, std::abs(projection_residual(cov, top_eigenvectors(cov, d)) - tail));
            worst_kyfan = std::max(worst_kyfan, std::abs(kyfan_projection_residual(cov, d) - tail));
        }
    }
    c.expect(worst < 0.02, "eigenvalue error " + num(worst));
    c.expect(worst_kyfan < 1e-6, "projection residual gap " + sci(worst_kyfan));
    return c.outcome("max relative eigenvalue error " + num(worst) + ", max projection gap " + sci(worst_kyfan));
}

// --- 4: shift formula ------------------------------------------------------

Outcome shift_formula() {
    Checks c;
    for (double a : {0.25, 0.5, 2.0, 4.0, std::sqrt(48.0)}) {
        c.expect(shift_timestep(0.0, a) == 0.0, "t=0 not fixed");
        c.expect(shift_timestep(1.0, a) == 1.0, "t=1 not fixed");
    }
    for (int i = 0; i <= 1000; ++i) c.expect(shift_timestep(i / 1000.0, 1.0) == i / 1000.0, "alpha=1 not identity");
    const double half = shift_timestep(0.5, 2.0);
    c.expect(std::abs(half - 0.6667) <= 1e-4, "alpha=2, t=0.5 gives " + num(half, 6));
    double worst = 0.0;
    for (double a : {0.3, 2.0, 4.0, 7.0})
        for (int i = 0; i <= 1000; ++i) {
            const double t = i / 1000.0;
            worst = std::max(worst, std::abs(shift_timestep(shift_timestep(t, a), 1.0 / a) - t));
        }
    c.expect(worst < 1e-6, "round trip error " + sci(worst));
    return c.outcome("alpha=2 t=0.5 -> " + num(half, 6) + ", round trip " + sci(worst));
}

// --- 5: sampler --------------------------------------------------------------

Outcome sampler_oracle() {
    const auto m = testing::gaussian_sampler_moments(200, 10000, 4, 1);
    const double ratio = testing::affine_convergence_ratio(50, 100);
    Checks c;
    c.expect(m.worst_abs_mean < 0.05, "mean " + num(m.worst_abs_mean));
    c.expect(m.worst_abs_var_dev < 0.05, "variance " + num(m.worst_abs_var_dev));
    c.expect(ratio >= 1.7 && ratio <= 2.3, "ratio " + num(ratio));
    return c.outcome("|mean| " + num(m.worst_abs_mean) + ", |var-1| " + num(m.worst_abs_var_dev) + ", err(50)/err(100) " +
                     num(ratio, 3));
}

// --- 6: gradients ------------------------------------------------------------

Outcome gradient_suite() {
    auto checks = testing::primitive_gradient_checks();
    const auto nets = testing::network_gradient_checks();
    const auto primitives = checks.size();
    checks.insert(checks.end(), nets.begin(), nets.end());
    Checks c;
    double w32 = 0.0, w64 = 0.0;
    for (const auto& g : checks) {
        c.expect(g.pass(), g.name + " (" + sci(g.err32) + ", " + sci(g.err64) + ")");
        w32 = std::max(w32, g.err32);
        w64 = std::max(w64, g.err64);
    }
    c.expect(nets.size() == 3, "expected 3 networks");
    return c.outcome(std::to_string(primitives) + " primitives + " + std::to_string(nets.size()) +
                     " networks, worst 32-bit " + sci(w32) + ", worst 64-bit " + sci(w64));
}

// --- 7, 8, 9: desk-scale directions ---------------------------------------

Outcome noise_augmentation(const fs::path& work) {
    auto cfg = load("desk_noiseaug.cfg");
    cfg.out = (work / "c7").string();
    const auto start = std::chrono::steady_clock::now();
    const auto report = run_noiseaug_ablation(cfg);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report.write(cfg.out);
    Checks c;
    c.expect(cfg.seeds.size() == 5, "needs 5 seeds");
    c.expect(verdict_pass(report, "tau=0 wins on clean latents"), verdict_text(report, "tau=0 wins on clean latents"));
    c.expect(verdict_pass(report, "tau wins on sigma=0.5 latents"), verdict_text(report, "tau wins on sigma=0.5 latents"));
    c.expect(seconds <= 900.0, "runtime " + num(seconds, 0) + " s over 15 min");
    return c.outcome(verdict_text(report, "tau=0 wins on clean latents") + "; " +
                     verdict_text(report, "tau wins on sigma=0.5 latents") + " (" + num(seconds, 0) + " s)");
}

Outcome shift_direction(const fs::path& work) {
    auto cfg = load("desk_schedule.cfg");
    cfg.out = (work / "c8").string();
    const auto report = run_schedule_ablation(cfg);
    report.write(cfg.out);
    Checks c;
    c.expect(cfg.seeds.size() == 5, "needs 5 seeds");
    c.expect(verdict_pass(report, "shift improves frechet"), verdict_text(report, "shift improves frechet"));
    return c.outcome(verdict_text(report, "shift improves frechet"));
}

Outcome guidance(const fs::path& work) {
    Checks c;
    Rng rng(9, 0);
    const auto vc = randn<float>({64, 8}, rng), vu = randn<float>({64, 8}, rng);
    for (double t : {0.0, 0.25, 0.5, 1.0}) c.expect(cfg_velocity(vc, vu, 1.0, t, 0.0, 1.0) == vc, "cfg w=1");
    c.expect(cfg_velocity(vc, vu, 4.0, 0.1, 0.3, 0.7) == vc, "below interval");
    c.expect(cfg_velocity(vc, vu, 4.0, 0.9, 0.3, 0.7) == vc, "above interval");
    c.expect(cfg_velocity(vc, vu, 4.0, 0.5, 0.3, 0.7) != vc, "inside interval");
    c.expect(autoguidance_velocity(vc, vu, 1.0) == vc, "autoguidance g=1");
    c.expect(autoguidance_velocity(vc, vu, 0.0) == vu, "autoguidance g=0");

    auto cfg = load("desk_pipeline.cfg");
    cfg.out = (work / "c9").string();
    const auto report = run_pipeline(cfg);
    report.write(cfg.out);
    c.expect(cfg.guidance.mode != GuidanceMode::none, "pipeline config has no guidance");
    c.expect(verdict_pass(report, "guided beats unguided"), verdict_text(report, "guided beats unguided"));
    return c.outcome("combinators exact; " + verdict_text(report, "guided beats unguided"));
}

// --- 10: metrics -------------------------------------------------------------

GaussianMoments diag_moments(std::vector<double> mean, const std::vector<double>& var) {
    GaussianMoments m;
    const auto k = static_cast<std::int64_t>(var.size());
    m.mean = std::move(mean);
    m.cov = Tensor64::zeros({k, k});
    for (std::int64_t i = 0; i < k; ++i) m.cov.at(i, i) = var[static_cast<std::size_t>(i)];
    m.count = 2;
    return m;
}

Outcome metrics() {
    Checks c;
    Rng rng(10, 0);
    const auto a = fit_moments(randn<double>({300, 8}, rng));
    const double self = frechet_distance(a, a);
    c.expect(self == 0.0, "d(a, a) = " + sci(self));
    const double one = frechet_distance(diag_moments({0}, {1}), diag_moments({1}, {1}));
    c.expect(one == 1.0, "1-D case gives " + num(one, 12));
    const std::vector<double> mu1{0.5, -1.0, 2.0, 0.0}, mu2{0.0, 1.0, 2.5, 0.0}, l{1.0, 4.0, 0.25, 9.0},
        v{2.0, 1.0, 0.5, 9.0};
    double closed = 0.0;
    for (std::size_t i = 0; i < l.size(); ++i)
        closed += std::pow(std::sqrt(l[i]) - std::sqrt(v[i]), 2) + std::pow(mu1[i] - mu2[i], 2);
    const double diag_gap = std::abs(frechet_distance(diag_moments(mu1, l), diag_moments(mu2, v)) - closed);
    c.expect(diag_gap < 1e-8, "diagonal gap " + sci(diag_gap));

    const auto plan = balanced_labels(1000, 50);
    const auto h = label_histogram(plan, 1000);
    const auto [lo, hi] = std::minmax_element(h.begin(), h.end());
    c.expect(plan.labels.size() == 50000, "label count " + std::to_string(plan.labels.size()));
    c.expect(*hi - *lo == 0, "count spread " + std::to_string(*hi - *lo));
    return c.outcome("d(a,a) = " + sci(self) + ", 1-D = " + num(one, 12) + ", diagonal gap " + sci(diag_gap) +
                     ", 50000 labels, spread 0");
}

// --- 11: infrastructure ------------------------------------------------------

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

std::map<std::string, std::string> files_in(const fs::path& dir) {
    std::map<std::string, std::string> m;
    if (!fs::exists(dir)) return m;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file()) m[e.path().filename().string()] = slurp(e.path());
    return m;
}

int run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "rae");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    return cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
}

Outcome infrastructure(const fs::path& work) {
    Checks c;
    const auto dir = work / "c11";
    fs::remove_all(dir);
    fs::create_directories(dir);

    // Checkpoint round trip and resume continuity on a small trainer.
    ModelConfig mc = preset_config("desk32");
    mc.num_tokens = 4;
    DitTrainSpec spec;
    spec.batch = 8;
    spec.lr = 1e-3;
    spec.ema_beta = 0.99;
    spec.seed = 5;
    Rng rng(11, 0);
    const auto latents = randn<float>({24, 4, 64}, rng);
    std::vector<int> labels(24);
    for (int i = 0; i < 24; ++i) labels[static_cast<std::size_t>(i)] = i % 10;
    DitTrainer straight(mc, spec), first(mc, spec);
    straight.run(latents, labels, 31);
    first.run(latents, labels, 30);
    save_checkpoint(first.to_checkpoint("seeds = 5\n"), dir / "a.ckpt");
    DitTrainer resumed(mc, spec);
    resumed.restore(load_checkpoint(dir / "a.ckpt"));
    save_checkpoint(resumed.to_checkpoint("seeds = 5\n"), dir / "b.ckpt");
    c.expect(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"), "checkpoint round trip differs");
    const double delta = std::abs(resumed.step(latents, labels) - straight.losses()[30]);
    c.expect(delta < 1e-5, "resume delta " + sci(delta));

    // Every subcommand twice with the same config and seed.
    const std::vector<std::string> small{"model.preset=desk16", "data.count=40",  "eval.samples=20",
                                         "eval.reference=60",   "train.steps=12", "rae.decoder.steps=8",
                                         "guidance.mode=autoguidance", "eval.weak_step=4", "sampler.steps=4"};
    const std::vector<std::string> sweep{"overfit.widths=16", "overfit.depths=4", "overfit.runs=1", "overfit.targets=1",
                                         "overfit.steps=20"};
    const auto src = dir / "ppm";
    Rng img_rng(12, 0);
    for (int label : {0, 1}) {
        fs::create_directories(src / std::to_string(label));
        for (int i = 0; i < 2; ++i)
            write_ppm(src / std::to_string(label) / (std::to_string(i) + ".ppm"), make_toy_image(label, 8, img_rng));
    }
    struct Cmd {
        std::string name, sub;
        std::vector<std::string> overrides;
    };
    const std::vector<Cmd> commands{{"pipeline", "run", small},      {"generate", "run", small},
                                    {"metrics", "run", small},       {"overfit", "sweep", sweep},
                                    {"verify-theory", "theory", sweep},
                                    {"convert-data", "conv", {"data.path=" + src.string()}}};
    int identical = 0;
    for (const auto& cmd : commands) {
        std::vector<std::map<std::string, std::string>> snaps;
        for (int k = 0; k < 2; ++k) {
            std::vector<std::string> args{cmd.name, "--seed", "7", "--out", (dir / cmd.sub).string(), "--override"};
            args.insert(args.end(), cmd.overrides.begin(), cmd.overrides.end());
            const int code = run_cli(args);
            c.expect(code == kExitOk || code == kExitAcceptanceFail, cmd.name + " exit " + std::to_string(code));
            snaps.push_back(files_in(dir / cmd.sub));
        }
        const bool same = !snaps[0].empty() && snaps[0] == snaps[1];
        c.expect(same, cmd.name + " not byte-identical");
        identical += same;
    }
    return c.outcome("checkpoint bytes identical, resume delta " + sci(delta) + ", " + std::to_string(identical) +
                     " of " + std::to_string(commands.size()) + " subcommands byte-identical");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria 1-11"};
    std::string work = "acceptance_work";
    std::vector<int> only;
    app.add_option("--work", work, "scratch directory");
    app.add_option("--only", only, "criterion numbers to run")->delimiter(',');
    CLI11_PARSE(app, argc, argv);

    const fs::path dir = work;
    fs::create_directories(dir);
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"theorem-1 width bound", [&] { return width_bound(dir); }},
        {"depth cannot rescue", [&] { return depth_cannot_rescue(dir); }},
        {"spectral oracle", [] { return spectral_oracle(); }},
        {"schedule-shift formula", [] { return shift_formula(); }},
        {"sampler oracle", [] { return sampler_oracle(); }},
        {"gradient suite", [] { return gradient_suite(); }},
        {"noise-augmentation directions", [&] { return noise_augmentation(dir); }},
        {"schedule-shift direction", [&] { return shift_direction(dir); }},
        {"guidance contracts", [&] { return guidance(dir); }},
        {"metrics", [] { return metrics(); }},
        {"infrastructure", [&] { return infrastructure(dir); }},
    };
    const std::set<int> selected(only.begin(), only.end());
    bool all = true;
    std::ofstream summary(dir / "summary.txt");
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!selected.empty() && !selected.count(id)) continue;
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::ostringstream line;
        line << (o.pass ? "PASS" : "FAIL") << "  " << id << ". " << criteria[i].first << ": " << o.detail << " ["
             << fmt(s, 1) << " s]";
        std::cout << line.str() << std::endl;
        summary << line.str() << '\n';
        all = all && o.pass;
    }
    return all ? 0 : 1;
}
