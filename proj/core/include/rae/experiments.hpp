#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rae/checkpoint.hpp"
#include "rae/config.hpp"
#include "rae/data.hpp"
#include "rae/metrics.hpp"
#include "rae/theory.hpp"

namespace rae {

struct Verdict {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct Table {
    std::string title;
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;
};

// Tables plus acceptance verdicts, written as report.txt and report.tsv.
struct Report {
    std::string title;
    std::vector<std::string> notes;  // header lines, e.g. "ema = on"
    std::vector<Table> tables;
    std::vector<Verdict> verdicts;

    Table& add_table(std::string title, std::vector<std::string> columns);
    const Verdict* verdict(const std::string& name) const;

    bool passed() const;
    std::string to_text() const;
    std::string to_tsv() const;
    void write(const std::filesystem::path& dir) const;
};

std::string fmt(double v, int digits = 4);

// --- experiments ---------------------------------------------------------

WidthBoundConfig width_bound_config(const ExperimentConfig& cfg);
Report run_overfit_sweep(const ExperimentConfig& cfg);
// Spectral oracle cases plus the overfit sweep.
Report run_verify_theory(const ExperimentConfig& cfg);
Report run_pipeline(const ExperimentConfig& cfg);
Report run_schedule_ablation(const ExperimentConfig& cfg);
Report run_noiseaug_ablation(const ExperimentConfig& cfg);
// Loads model.ckpt and decoder.ckpt from cfg.out and writes samples.raed.
Report run_generate(const ExperimentConfig& cfg);
// Scores samples.raed in cfg.out (or data.path) and the label-plan gap on a
// synthetic generator of unequal per-class quality.
Report run_metrics(const ExperimentConfig& cfg);
// Converts data.path (a netpbm file or a directory of them) to dataset.raed.
Report run_convert_data(const ExperimentConfig& cfg);

Report run_experiment(const ExperimentConfig& cfg);

// --- building blocks shared by the runners -------------------------------

// The dataset at data.path, or the procedural toy set when the path is empty.
ImageSet load_images(const ExperimentConfig& cfg);
EncoderConfig encoder_config(const ExperimentConfig& cfg, int channels = 3);
DecoderConfig decoder_config(const ExperimentConfig& cfg, int channels = 3);
DecoderTrainConfig decoder_train_config(const ExperimentConfig& cfg, std::uint64_t seed);
std::optional<ScheduleShift> latent_shift(const ExperimentConfig& cfg, std::int64_t tokens, std::int64_t token_dim);

// Reference images for scoring: a fresh procedural set, or the dataset itself
// when data.path is set.
Tensor reference_images(const ExperimentConfig& cfg, const ImageSet& data);

// Fréchet proxy of images against fixed reference moments.
struct FrechetScorer {
    FeatureMap features;
    GaussianMoments reference;

    FrechetScorer(const ExperimentConfig& cfg, const Tensor& reference_images);
    double operator()(const Tensor& images) const;
};

Checkpoint decoder_checkpoint(const Decoder& decoder, const std::string& config_text);
void restore_decoder(Decoder& decoder, const Checkpoint& ckpt);

}  // namespace rae
