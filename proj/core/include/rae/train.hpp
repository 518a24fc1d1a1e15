#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "rae/checkpoint.hpp"
#include "rae/config.hpp"
#include "rae/dit.hpp"

namespace rae {

struct DitTrainSpec {
    int steps = 3000;
    int batch = 32;
    double lr = 2e-4;
    double lr_end = 2e-5;
    LrSchedule schedule = LrSchedule::constant;
    int warmup_steps = 0;
    double grad_clip = 0.0;
    double label_dropout = 0.1;
    bool ema = true;
    double ema_beta = 0.9999;
    std::optional<ScheduleShift> shift;
    std::uint64_t seed = 0;
};

// Constant, or held at lr for warmup_steps then linear to lr_end at the end.
double learning_rate(const DitTrainSpec& spec, int step);

// Flow-matching trainer for a DiT on a fixed latent set. Per-step randomness
// is a pure function of (seed, step), so a restored trainer continues the
// exact trajectory.
class DitTrainer {
   public:
    DitTrainer(const ModelConfig& config, const DitTrainSpec& spec);

    // latents [M, N, n]; labels M entries (or empty for unconditional data).
    double step(const Tensor& latents, const std::vector<int>& labels);
    void run(const Tensor& latents, const std::vector<int>& labels, int until_step);

    int current_step() const { return step_; }
    const std::vector<double>& losses() const { return losses_; }
    const DiT<float>& model() const { return *model_; }
    const DitTrainSpec& spec() const { return spec_; }
    // A standalone model holding the EMA weights (raw weights when EMA is off).
    std::unique_ptr<DiT<float>> eval_model() const;
    // A standalone copy of the current raw weights.
    std::unique_ptr<DiT<float>> snapshot() const;

    Checkpoint to_checkpoint(const std::string& config_text) const;
    void restore(const Checkpoint& ckpt);

   private:
    std::unique_ptr<DiT<float>> model_;
    ParamList<float> params_;
    AdamState<float> adam_;
    std::vector<Tensor> ema_;
    DitTrainSpec spec_;
    int step_ = 0;
    std::vector<double> losses_;
};

DitTrainSpec train_spec(const ExperimentConfig& cfg, const std::optional<ScheduleShift>& shift, std::uint64_t seed,
                        int dataset_size);

}  // namespace rae
