#include "rae/train.hpp"

#include <cmath>

#include "rae/optim.hpp"

namespace rae {

double learning_rate(const DitTrainSpec& spec, int step) {
    if (spec.schedule == LrSchedule::constant || step < spec.warmup_steps) return spec.lr;
    const int span = std::max(1, spec.steps - spec.warmup_steps);
    const double frac = std::clamp(static_cast<double>(step - spec.warmup_steps) / span, 0.0, 1.0);
    return spec.lr + (spec.lr_end - spec.lr) * frac;
}

namespace {

std::unique_ptr<DiT<float>> clone_with(const DiT<float>& source, const std::vector<const Tensor*>& values) {
    auto model = std::make_unique<DiT<float>>(source.config(), 0);
    model->set_fourier_frequencies(source.fourier_frequencies());
    const auto params = model->parameters();
    for (std::size_t i = 0; i < params.size(); ++i) params[i].var.mutable_value() = *values[i];
    return model;
}

}  // namespace

DitTrainer::DitTrainer(const ModelConfig& config, const DitTrainSpec& spec)
    : model_(std::make_unique<DiT<float>>(config, spec.seed)), spec_(spec) {
    params_ = model_->parameters();
    adam_.config.lr = spec.lr;
    if (spec.ema)
        for (const auto& p : params_) ema_.push_back(p.var.value());
}

double DitTrainer::step(const Tensor& latents, const std::vector<int>& labels) {
    const auto& mc = model_->config();
    if (latents.rank() != 3 || latents.dim(1) != mc.num_tokens || latents.dim(2) != mc.token_dim) {
        throw DimensionError("trainer: latents " + shape_string(latents.shape()) + " do not match the model");
    }
    const auto count = latents.dim(0);
    if (!labels.empty() && static_cast<std::int64_t>(labels.size()) != count) {
        throw DimensionError("trainer: label count differs from latent count");
    }
    Rng rng = Rng(spec_.seed, 101).derive(static_cast<std::uint64_t>(step_));
    const auto per = latents.dim(1) * latents.dim(2);
    Tensor clean({spec_.batch, latents.dim(1), latents.dim(2)});
    std::vector<int> y(static_cast<std::size_t>(spec_.batch), mc.null_label());
    for (int b = 0; b < spec_.batch; ++b) {
        const auto idx = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(count)));
        std::copy_n(latents.data() + idx * per, per, clean.data() + b * per);
        const bool drop = rng.uniform() < spec_.label_dropout;
        if (!labels.empty() && !drop) y[static_cast<std::size_t>(b)] = labels[static_cast<std::size_t>(idx)];
    }
    const auto batch = make_flow_batch(clean, rng, spec_.shift);
    VelocityModel<float> f = [this](const Var<float>& x, std::span<const float> t, std::span<const int> l) {
        return model_->forward(x, t, l);
    };
    const auto loss = flow_matching_loss<float>(f, batch, y);
    const double value = loss.value().item();
    if (!std::isfinite(value)) throw ExperimentError("training diverged at step " + std::to_string(step_));
    zero_grad(params_);
    backward(loss);
    if (spec_.grad_clip > 0.0) grad_clip(params_, spec_.grad_clip);
    adam_step(params_, adam_, learning_rate(spec_, step_));
    if (spec_.ema) ema_update(ema_, params_, spec_.ema_beta);
    losses_.push_back(value);
    ++step_;
    return value;
}

void DitTrainer::run(const Tensor& latents, const std::vector<int>& labels, int until_step) {
    while (step_ < until_step) step(latents, labels);
}

std::unique_ptr<DiT<float>> DitTrainer::eval_model() const {
    if (!spec_.ema) return snapshot();
    std::vector<const Tensor*> values;
    for (const auto& t : ema_) values.push_back(&t);
    return clone_with(*model_, values);
}

std::unique_ptr<DiT<float>> DitTrainer::snapshot() const {
    std::vector<const Tensor*> values;
    for (const auto& p : params_) values.push_back(&p.var.value());
    return clone_with(*model_, values);
}

Checkpoint DitTrainer::to_checkpoint(const std::string& config_text) const {
    Checkpoint ckpt;
    ckpt.step = step_;
    ckpt.config_text = config_text;
    ckpt.tensors.emplace_back("buffer/fourier", model_->fourier_frequencies());
    for (const auto& p : params_) ckpt.tensors.emplace_back("param/" + p.name, p.var.value());
    for (std::size_t i = 0; i < ema_.size(); ++i) ckpt.tensors.emplace_back("ema/" + params_[i].name, ema_[i]);
    for (std::size_t i = 0; i < adam_.first_moment.size(); ++i) {
        ckpt.tensors.emplace_back("adam.m/" + params_[i].name, adam_.first_moment[i]);
        ckpt.tensors.emplace_back("adam.v/" + params_[i].name, adam_.second_moment[i]);
    }
    return ckpt;
}

void DitTrainer::restore(const Checkpoint& ckpt) {
    auto fetch = [&](const std::string& name, const Tensor& like) -> const Tensor& {
        const Tensor* t = ckpt.find(name);
        if (t == nullptr) throw LoadError("checkpoint lacks tensor " + name, 0);
        if (!t->same_shape(like)) throw LoadError("checkpoint tensor " + name + " has the wrong shape", 0);
        return *t;
    };
    if (ckpt.find("buffer/fourier") != nullptr) model_->set_fourier_frequencies(*ckpt.find("buffer/fourier"));
    for (const auto& p : params_) p.var.mutable_value() = fetch("param/" + p.name, p.var.value());
    for (std::size_t i = 0; i < ema_.size(); ++i) ema_[i] = fetch("ema/" + params_[i].name, ema_[i]);
    adam_.first_moment.clear();
    adam_.second_moment.clear();
    if (ckpt.find("adam.m/" + params_.front().name) != nullptr) {
        for (const auto& p : params_) {
            adam_.first_moment.push_back(fetch("adam.m/" + p.name, p.var.value()));
            adam_.second_moment.push_back(fetch("adam.v/" + p.name, p.var.value()));
        }
    }
    adam_.step = ckpt.step;
    step_ = static_cast<int>(ckpt.step);
    losses_.clear();
}

DitTrainSpec train_spec(const ExperimentConfig& cfg, const std::optional<ScheduleShift>& shift, std::uint64_t seed,
                        int dataset_size) {
    DitTrainSpec s;
    s.steps = cfg.train.steps;
    s.batch = cfg.train.batch;
    s.lr = cfg.train.lr;
    s.lr_end = cfg.train.lr_end;
    s.schedule = cfg.train.schedule;
    const int steps_per_epoch = std::max(1, (dataset_size + s.batch - 1) / s.batch);
    s.warmup_steps = cfg.train.warmup_epochs * steps_per_epoch;
    s.grad_clip = cfg.train.grad_clip;
    s.label_dropout = cfg.train.label_dropout;
    s.ema = cfg.train.ema;
    s.ema_beta = cfg.train.ema_beta;
    s.shift = shift;
    s.seed = seed;
    return s;
}

}  // namespace rae
